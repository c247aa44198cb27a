#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace alseg {

/// Counts over strictly increasing bin edges; values outside the range land in the
/// first or last bin.
class Histogram {
public:
    Histogram() = default;
    /// `bins` equal-width bins over [lo, hi].
    Histogram(double lo, double hi, std::size_t bins);
    /// Explicit edges; throws InvalidArgument unless strictly increasing with >= 2 entries.
    explicit Histogram(std::vector<double> edges);

    void add(double value, double weight = 1.0);
    std::size_t bin_of(double value) const;

    std::size_t bins() const { return counts_.size(); }
    std::span<const double> edges() const { return edges_; }
    std::span<const double> counts() const { return counts_; }
    std::vector<double>& mutable_counts() { return counts_; }
    double total() const;
    double center(std::size_t bin) const { return 0.5 * (edges_[bin] + edges_[bin + 1]); }

private:
    std::vector<double> edges_;
    std::vector<double> counts_;
};

} // namespace alseg
