#include "alseg/histogram.hpp"

#include "alseg/error.hpp"

#include <algorithm>
#include <numeric>

namespace alseg {

Histogram::Histogram(double lo, double hi, std::size_t bins) {
    if (bins < 1 || !(hi > lo)) {
        fail(ErrorCode::InvalidArgument, "histogram needs hi > lo and at least one bin");
    }
    edges_.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) {
        edges_[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    }
    edges_.back() = hi;
    counts_.assign(bins, 0.0);
}

Histogram::Histogram(std::vector<double> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 2) {
        fail(ErrorCode::InvalidArgument, "histogram needs at least two edges");
    }
    for (std::size_t i = 1; i < edges_.size(); ++i) {
        if (!(edges_[i] > edges_[i - 1])) {
            fail(ErrorCode::InvalidArgument, "histogram edges must be strictly increasing");
        }
    }
    counts_.assign(edges_.size() - 1, 0.0);
}

std::size_t Histogram::bin_of(double value) const {
    // Bins are half-open [e_i, e_{i+1}) except the last, which also takes hi.
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), value);
    if (it == edges_.begin()) {
        return 0;
    }
    const auto idx = static_cast<std::size_t>(it - edges_.begin()) - 1;
    return std::min(idx, counts_.size() - 1);
}

void Histogram::add(double value, double weight) { counts_[bin_of(value)] += weight; }

double Histogram::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0.0); }

} // namespace alseg
