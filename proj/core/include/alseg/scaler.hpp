#pragma once

#include "alseg/features.hpp"

#include <span>
#include <vector>

namespace alseg {

/// Group-wise z-score parameters. Histogram blocks share one (mean, stddev);
/// scalar entries each have their own.
struct ScalerParams {
    std::vector<ScaleGroup> groups;
    std::vector<double> mean;
    std::vector<double> stddev;
    std::size_t size = 0;

    /// Maps every entry to itself.
    static ScalerParams identity(const FeatureLayout& layout);

    FeatureVector apply(const FeatureVector& v) const;
    void apply_into(std::span<const double> in, std::span<double> out) const;

    friend bool operator==(const ScalerParams&, const ScalerParams&) = default;
};

/// Population mean and standard deviation per group; a zero deviation becomes 1.
/// Throws InvalidArgument with fewer than two vectors or mismatched lengths.
ScalerParams fit_scaler(std::span<const FeatureVector> vectors, const FeatureLayout& layout);

inline FeatureVector apply_scaler(const ScalerParams& params, const FeatureVector& v) {
    return params.apply(v);
}

} // namespace alseg
