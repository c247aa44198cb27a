#include "alseg/scaler.hpp"

#include "alseg/error.hpp"

#include <algorithm>
#include <cmath>

namespace alseg {

ScalerParams ScalerParams::identity(const FeatureLayout& layout) {
    ScalerParams p;
    p.groups = layout.groups;
    p.mean.assign(p.groups.size(), 0.0);
    p.stddev.assign(p.groups.size(), 1.0);
    p.size = layout.size;
    return p;
}

FeatureVector ScalerParams::apply(const FeatureVector& v) const {
    FeatureVector out;
    out.values.resize(v.values.size());
    apply_into(v.values, out.values);
    return out;
}

void ScalerParams::apply_into(std::span<const double> in, std::span<double> out) const {
    if (in.size() != size || out.size() != size) {
        fail(ErrorCode::SizeMismatch, "feature vector length does not match the scaler");
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& grp = groups[g];
        const double mu = mean[g];
        const double inv = 1.0 / stddev[g];
        for (std::size_t i = grp.offset; i < grp.offset + grp.length; ++i) {
            out[i] = (in[i] - mu) * inv;
        }
    }
}

ScalerParams fit_scaler(std::span<const FeatureVector> vectors, const FeatureLayout& layout) {
    if (vectors.size() < 2) {
        fail(ErrorCode::InvalidArgument, "fitting a scaler needs at least two vectors");
    }
    for (const auto& v : vectors) {
        if (v.values.size() != layout.size) {
            fail(ErrorCode::SizeMismatch, "feature vector length does not match the layout");
        }
    }
    ScalerParams p = ScalerParams::identity(layout);
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const auto& grp = p.groups[g];
        const double n = static_cast<double>(vectors.size() * grp.length);
        double sum = 0.0;
        for (const auto& v : vectors) {
            for (std::size_t i = grp.offset; i < grp.offset + grp.length; ++i) {
                sum += v.values[i];
            }
        }
        const double mu = sum / n;
        double ss = 0.0;
        for (const auto& v : vectors) {
            for (std::size_t i = grp.offset; i < grp.offset + grp.length; ++i) {
                const double d = v.values[i] - mu;
                ss += d * d;
            }
        }
        const double sd = std::sqrt(ss / n);
        p.mean[g] = mu;
        p.stddev[g] = sd > 1e-12 * std::max(1.0, std::abs(mu)) ? sd : 1.0;
    }
    return p;
}

} // namespace alseg
