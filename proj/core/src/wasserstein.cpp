#include "alseg/wasserstein.hpp"

#include "alseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace alseg {

namespace {

std::vector<QuantileSegment> build_segments(std::span<const double> support,
                                            std::span<const double> weights, bool sorted) {
    if (support.size() != weights.size()) {
        fail(ErrorCode::InvalidArgument, "support and weights differ in length");
    }
    std::vector<std::size_t> order(support.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (!sorted) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return support[a] < support[b]; });
    }
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w)) {
            fail(ErrorCode::InvalidArgument, "weights must be finite and nonnegative");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        fail(ErrorCode::InvalidArgument, "distribution has zero mass");
    }
    std::vector<QuantileSegment> out;
    double cum = 0.0;
    for (std::size_t i : order) {
        if (weights[i] == 0.0) {
            continue;
        }
        const double u0 = cum / total;
        cum += weights[i];
        out.push_back({u0, cum / total, support[i]});
    }
    out.back().u1 = 1.0;
    return out;
}

} // namespace

std::vector<QuantileSegment> quantile_segments(const Histogram& h) {
    std::vector<double> centers(h.bins());
    for (std::size_t b = 0; b < h.bins(); ++b) {
        centers[b] = h.center(b);
    }
    return build_segments(centers, h.counts(), true);
}

std::vector<QuantileSegment> quantile_segments(std::span<const double> support,
                                               std::span<const double> weights) {
    return build_segments(support, weights, false);
}

double fourier_basis(int n, double x) {
    if (n == 0) {
        return 1.0;
    }
    const int k = (n + 1) / 2;
    const double arg = 2.0 * std::numbers::pi * k * x;
    return std::numbers::sqrt2 * ((n % 2 == 1) ? std::cos(arg) : std::sin(arg));
}

double fourier_basis_integral(int n, double u0, double u1) {
    if (n == 0) {
        return u1 - u0;
    }
    const int k = (n + 1) / 2;
    const double w = 2.0 * std::numbers::pi * k;
    if (n % 2 == 1) {
        return std::numbers::sqrt2 * (std::sin(w * u1) - std::sin(w * u0)) / w;
    }
    return std::numbers::sqrt2 * (std::cos(w * u0) - std::cos(w * u1)) / w;
}

std::vector<double> wasserstein_embed(std::span<const QuantileSegment> quantile, int dims) {
    if (dims < 1) {
        fail(ErrorCode::InvalidArgument, "embedding dimension must be >= 1");
    }
    std::vector<double> out(static_cast<std::size_t>(dims), 0.0);
    for (const auto& seg : quantile) {
        for (int n = 0; n < dims; ++n) {
            out[static_cast<std::size_t>(n)] += seg.value * fourier_basis_integral(n, seg.u0, seg.u1);
        }
    }
    return out;
}

std::vector<double> wasserstein_embed(const Histogram& h, int dims) {
    return wasserstein_embed(quantile_segments(h), dims);
}

void wasserstein_embed_into(const Histogram& h, std::span<double> out) {
    if (!(h.total() > 0.0)) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    const auto e = wasserstein_embed(h, static_cast<int>(out.size()));
    std::copy(e.begin(), e.end(), out.begin());
}

} // namespace alseg
