#pragma once

#include "alseg/histogram.hpp"

#include <span>
#include <vector>

namespace alseg {

/// Constant piece of a quantile function: F^-1(u) = value for u in (u0, u1].
struct QuantileSegment {
    double u0;
    double u1;
    double value;
};

/// Quantile function of the discrete distribution placing each bin's mass at its center.
/// Empty bins are skipped. Throws InvalidArgument on zero total mass.
std::vector<QuantileSegment> quantile_segments(const Histogram& h);

/// Same for arbitrary point masses; `support` need not be sorted.
std::vector<QuantileSegment> quantile_segments(std::span<const double> support,
                                               std::span<const double> weights);

/// n-th element (0-based) of the Fourier basis of L2(0,1):
/// 1, sqrt2 cos 2pi x, sqrt2 sin 2pi x, sqrt2 cos 4pi x, ...
double fourier_basis(int n, double x);

/// Exact integral of fourier_basis(n, .) over [u0, u1].
double fourier_basis_integral(int n, double u0, double u1);

/// First `dims` Fourier coefficients of the quantile function. Euclidean distances
/// between embeddings approach the 2-Wasserstein distance as `dims` grows.
std::vector<double> wasserstein_embed(const Histogram& h, int dims);
std::vector<double> wasserstein_embed(std::span<const QuantileSegment> quantile, int dims);

/// Writes the embedding into `out` (size = dims), zeros if the histogram has no mass.
void wasserstein_embed_into(const Histogram& h, std::span<double> out);

} // namespace alseg
