#pragma once

#include "alseg/histogram.hpp"
#include "alseg/kv_document.hpp"
#include "alseg/volume.hpp"

#include <array>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alseg {

/// Feature families in their canonical concatenation order.
enum class FeatureKind {
    Moments,
    Position,
    LbpTop,
    Curvature,
    LineFit,
    PlaneFit,
    Inertia,
    CenterDistance,
    Hog,
};

inline constexpr std::array<FeatureKind, 9> kAllFeatures{
    FeatureKind::Moments,   FeatureKind::Position, FeatureKind::LbpTop,
    FeatureKind::Curvature, FeatureKind::LineFit,  FeatureKind::PlaneFit,
    FeatureKind::Inertia,   FeatureKind::CenterDistance, FeatureKind::Hog};

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);

inline constexpr int kLbpCodes = 10;
inline constexpr int kHogBins = 50;

struct FeatureConfig {
    std::vector<FeatureKind> enabled{FeatureKind::Moments, FeatureKind::Inertia};
    int env_size = 5;       // K
    int curvature_size = 3; // k
    double threshold = 0.0; // voxels with value > threshold count as "nonzero"
    double gradient_threshold = 1.0;

    int curvature_bins = 16;
    double curvature_range = 1.0; // histogram spans [-range, range]
    int distance_bins = 16;
    int fit_bins = 16;

    // Wasserstein embedding dimension per histogram family; 0 keeps the raw histogram.
    int lbp_embed = 0;
    int curvature_embed = 8;
    int fit_embed = 8;
    int distance_embed = 8;
    int hog_embed = 0;

    bool has(FeatureKind kind) const;
    /// Throws InvalidArgument on any violated constraint.
    void validate() const;

    KvDocument to_kv() const;
    static FeatureConfig from_kv(const KvDocument& doc);
    friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

struct LayoutEntry {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
    friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};

/// Contiguous run of vector entries sharing one z-score (pooled) or a single scalar.
struct ScaleGroup {
    std::size_t offset = 0;
    std::size_t length = 0;
    friend bool operator==(const ScaleGroup&, const ScaleGroup&) = default;
};

struct FeatureLayout {
    std::vector<LayoutEntry> entries;
    std::vector<ScaleGroup> groups;
    std::size_t size = 0;

    /// Column names like `moments[0]`, used as CSV header.
    std::vector<std::string> column_names() const;
};

/// Length of one feature family's block under `config`.
std::size_t feature_length(FeatureKind kind, const FeatureConfig& config);

FeatureLayout make_layout(const FeatureConfig& config);

struct FeatureVector {
    std::vector<double> values;
    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

// --- individual descriptors -------------------------------------------------

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
    double skewness = 0.0;
    double kurtosis = 0.0; // excess
};

Moments moments(const LocalEnvironment& env);

std::array<double, 3> position_feature(const Index3& center);

/// Rotation-invariant uniform LBP code of 8 neighbours in circular order
/// (bit i set iff neighbour i is strictly greater than the center). Range 0..9.
int lbp_riu2_code(unsigned pattern);

/// Three 10-bin code histograms of the projections summed along x, y and z.
std::array<Histogram, 3> lbp_top(const LocalEnvironment& env);

/// Mean curvature estimates (positive for bright convex blobs) at every voxel with a
/// full k-neighbourhood; zero where the gradient magnitude is below `gradient_threshold`.
std::vector<double> curvature_estimates(const LocalEnvironment& env, int k,
                                        double gradient_threshold);
Histogram curvature_histogram(const LocalEnvironment& env, const FeatureConfig& config);

struct StructureFit {
    bool degenerate = true; // fewer than three voxels above threshold
    std::array<double, 3> line_direction{0, 0, 0};
    std::array<double, 3> plane_normal{0, 0, 0};
    std::vector<double> line_distances;
    std::vector<double> plane_distances;
    double line_f1 = 0.0;
    double line_f2 = 0.0;
    double plane_f1 = 0.0;
    double plane_f2 = 0.0;
    Histogram line_hist;
    Histogram plane_hist;
};

/// Least-squares line and plane through the environment center fitted to the voxels
/// above `threshold`.
StructureFit fit_structures(const LocalEnvironment& env, double threshold, int bins);

struct InertiaFeatures {
    double linearity = 0.0;
    double planarity = 0.0;
    double isotropy = 0.0;
    std::array<double, 3> eigenvalues{0, 0, 0}; // descending
};

InertiaFeatures inertia_features(const LocalEnvironment& env);

Histogram center_distance_histogram(const LocalEnvironment& env, double threshold, int bins);

/// Equal-area sphere cell (0..49) of a nonzero direction vector.
int hog_bin(double gx, double gy, double gz);
Histogram hog_sphere(const LocalEnvironment& env, double magnitude_threshold);

// --- assembly ---------------------------------------------------------------

/// Computes feature vectors for one configuration. Immutable; safe to share.
class FeatureExtractor {
public:
    explicit FeatureExtractor(FeatureConfig config);

    const FeatureConfig& config() const { return config_; }
    const FeatureLayout& layout() const { return layout_; }
    std::size_t size() const { return layout_.size; }

    FeatureVector assemble(const LocalEnvironment& env) const;
    void assemble_into(const LocalEnvironment& env, std::span<double> out) const;

private:
    FeatureConfig config_;
    FeatureLayout layout_;
};

/// CSV with a header of layout column names, one row per vector.
std::string features_to_csv(const FeatureLayout& layout, std::span<const FeatureVector> vectors);

} // namespace alseg
