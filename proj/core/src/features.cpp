#include "alseg/features.hpp"

#include "alseg/error.hpp"
#include "alseg/wasserstein.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

namespace alseg {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

// Equal-area latitude bands: caps of 4 cells, three rings of 14 cells.
constexpr std::array<double, 4> kHogBandEdges{0.84, 0.28, -0.28, -0.84};
constexpr std::array<int, 5> kHogBandCells{4, 14, 14, 14, 4};
constexpr std::array<int, 5> kHogBandOffset{0, 4, 18, 32, 46};

std::size_t histogram_block(int bins, int embed) {
    return static_cast<std::size_t>(embed > 0 ? embed : bins);
}

// Raw histogram counts or their Wasserstein embedding.
void write_histogram(const Histogram& h, int embed, std::span<double> out) {
    if (embed > 0) {
        wasserstein_embed_into(h, out);
    } else {
        std::copy(h.counts().begin(), h.counts().end(), out.begin());
    }
}

// Central-difference gradient at local (x, y, z) with step h.
std::array<double, 3> gradient(const LocalEnvironment& env, int x, int y, int z, int h = 1) {
    const double inv = 1.0 / (2.0 * h);
    return {(env(x + h, y, z) - env(x - h, y, z)) * inv, (env(x, y + h, z) - env(x, y - h, z)) * inv,
            (env(x, y, z + h) - env(x, y, z - h)) * inv};
}

} // namespace

std::string_view to_string(FeatureKind kind) {
    switch (kind) {
    case FeatureKind::Moments: return "moments";
    case FeatureKind::Position: return "position";
    case FeatureKind::LbpTop: return "lbp_top";
    case FeatureKind::Curvature: return "curvature";
    case FeatureKind::LineFit: return "line_fit";
    case FeatureKind::PlaneFit: return "plane_fit";
    case FeatureKind::Inertia: return "inertia";
    case FeatureKind::CenterDistance: return "center_distance";
    case FeatureKind::Hog: return "hog";
    }
    return "?";
}

FeatureKind parse_feature_kind(std::string_view name) {
    for (auto k : kAllFeatures) {
        if (to_string(k) == name) {
            return k;
        }
    }
    fail(ErrorCode::InvalidArgument, "unknown feature '" + std::string(name) + "'");
}

// --- config -----------------------------------------------------------------

bool FeatureConfig::has(FeatureKind kind) const {
    return std::find(enabled.begin(), enabled.end(), kind) != enabled.end();
}

void FeatureConfig::validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidArgument, msg); };
    if (enabled.empty()) bad("at least one feature must be enabled");
    for (std::size_t i = 0; i < enabled.size(); ++i) {
        for (std::size_t j = i + 1; j < enabled.size(); ++j) {
            if (enabled[i] == enabled[j]) bad("feature listed twice");
        }
    }
    if (env_size <= 1 || env_size % 2 == 0) bad("K must be odd and > 1");
    if (curvature_size <= 1 || curvature_size % 2 == 0 || curvature_size > env_size) {
        bad("k must be odd with 1 < k <= K");
    }
    if (curvature_bins < 2 || distance_bins < 2 || fit_bins < 2) bad("bin counts must be >= 2");
    if (lbp_embed < 0 || curvature_embed < 0 || fit_embed < 0 || distance_embed < 0 || hog_embed < 0) {
        bad("embedding dimensions must be >= 0");
    }
    if (!std::isfinite(threshold)) bad("threshold must be finite");
    if (!(gradient_threshold >= 0.0)) bad("gradient threshold must be >= 0");
    if (!(curvature_range > 0.0)) bad("curvature range must be positive");
}

KvDocument FeatureConfig::to_kv() const {
    KvDocument doc;
    std::string names;
    for (auto k : enabled) {
        if (!names.empty()) names += ',';
        names += to_string(k);
    }
    doc.add("features", names);
    doc.add("env_size", std::to_string(env_size));
    doc.add("curvature_size", std::to_string(curvature_size));
    doc.add("threshold", format_double(threshold));
    doc.add("gradient_threshold", format_double(gradient_threshold));
    doc.add("curvature_bins", std::to_string(curvature_bins));
    doc.add("curvature_range", format_double(curvature_range));
    doc.add("distance_bins", std::to_string(distance_bins));
    doc.add("fit_bins", std::to_string(fit_bins));
    doc.add("lbp_embed", std::to_string(lbp_embed));
    doc.add("curvature_embed", std::to_string(curvature_embed));
    doc.add("fit_embed", std::to_string(fit_embed));
    doc.add("distance_embed", std::to_string(distance_embed));
    doc.add("hog_embed", std::to_string(hog_embed));
    return doc;
}

FeatureConfig FeatureConfig::from_kv(const KvDocument& doc) {
    FeatureConfig c;
    if (auto names = doc.find("features")) {
        c.enabled.clear();
        for (const auto& n : split_tokens(*names, " \t,")) {
            c.enabled.push_back(parse_feature_kind(n));
        }
    }
    auto geti = [&](const char* key, int fallback) {
        return static_cast<int>(doc.get_int_or(key, fallback));
    };
    c.env_size = geti("env_size", c.env_size);
    c.curvature_size = geti("curvature_size", c.curvature_size);
    c.threshold = doc.get_double_or("threshold", c.threshold);
    c.gradient_threshold = doc.get_double_or("gradient_threshold", c.gradient_threshold);
    c.curvature_bins = geti("curvature_bins", c.curvature_bins);
    c.curvature_range = doc.get_double_or("curvature_range", c.curvature_range);
    c.distance_bins = geti("distance_bins", c.distance_bins);
    c.fit_bins = geti("fit_bins", c.fit_bins);
    c.lbp_embed = geti("lbp_embed", c.lbp_embed);
    c.curvature_embed = geti("curvature_embed", c.curvature_embed);
    c.fit_embed = geti("fit_embed", c.fit_embed);
    c.distance_embed = geti("distance_embed", c.distance_embed);
    c.hog_embed = geti("hog_embed", c.hog_embed);
    c.validate();
    return c;
}

// --- layout -----------------------------------------------------------------

std::size_t feature_length(FeatureKind kind, const FeatureConfig& c) {
    switch (kind) {
    case FeatureKind::Moments: return 4;
    case FeatureKind::Position: return 3;
    case FeatureKind::LbpTop: return 3 * histogram_block(kLbpCodes, c.lbp_embed);
    case FeatureKind::Curvature: return histogram_block(c.curvature_bins, c.curvature_embed);
    case FeatureKind::LineFit:
    case FeatureKind::PlaneFit: return 2 + histogram_block(c.fit_bins, c.fit_embed);
    case FeatureKind::Inertia: return 3;
    case FeatureKind::CenterDistance: return histogram_block(c.distance_bins, c.distance_embed);
    case FeatureKind::Hog: return histogram_block(kHogBins, c.hog_embed);
    }
    return 0;
}

FeatureLayout make_layout(const FeatureConfig& config) {
    config.validate();
    FeatureLayout layout;
    std::size_t offset = 0;
    for (auto kind : kAllFeatures) {
        if (!config.has(kind)) {
            continue;
        }
        const std::size_t len = feature_length(kind, config);
        layout.entries.push_back({std::string(to_string(kind)), offset, len});
        switch (kind) {
        case FeatureKind::Moments:
        case FeatureKind::Position:
        case FeatureKind::Inertia:
            for (std::size_t i = 0; i < len; ++i) {
                layout.groups.push_back({offset + i, 1});
            }
            break;
        case FeatureKind::LineFit:
        case FeatureKind::PlaneFit:
            layout.groups.push_back({offset, 1});
            layout.groups.push_back({offset + 1, 1});
            layout.groups.push_back({offset + 2, len - 2});
            break;
        default:
            layout.groups.push_back({offset, len});
            break;
        }
        offset += len;
    }
    layout.size = offset;
    return layout;
}

std::vector<std::string> FeatureLayout::column_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        for (std::size_t i = 0; i < e.length; ++i) {
            out.push_back(fmt::format("{}[{}]", e.name, i));
        }
    }
    return out;
}

// --- descriptors ------------------------------------------------------------

Moments moments(const LocalEnvironment& env) {
    const auto& v = env.values;
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double x : v) {
        const double d = x - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    Moments out;
    out.mean = mean;
    // Residual rounding on a constant cube must not turn into huge skew/kurtosis.
    const double floor = 1e-12 * std::max(1.0, std::abs(mean));
    if (m2 <= floor * floor) {
        return out;
    }
    out.stddev = std::sqrt(m2);
    out.skewness = m3 / (m2 * out.stddev);
    out.kurtosis = m4 / (m2 * m2) - 3.0;
    return out;
}

std::array<double, 3> position_feature(const Index3& center) {
    return {static_cast<double>(center.x), static_cast<double>(center.y),
            static_cast<double>(center.z)};
}

int lbp_riu2_code(unsigned pattern) {
    pattern &= 0xFFu;
    int transitions = 0;
    for (int i = 0; i < 8; ++i) {
        const unsigned a = (pattern >> i) & 1u;
        const unsigned b = (pattern >> ((i + 1) % 8)) & 1u;
        transitions += static_cast<int>(a != b);
    }
    if (transitions > 2) {
        return 9;
    }
    return std::popcount(pattern);
}

std::array<Histogram, 3> lbp_top(const LocalEnvironment& env) {
    const int K = env.size;
    std::array<Histogram, 3> out{Histogram(0.0, kLbpCodes, kLbpCodes),
                                 Histogram(0.0, kLbpCodes, kLbpCodes),
                                 Histogram(0.0, kLbpCodes, kLbpCodes)};
    std::vector<double> img(static_cast<std::size_t>(K) * K);
    static constexpr std::array<std::array<int, 2>, 8> kRing{
        {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}}};

    for (int axis = 0; axis < 3; ++axis) {
        // img(u, v): u, v are the two remaining axes in increasing order.
        std::fill(img.begin(), img.end(), 0.0);
        for (int z = 0; z < K; ++z) {
            for (int y = 0; y < K; ++y) {
                for (int x = 0; x < K; ++x) {
                    const int c[3] = {x, y, z};
                    const int u = c[axis == 0 ? 1 : 0];
                    const int v = c[axis == 2 ? 1 : 2];
                    img[static_cast<std::size_t>(v) * K + u] += env(x, y, z);
                }
            }
        }
        auto at = [&](int u, int v) { return img[static_cast<std::size_t>(v) * K + u]; };
        for (int v = 1; v < K - 1; ++v) {
            for (int u = 1; u < K - 1; ++u) {
                const double center = at(u, v);
                unsigned pattern = 0;
                for (int i = 0; i < 8; ++i) {
                    if (at(u + kRing[i][0], v + kRing[i][1]) > center) {
                        pattern |= 1u << i;
                    }
                }
                out[axis].add(lbp_riu2_code(pattern) + 0.5);
            }
        }
    }
    return out;
}

std::vector<double> curvature_estimates(const LocalEnvironment& env, int k,
                                        double gradient_threshold) {
    const int K = env.size;
    const int h = k / 2;
    std::vector<double> out;
    if (K - 2 * h <= 0) {
        return out;
    }
    out.reserve(static_cast<std::size_t>(K - 2 * h) * (K - 2 * h) * (K - 2 * h));
    const double inv_h2 = 1.0 / (static_cast<double>(h) * h);
    for (int z = h; z < K - h; ++z) {
        for (int y = h; y < K - h; ++y) {
            for (int x = h; x < K - h; ++x) {
                const auto g = gradient(env, x, y, z, h);
                const double gn2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                const double gn = std::sqrt(gn2);
                if (gn < gradient_threshold || gn == 0.0) {
                    out.push_back(0.0);
                    continue;
                }
                const double f = env(x, y, z);
                const double hxx = (env(x + h, y, z) - 2 * f + env(x - h, y, z)) * inv_h2;
                const double hyy = (env(x, y + h, z) - 2 * f + env(x, y - h, z)) * inv_h2;
                const double hzz = (env(x, y, z + h) - 2 * f + env(x, y, z - h)) * inv_h2;
                const double q = 0.25 * inv_h2;
                const double hxy = (env(x + h, y + h, z) - env(x + h, y - h, z) -
                                    env(x - h, y + h, z) + env(x - h, y - h, z)) * q;
                const double hxz = (env(x + h, y, z + h) - env(x + h, y, z - h) -
                                    env(x - h, y, z + h) + env(x - h, y, z - h)) * q;
                const double hyz = (env(x, y + h, z + h) - env(x, y + h, z - h) -
                                    env(x, y - h, z + h) + env(x, y - h, z - h)) * q;
                const double trace = hxx + hyy + hzz;
                const double gHg = g[0] * (hxx * g[0] + hxy * g[1] + hxz * g[2]) +
                                   g[1] * (hxy * g[0] + hyy * g[1] + hyz * g[2]) +
                                   g[2] * (hxz * g[0] + hyz * g[1] + hzz * g[2]);
                // Mean curvature of the isosurface, oriented so bright convex blobs are positive.
                out.push_back(-(gn2 * trace - gHg) / (2.0 * gn2 * gn));
            }
        }
    }
    return out;
}

Histogram curvature_histogram(const LocalEnvironment& env, const FeatureConfig& config) {
    Histogram h(-config.curvature_range, config.curvature_range,
                static_cast<std::size_t>(config.curvature_bins));
    for (double c : curvature_estimates(env, config.curvature_size, config.gradient_threshold)) {
        h.add(c);
    }
    return h;
}

StructureFit fit_structures(const LocalEnvironment& env, double threshold, int bins) {
    const int K = env.size;
    const int r = K / 2;
    const double dmax = kSqrt3 * r;
    StructureFit fit;
    fit.line_hist = Histogram(0.0, dmax, static_cast<std::size_t>(bins));
    fit.plane_hist = Histogram(0.0, dmax, static_cast<std::size_t>(bins));

    std::vector<Eigen::Vector3d> pts;
    for (int z = 0; z < K; ++z) {
        for (int y = 0; y < K; ++y) {
            for (int x = 0; x < K; ++x) {
                if (env(x, y, z) > threshold) {
                    pts.emplace_back(x, y, z);
                }
            }
        }
    }
    if (pts.size() < 3) {
        return fit;
    }
    fit.degenerate = false;

    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d d = p - centroid;
        scatter += d * d.transpose();
    }
    // Left singular vectors of the centered coordinate matrix = eigenvectors of its scatter.
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    const Eigen::Vector3d u1 = eig.eigenvectors().col(2);
    const Eigen::Vector3d u3 = eig.eigenvectors().col(0);
    fit.line_direction = {u1.x(), u1.y(), u1.z()};
    fit.plane_normal = {u3.x(), u3.y(), u3.z()};

    const Eigen::Vector3d c(r, r, r);
    fit.line_distances.reserve(pts.size());
    fit.plane_distances.reserve(pts.size());
    for (const auto& p : pts) {
        const Eigen::Vector3d d = p - c;
        fit.line_distances.push_back((d - d.dot(u1) * u1).norm());
        fit.plane_distances.push_back(std::abs(d.dot(u3)));
    }

    auto characterize = [&](const std::vector<double>& dist, Histogram& hist, double& f1, double& f2) {
        double sum = 0.0;
        for (double d : dist) {
            sum += d;
            hist.add(d);
        }
        const auto [mn, mx] = std::minmax_element(dist.begin(), dist.end());
        f1 = std::exp(-sum / static_cast<double>(dist.size()));
        f2 = (*mx - *mn + 1.0) / (2.0 * dmax);
    };
    characterize(fit.line_distances, fit.line_hist, fit.line_f1, fit.line_f2);
    characterize(fit.plane_distances, fit.plane_hist, fit.plane_f1, fit.plane_f2);
    return fit;
}

InertiaFeatures inertia_features(const LocalEnvironment& env) {
    const int K = env.size;
    Eigen::Matrix3d tensor = Eigen::Matrix3d::Zero();
    for (int z = 1; z < K - 1; ++z) {
        for (int y = 1; y < K - 1; ++y) {
            for (int x = 1; x < K - 1; ++x) {
                const auto g = gradient(env, x, y, z);
                const Eigen::Vector3d gv(g[0], g[1], g[2]);
                tensor += gv * gv.transpose();
            }
        }
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(tensor, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues(); // ascending
    const double l1 = std::max(ev(2), 0.0);
    const double l2 = std::clamp(ev(1), 0.0, l1);
    const double l3 = std::clamp(ev(0), 0.0, l2);
    InertiaFeatures out;
    out.eigenvalues = {l1, l2, l3};
    if (!(l1 > 0.0)) {
        return out;
    }
    // Eigenvectors of the gradient tensor are surface normals: one dominant normal
    // is a plane, two are a line (edge or rod).
    out.planarity = (l1 - l2) / l1;
    out.linearity = (l2 - l3) / l1;
    out.isotropy = l3 / l1;
    return out;
}

Histogram center_distance_histogram(const LocalEnvironment& env, double threshold, int bins) {
    const int K = env.size;
    const int r = K / 2;
    Histogram h(0.0, kSqrt3 * r, static_cast<std::size_t>(bins));
    for (int z = 0; z < K; ++z) {
        for (int y = 0; y < K; ++y) {
            for (int x = 0; x < K; ++x) {
                if (env(x, y, z) > threshold) {
                    const double dx = x - r, dy = y - r, dz = z - r;
                    h.add(std::sqrt(dx * dx + dy * dy + dz * dz));
                }
            }
        }
    }
    return h;
}

int hog_bin(double gx, double gy, double gz) {
    const double m = std::sqrt(gx * gx + gy * gy + gz * gz);
    const double cz = gz / m;
    int band = 4;
    for (int b = 0; b < 4; ++b) {
        if (cz >= kHogBandEdges[b]) {
            band = b;
            break;
        }
    }
    double phi = std::atan2(gy, gx);
    if (phi < 0.0) {
        phi += 2.0 * std::numbers::pi;
    }
    const int cells = kHogBandCells[band];
    const int cell = std::min(cells - 1, static_cast<int>(phi / (2.0 * std::numbers::pi) * cells));
    return kHogBandOffset[band] + cell;
}

Histogram hog_sphere(const LocalEnvironment& env, double magnitude_threshold) {
    const int K = env.size;
    Histogram h(0.0, kHogBins, kHogBins);
    for (int z = 1; z < K - 1; ++z) {
        for (int y = 1; y < K - 1; ++y) {
            for (int x = 1; x < K - 1; ++x) {
                const auto g = gradient(env, x, y, z);
                const double m = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
                if (m > magnitude_threshold && m > 0.0) {
                    h.add(hog_bin(g[0], g[1], g[2]) + 0.5, m);
                }
            }
        }
    }
    return h;
}

// --- assembly ---------------------------------------------------------------

FeatureExtractor::FeatureExtractor(FeatureConfig config) : config_(std::move(config)) {
    config_.validate();
    std::vector<FeatureKind> canonical;
    for (auto k : kAllFeatures) {
        if (config_.has(k)) {
            canonical.push_back(k);
        }
    }
    config_.enabled = std::move(canonical);
    layout_ = make_layout(config_);
}

FeatureVector FeatureExtractor::assemble(const LocalEnvironment& env) const {
    FeatureVector v;
    v.values.resize(layout_.size);
    assemble_into(env, v.values);
    return v;
}

void FeatureExtractor::assemble_into(const LocalEnvironment& env, std::span<double> out) const {
    if (env.size != config_.env_size) {
        fail(ErrorCode::InvalidArgument,
             fmt::format("environment size {} does not match config K={}", env.size, config_.env_size));
    }
    if (out.size() != layout_.size) {
        fail(ErrorCode::InvalidArgument, "feature buffer has wrong length");
    }
    const auto& c = config_;
    for (const auto& entry : layout_.entries) {
        auto block = out.subspan(entry.offset, entry.length);
        switch (parse_feature_kind(entry.name)) {
        case FeatureKind::Moments: {
            const auto m = moments(env);
            block[0] = m.mean;
            block[1] = m.stddev;
            block[2] = m.skewness;
            block[3] = m.kurtosis;
            break;
        }
        case FeatureKind::Position: {
            const auto p = position_feature(env.center);
            std::copy(p.begin(), p.end(), block.begin());
            break;
        }
        case FeatureKind::LbpTop: {
            const auto hs = lbp_top(env);
            const std::size_t per = block.size() / 3;
            for (std::size_t i = 0; i < 3; ++i) {
                write_histogram(hs[i], c.lbp_embed, block.subspan(i * per, per));
            }
            break;
        }
        case FeatureKind::Curvature:
            write_histogram(curvature_histogram(env, c), c.curvature_embed, block);
            break;
        case FeatureKind::LineFit:
        case FeatureKind::PlaneFit: {
            const bool line = entry.name == to_string(FeatureKind::LineFit);
            const auto fit = fit_structures(env, c.threshold, c.fit_bins);
            if (fit.degenerate) {
                std::fill(block.begin(), block.end(), 0.0);
                break;
            }
            block[0] = line ? fit.line_f1 : fit.plane_f1;
            block[1] = line ? fit.line_f2 : fit.plane_f2;
            write_histogram(line ? fit.line_hist : fit.plane_hist, c.fit_embed, block.subspan(2));
            break;
        }
        case FeatureKind::Inertia: {
            const auto in = inertia_features(env);
            block[0] = in.linearity;
            block[1] = in.planarity;
            block[2] = in.isotropy;
            break;
        }
        case FeatureKind::CenterDistance:
            write_histogram(center_distance_histogram(env, c.threshold, c.distance_bins),
                            c.distance_embed, block);
            break;
        case FeatureKind::Hog:
            write_histogram(hog_sphere(env, c.gradient_threshold), c.hog_embed, block);
            break;
        }
    }
}

std::string features_to_csv(const FeatureLayout& layout, std::span<const FeatureVector> vectors) {
    std::string out;
    const auto names = layout.column_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) out += ',';
        out += names[i];
    }
    out += '\n';
    for (const auto& v : vectors) {
        for (std::size_t i = 0; i < v.values.size(); ++i) {
            if (i) out += ',';
            out += format_double(v.values[i]);
        }
        out += '\n';
    }
    return out;
}

} // namespace alseg
