#include "alseg/learner.hpp"

#include "alseg/error.hpp"
#include "alseg/parallel.hpp"
#include "alseg/postproc.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

namespace alseg {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

DenseVolume materialize(const GridSource& src, DType dtype) {
    DenseVolume out(src.dims(), dtype);
    const Dims3 d = src.dims();
    std::vector<double> plane(static_cast<std::size_t>(d.x * d.y));
    for (std::int64_t z = 0; z < d.z; ++z) {
        const Box3 box{{0, 0, z}, {d.x - 1, d.y - 1, z}};
        src.read_box(box, plane);
        out.write_box(box, plane);
    }
    return out;
}

} // namespace

// --- seeds ------------------------------------------------------------------

std::vector<Seed> parse_seeds(std::string_view text) {
    std::vector<Seed> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        const auto tok = split_tokens(line, " \t\r");
        if (tok.empty()) {
            if (end == text.size()) break;
            continue;
        }
        if (tok.size() != 4) {
            fail(ErrorCode::InvalidArgument, fmt::format("seed line {}: expected 'x y z label'", line_no));
        }
        Seed s;
        s.position = {parse_int(tok[0]), parse_int(tok[1]), parse_int(tok[2])};
        const auto label = parse_int(tok[3]);
        if (label != 1 && label != -1) {
            fail(ErrorCode::InvalidArgument, fmt::format("seed line {}: label must be +1 or -1", line_no));
        }
        s.label = static_cast<int>(label);
        out.push_back(s);
        if (end == text.size()) break;
    }
    return out;
}

std::string format_seeds(std::span<const Seed> seeds) {
    std::string out;
    for (const auto& s : seeds) {
        out += fmt::format("{} {} {} {}\n", s.position.x, s.position.y, s.position.z, s.label > 0 ? "+1" : "-1");
    }
    return out;
}

std::vector<Seed> read_seed_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        fail(ErrorCode::Io, "cannot open seed file " + path);
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_seeds(ss.str());
}

void write_seed_file(const std::string& path, std::span<const Seed> seeds) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            fail(ErrorCode::Io, "cannot write " + tmp);
        }
        f << format_seeds(seeds);
    }
    fs::rename(tmp, path);
}

SeedSet::AddResult SeedSet::add(const Seed& seed) {
    if (seed.label != 1 && seed.label != -1) {
        fail(ErrorCode::InvalidArgument, "seed label must be +1 or -1");
    }
    if (const int existing = label_at(seed.position); existing != 0) {
        return existing == seed.label ? AddResult::Duplicate : AddResult::Conflict;
    }
    entries_.push_back(seed);
    return AddResult::Added;
}

int SeedSet::label_at(const Index3& p) const {
    for (const auto& s : entries_) {
        if (s.position == p) return s.label;
    }
    return 0;
}

std::size_t SeedSet::positives() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const Seed& s) { return s.label > 0; }));
}

std::size_t SeedSet::negatives() const { return entries_.size() - positives(); }

// --- uncertainty ------------------------------------------------------------

double log_uncertainty(double confidence, double delta) {
    const double d = std::min(std::abs(confidence - 0.5), 0.5 - 1e-9);
    return -delta * std::tan(std::numbers::pi * d);
}

double uncertainty(double confidence, double delta) { return std::exp(log_uncertainty(confidence, delta)); }

DenseVolume uncertainty_volume(const GridSource& confidence, double delta) {
    // Only 101 distinct inputs; evaluating through the table keeps voxels identical to
    // the scalar formula.
    std::array<double, 101> table{};
    for (int i = 0; i <= 100; ++i) {
        table[static_cast<std::size_t>(i)] = uncertainty(i / 100.0, delta);
    }
    const Dims3 d = confidence.dims();
    DenseVolume out(d, DType::F32);
    std::vector<double> plane(static_cast<std::size_t>(d.x * d.y));
    for (std::int64_t z = 0; z < d.z; ++z) {
        const Box3 box{{0, 0, z}, {d.x - 1, d.y - 1, z}};
        confidence.read_box(box, plane);
        for (auto& v : plane) {
            const double r = std::round(v);
            v = (r == v && r >= 0 && r <= 100) ? table[static_cast<std::size_t>(r)] : uncertainty(v / 100.0, delta);
        }
        out.write_box(box, plane);
    }
    return out;
}

ThresholdResult confidence_threshold(std::span<const double> positives, std::span<const double> negatives) {
    if (positives.empty() || negatives.empty()) {
        fail(ErrorCode::SingleClass, "threshold search needs confidences of both classes");
    }
    std::vector<double> pos(positives.begin(), positives.end());
    std::vector<double> neg(negatives.begin(), negatives.end());
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    std::vector<double> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    std::vector<double> candidates{0.0, 1.0};
    for (std::size_t i = 1; i < all.size(); ++i) {
        candidates.push_back(0.5 * (all[i - 1] + all[i]));
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    const auto np = static_cast<std::int64_t>(pos.size()), nn = static_cast<std::int64_t>(neg.size());
    // Compared as the integer numerator over np * nn so equal errors tie exactly.
    std::int64_t best_num = std::numeric_limits<std::int64_t>::max();
    double best_rho = 0.0;
    for (double rho : candidates) {
        // Positives at or below rho and negatives at or above it are misclassified.
        const std::int64_t pos_err = std::upper_bound(pos.begin(), pos.end(), rho) - pos.begin();
        const std::int64_t neg_err = neg.end() - std::lower_bound(neg.begin(), neg.end(), rho);
        const std::int64_t num = pos_err * nn + neg_err * np;
        if (num < best_num) {
            best_num = num;
            best_rho = rho;
        }
    }
    const auto pos_err = static_cast<double>(std::upper_bound(pos.begin(), pos.end(), best_rho) - pos.begin());
    const auto neg_err = static_cast<double>(neg.end() - std::lower_bound(neg.begin(), neg.end(), best_rho));
    return {best_rho, pos_err / static_cast<double>(np) + neg_err / static_cast<double>(nn)};
}

// --- classification ---------------------------------------------------------

ClassifyStats classify_tiles(const GridSource& source, const FeatureExtractor& extractor,
                             const SvmModel& model, const std::optional<std::vector<Box3>>& regions,
                             const ClassifyOptions& options,
                             const std::function<void(const Box3&, std::span<const double>)>& fn) {
    if (!model.calibrated) {
        fail(ErrorCode::NotTrained, "classification needs a calibrated model");
    }
    if (model.dimension() != extractor.size()) {
        fail(ErrorCode::SizeMismatch, "model does not match the feature layout");
    }
    if (options.tile < 1) {
        fail(ErrorCode::InvalidArgument, "tile size must be positive");
    }
    const Dims3 dims = source.dims();
    const int K = extractor.config().env_size;
    const std::int64_t r = K / 2;
    const Box3 interior = interior_box(dims, K);

    std::vector<Box3> clipped;
    if (regions) {
        for (const auto& b : *regions) {
            const Box3 c = intersect(b, interior);
            if (!c.empty()) clipped.push_back(c);
        }
    }

    const std::int64_t T = options.tile;
    const Index3 ntiles{(dims.x + T - 1) / T, (dims.y + T - 1) / T, (dims.z + T - 1) / T};
    const std::size_t total = voxel_count(ntiles);
    std::atomic<std::size_t> classified{0};
    std::atomic<std::size_t> finished{0};
    const std::size_t nfeat = extractor.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    parallel_for(total, options.workers, [&](std::size_t t) {
        const Index3 ti = from_linear(t, ntiles);
        const Box3 tile{{ti.x * T, ti.y * T, ti.z * T},
                        {std::min(dims.x, (ti.x + 1) * T) - 1, std::min(dims.y, (ti.y + 1) * T) - 1,
                         std::min(dims.z, (ti.z + 1) * T) - 1}};
        const Dims3 text = tile.extent();
        std::vector<double> out(tile.count(), nan);

        std::vector<Box3> local;
        Box3 active = intersect(tile, interior);
        if (regions && !active.empty()) {
            for (const auto& b : clipped) {
                const Box3 c = intersect(b, active);
                if (!c.empty()) local.push_back(c);
            }
            if (local.empty()) {
                active = Box3{{0, 0, 0}, {-1, -1, -1}};
            } else {
                Box3 hull = local.front();
                for (const auto& b : local) {
                    for (int a = 0; a < 3; ++a) {
                        hull.lo[a] = std::min(hull.lo[a], b.lo[a]);
                        hull.hi[a] = std::max(hull.hi[a], b.hi[a]);
                    }
                }
                active = hull;
            }
        }

        std::size_t count = 0;
        if (!active.empty()) {
            const Box3 read{{active.lo.x - r, active.lo.y - r, active.lo.z - r},
                            {active.hi.x + r, active.hi.y + r, active.hi.z + r}};
            const Dims3 rext = read.extent();
            std::vector<double> buf(read.count());
            source.read_box(read, buf);

            LocalEnvironment env;
            env.size = K;
            env.values.resize(static_cast<std::size_t>(K) * K * K);
            std::vector<double> raw(nfeat), scaled(nfeat);

            for (std::int64_t z = active.lo.z; z <= active.hi.z; ++z) {
                for (std::int64_t y = active.lo.y; y <= active.hi.y; ++y) {
                    for (std::int64_t x = active.lo.x; x <= active.hi.x; ++x) {
                        const Index3 p{x, y, z};
                        if (regions && std::none_of(local.begin(), local.end(),
                                                    [&](const Box3& b) { return b.contains(p); })) {
                            continue;
                        }
                        env.center = p;
                        std::size_t k = 0;
                        for (std::int64_t ez = z - r; ez <= z + r; ++ez) {
                            for (std::int64_t ey = y - r; ey <= y + r; ++ey) {
                                const std::size_t row = linear_index({x - r - read.lo.x, ey - read.lo.y, ez - read.lo.z}, rext);
                                std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(row), K,
                                            env.values.begin() + static_cast<std::ptrdiff_t>(k));
                                k += static_cast<std::size_t>(K);
                            }
                        }
                        extractor.assemble_into(env, raw);
                        model.scaler.apply_into(raw, scaled);
                        const double s = platt_probability(model.decision_scaled(scaled), model.platt_a, model.platt_b);
                        out[linear_index({x - tile.lo.x, y - tile.lo.y, z - tile.lo.z}, text)] = s;
                        ++count;
                    }
                }
            }
        }
        fn(tile, out);
        classified += count;
        const std::size_t done = ++finished;
        if (options.progress) {
            options.progress(static_cast<double>(done) / static_cast<double>(total));
        }
    });
    return {classified.load(), total};
}

ClassifyStats classify_volume(const GridSource& source, const FeatureExtractor& extractor,
                              const SvmModel& model, const std::optional<std::vector<Box3>>& regions,
                              VolumeSink& out, const ClassifyOptions& options) {
    if (out.dims() != source.dims()) {
        fail(ErrorCode::SizeMismatch, "output dims differ from the source");
    }
    return classify_tiles(source, extractor, model, regions, options,
                          [&](const Box3& tile, std::span<const double> conf) {
                              std::vector<double> q(conf.size());
                              for (std::size_t i = 0; i < conf.size(); ++i) {
                                  q[i] = std::isnan(conf[i]) ? 0.0 : std::clamp(std::floor(100.0 * conf[i]), 0.0, 100.0);
                              }
                              out.write_box(tile, q);
                          });
}

std::vector<Box3> simplify_regions(std::vector<Box3> boxes) {
    boxes.erase(std::remove_if(boxes.begin(), boxes.end(), [](const Box3& b) { return b.empty(); }), boxes.end());
    bool merged = true;
    while (merged) {
        merged = false;
        for (std::size_t i = 0; i < boxes.size() && !merged; ++i) {
            for (std::size_t j = i + 1; j < boxes.size(); ++j) {
                if (intersect(boxes[i], boxes[j]).empty()) {
                    continue;
                }
                for (int a = 0; a < 3; ++a) {
                    boxes[i].lo[a] = std::min(boxes[i].lo[a], boxes[j].lo[a]);
                    boxes[i].hi[a] = std::max(boxes[i].hi[a], boxes[j].hi[a]);
                }
                boxes.erase(boxes.begin() + static_cast<std::ptrdiff_t>(j));
                merged = true;
                break;
            }
        }
    }
    std::sort(boxes.begin(), boxes.end(), [](const Box3& a, const Box3& b) {
        return a.lo != b.lo ? a.lo < b.lo : a.hi < b.hi;
    });
    return boxes;
}

std::vector<Box3> find_candidates(const GridSource& view, const std::optional<std::vector<Box3>>& previous,
                                  const FeatureExtractor& extractor, const SvmModel& model, double rho,
                                  const Dims3& next_dims, const ClassifyOptions& options) {
    const Dims3 d = view.dims();
    BinaryVolume keep(d);
    classify_tiles(view, extractor, model, previous, options, [&](const Box3& tile, std::span<const double> conf) {
        const Dims3 ext = tile.extent();
        for (std::size_t i = 0; i < conf.size(); ++i) {
            if (conf[i] > rho) {
                const Index3 l = from_linear(i, ext);
                keep.bits[linear_index({tile.lo.x + l.x, tile.lo.y + l.y, tile.lo.z + l.z}, d)] = 1;
            }
        }
    });
    const auto labels = connected_components(keep, 26);
    const std::int64_t r = extractor.config().env_size / 2;
    std::vector<Box3> out;
    for (const auto& b : labels.boxes) {
        Box3 s;
        for (int a = 0; a < 3; ++a) {
            s.lo[a] = std::max<std::int64_t>(0, 2 * (b.lo[a] - r));
            s.hi[a] = std::min(next_dims[a] - 1, 2 * (b.hi[a] + r) + 1);
        }
        out.push_back(s);
    }
    return simplify_regions(std::move(out));
}

// --- session ----------------------------------------------------------------

Session::Session(std::shared_ptr<const GridSource> volume, SessionConfig config)
    : volume_(std::move(volume)), config_(std::move(config)), extractor_(config_.features) {
    if (!volume_) {
        fail(ErrorCode::InvalidArgument, "session needs a volume");
    }
    if (config_.levels < 1 || config_.levels > 8) {
        fail(ErrorCode::InvalidArgument, "levels must lie in [1, 8]");
    }
    if (!(config_.delta >= 0.0) || !std::isfinite(config_.delta)) {
        fail(ErrorCode::InvalidArgument, "delta must be finite and >= 0");
    }
    config_.features = extractor_.config();
    for (int level = 1; level <= config_.levels; ++level) {
        if (level == config_.levels) {
            sources_.push_back(volume_);
        } else {
            sources_.push_back(std::make_shared<MultiresView>(volume_, level, config_.levels));
        }
    }
}

std::shared_ptr<const GridSource> Session::level_source(int level) const {
    check_level(level);
    return sources_[static_cast<std::size_t>(level - 1)];
}

void Session::check_level(int level) const {
    if (level < 1 || level > config_.levels) {
        fail(ErrorCode::OutOfRange, fmt::format("level {} outside [1, {}]", level, config_.levels));
    }
}

void Session::check_seed(const Seed& seed) const {
    if (seed.label != 1 && seed.label != -1) {
        fail(ErrorCode::InvalidArgument, "seed label must be +1 or -1");
    }
    const Box3 interior = interior_box(volume_->dims(), config_.features.env_size);
    if (!interior.contains(seed.position)) {
        fail(ErrorCode::InvalidArgument,
             fmt::format("seed {} has no full {}-environment", to_string(seed.position), config_.features.env_size));
    }
}

std::optional<FeatureVector> Session::features_at(int level, const Index3& fine) const {
    const std::int64_t f = std::int64_t{1} << (config_.levels - level);
    const Index3 p{floor_div(fine.x, f), floor_div(fine.y, f), floor_div(fine.z, f)};
    const auto env = extract_environment(*sources_[static_cast<std::size_t>(level - 1)], p,
                                         config_.features.env_size);
    if (!env) {
        return std::nullopt;
    }
    return extractor_.assemble(*env);
}

void Session::train(std::span<const Seed> new_seeds, IterationReport* report) {
    const auto t0 = Clock::now();
    SeedSet seeds = seeds_;
    std::vector<Seed> added;
    for (const auto& s : new_seeds) {
        check_seed(s);
        switch (seeds.add(s)) {
        case SeedSet::AddResult::Added: added.push_back(s); break;
        case SeedSet::AddResult::Duplicate: break;
        case SeedSet::AddResult::Conflict:
            fail(ErrorCode::InvalidArgument, fmt::format("seed {} conflicts with an earlier label", to_string(s.position)));
        }
    }
    if (seeds.positives() == 0 || seeds.negatives() == 0) {
        fail(ErrorCode::SingleClass, "seeds must include both labels");
    }

    const int L = config_.levels;
    std::vector<TrainingSet> sets(static_cast<std::size_t>(L));
    for (int level = 1; level <= L; ++level) {
        auto& set = sets[static_cast<std::size_t>(level - 1)];
        if (!models_.empty()) {
            set = models_[static_cast<std::size_t>(level - 1)].train;
        }
        for (const auto& s : added) {
            // Seeds near the border may lack an environment on coarse levels; they
            // simply do not contribute there.
            if (auto fv = features_at(level, s.position)) {
                set.add(std::move(*fv), s.label);
            }
        }
        if (set.positives() == 0 || set.negatives() == 0) {
            fail(ErrorCode::SingleClass, fmt::format("level {} has seeds of one class only", level));
        }
    }
    const double extract = seconds_since(t0);

    const auto t1 = Clock::now();
    std::vector<Level> levels(static_cast<std::size_t>(L));
    std::vector<CvReport> cv;
    for (int level = 1; level <= L; ++level) {
        auto& lv = levels[static_cast<std::size_t>(level - 1)];
        lv.train = std::move(sets[static_cast<std::size_t>(level - 1)]);
        TrainReport rep;
        lv.model = train_svm(lv.train, config_.features, config_.train, &rep);
        cv.push_back(std::move(rep.cv));
        if (level < L) {
            std::vector<double> pos, neg;
            for (std::size_t i = 0; i < lv.train.size(); ++i) {
                (lv.train.labels[i] > 0 ? pos : neg).push_back(lv.model.confidence(lv.train.samples[i]));
            }
            lv.rho = confidence_threshold(pos, neg).rho;
        }
    }

    seeds_ = std::move(seeds);
    models_ = std::move(levels);
    if (report) {
        report->seeds_added = added.size();
        report->extract_seconds = extract;
        report->train_seconds = seconds_since(t1);
        report->cv = std::move(cv);
    }
}

void Session::classify(IterationReport* report, const ClassifyOptions& options) {
    if (!trained()) {
        fail(ErrorCode::NotTrained, "session has no trained model");
    }
    const auto t0 = Clock::now();
    IterationReport local;
    IterationReport& rep = report ? *report : local;
    auto conf = std::make_shared<DenseVolume>(multires_segment(*this, options, &rep));
    rep.classify_seconds = seconds_since(t0);
    const auto t1 = Clock::now();
    auto unc = std::make_shared<DenseVolume>(uncertainty_volume(*conf, config_.delta));
    rep.uncertainty_seconds = seconds_since(t1);
    confidence_ = std::move(conf);
    uncertainty_ = std::move(unc);
    ++iteration_;
    rep.iteration = iteration_;
}

IterationReport Session::iterate(std::span<const Seed> new_seeds, const ClassifyOptions& options) {
    const auto t0 = Clock::now();
    IterationReport rep;
    train(new_seeds, &rep);
    classify(&rep, options);
    rep.total_seconds = seconds_since(t0);
    return rep;
}

const SvmModel& Session::model(int level) const {
    check_level(level);
    if (!trained()) fail(ErrorCode::NotTrained, "session has no trained model");
    return models_[static_cast<std::size_t>(level - 1)].model;
}

const TrainingSet& Session::training(int level) const {
    check_level(level);
    if (!trained()) fail(ErrorCode::NotTrained, "session has no trained model");
    return models_[static_cast<std::size_t>(level - 1)].train;
}

double Session::rho(int level) const {
    check_level(level);
    if (!trained()) fail(ErrorCode::NotTrained, "session has no trained model");
    return models_[static_cast<std::size_t>(level - 1)].rho;
}

DenseVolume classify_session(const Session& session, const ClassifyOptions& options) {
    const int L = session.config().levels;
    DenseVolume out(session.volume().dims(), DType::U8);
    ClassifyOptions opts = options;
    opts.tile = session.config().tile;
    classify_volume(session.volume(), session.extractor(), session.model(L), std::nullopt, out, opts);
    return out;
}

DenseVolume multires_segment(const Session& session, const ClassifyOptions& options, IterationReport* stats) {
    const int L = session.config().levels;
    ClassifyOptions opts = options;
    opts.tile = session.config().tile;
    std::optional<std::vector<Box3>> regions;
    std::vector<std::size_t> candidate_voxels;
    for (int level = 1; level < L; ++level) {
        ClassifyOptions lo = opts;
        // Progress of the pruning levels is not reported; the finest pass dominates.
        lo.progress = nullptr;
        const auto src = session.level_source(level);
        const Dims3 next = session.level_source(level + 1)->dims();
        auto boxes = find_candidates(*src, regions, session.extractor(), session.model(level),
                                     session.rho(level), next, lo);
        std::size_t n = 0;
        for (const auto& b : boxes) n += b.count();
        candidate_voxels.push_back(n);
        regions = std::move(boxes);
        if (regions->empty()) {
            break;
        }
    }
    DenseVolume out(session.volume().dims(), DType::U8);
    std::size_t classified = 0;
    if (!regions || !regions->empty()) {
        classified = classify_volume(session.volume(), session.extractor(), session.model(L), regions, out, opts).classified;
    }
    if (stats) {
        stats->classified_voxels = classified;
        stats->candidate_voxels = std::move(candidate_voxels);
    }
    return out;
}

// --- checkpoint -------------------------------------------------------------

KvDocument session_config_to_kv(const SessionConfig& config) {
    KvDocument doc;
    doc.add("levels", std::to_string(config.levels));
    doc.add("delta", format_double(config.delta));
    doc.add("tile", std::to_string(config.tile));
    doc.add("folds", std::to_string(config.train.folds));
    doc.add("cv_seed", std::to_string(config.train.cv_seed));
    doc.add("workers", std::to_string(config.train.workers));
    doc.add("epsilon", format_double(config.train.solver.epsilon));
    doc.add("kernel_cache_bytes", std::to_string(config.train.solver.cache_bytes));
    doc.add("max_kernel_evaluations", std::to_string(config.train.solver.max_kernel_evaluations));
    const auto features = config.features.to_kv();
    for (const auto& [k, v] : features.entries()) {
        doc.add(k, v);
    }
    return doc;
}

SessionConfig session_config_from_kv(const KvDocument& doc) {
    SessionConfig cfg;
    cfg.features = FeatureConfig::from_kv(doc);
    cfg.levels = static_cast<int>(doc.get_int_or("levels", cfg.levels));
    cfg.delta = doc.get_double_or("delta", cfg.delta);
    cfg.tile = static_cast<int>(doc.get_int_or("tile", cfg.tile));
    cfg.train.folds = static_cast<int>(doc.get_int_or("folds", cfg.train.folds));
    cfg.train.cv_seed = static_cast<std::uint64_t>(doc.get_int_or("cv_seed", static_cast<long long>(cfg.train.cv_seed)));
    cfg.train.workers = static_cast<int>(doc.get_int_or("workers", cfg.train.workers));
    cfg.train.solver.epsilon = doc.get_double_or("epsilon", cfg.train.solver.epsilon);
    cfg.train.solver.cache_bytes = static_cast<std::size_t>(doc.get_int_or("kernel_cache_bytes", static_cast<long long>(cfg.train.solver.cache_bytes)));
    cfg.train.solver.max_kernel_evaluations = static_cast<std::uint64_t>(doc.get_int_or("max_kernel_evaluations", static_cast<long long>(cfg.train.solver.max_kernel_evaluations)));
    return cfg;
}

void Session::save_checkpoint(const std::string& dir) const {
    fs::create_directories(dir);
    KvDocument doc;
    doc.add("iteration", std::to_string(iteration_));
    const auto config = session_config_to_kv(config_);
    for (const auto& [k, v] : config.entries()) {
        doc.add(k, v);
    }
    for (std::size_t l = 0; l < models_.size(); ++l) {
        doc.add(fmt::format("rho_{}", l + 1), format_double(models_[l].rho));
        serialize_model(models_[l].model, models_[l].train, (fs::path(dir) / fmt::format("model_{}.bin", l + 1)).string());
    }
    write_seed_file((fs::path(dir) / "seeds.txt").string(), seeds_.entries());
    if (confidence_) {
        save_volume(*confidence_, DType::U8, (fs::path(dir) / "confidence.vol").string());
    }
    if (uncertainty_) {
        save_volume(*uncertainty_, DType::F32, (fs::path(dir) / "uncertainty.vol").string());
    }
    doc.write_file((fs::path(dir) / "session.kv").string());
}

Session Session::load_checkpoint(const std::string& dir, std::shared_ptr<const GridSource> volume) {
    const auto doc = KvDocument::read_file((fs::path(dir) / "session.kv").string());
    const SessionConfig cfg = session_config_from_kv(doc);

    Session s(std::move(volume), cfg);
    for (const auto& seed : read_seed_file((fs::path(dir) / "seeds.txt").string())) {
        s.seeds_.add(seed);
    }
    const auto model0 = fs::path(dir) / "model_1.bin";
    if (fs::exists(model0)) {
        for (int l = 1; l <= cfg.levels; ++l) {
            auto stored = deserialize_model((fs::path(dir) / fmt::format("model_{}.bin", l)).string());
            if (!(stored.model.config == s.config_.features)) {
                fail(ErrorCode::Corrupt, "checkpoint model does not match the session features");
            }
            Level lv;
            lv.model = std::move(stored.model);
            lv.train = std::move(stored.train);
            lv.rho = doc.get_double_or(fmt::format("rho_{}", l), 0.0);
            s.models_.push_back(std::move(lv));
        }
    }
    s.iteration_ = static_cast<int>(doc.get_int_or("iteration", 0));
    const auto conf = fs::path(dir) / "confidence.vol";
    if (fs::exists(conf)) {
        s.confidence_ = std::make_shared<DenseVolume>(materialize(load_volume(conf.string()), DType::U8));
    }
    const auto unc = fs::path(dir) / "uncertainty.vol";
    if (fs::exists(unc)) {
        s.uncertainty_ = std::make_shared<DenseVolume>(materialize(load_volume(unc.string()), DType::F32));
    }
    return s;
}

} // namespace alseg
