#pragma once

#include "alseg/features.hpp"
#include "alseg/svm.hpp"
#include "alseg/volume.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace alseg {

/// Labeled voxel in finest-level coordinates.
struct Seed {
    Index3 position;
    int label = 1;
    friend bool operator==(const Seed&, const Seed&) = default;
};

/// `x y z label` per line, label written as +1 / -1. Blank lines and `#` comments are skipped.
std::vector<Seed> parse_seeds(std::string_view text);
std::string format_seeds(std::span<const Seed> seeds);
std::vector<Seed> read_seed_file(const std::string& path);
void write_seed_file(const std::string& path, std::span<const Seed> seeds);

/// Append-only seed list without repeated positions.
class SeedSet {
public:
    enum class AddResult { Added, Duplicate, Conflict };

    AddResult add(const Seed& seed);
    /// Label stored for `p`, or 0.
    int label_at(const Index3& p) const;

    const std::vector<Seed>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t positives() const;
    std::size_t negatives() const;

private:
    std::vector<Seed> entries_;
};

/// exp(-delta tan(pi |S - 1/2|)) with |S - 1/2| clamped below 1/2.
double uncertainty(double confidence, double delta);
/// Its logarithm, -delta tan(pi |S - 1/2|). Stays strictly ordered where the
/// exponential underflows (large delta, S near 0 or 1).
double log_uncertainty(double confidence, double delta);

/// f32 volume of uncertainty(value / 100, delta) for a percent confidence volume.
DenseVolume uncertainty_volume(const GridSource& confidence, double delta);

struct ThresholdResult {
    double rho = 0.0;
    double error = 0.0;
};

/// Minimizes (#pos with S <= rho)/N+ + (#neg with S >= rho)/N- over {0, 1} and the midpoints
/// of the sorted distinct confidences; ties go to the smallest rho. Throws on an empty class.
ThresholdResult confidence_threshold(std::span<const double> positives, std::span<const double> negatives);

struct ClassifyOptions {
    int workers = 1;
    int tile = 32;
    /// Called with the fraction of tiles finished; may run on any worker thread.
    std::function<void(double)> progress;
};

struct ClassifyStats {
    std::size_t classified = 0; // voxels that received a prediction
    std::size_t tiles = 0;
};

/// Classifies every voxel with a full environment (inside `regions` when given) and
/// writes floor(100 S) as u8 values; everything else is written as 0. Output bytes do
/// not depend on the worker count.
ClassifyStats classify_volume(const GridSource& source, const FeatureExtractor& extractor,
                              const SvmModel& model, const std::optional<std::vector<Box3>>& regions,
                              VolumeSink& out, const ClassifyOptions& options = {});

/// Calls `fn(tile, confidences)` per processed tile; skipped voxels carry NaN.
ClassifyStats classify_tiles(const GridSource& source, const FeatureExtractor& extractor,
                             const SvmModel& model, const std::optional<std::vector<Box3>>& regions,
                             const ClassifyOptions& options,
                             const std::function<void(const Box3&, std::span<const double>)>& fn);

/// Merges overlapping boxes until the list is pairwise disjoint; sorted by lower corner.
std::vector<Box3> simplify_regions(std::vector<Box3> boxes);

/// Classifies `view` inside `previous`, keeps confidences above `rho`, groups them by
/// 26-connectivity and returns bounding boxes dilated by K/2, scaled to `next_dims`.
std::vector<Box3> find_candidates(const GridSource& view, const std::optional<std::vector<Box3>>& previous,
                                  const FeatureExtractor& extractor, const SvmModel& model, double rho,
                                  const Dims3& next_dims, const ClassifyOptions& options = {});

struct SessionConfig {
    FeatureConfig features;
    double delta = 1.0;
    int levels = 1; // l_max
    TrainOptions train;
    int tile = 32;
};

/// Keys: levels, delta, tile, folds, cv_seed, workers, epsilon, kernel_cache_bytes,
/// max_kernel_evaluations and the feature keys. Missing keys keep their defaults.
KvDocument session_config_to_kv(const SessionConfig& config);
SessionConfig session_config_from_kv(const KvDocument& doc);

struct IterationReport {
    int iteration = 0;
    std::size_t seeds_added = 0;
    double extract_seconds = 0.0;
    double train_seconds = 0.0;
    double classify_seconds = 0.0;
    double uncertainty_seconds = 0.0;
    double total_seconds = 0.0;
    std::size_t classified_voxels = 0; // at the finest level
    std::vector<std::size_t> candidate_voxels; // per pruning level
    std::vector<CvReport> cv;                  // per level
};

/// Active-learning state for one volume. Not internally synchronized: callers keep a
/// single writer and never classify while training.
class Session {
public:
    Session(std::shared_ptr<const GridSource> volume, SessionConfig config);

    const SessionConfig& config() const { return config_; }
    const GridSource& volume() const { return *volume_; }
    std::shared_ptr<const GridSource> volume_ptr() const { return volume_; }
    const FeatureExtractor& extractor() const { return extractor_; }

    int iteration() const { return iteration_; }
    const SeedSet& seeds() const { return seeds_; }
    bool trained() const { return !models_.empty(); }

    /// Level source: the volume itself at l_max, an averaged view below.
    std::shared_ptr<const GridSource> level_source(int level) const;

    /// Throws unless `seed` lies inside the volume with a full environment at l_max.
    void check_seed(const Seed& seed) const;

    /// Appends the seeds, extracts their features on every level and retrains all levels.
    /// Throws SingleClass (nothing changes) or InvalidArgument for a bad seed.
    void train(std::span<const Seed> new_seeds, IterationReport* report = nullptr);

    /// Classification at l_max (pruned through the coarser levels when l_max > 1), then
    /// uncertainty; publishes both layers and advances the iteration counter.
    void classify(IterationReport* report = nullptr, const ClassifyOptions& options = {});

    /// train + classify.
    IterationReport iterate(std::span<const Seed> new_seeds, const ClassifyOptions& options = {});

    const SvmModel& model(int level) const;
    const TrainingSet& training(int level) const;
    double rho(int level) const;

    std::shared_ptr<const DenseVolume> confidence() const { return confidence_; }
    std::shared_ptr<const DenseVolume> uncertainty() const { return uncertainty_; }

    /// Directory with parameters, seeds, per-level models and the current layers.
    void save_checkpoint(const std::string& dir) const;
    static Session load_checkpoint(const std::string& dir, std::shared_ptr<const GridSource> volume);

private:
    struct Level {
        TrainingSet train;
        SvmModel model;
        double rho = 0.0;
    };

    std::optional<FeatureVector> features_at(int level, const Index3& fine) const;
    void check_level(int level) const;

    std::shared_ptr<const GridSource> volume_;
    SessionConfig config_;
    FeatureExtractor extractor_;
    std::vector<std::shared_ptr<const GridSource>> sources_; // index level - 1
    SeedSet seeds_;
    std::vector<Level> models_;
    int iteration_ = 0;
    std::shared_ptr<const DenseVolume> confidence_;
    std::shared_ptr<const DenseVolume> uncertainty_;
};

/// Single-resolution classification of the whole volume with the l_max model.
DenseVolume classify_session(const Session& session, const ClassifyOptions& options = {});

/// Algorithm over all levels; returns the finest confidence volume and the per-level
/// candidate voxel counts in `stats`.
DenseVolume multires_segment(const Session& session, const ClassifyOptions& options = {},
                             IterationReport* stats = nullptr);

} // namespace alseg
