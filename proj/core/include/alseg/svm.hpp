#pragma once

#include "alseg/features.hpp"
#include "alseg/scaler.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace alseg {

/// Unscaled samples with labels in {+1, -1}.
struct TrainingSet {
    std::vector<FeatureVector> samples;
    std::vector<int> labels;

    std::size_t size() const { return samples.size(); }
    std::size_t positives() const;
    std::size_t negatives() const;
    void add(FeatureVector v, int label);
    void append(const TrainingSet& other);
    /// Throws InvalidArgument on bad labels or ragged vectors.
    void validate() const;

    friend bool operator==(const TrainingSet&, const TrainingSet&) = default;
};

/// Largest feasible nu for these labels: 2 min(#pos, #neg) / M. Throws SingleClass.
double nu_max(std::span<const int> labels);

double squared_distance(std::span<const double> a, std::span<const double> b);
/// exp(-gamma |a - b|^2). Throws SizeMismatch on different lengths.
double gaussian_kernel(std::span<const double> a, std::span<const double> b, double gamma);

struct SolverOptions {
    double epsilon = 1e-3;
    std::uint64_t max_kernel_evaluations = 10'000'000;
    std::size_t cache_bytes = std::size_t{256} << 20;
    bool shrinking = true;
};

/// Dual solution in the normalization 0 <= alpha_i <= 1/M, sum alpha = nu, y.alpha = 0.
struct SolverResult {
    std::vector<double> alpha;
    double bias = 0.0;
    double margin = 0.0; // y f(x) of free support vectors
    double objective = 0.0; // 1/2 alpha' Q alpha
    std::uint64_t iterations = 0;
    std::uint64_t kernel_evaluations = 0;
};

/// Decomposition solver (pairwise working sets, shrinking, LRU row cache) for the
/// nu-SVM dual on pre-scaled rows. Throws Infeasible, SingleClass, NotConverged.
SolverResult solve_nu_svm(std::span<const std::span<const double>> rows, std::span<const int> labels,
                          double nu, double gamma, const SolverOptions& options = {});

struct SvmModel {
    FeatureConfig config;
    ScalerParams scaler;
    std::vector<std::vector<double>> support_vectors; // scaled
    std::vector<double> coefficients;                 // y_i alpha_i
    std::vector<std::size_t> support_indices;         // positions in the training set
    double bias = 0.0;
    double gamma = 1.0;
    double nu = 0.0;
    double platt_a = 0.0;
    double platt_b = 0.0;
    bool calibrated = false;

    std::size_t dimension() const { return scaler.size; }

    /// Sum over support vectors on an already scaled vector.
    double decision_scaled(std::span<const double> x) const;
    /// Applies the scaler first. Throws SizeMismatch on a layout mismatch.
    double decision(const FeatureVector& x) const;
    /// Calibrated P(y = +1). Throws NotTrained for an uncalibrated model.
    double confidence(const FeatureVector& x) const;
};

/// Builds the uncalibrated model from a solver run on `scaled` rows.
SvmModel make_model(const SolverResult& solution, std::span<const std::span<const double>> scaled,
                    std::span<const int> labels, double nu, double gamma, FeatureConfig config,
                    ScalerParams scaler);

double decision(const SvmModel& model, const FeatureVector& x);
double predict_confidence(const SvmModel& model, const FeatureVector& x);

/// 1 / (1 + exp(a f + b)), evaluated without overflow.
double platt_probability(double decision_value, double a, double b);

struct PlattFit {
    double a = 0.0;
    double b = 0.0;
    int iterations = 0;
};

/// Newton fit of the sigmoid to decision values with smoothed targets.
/// Throws SingleClass or NotConverged.
PlattFit fit_platt(std::span<const double> decisions, std::span<const int> labels);
/// Smoothed cross-entropy minimized by fit_platt.
double platt_objective(std::span<const double> decisions, std::span<const int> labels, double a,
                       double b);

/// Fits on the model's training decisions and stores (A, B) in the model.
void calibrate(SvmModel& model, const TrainingSet& train);

struct HyperGrid {
    std::vector<double> nus;
    std::vector<double> gammas;
    int folds = 7;
    std::uint64_t seed = 0x5eed;
};

/// 8 equidistant nu in (0, nu_max] and gamma = 2^-8..2^0 over the median pairwise
/// squared distance of `scaled`.
HyperGrid default_grid(std::span<const std::span<const double>> scaled, std::span<const int> labels,
                       int folds = 7, std::uint64_t seed = 0x5eed);

double median_pairwise_squared_distance(std::span<const std::span<const double>> rows);

/// Fold index per sample; each class is shuffled (Fisher-Yates on mt19937_64) and dealt
/// round robin.
std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed);

struct GridPointResult {
    double nu = 0.0;
    double gamma = 0.0;
    bool feasible = false;
    double accuracy = 0.0; // pooled over folds
    std::vector<double> fold_accuracies;
};

struct CvReport {
    int folds = 0;
    std::uint64_t seed = 0;
    std::vector<GridPointResult> points;
    std::size_t best = 0;
    bool cross_validated = true;
};

struct GridSearchResult {
    double nu = 0.0;
    double gamma = 0.0;
    CvReport report;
};

/// Stratified C-fold CV over the grid. Ties: higher accuracy, then smaller nu, then
/// larger gamma. With fewer samples per class than folds, C drops to the smaller
/// class count; with one sample in a class CV is skipped and the largest nu and gamma
/// are returned. Throws Infeasible when no grid point trains.
GridSearchResult grid_search(std::span<const std::span<const double>> scaled,
                             std::span<const int> labels, const HyperGrid& grid, int workers,
                             const SolverOptions& options = {});

struct TrainOptions {
    SolverOptions solver;
    int folds = 7;
    std::uint64_t cv_seed = 0x5eed;
    int workers = 1;
};

struct TrainReport {
    CvReport cv;
    SolverResult solution;
};

/// Scaler fit, grid search, final solve and Platt calibration on an unscaled set.
SvmModel train_svm(const TrainingSet& train, const FeatureConfig& config,
                   const TrainOptions& options = {}, TrainReport* report = nullptr);

/// Binary little-endian container; written atomically.
void serialize_model(const SvmModel& model, const TrainingSet& train, const std::string& path);
std::vector<std::uint8_t> encode_model(const SvmModel& model, const TrainingSet& train);

struct StoredModel {
    SvmModel model;
    TrainingSet train;
};

/// Throws Io, Corrupt or VersionMismatch.
StoredModel deserialize_model(const std::string& path);
StoredModel decode_model(std::span<const std::uint8_t> bytes);

} // namespace alseg
