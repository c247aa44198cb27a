#include "alseg/svm.hpp"

#include "alseg/error.hpp"
#include "alseg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace alseg {

std::size_t TrainingSet::positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t TrainingSet::negatives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), -1));
}

void TrainingSet::add(FeatureVector v, int label) {
    samples.push_back(std::move(v));
    labels.push_back(label);
}

void TrainingSet::append(const TrainingSet& other) {
    samples.insert(samples.end(), other.samples.begin(), other.samples.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

void TrainingSet::validate() const {
    if (samples.size() != labels.size()) {
        fail(ErrorCode::InvalidArgument, "samples and labels differ in length");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (labels[i] != 1 && labels[i] != -1) {
            fail(ErrorCode::InvalidArgument, "labels must be +1 or -1");
        }
        if (samples[i].values.size() != samples.front().values.size()) {
            fail(ErrorCode::SizeMismatch, "training vectors differ in length");
        }
    }
}

double nu_max(std::span<const int> labels) {
    std::size_t pos = 0, neg = 0;
    for (int y : labels) {
        (y > 0 ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
        fail(ErrorCode::SingleClass, "both classes must be present");
    }
    return 2.0 * static_cast<double>(std::min(pos, neg)) / static_cast<double>(labels.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double gaussian_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
    if (a.size() != b.size()) {
        fail(ErrorCode::SizeMismatch, "kernel arguments differ in length");
    }
    return std::exp(-gamma * squared_distance(a, b));
}

// --- model ------------------------------------------------------------------

double SvmModel::decision_scaled(std::span<const double> x) const {
    double s = bias;
    for (std::size_t i = 0; i < support_vectors.size(); ++i) {
        s += coefficients[i] * std::exp(-gamma * squared_distance(x, support_vectors[i]));
    }
    return s;
}

double SvmModel::decision(const FeatureVector& x) const {
    if (x.values.size() != scaler.size) {
        fail(ErrorCode::SizeMismatch,
             fmt::format("feature vector has length {}, model expects {}", x.values.size(), scaler.size));
    }
    std::vector<double> scaled(x.values.size());
    scaler.apply_into(x.values, scaled);
    return decision_scaled(scaled);
}

double SvmModel::confidence(const FeatureVector& x) const {
    if (!calibrated) {
        fail(ErrorCode::NotTrained, "model is not calibrated");
    }
    return platt_probability(decision(x), platt_a, platt_b);
}

double decision(const SvmModel& model, const FeatureVector& x) { return model.decision(x); }

double predict_confidence(const SvmModel& model, const FeatureVector& x) {
    return model.confidence(x);
}

SvmModel make_model(const SolverResult& solution, std::span<const std::span<const double>> scaled,
                    std::span<const int> labels, double nu, double gamma, FeatureConfig config,
                    ScalerParams scaler) {
    SvmModel m;
    m.config = std::move(config);
    m.scaler = std::move(scaler);
    m.bias = solution.bias;
    m.gamma = gamma;
    m.nu = nu;
    for (std::size_t i = 0; i < solution.alpha.size(); ++i) {
        if (solution.alpha[i] > 0.0) {
            m.support_indices.push_back(i);
            m.support_vectors.emplace_back(scaled[i].begin(), scaled[i].end());
            m.coefficients.push_back(labels[i] * solution.alpha[i]);
        }
    }
    return m;
}

// --- Platt ------------------------------------------------------------------

double platt_probability(double f, double a, double b) {
    const double t = a * f + b;
    if (t >= 0.0) {
        const double e = std::exp(-t);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(t));
}

namespace {

struct PlattTargets {
    std::vector<double> t;
    double prior_pos = 0.0;
    double prior_neg = 0.0;
};

PlattTargets platt_targets(std::span<const double> decisions, std::span<const int> labels) {
    if (decisions.size() != labels.size()) {
        fail(ErrorCode::SizeMismatch, "decisions and labels differ in length");
    }
    PlattTargets out;
    for (int y : labels) {
        (y > 0 ? out.prior_pos : out.prior_neg) += 1.0;
    }
    if (out.prior_pos == 0.0 || out.prior_neg == 0.0) {
        fail(ErrorCode::SingleClass, "calibration needs both classes");
    }
    const double hi = (out.prior_pos + 1.0) / (out.prior_pos + 2.0);
    const double lo = 1.0 / (out.prior_neg + 2.0);
    out.t.reserve(labels.size());
    for (int y : labels) {
        out.t.push_back(y > 0 ? hi : lo);
    }
    return out;
}

double platt_loss(std::span<const double> dec, std::span<const double> t, double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < dec.size(); ++i) {
        const double z = dec[i] * a + b;
        f += z >= 0.0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
}

} // namespace

double platt_objective(std::span<const double> decisions, std::span<const int> labels, double a,
                       double b) {
    const auto targets = platt_targets(decisions, labels);
    return platt_loss(decisions, targets.t, a, b);
}

PlattFit fit_platt(std::span<const double> dec, std::span<const int> labels) {
    const auto targets = platt_targets(dec, labels);
    const auto& t = targets.t;
    constexpr int kMaxIter = 100;
    constexpr double kMinStep = 1e-10;
    constexpr double kSigma = 1e-12;
    constexpr double kTol = 1e-8;

    PlattFit fit;
    fit.a = 0.0;
    fit.b = std::log((targets.prior_neg + 1.0) / (targets.prior_pos + 1.0));
    double fval = platt_loss(dec, t, fit.a, fit.b);

    for (int iter = 0; iter < kMaxIter; ++iter) {
        double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
        for (std::size_t i = 0; i < dec.size(); ++i) {
            const double z = dec[i] * fit.a + fit.b;
            double p, q;
            if (z >= 0.0) {
                const double e = std::exp(-z);
                p = e / (1.0 + e);
                q = 1.0 / (1.0 + e);
            } else {
                const double e = std::exp(z);
                p = 1.0 / (1.0 + e);
                q = e / (1.0 + e);
            }
            const double d2 = p * q;
            h11 += dec[i] * dec[i] * d2;
            h22 += d2;
            h21 += dec[i] * d2;
            const double d1 = t[i] - p;
            g1 += dec[i] * d1;
            g2 += d1;
        }
        fit.iterations = iter;
        if (std::hypot(g1, g2) < kTol) {
            return fit;
        }
        const double det = h11 * h22 - h21 * h21;
        const double da = -(h22 * g1 - h21 * g2) / det;
        const double db = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * da + g2 * db;

        // Once the predicted decrease drops below what the loss can resolve, a line
        // search only sees rounding noise; near the optimum the full step is safe.
        if (-gd < 1e-12 * std::max(1.0, std::abs(fval))) {
            fit.a += da;
            fit.b += db;
            fval = platt_loss(dec, t, fit.a, fit.b);
            continue;
        }
        double step = 1.0;
        while (step >= kMinStep) {
            const double na = fit.a + step * da;
            const double nb = fit.b + step * db;
            const double nf = platt_loss(dec, t, na, nb);
            if (nf < fval + 1e-4 * step * gd) {
                fit.a = na;
                fit.b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if (step < kMinStep) {
            break;
        }
    }
    fail(ErrorCode::NotConverged, "Platt fit did not reach the gradient tolerance");
}

void calibrate(SvmModel& model, const TrainingSet& train) {
    std::vector<double> dec;
    dec.reserve(train.size());
    for (const auto& s : train.samples) {
        dec.push_back(model.decision(s));
    }
    const auto fit = fit_platt(dec, train.labels);
    model.platt_a = fit.a;
    model.platt_b = fit.b;
    model.calibrated = true;
}

// --- grid search ------------------------------------------------------------

double median_pairwise_squared_distance(std::span<const std::span<const double>> rows) {
    std::vector<double> d;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            d.push_back(squared_distance(rows[i], rows[j]));
        }
    }
    if (d.empty()) {
        return 0.0;
    }
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    if (d.size() % 2 == 1) {
        return d[mid];
    }
    const double upper = d[mid];
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

HyperGrid default_grid(std::span<const std::span<const double>> scaled, std::span<const int> labels,
                       int folds, std::uint64_t seed) {
    HyperGrid g;
    g.folds = folds;
    g.seed = seed;
    const double nmax = nu_max(labels);
    for (int i = 1; i <= 8; ++i) {
        g.nus.push_back(nmax * i / 8.0);
    }
    double dbar = median_pairwise_squared_distance(scaled);
    if (!(dbar > 0.0)) {
        dbar = 1.0;
    }
    for (int e = -8; e <= 0; ++e) {
        g.gammas.push_back(std::ldexp(1.0, e) / dbar);
    }
    return g;
}

std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
    if (folds < 1) {
        fail(ErrorCode::InvalidArgument, "fold count must be positive");
    }
    std::vector<int> out(labels.size(), 0);
    std::mt19937_64 rng(seed);
    for (int cls : {1, -1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) {
                idx.push_back(i);
            }
        }
        for (std::size_t i = idx.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(idx[i - 1], idx[j]);
        }
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out[idx[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
        }
    }
    return out;
}

namespace {

GridPointResult evaluate_point(std::span<const std::span<const double>> rows,
                               std::span<const int> labels, std::span<const int> fold_of, int folds,
                               double nu, double gamma, const SolverOptions& options) {
    GridPointResult r;
    r.nu = nu;
    r.gamma = gamma;
    std::size_t correct = 0;
    try {
        for (int f = 0; f < folds; ++f) {
            std::vector<std::span<const double>> tr_rows;
            std::vector<int> tr_labels;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (fold_of[i] != f) {
                    tr_rows.push_back(rows[i]);
                    tr_labels.push_back(labels[i]);
                }
            }
            const double fold_nu = std::min(nu, nu_max(tr_labels));
            const auto sol = solve_nu_svm(tr_rows, tr_labels, fold_nu, gamma, options);
            SvmModel m;
            m.gamma = gamma;
            m.bias = sol.bias;
            for (std::size_t i = 0; i < sol.alpha.size(); ++i) {
                if (sol.alpha[i] > 0.0) {
                    m.support_vectors.emplace_back(tr_rows[i].begin(), tr_rows[i].end());
                    m.coefficients.push_back(tr_labels[i] * sol.alpha[i]);
                }
            }
            std::size_t fold_total = 0, fold_correct = 0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (fold_of[i] != f) {
                    continue;
                }
                const int pred = m.decision_scaled(rows[i]) > 0.0 ? 1 : -1;
                ++fold_total;
                fold_correct += static_cast<std::size_t>(pred == labels[i]);
            }
            correct += fold_correct;
            r.fold_accuracies.push_back(fold_total ? static_cast<double>(fold_correct) / fold_total : 0.0);
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::NotConverged && e.code() != ErrorCode::Infeasible &&
            e.code() != ErrorCode::SingleClass) {
            throw;
        }
        r.feasible = false;
        r.accuracy = 0.0;
        return r;
    }
    r.feasible = true;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
    return r;
}

// True when a is preferred over b.
bool better(const GridPointResult& a, const GridPointResult& b) {
    if (a.feasible != b.feasible) return a.feasible;
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    if (a.nu != b.nu) return a.nu < b.nu;
    return a.gamma > b.gamma;
}

} // namespace

GridSearchResult grid_search(std::span<const std::span<const double>> scaled,
                             std::span<const int> labels, const HyperGrid& grid, int workers,
                             const SolverOptions& options) {
    if (scaled.size() != labels.size()) {
        fail(ErrorCode::SizeMismatch, "rows and labels differ in length");
    }
    if (grid.nus.empty() || grid.gammas.empty()) {
        fail(ErrorCode::InvalidArgument, "grid is empty");
    }
    const double nmax = nu_max(labels);
    for (double nu : grid.nus) {
        if (!(nu > 0.0) || nu > nmax * (1.0 + 1e-12)) {
            fail(ErrorCode::InvalidArgument, fmt::format("grid nu {} outside (0, {}]", nu, nmax));
        }
    }
    for (double g : grid.gammas) {
        if (!(g > 0.0)) {
            fail(ErrorCode::InvalidArgument, "grid gammas must be positive");
        }
    }
    if (grid.folds < 2) {
        fail(ErrorCode::InvalidArgument, "at least two folds are required");
    }

    std::size_t pos = 0, neg = 0;
    for (int y : labels) (y > 0 ? pos : neg) += 1;
    const int folds = static_cast<int>(std::min<std::size_t>(grid.folds, std::min(pos, neg)));

    GridSearchResult out;
    out.report.seed = grid.seed;
    out.report.folds = folds;

    std::vector<GridPointResult> points;
    for (double nu : grid.nus) {
        for (double g : grid.gammas) {
            GridPointResult p;
            p.nu = nu;
            p.gamma = g;
            points.push_back(p);
        }
    }

    if (folds < 2) {
        // One sample in a class leaves nothing to validate on.
        out.report.cross_validated = false;
        std::size_t best = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            points[i].feasible = true;
            const auto& b = points[best];
            if (points[i].nu > b.nu || (points[i].nu == b.nu && points[i].gamma > b.gamma)) {
                best = i;
            }
        }
        out.report.points = std::move(points);
        out.report.best = best;
        out.nu = out.report.points[best].nu;
        out.gamma = out.report.points[best].gamma;
        return out;
    }

    const auto fold_of = stratified_folds(labels, folds, grid.seed);
    parallel_for(points.size(), workers, [&](std::size_t k) {
        points[k] = evaluate_point(scaled, labels, fold_of, folds, points[k].nu, points[k].gamma, options);
    });

    std::size_t best = 0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (better(points[i], points[best])) {
            best = i;
        }
    }
    if (!points[best].feasible) {
        fail(ErrorCode::Infeasible, "no grid point could be trained");
    }
    out.report.points = std::move(points);
    out.report.best = best;
    out.nu = out.report.points[best].nu;
    out.gamma = out.report.points[best].gamma;
    return out;
}

SvmModel train_svm(const TrainingSet& train, const FeatureConfig& config, const TrainOptions& options,
                   TrainReport* report) {
    train.validate();
    if (train.positives() == 0 || train.negatives() == 0) {
        fail(ErrorCode::SingleClass, "training needs positive and negative samples");
    }
    const auto layout = make_layout(config);
    if (train.samples.front().values.size() != layout.size) {
        fail(ErrorCode::SizeMismatch, "training vectors do not match the feature layout");
    }
    ScalerParams scaler = fit_scaler(train.samples, layout);
    std::vector<std::vector<double>> scaled(train.size());
    std::vector<std::span<const double>> rows(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        scaled[i].resize(layout.size);
        scaler.apply_into(train.samples[i].values, scaled[i]);
        rows[i] = scaled[i];
    }
    const auto grid = default_grid(rows, train.labels, options.folds, options.cv_seed);
    auto search = grid_search(rows, train.labels, grid, options.workers, options.solver);
    const auto sol = solve_nu_svm(rows, train.labels, search.nu, search.gamma, options.solver);
    SvmModel model = make_model(sol, rows, train.labels, search.nu, search.gamma, config, std::move(scaler));
    calibrate(model, train);
    if (report) {
        report->cv = std::move(search.report);
        report->solution = sol;
    }
    return model;
}

} // namespace alseg
