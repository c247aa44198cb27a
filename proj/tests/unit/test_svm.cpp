#include "alseg/error.hpp"
#include "alseg/svm.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

using namespace alseg;
using testing_support::as_rows;

namespace {

struct Data {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
};

// Two clusters around (+c, +c) and (-c, -c), jittered uniformly by `spread`.
Data clusters(std::size_t per_class, double c, double spread, std::mt19937_64& rng, std::size_t dim = 2) {
    std::uniform_real_distribution<double> u(-spread, spread);
    Data d;
    for (std::size_t i = 0; i < per_class; ++i) {
        for (int cls : {1, -1}) {
            std::vector<double> p(dim);
            for (auto& v : p) v = cls * c + u(rng);
            d.x.push_back(p);
            d.y.push_back(cls);
        }
    }
    return d;
}

FeatureLayout scalar_layout(std::size_t n) {
    FeatureLayout l;
    for (std::size_t i = 0; i < n; ++i) l.groups.push_back({i, 1});
    l.size = n;
    return l;
}

SvmModel solve_model(const Data& d, double nu, double gamma, SolverResult* out = nullptr,
                     const SolverOptions& opts = {}) {
    const auto rows = as_rows(d.x);
    auto sol = solve_nu_svm(rows, d.y, nu, gamma, opts);
    auto m = make_model(sol, rows, d.y, nu, gamma, FeatureConfig{}, ScalerParams::identity(scalar_layout(d.x[0].size())));
    if (out) *out = sol;
    return m;
}

FeatureVector fv(const std::vector<double>& v) { return FeatureVector{v}; }

// Position-only config gives a 3-entry scalar layout, handy for synthetic data.
FeatureConfig position_config() {
    FeatureConfig c;
    c.enabled = {FeatureKind::Position};
    return c;
}

TrainingSet to_train(const Data& d) {
    TrainingSet t;
    for (std::size_t i = 0; i < d.x.size(); ++i) t.add(fv(d.x[i]), d.y[i]);
    return t;
}

} // namespace

TEST(NuMax, Examples) {
    std::vector<int> a(10, -1);
    a[0] = a[1] = a[2] = 1;
    EXPECT_DOUBLE_EQ(nu_max(a), 0.6);
    for (int M : {2, 10, 64}) {
        std::vector<int> b;
        for (int i = 0; i < M; ++i) b.push_back(i % 2 ? 1 : -1);
        EXPECT_DOUBLE_EQ(nu_max(b), 1.0);
    }
    std::vector<int> c(100, -1);
    c[5] = 1;
    EXPECT_DOUBLE_EQ(nu_max(c), 0.02);
}

TEST(NuMax, SingleClassThrows) {
    std::vector<int> a(5, 1);
    try {
        nu_max(a);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingleClass);
    }
}

TEST(GaussianKernel, Examples) {
    std::vector<double> x{0.3, -1.0, 2.0};
    EXPECT_DOUBLE_EQ(gaussian_kernel(x, x, 0.7), 1.0);
    std::vector<double> a{0.0, 0.0}, b{1.0, 0.0};
    EXPECT_NEAR(gaussian_kernel(a, b, 1.0), 0.367879441171442, 1e-12);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        auto p = testing_support::random_points(2, 4, rng);
        const double k1 = gaussian_kernel(p[0], p[1], 0.3);
        EXPECT_EQ(k1, gaussian_kernel(p[1], p[0], 0.3));
        EXPECT_GT(k1, 0.0);
        EXPECT_LE(k1, 1.0);
    }
    std::vector<double> c{1.0};
    EXPECT_THROW(gaussian_kernel(a, c, 1.0), Error);
}

TEST(Solver, TwoPointsAreSymmetric) {
    Data d{{{0.0, 1.0}, {2.0, -1.0}}, {1, -1}};
    for (double gamma : {0.01, 0.5, 3.0}) {
        SolverResult sol;
        const auto m = solve_model(d, 1.0, gamma, &sol);
        EXPECT_EQ(m.support_vectors.size(), 2u);
        EXPECT_NEAR(m.decision_scaled(d.x[0]), -m.decision_scaled(d.x[1]), 1e-12);
        EXPECT_GT(m.decision_scaled(d.x[0]), 0.0);
    }
}

TEST(Solver, SeparableTwentyPoints) {
    std::mt19937_64 rng(7);
    const auto d = clusters(10, 1.0, 0.5, rng);
    SolverResult sol;
    const auto m = solve_model(d, 0.1, 0.5, &sol);
    std::size_t correct = 0, margin_errors = 0;
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        const double f = m.decision_scaled(d.x[i]);
        correct += static_cast<std::size_t>((f > 0 ? 1 : -1) == d.y[i]);
        margin_errors += static_cast<std::size_t>(d.y[i] * f < sol.margin - 1e-3 / d.x.size());
    }
    EXPECT_EQ(correct, d.x.size());
    EXPECT_LE(static_cast<double>(margin_errors) / d.x.size(), 0.1 + 1e-12);
}

TEST(Solver, MatchesDenseQpOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Data d;
        d.x = testing_support::random_points(30, 3, rng);
        for (std::size_t i = 0; i < 30; ++i) d.y.push_back(d.x[i][0] + 0.3 * d.x[i][1] > 0.1 ? 1 : -1);
        if (std::count(d.y.begin(), d.y.end(), 1) < 3 || std::count(d.y.begin(), d.y.end(), -1) < 3) continue;
        const double nu = 0.5 * nu_max(d.y);
        const double gamma = 0.8;
        const auto rows = as_rows(d.x);
        const auto sol = solve_nu_svm(rows, d.y, nu, gamma);
        const auto ref = testing_support::qp_oracle(d.x, d.y, nu, gamma, 40000);
        EXPECT_NEAR(sol.objective, ref.objective, 1e-4 * std::abs(ref.objective)) << "trial " << trial;
    }
}

TEST(Solver, DualFeasibilityProperty) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t M = 10 + trial;
        Data d;
        d.x = testing_support::random_points(M, 4, rng);
        std::bernoulli_distribution coin(0.4);
        for (std::size_t i = 0; i < M; ++i) d.y.push_back(i < 2 ? (i == 0 ? 1 : -1) : (coin(rng) ? 1 : -1));
        std::uniform_real_distribution<double> frac(0.05, 1.0);
        const double nu = frac(rng) * nu_max(d.y);
        const double eps = 1e-3;
        const auto sol = solve_nu_svm(as_rows(d.x), d.y, nu, 0.5);
        double ya = 0.0, sa = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            EXPECT_GE(sol.alpha[i], 0.0);
            EXPECT_LE(sol.alpha[i], 1.0 / M + eps);
            ya += d.y[i] * sol.alpha[i];
            sa += sol.alpha[i];
        }
        EXPECT_LE(std::abs(ya), eps);
        EXPECT_GE(sa, nu - eps);
    }
}

TEST(Solver, NuPropertyOnSeparableInstances) {
    std::mt19937_64 rng(2024);
    int ok = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto d = clusters(15, 1.0, 0.9, rng);
        const double M = static_cast<double>(d.x.size());
        const double nu = 0.05 + 0.9 * (trial % 10) / 10.0;
        SolverResult sol;
        const auto m = solve_model(d, nu, 1.0, &sol);
        std::size_t merr = 0;
        for (std::size_t i = 0; i < d.x.size(); ++i) {
            merr += static_cast<std::size_t>(d.y[i] * m.decision_scaled(d.x[i]) < sol.margin - 1e-3 / M);
        }
        const double frac_err = merr / M;
        const double frac_sv = m.support_vectors.size() / M;
        ok += static_cast<int>(frac_err <= nu + 2.0 / M && frac_sv >= nu - 2.0 / M);
    }
    EXPECT_GE(ok, 45);
}

TEST(Solver, InfeasibleNuThrows) {
    Data d{{{0.0}, {1.0}, {2.0}}, {1, -1, -1}};
    try {
        solve_nu_svm(as_rows(d.x), d.y, 0.8, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Infeasible);
    }
}

TEST(Solver, KernelEvaluationCapRaisesNotConverged) {
    std::mt19937_64 rng(5);
    const auto d = clusters(20, 0.2, 1.0, rng);
    SolverOptions opts;
    opts.max_kernel_evaluations = 50;
    try {
        solve_nu_svm(as_rows(d.x), d.y, 0.5, 1.0, opts);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotConverged);
    }
}

TEST(Solver, CacheBudgetAndShrinkingDoNotChangeTheSolution) {
    std::mt19937_64 rng(9);
    const auto d = clusters(60, 0.3, 1.0, rng, 3);
    const auto rows = as_rows(d.x);
    const auto big = solve_nu_svm(rows, d.y, 0.4, 1.0);
    SolverOptions tiny;
    tiny.cache_bytes = 1;
    const auto small = solve_nu_svm(rows, d.y, 0.4, 1.0, tiny);
    EXPECT_EQ(big.alpha, small.alpha);
    EXPECT_GT(small.kernel_evaluations, big.kernel_evaluations);
    SolverOptions noshrink;
    noshrink.shrinking = false;
    const auto ns = solve_nu_svm(rows, d.y, 0.4, 1.0, noshrink);
    EXPECT_NEAR(ns.objective, big.objective, 1e-3 * big.objective);
}

TEST(Decision, SupportVectorOfPositiveClassIsPositive) {
    std::mt19937_64 rng(13);
    const auto d = clusters(10, 1.0, 0.4, rng);
    const auto m = solve_model(d, 0.2, 0.5);
    bool seen = false;
    for (std::size_t k = 0; k < m.support_vectors.size(); ++k) {
        if (m.coefficients[k] > 0) {
            EXPECT_GT(m.decision_scaled(m.support_vectors[k]), 0.0);
            seen = true;
        }
    }
    EXPECT_TRUE(seen);
}

TEST(Decision, IsContinuous) {
    std::mt19937_64 rng(17);
    const auto d = clusters(15, 1.0, 0.8, rng);
    const auto m = solve_model(d, 0.3, 1.0);
    for (const auto& p : testing_support::random_points(100, 2, rng, -2, 2)) {
        auto q = p;
        q[0] += 1e-9;
        q[1] -= 1e-9;
        EXPECT_LT(std::abs(m.decision(fv(p)) - m.decision(fv(q))), 1e-6);
    }
}

TEST(Decision, HeldOutSeparableAccuracy) {
    std::mt19937_64 rng(19);
    const auto train = clusters(20, 1.0, 0.7, rng);
    const auto test = clusters(200, 1.0, 0.7, rng);
    const auto m = solve_model(train, 0.2, 0.5);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < test.x.size(); ++i) {
        ok += static_cast<std::size_t>((m.decision(fv(test.x[i])) > 0 ? 1 : -1) == test.y[i]);
    }
    EXPECT_GE(static_cast<double>(ok) / test.x.size(), 0.95);
}

TEST(Decision, LayoutMismatchThrows) {
    Data d{{{0.0, 1.0}, {2.0, -1.0}}, {1, -1}};
    const auto m = solve_model(d, 1.0, 1.0);
    try {
        m.decision(fv({1.0, 2.0, 3.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SizeMismatch);
    }
}

TEST(Platt, SeparatedDecisionsGiveNegativeSlope) {
    std::vector<double> dec{-1, -1, 1, 1};
    std::vector<int> y{-1, -1, 1, 1};
    const auto f = fit_platt(dec, y);
    EXPECT_LT(f.a, 0.0);
}

TEST(Platt, SymmetricDecisionsAreHalfAtZero) {
    std::vector<double> dec{-0.7, -0.7, -0.7, 0.7, 0.7, 0.7, -0.2, 0.2};
    std::vector<int> y{-1, -1, 1, 1, 1, -1, -1, 1};
    const auto f = fit_platt(dec, y);
    EXPECT_NEAR(platt_probability(0.0, f.a, f.b), 0.5, 1e-6);
}

TEST(Platt, FitIsALocalMinimum) {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> dec;
        std::vector<int> y;
        for (int i = 0; i < 30; ++i) {
            const int cls = i % 2 ? 1 : -1;
            dec.push_back(0.8 * cls + n(rng));
            y.push_back(cls);
        }
        const auto f = fit_platt(dec, y);
        const double base = platt_objective(dec, y, f.a, f.b);
        for (double da : {-1e-3, 1e-3}) {
            EXPECT_GE(platt_objective(dec, y, f.a + da, f.b), base);
            EXPECT_GE(platt_objective(dec, y, f.a, f.b + da), base);
        }
    }
}

TEST(Platt, SingleClassThrows) {
    std::vector<double> dec{1, 2};
    std::vector<int> y{1, 1};
    EXPECT_THROW(fit_platt(dec, y), Error);
}

TEST(Confidence, RangeMonotonicityAndFormula) {
    std::mt19937_64 rng(29);
    const auto d = clusters(15, 1.0, 0.9, rng);
    auto m = solve_model(d, 0.3, 1.0);
    calibrate(m, to_train(d));
    ASSERT_LT(m.platt_a, 0.0);
    std::vector<std::pair<double, double>> pairs;
    for (const auto& p : testing_support::random_points(200, 2, rng, -3, 3)) {
        const double s = predict_confidence(m, fv(p));
        const double f = decision(m, fv(p));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_NEAR(s, 1.0 / (1.0 + std::exp(m.platt_a * f + m.platt_b)), 1e-12);
        pairs.push_back({f, s});
    }
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i) EXPECT_GE(pairs[i].second, pairs[i - 1].second);
}

TEST(Confidence, UncalibratedModelThrows) {
    Data d{{{0.0, 1.0}, {2.0, -1.0}}, {1, -1}};
    const auto m = solve_model(d, 1.0, 1.0);
    try {
        predict_confidence(m, fv({0.0, 0.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotTrained);
    }
}

TEST(Confidence, PositivesScoreHigherOnAverage) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const auto d = clusters(12, 0.5, 1.0, rng, 3);
        TrainingSet t = to_train(d);
        for (auto& s : t.samples) s.values.resize(3);
        const auto m = train_svm(t, position_config());
        double pos = 0, neg = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            (t.labels[i] > 0 ? pos : neg) += m.confidence(t.samples[i]);
        }
        EXPECT_GE(pos / t.positives(), neg / t.negatives());
    }
}

TEST(GridSearch, SinglePoint) {
    std::mt19937_64 rng(37);
    const auto d = clusters(10, 1.0, 0.5, rng);
    HyperGrid g;
    g.nus = {0.3};
    g.gammas = {0.5};
    const auto r = grid_search(as_rows(d.x), d.y, g, 1);
    EXPECT_EQ(r.nu, 0.3);
    EXPECT_EQ(r.gamma, 0.5);
    ASSERT_EQ(r.report.points.size(), 1u);
    EXPECT_EQ(r.report.points[0].fold_accuracies.size(), 7u);
}

TEST(GridSearch, TieBreakIsDeterministicAcrossWorkers) {
    std::mt19937_64 rng(41);
    const auto d = clusters(12, 1.0, 0.3, rng);
    HyperGrid g;
    g.nus = {0.5, 0.2, 0.5, 0.2};
    g.gammas = {1.0, 0.25, 1.0};
    const auto r1 = grid_search(as_rows(d.x), d.y, g, 1);
    const auto r4 = grid_search(as_rows(d.x), d.y, g, 4);
    EXPECT_EQ(r1.nu, r4.nu);
    EXPECT_EQ(r1.gamma, r4.gamma);
    EXPECT_EQ(r1.report.best, r4.report.best);
    // Separable data: everything reaches 100%, so the smallest nu and largest gamma win.
    EXPECT_EQ(r1.nu, 0.2);
    EXPECT_EQ(r1.gamma, 1.0);
}

TEST(GridSearch, BestBeatsExtremeGammas) {
    std::mt19937_64 rng(43);
    const auto d = clusters(20, 0.6, 1.0, rng);
    const auto rows = as_rows(d.x);
    const auto g = default_grid(rows, d.y);
    EXPECT_EQ(g.nus.size(), 8u);
    EXPECT_EQ(g.gammas.size(), 9u);
    const auto r = grid_search(rows, d.y, g, 2);
    const auto& best = r.report.points[r.report.best];
    for (const auto& p : r.report.points) {
        if (p.gamma == g.gammas.front() || p.gamma == g.gammas.back()) {
            EXPECT_GE(best.accuracy, p.accuracy);
        }
    }
}

TEST(GridSearch, FoldsAreStratified) {
    std::vector<int> y;
    for (int i = 0; i < 23; ++i) y.push_back(i < 9 ? 1 : -1);
    const auto f = stratified_folds(y, 7, 99);
    for (int k = 0; k < 7; ++k) {
        int pos = 0, neg = 0;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (f[i] == k) (y[i] > 0 ? pos : neg)++;
        EXPECT_GE(pos, 1);
        EXPECT_LE(pos, 2);
        EXPECT_GE(neg, 2);
        EXPECT_LE(neg, 3);
    }
    EXPECT_EQ(f, stratified_folds(y, 7, 99));
}

TEST(GridSearch, ReducesFoldsToSmallestClass) {
    Data d{{{0.0}, {0.1}, {1.0}, {1.1}, {1.2}}, {1, 1, -1, -1, -1}};
    HyperGrid g;
    g.nus = {0.4};
    g.gammas = {1.0};
    const auto r = grid_search(as_rows(d.x), d.y, g, 1);
    EXPECT_EQ(r.report.folds, 2);
}

TEST(ScalingPipeline, PrescaledEqualsFittedScaler) {
    std::mt19937_64 rng(47);
    Data d = clusters(15, 2.0, 3.0, rng, 3);
    for (auto& p : d.x) {
        p[0] = p[0] * 100.0 + 5.0;
        p[2] = p[2] * 0.01 - 3.0;
    }
    const auto cfg = position_config();
    const auto layout = make_layout(cfg);
    TrainingSet raw = to_train(d);
    const auto scaler = fit_scaler(raw.samples, layout);
    TrainingSet pre;
    for (std::size_t i = 0; i < raw.size(); ++i) pre.add(scaler.apply(raw.samples[i]), raw.labels[i]);

    std::vector<std::vector<double>> scaled_raw, scaled_pre;
    for (const auto& s : raw.samples) scaled_raw.push_back(scaler.apply(s).values);
    const auto identity = ScalerParams::identity(layout);
    for (const auto& s : pre.samples) scaled_pre.push_back(identity.apply(s).values);
    const auto a = solve_nu_svm(as_rows(scaled_raw), raw.labels, 0.3, 0.5);
    const auto b = solve_nu_svm(as_rows(scaled_pre), pre.labels, 0.3, 0.5);
    std::set<std::size_t> sa, sb;
    for (std::size_t i = 0; i < a.alpha.size(); ++i) {
        if (a.alpha[i] > 0) sa.insert(i);
        if (b.alpha[i] > 0) sb.insert(i);
    }
    EXPECT_EQ(sa, sb);
}

TEST(Serialization, RoundTripIsBitIdentical) {
    testing_support::TempDir tmp;
    std::mt19937_64 rng(53);
    TrainingSet t = to_train(clusters(10, 1.0, 1.0, rng, 3));
    const auto m = train_svm(t, position_config());
    serialize_model(m, t, tmp.file("m.bin"));
    const auto back = deserialize_model(tmp.file("m.bin"));
    EXPECT_EQ(back.train, t);
    EXPECT_EQ(back.model.config, m.config);
    EXPECT_EQ(back.model.scaler, m.scaler);
    for (const auto& p : testing_support::random_points(100, 3, rng, -3, 3)) {
        const double a = m.decision(fv(p)), b = back.model.decision(fv(p));
        EXPECT_EQ(std::memcmp(&a, &b, sizeof(double)), 0);
        EXPECT_EQ(m.confidence(fv(p)), back.model.confidence(fv(p)));
    }
}

TEST(Serialization, RetrainOnUnionMatchesSingleTraining) {
    testing_support::TempDir tmp;
    std::mt19937_64 rng(59);
    TrainingSet first = to_train(clusters(8, 0.7, 1.0, rng, 3));
    TrainingSet extra = to_train(clusters(5, 0.7, 1.0, rng, 3));
    const auto m = train_svm(first, position_config());
    serialize_model(m, first, tmp.file("m.bin"));
    auto stored = deserialize_model(tmp.file("m.bin"));
    stored.train.append(extra);
    TrainReport ra, rb;
    const auto retrained = train_svm(stored.train, stored.model.config, {}, &ra);
    TrainingSet all = first;
    all.append(extra);
    const auto once = train_svm(all, position_config(), {}, &rb);
    EXPECT_EQ(retrained.nu, once.nu);
    EXPECT_EQ(retrained.gamma, once.gamma);
}

TEST(Serialization, TruncatedAndDamagedFilesAreRejected) {
    testing_support::TempDir tmp;
    std::mt19937_64 rng(61);
    TrainingSet t = to_train(clusters(6, 1.0, 1.0, rng, 3));
    const auto m = train_svm(t, position_config());
    const auto bytes = encode_model(m, t);
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
        try {
            decode_model(std::span(bytes).first(cut));
            FAIL() << cut;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::Corrupt);
        }
    }
    auto flipped = bytes;
    flipped[bytes.size() / 3] ^= 0x40;
    try {
        decode_model(flipped);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Corrupt);
    }
    auto future = bytes;
    future[8] = 9;
    try {
        decode_model(future);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
    }
    // Truncated file on disk.
    {
        std::ofstream f(tmp.file("bad.bin"), std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() - 10));
    }
    EXPECT_THROW(deserialize_model(tmp.file("bad.bin")), Error);
}

TEST(TrainSvm, SingleClassIsRejected) {
    TrainingSet t;
    t.add(fv({1, 2, 3}), 1);
    t.add(fv({1, 2, 4}), 1);
    try {
        train_svm(t, position_config());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SingleClass);
    }
}

TEST(TrainSvm, OneSamplePerClassSkipsCrossValidation) {
    TrainingSet t;
    t.add(fv({1, 2, 3}), 1);
    t.add(fv({4, 0, 3}), -1);
    TrainReport rep;
    const auto m = train_svm(t, position_config(), {}, &rep);
    EXPECT_FALSE(rep.cv.cross_validated);
    EXPECT_GT(m.confidence(t.samples[0]), m.confidence(t.samples[1]));
}
