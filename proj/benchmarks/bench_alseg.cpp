#include "alseg/features.hpp"
#include "alseg/learner.hpp"
#include "alseg/phantom.hpp"
#include "alseg/postproc.hpp"
#include "alseg/svm.hpp"
#include "alseg/wasserstein.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace alseg;

namespace {

PhantomSpec plate(std::int64_t n) {
    PhantomSpec spec;
    spec.dims = {n, n, n};
    spec.background = 60;
    spec.noise_sigma = 15;
    Primitive slab;
    slab.kind = PrimitiveKind::Slab;
    slab.center = {n / 2.0, n / 2.0, n / 2.0};
    slab.normal = {0.2, 0.3, 1.0};
    slab.thickness = 8;
    slab.value = 180;
    spec.primitives.push_back(slab);
    return spec;
}

// Grid-spaced labels from the phantom.
std::vector<Seed> grid_seeds(const Phantom& ph, int K, std::size_t per_class) {
    std::vector<Seed> out;
    std::size_t pos = 0, neg = 0;
    for (const auto& p : iterate_positions(ph.volume.dims(), std::nullopt, K)) {
        if (p.x % 4 || p.y % 4 || p.z % 4) continue;
        const bool in = ph.labels.at(p) != 0;
        if ((in ? pos : neg) >= per_class) continue;
        ++(in ? pos : neg);
        out.push_back({p, in ? 1 : -1});
    }
    return out;
}

LocalEnvironment random_env(int K, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 255);
    LocalEnvironment env;
    env.size = K;
    env.center = {K / 2, K / 2, K / 2};
    env.values.resize(static_cast<std::size_t>(K) * K * K);
    for (auto& v : env.values) v = u(rng);
    return env;
}

} // namespace

static void BM_AssembleFeatures(benchmark::State& state) {
    FeatureConfig c;
    c.env_size = static_cast<int>(state.range(0));
    c.enabled.assign(kAllFeatures.begin(), kAllFeatures.end());
    const FeatureExtractor ex(c);
    std::mt19937_64 rng(1);
    const auto env = random_env(c.env_size, rng);
    std::vector<double> out(ex.size());
    for (auto _ : state) {
        ex.assemble_into(env, out);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_AssembleFeatures)->Arg(5)->Arg(7)->Arg(9);

static void BM_WassersteinEmbed(benchmark::State& state) {
    Histogram h(0.0, 1.0, 16);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& c : h.mutable_counts()) c = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(wasserstein_embed(h, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_WassersteinEmbed)->Arg(8)->Arg(64);

static void BM_SolveNuSvm(benchmark::State& state) {
    const auto M = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    std::vector<std::vector<double>> x(M, std::vector<double>(8));
    std::vector<int> y(M);
    for (std::size_t i = 0; i < M; ++i) {
        y[i] = i % 2 ? 1 : -1;
        for (auto& v : x[i]) v = n(rng) + 0.7 * y[i];
    }
    std::vector<std::span<const double>> rows(x.begin(), x.end());
    for (auto _ : state) benchmark::DoNotOptimize(solve_nu_svm(rows, y, 0.3, 0.1));
}
BENCHMARK(BM_SolveNuSvm)->Arg(50)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

static void BM_ClassifyVolume(benchmark::State& state) {
    const auto n = state.range(0);
    const auto ph = make_phantom(plate(n));
    auto vol = std::make_shared<DenseVolume>(ph.volume);
    Session s(vol, SessionConfig{});
    s.train(grid_seeds(ph, 5, 12));
    DenseVolume out(vol->dims(), DType::U8);
    for (auto _ : state) classify_volume(*vol, s.extractor(), s.model(1), std::nullopt, out);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(voxel_count(vol->dims())));
}
BENCHMARK(BM_ClassifyVolume)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_ConnectedComponents(benchmark::State& state) {
    const auto n = state.range(0);
    BinaryVolume m({n, n, n});
    std::mt19937_64 rng(4);
    std::bernoulli_distribution coin(0.3);
    for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
    for (auto _ : state) benchmark::DoNotOptimize(connected_components(m, 26));
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_ConnectedComponents)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_SpeckleRemoval(benchmark::State& state) {
    const auto n = state.range(0);
    BinaryVolume m({n, n, n});
    std::mt19937_64 rng(5);
    std::bernoulli_distribution coin(0.5);
    for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
    for (auto _ : state) benchmark::DoNotOptimize(speckle_removal(m, 3, 18));
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_SpeckleRemoval)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
