// Serial reference vs blocked kernel vs OpenMP batch.
#include <benchmark/benchmark.h>

#include <algorithm>

#include "knt/attacks.hpp"
#include "knt/keying.hpp"
#include "knt/transform.hpp"

using namespace knt;

namespace {

FeatureMap relu_map(std::uint64_t seed, std::size_t c) {
    auto v = gaussian_stream(seed, 49 * c, 1.0);
    for (auto& x : v) x = std::max(x, 0.0f);
    return FeatureMap(7, 7, c, std::move(v));
}

TransformConfig config(std::size_t c) {
    TransformConfig cfg;
    cfg.dim = c;
    return cfg;
}

void BM_SerialReference(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto p = gen_params(MasterKey::from_seed(1), 49, c, config(c));
    const auto f = relu_map(2, c);
    for (auto _ : state) {
        const auto fp = spatial_permute(f, p.perm);
        for (std::size_t i = 0; i < 49; ++i) benchmark::DoNotOptimize(mlp_forward(fp.position(i), p, true));
    }
}

void BM_Blocked(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const KntTransformer t(gen_params(MasterKey::from_seed(1), 49, c, config(c)), config(c));
    const auto f = relu_map(2, c);
    for (auto _ : state) benchmark::DoNotOptimize(t.apply(f));
}

void BM_Batch(benchmark::State& state) {
    const auto threads = static_cast<int>(state.range(0));
    const KntTransformer t(gen_params(MasterKey::from_seed(1), 49, 64, config(64)), config(64));
    std::vector<FeatureMap> maps;
    for (std::uint64_t s = 0; s < 256; ++s) maps.push_back(relu_map(s, 64));
    for (auto _ : state) benchmark::DoNotOptimize(t.apply_batch(maps, threads));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(maps.size()));
}

void BM_GradAttackBatch(benchmark::State& state) {
    const auto threads = static_cast<int>(state.range(0));
    const auto p = gen_params(MasterKey::from_seed(1), 49, 16, config(16));
    const KntTransformer t(p, config(16));
    std::vector<FeatureMap> gs;
    std::vector<std::uint64_t> ids;
    for (std::uint64_t s = 0; s < 4; ++s) {
        gs.push_back(t.apply(relu_map(s, 16)));
        ids.push_back(s);
    }
    GradAttackConfig cfg;
    cfg.steps = 100;
    cfg.restarts = 1;
    for (auto _ : state) benchmark::DoNotOptimize(grad_attack_batch(gs, p, cfg, ids, true, true, threads));
}

}  // namespace

BENCHMARK(BM_SerialReference)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Blocked)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Batch)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GradAttackBatch)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
