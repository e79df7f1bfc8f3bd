// Serial reference vs OpenMP kernels, and sweep throughput by thread count.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "relay/config.hpp"
#include "relay/kernels.hpp"
#include "relay/model.hpp"
#include "relay/rng.hpp"
#include "relay/simulator.hpp"

using namespace relay;

namespace {

Matrix random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    SplitMix64 rng(seed);
    Matrix m(rows, cols);
    for (double& x : m.data()) {
        x = rng.uniform(-1.0, 1.0);
    }
    return m;
}

template <kernels::Exec E>
void BM_CausalAttend(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const Matrix q = random_matrix(1, n, d);
    const Matrix k = random_matrix(2, n, d);
    const Matrix v = random_matrix(3, n, d);
    Matrix out(n, d);
    for (auto _ : state) {
        kernels::causal_attend(E, q, k, v, 0, out);
        benchmark::DoNotOptimize(out.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <kernels::Exec E>
void BM_CandidateAttend(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const Matrix q = random_matrix(4, n, d);
    const Matrix ck = random_matrix(5, 1024, d);
    const Matrix cv = random_matrix(6, 1024, d);
    const Matrix ok = random_matrix(7, n, d);
    const Matrix ov = random_matrix(8, n, d);
    Matrix out(n, d);
    for (auto _ : state) {
        kernels::candidate_attend(E, q, ck, cv, ok, ov, out);
        benchmark::DoNotOptimize(out.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <kernels::Exec E>
void BM_RankWithCache(benchmark::State& state) {
    const ModelConfig cfg{2, 32, 8, 42};
    const Backbone model(cfg, E);
    const auto user = random_tokens(1, 1, cfg.dim);
    const auto prefix = random_tokens(2, 511, cfg.dim);
    const auto suffix = random_tokens(3, 32, cfg.dim);
    const auto candidates = random_tokens(4, static_cast<std::size_t>(state.range(0)), cfg.dim);
    const PrefixCache cache = model.prefix_preinfer("u", user, prefix);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.rank_with_cache(cache, suffix, {}, candidates));
    }
}

void BM_Sweep(benchmark::State& state) {
    const int threads = static_cast<int>(state.range(0));
    const int saved = omp_get_max_threads();
    omp_set_num_threads(threads);
    SystemConfig cfg = default_config();
    cfg.workload.horizon_s = 10;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            sweep(cfg, "offered_qps", {100, 200, 400, 800}, {Mode::baseline, Mode::relay, Mode::relay_dram}));
    }
    omp_set_num_threads(saved);
}

}  // namespace

BENCHMARK(BM_CausalAttend<kernels::Exec::serial>)->Arg(256)->Arg(1024);
BENCHMARK(BM_CausalAttend<kernels::Exec::parallel>)->Arg(256)->Arg(1024);
BENCHMARK(BM_CandidateAttend<kernels::Exec::serial>)->Arg(128)->Arg(512);
BENCHMARK(BM_CandidateAttend<kernels::Exec::parallel>)->Arg(128)->Arg(512);
BENCHMARK(BM_RankWithCache<kernels::Exec::serial>)->Arg(64)->Arg(512);
BENCHMARK(BM_RankWithCache<kernels::Exec::parallel>)->Arg(64)->Arg(512);
BENCHMARK(BM_Sweep)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
