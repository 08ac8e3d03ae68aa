#include <benchmark/benchmark.h>

#include <limits>

#include "lnvb/gibbs.hpp"
#include "lnvb/gig.hpp"
#include "lnvb/lgm_engine.hpp"
#include "lnvb/rng.hpp"
#include "lnvb/simulation.hpp"
#include "lnvb/special_functions.hpp"
#include "lnvb/vb_core.hpp"

namespace {

lnvb::Ar1Scenario scenario(long n) {
  lnvb::Ar1ScenarioConfig cfg;
  cfg.n = n;
  cfg.eta = 1.0;
  lnvb::Rng rng = lnvb::derive_stream(2024, static_cast<std::uint64_t>(n));
  return lnvb::simulate_ar1(cfg, rng);
}

void BM_LogBesselK(benchmark::State& state) {
  const double order = static_cast<double>(state.range(0)) / 2.0;
  double x = 0.01;
  for (auto _ : state) {
    benchmark::DoNotOptimize(lnvb::log_bessel_k(order, x));
    x = x < 100.0 ? x * 1.37 : 0.01;
  }
}
BENCHMARK(BM_LogBesselK)->Arg(-1)->Arg(1)->Arg(7);

void BM_GigSample(benchmark::State& state) {
  const lnvb::GigParams p{-0.5, 2.0, 0.01 * static_cast<double>(state.range(0))};
  lnvb::Rng rng(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lnvb::gig_sample(p, rng));
  }
}
BENCHMARK(BM_GigSample)->Arg(1)->Arg(100)->Arg(10000);

void BM_GigMoments(benchmark::State& state) {
  lnvb::GigParams p{-1.0, 1.5, 0.3};
  for (auto _ : state) {
    benchmark::DoNotOptimize(lnvb::gig_moment(1.0, p));
    benchmark::DoNotOptimize(lnvb::gig_moment(-1.0, p));
    benchmark::DoNotOptimize(lnvb::gig_mean_log(p));
    p.b = p.b < 50.0 ? p.b * 1.1 : 0.3;
  }
}
BENCHMARK(BM_GigMoments);

void BM_LgmFit(benchmark::State& state) {
  const auto s = scenario(state.range(0));
  auto problem = lnvb::LgmProblem::create(s.model, s.obs);
  const auto w = problem->default_weights();
  for (auto _ : state) {
    benchmark::DoNotOptimize(problem->fit(w));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_LgmFit)->Arg(100)->Arg(400)->Arg(1600)->Unit(benchmark::kMillisecond);

void vb_iteration(benchmark::State& state, lnvb::VbMethod method) {
  const auto s = scenario(state.range(0));
  lnvb::VbConfig cfg;
  cfg.method = method;
  cfg.max_iterations = 1;
  cfg.threshold = std::numeric_limits<double>::infinity();
  for (auto _ : state) {
    benchmark::DoNotOptimize(lnvb::run_vb(s.model, s.obs, cfg));
  }
}
void BM_SviIteration(benchmark::State& state) { vb_iteration(state, lnvb::VbMethod::kSvi); }
void BM_ScviIteration(benchmark::State& state) { vb_iteration(state, lnvb::VbMethod::kScvi); }
BENCHMARK(BM_SviIteration)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScviIteration)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_GibbsSweep(benchmark::State& state) {
  const auto s = scenario(state.range(0));
  lnvb::GibbsSampler sampler(s.model, s.obs, lnvb::GibbsConfig{});
  lnvb::Rng rng(3);
  for (auto _ : state) {
    sampler.sweep(rng);
  }
}
BENCHMARK(BM_GibbsSweep)->Arg(100)->Arg(400)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
