// Serial single-tape Lagrangian evaluation vs the chunked OpenMP path.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "deepuzawa/lagrangian.hpp"

using namespace deepuzawa;

namespace {

struct Fixture {
  ProblemSpec problem;
  QuadratureSet quad;
  MlpParams params;
  MultiplierField multiplier;
  LagrangianConfig config;

  Fixture(Scheme scheme, double sigma_t) {
    problem.sigma_t = sigma_t;
    problem.source.kind = SourceKind::Ball;
    QuadratureSpec spec;
    spec.interior = scheme == Scheme::Hybrid ? InteriorSpec{Scheme::Hybrid, 64, 0, 0}
                                             : InteriorSpec{Scheme::MonteCarlo, 1024, 0, 0};
    spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 16, 8};
    spec.n_angles = 16;
    spec.seed = 7;
    quad = build_quadrature(problem.domain, spec);
    params = init_params({4, 64, 64, 64, 1}, Activation::Tanh, 3);
    multiplier = make_multiplier(problem, quad.boundary);
  }
};

const Fixture& transport() {
  static const Fixture f(Scheme::MonteCarlo, 0.0);
  return f;
}
const Fixture& scattering() {
  static const Fixture f(Scheme::Hybrid, 1.0);
  return f;
}

void BM_serial(benchmark::State& state, const Fixture& (*get)()) {
  const Fixture& f = get();
  for (auto _ : state)
    benchmark::DoNotOptimize(evaluate_serial(f.params, f.multiplier, f.quad, f.problem, f.config));
}

void BM_parallel(benchmark::State& state, const Fixture& (*get)()) {
  const Fixture& f = get();
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(f.params, f.multiplier, f.quad, f.problem, f.config));
  state.counters["threads"] = static_cast<double>(state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(BM_serial, transport, transport)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_parallel, transport, transport)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK_CAPTURE(BM_serial, scattering, scattering)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_parallel, scattering, scattering)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
