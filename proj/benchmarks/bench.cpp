#include <benchmark/benchmark.h>

#include "pcdpem/consensus.hpp"
#include "pcdpem/experiment.hpp"
#include "pcdpem/smoother.hpp"
#include "pcdpem/stability.hpp"

using namespace pcdpem;

namespace {

const BuiltinSystem& gene_regulation() {
  static const BuiltinSystem sys = builtin_system("gene_regulation");
  return sys;
}

TrajectoryData single_agent_data(const BuiltinSystem& sys, std::size_t T) {
  return simulate_network(sys.model, sys.model.true_theta, no_coupling(), DirectedNetwork(1, {}), T, {sys.x0}, 7);
}

void BM_ForwardFilter(benchmark::State& state) {
  const auto& sys = gene_regulation();
  const auto data = single_agent_data(sys, 100);
  const auto M = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto e = pf_forward(sys.model, sys.model.true_theta, data.outputs[0], data.inputs[0], M, 11);
    benchmark::DoNotOptimize(e.filter_weights.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ForwardFilter)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oN);

void BM_BackwardSmooth(benchmark::State& state) {
  const auto& sys = gene_regulation();
  const auto data = single_agent_data(sys, 100);
  const auto M = static_cast<std::size_t>(state.range(0));
  const auto filtered = pf_forward(sys.model, sys.model.true_theta, data.outputs[0], data.inputs[0], M, 11);
  for (auto _ : state) {
    auto e = filtered;
    backward_smooth(e, sys.model, sys.model.true_theta);
    benchmark::DoNotOptimize(e.smoothed_weights.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BackwardSmooth)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNSquared);

void BM_GossipRound(benchmark::State& state) {
  ExperimentConfig c;
  c.num_agents = static_cast<std::size_t>(state.range(0));
  const auto net = experiment_network(c, 3);
  const auto width = static_cast<Eigen::Index>(state.range(1));
  std::vector<ConsensusState> states;
  for (AgentId v = 0; v < c.num_agents; ++v) states.push_back(init_consensus(Vector::Ones(width), v, c.num_agents));
  std::size_t round = 0;
  for (auto _ : state) {
    states = gossip_round(states, net, 5, round++);
    benchmark::DoNotOptimize(states.front().xc.data());
  }
}
BENCHMARK(BM_GossipRound)->Args({20, 1})->Args({20, 1000})->Args({100, 1000});

void BM_FeasibilityCheck(benchmark::State& state) {
  const auto& sys = gene_regulation();
  const auto n = static_cast<Eigen::Index>(sys.model.state_dim);
  const auto witnesses = box_witnesses(Vector::Constant(n, -2.0), Vector::Constant(n, 2.0),
                                       static_cast<std::size_t>(state.range(0)));
  const ContractionProblem problem(sys.model, witnesses);
  const Vector p = Vector::Ones(n);
  for (auto _ : state) benchmark::DoNotOptimize(problem.slack(sys.model.true_theta, p));
  state.counters["witnesses"] = static_cast<double>(witnesses.size());
}
BENCHMARK(BM_FeasibilityCheck)->Arg(11)->Arg(101);

void BM_FitCertificate(benchmark::State& state) {
  const auto& sys = gene_regulation();
  const auto n = static_cast<Eigen::Index>(sys.model.state_dim);
  const ContractionProblem problem(sys.model, box_witnesses(Vector::Constant(n, -2.0), Vector::Constant(n, 2.0), 41));
  for (auto _ : state) benchmark::DoNotOptimize(problem.fit(sys.model.true_theta));
}
BENCHMARK(BM_FitCertificate);

}  // namespace

BENCHMARK_MAIN();
