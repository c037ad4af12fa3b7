#include "pcdpem/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "pcdpem/errors.hpp"
#include "pcdpem/rng.hpp"

namespace pcdpem {

ConsensusLayout make_layout(const ContributionSet& c, std::size_t num_agents) {
  return {num_agents, c.size, c.state_dim, c.horizon()};
}

Vector flatten_contribution(const ContributionSet& c, const ConsensusLayout& layout) {
  if (c.size != layout.block_particles || c.state_dim != layout.state_dim || c.horizon() != layout.horizon) {
    throw ParameterError("contribution does not match the consensus layout");
  }
  Vector block(static_cast<Eigen::Index>(layout.block_length()));
  const std::size_t n = layout.state_dim;
  for (std::size_t t = 0; t < layout.horizon; ++t) {
    for (std::size_t k = 0; k < layout.block_particles; ++k) {
      const auto base = static_cast<Eigen::Index>(layout.offset(0, t, k));
      for (std::size_t i = 0; i < n; ++i) {
        block[base + static_cast<Eigen::Index>(i)] = c.scaled[t](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
      }
      block[base + static_cast<Eigen::Index>(n)] = c.weights(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
    }
  }
  return block;
}

ContributionSet unflatten_block(const Vector& xc, const ConsensusLayout& layout, AgentId u) {
  if (static_cast<std::size_t>(xc.size()) != layout.length() || u >= layout.num_agents) {
    throw ParameterError("unflatten_block: vector or agent does not match the layout");
  }
  ContributionSet c;
  c.size = layout.block_particles;
  c.state_dim = layout.state_dim;
  const auto K = static_cast<Eigen::Index>(c.size);
  const auto n = static_cast<Eigen::Index>(c.state_dim);
  c.indices.assign(layout.horizon, {});
  c.scaled.assign(layout.horizon, Matrix(K, n));
  c.weights.resize(static_cast<Eigen::Index>(layout.horizon), K);
  for (std::size_t t = 0; t < layout.horizon; ++t) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto base = static_cast<Eigen::Index>(layout.offset(u, t, static_cast<std::size_t>(k)));
      c.scaled[t].row(k) = xc.segment(base, n).transpose();
      c.weights(static_cast<Eigen::Index>(t), k) = xc[base + n];
    }
  }
  return c;
}

ConsensusState init_consensus(const ContributionSet& contribution, AgentId v, std::size_t num_agents) {
  if (v >= num_agents) throw ParameterError("init_consensus: agent id out of range");
  const ConsensusLayout layout = make_layout(contribution, num_agents);
  ConsensusState s;
  s.xc = Vector::Zero(static_cast<Eigen::Index>(layout.length()));
  s.xc.segment(static_cast<Eigen::Index>(v * layout.block_length()), static_cast<Eigen::Index>(layout.block_length())) =
      flatten_contribution(contribution, layout);
  s.count = 1.0;
  const auto K = static_cast<Eigen::Index>(contribution.size);
  s.tracker = Vector::Zero(K * static_cast<Eigen::Index>(num_agents));
  s.tracker.segment(static_cast<Eigen::Index>(v) * K, K).setOnes();
  return s;
}

ConsensusState init_consensus(const Vector& value, AgentId v, std::size_t num_agents, std::size_t tracker_block) {
  if (v >= num_agents) throw ParameterError("init_consensus: agent id out of range");
  if (tracker_block == 0) throw ParameterError("init_consensus: tracker block must be positive");
  ConsensusState s;
  s.xc = value;
  s.count = 1.0;
  const auto K = static_cast<Eigen::Index>(tracker_block);
  s.tracker = Vector::Zero(K * static_cast<Eigen::Index>(num_agents));
  s.tracker.segment(static_cast<Eigen::Index>(v) * K, K).setOnes();
  return s;
}

AgentId gossip_target(const DirectedNetwork& net, AgentId v, std::uint64_t seed, std::size_t round) {
  const auto& succ = net.successors(v);
  if (succ.empty()) throw ProtocolError("agent " + std::to_string(v + 1) + " has no successor to gossip with");
  Rng rng = make_rng(seed, {stream::kGossip, v, round});
  std::uniform_int_distribution<std::size_t> pick(0, succ.size() - 1);
  return succ[pick(rng)];
}

namespace {

void gossip_round_into(const std::vector<ConsensusState>& states, std::vector<ConsensusState>& next,
                       const DirectedNetwork& net, std::uint64_t seed, std::size_t round) {
  const std::size_t V = net.num_agents();
  next.resize(V);
  for (AgentId v = 0; v < V; ++v) {
    next[v].xc = 0.5 * states[v].xc;
    next[v].count = 0.5 * states[v].count;
    next[v].tracker = 0.5 * states[v].tracker;
  }
  for (AgentId v = 0; v < V; ++v) {
    const AgentId j = gossip_target(net, v, seed, round);
    next[j].xc += 0.5 * states[v].xc;
    next[j].count += 0.5 * states[v].count;
    next[j].tracker += 0.5 * states[v].tracker;
  }
}

}  // namespace

std::vector<ConsensusState> gossip_round(const std::vector<ConsensusState>& states, const DirectedNetwork& net,
                                         std::uint64_t seed, std::size_t round) {
  if (states.size() != net.num_agents()) throw ProtocolError("gossip_round: one state per agent required");
  std::vector<ConsensusState> next;
  gossip_round_into(states, next, net, seed, round);
  return next;
}

Vector consensus_target(const std::vector<ConsensusState>& initial) {
  if (initial.empty()) throw ParameterError("consensus_target: no states");
  Vector sum = Vector::Zero(initial[0].xc.size());
  for (const auto& s : initial) sum += s.xc;
  return sum;
}

std::vector<double> consensus_error(const std::vector<ConsensusState>& states, const Vector& target) {
  const double V = static_cast<double>(states.size());
  double scale = target.size() ? target.lpNorm<Eigen::Infinity>() : 0.0;
  if (!(scale > 0.0)) scale = 1.0;
  std::vector<double> e(states.size());
  for (std::size_t v = 0; v < states.size(); ++v) {
    if (!(states[v].count > 0.0)) throw ProtocolError("propagation counter is not positive");
    e[v] = target.size() ? (V * states[v].xc / states[v].count - target).lpNorm<Eigen::Infinity>() / scale : 0.0;
  }
  return e;
}

double relative_error_sigma(const ConsensusState& state, std::size_t num_agents) {
  const double mass = state.tracker.lpNorm<1>();
  if (!(mass > 0.0)) throw ProtocolError("provenance tracker carries no mass");
  const double K = static_cast<double>(state.tracker.size()) / static_cast<double>(num_agents);
  const double nc = mass / K;
  return (state.tracker.array() / nc - 1.0 / static_cast<double>(num_agents)).abs().maxCoeff();
}

double derived_log2_inv_delta_bar(double delta, std::size_t num_agents) {
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
  const double V = static_cast<double>(num_agents);
  const double tau = (2.0 + 3.0 * std::numbers::ln2) * std::log2(2.0 * V);
  return std::log2(2.0 * V) - 2.0 * std::log2(delta) + 2.0 * tau;
}

std::size_t round_budget(std::size_t num_agents, double delta_bar) {
  if (!(delta_bar > 0.0)) throw ParameterError("delta_bar must be positive");
  return static_cast<std::size_t>(
      std::ceil(std::log2(static_cast<double>(num_agents)) + std::log2(1.0 / delta_bar)));
}

std::size_t derived_round_budget(double delta, std::size_t num_agents) {
  return static_cast<std::size_t>(
      std::ceil(std::log2(static_cast<double>(num_agents)) + derived_log2_inv_delta_bar(delta, num_agents)));
}

nlohmann::json to_json(const ConsensusReport& r) {
  return {{"rounds", r.rounds_run},
          {"messages", r.messages_sent},
          {"scalars_per_message", r.scalars_per_message},
          {"converged", r.converged},
          {"sigma", r.sigma},
          {"error", r.error},
          {"max_mass_drift", r.max_mass_drift},
          {"max_count_drift", r.max_count_drift}};
}

namespace {

void track_drift(const std::vector<ConsensusState>& states, const Vector& initial_total, ConsensusReport& report) {
  Vector sum = Vector::Zero(initial_total.size());
  double count = 0.0;
  for (const auto& s : states) {
    sum += s.xc;
    count += s.count;
  }
  const double scale = initial_total.size() ? initial_total.lpNorm<Eigen::Infinity>() : 0.0;
  if (initial_total.size()) {
    const double d = (sum - initial_total).lpNorm<Eigen::Infinity>();
    report.max_mass_drift = std::max(report.max_mass_drift, scale > 0.0 ? d / scale : d);
  }
  const double V = static_cast<double>(states.size());
  report.max_count_drift = std::max(report.max_count_drift, std::abs(count - V) / V);
}

/// True when every agent's relative error is at most `tol`; stops at the first violation.
bool within(const std::vector<ConsensusState>& states, const Vector& target, double tol) {
  const double V = static_cast<double>(states.size());
  double scale = target.size() ? target.lpNorm<Eigen::Infinity>() : 0.0;
  if (!(scale > 0.0)) scale = 1.0;
  const double bound = tol * scale;
  for (const auto& s : states) {
    if (!(s.count > 0.0)) throw ProtocolError("propagation counter is not positive");
    for (Eigen::Index i = 0; i < target.size(); ++i) {
      if (!(std::abs(V * s.xc[i] / s.count - target[i]) <= bound)) return false;
    }
  }
  return true;
}

}  // namespace

ConsensusResult run_consensus(std::vector<ConsensusState> states, const DirectedNetwork& net,
                              const ConsensusOptions& opt) {
  const std::size_t V = net.num_agents();
  if (states.size() != V) throw ParameterError("run_consensus: one state per agent required");
  if (!(opt.delta > 0.0) || opt.max_rounds < 1) throw ParameterError("run_consensus: need delta > 0 and I_con >= 1");
  if (opt.reader >= V) throw ParameterError("run_consensus: reader agent out of range");

  ConsensusResult res;
  const Vector target = consensus_target(states);
  res.report.scalars_per_message = static_cast<std::size_t>(states[0].xc.size()) + 1;

  std::size_t budget = opt.max_rounds;
  if (opt.termination == Termination::RoundBudget) {
    budget = opt.delta_bar > 0.0 ? round_budget(V, opt.delta_bar) : derived_round_budget(opt.delta, V);
    budget = std::min(budget, opt.max_rounds);
  }
  auto done = [&](const std::vector<double>& e) {
    if (V == 1) return true;
    if (opt.termination == Termination::RoundBudget) return res.report.rounds_run >= budget;
    return *std::max_element(e.begin(), e.end()) <= 1.5 * opt.delta;
  };

  std::vector<double> err = consensus_error(states, target);
  std::vector<ConsensusState> next;
  while (!done(err) && res.report.rounds_run < opt.max_rounds) {
    gossip_round_into(states, next, net, opt.seed, res.report.rounds_run);
    states.swap(next);
    ++res.report.rounds_run;
    res.report.messages_sent += V;
    track_drift(states, target, res.report);
    // Full errors are only needed once the oracle rule can fire.
    if (opt.termination == Termination::Oracle && !within(states, target, 1.5 * opt.delta)) {
      err.assign(V, std::numeric_limits<double>::infinity());
    } else {
      err = consensus_error(states, target);
    }
  }
  if (std::isinf(err.front())) err = consensus_error(states, target);
  res.report.converged = opt.termination == Termination::Oracle
                             ? *std::max_element(err.begin(), err.end()) <= 1.5 * opt.delta
                             : done(err);
  res.report.error = err;
  res.report.sigma.resize(V);
  for (AgentId v = 0; v < V; ++v) res.report.sigma[v] = relative_error_sigma(states[v], V);
  res.global = static_cast<double>(V) * states[opt.reader].xc / states[opt.reader].count;
  res.states = std::move(states);
  return res;
}

ConsensusResult run_consensus(const std::vector<ContributionSet>& contributions, const DirectedNetwork& net,
                              const ConsensusOptions& options) {
  if (contributions.size() != net.num_agents()) {
    throw ParameterError("run_consensus: one contribution per agent required");
  }
  std::vector<ConsensusState> states;
  states.reserve(contributions.size());
  for (AgentId v = 0; v < contributions.size(); ++v) {
    states.push_back(init_consensus(contributions[v], v, contributions.size()));
  }
  return run_consensus(std::move(states), net, options);
}

}  // namespace pcdpem
