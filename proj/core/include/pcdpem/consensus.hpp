#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pcdpem/model.hpp"
#include "pcdpem/network.hpp"
#include "pcdpem/smoother.hpp"

namespace pcdpem {

/// Push-sum state of one agent: transmission vector, propagation counter and
/// provenance tracker (K entries per agent).
struct ConsensusState {
  Vector xc;
  double count = 1.0;
  Vector tracker;
};

/// Placement of every agent's contribution inside the transmission vector.
/// Agent-major: agent u owns entries [u*B, (u+1)*B) with B = T*K*(n+1); inside
/// a block, time slices of K particles, each stored as n coordinates followed
/// by its smoothed weight (the weight travels so that receivers can normalize).
struct ConsensusLayout {
  std::size_t num_agents = 0;
  std::size_t block_particles = 0;  // K
  std::size_t state_dim = 0;        // n
  std::size_t horizon = 0;          // T

  std::size_t stride() const noexcept { return state_dim + 1; }
  std::size_t block_length() const noexcept { return horizon * block_particles * stride(); }
  std::size_t length() const noexcept { return num_agents * block_length(); }
  std::size_t offset(AgentId u, std::size_t t, std::size_t k) const noexcept {
    return u * block_length() + (t * block_particles + k) * stride();
  }
  /// Scalars in one broadcast: transmission vector plus the counter.
  std::size_t scalars_per_message() const noexcept { return length() + 1; }
};

ConsensusLayout make_layout(const ContributionSet& contribution, std::size_t num_agents);
Vector flatten_contribution(const ContributionSet& contribution, const ConsensusLayout& layout);
/// Inverse of flatten_contribution for agent u's block of a full-length vector.
ContributionSet unflatten_block(const Vector& xc, const ConsensusLayout& layout, AgentId u);

/// Own block filled, all other blocks zero, counter 1, tracker ones on own K slots.
ConsensusState init_consensus(const ContributionSet& contribution, AgentId v, std::size_t num_agents);
/// Generic push-sum start: arbitrary value vector, tracker with `tracker_block` ones for agent v.
ConsensusState init_consensus(const Vector& value, AgentId v, std::size_t num_agents,
                              std::size_t tracker_block = 1);

/// One synchronous round: each agent keeps half and pushes half to a uniformly
/// random successor drawn from the stream (seed, v, round).
std::vector<ConsensusState> gossip_round(const std::vector<ConsensusState>& states, const DirectedNetwork& net,
                                         std::uint64_t seed, std::size_t round);
/// Successor chosen by agent v in a given round.
AgentId gossip_target(const DirectedNetwork& net, AgentId v, std::uint64_t seed, std::size_t round);

/// Sum of the initial transmission vectors.
Vector consensus_target(const std::vector<ConsensusState>& initial);
/// e_v = |V xc_v / n_v - target|_inf / |target|_inf.
std::vector<double> consensus_error(const std::vector<ConsensusState>& states, const Vector& target);
/// max_k |c_k / n_c - 1/V| with n_c = |c|_1 / K.
double relative_error_sigma(const ConsensusState& state, std::size_t num_agents);

/// ceil(log2 V + log2(1/delta_bar)).
std::size_t round_budget(std::size_t num_agents, double delta_bar);
/// log2(1/delta_bar) for delta_bar = delta^2 / (2V) * 2^(-2 tau), tau = (2 + 3 ln 2) log2(2V).
double derived_log2_inv_delta_bar(double delta, std::size_t num_agents);
std::size_t derived_round_budget(double delta, std::size_t num_agents);

enum class Termination { Oracle, RoundBudget };

struct ConsensusOptions {
  double delta = 1e-3;
  std::size_t max_rounds = 1000;  // I_con
  std::uint64_t seed = 0;
  Termination termination = Termination::Oracle;
  /// Round-budget mode: fixed delta_bar when > 0, otherwise derived from delta.
  double delta_bar = 0.0;
  AgentId reader = 0;  // agent whose vector becomes the global set
};

struct ConsensusReport {
  std::size_t rounds_run = 0;
  std::size_t messages_sent = 0;
  std::size_t scalars_per_message = 0;
  bool converged = false;
  std::vector<double> sigma;  // per agent, final round
  std::vector<double> error;  // per agent, final round
  double max_mass_drift = 0.0;   // max over rounds of |sum xc - initial| / |initial|
  double max_count_drift = 0.0;  // max over rounds of |sum n - V| / V
};

nlohmann::json to_json(const ConsensusReport& report);

struct ConsensusResult {
  Vector global;  // V * xc / n at the reader agent
  ConsensusReport report;
  std::vector<ConsensusState> states;
};

ConsensusResult run_consensus(std::vector<ConsensusState> states, const DirectedNetwork& net,
                              const ConsensusOptions& options);
ConsensusResult run_consensus(const std::vector<ContributionSet>& contributions, const DirectedNetwork& net,
                              const ConsensusOptions& options);

}  // namespace pcdpem
