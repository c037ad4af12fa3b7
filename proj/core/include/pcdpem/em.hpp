#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pcdpem/consensus.hpp"
#include "pcdpem/model.hpp"
#include "pcdpem/network.hpp"
#include "pcdpem/smoother.hpp"
#include "pcdpem/stability.hpp"

namespace pcdpem {

/// Consensus particles V * xc / n reshaped per time step. Entries are scaled
/// particles (x * w); masses are the matching smoothed weights.
struct GlobalParticleSet {
  std::size_t num_agents = 0;
  std::size_t block_particles = 0;
  std::size_t state_dim = 0;
  std::size_t horizon = 0;
  std::vector<Matrix> entries;  // [t] (V*K) x n
  Matrix masses;                // T x (V*K)

  /// Sum of all scaled particles at t.
  Vector aggregate(std::size_t t) const;
  /// aggregate / total mass.
  Vector network_mean(std::size_t t) const;
  /// Weighted state estimate of agent u's block: sum of entries / sum of masses.
  Vector block_estimate(AgentId u, std::size_t t) const;
  Matrix block_trajectory(AgentId u) const;  // T x n
};

GlobalParticleSet make_global_set(const Vector& global, const ConsensusLayout& layout);

/// Which state paths enter the surrogate.
enum class QbarForm {
  Network,      // transition terms over every agent block, output term of the identifying agent
  SingleAgent,  // identifying agent's own block only
  Aggregate,    // the summed consensus state at every t
};

/// State paths and data that the consensus surrogate is evaluated on.
struct SurrogateData {
  std::vector<Matrix> paths;   // per path: T x n state estimates
  std::vector<Matrix> inputs;  // per path: T x m
  Matrix outputs;              // T x p, local observations
  Matrix output_path;          // T x n, states paired with the outputs
  Matrix output_inputs;        // T x m
};

SurrogateData surrogate_data(const GlobalParticleSet& gset, const TrajectoryData& data, AgentId agent,
                             QbarForm form = QbarForm::Network);

/// Exact Gaussian complete-data log-likelihood of the surrogate paths
/// (transition and output terms; the theta-free prior is omitted).
double qbar(const ModelClass& model, const Vector& theta, const SurrogateData& data);
/// Literal residual form with the -(2T-1) sum theta_i log|theta_i| penalty.
double qbar_literal(const ModelClass& model, const Vector& theta, const SurrogateData& data);
/// Single-trajectory convenience: states T x n, outputs T x p, inputs T x m.
double qbar_trajectory(const ModelClass& model, const Vector& theta, const Matrix& states, const Matrix& outputs,
                       const Matrix& inputs);

/// Particle form of Q for one agent: prior, pairwise-weighted transition and
/// smoothed output terms. Pairwise weights use theta_k.
double qtilde_local(const ModelClass& model, const Vector& theta, const Vector& theta_k,
                    const ParticleEnsemble& ensemble, const Matrix& outputs);

/// Sufficient statistics of the surrogate: residual sums are quadratic in theta.
struct QuadraticStats {
  Matrix Gr;  // sum D^T D over transitions
  Vector gr;  // sum D^T z
  double cr = 0;
  double nr = 0;  // number of transition residuals
  Matrix Ge;
  Vector ge;
  double ce = 0;
  double ne = 0;
  std::size_t n = 0;
  std::size_t p = 0;

  double transition_ss(const Vector& theta) const;
  double output_ss(const Vector& theta) const;
};

QuadraticStats quadratic_stats(const ModelClass& model, const SurrogateData& data);
double qbar_from_stats(const ModelClass& model, const Vector& theta, const QuadraticStats& stats);

struct MStepOptions {
  bool constrained = true;
  int max_gradient_iterations = 50;
  int max_halvings = 50;
  int bisection_steps = 50;
  double variance_floor = 1e-8;
};

struct KktReport {
  double gradient_norm = 0;
  double reference_norm = 0;
  bool stationary = false;
  bool active_constraint = false;
  bool ok = false;
};

struct MStepResult {
  Vector theta;
  double q_start = 0;  // Q(theta_k, theta_k)
  double q_end = 0;    // Q(theta_{k+1}, theta_k)
  bool repaired = false;
  bool newton_feasible = false;
  int gradient_iterations = 0;
  KktReport kkt;
};

/// Moves theta toward (or keeps it at) a feasible point: bisection from `anchor`.
/// Returns nullopt when the anchor itself is infeasible.
std::optional<Vector> repair_feasible(const ContractionProblem& problem, const Vector& theta, const Vector& anchor,
                                      const ModelClass& model, int steps = 50);

/// Maximizes the surrogate from a feasible theta_k: structural entries with the
/// variances held at theta_k (Newton point, else bisection toward it followed by
/// preconditioned projected-gradient steps), then closed-form variance updates.
MStepResult mstep(const ModelClass& model, const Vector& theta_k, const QuadraticStats& stats,
                  const ContractionProblem* problem, const MStepOptions& options = {});

enum class WitnessSource { BlockEstimates, NetworkMean, Aggregate };

struct PcdpemConfig {
  std::size_t num_particles = 500;
  double delta = 1e-3;
  std::size_t max_consensus_rounds = 1000;
  Termination termination = Termination::Oracle;
  double delta_bar = 0.0;
  /// Stop when the surrogate gain drops below tolerance * (1 + |Q|).
  double tolerance = 1e-4;
  int max_iterations = 20;
  std::uint64_t seed = 0;
  bool constrained = true;
  QbarForm form = QbarForm::Network;
  WitnessSource witness_source = WitnessSource::BlockEstimates;
  /// Optional extra witnesses on a box grid.
  std::optional<std::pair<Vector, Vector>> witness_box;
  std::size_t witness_box_points = 9;
  AgentId agent = 0;
  double divergence_bound = 1e6;
  std::size_t workers = 0;  // 0: hardware concurrency
  int degeneracy_retries = 3;
  double degeneracy_inflation = 10.0;
  CertificateGrid grid;
  MStepOptions mstep;
};

struct IterationRecord {
  int k = 0;
  Vector theta;        // theta_k as used by the M-step (after any repair)
  Vector theta_next;   // theta_{k+1}
  bool repaired = false;
  double q_start = 0;  // Q(theta_k, theta_k)
  double q_end = 0;    // Q(theta_{k+1}, theta_k)
  ConsensusReport consensus;
  double seconds = 0;
  bool feasible = true;  // theta_{k+1} certified on this iteration's witnesses
  KktReport kkt;

  double delta_q() const noexcept { return q_end - q_start; }
};

struct ThetaEstimate {
  Vector theta;
  Vector theta0;
  std::optional<StabilityCertificate> certificate;
  std::vector<Witness> witnesses;  // witness set of the final certificate
  std::vector<IterationRecord> history;
  bool converged = false;
  double total_seconds = 0;

  std::size_t iterations() const noexcept { return history.size(); }
};

/// Entries drawn uniformly in center_i * [1 - fraction, 1 + fraction].
Vector random_initial_theta(const Vector& center, double fraction, std::uint64_t seed);

ThetaEstimate run_pcdpem(const TrajectoryData& data, const DirectedNetwork& net, const ModelClass& model,
                         const Vector& theta0, const PcdpemConfig& config);

void save_history_csv(const std::string& path, const ThetaEstimate& est, const ModelClass& model);
nlohmann::json to_json(const ThetaEstimate& est, const ModelClass& model);

}  // namespace pcdpem
