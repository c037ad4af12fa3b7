#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pcdpem/network.hpp"

namespace pcdpem {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Affine-in-theta basis: writes `offset` (rows) and a row-major `design`
/// (rows x q) so that value = offset + design * theta.
/// x has state_dim entries, u has input_dim entries (may be null when m = 0).
using BasisFn = std::function<void(const double* x, const double* u, double* offset, double* design)>;

/// Additive Gaussian noise; variances live inside theta.
struct NoiseSpec {
  std::size_t process_var_index = 0;
  std::size_t measurement_var_index = 0;
  double process_mean = 0.0;
  double measurement_mean = 0.0;
  /// Process-noise draws are multiplied by sqrt(process_scale) (dt for Euler models).
  double process_scale = 1.0;
};

/// Parametrized agent dynamics shared by every agent of the network:
///   x(t+1) = f0(x,u) + F(x,u) theta + coupling_gain * sum_j g_j + sqrt(scale) * eps
///   y(t)   = h0(x,u) + H(x,u) theta + eta
class ModelClass {
 public:
  std::string name;
  std::size_t state_dim = 1;
  std::size_t input_dim = 0;
  std::size_t output_dim = 1;
  std::vector<std::string> param_names;
  BasisFn transition;
  BasisFn observation;
  NoiseSpec noise;
  double coupling_gain = 1.0;
  double dt = 1.0;

  /// Prior p(x(1)) = N(initial_mean, initial_var * I), independent of theta.
  Vector initial_mean;
  double initial_var = 1.0;

  Vector true_theta;
  /// Known contraction-feasible parameter vector used to repair infeasible iterates.
  std::optional<Vector> stable_anchor;
  /// Exogenous input u(t) at 1-based time t; empty when input_dim == 0.
  std::function<Vector(double)> input_signal;

  std::size_t num_params() const noexcept { return param_names.size(); }
  bool is_noise_index(std::size_t i) const noexcept {
    return i == noise.process_var_index || i == noise.measurement_var_index;
  }
  std::vector<std::size_t> structural_indices() const;

  void transition_mean(const double* x, const double* u, const Vector& theta, double* out) const;
  void observation_mean(const double* x, const double* u, const Vector& theta, double* out) const;
  Vector transition_mean(const Vector& x, const Vector& u, const Vector& theta) const;
  Vector observation_mean(const Vector& x, const Vector& u, const Vector& theta) const;

  /// Variance of the additive process noise actually applied per step.
  double process_variance(const Vector& theta) const;
  double measurement_variance(const Vector& theta) const;
  double process_noise_mean() const;

  void validate_theta(const Vector& theta) const;
};

enum class CouplingKind { None, Sine, SineSquared, Linear, Hill };

/// Interaction g_j(x_j - x_v). `strength` multiplies the elementwise kernel;
/// with `normalize_by_degree` the result is divided by J_v. Components with
/// mask entry false receive no increment.
struct InteractionFunction {
  CouplingKind kind = CouplingKind::None;
  double strength = 0.0;
  bool normalize_by_degree = true;
  double hill_exponent = 2.0;
  std::vector<bool> component_mask;  // empty = all components

  Vector evaluate(const Vector& diff, std::size_t degree) const;
  /// Upper bound on the norm of d/dx_v sum_j g_j for an agent with `degree` predecessors.
  double jacobian_bound(std::size_t degree) const;
  std::string describe() const;
};

InteractionFunction no_coupling();
/// Entries of the interaction-structure table used by the coupling sweep (index 0..4).
InteractionFunction table_coupling(std::size_t index);
std::size_t table_coupling_count();

struct TrajectoryData {
  std::string model_name;
  std::uint64_t seed = 0;
  double dt = 1.0;
  Vector true_theta;
  /// Per agent, rows are time steps t = 1..T.
  std::vector<Matrix> inputs;   // T x m
  std::vector<Matrix> outputs;  // T x p
  std::vector<Matrix> states;   // T x n, empty when not retained

  std::size_t num_agents() const noexcept { return outputs.size(); }
  std::size_t horizon() const noexcept { return outputs.empty() ? 0 : static_cast<std::size_t>(outputs[0].rows()); }
  bool has_states() const noexcept { return !states.empty(); }
};

/// f(x,u,theta) + coupling_gain * coupling + sqrt(scale) * process_noise.
/// Throws NumericalError carrying (t, v) when the result is not finite.
Vector step_agent(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u,
                  const Vector& coupling, const Vector& process_noise, std::ptrdiff_t t = -1,
                  std::ptrdiff_t v = -1);

/// h(x,u,theta) + measurement_noise.
Vector observe_agent(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u,
                     const Vector& measurement_noise, std::ptrdiff_t t = -1, std::ptrdiff_t v = -1);

/// sum over predecessors j of g(x_j - x_v).
Vector coupling_term(const InteractionFunction& g, const DirectedNetwork& net,
                     const std::vector<Vector>& states, AgentId v);

struct SimulationOptions {
  bool keep_states = true;
};

/// Synchronous network simulation from x(1) = x0[v]; noise streams keyed by (seed, v, t).
TrajectoryData simulate_network(const ModelClass& model, const Vector& theta, const InteractionFunction& g,
                                const DirectedNetwork& net, std::size_t horizon,
                                const std::vector<Vector>& x0, std::uint64_t seed,
                                const SimulationOptions& options = {});

/// Continuous-time drift dx/dt = d0(x,u) + D(x,u) theta, observed without discretization.
struct ContinuousModel {
  std::string name;
  std::size_t state_dim = 1;
  std::size_t input_dim = 0;
  std::size_t output_dim = 1;
  std::vector<std::string> param_names;
  BasisFn drift;
  BasisFn observation;
  NoiseSpec noise;
  Vector initial_mean;
  double initial_var = 1e-4;
  Vector true_theta;
  std::optional<Vector> stable_anchor;
  std::function<Vector(double)> input_signal;
};

/// Forward Euler: x <- x + dt * drift(x), process noise scaled by sqrt(dt),
/// coupling increments scaled by dt.
ModelClass discretize_continuous(const ContinuousModel& model, double dt);

/// A built-in case study: model, default interaction and initial state.
struct BuiltinSystem {
  ModelClass model;
  InteractionFunction coupling;
  Vector x0;
};

/// x(t+1) = a x + b x/(1+x^2) + c u(t) + eps, y = d x^2 + eta, u(t) = cos(1.2 t).
/// theta = [a, b, c, d, s, w].
BuiltinSystem benchmark_system(const Vector& theta);
BuiltinSystem benchmark_system();
/// dx/dt = a x + eps + 0.05 sum_j (dx^2/(dx^2+1)), y = b x + eta. theta = [a, b, s, w].
BuiltinSystem gene_regulation_system(double dt = 0.01);
/// Two-component FitzHugh-Nagumo, y = x1 + x2 + eta. theta = [a, b, c, d, e, f, s, w].
BuiltinSystem fitzhugh_nagumo_system(double dt = 0.01);
BuiltinSystem builtin_system(const std::string& name, double dt = 0.01);
std::vector<std::string> builtin_system_names();

std::vector<Vector> uniform_initial_states(const Vector& x0, std::size_t num_agents);

void save_trajectory_csv(const std::string& path, const TrajectoryData& data);
void save_trajectory_metadata(const std::string& path, const TrajectoryData& data);
/// Reads the CSV written by save_trajectory_csv plus its JSON sidecar; the
/// dimensions come from the CSV header.
TrajectoryData load_trajectory(const std::string& csv_path, const std::string& metadata_path);

}  // namespace pcdpem
