#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pcdpem/em.hpp"
#include "pcdpem/model.hpp"
#include "pcdpem/network.hpp"

namespace pcdpem {

struct ExperimentConfig {
  std::string model = "benchmark";
  std::size_t num_agents = 20;
  std::size_t horizon = 100;
  std::size_t num_particles = 500;
  double dt = 0.01;  // continuous-time models only
  std::size_t repetitions = 10;
  std::optional<double> process_var;      // overrides theta*[s]
  std::optional<double> measurement_var;  // overrides theta*[w]
  std::optional<std::size_t> coupling;    // interaction-table index; default: the model's own
  double init_fraction = 0.5;
  std::uint64_t seed = 1;
  std::string out_dir = "runs";

  std::size_t attach = 5;
  double target_total_degree = 5.1;

  int max_iterations = 20;
  double tolerance = 1e-4;
  double delta = 1e-3;
  std::size_t max_consensus_rounds = 1000;
  bool constrained = true;
  QbarForm form = QbarForm::Network;
  WitnessSource witness_source = WitnessSource::BlockEstimates;
  std::size_t workers = 0;

  void validate() const;
  /// V=100, M=1000, R=100.
  void apply_paper_scale();
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_experiment_config(const std::string& path);

/// Model with the configured noise overrides applied to its true theta.
BuiltinSystem configured_system(const ExperimentConfig& c);
PcdpemConfig pcdpem_config(const ExperimentConfig& c, std::uint64_t seed);
/// Deletion fraction bringing the BA graph to the target average total degree.
double deletion_fraction_for(std::size_t num_agents, std::size_t attach, double target_total_degree);
DirectedNetwork experiment_network(const ExperimentConfig& c, std::uint64_t seed);

struct RunSeeds {
  std::uint64_t topology = 0;
  std::uint64_t data = 0;
  std::uint64_t init = 0;
  std::uint64_t em = 0;
};
RunSeeds run_seeds(std::uint64_t root, std::size_t run);

struct RunRecord {
  std::size_t run = 0;
  RunSeeds seeds;
  Vector theta_true;
  Vector theta0;
  Vector theta_hat;
  double relative_error = 0;
  Vector parameter_errors;  // |theta_hat_i - theta*_i| / |theta*_i|
  std::size_t iterations = 0;
  std::vector<double> iteration_seconds;
  double total_seconds = 0;
  std::vector<std::size_t> consensus_rounds;  // per EM iteration
  std::size_t messages = 0;
  std::size_t scalars_per_message = 0;
  std::size_t edges = 0;
  std::size_t max_in_degree = 0;
  bool converged = false;
  bool failed = false;
  bool diverged = false;
  std::string error;
  /// Identification output including history, certificate and witnesses.
  std::optional<ThetaEstimate> estimate;
};

nlohmann::json to_json(const RunRecord& r);

double relative_error(const Vector& estimate, const Vector& truth);
Vector parameter_errors(const Vector& estimate, const Vector& truth);

/// Simulate, identify and score one Monte Carlo repetition.
RunRecord run_once(const ExperimentConfig& c, std::size_t run);

struct MonteCarloSummary {
  ExperimentConfig config;
  std::vector<RunRecord> records;  // ordered by run index
  std::vector<std::string> param_names;
  Vector theta_true;
  Vector mean;
  Vector stddev;  // sample standard deviation; 0 when a single run succeeded
  Vector median_parameter_errors;
  double median_error = 0;
  double mean_iterations = 0;
  std::size_t failures = 0;
  std::size_t divergences = 0;

  std::size_t successes() const noexcept { return records.size() - failures - divergences; }
};

/// Recomputes the aggregate fields from `records`.
void summarize(MonteCarloSummary& s);
MonteCarloSummary monte_carlo(const ExperimentConfig& c);

nlohmann::json to_json(const MonteCarloSummary& s);
void save_records_csv(const std::string& path, const MonteCarloSummary& s);

enum class SweepAxis { Particles, Noise, Coupling };
SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepPoint {
  double value = 0;          // particle count, noise level index, or coupling index
  std::string label;
  MonteCarloSummary summary;
};

/// Noise conditions as (process variance, measurement variance).
std::vector<std::pair<double, double>> noise_levels();

std::vector<SweepPoint> sweep(const ExperimentConfig& c, SweepAxis axis, const std::vector<double>& values);
/// One row per (value, run).
void save_sweep_csv(const std::string& path, SweepAxis axis, const std::vector<SweepPoint>& points);

struct TimingRow {
  std::size_t num_particles = 0;
  double mean_iteration_seconds = 0;
  double mean_total_seconds = 0;
  double mean_iterations = 0;
  double mean_rounds = 0;
  std::size_t max_messages_per_round = 0;
  bool messages_per_round_exact = true;  // messages == rounds * V on every run
  bool within_bound = true;              // scalars sent <= worst-case bound on every run
};

/// Worst-case scalars per gossip round: E * (message length) * J_max.
double communication_bound(std::size_t edges, std::size_t scalars_per_message, std::size_t max_in_degree);
std::vector<TimingRow> timing_report(const std::vector<SweepPoint>& particle_sweep);
void save_timing_csv(const std::string& path, const std::vector<TimingRow>& rows);

/// Same run with the contraction constraint disabled.
RunRecord ablation_no_stability(const ExperimentConfig& c, std::size_t run);

/// Published values of the comparison method for the report columns (NaN where absent).
std::vector<double> comparison_values(const std::string& model);

/// Table-style CSV: parameter, true, mean, std, comparison.
void save_parameter_table(const std::string& path, const MonteCarloSummary& s);

}  // namespace pcdpem
