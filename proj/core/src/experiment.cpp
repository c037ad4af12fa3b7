#include "pcdpem/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcdpem/errors.hpp"
#include "pcdpem/parallel.hpp"
#include "pcdpem/rng.hpp"

namespace pcdpem {

namespace {

using Index = Eigen::Index;
using nlohmann::json;

std::vector<double> to_vec(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

const char* form_name(QbarForm f) {
  switch (f) {
    case QbarForm::Network: return "network";
    case QbarForm::SingleAgent: return "single_agent";
    case QbarForm::Aggregate: return "aggregate";
  }
  return "network";
}

QbarForm parse_form(const std::string& s) {
  if (s == "network") return QbarForm::Network;
  if (s == "single_agent") return QbarForm::SingleAgent;
  if (s == "aggregate") return QbarForm::Aggregate;
  throw ParameterError("unknown surrogate form '" + s + "'");
}

const char* witness_name(WitnessSource w) {
  switch (w) {
    case WitnessSource::BlockEstimates: return "block_estimates";
    case WitnessSource::NetworkMean: return "network_mean";
    case WitnessSource::Aggregate: return "aggregate";
  }
  return "block_estimates";
}

WitnessSource parse_witness(const std::string& s) {
  if (s == "block_estimates") return WitnessSource::BlockEstimates;
  if (s == "network_mean") return WitnessSource::NetworkMean;
  if (s == "aggregate") return WitnessSource::Aggregate;
  throw ParameterError("unknown witness source '" + s + "'");
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  const auto names = builtin_system_names();
  if (std::find(names.begin(), names.end(), model) == names.end()) {
    throw ParameterError("unknown model '" + model + "'");
  }
  if (num_agents < 2) throw ParameterError("V must be at least 2");
  if (attach < 1 || attach >= num_agents) throw ParameterError("attach must satisfy 1 <= attach < V");
  if (horizon < 2) throw ParameterError("T must be at least 2");
  if (num_particles < 2) throw ParameterError("M must be at least 2");
  if (!(dt > 0.0)) throw ParameterError("dt must be positive");
  if (repetitions < 1) throw ParameterError("R must be at least 1");
  if (!(init_fraction > 0.0 && init_fraction <= 1.0)) throw ParameterError("init fraction must lie in (0, 1]");
  if (process_var && !(*process_var > 0.0)) throw ParameterError("process variance override must be positive");
  if (measurement_var && !(*measurement_var > 0.0)) {
    throw ParameterError("measurement variance override must be positive");
  }
  if (coupling && *coupling >= table_coupling_count()) throw ParameterError("coupling index out of range");
  if (max_iterations < 1) throw ParameterError("max_iterations must be positive");
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
}

void ExperimentConfig::apply_paper_scale() {
  num_agents = 100;
  num_particles = 1000;
  repetitions = 100;
}

json to_json(const ExperimentConfig& c) {
  json j{{"model", c.model},
         {"num_agents", c.num_agents},
         {"horizon", c.horizon},
         {"num_particles", c.num_particles},
         {"dt", c.dt},
         {"repetitions", c.repetitions},
         {"process_var", c.process_var ? json(*c.process_var) : json(nullptr)},
         {"measurement_var", c.measurement_var ? json(*c.measurement_var) : json(nullptr)},
         {"coupling", c.coupling ? json(*c.coupling) : json(nullptr)},
         {"init_fraction", c.init_fraction},
         {"seed", c.seed},
         {"out_dir", c.out_dir},
         {"attach", c.attach},
         {"target_total_degree", c.target_total_degree},
         {"max_iterations", c.max_iterations},
         {"tolerance", c.tolerance},
         {"delta", c.delta},
         {"max_consensus_rounds", c.max_consensus_rounds},
         {"constrained", c.constrained},
         {"form", form_name(c.form)},
         {"witness_source", witness_name(c.witness_source)},
         {"workers", c.workers}};
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ParameterError("experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") c.model = value.get<std::string>();
    else if (key == "num_agents") c.num_agents = value.get<std::size_t>();
    else if (key == "horizon") c.horizon = value.get<std::size_t>();
    else if (key == "num_particles") c.num_particles = value.get<std::size_t>();
    else if (key == "dt") c.dt = value.get<double>();
    else if (key == "repetitions") c.repetitions = value.get<std::size_t>();
    else if (key == "process_var") c.process_var = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "measurement_var")
      c.measurement_var = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "coupling")
      c.coupling = value.is_null() ? std::nullopt : std::optional<std::size_t>(value.get<std::size_t>());
    else if (key == "init_fraction") c.init_fraction = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "out_dir") c.out_dir = value.get<std::string>();
    else if (key == "attach") c.attach = value.get<std::size_t>();
    else if (key == "target_total_degree") c.target_total_degree = value.get<double>();
    else if (key == "max_iterations") c.max_iterations = value.get<int>();
    else if (key == "tolerance") c.tolerance = value.get<double>();
    else if (key == "delta") c.delta = value.get<double>();
    else if (key == "max_consensus_rounds") c.max_consensus_rounds = value.get<std::size_t>();
    else if (key == "constrained") c.constrained = value.get<bool>();
    else if (key == "form") c.form = parse_form(value.get<std::string>());
    else if (key == "witness_source") c.witness_source = parse_witness(value.get<std::string>());
    else if (key == "workers") c.workers = value.get<std::size_t>();
    else throw ParameterError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ParameterError("config " + path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

BuiltinSystem configured_system(const ExperimentConfig& c) {
  BuiltinSystem sys = builtin_system(c.model, c.dt);
  if (c.process_var) sys.model.true_theta[static_cast<Index>(sys.model.noise.process_var_index)] = *c.process_var;
  if (c.measurement_var) {
    sys.model.true_theta[static_cast<Index>(sys.model.noise.measurement_var_index)] = *c.measurement_var;
  }
  if (c.coupling) sys.coupling = table_coupling(*c.coupling);
  return sys;
}

PcdpemConfig pcdpem_config(const ExperimentConfig& c, std::uint64_t seed) {
  PcdpemConfig p;
  p.num_particles = c.num_particles;
  p.delta = c.delta;
  p.max_consensus_rounds = c.max_consensus_rounds;
  p.tolerance = c.tolerance;
  p.max_iterations = c.max_iterations;
  p.seed = seed;
  p.constrained = c.constrained;
  p.form = c.form;
  p.witness_source = c.witness_source;
  p.workers = 1;
  return p;
}

double deletion_fraction_for(std::size_t V, std::size_t attach, double target) {
  // Star seed plus `attach` edges per later node, every edge as two arcs.
  const double arcs = 2.0 * static_cast<double>(attach * (V - attach));
  const double keep = target * static_cast<double>(V) / 2.0;
  return std::clamp(1.0 - keep / arcs, 0.0, 0.95);
}

DirectedNetwork experiment_network(const ExperimentConfig& c, std::uint64_t seed) {
  return generate_ba_directed(c.num_agents, c.attach, deletion_fraction_for(c.num_agents, c.attach, c.target_total_degree),
                              seed);
}

RunSeeds run_seeds(std::uint64_t root, std::size_t run) {
  const auto r = static_cast<std::uint64_t>(run);
  return {derive_seed(root, {stream::kExperiment, r, stream::kTopology}),
          derive_seed(root, {stream::kExperiment, r, stream::kProcessNoise}),
          derive_seed(root, {stream::kExperiment, r, stream::kThetaInit}),
          derive_seed(root, {stream::kExperiment, r, stream::kParticleFilter})};
}

// ---------------------------------------------------------------------------
// Runs

double relative_error(const Vector& estimate, const Vector& truth) {
  if (estimate.size() != truth.size()) throw ParameterError("relative_error: size mismatch");
  const double t = truth.norm();
  if (!(t > 0.0)) throw ParameterError("relative_error: true parameter vector is zero");
  return (estimate - truth).norm() / t;
}

Vector parameter_errors(const Vector& estimate, const Vector& truth) {
  if (estimate.size() != truth.size()) throw ParameterError("parameter_errors: size mismatch");
  Vector e(truth.size());
  for (Index i = 0; i < truth.size(); ++i) {
    const double d = std::abs(estimate[i] - truth[i]);
    e[i] = truth[i] != 0.0 ? d / std::abs(truth[i]) : d;
  }
  return e;
}

json to_json(const RunRecord& r) {
  json j{{"run", r.run},
         {"seeds", {{"topology", r.seeds.topology}, {"data", r.seeds.data}, {"init", r.seeds.init}, {"em", r.seeds.em}}},
         {"theta_true", to_vec(r.theta_true)},
         {"theta0", to_vec(r.theta0)},
         {"theta_hat", to_vec(r.theta_hat)},
         {"relative_error", r.relative_error},
         {"parameter_errors", to_vec(r.parameter_errors)},
         {"iterations", r.iterations},
         {"iteration_seconds", r.iteration_seconds},
         {"total_seconds", r.total_seconds},
         {"consensus_rounds", r.consensus_rounds},
         {"messages", r.messages},
         {"scalars_per_message", r.scalars_per_message},
         {"edges", r.edges},
         {"max_in_degree", r.max_in_degree},
         {"converged", r.converged},
         {"failed", r.failed},
         {"diverged", r.diverged},
         {"error", r.error}};
  return j;
}

namespace {

RunRecord run_with(const ExperimentConfig& c, std::size_t run) {
  const BuiltinSystem sys = configured_system(c);
  const ModelClass& model = sys.model;
  RunRecord rec;
  rec.run = run;
  rec.seeds = run_seeds(c.seed, run);
  rec.theta_true = model.true_theta;
  const DirectedNetwork net = experiment_network(c, rec.seeds.topology);
  rec.edges = net.num_edges();
  rec.max_in_degree = net.max_in_degree();
  SimulationOptions sim;
  sim.keep_states = false;
  const TrajectoryData data = simulate_network(model, model.true_theta, sys.coupling, net, c.horizon,
                                               uniform_initial_states(sys.x0, c.num_agents), rec.seeds.data, sim);
  rec.theta0 = random_initial_theta(model.true_theta, c.init_fraction, rec.seeds.init);
  rec.theta_hat = rec.theta0;

  auto take_history = [&](const ThetaEstimate& est) {
    rec.iterations = est.iterations();
    rec.total_seconds = est.total_seconds;
    for (const auto& h : est.history) {
      rec.iteration_seconds.push_back(h.seconds);
      rec.consensus_rounds.push_back(h.consensus.rounds_run);
      rec.messages += h.consensus.messages_sent;
      rec.scalars_per_message = h.consensus.scalars_per_message;
    }
  };

  try {
    ThetaEstimate est = run_pcdpem(data, net, model, rec.theta0, pcdpem_config(c, rec.seeds.em));
    rec.theta_hat = est.theta;
    rec.converged = est.converged;
    take_history(est);
    rec.estimate = std::move(est);
  } catch (const DivergenceError& e) {
    rec.diverged = true;
    rec.error = e.what();
    rec.iterations = static_cast<std::size_t>(e.iteration()) + 1;
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  rec.relative_error = relative_error(rec.theta_hat, rec.theta_true);
  rec.parameter_errors = parameter_errors(rec.theta_hat, rec.theta_true);
  return rec;
}

}  // namespace

RunRecord run_once(const ExperimentConfig& c, std::size_t run) {
  c.validate();
  return run_with(c, run);
}

RunRecord ablation_no_stability(const ExperimentConfig& c, std::size_t run) {
  ExperimentConfig u = c;
  u.constrained = false;
  u.validate();
  return run_with(u, run);
}

// ---------------------------------------------------------------------------
// Monte Carlo

void summarize(MonteCarloSummary& s) {
  const auto q = static_cast<Index>(s.theta_true.size());
  s.failures = 0;
  s.divergences = 0;
  std::vector<const RunRecord*> ok;
  for (const auto& r : s.records) {
    if (r.failed) ++s.failures;
    else if (r.diverged) ++s.divergences;
    else ok.push_back(&r);
  }
  s.mean = Vector::Constant(q, std::numeric_limits<double>::quiet_NaN());
  s.stddev = s.mean;
  s.median_parameter_errors = s.mean;
  s.median_error = std::numeric_limits<double>::quiet_NaN();
  s.mean_iterations = std::numeric_limits<double>::quiet_NaN();
  if (ok.empty()) return;
  const double count = static_cast<double>(ok.size());
  s.mean.setZero();
  for (const auto* r : ok) s.mean += r->theta_hat;
  s.mean /= count;
  s.stddev.setZero();
  if (ok.size() > 1) {
    for (const auto* r : ok) s.stddev += (r->theta_hat - s.mean).cwiseAbs2();
    s.stddev = (s.stddev / (count - 1.0)).cwiseSqrt();
  }
  std::vector<double> errs;
  double iters = 0.0;
  for (const auto* r : ok) {
    errs.push_back(r->relative_error);
    iters += static_cast<double>(r->iterations);
  }
  s.median_error = median(errs);
  s.mean_iterations = iters / count;
  for (Index i = 0; i < q; ++i) {
    std::vector<double> e;
    for (const auto* r : ok) e.push_back(r->parameter_errors[i]);
    s.median_parameter_errors[i] = median(e);
  }
}

MonteCarloSummary monte_carlo(const ExperimentConfig& c) {
  c.validate();
  MonteCarloSummary s;
  s.config = c;
  const BuiltinSystem sys = configured_system(c);
  s.param_names = sys.model.param_names;
  s.theta_true = sys.model.true_theta;
  s.records.resize(c.repetitions);
  parallel_for(c.repetitions, c.workers, [&](std::size_t r) { s.records[r] = run_with(c, r); });
  summarize(s);
  return s;
}

json to_json(const MonteCarloSummary& s) {
  json runs = json::array();
  for (const auto& r : s.records) runs.push_back(to_json(r));
  return {{"config", to_json(s.config)},
          {"param_names", s.param_names},
          {"theta_true", to_vec(s.theta_true)},
          {"mean", to_vec(s.mean)},
          {"std", to_vec(s.stddev)},
          {"median_parameter_errors", to_vec(s.median_parameter_errors)},
          {"median_error", s.median_error},
          {"mean_iterations", s.mean_iterations},
          {"failures", s.failures},
          {"divergences", s.divergences},
          {"runs", runs}};
}

void save_records_csv(const std::string& path, const MonteCarloSummary& s) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write " + path);
  out << "run";
  for (const auto& n : s.param_names) out << ",theta_" << n;
  out << ",relative_error,iterations,total_seconds,messages,converged,failed,diverged\n";
  out << std::setprecision(12);
  for (const auto& r : s.records) {
    out << (r.run + 1);
    for (Index i = 0; i < r.theta_hat.size(); ++i) out << ',' << r.theta_hat[i];
    out << ',' << r.relative_error << ',' << r.iterations << ',' << r.total_seconds << ',' << r.messages << ','
        << r.converged << ',' << r.failed << ',' << r.diverged << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sweeps and reports

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "particles") return SweepAxis::Particles;
  if (name == "noise") return SweepAxis::Noise;
  if (name == "coupling") return SweepAxis::Coupling;
  throw ParameterError("unknown sweep axis '" + name + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Particles: return "particles";
    case SweepAxis::Noise: return "noise";
    case SweepAxis::Coupling: return "coupling";
  }
  return "particles";
}

std::vector<std::pair<double, double>> noise_levels() { return {{0.05, 0.1}, {0.5, 1.0}, {5.0, 10.0}, {50.0, 100.0}}; }

std::vector<SweepPoint> sweep(const ExperimentConfig& c, SweepAxis axis, const std::vector<double>& values) {
  if (values.empty()) throw ParameterError("sweep: no values");
  std::vector<SweepPoint> points;
  for (double v : values) {
    ExperimentConfig cv = c;
    SweepPoint p;
    p.value = v;
    switch (axis) {
      case SweepAxis::Particles:
        if (!(v >= 2.0) || v != std::floor(v)) throw ParameterError("sweep: particle counts must be integers >= 2");
        cv.num_particles = static_cast<std::size_t>(v);
        p.label = "M=" + std::to_string(cv.num_particles);
        break;
      case SweepAxis::Noise: {
        const auto levels = noise_levels();
        if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(levels.size())) {
          throw ParameterError("sweep: noise level index out of range");
        }
        const auto [s, w] = levels[static_cast<std::size_t>(v)];
        cv.process_var = s;
        cv.measurement_var = w;
        std::ostringstream label;
        label << "N(" << s << "," << w << ")";
        p.label = label.str();
        break;
      }
      case SweepAxis::Coupling:
        if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(table_coupling_count())) {
          throw ParameterError("sweep: coupling index out of range");
        }
        cv.coupling = static_cast<std::size_t>(v);
        p.label = table_coupling(*cv.coupling).describe();
        break;
    }
    p.summary = monte_carlo(cv);
    points.push_back(std::move(p));
  }
  return points;
}

void save_sweep_csv(const std::string& path, SweepAxis axis, const std::vector<SweepPoint>& points) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write " + path);
  out << to_string(axis) << ",label,run,relative_error,iterations,mean_iteration_seconds,total_seconds,messages,status\n";
  out << std::setprecision(12);
  for (const auto& p : points) {
    for (const auto& r : p.summary.records) {
      const double mean_it = r.iteration_seconds.empty()
                                 ? 0.0
                                 : std::accumulate(r.iteration_seconds.begin(), r.iteration_seconds.end(), 0.0) /
                                       static_cast<double>(r.iteration_seconds.size());
      out << p.value << ",\"" << p.label << "\"," << (r.run + 1) << ',' << r.relative_error << ',' << r.iterations
          << ',' << mean_it << ',' << r.total_seconds << ',' << r.messages << ','
          << (r.failed ? "failed" : r.diverged ? "diverged" : "ok") << '\n';
    }
  }
}

double communication_bound(std::size_t edges, std::size_t scalars_per_message, std::size_t max_in_degree) {
  return static_cast<double>(edges) * static_cast<double>(scalars_per_message) * static_cast<double>(max_in_degree);
}

std::vector<TimingRow> timing_report(const std::vector<SweepPoint>& points) {
  std::vector<TimingRow> rows;
  for (const auto& p : points) {
    TimingRow row;
    row.num_particles = p.summary.config.num_particles;
    const std::size_t V = p.summary.config.num_agents;
    double it_sum = 0, tot_sum = 0, iters = 0, rounds = 0;
    std::size_t count = 0, iter_count = 0;
    for (const auto& r : p.summary.records) {
      if (r.failed || r.diverged) continue;
      ++count;
      tot_sum += r.total_seconds;
      iters += static_cast<double>(r.iterations);
      std::size_t total_rounds = 0;
      for (std::size_t k = 0; k < r.iteration_seconds.size(); ++k) {
        it_sum += r.iteration_seconds[k];
        ++iter_count;
      }
      for (auto rr : r.consensus_rounds) {
        total_rounds += rr;
        rounds += static_cast<double>(rr);
      }
      if (r.messages != total_rounds * V) row.messages_per_round_exact = false;
      if (total_rounds) row.max_messages_per_round = std::max(row.max_messages_per_round, r.messages / total_rounds);
      const double sent = static_cast<double>(r.messages) * static_cast<double>(r.scalars_per_message);
      const double bound =
          static_cast<double>(total_rounds) * communication_bound(r.edges, r.scalars_per_message, r.max_in_degree);
      if (sent > bound) row.within_bound = false;
    }
    if (count) {
      row.mean_total_seconds = tot_sum / static_cast<double>(count);
      row.mean_iterations = iters / static_cast<double>(count);
      row.mean_rounds = iter_count ? rounds / static_cast<double>(iter_count) : 0.0;
    }
    if (iter_count) row.mean_iteration_seconds = it_sum / static_cast<double>(iter_count);
    rows.push_back(row);
  }
  return rows;
}

void save_timing_csv(const std::string& path, const std::vector<TimingRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write " + path);
  out << "particles,mean_iteration_seconds,mean_total_seconds,mean_iterations,mean_rounds,messages_per_round,"
         "messages_exact,within_bound\n";
  out << std::setprecision(12);
  for (const auto& r : rows) {
    out << r.num_particles << ',' << r.mean_iteration_seconds << ',' << r.mean_total_seconds << ',' << r.mean_iterations
        << ',' << r.mean_rounds << ',' << r.max_messages_per_round << ',' << r.messages_per_round_exact << ','
        << r.within_bound << '\n';
  }
}

std::vector<double> comparison_values(const std::string& model) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (model == "gene_regulation") return {-0.197, nan, nan, nan};
  if (model == "fitzhugh_nagumo") return {0.989, -0.993, -0.996, 0.279, 0.499, -0.040, nan, nan};
  const auto sys = builtin_system(model);
  return std::vector<double>(sys.model.num_params(), nan);
}

void save_parameter_table(const std::string& path, const MonteCarloSummary& s) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write " + path);
  const auto cmp = comparison_values(s.config.model);
  out << "parameter,true,mean,std,median_error,comparison\n";
  out << std::setprecision(8);
  for (std::size_t i = 0; i < s.param_names.size(); ++i) {
    const auto k = static_cast<Index>(i);
    out << s.param_names[i] << ',' << s.theta_true[k] << ',' << s.mean[k] << ',' << s.stddev[k] << ','
        << s.median_parameter_errors[k] << ',';
    if (!std::isnan(cmp[i])) out << cmp[i];
    out << '\n';
  }
}

}  // namespace pcdpem
