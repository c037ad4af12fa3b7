#include "pcdpem/model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcdpem/errors.hpp"
#include "pcdpem/rng.hpp"

namespace pcdpem {

namespace {

struct Scratch {
  std::vector<double> offset;
  std::vector<double> design;
};

Scratch& scratch(std::size_t rows, std::size_t q) {
  thread_local Scratch s;
  s.offset.assign(rows, 0.0);
  s.design.assign(rows * q, 0.0);
  return s;
}

void affine_eval(const BasisFn& fn, std::size_t rows, std::size_t q, const double* x, const double* u,
                 const Vector& theta, double* out) {
  Scratch& s = scratch(rows, q);
  fn(x, u, s.offset.data(), s.design.data());
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = s.offset[r];
    const double* row = s.design.data() + r * q;
    for (std::size_t i = 0; i < q; ++i) acc += row[i] * theta[static_cast<Eigen::Index>(i)];
    out[r] = acc;
  }
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

std::vector<std::size_t> ModelClass::structural_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < num_params(); ++i) {
    if (!is_noise_index(i)) idx.push_back(i);
  }
  return idx;
}

void ModelClass::transition_mean(const double* x, const double* u, const Vector& theta, double* out) const {
  affine_eval(transition, state_dim, num_params(), x, u, theta, out);
}

void ModelClass::observation_mean(const double* x, const double* u, const Vector& theta, double* out) const {
  affine_eval(observation, output_dim, num_params(), x, u, theta, out);
}

Vector ModelClass::transition_mean(const Vector& x, const Vector& u, const Vector& theta) const {
  Vector out(static_cast<Eigen::Index>(state_dim));
  transition_mean(x.data(), u.size() ? u.data() : nullptr, theta, out.data());
  return out;
}

Vector ModelClass::observation_mean(const Vector& x, const Vector& u, const Vector& theta) const {
  Vector out(static_cast<Eigen::Index>(output_dim));
  observation_mean(x.data(), u.size() ? u.data() : nullptr, theta, out.data());
  return out;
}

double ModelClass::process_variance(const Vector& theta) const {
  return theta[static_cast<Eigen::Index>(noise.process_var_index)] * noise.process_scale;
}

double ModelClass::measurement_variance(const Vector& theta) const {
  return theta[static_cast<Eigen::Index>(noise.measurement_var_index)];
}

double ModelClass::process_noise_mean() const { return noise.process_mean * std::sqrt(noise.process_scale); }

void ModelClass::validate_theta(const Vector& theta) const {
  if (static_cast<std::size_t>(theta.size()) != num_params()) {
    throw ParameterError(name + ": theta has " + std::to_string(theta.size()) + " entries, expected " +
                         std::to_string(num_params()));
  }
  if (!(process_variance(theta) > 0.0) || !(measurement_variance(theta) > 0.0)) {
    throw ParameterError(name + ": noise variances in theta must be strictly positive");
  }
}

// ---------------------------------------------------------------------------
// Interaction functions

Vector InteractionFunction::evaluate(const Vector& diff, std::size_t degree) const {
  Vector out = Vector::Zero(diff.size());
  if (kind == CouplingKind::None) return out;
  double scale = strength;
  if (normalize_by_degree) scale /= static_cast<double>(std::max<std::size_t>(degree, 1));
  for (Eigen::Index k = 0; k < diff.size(); ++k) {
    if (!component_mask.empty() && !component_mask[static_cast<std::size_t>(k)]) continue;
    const double d = diff[k];
    double g = 0.0;
    switch (kind) {
      case CouplingKind::Sine:
        g = std::sin(d);
        break;
      case CouplingKind::SineSquared: {
        const double s = std::sin(d);
        g = s * s;
        break;
      }
      case CouplingKind::Linear:
        g = d;
        break;
      case CouplingKind::Hill: {
        const double p = std::pow(std::abs(d), hill_exponent);
        g = p / (p + 1.0);
        break;
      }
      case CouplingKind::None:
        break;
    }
    out[k] = scale * g;
  }
  return out;
}

double InteractionFunction::jacobian_bound(std::size_t degree) const {
  double per_edge = 0.0;
  switch (kind) {
    case CouplingKind::None:
      return 0.0;
    case CouplingKind::Sine:
    case CouplingKind::SineSquared:
    case CouplingKind::Linear:
      per_edge = 1.0;
      break;
    case CouplingKind::Hill: {
      // max over d >= 0 of d/dd [d^a / (d^a + 1)]
      const double a = hill_exponent;
      const double d = std::pow((a - 1.0) / (a + 1.0), 1.0 / a);
      const double p = std::pow(d, a);
      per_edge = a * std::pow(d, a - 1.0) / ((p + 1.0) * (p + 1.0));
      break;
    }
  }
  const double j = static_cast<double>(std::max<std::size_t>(degree, 1));
  const double scale = normalize_by_degree ? std::abs(strength) / j : std::abs(strength);
  return scale * per_edge * j;
}

std::string InteractionFunction::describe() const {
  std::ostringstream os;
  const char* deg = normalize_by_degree ? "/J_v" : "";
  switch (kind) {
    case CouplingKind::None:
      return "none";
    case CouplingKind::Sine:
      os << strength << deg << "*sin(dx)";
      break;
    case CouplingKind::SineSquared:
      os << strength << deg << "*sin(dx)^2";
      break;
    case CouplingKind::Linear:
      os << strength << deg << "*dx";
      break;
    case CouplingKind::Hill:
      os << strength << deg << "*dx^" << hill_exponent << "/(dx^" << hill_exponent << "+1)";
      break;
  }
  return os.str();
}

InteractionFunction no_coupling() { return {}; }

InteractionFunction table_coupling(std::size_t index) {
  switch (index) {
    case 0:
      return {CouplingKind::Sine, 10.0, true, 2.0, {}};
    case 1:
      return {CouplingKind::SineSquared, 10.0, true, 2.0, {}};
    case 2:
      return {CouplingKind::Sine, -1.0, true, 2.0, {}};
    case 3:
      return {CouplingKind::SineSquared, -1.0, true, 2.0, {}};
    case 4:
      return {CouplingKind::Linear, 1.0, true, 2.0, {}};
    default:
      throw ParameterError("coupling table index out of range: " + std::to_string(index));
  }
}

std::size_t table_coupling_count() { return 5; }

// ---------------------------------------------------------------------------
// Single-agent maps

Vector step_agent(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u,
                  const Vector& coupling, const Vector& process_noise, std::ptrdiff_t t, std::ptrdiff_t v) {
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  if (x.size() != n || coupling.size() != n || process_noise.size() != n ||
      static_cast<std::size_t>(u.size()) != model.input_dim) {
    throw ParameterError(model.name + ": step_agent dimension mismatch");
  }
  Vector next = model.transition_mean(x, u, theta);
  next += model.coupling_gain * coupling + std::sqrt(model.noise.process_scale) * process_noise;
  if (!all_finite(next)) {
    throw NumericalError(model.name + ": non-finite state at t=" + std::to_string(t) + ", agent " +
                             std::to_string(v),
                         t, v);
  }
  return next;
}

Vector observe_agent(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u,
                     const Vector& measurement_noise, std::ptrdiff_t t, std::ptrdiff_t v) {
  if (x.size() != static_cast<Eigen::Index>(model.state_dim) ||
      measurement_noise.size() != static_cast<Eigen::Index>(model.output_dim) ||
      static_cast<std::size_t>(u.size()) != model.input_dim) {
    throw ParameterError(model.name + ": observe_agent dimension mismatch");
  }
  Vector y = model.observation_mean(x, u, theta) + measurement_noise;
  if (!all_finite(y)) {
    throw NumericalError(model.name + ": non-finite output at t=" + std::to_string(t) + ", agent " +
                             std::to_string(v),
                         t, v);
  }
  return y;
}

Vector coupling_term(const InteractionFunction& g, const DirectedNetwork& net, const std::vector<Vector>& states,
                     AgentId v) {
  if (states.size() != net.num_agents()) throw ParameterError("coupling_term: one state per agent required");
  const auto& preds = net.predecessors(v);
  Vector acc = Vector::Zero(states[v].size());
  for (AgentId j : preds) acc += g.evaluate(states[j] - states[v], preds.size());
  return acc;
}

TrajectoryData simulate_network(const ModelClass& model, const Vector& theta, const InteractionFunction& g,
                                const DirectedNetwork& net, std::size_t horizon, const std::vector<Vector>& x0,
                                std::uint64_t seed, const SimulationOptions& options) {
  if (horizon < 1) throw ParameterError("simulate_network: horizon must be >= 1");
  const std::size_t V = net.num_agents();
  if (x0.size() != V) throw ParameterError("simulate_network: x0 must hold one state per agent");
  model.validate_theta(theta);
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  const auto m = static_cast<Eigen::Index>(model.input_dim);
  const auto p = static_cast<Eigen::Index>(model.output_dim);
  const auto T = static_cast<Eigen::Index>(horizon);

  TrajectoryData data;
  data.model_name = model.name;
  data.seed = seed;
  data.dt = model.dt;
  data.true_theta = theta;
  data.inputs.assign(V, Matrix::Zero(T, m));
  data.outputs.assign(V, Matrix::Zero(T, p));
  data.states.assign(V, Matrix::Zero(T, n));

  const double proc_sd = std::sqrt(theta[static_cast<Eigen::Index>(model.noise.process_var_index)]);
  const double meas_sd = std::sqrt(model.measurement_variance(theta));

  std::vector<Vector> current = x0;
  for (const Vector& x : current) {
    if (x.size() != n) throw ParameterError("simulate_network: initial state dimension mismatch");
  }
  for (Eigen::Index k = 0; k < T; ++k) {
    const double t = static_cast<double>(k + 1);
    Vector u = m > 0 ? model.input_signal(t) : Vector();
    std::vector<Vector> next(V);
    for (AgentId v = 0; v < V; ++v) {
      Rng meas_rng = make_rng(seed, {stream::kMeasurementNoise, v, static_cast<std::uint64_t>(k)});
      std::normal_distribution<double> meas(model.noise.measurement_mean, meas_sd);
      Vector eta(p);
      for (Eigen::Index i = 0; i < p; ++i) eta[i] = meas(meas_rng);
      data.states[v].row(k) = current[v].transpose();
      if (m > 0) data.inputs[v].row(k) = u.transpose();
      data.outputs[v].row(k) = observe_agent(model, theta, current[v], u, eta, k + 1, static_cast<std::ptrdiff_t>(v)).transpose();
      if (k + 1 < T) {
        Rng proc_rng = make_rng(seed, {stream::kProcessNoise, v, static_cast<std::uint64_t>(k)});
        std::normal_distribution<double> proc(model.noise.process_mean, proc_sd);
        Vector eps(n);
        for (Eigen::Index i = 0; i < n; ++i) eps[i] = proc(proc_rng);
        const Vector c = coupling_term(g, net, current, v);
        next[v] = step_agent(model, theta, current[v], u, c, eps, k + 1, static_cast<std::ptrdiff_t>(v));
      }
    }
    if (k + 1 < T) current = std::move(next);
  }
  if (!options.keep_states) data.states.clear();
  return data;
}

ModelClass discretize_continuous(const ContinuousModel& cm, double dt) {
  if (!(dt > 0.0)) throw ParameterError("discretize_continuous: dt must be positive");
  ModelClass m;
  m.name = cm.name;
  m.state_dim = cm.state_dim;
  m.input_dim = cm.input_dim;
  m.output_dim = cm.output_dim;
  m.param_names = cm.param_names;
  const std::size_t n = cm.state_dim;
  const std::size_t q = cm.param_names.size();
  BasisFn drift = cm.drift;
  m.transition = [drift, n, q, dt](const double* x, const double* u, double* offset, double* design) {
    drift(x, u, offset, design);
    for (std::size_t r = 0; r < n; ++r) {
      offset[r] = x[r] + dt * offset[r];
      for (std::size_t i = 0; i < q; ++i) design[r * q + i] *= dt;
    }
  };
  m.observation = cm.observation;
  m.noise = cm.noise;
  m.noise.process_scale = dt;
  m.coupling_gain = dt;
  m.dt = dt;
  m.initial_mean = cm.initial_mean;
  m.initial_var = cm.initial_var;
  m.true_theta = cm.true_theta;
  m.stable_anchor = cm.stable_anchor;
  m.input_signal = cm.input_signal;
  return m;
}

// ---------------------------------------------------------------------------
// Built-in case studies

BuiltinSystem benchmark_system(const Vector& theta) {
  ModelClass m;
  m.name = "benchmark";
  m.state_dim = 1;
  m.input_dim = 1;
  m.output_dim = 1;
  m.param_names = {"a", "b", "c", "d", "s", "w"};
  m.transition = [](const double* x, const double* u, double* offset, double* design) {
    offset[0] = 0.0;
    design[0] = x[0];
    design[1] = x[0] / (1.0 + x[0] * x[0]);
    design[2] = u[0];
    design[3] = design[4] = design[5] = 0.0;
  };
  m.observation = [](const double* x, const double*, double* offset, double* design) {
    offset[0] = 0.0;
    design[0] = design[1] = design[2] = 0.0;
    design[3] = x[0] * x[0];
    design[4] = design[5] = 0.0;
  };
  m.noise.process_var_index = 4;
  m.noise.measurement_var_index = 5;
  m.initial_mean = Vector::Zero(1);
  m.initial_var = 1.0;
  m.true_theta = theta;
  Vector anchor = theta;
  anchor.head(3).setZero();
  m.stable_anchor = anchor;
  m.input_signal = [](double t) {
    Vector u(1);
    u[0] = std::cos(1.2 * t);
    return u;
  };
  BuiltinSystem sys{std::move(m), {CouplingKind::Sine, 1.0, true, 2.0, {}}, Vector::Zero(1)};
  return sys;
}

BuiltinSystem benchmark_system() {
  Vector theta(6);
  theta << 0.5, 25.0, 8.0, 0.05, 0.5, 1.0;
  return benchmark_system(theta);
}

BuiltinSystem gene_regulation_system(double dt) {
  ContinuousModel cm;
  cm.name = "gene_regulation";
  cm.state_dim = 1;
  cm.output_dim = 1;
  cm.param_names = {"a", "b", "s", "w"};
  cm.drift = [](const double* x, const double*, double* offset, double* design) {
    offset[0] = 0.0;
    design[0] = x[0];
    design[1] = design[2] = design[3] = 0.0;
  };
  cm.observation = [](const double* x, const double*, double* offset, double* design) {
    offset[0] = 0.0;
    design[0] = 0.0;
    design[1] = x[0];
    design[2] = design[3] = 0.0;
  };
  cm.noise.process_var_index = 2;
  cm.noise.measurement_var_index = 3;
  cm.initial_mean = Vector::Ones(1);
  cm.initial_var = 1e-4;
  cm.true_theta = Vector(4);
  cm.true_theta << -0.2, 1.0, 0.001, 0.01;
  Vector anchor = cm.true_theta;
  anchor[0] = -1.0;
  cm.stable_anchor = anchor;
  BuiltinSystem sys{discretize_continuous(cm, dt), {CouplingKind::Hill, 0.05, false, 2.0, {}}, Vector::Ones(1)};
  return sys;
}

BuiltinSystem fitzhugh_nagumo_system(double dt) {
  ContinuousModel cm;
  cm.name = "fitzhugh_nagumo";
  cm.state_dim = 2;
  cm.output_dim = 1;
  cm.param_names = {"a", "b", "c", "d", "e", "f", "s", "w"};
  cm.drift = [](const double* x, const double*, double* offset, double* design) {
    constexpr std::size_t q = 8;
    offset[0] = offset[1] = 0.0;
    std::fill(design, design + 2 * q, 0.0);
    design[0] = x[0];
    design[1] = x[0] * x[0] * x[0];
    design[2] = x[1];
    design[q + 3] = 1.0;
    design[q + 4] = x[0];
    design[q + 5] = x[1];
  };
  cm.observation = [](const double* x, const double*, double* offset, double* design) {
    offset[0] = x[0] + x[1];
    std::fill(design, design + 8, 0.0);
  };
  cm.noise.process_var_index = 6;
  cm.noise.measurement_var_index = 7;
  cm.initial_mean = Vector(2);
  cm.initial_mean << 0.87609, -3.5091;
  cm.initial_var = 1e-4;
  cm.true_theta = Vector(8);
  cm.true_theta << 1.0, -1.0, -1.0, 0.28, 0.5, -0.04, 0.05, 0.1;
  Vector anchor = cm.true_theta;
  anchor[0] = -1.0;
  anchor[1] = 0.0;
  anchor[2] = 0.0;
  anchor[4] = 0.0;
  anchor[5] = -1.0;
  cm.stable_anchor = anchor;
  Vector x0 = cm.initial_mean;
  BuiltinSystem sys{discretize_continuous(cm, dt), {CouplingKind::Linear, 1.0, true, 2.0, {true, false}}, x0};
  return sys;
}

BuiltinSystem builtin_system(const std::string& name, double dt) {
  if (name == "benchmark") return benchmark_system();
  if (name == "gene_regulation") return gene_regulation_system(dt);
  if (name == "fitzhugh_nagumo") return fitzhugh_nagumo_system(dt);
  throw ParameterError("unknown model name: " + name);
}

std::vector<std::string> builtin_system_names() { return {"benchmark", "gene_regulation", "fitzhugh_nagumo"}; }

std::vector<Vector> uniform_initial_states(const Vector& x0, std::size_t num_agents) {
  return std::vector<Vector>(num_agents, x0);
}

// ---------------------------------------------------------------------------
// Persistence

void save_trajectory_csv(const std::string& path, const TrajectoryData& data) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot open for writing: " + path);
  const Eigen::Index p = data.outputs.empty() ? 0 : data.outputs[0].cols();
  const Eigen::Index m = data.inputs.empty() ? 0 : data.inputs[0].cols();
  const Eigen::Index n = data.has_states() ? data.states[0].cols() : 0;
  out << "t,agent";
  for (Eigen::Index i = 0; i < p; ++i) out << ",y_" << (i + 1);
  for (Eigen::Index i = 0; i < m; ++i) out << ",u_" << (i + 1);
  for (Eigen::Index i = 0; i < n; ++i) out << ",x_" << (i + 1);
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < data.horizon(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    for (std::size_t v = 0; v < data.num_agents(); ++v) {
      out << (k + 1) << ',' << (v + 1);
      for (Eigen::Index i = 0; i < p; ++i) out << ',' << data.outputs[v](r, i);
      for (Eigen::Index i = 0; i < m; ++i) out << ',' << data.inputs[v](r, i);
      for (Eigen::Index i = 0; i < n; ++i) out << ',' << data.states[v](r, i);
      out << '\n';
    }
  }
}

void save_trajectory_metadata(const std::string& path, const TrajectoryData& data) {
  nlohmann::json j;
  j["model"] = data.model_name;
  j["seed"] = data.seed;
  j["dt"] = data.dt;
  j["theta_true"] = std::vector<double>(data.true_theta.data(), data.true_theta.data() + data.true_theta.size());
  j["num_agents"] = data.num_agents();
  j["horizon"] = data.horizon();
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

TrajectoryData load_trajectory(const std::string& csv_path, const std::string& metadata_path) {
  std::ifstream meta_in(metadata_path);
  if (!meta_in) throw ParameterError("cannot open: " + metadata_path);
  const nlohmann::json meta = nlohmann::json::parse(meta_in);
  TrajectoryData data;
  data.model_name = meta.at("model").get<std::string>();
  data.seed = meta.at("seed").get<std::uint64_t>();
  data.dt = meta.at("dt").get<double>();
  const auto theta = meta.at("theta_true").get<std::vector<double>>();
  data.true_theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  const auto V = meta.at("num_agents").get<std::size_t>();
  const auto T = static_cast<Eigen::Index>(meta.at("horizon").get<std::size_t>());

  std::ifstream in(csv_path);
  if (!in) throw ParameterError("cannot open: " + csv_path);
  std::string line;
  std::getline(in, line);
  Eigen::Index p = 0, m = 0, n = 0;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("y_", 0) == 0) ++p;
      if (col.rfind("u_", 0) == 0) ++m;
      if (col.rfind("x_", 0) == 0) ++n;
    }
  }
  data.outputs.assign(V, Matrix::Zero(T, p));
  data.inputs.assign(V, Matrix::Zero(T, m));
  if (n > 0) data.states.assign(V, Matrix::Zero(T, n));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(rs, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<Eigen::Index>(vals.size()) != 2 + p + m + n) {
      throw ParameterError("trajectory csv: malformed row '" + line + "'");
    }
    const auto k = static_cast<Eigen::Index>(vals[0]) - 1;
    const auto v = static_cast<std::size_t>(vals[1]) - 1;
    if (k < 0 || k >= T || v >= V) throw ParameterError("trajectory csv: index out of range");
    std::size_t c = 2;
    for (Eigen::Index i = 0; i < p; ++i) data.outputs[v](k, i) = vals[c++];
    for (Eigen::Index i = 0; i < m; ++i) data.inputs[v](k, i) = vals[c++];
    for (Eigen::Index i = 0; i < n; ++i) data.states[v](k, i) = vals[c++];
  }
  return data;
}

}  // namespace pcdpem
