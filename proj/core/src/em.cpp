#include "pcdpem/em.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "pcdpem/errors.hpp"
#include "pcdpem/parallel.hpp"
#include "pcdpem/rng.hpp"

namespace pcdpem {

namespace {

using Index = Eigen::Index;

constexpr double kLog2Pi = 1.8378770664093454836;

struct Affine {
  Vector offset;
  Matrix design;  // rows x q
};

Affine eval_affine(const BasisFn& fn, std::size_t rows, std::size_t q, const double* x, const double* u) {
  Affine a;
  a.offset.resize(static_cast<Index>(rows));
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> d(static_cast<Index>(rows),
                                                                           static_cast<Index>(q));
  fn(x, u, a.offset.data(), d.data());
  a.design = d;
  return a;
}

const double* row_ptr(const Matrix& m, std::size_t t, Vector& scratch) {
  if (m.cols() == 0) return nullptr;
  scratch = m.row(static_cast<Index>(t)).transpose();
  return scratch.data();
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " is not finite");
}

}  // namespace

// ---------------------------------------------------------------------------
// Global particle set

Vector GlobalParticleSet::aggregate(std::size_t t) const { return entries.at(t).colwise().sum().transpose(); }

Vector GlobalParticleSet::network_mean(std::size_t t) const {
  const double mass = masses.row(static_cast<Index>(t)).sum();
  if (!(mass > 0.0)) throw NumericalError("consensus particles carry no mass", static_cast<std::ptrdiff_t>(t));
  return aggregate(t) / mass;
}

Vector GlobalParticleSet::block_estimate(AgentId u, std::size_t t) const {
  if (u >= num_agents) throw ParameterError("block_estimate: agent out of range");
  const auto K = static_cast<Index>(block_particles);
  const Index first = static_cast<Index>(u) * K;
  const double mass = masses.row(static_cast<Index>(t)).segment(first, K).sum();
  if (!(mass > 0.0)) {
    throw NumericalError("agent block carries no mass", static_cast<std::ptrdiff_t>(t), static_cast<std::ptrdiff_t>(u));
  }
  return entries.at(t).middleRows(first, K).colwise().sum().transpose() / mass;
}

Matrix GlobalParticleSet::block_trajectory(AgentId u) const {
  Matrix out(static_cast<Index>(horizon), static_cast<Index>(state_dim));
  for (std::size_t t = 0; t < horizon; ++t) out.row(static_cast<Index>(t)) = block_estimate(u, t).transpose();
  return out;
}

GlobalParticleSet make_global_set(const Vector& global, const ConsensusLayout& layout) {
  if (static_cast<std::size_t>(global.size()) != layout.length()) {
    throw ParameterError("make_global_set: vector length does not match the layout");
  }
  GlobalParticleSet g;
  g.num_agents = layout.num_agents;
  g.block_particles = layout.block_particles;
  g.state_dim = layout.state_dim;
  g.horizon = layout.horizon;
  const auto rows = static_cast<Index>(layout.num_agents * layout.block_particles);
  const auto n = static_cast<Index>(layout.state_dim);
  g.entries.assign(layout.horizon, Matrix(rows, n));
  g.masses.resize(static_cast<Index>(layout.horizon), rows);
  for (std::size_t t = 0; t < layout.horizon; ++t) {
    for (std::size_t u = 0; u < layout.num_agents; ++u) {
      for (std::size_t k = 0; k < layout.block_particles; ++k) {
        const auto base = static_cast<Index>(layout.offset(u, t, k));
        const auto r = static_cast<Index>(u * layout.block_particles + k);
        g.entries[t].row(r) = global.segment(base, n).transpose();
        g.masses(static_cast<Index>(t), r) = global[base + n];
      }
    }
  }
  return g;
}

SurrogateData surrogate_data(const GlobalParticleSet& gset, const TrajectoryData& data, AgentId agent, QbarForm form) {
  if (agent >= gset.num_agents || agent >= data.num_agents()) throw ParameterError("surrogate_data: agent out of range");
  if (gset.horizon != data.horizon()) throw ParameterError("surrogate_data: horizon mismatch");
  SurrogateData s;
  s.outputs = data.outputs[agent];
  s.output_inputs = data.inputs[agent];
  switch (form) {
    case QbarForm::Network:
      for (AgentId u = 0; u < gset.num_agents; ++u) {
        s.paths.push_back(gset.block_trajectory(u));
        s.inputs.push_back(data.inputs[u]);
      }
      s.output_path = s.paths[agent];
      break;
    case QbarForm::SingleAgent:
      s.paths.push_back(gset.block_trajectory(agent));
      s.inputs.push_back(data.inputs[agent]);
      s.output_path = s.paths.back();
      break;
    case QbarForm::Aggregate: {
      Matrix path(static_cast<Index>(gset.horizon), static_cast<Index>(gset.state_dim));
      for (std::size_t t = 0; t < gset.horizon; ++t) path.row(static_cast<Index>(t)) = gset.aggregate(t).transpose();
      s.paths.push_back(path);
      s.inputs.push_back(data.inputs[agent]);
      s.output_path = path;
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Surrogate evaluation

QuadraticStats quadratic_stats(const ModelClass& model, const SurrogateData& data) {
  const std::size_t n = model.state_dim;
  const std::size_t p = model.output_dim;
  const std::size_t q = model.num_params();
  QuadraticStats st;
  st.n = n;
  st.p = p;
  st.Gr = Matrix::Zero(static_cast<Index>(q), static_cast<Index>(q));
  st.gr = Vector::Zero(static_cast<Index>(q));
  st.Ge = st.Gr;
  st.ge = st.gr;
  Vector xs, us;
  const double shift = model.process_noise_mean();
  for (std::size_t path = 0; path < data.paths.size(); ++path) {
    const Matrix& X = data.paths[path];
    const Matrix& U = data.inputs[path];
    if (static_cast<std::size_t>(X.cols()) != n) throw ParameterError("quadratic_stats: path dimension mismatch");
    for (Index t = 0; t + 1 < X.rows(); ++t) {
      xs = X.row(t).transpose();
      const Affine a = eval_affine(model.transition, n, q, xs.data(), row_ptr(U, static_cast<std::size_t>(t), us));
      const Vector z = X.row(t + 1).transpose() - a.offset - Vector::Constant(static_cast<Index>(n), shift);
      st.Gr.noalias() += a.design.transpose() * a.design;
      st.gr.noalias() += a.design.transpose() * z;
      st.cr += z.squaredNorm();
      st.nr += 1.0;
    }
  }
  const Matrix& X = data.output_path;
  const Matrix& Y = data.outputs;
  if (X.rows() != Y.rows()) throw ParameterError("quadratic_stats: outputs and states differ in length");
  for (Index t = 0; t < Y.rows(); ++t) {
    xs = X.row(t).transpose();
    const Affine a =
        eval_affine(model.observation, p, q, xs.data(), row_ptr(data.output_inputs, static_cast<std::size_t>(t), us));
    const Vector e = Y.row(t).transpose() - a.offset - Vector::Constant(static_cast<Index>(p), model.noise.measurement_mean);
    st.Ge.noalias() += a.design.transpose() * a.design;
    st.ge.noalias() += a.design.transpose() * e;
    st.ce += e.squaredNorm();
    st.ne += 1.0;
  }
  require_finite(st.cr + st.ce + st.Gr.sum() + st.Ge.sum(), "surrogate statistic");
  return st;
}

double QuadraticStats::transition_ss(const Vector& theta) const {
  return std::max(0.0, cr - 2.0 * gr.dot(theta) + theta.dot(Gr * theta));
}

double QuadraticStats::output_ss(const Vector& theta) const {
  return std::max(0.0, ce - 2.0 * ge.dot(theta) + theta.dot(Ge * theta));
}

double qbar_from_stats(const ModelClass& model, const Vector& theta, const QuadraticStats& st) {
  model.validate_theta(theta);
  double q = 0.0;
  if (st.nr > 0) {
    const double s2 = model.process_variance(theta);
    const double dim = st.nr * static_cast<double>(st.n);
    q += -0.5 * st.transition_ss(theta) / s2 - 0.5 * dim * (kLog2Pi + std::log(s2));
  }
  if (st.ne > 0) {
    const double w = model.measurement_variance(theta);
    const double dim = st.ne * static_cast<double>(st.p);
    q += -0.5 * st.output_ss(theta) / w - 0.5 * dim * (kLog2Pi + std::log(w));
  }
  require_finite(q, "surrogate value");
  return q;
}

double qbar(const ModelClass& model, const Vector& theta, const SurrogateData& data) {
  model.validate_theta(theta);
  const std::size_t n = model.state_dim;
  const std::size_t p = model.output_dim;
  const double s2 = model.process_variance(theta);
  const double w = model.measurement_variance(theta);
  const double shift = model.process_noise_mean();
  Vector xs, us, mean(static_cast<Index>(n)), hy(static_cast<Index>(p));
  double q = 0.0;
  for (std::size_t path = 0; path < data.paths.size(); ++path) {
    const Matrix& X = data.paths[path];
    for (Index t = 0; t + 1 < X.rows(); ++t) {
      xs = X.row(t).transpose();
      model.transition_mean(xs.data(), row_ptr(data.inputs[path], static_cast<std::size_t>(t), us), theta, mean.data());
      const double r2 = (X.row(t + 1).transpose() - mean - Vector::Constant(static_cast<Index>(n), shift)).squaredNorm();
      q += -0.5 * r2 / s2 - 0.5 * static_cast<double>(n) * (kLog2Pi + std::log(s2));
    }
  }
  for (Index t = 0; t < data.outputs.rows(); ++t) {
    xs = data.output_path.row(t).transpose();
    model.observation_mean(xs.data(), row_ptr(data.output_inputs, static_cast<std::size_t>(t), us), theta, hy.data());
    const double e2 = (data.outputs.row(t).transpose() - hy -
                       Vector::Constant(static_cast<Index>(p), model.noise.measurement_mean))
                          .squaredNorm();
    q += -0.5 * e2 / w - 0.5 * static_cast<double>(p) * (kLog2Pi + std::log(w));
  }
  require_finite(q, "surrogate value");
  return q;
}

double qbar_literal(const ModelClass& model, const Vector& theta, const SurrogateData& data) {
  model.validate_theta(theta);
  const std::size_t n = model.state_dim;
  const std::size_t p = model.output_dim;
  Vector xs, us, mean(static_cast<Index>(n)), hy(static_cast<Index>(p));
  double q = 0.0;
  for (std::size_t path = 0; path < data.paths.size(); ++path) {
    const Matrix& X = data.paths[path];
    for (Index t = 0; t + 1 < X.rows(); ++t) {
      xs = X.row(t).transpose();
      model.transition_mean(xs.data(), row_ptr(data.inputs[path], static_cast<std::size_t>(t), us), theta, mean.data());
      q -= (X.row(t + 1).transpose() - mean).squaredNorm();
    }
  }
  for (Index t = 0; t < data.outputs.rows(); ++t) {
    xs = data.output_path.row(t).transpose();
    model.observation_mean(xs.data(), row_ptr(data.output_inputs, static_cast<std::size_t>(t), us), theta, hy.data());
    q -= (data.outputs.row(t).transpose() - hy).squaredNorm();
  }
  const double T = static_cast<double>(data.outputs.rows());
  double penalty = 0.0;
  for (Index i = 0; i < theta.size(); ++i) {
    if (theta[i] != 0.0) penalty += theta[i] * std::log(std::abs(theta[i]));
  }
  q -= (2.0 * T - 1.0) * penalty;
  require_finite(q, "surrogate value");
  return q;
}

double qbar_trajectory(const ModelClass& model, const Vector& theta, const Matrix& states, const Matrix& outputs,
                       const Matrix& inputs) {
  SurrogateData d;
  d.paths = {states};
  d.inputs = {inputs};
  d.outputs = outputs;
  d.output_path = states;
  d.output_inputs = inputs;
  return qbar(model, theta, d);
}

double qtilde_local(const ModelClass& model, const Vector& theta, const Vector& theta_k,
                    const ParticleEnsemble& ens, const Matrix& outputs) {
  if (!ens.smoothed()) throw ParameterError("qtilde_local: ensemble is not smoothed");
  model.validate_theta(theta);
  const std::size_t T = ens.horizon;
  const auto M = static_cast<Index>(ens.num_particles);
  const auto n = static_cast<Index>(ens.state_dim);
  double q = 0.0;

  // prior
  const double v0 = model.initial_var;
  for (Index i = 0; i < M; ++i) {
    const double d2 = (ens.particles[0].row(i).transpose() - model.initial_mean).squaredNorm();
    q += ens.smoothed_weights(0, i) * (-0.5 * d2 / v0 - 0.5 * static_cast<double>(n) * (kLog2Pi + std::log(v0)));
  }

  // transitions
  const double s2 = model.process_variance(theta);
  const double shift = model.process_noise_mean();
  Vector xs, us;
  Matrix means(M, n);
  Vector mean(n);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Matrix W = pairwise_weights(ens, model, theta_k, t);
    for (Index i = 0; i < M; ++i) {
      xs = ens.particles[t].row(i).transpose();
      model.transition_mean(xs.data(), row_ptr(ens.inputs, t, us), theta, mean.data());
      means.row(i) = mean.transpose();
    }
    for (Index i = 0; i < M; ++i) {
      for (Index j = 0; j < M; ++j) {
        const double wij = W(i, j);
        if (wij == 0.0) continue;
        const double r2 = ((ens.particles[t + 1].row(j) - means.row(i)).array() - shift).square().sum();
        q += wij * (-0.5 * r2 / s2 - 0.5 * static_cast<double>(n) * (kLog2Pi + std::log(s2)));
      }
    }
  }

  // outputs
  for (std::size_t t = 0; t < T; ++t) {
    Vector u = ens.inputs.cols() ? Vector(ens.inputs.row(static_cast<Index>(t)).transpose()) : Vector();
    const Vector ll = observation_loglik(model, theta, ens.particles[t], outputs.row(static_cast<Index>(t)).transpose(), u);
    q += ens.smoothed_weights.row(static_cast<Index>(t)).dot(ll);
  }
  require_finite(q, "particle surrogate");
  return q;
}

// ---------------------------------------------------------------------------
// M-step

namespace {

/// Largest lambda in [0, 1] (by bisection) with from + lambda (to - from) feasible; from is feasible.
double feasible_fraction(const ContractionProblem& problem, const Vector& from, const Vector& to, int steps) {
  if (problem.feasible(to)) return 1.0;
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (problem.feasible(from + mid * (to - from))) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

struct StructuralQuadratic {
  std::vector<Index> free;  // structural indices with curvature
  Matrix A;                 // full q x q curvature (variances fixed)
  Vector b;                 // full linear term

  Vector gradient(const Vector& theta) const {
    const Vector g = b - A * theta;
    Vector out = Vector::Zero(theta.size());
    for (Index i : free) out[i] = g[i];
    return out;
  }
};

StructuralQuadratic structural_quadratic(const ModelClass& model, const Vector& theta, const QuadraticStats& st) {
  StructuralQuadratic sq;
  const double s2 = model.process_variance(theta);
  const double w = model.measurement_variance(theta);
  sq.A = st.Gr / s2 + st.Ge / w;
  sq.b = st.gr / s2 + st.ge / w;
  for (std::size_t i : model.structural_indices()) {
    if (sq.A(static_cast<Index>(i), static_cast<Index>(i)) > 0.0) sq.free.push_back(static_cast<Index>(i));
  }
  return sq;
}

Vector newton_point(const StructuralQuadratic& sq, const Vector& theta) {
  const auto k = static_cast<Index>(sq.free.size());
  Vector out = theta;
  if (k == 0) return out;
  Matrix H(k, k);
  Vector g(k);
  const Vector full_g = sq.gradient(theta);
  for (Index a = 0; a < k; ++a) {
    g[a] = full_g[sq.free[static_cast<std::size_t>(a)]];
    for (Index c = 0; c < k; ++c) H(a, c) = sq.A(sq.free[static_cast<std::size_t>(a)], sq.free[static_cast<std::size_t>(c)]);
  }
  double ridge = 0.0;
  const double scale = std::max(H.diagonal().maxCoeff(), 1e-300);
  for (int attempt = 0; attempt < 20; ++attempt) {
    Eigen::LLT<Matrix> llt(H + ridge * Matrix::Identity(k, k));
    if (llt.info() == Eigen::Success) {
      const Vector step = llt.solve(g);
      for (Index a = 0; a < k; ++a) out[sq.free[static_cast<std::size_t>(a)]] += step[a];
      return out;
    }
    ridge = ridge == 0.0 ? 1e-12 * scale : ridge * 10.0;
  }
  throw NumericalError("M-step curvature is not positive definite");
}

}  // namespace

std::optional<Vector> repair_feasible(const ContractionProblem& problem, const Vector& theta, const Vector& anchor,
                                      const ModelClass& model, int steps) {
  if (problem.feasible(theta)) return theta;
  // Variances have no effect on the Jacobian; keep them from theta.
  Vector a = anchor;
  a[static_cast<Index>(model.noise.process_var_index)] = theta[static_cast<Index>(model.noise.process_var_index)];
  a[static_cast<Index>(model.noise.measurement_var_index)] =
      theta[static_cast<Index>(model.noise.measurement_var_index)];
  if (!problem.feasible(a)) return std::nullopt;
  const double lambda = feasible_fraction(problem, a, theta, steps);
  return Vector(a + lambda * (theta - a));
}

MStepResult mstep(const ModelClass& model, const Vector& theta_k, const QuadraticStats& st,
                  const ContractionProblem* problem, const MStepOptions& opt) {
  model.validate_theta(theta_k);
  const bool constrained = opt.constrained && problem != nullptr && problem->witness_count() > 0;
  MStepResult res;
  Vector start = theta_k;
  if (constrained && !problem->feasible(start)) {
    if (!model.stable_anchor) throw ConstructionError("infeasible M-step start and no stable anchor");
    auto r = repair_feasible(*problem, start, *model.stable_anchor, model, opt.bisection_steps);
    if (!r) throw ConstructionError("stable anchor is infeasible on the witness set");
    start = *r;
    res.repaired = true;
  }
  auto Q = [&](const Vector& th) { return qbar_from_stats(model, th, st); };
  auto feasible = [&](const Vector& th) { return !constrained || problem->feasible(th); };
  res.q_start = Q(start);

  // Step 1: structural entries, variances fixed at the start.
  const StructuralQuadratic sq = structural_quadratic(model, start, st);
  Vector theta = start;
  double q = res.q_start;
  const Vector newton = newton_point(sq, start);
  if (feasible(newton)) {
    res.newton_feasible = true;
    const double qn = Q(newton);
    if (qn >= q) {
      theta = newton;
      q = qn;
    }
  } else {
    const double lambda = feasible_fraction(*problem, start, newton, opt.bisection_steps);
    const Vector cand = start + lambda * (newton - start);
    const double qc = Q(cand);
    // cand is rebuilt from lambda, so rounding can put it just outside the
    // bisected boundary; check the point itself.
    if (qc > q && feasible(cand)) {
      theta = cand;
      q = qc;
    }
    // Projected ascent along the preconditioned gradient, then coordinate
    // directions, with exact line search clipped to the feasible segment.
    for (int it = 0; it < opt.max_gradient_iterations; ++it) {
      const Vector g = sq.gradient(theta);
      std::vector<Vector> dirs;
      Vector pre = Vector::Zero(theta.size());
      for (Index i : sq.free) pre[i] = g[i] / sq.A(i, i);
      dirs.push_back(pre);
      for (Index i : sq.free) {
        if (g[i] == 0.0) continue;
        Vector e = Vector::Zero(theta.size());
        e[i] = g[i] / sq.A(i, i);
        dirs.push_back(e);
      }
      bool improved = false;
      const double q_before = q;
      for (const Vector& d : dirs) {
        const double curv = d.dot(sq.A * d);
        const double slope = g.dot(d);
        if (!(curv > 0.0) || !(slope > 0.0)) continue;
        double tau = slope / curv;
        const double frac = feasible_fraction(*problem, theta, theta + tau * d, opt.bisection_steps);
        tau *= frac;
        for (int h = 0; h < opt.max_halvings && tau > 0.0; ++h) {
          const Vector c = theta + tau * d;
          const double qc2 = Q(c);
          if (qc2 > q && feasible(c)) {
            theta = c;
            q = qc2;
            improved = true;
            break;
          }
          tau *= 0.5;
        }
        if (improved) break;
      }
      res.gradient_iterations = it + 1;
      if (!improved || q - q_before <= 1e-12 * (1.0 + std::abs(q))) break;
    }
  }

  // KKT diagnostics at the structural optimum.
  {
    const Vector g = sq.gradient(theta);
    const Vector g0 = sq.gradient(start);
    res.kkt.gradient_norm = g.norm();
    res.kkt.reference_norm = g0.norm();
    res.kkt.stationary = res.kkt.gradient_norm <= 1e-6 * (1.0 + res.kkt.reference_norm);
    if (!res.kkt.stationary && constrained) {
      Vector gs = Vector::Zero(theta.size());
      for (Index i : sq.free) gs[i] = g[i];
      const double eps = 1e-6 * (1.0 + theta.norm());
      res.kkt.active_constraint = !problem->feasible(theta + eps * gs / gs.norm());
    }
    res.kkt.ok = res.kkt.stationary || res.kkt.active_constraint;
  }

  // Step 2: closed-form variances.
  const auto si = static_cast<Index>(model.noise.process_var_index);
  const auto wi = static_cast<Index>(model.noise.measurement_var_index);
  if (st.nr > 0) {
    theta[si] = std::max(opt.variance_floor,
                         st.transition_ss(theta) / (st.nr * static_cast<double>(st.n) * model.noise.process_scale));
  }
  if (st.ne > 0) {
    theta[wi] = std::max(opt.variance_floor, st.output_ss(theta) / (st.ne * static_cast<double>(st.p)));
  }
  res.q_end = Q(theta);
  if (res.q_end < res.q_start) {
    theta = start;
    res.q_end = res.q_start;
  }
  res.theta = theta;
  return res;
}

// ---------------------------------------------------------------------------
// PC-DPEM loop

Vector random_initial_theta(const Vector& center, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0)) throw ParameterError("random_initial_theta: fraction must be non-negative");
  Rng rng = make_rng(seed, {stream::kThetaInit});
  Vector out(center.size());
  for (Index i = 0; i < center.size(); ++i) {
    const double a = center[i] * (1.0 - fraction);
    const double b = center[i] * (1.0 + fraction);
    std::uniform_real_distribution<double> d(std::min(a, b), std::max(a, b));
    out[i] = a == b ? a : d(rng);
  }
  return out;
}

namespace {

std::vector<Witness> collect_witnesses(const GlobalParticleSet& gset, const TrajectoryData& data,
                                       const PcdpemConfig& cfg, std::size_t input_dim) {
  std::vector<Witness> out;
  auto input = [&](AgentId u, std::size_t t) {
    return input_dim ? Vector(data.inputs[u].row(static_cast<Index>(t)).transpose()) : Vector();
  };
  switch (cfg.witness_source) {
    case WitnessSource::BlockEstimates:
      for (AgentId u = 0; u < gset.num_agents; ++u) {
        for (std::size_t t = 0; t < gset.horizon; ++t) out.push_back({gset.block_estimate(u, t), input(u, t)});
      }
      break;
    case WitnessSource::NetworkMean:
      for (std::size_t t = 0; t < gset.horizon; ++t) out.push_back({gset.network_mean(t), input(cfg.agent, t)});
      break;
    case WitnessSource::Aggregate:
      for (std::size_t t = 0; t < gset.horizon; ++t) out.push_back({gset.aggregate(t), input(cfg.agent, t)});
      break;
  }
  if (cfg.witness_box) {
    auto box = box_witnesses(cfg.witness_box->first, cfg.witness_box->second, cfg.witness_box_points,
                             input_dim ? Vector::Zero(static_cast<Index>(input_dim)) : Vector());
    out.insert(out.end(), box.begin(), box.end());
  }
  return out;
}

ContributionSet e_step(const ModelClass& model, const Vector& theta, const TrajectoryData& data, AgentId v,
                       std::size_t max_degree, const PcdpemConfig& cfg, std::uint64_t seed) {
  Vector th = theta;
  const auto wi = static_cast<Index>(model.noise.measurement_var_index);
  for (int attempt = 0;; ++attempt) {
    try {
      const ParticleEnsemble ens =
          smooth_agent(model, th, data.outputs[v], data.inputs[v], cfg.num_particles, seed, v);
      return select_contribution(ens, max_degree);
    } catch (const DegeneracyError&) {
      if (attempt >= cfg.degeneracy_retries) throw;
      th[wi] *= cfg.degeneracy_inflation;
    }
  }
}

}  // namespace

ThetaEstimate run_pcdpem(const TrajectoryData& data, const DirectedNetwork& net, const ModelClass& model,
                         const Vector& theta0, const PcdpemConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  const auto t_all = Clock::now();
  const std::size_t V = net.num_agents();
  if (data.num_agents() != V) throw ParameterError("run_pcdpem: data and network disagree on the number of agents");
  if (data.horizon() < 2) throw ParameterError("run_pcdpem: need at least two time steps");
  if (cfg.agent >= V) throw ParameterError("run_pcdpem: identifying agent out of range");
  if (cfg.max_iterations < 1) throw ParameterError("run_pcdpem: max_iterations must be positive");
  model.validate_theta(theta0);

  ThetaEstimate est;
  est.theta0 = theta0;
  Vector theta = theta0;
  const std::size_t J = std::max<std::size_t>(1, net.max_in_degree());
  MStepOptions mopt = cfg.mstep;
  mopt.constrained = cfg.constrained;

  // The same particle-filter and gossip streams are reused at every iteration
  // (common random numbers), so the E-step varies with theta only.
  const std::uint64_t pf_seed = derive_seed(cfg.seed, {stream::kParticleFilter});
  const std::uint64_t gossip_seed = derive_seed(cfg.seed, {stream::kGossip});

  for (int k = 0; k < cfg.max_iterations; ++k) {
    const auto t_iter = Clock::now();

    std::vector<ContributionSet> contributions(V);
    parallel_for(V, cfg.workers, [&](std::size_t v) {
      contributions[v] = e_step(model, theta, data, static_cast<AgentId>(v), J, cfg, pf_seed);
    });

    ConsensusOptions copt;
    copt.delta = cfg.delta;
    copt.max_rounds = cfg.max_consensus_rounds;
    copt.seed = gossip_seed;
    copt.termination = cfg.termination;
    copt.delta_bar = cfg.delta_bar;
    copt.reader = cfg.agent;
    const ConsensusLayout layout = make_layout(contributions[0], V);
    ConsensusResult cres = run_consensus(contributions, net, copt);

    const GlobalParticleSet gset = make_global_set(cres.global, layout);
    const SurrogateData sdata = surrogate_data(gset, data, cfg.agent, cfg.form);
    const QuadraticStats stats = quadratic_stats(model, sdata);

    std::optional<ContractionProblem> problem;
    if (cfg.constrained) problem.emplace(model, collect_witnesses(gset, data, cfg, model.input_dim), cfg.grid);

    IterationRecord rec;
    rec.k = k;
    Vector start = theta;
    if (problem && !problem->feasible(start)) {
      if (!model.stable_anchor) throw ConstructionError("iterate infeasible and the model has no stable anchor");
      auto r = repair_feasible(*problem, start, *model.stable_anchor, model, mopt.bisection_steps);
      if (!r) throw ConstructionError("stable anchor is infeasible on this iteration's witness set");
      start = *r;
      rec.repaired = true;
    }
    const MStepResult ms = mstep(model, start, stats, problem ? &*problem : nullptr, mopt);
    rec.theta = start;
    rec.theta_next = ms.theta;
    rec.q_start = ms.q_start;
    rec.q_end = ms.q_end;
    rec.kkt = ms.kkt;
    rec.consensus = cres.report;
    if (problem) {
      est.certificate = problem->fit(ms.theta);
      est.witnesses = problem->witnesses();
      rec.feasible = est.certificate.has_value();
    }
    rec.seconds = std::chrono::duration<double>(Clock::now() - t_iter).count();
    est.history.push_back(rec);

    if (!std::isfinite(ms.theta.norm()) || ms.theta.norm() > cfg.divergence_bound) {
      est.theta = ms.theta;
      est.total_seconds = std::chrono::duration<double>(Clock::now() - t_all).count();
      throw DivergenceError("parameter norm exceeded " + std::to_string(cfg.divergence_bound), k);
    }
    theta = ms.theta;
    if (rec.delta_q() < cfg.tolerance * (1.0 + std::abs(rec.q_start))) {
      est.converged = true;
      break;
    }
  }
  est.theta = theta;
  est.total_seconds = std::chrono::duration<double>(Clock::now() - t_all).count();
  return est;
}

void save_history_csv(const std::string& path, const ThetaEstimate& est, const ModelClass& model) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot write " + path);
  out << "k";
  for (std::size_t i = 0; i < model.num_params(); ++i) out << ",theta_" << (i + 1);
  out << ",qbar,delta_qbar,rounds,seconds\n";
  out << std::setprecision(12);
  for (const auto& r : est.history) {
    out << (r.k + 1);
    for (Index i = 0; i < r.theta_next.size(); ++i) out << ',' << r.theta_next[i];
    out << ',' << r.q_end << ',' << r.delta_q() << ',' << r.consensus.rounds_run << ',' << r.seconds << '\n';
  }
}

nlohmann::json to_json(const ThetaEstimate& est, const ModelClass& model) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j;
  j["model"] = model.name;
  j["param_names"] = model.param_names;
  j["theta"] = vec(est.theta);
  j["theta0"] = vec(est.theta0);
  j["converged"] = est.converged;
  j["iterations"] = est.iterations();
  j["total_seconds"] = est.total_seconds;
  j["certificate"] = est.certificate ? to_json(*est.certificate) : nlohmann::json(nullptr);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : est.history) {
    hist.push_back({{"k", r.k + 1},
                    {"theta", vec(r.theta)},
                    {"theta_next", vec(r.theta_next)},
                    {"repaired", r.repaired},
                    {"q_start", r.q_start},
                    {"q_end", r.q_end},
                    {"feasible", r.feasible},
                    {"kkt_ok", r.kkt.ok},
                    {"seconds", r.seconds},
                    {"consensus", to_json(r.consensus)}});
  }
  j["history"] = hist;
  return j;
}

}  // namespace pcdpem
