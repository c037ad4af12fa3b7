#include "pcdpem/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>

#include "pcdpem/errors.hpp"

namespace pcdpem {

namespace {

Matrix transition_means(const ModelClass& model, const Vector& theta, const Matrix& x, const Vector& u) {
  const Eigen::Index M = x.rows();
  const Eigen::Index n = x.cols();
  Matrix out(M, n);
  Vector xi(n), fi(n);
  const double shift = model.process_noise_mean();
  const double* up = u.size() ? u.data() : nullptr;
  for (Eigen::Index i = 0; i < M; ++i) {
    xi = x.row(i).transpose();
    model.transition_mean(xi.data(), up, theta, fi.data());
    out.row(i) = fi.transpose();
  }
  out.array() += shift;
  return out;
}

Vector input_row(const Matrix& inputs, std::size_t t) {
  if (inputs.cols() == 0) return Vector();
  return inputs.row(static_cast<Eigen::Index>(t)).transpose();
}

/// Normalizes exp(logw) in place with a max shift; returns false when nothing is finite.
bool normalize_log_weights(const Vector& logw, Eigen::Ref<Vector> out) {
  const double mx = logw.maxCoeff();
  if (!std::isfinite(mx)) return false;
  out = (logw.array() - mx).exp();
  const double s = out.sum();
  if (!(s > 0.0) || !std::isfinite(s)) return false;
  out /= s;
  return true;
}

// Shared kernel of the backward pass: for particle j at t+1, fills e[i] with
// w_i(t) p(x_j(t+1) | x_i(t)) / sum_k w_k(t) p(x_j(t+1) | x_k(t)).
// The buffer is Eigen-owned so vectorized reductions see the same alignment on
// every run; a malloc'd buffer made the summation order run-dependent.
struct BackwardKernel {
  const Matrix& mu;      // M x n transition means from time t
  const Vector& logw;    // log filter weights at t
  double inv_two_var;
  Eigen::ArrayXd d2;
  Eigen::ArrayXd e;

  BackwardKernel(const Matrix& m, const Vector& lw, double var)
      : mu(m), logw(lw), inv_two_var(0.5 / var), d2(m.rows()), e(m.rows()) {}

  bool operator()(const double* xj) {
    d2 = (mu.col(0).array() - xj[0]).square();
    for (Eigen::Index k = 1; k < mu.cols(); ++k) d2 += (mu.col(k).array() - xj[k]).square();
    e = logw.array() - d2 * inv_two_var;
    const double mx = e.maxCoeff();
    if (!std::isfinite(mx)) return false;
    e = (e - mx).exp();
    const double s = e.sum();
    if (!(s > 0.0)) return false;
    e *= 1.0 / s;
    return true;
  }
};

Vector log_of(const Eigen::Ref<const Vector>& w) { return w.array().log().matrix(); }

}  // namespace

Vector ParticleEnsemble::filter_mean(std::size_t t) const {
  return particles.at(t).transpose() * filter_weights.row(static_cast<Eigen::Index>(t)).transpose();
}

Vector ParticleEnsemble::smoothed_mean(std::size_t t) const {
  if (!smoothed()) throw ParameterError("smoothed_mean: backward pass not run");
  return particles.at(t).transpose() * smoothed_weights.row(static_cast<Eigen::Index>(t)).transpose();
}

double ParticleEnsemble::smoothed_variance(std::size_t t, std::size_t k) const {
  const Vector m = smoothed_mean(t);
  const auto col = particles.at(t).col(static_cast<Eigen::Index>(k)).array() - m[static_cast<Eigen::Index>(k)];
  return (smoothed_weights.row(static_cast<Eigen::Index>(t)).transpose().array() * col.square()).sum();
}

double ParticleEnsemble::filter_variance(std::size_t t, std::size_t k) const {
  const Vector m = filter_mean(t);
  const auto col = particles.at(t).col(static_cast<Eigen::Index>(k)).array() - m[static_cast<Eigen::Index>(k)];
  return (filter_weights.row(static_cast<Eigen::Index>(t)).transpose().array() * col.square()).sum();
}

std::vector<std::size_t> systematic_resample(const Vector& weights, double u0) {
  const auto M = static_cast<std::size_t>(weights.size());
  std::vector<std::size_t> out(M);
  const double step = 1.0 / static_cast<double>(M);
  double cum = weights[0];
  std::size_t j = 0;
  for (std::size_t k = 0; k < M; ++k) {
    const double point = u0 + static_cast<double>(k) * step;
    while (point >= cum && j + 1 < M) cum += weights[static_cast<Eigen::Index>(++j)];
    out[k] = j;
  }
  return out;
}

std::vector<std::size_t> systematic_resample(const Vector& weights, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0 / static_cast<double>(weights.size()));
  return systematic_resample(weights, unif(rng));
}

Matrix resample(const Matrix& particles, const Vector& weights, std::uint64_t seed) {
  if (particles.rows() != weights.size()) throw ParameterError("resample: one weight per particle required");
  Rng rng = make_rng(seed, {stream::kParticleFilter});
  const auto idx = systematic_resample(weights, rng);
  Matrix out(particles.rows(), particles.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = particles.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

Vector observation_loglik(const ModelClass& model, const Vector& theta, const Matrix& particles, const Vector& y,
                          const Vector& u) {
  const Eigen::Index M = particles.rows();
  const auto p = static_cast<Eigen::Index>(model.output_dim);
  const double w = model.measurement_variance(theta);
  const double norm = -0.5 * static_cast<double>(p) * std::log(2.0 * std::numbers::pi * w);
  const double* up = u.size() ? u.data() : nullptr;
  Vector out(M);
  Vector xi(particles.cols()), hi(p);
  for (Eigen::Index i = 0; i < M; ++i) {
    xi = particles.row(i).transpose();
    model.observation_mean(xi.data(), up, theta, hi.data());
    const double r2 = ((y - hi).array() - model.noise.measurement_mean).square().sum();
    out[i] = norm - 0.5 * r2 / w;
  }
  return out;
}

ParticleEnsemble pf_forward(const ModelClass& model, const Vector& theta, const Matrix& outputs, const Matrix& inputs,
                            std::size_t num_particles, std::uint64_t seed, std::uint64_t stream) {
  if (num_particles < 2) throw ParameterError("pf_forward: at least two particles required");
  model.validate_theta(theta);
  const auto T = static_cast<std::size_t>(outputs.rows());
  if (T == 0) throw ParameterError("pf_forward: empty output sequence");
  if (static_cast<std::size_t>(outputs.cols()) != model.output_dim ||
      static_cast<std::size_t>(inputs.cols()) != model.input_dim || inputs.rows() != outputs.rows()) {
    throw ParameterError("pf_forward: data dimensions do not match the model");
  }
  const auto M = static_cast<Eigen::Index>(num_particles);
  const auto n = static_cast<Eigen::Index>(model.state_dim);

  ParticleEnsemble ens;
  ens.num_particles = num_particles;
  ens.horizon = T;
  ens.state_dim = model.state_dim;
  ens.inputs = inputs;
  ens.particles.resize(T);
  ens.filter_weights.resize(static_cast<Eigen::Index>(T), M);

  Rng rng = make_rng(seed, {stream::kParticleFilter, stream});
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix x(M, n);
  const double sd0 = std::sqrt(model.initial_var);
  for (Eigen::Index i = 0; i < M; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) x(i, k) = model.initial_mean[k] + sd0 * normal(rng);
  }
  const double proc_sd = std::sqrt(model.process_variance(theta));
  Vector w(M);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      const auto anc = systematic_resample(w, rng);
      Matrix parents(M, n);
      for (Eigen::Index i = 0; i < M; ++i) parents.row(i) = ens.particles[t - 1].row(static_cast<Eigen::Index>(anc[static_cast<std::size_t>(i)]));
      x = transition_means(model, theta, parents, input_row(inputs, t - 1));
      for (Eigen::Index i = 0; i < M; ++i) {
        for (Eigen::Index k = 0; k < n; ++k) x(i, k) += proc_sd * normal(rng);
      }
    }
    const Vector y = outputs.row(static_cast<Eigen::Index>(t)).transpose();
    const Vector ll = observation_loglik(model, theta, x, y, input_row(inputs, t));
    if (!normalize_log_weights(ll, w)) {
      throw DegeneracyError("particle filter: all measurement likelihoods vanish at t=" + std::to_string(t + 1),
                            static_cast<std::ptrdiff_t>(t + 1));
    }
    ens.particles[t] = x;
    ens.filter_weights.row(static_cast<Eigen::Index>(t)) = w.transpose();
  }
  return ens;
}

void backward_smooth(ParticleEnsemble& ens, const ModelClass& model, const Vector& theta) {
  const std::size_t T = ens.horizon;
  const auto M = static_cast<Eigen::Index>(ens.num_particles);
  ens.smoothed_weights.resize(static_cast<Eigen::Index>(T), M);
  ens.smoothed_weights.row(static_cast<Eigen::Index>(T - 1)) = ens.filter_weights.row(static_cast<Eigen::Index>(T - 1));
  const double var = model.process_variance(theta);
  for (std::size_t t = T - 1; t-- > 0;) {
    const Matrix mu = transition_means(model, theta, ens.particles[t], input_row(ens.inputs, t));
    const Vector logw = log_of(ens.filter_weights.row(static_cast<Eigen::Index>(t)).transpose());
    BackwardKernel kernel(mu, logw, var);
    const Matrix& next = ens.particles[t + 1];
    const auto ws_next = ens.smoothed_weights.row(static_cast<Eigen::Index>(t + 1));
    Vector acc = Vector::Zero(M);
    Vector xj(next.cols());
    for (Eigen::Index j = 0; j < M; ++j) {
      const double wj = ws_next[j];
      if (wj == 0.0) continue;
      xj = next.row(j).transpose();
      if (!kernel(xj.data())) {
        throw DegeneracyError("backward smoother: zero denominator at t=" + std::to_string(t + 1) + ", j=" +
                                  std::to_string(j + 1),
                              static_cast<std::ptrdiff_t>(t + 1), static_cast<std::ptrdiff_t>(j + 1));
      }
      acc.array() += wj * kernel.e;
    }
    const double s = acc.sum();
    if (!(s > 0.0)) {
      throw DegeneracyError("backward smoother: smoothed weights vanish at t=" + std::to_string(t + 1),
                            static_cast<std::ptrdiff_t>(t + 1));
    }
    ens.smoothed_weights.row(static_cast<Eigen::Index>(t)) = (acc / s).transpose();
  }
}

Matrix pairwise_weights(const ParticleEnsemble& ens, const ModelClass& model, const Vector& theta, std::size_t t) {
  if (!ens.smoothed()) throw ParameterError("pairwise_weights: backward pass not run");
  if (t + 1 >= ens.horizon) throw ParameterError("pairwise_weights: t must be below T-1");
  const auto M = static_cast<Eigen::Index>(ens.num_particles);
  const Matrix mu = transition_means(model, theta, ens.particles[t], input_row(ens.inputs, t));
  const Vector logw = log_of(ens.filter_weights.row(static_cast<Eigen::Index>(t)).transpose());
  BackwardKernel kernel(mu, logw, model.process_variance(theta));
  Matrix W(M, M);
  Vector xj(ens.state_dim);
  for (Eigen::Index j = 0; j < M; ++j) {
    xj = ens.particles[t + 1].row(j).transpose();
    if (!kernel(xj.data())) {
      throw DegeneracyError("pairwise weights: zero denominator at t=" + std::to_string(t + 1) + ", j=" +
                                std::to_string(j + 1),
                            static_cast<std::ptrdiff_t>(t + 1), static_cast<std::ptrdiff_t>(j + 1));
    }
    const double wj = ens.smoothed_weights(static_cast<Eigen::Index>(t + 1), j);
    W.col(j) = wj * kernel.e.matrix();
  }
  return W;
}

ParticleEnsemble smooth_agent(const ModelClass& model, const Vector& theta, const Matrix& outputs,
                              const Matrix& inputs, std::size_t num_particles, std::uint64_t seed,
                              std::uint64_t stream) {
  ParticleEnsemble ens = pf_forward(model, theta, outputs, inputs, num_particles, seed, stream);
  backward_smooth(ens, model, theta);
  return ens;
}

std::size_t contribution_size(std::size_t num_particles, std::size_t max_degree) {
  const std::size_t j = std::max<std::size_t>(max_degree, 1);
  return (num_particles + j - 1) / j;
}

std::vector<std::size_t> top_indices(const Vector& weights, std::size_t count) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(weights.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double wa = weights[static_cast<Eigen::Index>(a)];
                      const double wb = weights[static_cast<Eigen::Index>(b)];
                      return wa > wb || (wa == wb && a < b);
                    });
  idx.resize(count);
  return idx;
}

ContributionSet select_contribution(const ParticleEnsemble& ens, std::size_t max_degree) {
  if (!ens.smoothed()) throw ParameterError("select_contribution: backward pass not run");
  ContributionSet out;
  out.size = contribution_size(ens.num_particles, max_degree);
  out.state_dim = ens.state_dim;
  const auto K = static_cast<Eigen::Index>(out.size);
  out.indices.resize(ens.horizon);
  out.scaled.resize(ens.horizon);
  out.weights.resize(static_cast<Eigen::Index>(ens.horizon), K);
  for (std::size_t t = 0; t < ens.horizon; ++t) {
    const Vector w = ens.smoothed_weights.row(static_cast<Eigen::Index>(t)).transpose();
    out.indices[t] = top_indices(w, out.size);
    Matrix s(K, static_cast<Eigen::Index>(ens.state_dim));
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto i = static_cast<Eigen::Index>(out.indices[t][static_cast<std::size_t>(k)]);
      out.weights(static_cast<Eigen::Index>(t), k) = w[i];
      s.row(k) = w[i] * ens.particles[t].row(i);
    }
    out.scaled[t] = std::move(s);
  }
  return out;
}

void save_particle_dump(const std::string& path, const ParticleEnsemble& ens) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot open for writing: " + path);
  out << "t,i";
  for (std::size_t k = 0; k < ens.state_dim; ++k) out << ",x_" << (k + 1);
  out << ",w_filter,w_smooth\n" << std::setprecision(17);
  for (std::size_t t = 0; t < ens.horizon; ++t) {
    for (std::size_t i = 0; i < ens.num_particles; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(t);
      out << (t + 1) << ',' << (i + 1);
      for (Eigen::Index k = 0; k < ens.particles[t].cols(); ++k) out << ',' << ens.particles[t](r, k);
      out << ',' << ens.filter_weights(c, r) << ',' << (ens.smoothed() ? ens.smoothed_weights(c, r) : 0.0) << '\n';
    }
  }
}

}  // namespace pcdpem
