#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pcdpem/model.hpp"
#include "pcdpem/rng.hpp"

namespace pcdpem {

/// Particles and weights of one agent over t = 1..T (index t-1 in memory).
/// Particles at time t are the propagated (pre-resampling) set that the filter
/// weights refer to.
struct ParticleEnsemble {
  std::size_t num_particles = 0;
  std::size_t horizon = 0;
  std::size_t state_dim = 0;
  Matrix inputs;                  // T x m, kept for transition densities
  std::vector<Matrix> particles;  // [t] M x n
  Matrix filter_weights;          // T x M
  Matrix smoothed_weights;        // T x M, empty until backward_smooth

  bool smoothed() const noexcept { return smoothed_weights.rows() > 0; }
  Vector filter_mean(std::size_t t) const;
  Vector smoothed_mean(std::size_t t) const;
  /// Weighted variance of component k at time t.
  double smoothed_variance(std::size_t t, std::size_t k = 0) const;
  double filter_variance(std::size_t t, std::size_t k = 0) const;
};

/// Systematic resampling with offset u0 in [0, 1/M): ancestor indices.
std::vector<std::size_t> systematic_resample(const Vector& weights, double u0);
/// Same, with u0 drawn from `rng`.
std::vector<std::size_t> systematic_resample(const Vector& weights, Rng& rng);
/// Equally weighted resampled copy of `particles` (M x n).
Matrix resample(const Matrix& particles, const Vector& weights, std::uint64_t seed);

/// log N(y; h(x) + mean, w I) for each row of `particles`.
Vector observation_loglik(const ModelClass& model, const Vector& theta, const Matrix& particles,
                          const Vector& y, const Vector& u);

/// Bootstrap filter on local data only (the interaction term is not modelled).
/// `stream` separates agents that share a seed.
ParticleEnsemble pf_forward(const ModelClass& model, const Vector& theta, const Matrix& outputs,
                            const Matrix& inputs, std::size_t num_particles, std::uint64_t seed,
                            std::uint64_t stream = 0);

/// Forward-filtering backward-smoothing weights, O(M^2 T).
void backward_smooth(ParticleEnsemble& ensemble, const ModelClass& model, const Vector& theta);

/// Joint smoothed weights of (x^i(t), x^j(t+1)) for 0-based t < T-1; entry (i, j).
Matrix pairwise_weights(const ParticleEnsemble& ensemble, const ModelClass& model, const Vector& theta,
                        std::size_t t);

ParticleEnsemble smooth_agent(const ModelClass& model, const Vector& theta, const Matrix& outputs,
                              const Matrix& inputs, std::size_t num_particles, std::uint64_t seed,
                              std::uint64_t stream = 0);

/// Top ceil(M / J_max) particles per time by smoothed weight, each scaled by
/// that weight. Ties go to the lower particle index.
struct ContributionSet {
  std::size_t size = 0;       // K
  std::size_t state_dim = 0;  // n
  std::vector<std::vector<std::size_t>> indices;  // [t][k]
  Matrix weights;                                 // T x K
  std::vector<Matrix> scaled;                     // [t] K x n

  std::size_t horizon() const noexcept { return scaled.size(); }
};

std::size_t contribution_size(std::size_t num_particles, std::size_t max_degree);
ContributionSet select_contribution(const ParticleEnsemble& ensemble, std::size_t max_degree);
/// Same ranking applied to a single weight vector.
std::vector<std::size_t> top_indices(const Vector& weights, std::size_t count);

/// CSV `t, i, x_1..x_n, w_filter, w_smooth`.
void save_particle_dump(const std::string& path, const ParticleEnsemble& ensemble);

}  // namespace pcdpem
