#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pcdpem/model.hpp"

namespace pcdpem {

/// State (and input) at which the contraction inequality is verified.
struct Witness {
  Vector x;
  Vector u;
};

struct StabilityCertificate {
  Matrix P;           // symmetric positive definite, n x n
  double kappa = 0;   // in (0, 2)
  std::size_t witness_count = 0;
  double margin = 0;  // worst minimum eigenvalue of the block matrix
  /// Largest kappa the chosen P admits on the witness set.
  double kappa_limit = 0;

  void validate() const;
};

nlohmann::json to_json(const StabilityCertificate& cert);

/// dF/dx of the deterministic transition map by forward differences with step
/// 1e-6 (1 + |x_i|). An empty u is read as zeros.
Matrix differential_jacobian(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u = {});
Matrix differential_jacobian_central(const ModelClass& model, const Vector& theta, const Vector& x,
                                     const Vector& u = {});

/// Minimum eigenvalue of [[(2 - kappa) I - P, F^T], [F, P]].
double block_margin(const Matrix& F, const Matrix& P, double kappa);
/// Minimum eigenvalue of (2 - kappa) I - P - F^T P^{-1} F.
double schur_margin(const Matrix& F, const Matrix& P, double kappa);

struct ContractionCheck {
  bool ok = false;
  double margin = 0;        // block form, worst over witnesses
  double schur_margin = 0;  // reduced form, worst over witnesses
};

inline constexpr double kPsdSlack = 1e-9;

ContractionCheck check_contraction(const ModelClass& model, const Vector& theta, const StabilityCertificate& cert,
                                   const std::vector<Witness>& witnesses);

struct CertificateGrid {
  std::vector<double> kappas{1e-5, 1e-4, 1e-3, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0};
  double p_min = 1e-3;
  double p_max = 1e3;
  std::size_t p_log_points = 25;
  std::size_t p_dense_points = 21;  // on [0.5, 1.5]
  int refine_passes = 4;
};

/// Jacobians of the transition basis at each witness, so that
/// F(x_w, theta) = J0_w + sum_i theta_i J_i,w is cheap to form for any theta.
class ContractionProblem {
 public:
  ContractionProblem(const ModelClass& model, std::vector<Witness> witnesses, CertificateGrid grid = {});

  std::size_t witness_count() const noexcept { return witnesses_.size(); }
  const std::vector<Witness>& witnesses() const noexcept { return witnesses_; }
  Matrix jacobian(std::size_t w, const Vector& theta) const;

  /// min over witnesses of lambda_min(2I - P - F^T P^{-1} F); feasible with
  /// kappa iff this is >= kappa. Stops early once below `floor`.
  double slack(const Vector& theta, const Vector& p_diag,
               double floor = -std::numeric_limits<double>::infinity()) const;

  std::optional<StabilityCertificate> fit(const Vector& theta) const;
  /// Feasibility with the smallest grid kappa; reuses the last good P first.
  bool feasible(const Vector& theta) const;

  double min_kappa() const noexcept { return grid_.kappas.front(); }

 private:
  std::size_t n_ = 0;
  std::size_t q_ = 0;
  std::vector<Witness> witnesses_;
  std::vector<Matrix> base_;                    // [w] n x n
  std::vector<std::vector<Matrix>> per_param_;  // [w][i] n x n
  std::vector<std::size_t> active_params_;
  CertificateGrid grid_;
  mutable std::optional<Vector> last_p_;
  // P matrices that recently certified some theta. fit() retries them, since
  // its own search can miss the P that feasible() accepted.
  mutable std::vector<Vector> accepted_p_;
  mutable std::size_t hard_witness_ = 0;

  void remember(const Vector& p) const;

  /// With a target, stops at the first P reaching it and prunes against it.
  std::pair<Vector, double> search_p(const Vector& theta, std::optional<double> target = std::nullopt) const;
};

/// Diagonal-P grid search; nullopt when no grid point is feasible.
std::optional<StabilityCertificate> fit_certificate(const ModelClass& model, const Vector& theta,
                                                    const std::vector<Witness>& witnesses,
                                                    const CertificateGrid& grid = {});

/// Regular grid over the box [lower, upper] with `points` per axis; u is the given input.
std::vector<Witness> box_witnesses(const Vector& lower, const Vector& upper, std::size_t points, const Vector& u = {});

}  // namespace pcdpem
