#include "pcdpem/stability.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "pcdpem/errors.hpp"

namespace pcdpem {

namespace {

Vector input_or_zero(const ModelClass& model, const Vector& u) {
  if (u.size() == 0) return Vector::Zero(static_cast<Eigen::Index>(model.input_dim));
  if (static_cast<std::size_t>(u.size()) != model.input_dim) throw ParameterError("witness input has wrong dimension");
  return u;
}

double fd_step(double x) { return 1e-6 * (1.0 + std::abs(x)); }

double min_eig_sym(const Matrix& S) {
  if (S.rows() == 1) return S(0, 0);
  if (S.rows() == 2) {
    const double a = S(0, 0), c = S(1, 1), b = 0.5 * (S(0, 1) + S(1, 0));
    const double h = 0.5 * (a - c);
    return 0.5 * (a + c) - std::sqrt(h * h + b * b);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

struct BasisEval {
  Vector offset;
  Matrix design;  // n x q
};

BasisEval eval_basis(const ModelClass& model, const Vector& x, const Vector& u) {
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  const auto q = static_cast<Eigen::Index>(model.num_params());
  BasisEval b{Vector::Zero(n), Matrix::Zero(n, q)};
  std::vector<double> des(static_cast<std::size_t>(n * q), 0.0);
  model.transition(x.data(), u.size() ? u.data() : nullptr, b.offset.data(), des.data());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index i = 0; i < q; ++i) b.design(r, i) = des[static_cast<std::size_t>(r * q + i)];
  }
  return b;
}

}  // namespace

void StabilityCertificate::validate() const {
  if (P.rows() == 0 || P.rows() != P.cols()) throw ParameterError("certificate: P must be square and non-empty");
  if (!P.isApprox(P.transpose(), 1e-12)) throw ParameterError("certificate: P must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(P, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0)) throw ParameterError("certificate: P must be positive definite");
  if (!(kappa > 0.0 && kappa < 2.0)) throw ParameterError("certificate: kappa must lie in (0, 2)");
}

nlohmann::json to_json(const StabilityCertificate& c) {
  std::vector<double> diag(static_cast<std::size_t>(c.P.rows()));
  for (Eigen::Index i = 0; i < c.P.rows(); ++i) diag[static_cast<std::size_t>(i)] = c.P(i, i);
  return {{"P_diag", diag},
          {"kappa", c.kappa},
          {"kappa_limit", c.kappa_limit},
          {"margin", c.margin},
          {"witness_count", c.witness_count}};
}

Matrix differential_jacobian(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u) {
  const Vector uu = input_or_zero(model, u);
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  const Vector f0 = model.transition_mean(x, uu, theta);
  Matrix F(n, n);
  Vector xp = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = fd_step(x[k]);
    xp[k] = x[k] + h;
    F.col(k) = (model.transition_mean(xp, uu, theta) - f0) / h;
    xp[k] = x[k];
  }
  if (!F.allFinite()) {
    std::string where;
    for (Eigen::Index k = 0; k < n; ++k) where += (k ? ", " : "") + std::to_string(x[k]);
    throw NumericalError("non-finite Jacobian at x = (" + where + ")");
  }
  return F;
}

Matrix differential_jacobian_central(const ModelClass& model, const Vector& theta, const Vector& x, const Vector& u) {
  const Vector uu = input_or_zero(model, u);
  const auto n = static_cast<Eigen::Index>(model.state_dim);
  Matrix F(n, n);
  Vector xp = x, xm = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = fd_step(x[k]);
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    F.col(k) = (model.transition_mean(xp, uu, theta) - model.transition_mean(xm, uu, theta)) / (2.0 * h);
    xp[k] = xm[k] = x[k];
  }
  return F;
}

double block_margin(const Matrix& F, const Matrix& P, double kappa) {
  const Eigen::Index n = P.rows();
  Matrix B(2 * n, 2 * n);
  B.topLeftCorner(n, n) = (2.0 - kappa) * Matrix::Identity(n, n) - P;
  B.topRightCorner(n, n) = F.transpose();
  B.bottomLeftCorner(n, n) = F;
  B.bottomRightCorner(n, n) = P;
  Eigen::SelfAdjointEigenSolver<Matrix> es(B, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double schur_margin(const Matrix& F, const Matrix& P, double kappa) {
  const Eigen::Index n = P.rows();
  const Matrix S = (2.0 - kappa) * Matrix::Identity(n, n) - P - F.transpose() * P.ldlt().solve(F);
  return min_eig_sym(0.5 * (S + S.transpose()));
}

ContractionCheck check_contraction(const ModelClass& model, const Vector& theta, const StabilityCertificate& cert,
                                   const std::vector<Witness>& witnesses) {
  cert.validate();
  if (static_cast<std::size_t>(cert.P.rows()) != model.state_dim) {
    throw ParameterError("certificate: P dimension does not match the state dimension");
  }
  ContractionCheck out;
  out.margin = std::numeric_limits<double>::infinity();
  out.schur_margin = std::numeric_limits<double>::infinity();
  for (const Witness& w : witnesses) {
    const Matrix F = differential_jacobian(model, theta, w.x, w.u);
    out.margin = std::min(out.margin, block_margin(F, cert.P, cert.kappa));
    out.schur_margin = std::min(out.schur_margin, schur_margin(F, cert.P, cert.kappa));
  }
  out.ok = out.margin >= -kPsdSlack;
  return out;
}

// ---------------------------------------------------------------------------

ContractionProblem::ContractionProblem(const ModelClass& model, std::vector<Witness> witnesses, CertificateGrid grid)
    : n_(model.state_dim), q_(model.num_params()), witnesses_(std::move(witnesses)), grid_(std::move(grid)) {
  if (grid_.kappas.empty()) throw ParameterError("certificate grid needs at least one kappa");
  std::sort(grid_.kappas.begin(), grid_.kappas.end());
  const auto n = static_cast<Eigen::Index>(n_);
  std::vector<char> used(q_, 0);
  base_.reserve(witnesses_.size());
  per_param_.reserve(witnesses_.size());
  for (Witness& w : witnesses_) {
    w.u = input_or_zero(model, w.u);
    const BasisEval b0 = eval_basis(model, w.x, w.u);
    Matrix J0(n, n);
    std::vector<Matrix> Ji(q_, Matrix(n, n));
    Vector xp = w.x;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double h = fd_step(w.x[k]);
      xp[k] = w.x[k] + h;
      const BasisEval b1 = eval_basis(model, xp, w.u);
      xp[k] = w.x[k];
      J0.col(k) = (b1.offset - b0.offset) / h;
      for (std::size_t i = 0; i < q_; ++i) {
        Ji[i].col(k) = (b1.design.col(static_cast<Eigen::Index>(i)) - b0.design.col(static_cast<Eigen::Index>(i))) / h;
      }
    }
    if (!J0.allFinite()) throw NumericalError("non-finite Jacobian at a witness state");
    for (std::size_t i = 0; i < q_; ++i) {
      if (!Ji[i].allFinite()) throw NumericalError("non-finite Jacobian at a witness state");
      if (Ji[i].cwiseAbs().maxCoeff() > 0.0) used[i] = 1;
    }
    base_.push_back(std::move(J0));
    per_param_.push_back(std::move(Ji));
  }
  for (std::size_t i = 0; i < q_; ++i) {
    if (used[i]) active_params_.push_back(i);
  }
}

Matrix ContractionProblem::jacobian(std::size_t w, const Vector& theta) const {
  Matrix F = base_.at(w);
  for (std::size_t i : active_params_) F += theta[static_cast<Eigen::Index>(i)] * per_param_[w][i];
  return F;
}

double ContractionProblem::slack(const Vector& theta, const Vector& p, double floor) const {
  double worst = std::numeric_limits<double>::infinity();
  const auto n = static_cast<Eigen::Index>(n_);
  const Vector pinv = p.cwiseInverse();
  const std::size_t count = witnesses_.size();
  // Start at the witness that failed last; it usually fails again.
  const std::size_t first = hard_witness_ < count ? hard_witness_ : 0;
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t w = (first + r) % count;
    double s;
    if (n_ == 1) {
      double f = base_[w](0, 0);
      for (std::size_t i : active_params_) f += theta[static_cast<Eigen::Index>(i)] * per_param_[w][i](0, 0);
      s = 2.0 - p[0] - f * f * pinv[0];
    } else {
      const Matrix F = jacobian(w, theta);
      Matrix S = -F.transpose() * pinv.asDiagonal() * F;
      for (Eigen::Index k = 0; k < n; ++k) S(k, k) += 2.0 - p[k];
      s = min_eig_sym(S);
    }
    worst = std::min(worst, s);
    if (worst < floor) {
      hard_witness_ = w;
      return worst;
    }
  }
  return worst;
}

std::pair<Vector, double> ContractionProblem::search_p(const Vector& theta, std::optional<double> target) const {
  std::vector<double> values;
  for (std::size_t k = 0; k < grid_.p_log_points; ++k) {
    const double f = grid_.p_log_points > 1 ? static_cast<double>(k) / static_cast<double>(grid_.p_log_points - 1) : 0.0;
    values.push_back(grid_.p_min * std::pow(grid_.p_max / grid_.p_min, f));
  }
  for (std::size_t k = 0; k < grid_.p_dense_points; ++k) {
    const double f = grid_.p_dense_points > 1 ? static_cast<double>(k) / static_cast<double>(grid_.p_dense_points - 1) : 0.5;
    values.push_back(0.5 + f);
  }
  std::sort(values.begin(), values.end());

  const auto n = static_cast<Eigen::Index>(n_);
  Vector best = Vector::Ones(n);
  double best_s = slack(theta, best, target.value_or(-std::numeric_limits<double>::infinity()));
  bool reached = target && best_s >= *target;
  auto consider = [&](const Vector& p) {
    if (reached) return;
    const double s = slack(theta, p, target ? *target : best_s);
    if (target && s >= *target) reached = true;
    if (s > best_s) {
      best_s = s;
      best = p;
    }
  };
  if (n_ == 1) {
    for (double v : values) consider(Vector::Constant(1, v));
  } else if (n_ == 2) {
    Vector p(2);
    for (double a : values) {
      for (double b : values) {
        p << a, b;
        consider(p);
      }
    }
  } else {
    for (int pass = 0; pass < 3; ++pass) {
      for (Eigen::Index k = 0; k < n; ++k) {
        Vector p = best;
        for (double v : values) {
          p[k] = v;
          consider(p);
        }
      }
    }
  }
  double step = std::log(values.size() > 1 ? values[1] / values[0] : 2.0);
  for (int pass = 0; pass < grid_.refine_passes; ++pass) {
    step *= 0.5;
    for (Eigen::Index k = 0; k < n; ++k) {
      for (double dir : {-1.0, 1.0}) {
        Vector p = best;
        p[k] *= std::exp(dir * step);
        consider(p);
      }
    }
  }
  return {best, best_s};
}

std::optional<StabilityCertificate> ContractionProblem::fit(const Vector& theta) const {
  if (witnesses_.empty()) throw ParameterError("fit_certificate: witness set is empty");
  auto [p, s] = search_p(theta);
  auto try_p = [&](const Vector& cand) {
    const double sc = slack(theta, cand);
    if (sc > s) {
      p = cand;
      s = sc;
    }
  };
  if (last_p_) try_p(*last_p_);
  for (const Vector& cand : accepted_p_) try_p(cand);
  if (!(s >= grid_.kappas.front())) return std::nullopt;
  remember(p);
  StabilityCertificate cert;
  cert.P = p.asDiagonal();
  cert.kappa = grid_.kappas.front();
  cert.kappa_limit = s;
  cert.witness_count = witnesses_.size();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w < witnesses_.size(); ++w) {
    margin = std::min(margin, block_margin(jacobian(w, theta), cert.P, cert.kappa));
  }
  cert.margin = margin;
  return cert;
}

bool ContractionProblem::feasible(const Vector& theta) const {
  if (witnesses_.empty()) return true;
  const double kmin = grid_.kappas.front();
  if (last_p_ && slack(theta, *last_p_, kmin) >= kmin) return true;
  auto [p, s] = search_p(theta, kmin);
  if (s >= kmin) {
    remember(p);
    return true;
  }
  return false;
}

void ContractionProblem::remember(const Vector& p) const {
  last_p_ = p;
  for (const Vector& q : accepted_p_) {
    if (q == p) return;
  }
  constexpr std::size_t kKeep = 32;
  if (accepted_p_.size() == kKeep) accepted_p_.erase(accepted_p_.begin());
  accepted_p_.push_back(p);
}

std::optional<StabilityCertificate> fit_certificate(const ModelClass& model, const Vector& theta,
                                                    const std::vector<Witness>& witnesses,
                                                    const CertificateGrid& grid) {
  ContractionProblem problem(model, witnesses, grid);
  return problem.fit(theta);
}

std::vector<Witness> box_witnesses(const Vector& lower, const Vector& upper, std::size_t points, const Vector& u) {
  if (lower.size() != upper.size() || lower.size() == 0) throw ParameterError("box_witnesses: bad bounds");
  if (points < 1) throw ParameterError("box_witnesses: need at least one point per axis");
  const Eigen::Index n = lower.size();
  std::vector<Witness> out;
  std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
  while (true) {
    Vector x(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double f = points > 1 ? static_cast<double>(idx[static_cast<std::size_t>(k)]) / static_cast<double>(points - 1) : 0.5;
      x[k] = lower[k] + f * (upper[k] - lower[k]);
    }
    out.push_back({x, u});
    Eigen::Index k = 0;
    while (k < n && ++idx[static_cast<std::size_t>(k)] == points) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  return out;
}

}  // namespace pcdpem
