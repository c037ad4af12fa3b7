#pragma once

// Scalar linear-Gaussian system x' = a x + eps(s), y = b x + eta(w) with
// Kalman / RTS reference solutions.

#include <cmath>
#include <vector>

#include "pcdpem/model.hpp"

namespace pcdpem::testing {

inline ModelClass linear_gaussian_model(double a, double b, double s, double w, double m0 = 0.0, double p0 = 1.0) {
  ModelClass m;
  m.name = "linear_gaussian";
  m.param_names = {"a", "b", "s", "w"};
  m.transition = [](const double* x, const double*, double* offset, double* design) {
    offset[0] = 0.0;
    design[0] = x[0];
    design[1] = design[2] = design[3] = 0.0;
  };
  m.observation = [](const double* x, const double*, double* offset, double* design) {
    offset[0] = 0.0;
    design[0] = 0.0;
    design[1] = x[0];
    design[2] = design[3] = 0.0;
  };
  m.noise.process_var_index = 2;
  m.noise.measurement_var_index = 3;
  m.initial_mean = Vector::Constant(1, m0);
  m.initial_var = p0;
  m.true_theta = Vector(4);
  m.true_theta << a, b, s, w;
  Vector anchor = m.true_theta;
  anchor[0] = 0.0;
  m.stable_anchor = anchor;
  return m;
}

struct KalmanResult {
  std::vector<double> filter_mean, filter_var;
  std::vector<double> pred_mean, pred_var;
  std::vector<double> smooth_mean, smooth_var;
  double loglik = 0;
};

inline KalmanResult kalman_rts(const std::vector<double>& y, double a, double b, double s, double w, double m0,
                               double p0) {
  const std::size_t T = y.size();
  KalmanResult r;
  r.filter_mean.resize(T);
  r.filter_var.resize(T);
  r.pred_mean.resize(T);
  r.pred_var.resize(T);
  double m = m0, p = p0;
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      m = a * r.filter_mean[t - 1];
      p = a * a * r.filter_var[t - 1] + s;
    }
    r.pred_mean[t] = m;
    r.pred_var[t] = p;
    const double sy = b * b * p + w;
    const double k = p * b / sy;
    const double innov = y[t] - b * m;
    r.loglik += -0.5 * (std::log(2.0 * M_PI * sy) + innov * innov / sy);
    r.filter_mean[t] = m + k * innov;
    r.filter_var[t] = (1.0 - k * b) * p;
  }
  r.smooth_mean = r.filter_mean;
  r.smooth_var = r.filter_var;
  for (std::size_t t = T - 1; t-- > 0;) {
    const double g = r.filter_var[t] * a / r.pred_var[t + 1];
    r.smooth_mean[t] = r.filter_mean[t] + g * (r.smooth_mean[t + 1] - r.pred_mean[t + 1]);
    r.smooth_var[t] = r.filter_var[t] + g * g * (r.smooth_var[t + 1] - r.pred_var[t + 1]);
  }
  return r;
}

inline std::vector<double> column(const Matrix& m, Eigen::Index c = 0) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, c);
  return out;
}

}  // namespace pcdpem::testing
