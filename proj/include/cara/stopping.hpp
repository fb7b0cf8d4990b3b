#ifndef CARA_STOPPING_HPP
#define CARA_STOPPING_HPP

#include <cmath>

#include "cara/estimation.hpp"
#include "cara/numkit.hpp"

namespace cara {

struct StoppingConfig {
  double alpha = 0.05;
  double delta = 0.3;
  int n0 = 0;   // 0: derived as K * m0 by run_trial
  int dof = 0;  // 0: derived by run_trial (pK for the full rule, h for a contrast rule)
  int max_n = 5000;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_input("StoppingConfig: alpha must be in (0,1)");
    if (!(delta > 0.0)) throw invalid_input("StoppingConfig: delta must be > 0");
    if (dof < 1) throw invalid_input("StoppingConfig: dof must be >= 1");
    if (max_n <= n0) throw invalid_input("StoppingConfig: max_n must exceed n0");
  }

  double c_squared() const { return chi_square_quantile(alpha, dof); }
};

struct StoppingVerdict {
  bool stop = false;
  int n = 0;
  double threshold = 0.0;  // C^2 Lambda_max / delta^2
  double max_axis = 0.0;   // 2 sqrt(C^2 Lambda_max / n)
  bool censored = false;
};

// Smallest n with n >= C^2 Lambda_max(V) / delta^2 (known-V sample size).
inline int optimal_sample_size(const SymMatrix& v_true, const StoppingConfig& cfg) {
  cfg.validate();
  auto [lo, hi] = sym_eig_extremes(v_true);
  (void)lo;
  const double bound = cfg.c_squared() * hi / (cfg.delta * cfg.delta);
  return static_cast<int>(std::ceil(bound - 1e-12));
}

// Deterministic stopping time when the covariance of the estimate at sample
// size n is known to be V/n: smallest n >= n0 with n >= C^2 Lambda_max(V/n) / delta^2,
// i.e. n^2 >= C^2 Lambda_max(V) / delta^2. This is the oracle the sequential
// rule tracks when it plugs in the finite-sample covariance.
inline int oracle_stopping_time(const SymMatrix& v_true, const StoppingConfig& cfg) {
  const int n = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(optimal_sample_size(v_true, cfg))) - 1e-12));
  return std::max(n, cfg.n0);
}

namespace detail {

inline StoppingVerdict check_stop_lambda(int n, double lambda_max, const StoppingConfig& cfg) {
  StoppingVerdict v;
  v.n = n;
  const double c2 = cfg.c_squared();
  v.threshold = c2 * lambda_max / (cfg.delta * cfg.delta);
  v.max_axis = 2.0 * std::sqrt(c2 * lambda_max / n);
  v.stop = n >= cfg.n0 && static_cast<double>(n) >= v.threshold;
  return v;
}

}  // namespace detail

inline StoppingVerdict check_stop(int n, const CovarianceEstimate& cov, const StoppingConfig& cfg) {
  if (n < 1) throw invalid_input("check_stop: n must be >= 1");
  return detail::check_stop_lambda(n, cov.lambda_max, cfg);
}

// Contrast form: lambda_max taken from V_gamma = H' V H.
inline StoppingVerdict check_stop(int n, const SymMatrix& v_gamma, const StoppingConfig& cfg) {
  if (n < 1) throw invalid_input("check_stop: n must be >= 1");
  auto [lo, hi] = sym_eig_extremes(v_gamma);
  (void)lo;
  return detail::check_stop_lambda(n, hi, cfg);
}

// Membership in the ellipsoid {t : n (est - t)' precision (est - t) <= c^2},
// with precision = V_hat^{-1} (or V_gamma^{-1}).
inline bool ellipsoid_contains(const std::vector<double>& estimate, const std::vector<double>& truth,
                               const SymMatrix& precision, int n, double c_squared) {
  if (estimate.size() != truth.size() || static_cast<int>(estimate.size()) != precision.dim())
    throw invalid_input("ellipsoid_contains: dimension mismatch");
  std::vector<double> d(estimate.size());
  for (size_t i = 0; i < d.size(); ++i) d[i] = estimate[i] - truth[i];
  return n * precision.quad_form(d) <= c_squared;
}

}  // namespace cara

#endif  // CARA_STOPPING_HPP
