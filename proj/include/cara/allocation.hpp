#ifndef CARA_ALLOCATION_HPP
#define CARA_ALLOCATION_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "cara/estimation.hpp"
#include "cara/model.hpp"
#include "cara/numkit.hpp"

namespace cara {

struct unsupported_rule : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Symmetric map J used in the target probability pi_1 = J(delta / T_n).
enum class JKind { logistic, normal_cdf };

inline double j_function(JKind kind, double t) {
  switch (kind) {
    case JKind::normal_cdf:
      return 0.5 * std::erfc(-t / std::sqrt(2.0));
    case JKind::logistic:
    default:
      return logistic(t);
  }
}

struct TuningConfig {
  double t0 = 1.0;
  double eta0 = 0.0;
  bool vary_t = false;
  bool vary_eta = false;
  std::pair<double, double> t_bounds{0.1, 10.0};
  std::pair<double, double> eta_bounds{0.0, 10.0};

  void validate() const {
    if (!(t0 > 0.0)) throw invalid_input("TuningConfig: t0 must be > 0");
    if (eta0 < 0.0) throw invalid_input("TuningConfig: eta0 must be >= 0");
    if (!(t_bounds.first < t_bounds.second)) throw invalid_input("TuningConfig: bad t_bounds");
    if (!(eta_bounds.first < eta_bounds.second)) throw invalid_input("TuningConfig: bad eta_bounds");
    if (t0 < t_bounds.first || t0 > t_bounds.second) throw invalid_input("TuningConfig: t0 outside t_bounds");
    if (eta0 < eta_bounds.first || eta0 > eta_bounds.second)
      throw invalid_input("TuningConfig: eta0 outside eta_bounds");
  }
};

struct AllocationDecision {
  std::vector<double> target_pi;
  std::vector<double> optimal_p;
  double t_used = 0.0;
  double eta_used = 0.0;
  double utility_at_p = 0.0;
};

// pi_1 = J((x'theta_1 - x'theta_2) / T_n), clamped into (0,1) so condition
// (C1) holds by construction. K = 2 only.
inline std::vector<double> target_probability(const ParameterVector& theta_hat, const Covariate& cov,
                                              double t_n, JKind j = JKind::logistic) {
  if (theta_hat.n_arms() != 2) throw unsupported_rule("target_probability: built-in rule requires K = 2");
  if (!(t_n > 0.0)) throw invalid_input("target_probability: t_n must be > 0");
  const double diff =
      linear_predictor(theta_hat.arms[0], cov) - linear_predictor(theta_hat.arms[1], cov);
  double p1 = j_function(j, diff / t_n);
  p1 = std::clamp(p1, 1e-6, 1.0 - 1e-6);
  return {p1, 1.0 - p1};
}

// Checks condition (C1) on a user-supplied allocation rule's output.
inline void validate_allocation_probabilities(const std::vector<double>& pi) {
  double sum = 0.0;
  for (double v : pi) {
    if (!(v > 0.0 && v < 1.0)) throw invalid_input("allocation rule violates (C1): pi_k not in (0,1)");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw invalid_input("allocation rule violates (C1): sum pi_k != 1");
}

// T_n proportional and eta inversely proportional to the standard error of
// the estimated treatment-effect difference at the incoming covariate.
inline std::pair<double, double> tuning_schedule(const TuningConfig& cfg, double se_delta) {
  if (se_delta < 0.0) throw invalid_input("tuning_schedule: se_delta must be >= 0");
  double t_n = cfg.t0;
  double eta_n = cfg.eta0;
  if (cfg.vary_t) t_n = std::clamp(cfg.t0 * se_delta, cfg.t_bounds.first, cfg.t_bounds.second);
  if (cfg.vary_eta)
    eta_n = std::clamp(cfg.eta0 / std::max(se_delta, 1e-6), cfg.eta_bounds.first, cfg.eta_bounds.second);
  return {t_n, eta_n};
}

// Floor on the Bernoulli variance plug-in used by the design utility. Early
// fits can be separated, driving mu(1-mu) toward 0 and blinding the
// D-criterion to an arm that still needs observations; the floor keeps the
// look-ahead information gain bounded away from zero. Inference (pooled
// information, covariance) always uses the raw plug-in.
inline constexpr double kUtilityVarianceFloor = 0.01;

// U(p) = log|I_{n+1}(p)| - eta sum_k p_k log(p_k / pi_k), with
// I_{n+1}(p) = (n I_n + p_k lambda_k x x') / (n+1) blockwise.
inline double utility(const std::vector<double>& p, const InfoMatrix& info, const Covariate& cov,
                      const ParameterVector& theta_hat, double eta, const std::vector<double>& target_pi) {
  const int np = info.p();
  const int n = info.n;
  double logdet = 0.0;
  for (int k = 0; k < info.n_arms(); ++k) {
    const double mu = mean_response(theta_hat.arms[k], cov);
    const double lam = std::max(mu * (1.0 - mu), kUtilityVarianceFloor);
    SymMatrix m(np);
    for (int i = 0; i < np; ++i)
      for (int j = i; j < np; ++j)
        m.set(i, j, (n * info.blocks[k](i, j) + p[k] * lam * cov.x[i] * cov.x[j]) / (n + 1.0));
    try {
      logdet += log_det_spd(m);
    } catch (const not_positive_definite&) {
      return -std::numeric_limits<double>::infinity();
    }
  }
  double entropy = 0.0;
  for (size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) entropy += p[k] * std::log(p[k] / target_pi[k]);
  return logdet - eta * entropy;
}

// Golden-section argmax of U over p_1 in [0,1] (U is concave in p_1).
inline std::vector<double> maximize_utility(const InfoMatrix& info, const Covariate& cov,
                                            const ParameterVector& theta_hat, double eta,
                                            const std::vector<double>& target_pi) {
  if (theta_hat.n_arms() != 2) throw unsupported_rule("maximize_utility: built-in optimizer requires K = 2");
  const auto u = [&](double p1) {
    return utility({p1, 1.0 - p1}, info, cov, theta_hat, eta, target_pi);
  };
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.0, b = 1.0;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double uc = u(c), ud = u(d);
  while (b - a > 1e-6) {
    if (uc >= ud) {
      b = d;
      d = c;
      ud = uc;
      c = b - gr * (b - a);
      uc = u(c);
    } else {
      a = c;
      c = d;
      uc = ud;
      d = a + gr * (b - a);
      ud = u(d);
    }
  }
  const double p1 = 0.5 * (a + b);
  return {p1, 1.0 - p1};
}

inline int allocate(const AllocationDecision& decision, RngStream& rng) {
  return draw_categorical(decision.optimal_p, rng);
}

using AllocationRule =
    std::function<std::vector<double>(const ParameterVector&, const Covariate&)>;

struct AllocationAsymptotics {
  std::vector<double> nu;  // nu_k = E_xi[pi_k(theta, xi)]
  SymMatrix sigma1;        // diag(nu) - nu nu'
  SymMatrix sigma2;        // sum_k (dnu/dtheta_k) V_k (dnu/dtheta_k)'
  SymMatrix sigma;         // sigma1 + 2 sigma2
};

// Monte Carlo estimate of the allocation expectation nu and the Theorem-1(vi)
// covariance, with common random numbers across the finite-difference shifts.
inline AllocationAsymptotics estimate_allocation_expectation(const TrueModel& model,
                                                             const AllocationRule& rule,
                                                             int mc_size, RngStream& rng) {
  if (mc_size < 10000) throw invalid_input("estimate_allocation_expectation: mc_size must be >= 1e4");
  const int K = model.n_arms();
  const int p = model.dim_per_arm();
  std::vector<Covariate> draws;
  draws.reserve(mc_size);
  for (int i = 0; i < mc_size; ++i) draws.push_back(draw_covariate(model, rng));

  const auto mean_pi = [&](const ParameterVector& theta) {
    std::vector<double> nu(K, 0.0);
    for (const auto& c : draws) {
      const std::vector<double> pi = rule(theta, c);
      for (int k = 0; k < K; ++k) nu[k] += pi[k];
    }
    for (double& v : nu) v /= mc_size;
    return nu;
  };

  AllocationAsymptotics out;
  out.nu = mean_pi(model.params);
  out.sigma1 = SymMatrix(K);
  for (int a = 0; a < K; ++a)
    for (int b = a; b < K; ++b)
      out.sigma1.set(a, b, (a == b ? out.nu[a] : 0.0) - out.nu[a] * out.nu[b]);

  // V_k from the same draws: (nu_k E[lambda_k x x'])^{-1}.
  std::vector<SymMatrix> v_blocks;
  for (int k = 0; k < K; ++k) {
    SymMatrix m(p);
    for (const auto& c : draws) {
      const double mu = mean_response(model.params.arms[k], c);
      const double lam = mu * (1.0 - mu);
      for (int i = 0; i < p; ++i)
        for (int j = i; j < p; ++j) m.add(i, j, lam * c.x[i] * c.x[j]);
    }
    m.scale(out.nu[k] / mc_size);
    v_blocks.push_back(invert_spd(m));
  }

  // Central finite differences of nu w.r.t. each coordinate of theta_k.
  const double step = 1e-4;
  out.sigma2 = SymMatrix(K);
  for (int k = 0; k < K; ++k) {
    std::vector<std::vector<double>> dnu(K, std::vector<double>(p, 0.0));
    for (int j = 0; j < p; ++j) {
      ParameterVector up = model.params, dn = model.params;
      up.arms[k].values[j] += step;
      dn.arms[k].values[j] -= step;
      const std::vector<double> nu_up = mean_pi(up);
      const std::vector<double> nu_dn = mean_pi(dn);
      for (int a = 0; a < K; ++a) dnu[a][j] = (nu_up[a] - nu_dn[a]) / (2.0 * step);
    }
    for (int a = 0; a < K; ++a)
      for (int b = a; b < K; ++b) {
        const std::vector<double> vb = v_blocks[k].apply(dnu[b]);
        double s = 0.0;
        for (int j = 0; j < p; ++j) s += dnu[a][j] * vb[j];
        out.sigma2.add(a, b, s);
      }
  }

  out.sigma = SymMatrix(K);
  for (int a = 0; a < K; ++a)
    for (int b = a; b < K; ++b) out.sigma.set(a, b, out.sigma1(a, b) + 2.0 * out.sigma2(a, b));
  return out;
}

}  // namespace cara

#endif  // CARA_ALLOCATION_HPP
