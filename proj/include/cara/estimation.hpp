#ifndef CARA_ESTIMATION_HPP
#define CARA_ESTIMATION_HPP

#include <cmath>
#include <string>
#include <vector>

#include "cara/model.hpp"
#include "cara/numkit.hpp"

namespace cara {

struct information_deficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct non_convergence : std::runtime_error {
  ArmCoefficients last_iterate;
  non_convergence(std::string msg, ArmCoefficients last)
      : std::runtime_error(std::move(msg)), last_iterate(std::move(last)) {}
};

struct ArmObservation {
  Covariate cov;
  int response;  // {0, 1}
};

struct ArmData {
  std::vector<ArmObservation> rows;

  int p() const { return rows.empty() ? 0 : rows[0].cov.dim(); }
};

struct FitResult {
  ArmCoefficients theta_hat;
  bool converged = false;
  double ridge_used = 0.0;
  int iterations = 0;
  double score_norm = 0.0;
};

// Score sum_i x_i (y_i - mu_i) and observed information
// sum_i mu_i (1 - mu_i) x_i x_i' at theta.
inline std::pair<std::vector<double>, SymMatrix> score_and_info(const ArmCoefficients& theta,
                                                                const ArmData& data) {
  const int p = theta.dim();
  std::vector<double> score(p, 0.0);
  SymMatrix info(p);
  for (const auto& row : data.rows) {
    const double mu = mean_response(theta, row.cov);
    const double lam = mu * (1.0 - mu);
    for (int i = 0; i < p; ++i) {
      score[i] += row.cov.x[i] * (row.response - mu);
      for (int j = i; j < p; ++j) info.add(i, j, lam * row.cov.x[i] * row.cov.x[j]);
    }
  }
  return {score, info};
}

namespace detail {

inline double log_likelihood(const ArmCoefficients& theta, const ArmData& data, double ridge) {
  double ll = 0.0;
  for (const auto& row : data.rows) {
    const double lp = linear_predictor(theta, row.cov);
    // log(mu) if y=1, log(1-mu) if y=0, in a form stable for large |lp|
    const double log1pexp = lp > 35.0 ? lp : std::log1p(std::exp(lp));
    ll += row.response * lp - log1pexp;
  }
  if (ridge > 0.0)
    for (double v : theta.values) ll -= ridge * v * v;
  return ll;
}

inline double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

// One Newton pass with step halving; returns convergence state.
inline FitResult newton_fit(const ArmData& data, ArmCoefficients theta, int max_iter, double ridge) {
  const int p = theta.dim();
  FitResult res;
  double obj = log_likelihood(theta, data, ridge);
  for (int it = 0; it < max_iter; ++it) {
    auto [score, info] = score_and_info(theta, data);
    if (ridge > 0.0) {
      for (int i = 0; i < p; ++i) {
        score[i] -= 2.0 * ridge * theta.values[i];
        info.add(i, i, 2.0 * ridge);
      }
    }
    res.iterations = it;
    res.score_norm = inf_norm(score);
    if (res.score_norm < 1e-10) {
      res.converged = true;
      break;
    }
    SymMatrix hinv;
    try {
      hinv = invert_spd(info);
    } catch (const not_positive_definite&) {
      res.converged = false;
      break;
    }
    std::vector<double> step = hinv.apply(score);
    // Step halving until the (penalized) objective does not decrease.
    double scale = 1.0;
    ArmCoefficients cand = theta;
    double cand_obj = obj;
    bool improved = false;
    for (int h = 0; h < 30; ++h) {
      for (int i = 0; i < p; ++i) cand.values[i] = theta.values[i] + scale * step[i];
      cand_obj = log_likelihood(cand, data, ridge);
      if (cand_obj >= obj - 1e-14) {
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      res.converged = false;
      break;
    }
    double step_norm = 0.0;
    for (int i = 0; i < p; ++i) step_norm = std::max(step_norm, std::fabs(cand.values[i] - theta.values[i]));
    theta = cand;
    obj = cand_obj;
    if (step_norm < 1e-12) {
      auto [s2, i2] = score_and_info(theta, data);
      if (ridge > 0.0)
        for (int i = 0; i < p; ++i) s2[i] -= 2.0 * ridge * theta.values[i];
      res.score_norm = inf_norm(s2);
      res.converged = true;
      break;
    }
  }
  res.theta_hat = theta;
  res.ridge_used = ridge;
  return res;
}

inline bool looks_separated(const FitResult& fit, const ArmData& data) {
  if (!fit.converged) return true;
  if (inf_norm(fit.theta_hat.values) > 50.0) return true;
  auto [score, info] = score_and_info(fit.theta_hat, data);
  (void)score;
  auto [lo, hi] = sym_eig_extremes(info);
  // separation drives mu(1-mu) -> 0, collapsing the information matrix even
  // when the score happens to vanish first
  return !(lo > 1e-8) || hi / lo > 1e12;
}

}  // namespace detail

// Newton-Raphson MLE with step halving; falls back to a ridge-penalized fit
// (lambda = 1e-4) on separation or a singular Hessian.
inline FitResult fit_arm_mle(const ArmData& data, const ArmCoefficients& init, int max_iter = 50) {
  if (data.rows.empty()) throw invalid_input("fit_arm_mle: empty data");
  FitResult fit = detail::newton_fit(data, init, max_iter, 0.0);
  if (!detail::looks_separated(fit, data)) return fit;
  const double lambda = 1e-4;
  FitResult rfit = detail::newton_fit(data, init, max_iter, lambda);
  if (!rfit.converged) {
    // Retry from zero; warm starts can sit on a bad ray after separation.
    ArmCoefficients zero;
    zero.values.assign(init.dim(), 0.0);
    rfit = detail::newton_fit(data, zero, max_iter, lambda);
  }
  if (!rfit.converged)
    throw non_convergence("fit_arm_mle: no convergence under ridge", rfit.theta_hat);
  return rfit;
}

// Block-diagonal averaged Fisher information: block k is
// (1/n) sum_i X_{i,k} mu(1-mu) x_i x_i' at theta_hat_k, n = total subjects.
struct InfoMatrix {
  std::vector<SymMatrix> blocks;
  int n = 0;

  int p() const { return blocks.empty() ? 0 : blocks[0].dim(); }
  int n_arms() const { return static_cast<int>(blocks.size()); }

  SymMatrix assembled() const {
    const int pk = p() * n_arms();
    SymMatrix full(pk);
    for (int k = 0; k < n_arms(); ++k)
      for (int i = 0; i < p(); ++i)
        for (int j = i; j < p(); ++j) full.set(k * p() + i, k * p() + j, blocks[k](i, j));
    return full;
  }
};

inline InfoMatrix pooled_information(const std::vector<ArmData>& per_arm,
                                     const ParameterVector& theta_hat) {
  InfoMatrix info;
  const int p = theta_hat.dim_per_arm();
  int n = 0;
  for (const auto& d : per_arm) n += static_cast<int>(d.rows.size());
  for (int k = 0; k < theta_hat.n_arms(); ++k) {
    SymMatrix block(p);
    for (const auto& row : per_arm[k].rows) {
      const double mu = mean_response(theta_hat.arms[k], row.cov);
      const double lam = mu * (1.0 - mu);
      for (int i = 0; i < p; ++i)
        for (int j = i; j < p; ++j) block.add(i, j, lam * row.cov.x[i] * row.cov.x[j]);
    }
    block.scale(1.0 / n);
    info.blocks.push_back(block);
  }
  info.n = n;
  return info;
}

struct CovarianceEstimate {
  SymMatrix v_hat;  // pK x pK, block diagonal
  double lambda_max = 0.0;
  double lambda_min = 0.0;
};

// V_hat = blockwise inverse of the averaged information.
inline CovarianceEstimate covariance_estimate(const InfoMatrix& info) {
  CovarianceEstimate cov;
  const int p = info.p();
  const int pk = p * info.n_arms();
  cov.v_hat = SymMatrix(pk);
  cov.lambda_max = -std::numeric_limits<double>::infinity();
  cov.lambda_min = std::numeric_limits<double>::infinity();
  for (int k = 0; k < info.n_arms(); ++k) {
    auto [lo, hi] = sym_eig_extremes(info.blocks[k]);
    (void)hi;
    if (!(lo > 1e-12)) throw information_deficient("covariance_estimate: singular block " + std::to_string(k));
    SymMatrix inv = invert_spd(info.blocks[k]);
    auto [vlo, vhi] = sym_eig_extremes(inv);
    cov.lambda_max = std::max(cov.lambda_max, vhi);
    cov.lambda_min = std::min(cov.lambda_min, vlo);
    for (int i = 0; i < p; ++i)
      for (int j = i; j < p; ++j) cov.v_hat.set(k * p + i, k * p + j, inv(i, j));
  }
  return cov;
}

// Contrast gamma = H' theta; h_columns[c] is the c-th column of H (length pK).
struct ContrastSpec {
  std::vector<std::vector<double>> h_columns;

  int h() const { return static_cast<int>(h_columns.size()); }
  int pk() const { return h_columns.empty() ? 0 : static_cast<int>(h_columns[0].size()); }

  void validate() const {
    if (h() == 0) throw invalid_input("ContrastSpec: empty H");
    for (const auto& c : h_columns)
      if (static_cast<int>(c.size()) != pk()) throw invalid_input("ContrastSpec: ragged H");
    if (h() > pk()) throw invalid_input("ContrastSpec: rank h exceeds pK");
    // Numerical rank check via the Gram matrix H'H.
    SymMatrix gram(h());
    for (int a = 0; a < h(); ++a)
      for (int b = a; b < h(); ++b) {
        double s = 0.0;
        for (int i = 0; i < pk(); ++i) s += h_columns[a][i] * h_columns[b][i];
        gram.set(a, b, s);
      }
    auto [lo, hi] = sym_eig_extremes(gram);
    if (!(lo > 1e-10 * std::max(hi, 1.0))) throw invalid_input("ContrastSpec: H is rank deficient");
  }

  std::vector<double> apply(const std::vector<double>& theta_stacked) const {
    if (static_cast<int>(theta_stacked.size()) != pk())
      throw invalid_input("ContrastSpec::apply: dimension mismatch");
    std::vector<double> gamma(h(), 0.0);
    for (int c = 0; c < h(); ++c)
      for (int i = 0; i < pk(); ++i) gamma[c] += h_columns[c][i] * theta_stacked[i];
    return gamma;
  }
};

// H' V H
inline SymMatrix contrast_covariance(const CovarianceEstimate& v, const ContrastSpec& contrast) {
  if (contrast.pk() != v.v_hat.dim()) throw invalid_input("contrast_covariance: dimension mismatch");
  const int h = contrast.h();
  SymMatrix out(h);
  for (int a = 0; a < h; ++a) {
    const std::vector<double> vha = v.v_hat.apply(contrast.h_columns[a]);
    for (int b = a; b < h; ++b) {
      double s = 0.0;
      for (int i = 0; i < contrast.pk(); ++i) s += contrast.h_columns[b][i] * vha[i];
      out.set(a, b, s);
    }
  }
  return out;
}

}  // namespace cara

#endif  // CARA_ESTIMATION_HPP
