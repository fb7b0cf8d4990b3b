#ifndef CARA_MODEL_HPP
#define CARA_MODEL_HPP

#include <cmath>
#include <vector>

#include "cara/numkit.hpp"

namespace cara {

// Per-arm coefficient vector; values[0] is the intercept.
struct ArmCoefficients {
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
};

struct ParameterVector {
  std::vector<ArmCoefficients> arms;

  int n_arms() const { return static_cast<int>(arms.size()); }
  int dim_per_arm() const { return arms.empty() ? 0 : arms[0].dim(); }

  void validate() const {
    if (n_arms() < 2) throw invalid_input("ParameterVector: need K >= 2 arms");
    for (const auto& a : arms) {
      if (a.dim() != dim_per_arm()) throw invalid_input("ParameterVector: arms must share p");
      for (double v : a.values)
        if (!std::isfinite(v)) throw invalid_input("ParameterVector: non-finite coefficient");
    }
  }

  // Arms stacked in order: (theta_1, ..., theta_K).
  std::vector<double> stacked() const {
    std::vector<double> out;
    for (const auto& a : arms) out.insert(out.end(), a.values.begin(), a.values.end());
    return out;
  }
};

// Covariate augmented with the intercept slot, x[0] = 1.
struct Covariate {
  std::vector<double> x;

  int dim() const { return static_cast<int>(x.size()); }
};

enum class Link { logit };

struct TrueModel {
  ParameterVector params;
  Link link = Link::logit;
  MixtureNormalSpec covariate_dist;

  int n_arms() const { return params.n_arms(); }
  int dim_per_arm() const { return params.dim_per_arm(); }
};

inline double linear_predictor(const ArmCoefficients& arm, const Covariate& cov) {
  if (arm.dim() != cov.dim()) throw invalid_input("linear_predictor: dimension mismatch");
  double lp = 0.0;
  for (int i = 0; i < arm.dim(); ++i) lp += arm.values[i] * cov.x[i];
  // Overflow guard: exp never sees anything beyond +-700.
  if (lp > 700.0) lp = 700.0;
  if (lp < -700.0) lp = -700.0;
  return lp;
}

inline double logistic(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double mean_response(const ArmCoefficients& arm, const Covariate& cov) {
  return logistic(linear_predictor(arm, cov));
}

inline Covariate draw_covariate(const TrueModel& model, RngStream& rng) {
  Covariate c;
  c.x.resize(model.dim_per_arm());
  c.x[0] = 1.0;
  for (int i = 1; i < model.dim_per_arm(); ++i) c.x[i] = draw_mixture_normal(model.covariate_dist, rng);
  return c;
}

inline int draw_response(const TrueModel& model, int arm_index, const Covariate& cov, RngStream& rng) {
  if (arm_index < 0 || arm_index >= model.n_arms()) throw invalid_input("draw_response: arm index out of range");
  return draw_bernoulli(mean_response(model.params.arms[arm_index], cov), rng);
}

// Arm with the highest true success probability at this covariate; ties go
// to the lowest index. Simulation-only oracle used for the CAP metric.
inline int better_arm(const TrueModel& model, const Covariate& cov) {
  int best = 0;
  double best_mu = mean_response(model.params.arms[0], cov);
  for (int k = 1; k < model.n_arms(); ++k) {
    const double mu = mean_response(model.params.arms[k], cov);
    if (mu > best_mu) {
      best_mu = mu;
      best = k;
    }
  }
  return best;
}

}  // namespace cara

#endif  // CARA_MODEL_HPP
