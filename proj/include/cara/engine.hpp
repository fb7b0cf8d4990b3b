#ifndef CARA_ENGINE_HPP
#define CARA_ENGINE_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cara/allocation.hpp"
#include "cara/estimation.hpp"
#include "cara/model.hpp"
#include "cara/numkit.hpp"
#include "cara/stopping.hpp"

namespace cara {

// Everything needed to run one sequential trial.
struct TrialSpec {
  TrueModel model;
  std::optional<ContrastSpec> contrast;  // contrast rule when present, full-parameter otherwise
  StoppingConfig stopping;               // n0/dof are derived in run_trial when left at 0
  TuningConfig tuning;
  int m0 = 10;
  JKind j = JKind::logistic;
  bool fixed_allocation = false;   // freeze optimal_p at fixed_p (oracle scenarios)
  std::vector<double> fixed_p;
};

struct TrialRecord {
  Covariate cov;
  int arm = 0;
  int response = 0;
  double p1_used = 0.0;
  int stage = 0;  // 0 = burn-in, 1 = adaptive
};

struct TrialState {
  std::vector<TrialRecord> records;
  std::vector<ArmData> per_arm;
  ParameterVector theta_hat;
  InfoMatrix info;
  int n = 0;
  std::vector<int> arm_counts;

  void append(const Covariate& cov, int arm, int response, double p1, int stage) {
    records.push_back({cov, arm, response, p1, stage});
    per_arm[arm].rows.push_back({cov, response});
    arm_counts[arm] += 1;
    n += 1;
  }
};

struct TrialResult {
  int tau = 0;
  bool censored = false;
  bool failed = false;
  ParameterVector theta_at_stop;
  std::vector<double> gamma_at_stop;
  bool covered = false;
  // Allocation quality is judged on the adaptively allocated subjects only;
  // the burn-in block is randomized independently of the covariates, so it
  // carries no information about the allocation rule.
  int correct_allocations = 0;
  int adaptive_allocations = 0;
  int total_allocations = 0;
  std::vector<int> arm_counts;
  double max_axis_at_stop = 0.0;
};

struct MonteCarloSummary {
  std::string scenario_id;
  int replications = 0;
  double mean_tau = 0.0;
  double sd_tau = 0.0;
  double coverage_probability = 0.0;
  double correct_allocation_probability = 0.0;
  double censor_rate = 0.0;
  double failure_rate = 0.0;
  std::vector<double> mean_arm_proportions;
};

namespace detail {

// Standard error of the estimated effect difference x'theta_1 - x'theta_2
// at covariate x: sqrt(xt' V_hat xt / n) with xt = (x, -x) stacked.
inline double se_effect_difference(const CovarianceEstimate& cov, const Covariate& x, int n) {
  const int p = x.dim();
  std::vector<double> xt(2 * static_cast<size_t>(p));
  for (int i = 0; i < p; ++i) {
    xt[i] = x.x[i];
    xt[p + i] = -x.x[i];
  }
  return std::sqrt(cov.v_hat.quad_form(xt) / n);
}

// Haff-type small-sample correction for the inverted-information plug-in:
// inverting a noisy information matrix biases the covariance upward, so each
// arm's p x p block is scaled by (n_k - p - 1)/(n_k + p + 1), which is 1 + O(1/n_k)
// and counters the inverse-Wishart mean bias n_k/(n_k - p - 1) plus part of the
// extreme-eigenvalue spread. Returns false (treat as deficient) when an arm has
// too few observations for the factor to be positive.
inline bool correct_covariance_plugin(SymMatrix& v_hat, const std::vector<int>& arm_counts, int p) {
  for (size_t k = 0; k < arm_counts.size(); ++k) {
    const double nk = arm_counts[k];
    if (!(nk > p + 1)) return false;
    const double f = (nk - p - 1.0) / (nk + p + 1.0);
    const int off = static_cast<int>(k) * p;
    for (int i = 0; i < p; ++i)
      for (int j = i; j < p; ++j) v_hat.set(off + i, off + j, f * v_hat(off + i, off + j));
  }
  return true;
}

}  // namespace detail

inline TrialResult run_trial(const TrialSpec& spec, uint64_t master_seed, uint64_t stream_id) {
  spec.model.params.validate();
  spec.model.covariate_dist.validate();
  if (spec.contrast) spec.contrast->validate();
  spec.tuning.validate();
  if (spec.m0 < 1) throw invalid_input("run_trial: m0 must be >= 1");

  const int K = spec.model.n_arms();
  const int p = spec.model.dim_per_arm();

  StoppingConfig stopping = spec.stopping;
  if (stopping.n0 == 0) stopping.n0 = K * spec.m0;
  if (stopping.dof == 0) stopping.dof = spec.contrast ? spec.contrast->h() : p * K;
  stopping.validate();
  const double c2 = stopping.c_squared();

  RngStream rng(master_seed, stream_id);

  TrialState state;
  state.per_arm.resize(K);
  state.arm_counts.assign(K, 0);
  state.theta_hat.arms.resize(K);
  for (auto& a : state.theta_hat.arms) a.values.assign(p, 0.0);

  // Phase 1: restricted randomization, a random permutation of m0 copies of
  // each arm.
  std::vector<int> block;
  for (int k = 0; k < K; ++k) block.insert(block.end(), spec.m0, k);
  for (int i = static_cast<int>(block.size()) - 1; i > 0; --i) {
    const int jdx = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(block[i], block[jdx]);
  }
  for (int arm : block) {
    const Covariate cov = draw_covariate(spec.model, rng);
    const int y = draw_response(spec.model, arm, cov, rng);
    state.append(cov, arm, y, 1.0 / K, 0);
  }

  TrialResult result;
  const std::vector<double> gamma_true =
      spec.contrast ? spec.contrast->apply(spec.model.params.stacked()) : spec.model.params.stacked();

  // Phase 2: refit, check the stopping rule, allocate the next subject.
  while (true) {
    bool fit_ok = true;
    for (int k = 0; k < K; ++k) {
      try {
        FitResult fit = fit_arm_mle(state.per_arm[k], state.theta_hat.arms[k]);
        state.theta_hat.arms[k] = fit.theta_hat;
      } catch (const non_convergence&) {
        fit_ok = false;
        break;
      }
    }
    if (!fit_ok) {
      result.failed = true;
      break;
    }
    state.info = pooled_information(state.per_arm, state.theta_hat);

    bool have_cov = true;
    CovarianceEstimate cov_est;
    try {
      cov_est = covariance_estimate(state.info);
    } catch (const information_deficient&) {
      have_cov = false;  // deficient information means "do not stop"
    }
    if (have_cov) have_cov = detail::correct_covariance_plugin(cov_est.v_hat, state.arm_counts, p);

    if (have_cov) {
      // The stopping threshold plugs in the covariance of the estimate at the
      // current sample size, Var(gamma_hat) = V_gamma / n.
      SymMatrix v_gamma = spec.contrast ? contrast_covariance(cov_est, *spec.contrast) : cov_est.v_hat;
      SymMatrix v_stop = v_gamma;
      v_stop.scale(1.0 / state.n);
      const StoppingVerdict verdict = check_stop(state.n, v_stop, stopping);
      if (verdict.stop) {
        result.tau = state.n;
        result.max_axis_at_stop = verdict.max_axis;
        result.theta_at_stop = state.theta_hat;
        result.gamma_at_stop = spec.contrast ? spec.contrast->apply(state.theta_hat.stacked())
                                             : state.theta_hat.stacked();
        result.covered =
            ellipsoid_contains(result.gamma_at_stop, gamma_true, invert_spd(v_gamma), state.n, c2);
        break;
      }
    }

    if (state.n >= stopping.max_n) {
      result.censored = true;
      result.tau = state.n;
      result.theta_at_stop = state.theta_hat;
      break;
    }

    const Covariate cov = draw_covariate(spec.model, rng);
    AllocationDecision decision;
    if (spec.fixed_allocation) {
      decision.target_pi = spec.fixed_p;
      decision.optimal_p = spec.fixed_p;
    } else {
      // The varying schedules sharpen allocation as the effect estimate
      // firms up; they are not allowed to weaken it below the fixed-(T0, eta0)
      // behavior, so the plug-in standard error is capped at the neutral
      // point se = 1 (early-phase V_hat inflation would otherwise flatten
      // the target and disable the entropy pin exactly when data are scarce).
      const double se =
          have_cov ? std::min(detail::se_effect_difference(cov_est, cov, state.n), 1.0) : 1.0;
      const auto [t_n, eta_n] = tuning_schedule(spec.tuning, se);
      decision.t_used = t_n;
      decision.eta_used = eta_n;
      decision.target_pi = target_probability(state.theta_hat, cov, t_n, spec.j);
      decision.optimal_p = maximize_utility(state.info, cov, state.theta_hat, eta_n, decision.target_pi);
      decision.utility_at_p =
          utility(decision.optimal_p, state.info, cov, state.theta_hat, eta_n, decision.target_pi);
    }
    const int arm = allocate(decision, rng);
    const int y = draw_response(spec.model, arm, cov, rng);
    state.append(cov, arm, y, decision.optimal_p[0], 1);
  }

  if (result.tau == 0) result.tau = state.n;
  result.total_allocations = state.n;
  for (const auto& rec : state.records) {
    if (rec.stage != 1) continue;
    result.adaptive_allocations += 1;
    if (rec.arm == better_arm(spec.model, rec.cov)) result.correct_allocations += 1;
  }
  result.arm_counts = state.arm_counts;
  return result;
}

inline MonteCarloSummary summarize(const std::vector<TrialResult>& results) {
  if (results.empty()) throw invalid_input("summarize: empty results");
  MonteCarloSummary s;
  s.replications = static_cast<int>(results.size());
  const int K = results[0].arm_counts.empty() ? 0 : static_cast<int>(results[0].arm_counts.size());
  s.mean_arm_proportions.assign(K, 0.0);

  int n_used = 0, n_censored = 0, n_failed = 0;
  double sum_tau = 0.0, sumsq_tau = 0.0;
  long long correct = 0, total = 0;
  int covered = 0, prop_count = 0;
  for (const auto& r : results) {
    if (r.failed) {
      ++n_failed;
      continue;
    }
    if (r.censored) {
      ++n_censored;
      continue;
    }
    ++n_used;
    sum_tau += r.tau;
    sumsq_tau += static_cast<double>(r.tau) * r.tau;
    covered += r.covered ? 1 : 0;
    correct += r.correct_allocations;
    total += r.adaptive_allocations;
    if (r.tau > 0) {
      for (int k = 0; k < K; ++k) s.mean_arm_proportions[k] += static_cast<double>(r.arm_counts[k]) / r.tau;
      ++prop_count;
    }
  }
  s.censor_rate = static_cast<double>(n_censored) / s.replications;
  s.failure_rate = static_cast<double>(n_failed) / s.replications;
  if (n_used > 0) {
    s.mean_tau = sum_tau / n_used;
    const double var = n_used > 1 ? (sumsq_tau - sum_tau * sum_tau / n_used) / (n_used - 1) : 0.0;
    s.sd_tau = std::sqrt(std::max(var, 0.0));
    s.coverage_probability = static_cast<double>(covered) / n_used;
    s.correct_allocation_probability = total > 0 ? static_cast<double>(correct) / total : 0.0;
    for (double& v : s.mean_arm_proportions) v /= prop_count;
  } else {
    s.mean_tau = std::numeric_limits<double>::quiet_NaN();
    s.sd_tau = std::numeric_limits<double>::quiet_NaN();
    s.coverage_probability = std::numeric_limits<double>::quiet_NaN();
    s.correct_allocation_probability = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

struct ScenarioRun {
  std::string id;
  TrialSpec spec;
};

// Replication r of scenario s always uses stream derive_stream_id(s, r), so
// output is independent of the degree of parallelism.
inline std::vector<MonteCarloSummary> run_monte_carlo(const std::vector<ScenarioRun>& scenarios,
                                                      int replications, uint64_t master_seed,
                                                      int jobs = 1) {
  if (replications < 1) throw invalid_input("run_monte_carlo: replications must be >= 1");
  if (jobs < 1) jobs = 1;
  const size_t total = scenarios.size() * static_cast<size_t>(replications);
  std::vector<TrialResult> results(total);
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
      const size_t s = i / replications;
      const size_t r = i % replications;
      results[i] = run_trial(scenarios[s].spec, master_seed, derive_stream_id(s, r));
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<MonteCarloSummary> out;
  for (size_t s = 0; s < scenarios.size(); ++s) {
    std::vector<TrialResult> slice(results.begin() + s * replications,
                                   results.begin() + (s + 1) * replications);
    MonteCarloSummary sum = summarize(slice);
    sum.scenario_id = scenarios[s].id;
    out.push_back(std::move(sum));
  }
  return out;
}

}  // namespace cara

#endif  // CARA_ENGINE_HPP
