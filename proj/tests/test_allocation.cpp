#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "cara/allocation.hpp"

using namespace cara;

namespace {

Covariate cov(double xi) { return Covariate{{1.0, xi}}; }

ParameterVector params(double a1, double b1, double a2, double b2) {
  ParameterVector p;
  p.arms = {{{a1, b1}}, {{a2, b2}}};
  return p;
}

// 10^4-point grid argmax of the utility over p_1; independent of the
// golden-section path.
std::pair<double, double> grid_max_utility(const InfoMatrix& info, const Covariate& c,
                                           const ParameterVector& theta, double eta,
                                           const std::vector<double>& pi) {
  double best_p = 0.0, best_u = -1e300;
  const int n = 10000;
  for (int i = 0; i <= n; ++i) {
    const double p1 = static_cast<double>(i) / n;
    const double u = utility({p1, 1.0 - p1}, info, c, theta, eta, pi);
    if (u > best_u) {
      best_u = u;
      best_p = p1;
    }
  }
  return {best_p, best_u};
}

InfoMatrix random_info(RngStream& rng, int n) {
  InfoMatrix info;
  info.n = n;
  for (int k = 0; k < 2; ++k) {
    SymMatrix b(2);
    b.set(0, 0, 0.05 + 0.2 * rng.uniform());
    b.set(1, 1, 0.05 + 0.4 * rng.uniform());
    b.set(0, 1, 0.02 * (2.0 * rng.uniform() - 1.0));
    info.blocks.push_back(b);
  }
  return info;
}

}  // namespace

TEST_CASE("target probability symmetry and values") {
  const Covariate c = cov(1.5);
  CHECK(target_probability(params(0.3, 0.2, 0.3, 0.2), c, 1.0)[0] == Catch::Approx(0.5).margin(1e-12));

  // Delta = T_n -> logistic(1)
  const auto p = target_probability(params(1.0, 0.0, 0.0, 0.0), c, 1.0);
  CHECK(p[0] == Catch::Approx(0.7310586).margin(1e-7));
  CHECK(p[0] + p[1] == Catch::Approx(1.0).margin(1e-15));

  // negating the difference swaps the entries
  const auto q = target_probability(params(0.0, 0.0, 1.0, 0.0), c, 1.0);
  CHECK(q[0] == Catch::Approx(p[1]).margin(1e-12));

  // C1 by construction: clamped away from 0 and 1
  const auto extreme = target_probability(params(100.0, 0.0, -100.0, 0.0), c, 1.0);
  CHECK(extreme[0] > 0.0);
  CHECK(extreme[0] < 1.0);

  ParameterVector three;
  three.arms = {{{0.0}}, {{0.0}}, {{0.0}}};
  CHECK_THROWS_AS(target_probability(three, Covariate{{1.0}}, 1.0), unsupported_rule);
}

TEST_CASE("tuning schedule") {
  TuningConfig cfg;
  cfg.t0 = 0.5;
  cfg.eta0 = 0.1;
  CHECK(tuning_schedule(cfg, 2.0) == std::pair{0.5, 0.1});

  cfg.vary_t = true;
  CHECK(tuning_schedule(cfg, 2.0).first == Catch::Approx(1.0));

  cfg.vary_eta = true;
  // se -> 0 hits the upper clamp
  CHECK(tuning_schedule(cfg, 0.0).second == Catch::Approx(10.0));
  CHECK_THROWS_AS(tuning_schedule(cfg, -1.0), invalid_input);
}

TEST_CASE("utility entropy term vanishes at the target") {
  RngStream rng(41, 0);
  InfoMatrix info = random_info(rng, 40);
  const Covariate c = cov(0.8);
  const ParameterVector theta = params(0.1, -1.0, 0.1, 1.0);
  const std::vector<double> pi{0.3, 0.7};
  const double u_eta0 = utility(pi, info, c, theta, 0.0, pi);
  const double u_eta = utility(pi, info, c, theta, 5.0, pi);
  CHECK(u_eta == Catch::Approx(u_eta0).margin(1e-12));
}

TEST_CASE("eta zero reduces to the D-criterion") {
  RngStream rng(41, 1);
  InfoMatrix info = random_info(rng, 40);
  const Covariate c = cov(-0.5);
  const ParameterVector theta = params(0.1, -1.0, 0.1, 1.0);
  const std::vector<double> p{0.4, 0.6};
  double logdet = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double mu = mean_response(theta.arms[k], c);
    const double lam = std::max(mu * (1 - mu), kUtilityVarianceFloor);
    SymMatrix m(2);
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j)
        m.set(i, j, (info.n * info.blocks[k](i, j) + p[k] * lam * c.x[i] * c.x[j]) / (info.n + 1.0));
    logdet += log_det_spd(m);
  }
  CHECK(utility(p, info, c, theta, 0.0, {0.5, 0.5}) == Catch::Approx(logdet).margin(1e-12));
}

TEST_CASE("utility returns -inf on singular updated information") {
  InfoMatrix info;
  info.n = 0;
  info.blocks = {SymMatrix(2), SymMatrix(2)};
  const double u = utility({0.0, 1.0}, info, cov(1.0), params(0, 0, 0, 0), 0.0, {0.5, 0.5});
  CHECK(u == -std::numeric_limits<double>::infinity());
}

TEST_CASE("entropy penalty is nonnegative, zero only at the target") {
  RngStream rng(43, 0);
  InfoMatrix info = random_info(rng, 100);
  const Covariate c = cov(0.3);
  const ParameterVector theta = params(0.1, -1.0, 0.1, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double pi1 = 0.05 + 0.9 * rng.uniform();
    const double p1 = 0.05 + 0.9 * rng.uniform();
    const std::vector<double> pi{pi1, 1 - pi1};
    const std::vector<double> p{p1, 1 - p1};
    const double kl = (utility(p, info, c, theta, 0.0, pi) - utility(p, info, c, theta, 1.0, pi));
    CHECK(kl >= -1e-12);
    if (std::fabs(p1 - pi1) > 0.01) CHECK(kl > 0.0);
  }
}

TEST_CASE("large eta pins the optimum at the target") {
  RngStream rng(47, 0);
  InfoMatrix info = random_info(rng, 40);
  const Covariate c = cov(1.2);
  const ParameterVector theta = params(0.1, -1.0, 0.1, 1.0);
  const std::vector<double> pi{0.23, 0.77};
  const auto p = maximize_utility(info, c, theta, 1e3, pi);
  CHECK(p[0] == Catch::Approx(pi[0]).margin(1e-3));
}

TEST_CASE("symmetric state gives balanced D-optimal allocation") {
  InfoMatrix info;
  info.n = 40;
  SymMatrix b(2);
  b.set(0, 0, 0.1);
  b.set(1, 1, 0.2);
  info.blocks = {b, b};
  // equal arms and a shared covariate: the D-criterion is symmetric in p
  const auto p = maximize_utility(info, cov(0.9), params(0.1, 0.4, 0.1, 0.4), 0.0, {0.5, 0.5});
  CHECK(p[0] == Catch::Approx(0.5).margin(1e-5));
}

TEST_CASE("golden section matches the grid oracle on random states") {
  RngStream rng(53, 0);
  const ParameterVector theta = params(0.1, -1.0, 0.1, 1.0);
  for (int i = 0; i < 100; ++i) {
    InfoMatrix info = random_info(rng, 20 + static_cast<int>(rng.next_u64() % 80));
    const Covariate c = cov(4.0 * rng.uniform() - 2.0);
    const double eta = rng.uniform() < 0.3 ? 0.0 : 2.0 * rng.uniform();
    const double pi1 = std::clamp(rng.uniform(), 1e-6, 1 - 1e-6);
    const std::vector<double> pi{pi1, 1 - pi1};
    const auto p = maximize_utility(info, c, theta, eta, pi);
    const auto [gp, gu] = grid_max_utility(info, c, theta, eta, pi);
    const double u = utility(p, info, c, theta, eta, pi);
    CHECK(gu - u < 1e-3);
    (void)gp;
  }
}

TEST_CASE("allocate follows optimal_p") {
  RngStream rng(59, 0);
  AllocationDecision d;
  d.optimal_p = {1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(allocate(d, rng) == 0);

  d.optimal_p = {0.9, 0.1};
  long long arm0 = 0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) arm0 += allocate(d, rng) == 0 ? 1 : 0;
  CHECK(static_cast<double>(arm0) / n == Catch::Approx(0.9).margin(0.002));
}

TEST_CASE("allocation expectation under symmetric scenarios") {
  TrueModel equal;
  equal.params = params(0.2, 0.5, 0.2, 0.5);
  equal.covariate_dist.components = {{0.0, 1.0, 1.0}};
  const AllocationRule rule = [](const ParameterVector& t, const Covariate& c) {
    return target_probability(t, c, 1.0);
  };
  RngStream rng(61, 0);
  const AllocationAsymptotics eq = estimate_allocation_expectation(equal, rule, 20000, rng);
  CHECK(eq.nu[0] == Catch::Approx(0.5).margin(0.01));

  // paper scenario: symmetric mixture at +-2 with slopes -+1
  TrueModel paper;
  paper.params = params(0.1, -1.0, 0.1, 1.0);
  paper.covariate_dist.components = {{2.0, 1.0, 0.5}, {-2.0, 1.0, 0.5}};
  RngStream rng2(61, 1);
  const AllocationAsymptotics pp = estimate_allocation_expectation(paper, rule, 50000, rng2);
  CHECK(pp.nu[0] == Catch::Approx(0.5).margin(0.01));
  CHECK(pp.nu[0] + pp.nu[1] == Catch::Approx(1.0).margin(1e-12));
  // sigma = sigma1 + 2 sigma2 is PSD within Monte Carlo noise
  auto [lo, hi] = sym_eig_extremes(pp.sigma);
  CHECK(lo > -1e-6);
  (void)hi;

  // shrinking T_n saturates J: nu approaches the better-arm indicator average
  const AllocationRule sharp = [](const ParameterVector& t, const Covariate& c) {
    return target_probability(t, c, 1e-3);
  };
  RngStream rng3(61, 2);
  const AllocationAsymptotics sat = estimate_allocation_expectation(paper, sharp, 50000, rng3);
  CHECK(sat.nu[0] == Catch::Approx(0.5).margin(0.01));

  CHECK_THROWS_AS(estimate_allocation_expectation(paper, rule, 100, rng3), invalid_input);
}

TEST_CASE("C1 validation of rule output") {
  CHECK_THROWS_AS(validate_allocation_probabilities({0.0, 1.0}), invalid_input);
  CHECK_THROWS_AS(validate_allocation_probabilities({0.6, 0.6}), invalid_input);
  CHECK_NOTHROW(validate_allocation_probabilities({0.4, 0.6}));
}
