#ifndef CARA_NUMKIT_HPP
#define CARA_NUMKIT_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cara {

struct invalid_input : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Thrown when a Cholesky factorization hits a non-positive pivot.
struct not_positive_definite : std::runtime_error {
  int pivot;
  explicit not_positive_definite(int p)
      : std::runtime_error("matrix not positive definite at pivot " +
                           std::to_string(p)),
        pivot(p) {}
};

// Dense symmetric matrix, full storage, symmetry enforced on write.
class SymMatrix {
 public:
  SymMatrix() : dim_(0) {}
  explicit SymMatrix(int dim) : dim_(dim), a_(static_cast<size_t>(dim) * dim, 0.0) {
    if (dim < 1) throw invalid_input("SymMatrix: dim must be >= 1");
  }

  static SymMatrix identity(int dim) {
    SymMatrix m(dim);
    for (int i = 0; i < dim; ++i) m.set(i, i, 1.0);
    return m;
  }

  static SymMatrix diagonal(const std::vector<double>& d) {
    SymMatrix m(static_cast<int>(d.size()));
    for (int i = 0; i < m.dim(); ++i) m.set(i, i, d[i]);
    return m;
  }

  int dim() const { return dim_; }

  double operator()(int i, int j) const { return a_[static_cast<size_t>(i) * dim_ + j]; }

  void set(int i, int j, double v) {
    a_[static_cast<size_t>(i) * dim_ + j] = v;
    a_[static_cast<size_t>(j) * dim_ + i] = v;
  }

  void add(int i, int j, double v) { set(i, j, (*this)(i, j) + v); }

  void scale(double c) {
    for (double& v : a_) v *= c;
  }

  bool all_finite() const {
    for (double v : a_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : a_) s += v * v;
    return std::sqrt(s);
  }

  // y = A x
  std::vector<double> apply(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != dim_) throw invalid_input("SymMatrix::apply: dimension mismatch");
    std::vector<double> y(dim_, 0.0);
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) y[i] += (*this)(i, j) * x[j];
    return y;
  }

  // x' A x
  double quad_form(const std::vector<double>& x) const {
    std::vector<double> y = apply(x);
    double q = 0.0;
    for (int i = 0; i < dim_; ++i) q += x[i] * y[i];
    return q;
  }

 private:
  int dim_;
  std::vector<double> a_;
};

namespace detail {

// One cyclic Jacobi pass; returns the matrix diagonalized in place.
inline std::vector<double> jacobi_eigenvalues(SymMatrix a) {
  const int n = a.dim();
  const double norm = a.frobenius_norm();
  const double tol = 1e-14 * (norm > 0 ? norm : 1.0);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (std::sqrt(off) < tol) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        const double app = a(p, p), aqq = a(q, q);
        a.set(p, p, app - t * apq);
        a.set(q, q, aqq + t * apq);
        a.set(p, q, 0.0);
        for (int r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p), arq = a(r, q);
          a.set(r, p, arp - s * (arq + tau * arp));
          a.set(r, q, arq + s * (arp - tau * arq));
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a(i, i);
  return ev;
}

}  // namespace detail

inline std::pair<double, double> sym_eig_extremes(const SymMatrix& a) {
  if (!a.all_finite()) throw invalid_input("sym_eig_extremes: non-finite entries");
  std::vector<double> ev = detail::jacobi_eigenvalues(a);
  double lo = ev[0], hi = ev[0];
  for (double v : ev) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  return {lo, hi};
}

namespace detail {

// Lower-triangular Cholesky factor; throws on non-PD input.
inline std::vector<double> cholesky(const SymMatrix& a) {
  const int n = a.dim();
  std::vector<double> l(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) throw not_positive_definite(j);
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return l;
}

}  // namespace detail

inline SymMatrix invert_spd(const SymMatrix& a) {
  const int n = a.dim();
  std::vector<double> l = detail::cholesky(a);
  // Invert L in place, then form A^-1 = L^-T L^-1.
  std::vector<double> li(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    li[j * n + j] = 1.0 / l[j * n + j];
    for (int i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (int k = j; k < i; ++k) s += l[i * n + k] * li[k * n + j];
      li[i * n + j] = -s / l[i * n + i];
    }
  }
  SymMatrix inv(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      for (int k = j; k < n; ++k) s += li[k * n + i] * li[k * n + j];
      inv.set(i, j, s);
    }
  return inv;
}

inline double log_det_spd(const SymMatrix& a) {
  std::vector<double> l = detail::cholesky(a);
  const int n = a.dim();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::log(l[i * n + i]);
  return 2.0 * s;
}

namespace detail {

inline double log_gamma(double x) { return std::lgamma(x); }

// Regularized lower incomplete gamma P(a, x): series for x < a+1,
// continued fraction otherwise.
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw invalid_input("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - log_gamma(a));
  }
  // Lentz continued fraction for Q(a, x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  const double q = std::exp(-x + a * std::log(x) - log_gamma(a)) * h;
  return 1.0 - q;
}

inline double chi_square_pdf(double x, int dof) {
  const double a = dof / 2.0;
  if (x <= 0.0) return 0.0;
  return std::exp((a - 1.0) * std::log(x) - x / 2.0 - a * std::log(2.0) - log_gamma(a));
}

}  // namespace detail

inline double chi_square_cdf(double x, int dof) {
  if (dof < 1) throw invalid_input("chi_square_cdf: dof must be >= 1");
  if (x <= 0.0) return 0.0;
  return detail::gamma_p(dof / 2.0, x / 2.0);
}

// Upper-tail quantile: returns C^2 with P(chi^2(dof) >= C^2) = alpha.
inline double chi_square_quantile(double alpha, int dof) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw invalid_input("chi_square_quantile: alpha must be in (0,1)");
  if (dof < 1) throw invalid_input("chi_square_quantile: dof must be >= 1");
  const double p = 1.0 - alpha;
  // Wilson-Hilferty start, then safeguarded Newton.
  double lo = 0.0, hi = 1.0;
  while (chi_square_cdf(hi, dof) < p) hi *= 2.0;
  // Rough normal quantile, only used as the Newton starting point.
  const double z = [&] {
    const double t = std::sqrt(-2.0 * std::log(alpha < 0.5 ? alpha : 1.0 - alpha));
    const double x0 = t - (2.30753 + 0.27061 * t) / (1.0 + 0.99229 * t + 0.04481 * t * t);
    return alpha < 0.5 ? x0 : -x0;
  }();
  const double k = static_cast<double>(dof);
  double x = k * std::pow(1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k)), 3.0);
  if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = chi_square_cdf(x, dof) - p;
    if (f > 0)
      hi = x;
    else
      lo = x;
    const double df = detail::chi_square_pdf(x, dof);
    double step = df > 0 ? f / df : 0.0;
    double xn = x - step;
    if (!(xn > lo && xn < hi) || step == 0.0) xn = 0.5 * (lo + hi);
    if (std::fabs(xn - x) < 1e-13 * (1.0 + std::fabs(x))) return xn;
    x = xn;
  }
  return x;
}

// Splittable counter-free stream: the (seed, stream-id) pair is hashed into
// the state of a splitmix64 generator, so identical pairs reproduce the same
// sequence on any thread.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id)
      : state_(mix(mix(seed + 0x9E3779B97F4A7C15ULL) ^ mix(stream_id + 0xBF58476D1CE4E5B9ULL))),
        has_spare_(false),
        spare_(0.0) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via polar Box-Muller (deterministic, caches the spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

 private:
  uint64_t state_;
  bool has_spare_;
  double spare_;
};

// Deterministic stream id for replication r of scenario s.
inline uint64_t derive_stream_id(uint64_t scenario, uint64_t replication) {
  return RngStream::mix(scenario * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL) ^
         RngStream::mix(replication + 0xD6E8FEB86659FD93ULL);
}

struct MixtureComponent {
  double mean;
  double sd;
  double weight;
};

struct MixtureNormalSpec {
  std::vector<MixtureComponent> components;

  void validate() const {
    if (components.empty()) throw invalid_input("MixtureNormalSpec: no components");
    double wsum = 0.0;
    for (const auto& c : components) {
      if (!(c.sd > 0.0)) throw invalid_input("MixtureNormalSpec: sd must be > 0");
      if (c.weight < 0.0) throw invalid_input("MixtureNormalSpec: negative weight");
      wsum += c.weight;
    }
    if (std::fabs(wsum - 1.0) > 1e-12) throw invalid_input("MixtureNormalSpec: weights must sum to 1");
  }
};

inline double draw_mixture_normal(const MixtureNormalSpec& spec, RngStream& rng) {
  spec.validate();
  const double u = rng.uniform();
  double acc = 0.0;
  const MixtureComponent* chosen = &spec.components.back();
  for (const auto& c : spec.components) {
    acc += c.weight;
    if (u < acc) {
      chosen = &c;
      break;
    }
  }
  return chosen->mean + chosen->sd * rng.normal();
}

inline int draw_bernoulli(double p, RngStream& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw invalid_input("draw_bernoulli: p must be in [0,1]");
  return rng.uniform() < p ? 1 : 0;
}

inline int draw_categorical(const std::vector<double>& p, RngStream& rng) {
  if (p.empty()) throw invalid_input("draw_categorical: empty probability vector");
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) throw invalid_input("draw_categorical: negative probability");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw invalid_input("draw_categorical: probabilities must sum to 1");
  const double u = rng.uniform() * sum;
  double acc = 0.0;
  for (size_t i = 0; i + 1 < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace cara

#endif  // CARA_NUMKIT_HPP
