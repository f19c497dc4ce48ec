#pragma once

// Karhunen-Loeve systems of Brownian motion, the Brownian bridge and the
// Ornstein-Uhlenbeck process on [0, T].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fqs/errors.hpp"

namespace fqs {

enum class ProcessKind { BrownianMotion, BrownianBridge, OrnsteinUhlenbeck };

inline std::string to_string(ProcessKind k) {
  switch (k) {
    case ProcessKind::BrownianMotion: return "brownian";
    case ProcessKind::BrownianBridge: return "bridge";
    case ProcessKind::OrnsteinUhlenbeck: return "ou";
  }
  return "?";
}

/// dX = theta (mu - X) dt + sigma dW,  X_0 ~ N(m0, sigma0^2).
struct OuParams {
  double theta = 1.0;
  double sigma = 1.0;
  double sigma0 = 0.0;
  double m0 = 0.0;
  double mu = 0.0;
};

class GaussianProcessSpec {
 public:
  static GaussianProcessSpec brownian_motion(double T) {
    return GaussianProcessSpec(ProcessKind::BrownianMotion, T, {});
  }
  static GaussianProcessSpec brownian_bridge(double T) {
    return GaussianProcessSpec(ProcessKind::BrownianBridge, T, {});
  }
  static GaussianProcessSpec ornstein_uhlenbeck(const OuParams& p, double T) {
    return GaussianProcessSpec(ProcessKind::OrnsteinUhlenbeck, T, p);
  }
  /// Started from its invariant law N(mean, sigma^2 / (2 theta)).
  static GaussianProcessSpec stationary_ou(double theta, double sigma, double T, double mean = 0.0) {
    OuParams p{theta, sigma, sigma / std::sqrt(2.0 * theta), mean, mean};
    return ornstein_uhlenbeck(p, T);
  }

  ProcessKind kind() const noexcept { return kind_; }
  double horizon() const noexcept { return T_; }
  const OuParams& ou() const noexcept { return ou_; }
  bool is_ou() const noexcept { return kind_ == ProcessKind::OrnsteinUhlenbeck; }

  double mean(double t) const noexcept {
    if (!is_ou()) return 0.0;
    const double e = std::exp(-ou_.theta * t);
    return ou_.m0 * e + ou_.mu * (1.0 - e);
  }

  double covariance(double s, double t) const noexcept {
    const double lo = std::min(s, t);
    switch (kind_) {
      case ProcessKind::BrownianMotion: return lo;
      case ProcessKind::BrownianBridge: return lo - s * t / T_;
      case ProcessKind::OrnsteinUhlenbeck: {
        const double th = ou_.theta;
        const double decay = std::exp(-th * (s + t));
        return ou_.sigma * ou_.sigma * decay * std::expm1(2.0 * th * lo) / (2.0 * th) +
               ou_.sigma0 * ou_.sigma0 * decay;
      }
    }
    return 0.0;
  }

  double variance(double t) const noexcept { return covariance(t, t); }

  /// E integral_0^T (X_t - m_t)^2 dt.
  double total_variance() const noexcept {
    switch (kind_) {
      case ProcessKind::BrownianMotion: return 0.5 * T_ * T_;
      case ProcessKind::BrownianBridge: return T_ * T_ / 6.0;
      case ProcessKind::OrnsteinUhlenbeck: {
        const double th = ou_.theta;
        const double x = 2.0 * th * T_;
        // (1 - e^-x) / (2 theta) and (x - 1 + e^-x) / x^2, the latter by series near 0.
        const double decay_int = -std::expm1(-x) / (2.0 * th);
        double h;
        if (x < 1e-3) {
          h = 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0;
        } else {
          h = (x + std::expm1(-x)) / (x * x);
        }
        return ou_.sigma0 * ou_.sigma0 * decay_int + ou_.sigma * ou_.sigma * T_ * T_ * h;
      }
    }
    return 0.0;
  }

  std::string describe() const {
    std::ostringstream os;
    os << to_string(kind_) << "(T=" << T_;
    if (is_ou()) {
      os << ", theta=" << ou_.theta << ", sigma=" << ou_.sigma << ", sigma0=" << ou_.sigma0
         << ", m0=" << ou_.m0 << ", mu=" << ou_.mu;
    }
    os << ")";
    return os.str();
  }

 private:
  GaussianProcessSpec(ProcessKind kind, double T, OuParams p) : kind_(kind), T_(T), ou_(p) {
    if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("process horizon T must be > 0");
    if (kind == ProcessKind::OrnsteinUhlenbeck) {
      if (!(p.theta > 0.0) || !std::isfinite(p.theta)) throw DomainError("OU theta must be > 0");
      if (!(p.sigma >= 0.0) || !(p.sigma0 >= 0.0)) {
        throw DomainError("OU sigma and sigma0 must be >= 0");
      }
      if (!std::isfinite(p.m0) || !std::isfinite(p.mu)) throw DomainError("OU means must be finite");
    }
  }

  ProcessKind kind_;
  double T_;
  OuParams ou_;
};

/// t -> c cos(omega t) + s sin(omega t). Every system handled here has
/// eigenfunctions of this form.
struct Eigenfunction {
  double omega = 0.0;
  double cos_coef = 0.0;
  double sin_coef = 0.0;

  double operator()(double t) const noexcept {
    return cos_coef * std::cos(omega * t) + sin_coef * std::sin(omega * t);
  }
  double derivative(double t) const noexcept {
    return omega * (sin_coef * std::cos(omega * t) - cos_coef * std::sin(omega * t));
  }
};

struct KLTerm {
  double lambda = 0.0;
  Eigenfunction function;
};

struct OUFrequency {
  std::size_t index = 0;
  double omega = 0.0;
  double lambda = 0.0;
  double norm_const = 0.0;
  int iterations = 0;  ///< Brent iterations spent on the final bracket
};

struct RootResult {
  double root = 0.0;
  int iterations = 0;
};

/// Brent's bracketed root finder. Requires f(a) f(b) <= 0.
template <class F>
RootResult brent_root(F&& f, double a, double b, double fa, double fb, double xtol = 0.0,
                      int max_iter = 200) {
  if (fa == 0.0) return {a, 0};
  if (fb == 0.0) return {b, 0};
  if ((fa > 0.0) == (fb > 0.0)) throw StructuralError("brent_root: no sign change on bracket");
  constexpr double eps = std::numeric_limits<double>::epsilon();
  double c = a, fc = fa, d = b - a, e = d;
  for (int iter = 1; iter <= max_iter; ++iter) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol1 = 2.0 * eps * std::abs(b) + 0.5 * xtol;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || fb == 0.0) return {b, iter - 1};
    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      const double s = fb / fa;
      double p, q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      const double min1 = 3.0 * xm * q - std::abs(tol1 * q);
      const double min2 = std::abs(e * q);
      if (2.0 * p < std::min(min1, min2)) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol1 ? d : std::copysign(tol1, xm);
    fb = f(b);
  }
  return {b, max_iter};
}

namespace detail {

inline const OuParams& require_ou(const GaussianProcessSpec& spec) {
  if (!spec.is_ou()) throw DomainError("OU frequency requested for a non-OU process");
  return spec.ou();
}

}  // namespace detail

/// omega sigma^2 cos(omega T) + (theta sigma^2 - theta^2 sigma0^2 - omega^2 sigma0^2) sin(omega T)
inline double ou_residual(const OuParams& p, double T, double omega) noexcept {
  const double s2 = p.sigma * p.sigma;
  const double v2 = p.sigma0 * p.sigma0;
  return omega * s2 * std::cos(omega * T) +
         (p.theta * s2 - p.theta * p.theta * v2 - omega * omega * v2) * std::sin(omega * T);
}

/// Magnitude of the terms of ou_residual, used to make the residual relative.
inline double ou_residual_scale(const OuParams& p, double omega) noexcept {
  const double s2 = p.sigma * p.sigma;
  const double v2 = p.sigma0 * p.sigma0;
  return omega * s2 + std::abs(p.theta * s2 - p.theta * p.theta * v2) + omega * omega * v2;
}

/// V = sqrt(theta sigma^2 / sigma0^2 - theta^2) when sigma0 > 0 and
/// theta^2 sigma0^2 < theta sigma^2, otherwise -1.
inline double ou_asymptote(const OuParams& p) noexcept {
  const double s2 = p.sigma * p.sigma;
  const double v2 = p.sigma0 * p.sigma0;
  if (!(p.sigma0 > 0.0) || !(p.theta * p.theta * v2 - p.theta * s2 < 0.0)) return -1.0;
  return std::sqrt(p.theta * s2 / v2 - p.theta * p.theta);
}

struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
};

/// The interval containing the n-th positive root, by regime.
inline Bracket ou_bracket(const GaussianProcessSpec& spec, std::size_t n) {
  const OuParams& p = detail::require_ou(spec);
  if (n == 0) throw DomainError("OU frequency index starts at 1");
  const double T = spec.horizon();
  const double pi = std::numbers::pi;
  const double k = static_cast<double>(n);
  const double half = pi / (2.0 * T);
  const double s2 = p.sigma * p.sigma;
  const double v2 = p.sigma0 * p.sigma0;

  if (p.sigma0 == 0.0) return {k * pi / T - half, k * pi / T};

  const double c = p.theta * p.theta * v2 - p.theta * s2;
  if (c >= 0.0) {
    if (c * T - s2 < 0.0) return {(k - 1.0) * pi / T, (k - 1.0) * pi / T + half};
    return {k * pi / T, k * pi / T + half};
  }
  const double V = ou_asymptote(p);
  if ((k - 1.0) * pi / T - half > V) return {(k - 1.0) * pi / T, (k - 1.0) * pi / T + half};
  if ((k + 1.0) * pi / T - half < V) return {k * pi / T - half, k * pi / T};
  if (k * pi / T - half < V && V < (k + 1.0) * pi / T - half) return {k * pi / T - half, V};
  return {V, k * pi / T - half};
}

/**
 * Starting point for the deterministic-start equation theta tan(omega T) = -omega.
 * tan is replaced on (-pi/2, pi/2) by psi(x) = (a x^3 + x) / (1 - b x^2) with
 * a = 4(8 - pi^2)/pi^4, b = 4/pi^2, and with x = omega T - n pi the equation
 * becomes the cubic
 *   (theta T a - b) x^3 - n pi b x^2 + (theta T + 1) x + n pi = 0
 * whose root in (-pi/2, 0) gives the guess. For sigma0 > 0 the bracket
 * midpoint is returned.
 */
inline double ou_frequency_guess(const GaussianProcessSpec& spec, std::size_t n) {
  const OuParams& p = detail::require_ou(spec);
  const Bracket br = ou_bracket(spec, n);
  if (p.sigma0 != 0.0) return 0.5 * (br.lo + br.hi);

  const double T = spec.horizon();
  const double pi = std::numbers::pi;
  const double a = 4.0 * (8.0 - pi * pi) / (pi * pi * pi * pi);
  const double b = 4.0 / (pi * pi);
  const double npi = static_cast<double>(n) * pi;
  const double tt = p.theta * T;
  auto cubic = [&](double x) {
    return (((tt * a - b) * x - npi * b) * x + (tt + 1.0)) * x + npi;
  };
  // cubic(0) = n pi > 0 and cubic(-pi/2) = -4 theta T / pi < 0.
  const double lo = -0.5 * pi;
  const double flo = cubic(lo);
  const double fhi = cubic(0.0);
  if (!((flo < 0.0) && (fhi > 0.0))) return 0.5 * (br.lo + br.hi);
  const RootResult r = brent_root(cubic, lo, 0.0, flo, fhi, 1e-14);
  const double guess = (r.root + npi) / T;
  if (!(guess > br.lo && guess < br.hi)) return 0.5 * (br.lo + br.hi);
  return guess;
}

/**
 * The n-th OU eigen-frequency: bracket by regime, then Brent on a small
 * interval around the guess that is grown geometrically until it brackets
 * a sign change.
 */
inline OUFrequency ou_frequency(const GaussianProcessSpec& spec, std::size_t n) {
  const OuParams& p = detail::require_ou(spec);
  if (!(p.sigma > 0.0)) throw DomainError("OU frequency needs sigma > 0");
  const double T = spec.horizon();
  Bracket br = ou_bracket(spec, n);
  const Bracket original = br;
  const double nudge = 1e-12 * std::numbers::pi / T;
  const double V = ou_asymptote(p);
  // omega = 0 solves the equation trivially and V is an asymptote of the
  // tangent form; keep both off the edges.
  if (br.lo == 0.0 || br.lo == V) br.lo += nudge;
  if (br.hi == V) br.hi -= nudge;

  auto f = [&](double w) { return ou_residual(p, T, w); };

  double omega;
  int iterations = 0;
  if (!(br.lo < br.hi)) {
    omega = 0.5 * (original.lo + original.hi);
  } else {
    const double guess = ou_frequency_guess(spec, n);
    const double width = br.hi - br.lo;
    double delta = 1e-4 * width;
    double a = br.lo, b = br.hi;
    double fa = 0.0, fb = 0.0;
    bool found = false;
    while (true) {
      a = std::max(br.lo, guess - delta);
      b = std::min(br.hi, guess + delta);
      fa = f(a);
      fb = f(b);
      if (fa == 0.0 || fb == 0.0 || (fa > 0.0) != (fb > 0.0)) {
        found = true;
        break;
      }
      if (a == br.lo && b == br.hi) break;
      delta *= 4.0;
    }
    if (!found) {
      std::ostringstream os;
      os.precision(17);
      os << "ou_frequency: no sign change on bracket (" << br.lo << ", " << br.hi << ") for n=" << n
         << " of " << spec.describe();
      throw StructuralError(os.str());
    }
    const RootResult r = brent_root(f, a, b, fa, fb, 0.0);
    omega = r.root;
    iterations = r.iterations;
  }

  const double s2 = p.sigma * p.sigma;
  const double v2 = p.sigma0 * p.sigma0;
  // e(t) = K (A cos(omega t) + B sin(omega t)), A = omega sigma0^2, B = sigma^2 - theta sigma0^2.
  const double A = omega * v2;
  const double B = s2 - p.theta * v2;
  const double s2wT = std::sin(2.0 * omega * T) / (2.0 * omega);
  const double norm2 = A * B * (1.0 - std::cos(2.0 * omega * T)) / (2.0 * omega) +
                       0.5 * A * A * (T + s2wT) + 0.5 * B * B * (T - s2wT);
  OUFrequency out;
  out.index = n;
  out.omega = omega;
  out.lambda = s2 / (omega * omega + p.theta * p.theta);
  out.norm_const = 1.0 / std::sqrt(norm2);
  out.iterations = iterations;
  return out;
}

inline Eigenfunction ou_eigenfunction(const OuParams& p, const OUFrequency& fr) {
  const double v2 = p.sigma0 * p.sigma0;
  return {fr.omega, fr.norm_const * fr.omega * v2,
          fr.norm_const * (p.sigma * p.sigma - p.theta * v2)};
}

/// n-th K-L term (n >= 1) computed from scratch.
inline KLTerm eigen(const GaussianProcessSpec& spec, std::size_t n) {
  if (n == 0) throw DomainError("K-L index starts at 1");
  const double T = spec.horizon();
  const double pi = std::numbers::pi;
  const double k = static_cast<double>(n);
  switch (spec.kind()) {
    case ProcessKind::BrownianMotion: {
      const double w = pi * (k - 0.5) / T;
      return {1.0 / (w * w), {w, 0.0, std::sqrt(2.0 / T)}};
    }
    case ProcessKind::BrownianBridge: {
      const double w = pi * k / T;
      return {1.0 / (w * w), {w, 0.0, std::sqrt(2.0 / T)}};
    }
    case ProcessKind::OrnsteinUhlenbeck: {
      const OUFrequency fr = ou_frequency(spec, n);
      return {fr.lambda, ou_eigenfunction(spec.ou(), fr)};
    }
  }
  return {};
}

/**
 * A process together with a lazily extended table of its K-L terms.
 * Extension is serialized; terms already computed are returned by value.
 */
class KLSystem {
 public:
  explicit KLSystem(GaussianProcessSpec spec) : spec_(std::move(spec)) {}
  KLSystem(const KLSystem& other) : spec_(other.spec_) {
    std::lock_guard lock(other.mutex_);
    terms_ = other.terms_;
  }

  const GaussianProcessSpec& spec() const noexcept { return spec_; }

  KLTerm term(std::size_t n) const {
    if (n == 0) throw DomainError("K-L index starts at 1");
    std::lock_guard lock(mutex_);
    while (terms_.size() < n) terms_.push_back(eigen(spec_, terms_.size() + 1));
    return terms_[n - 1];
  }

  std::vector<KLTerm> terms(std::size_t count) const {
    if (count > 0) term(count);
    std::lock_guard lock(mutex_);
    return {terms_.begin(), terms_.begin() + static_cast<std::ptrdiff_t>(count)};
  }

  double lambda(std::size_t n) const { return term(n).lambda; }

  /// Variance left outside the first d coordinates.
  double tail_variance(std::size_t d) const {
    double s = spec_.total_variance();
    for (std::size_t k = 1; k <= d; ++k) s -= lambda(k);
    return std::max(s, 0.0);
  }

 private:
  GaussianProcessSpec spec_;
  mutable std::mutex mutex_;
  mutable std::vector<KLTerm> terms_;
};

}  // namespace fqs
