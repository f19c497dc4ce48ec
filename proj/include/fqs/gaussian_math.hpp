#pragma once

// Scalar standard-normal primitives shared by every sampler: density, CDF,
// inverse CDF, and the truncated normal law L(Z | a <= Z <= b).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss.hpp>

#include "fqs/errors.hpp"

namespace fqs {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;  // 1/sqrt(2 pi)
inline constexpr double kSqrt2Pi = 2.50662827463100050241576528481;
inline constexpr double kInvSqrt2 = 0.707106781186547524400844362105;

inline double normal_pdf(double x) noexcept {
  if (std::isinf(x)) return 0.0;
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

/// x * phi(x), with the limit 0 at +-infinity.
inline double x_normal_pdf(double x) noexcept {
  if (std::isinf(x)) return 0.0;
  return x * normal_pdf(x);
}

/// Standard normal CDF. Uses erfc on the lower side so the left tail keeps
/// full relative precision.
inline double normal_cdf(double x) noexcept {
  if (x == -kInf) return 0.0;
  if (x == kInf) return 1.0;
  return 0.5 * std::erfc(-x * kInvSqrt2);
}

/// Upper tail 1 - Phi(x), accurate for large positive x.
inline double normal_sf(double x) noexcept {
  if (x == -kInf) return 1.0;
  if (x == kInf) return 0.0;
  return 0.5 * std::erfc(x * kInvSqrt2);
}

/// P(a <= Z <= b), computed on whichever side avoids cancellation.
inline double normal_mass(double a, double b) noexcept {
  if (!(a < b)) return 0.0;
  if (a >= 0.0) return normal_sf(a) - normal_sf(b);
  if (b <= 0.0) return normal_cdf(b) - normal_cdf(a);
  return 1.0 - normal_cdf(a) - normal_sf(b);
}

namespace detail {

// Acklam's rational approximation (relative error ~1.2e-9) followed by one
// Halley step on Phi. Only called with 0 < p <= 0.5.
inline double inv_cdf_lower(double p) noexcept {
  static constexpr std::array<double, 6> a{-3.969683028665376e+01, 2.209460984245205e+02,
                                           -2.759285104469687e+02, 1.383577518672690e+02,
                                           -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b{-5.447609879822406e+01, 1.615858368580409e+02,
                                           -1.556989798598866e+02, 6.680131188771972e+01,
                                           -1.328068155288572e+01};
  static constexpr std::array<double, 6> c{-7.784894002430293e-03, -3.223964580411365e-01,
                                           -2.400758277161838e+00, -2.549732539343734e+00,
                                           4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr std::array<double, 4> d{7.784695709041462e-03, 3.224671290700398e-01,
                                           2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

  const double e = normal_cdf(x) - p;
  const double u = e * kSqrt2Pi * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

/// Inverse of the standard normal CDF on the open interval (0, 1).
inline double normal_inv_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("normal_inv_cdf: probability " + std::to_string(p) + " outside (0,1)");
  }
  if (p <= 0.5) return detail::inv_cdf_lower(p);
  return -detail::inv_cdf_lower(1.0 - p);
}

/// Inverse of the upper tail: returns x with 1 - Phi(x) = q.
inline double normal_inv_sf(double q) { return -normal_inv_cdf(q); }

/**
 * The slab [lower, upper] of a standard normal variable. Either bound may be
 * infinite. Construction rejects empty or NaN intervals; zero-mass cells far
 * in the tails are accepted here and rejected by the sampling operations.
 */
class TruncatedNormal {
 public:
  TruncatedNormal(double lower, double upper) : lower_(lower), upper_(upper) {
    if (std::isnan(lower) || std::isnan(upper) || !(lower < upper)) {
      throw DomainError("TruncatedNormal: need lower < upper, got [" + std::to_string(lower) +
                        ", " + std::to_string(upper) + "]");
    }
  }

  static TruncatedNormal unbounded() { return {-kInf, kInf}; }

  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  double mass() const noexcept { return normal_mass(lower_, upper_); }

 private:
  double lower_;
  double upper_;
};

struct TruncatedMoments {
  double mean;
  double variance;
};

/**
 * Inverse-CDF draw from L(Z | Z in cell):
 *   Phi^-1((Phi(b) - Phi(a)) u + Phi(a)).
 * Cells lying in the upper half-line use the mirrored composition on the
 * survival function so that outer strata keep their precision.
 */
inline double truncated_normal_sample(const TruncatedNormal& cell, double u) {
  const double a = cell.lower();
  const double b = cell.upper();
  double x;
  if (a >= 0.0) {
    const double sa = normal_sf(a);
    const double sb = normal_sf(b);
    if (!(sa - sb > 0.0)) throw DomainError("truncated_normal_sample: cell has zero mass");
    x = normal_inv_sf(sa - u * (sa - sb));
  } else {
    const double fa = normal_cdf(a);
    const double fb = normal_cdf(b);
    if (!(fb - fa > 0.0)) throw DomainError("truncated_normal_sample: cell has zero mass");
    x = normal_inv_cdf(fa + u * (fb - fa));
  }
  // Rounding can land exactly on a finite edge.
  if (x <= a) x = std::nextafter(a, kInf);
  if (x >= b) x = std::nextafter(b, -kInf);
  return x;
}

/// Mean and variance of L(Z | Z in cell).
inline TruncatedMoments truncated_normal_moments(const TruncatedNormal& cell) {
  const double a = cell.lower();
  const double b = cell.upper();
  const double z = cell.mass();
  if (!(z > 0.0)) throw DomainError("truncated_normal_moments: cell has zero mass");

  const double width = b - a;
  const double centre = 0.5 * (a + b);
  if (std::isfinite(width) && width <= 0.25 && width * std::max(std::abs(a), std::abs(b)) <= 0.25) {
    // Narrow cell: the closed form cancels catastrophically, but the density
    // is almost flat, so a 16-node Gauss-Legendre rule is exact to rounding.
    using Rule = boost::math::quadrature::gauss<double, 16>;
    const auto& nodes = Rule::abscissa();
    const auto& weights = Rule::weights();
    const double h = 0.5 * width;
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    auto accumulate = [&](double t, double w) {
      const double dx = h * t;
      const double f = w * std::exp(-0.5 * dx * (2.0 * centre + dx));
      m0 += f;
      m1 += f * t;
      m2 += f * t * t;
    };
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      accumulate(nodes[i], weights[i]);
      if (nodes[i] != 0.0) accumulate(-nodes[i], weights[i]);
    }
    const double offset = h * m1 / m0;
    const double second = h * h * m2 / m0;
    return {centre + offset, second - offset * offset};
  }

  const double mean = (normal_pdf(a) - normal_pdf(b)) / z;
  double variance = 1.0 + (x_normal_pdf(a) - x_normal_pdf(b)) / z - mean * mean;
  return {mean, std::max(variance, 0.0)};
}

}  // namespace fqs
