#pragma once

// L2-optimal quantizers of the standard normal distribution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fqs/errors.hpp"
#include "fqs/gaussian_math.hpp"

namespace fqs {

/**
 * An N-point quantizer of N(0,1) together with its Voronoi cells.
 *
 * Cell i is [t_i, t_{i+1}] with t_0 = -inf, t_N = +inf and interior
 * thresholds at the midpoints of consecutive points. Probabilities,
 * conditional moments and the distortion are all derived from the points.
 */
class ScalarQuantizer {
 public:
  /// Builds the cell data for arbitrary strictly increasing points.
  static ScalarQuantizer from_points(std::vector<double> points) {
    if (points.empty()) throw DomainError("ScalarQuantizer: need at least one point");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!std::isfinite(points[i])) throw DomainError("ScalarQuantizer: non-finite point");
      if (i > 0 && !(points[i - 1] < points[i])) {
        throw DomainError("ScalarQuantizer: points must be strictly increasing");
      }
    }
    ScalarQuantizer q;
    q.points_ = std::move(points);
    q.rebuild();
    return q;
  }

  std::size_t size() const noexcept { return points_.size(); }
  std::span<const double> points() const noexcept { return points_; }
  /// N + 1 cell boundaries, starting at -inf and ending at +inf.
  std::span<const double> thresholds() const noexcept { return thresholds_; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::span<const double> cond_means() const noexcept { return means_; }
  std::span<const double> cond_vars() const noexcept { return vars_; }
  double distortion() const noexcept { return distortion_; }

  TruncatedNormal cell(std::size_t i) const { return {thresholds_[i], thresholds_[i + 1]}; }

  /// Gradient of the distortion, 2 p_i (x_i - E[Z | cell i]).
  std::vector<double> gradient() const {
    std::vector<double> g(size());
    for (std::size_t i = 0; i < size(); ++i) g[i] = 2.0 * probs_[i] * (points_[i] - means_[i]);
    return g;
  }

  double gradient_norm() const {
    double worst = 0.0;
    for (double g : gradient()) worst = std::max(worst, std::abs(g));
    return worst;
  }

  /// max_i |E[Z | cell i] - x_i|; zero for a stationary quantizer.
  double stationarity_gap() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < size(); ++i) worst = std::max(worst, std::abs(means_[i] - points_[i]));
    return worst;
  }

 private:
  void rebuild() {
    const std::size_t n = points_.size();
    thresholds_.assign(n + 1, 0.0);
    thresholds_.front() = -kInf;
    thresholds_.back() = kInf;
    for (std::size_t i = 1; i < n; ++i) thresholds_[i] = 0.5 * (points_[i - 1] + points_[i]);

    probs_.resize(n);
    means_.resize(n);
    vars_.resize(n);
    distortion_ = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const TruncatedNormal c = cell(i);
      probs_[i] = c.mass();
      const auto m = truncated_normal_moments(c);
      means_[i] = m.mean;
      vars_[i] = m.variance;
      const double bias = m.mean - points_[i];
      distortion_ += probs_[i] * (m.variance + bias * bias);
    }
  }

  std::vector<double> points_;
  std::vector<double> thresholds_;
  std::vector<double> probs_;
  std::vector<double> means_;
  std::vector<double> vars_;
  double distortion_ = 0.0;
};

/// E[min_i (Z - x_i)^2] for the given points.
inline double distortion(const ScalarQuantizer& q) noexcept { return q.distortion(); }

/// One Lloyd iteration: every point moves to the centroid of its cell.
inline ScalarQuantizer lloyd_step(const ScalarQuantizer& q) {
  std::vector<double> next(q.cond_means().begin(), q.cond_means().end());
  return ScalarQuantizer::from_points(std::move(next));
}

struct QuantizerOptions {
  double tol = 1e-12;  ///< target max-norm of the distortion gradient
  int max_newton_iterations = 100;
  int lloyd_fallback_iterations = 2000;
};

namespace detail {

// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
// `upper[n-1]` are ignored.
inline void solve_tridiagonal(std::vector<double> lower, std::vector<double> diag,
                              std::vector<double> upper, std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = lower[i] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

inline void symmetrize(std::vector<double>& x) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double v = 0.5 * (x[n - 1 - i] - x[i]);
    x[i] = -v;
    x[n - 1 - i] = v;
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
}

// Damped Newton iterations on the distortion. The Hessian of D is
// tridiagonal: with h_+ = (x_{i+1} - x_i)/2 and t_+ the right threshold,
//   H_ii     = 2 p_i - h_+ phi(t_+) - h_- phi(t_-)
//   H_i,i+1  = -h_+ phi(t_+).
// Returns true once the gradient max-norm is below tol.
inline bool newton_refine(ScalarQuantizer& q, const QuantizerOptions& opt) {
  const std::size_t n = q.size();
  for (int iter = 0; iter < opt.max_newton_iterations; ++iter) {
    const double gnorm = q.gradient_norm();
    if (gnorm <= opt.tol) return true;

    const auto x = q.points();
    const auto t = q.thresholds();
    std::vector<double> diag(n), lower(n, 0.0), upper(n, 0.0), rhs = q.gradient();
    for (std::size_t i = 0; i < n; ++i) {
      diag[i] = 2.0 * q.probs()[i];
      if (i + 1 < n) {
        const double off = -0.5 * (x[i + 1] - x[i]) * normal_pdf(t[i + 1]);
        diag[i] += off;
        upper[i] = off;
      }
      if (i > 0) {
        const double off = -0.5 * (x[i] - x[i - 1]) * normal_pdf(t[i]);
        diag[i] += off;
        lower[i] = off;
      }
    }
    solve_tridiagonal(std::move(lower), std::move(diag), std::move(upper), rhs);

    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
      std::vector<double> trial(x.begin(), x.end());
      for (std::size_t i = 0; i < n; ++i) trial[i] -= step * rhs[i];
      symmetrize(trial);
      bool ok = true;
      for (std::size_t i = 1; i < n && ok; ++i) ok = trial[i - 1] < trial[i];
      if (!ok) continue;
      ScalarQuantizer candidate = ScalarQuantizer::from_points(std::move(trial));
      if (candidate.gradient_norm() < gnorm || candidate.distortion() < q.distortion()) {
        q = std::move(candidate);
        accepted = true;
        break;
      }
    }
    if (!accepted) return q.gradient_norm() <= opt.tol;
  }
  return q.gradient_norm() <= opt.tol;
}

}  // namespace detail

/**
 * Optimal n-point quantizer of N(0,1) by Newton-Raphson on the distortion,
 * seeded at the quantiles Phi^-1((2i-1)/(2n)). If Newton stalls, a run of
 * Lloyd iterations is used to get back into the basin and Newton is retried.
 */
inline ScalarQuantizer optimize_normal_quantizer(std::size_t n, const QuantizerOptions& opt = {}) {
  if (n == 0) throw DomainError("optimize_normal_quantizer: n must be >= 1");
  if (!(opt.tol > 0.0)) throw DomainError("optimize_normal_quantizer: tol must be > 0");
  if (n == 1) return ScalarQuantizer::from_points({0.0});

  std::vector<double> init(n);
  for (std::size_t i = 0; i < n; ++i) {
    init[i] = normal_inv_cdf((2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n)));
  }
  detail::symmetrize(init);
  ScalarQuantizer q = ScalarQuantizer::from_points(std::move(init));
  if (detail::newton_refine(q, opt)) return q;

  for (int i = 0; i < opt.lloyd_fallback_iterations; ++i) q = lloyd_step(q);
  if (detail::newton_refine(q, opt)) return q;
  throw OptimizationError("optimize_normal_quantizer(n=" + std::to_string(n) + ") did not converge",
                          q.gradient_norm());
}

/// Process-wide cache of optimal normal quantizers, filled lazily.
class QuantizerCache {
 public:
  static QuantizerCache& instance() {
    static QuantizerCache cache;
    return cache;
  }

  std::shared_ptr<const ScalarQuantizer> get(std::size_t n) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(n); it != cache_.end()) return it->second;
    }
    auto q = std::make_shared<const ScalarQuantizer>(optimize_normal_quantizer(n));
    std::lock_guard lock(mutex_);
    return cache_.try_emplace(n, std::move(q)).first->second;
  }

  /// Adds externally stored points (e.g. from a decomposition database).
  /// Entries already present are kept.
  void insert(std::vector<double> points) {
    const std::size_t n = points.size();
    auto q = std::make_shared<const ScalarQuantizer>(ScalarQuantizer::from_points(std::move(points)));
    std::lock_guard lock(mutex_);
    cache_.try_emplace(n, std::move(q));
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, std::shared_ptr<const ScalarQuantizer>> cache_;
};

inline std::shared_ptr<const ScalarQuantizer> normal_quantizer(std::size_t n) {
  return QuantizerCache::instance().get(n);
}

}  // namespace fqs
