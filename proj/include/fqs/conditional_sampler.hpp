#pragma once

// Simulation of the grid marginals (X_t0, ..., X_tn) of a Gaussian process
// conditioned on its first d K-L coordinates lying in a product cell.
//
// Notation: V = centered grid values, Y = (Y_1..Y_d) K-L coordinates.
//   R_VY(i,k) = e_k(t_i)                (E[V | Y] = R_VY Y)
//   R_YV      = Cov(Y,V) Cov(V)^+       (E[Y | V] = R_YV V)
//   S         = Cov(Y) - R_YV Cov(V) R_YV^T
// A conditional path is V + R_VY (y - G) with V unconditional,
// G ~ N(R_YV V, S) and y drawn in the cell.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>

#include "fqs/errors.hpp"
#include "fqs/gaussian_math.hpp"
#include "fqs/kl.hpp"
#include "fqs/rng.hpp"
#include "fqs/stratification.hpp"

namespace fqs {

/// Sorted observation dates in [0, T]; repeats are allowed.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> times) : times_(std::move(times)) {
    if (times_.empty()) throw DomainError("TimeGrid: empty grid");
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (!std::isfinite(times_[i]) || times_[i] < 0.0) throw DomainError("TimeGrid: bad time");
      if (i > 0 && times_[i] < times_[i - 1]) throw DomainError("TimeGrid: times must be sorted");
    }
  }

  /// steps + 1 equally spaced dates 0, T/steps, ..., T.
  static TimeGrid uniform(double T, std::size_t steps) {
    if (steps == 0 || !(T > 0.0)) throw DomainError("TimeGrid::uniform: need steps >= 1, T > 0");
    std::vector<double> t(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) t[i] = T * static_cast<double>(i) / static_cast<double>(steps);
    t.back() = T;
    return TimeGrid(std::move(t));
  }

  std::size_t size() const noexcept { return times_.size(); }
  double operator[](std::size_t i) const { return times_[i]; }
  const std::vector<double>& times() const noexcept { return times_; }
  double front() const { return times_.front(); }
  double back() const { return times_.back(); }

  void check_within(double T) const {
    if (back() > T * (1.0 + 1e-12)) throw DomainError("TimeGrid: dates beyond the horizon");
  }

 private:
  std::vector<double> times_;
};

inline Eigen::MatrixXd grid_covariance(const GaussianProcessSpec& spec, const TimeGrid& grid) {
  const std::size_t n = grid.size();
  Eigen::MatrixXd c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) c(i, j) = c(j, i) = spec.covariance(grid[i], grid[j]);
  }
  return c;
}

/// R_VY(i,k) = e_k(t_i).
inline Eigen::MatrixXd eigenfunction_matrix(const KLSystem& kl, const TimeGrid& grid, std::size_t d) {
  Eigen::MatrixXd r(grid.size(), d);
  for (std::size_t k = 0; k < d; ++k) {
    const Eigenfunction e = kl.term(k + 1).function;
    for (std::size_t i = 0; i < grid.size(); ++i) r(i, k) = e(grid[i]);
  }
  return r;
}

/**
 * Closed-form R_YV for Brownian motion on a grid with t_0 = 0 and t_n = T.
 * With h_j = t_{j+1} - t_j and e = e_k, lambda = lambda_k:
 *   interior: lambda [ (e_j - e_{j-1}) / h_{j-1} + (e_j - e_{j+1}) / h_j ]
 *   j = 0:    lambda [ e'(t_0) - (e_1 - e_0) / h_0 ]
 *   j = n:    lambda [ (e_n - e_{n-1}) / h_{n-1} - e'(t_n) ]
 * A zero-length interval contributes nothing, so a knot repeated three
 * times gets 0 and the ends of a run of equal knots pick up the
 * one-sided terms.
 */
inline Eigen::MatrixXd brownian_r_yv(const KLSystem& kl, const TimeGrid& grid, std::size_t d) {
  if (kl.spec().kind() != ProcessKind::BrownianMotion) {
    throw DomainError("brownian_r_yv: Brownian motion only");
  }
  const double T = kl.spec().horizon();
  const std::size_t n1 = grid.size();
  if (n1 < 2 || grid.front() != 0.0 || std::abs(grid.back() - T) > 1e-12 * T) {
    throw DomainError("brownian_r_yv: grid must run from 0 to T");
  }
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n1));
  for (std::size_t k = 0; k < d; ++k) {
    const KLTerm term = kl.term(k + 1);
    const Eigenfunction& e = term.function;
    const double lam = term.lambda;
    for (std::size_t j = 0; j < n1; ++j) {
      const double tj = grid[j];
      double a = 0.0;
      if (j > 0) {
        const double h = tj - grid[j - 1];
        if (h > 0.0) a += lam * ((e(tj) - e(grid[j - 1])) / h - e.derivative(tj));
      }
      if (j + 1 < n1) {
        const double h = grid[j + 1] - tj;
        if (h > 0.0) a += lam * (e.derivative(tj) - (e(grid[j + 1]) - e(tj)) / h);
      }
      r(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = a;
    }
  }
  return r;
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
inline Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& a, double rel_tol = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd& w = es.eigenvalues();
  const double cut = rel_tol * std::max(w.cwiseAbs().maxCoeff(), 0.0);
  Eigen::VectorXd inv(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) inv(i) = w(i) > cut ? 1.0 / w(i) : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// R_YV from the exact cross-covariance Cov(Y_k, X_t) = lambda_k e_k(t).
inline Eigen::MatrixXd covariance_r_yv(const KLSystem& kl, const TimeGrid& grid, std::size_t d) {
  if (d == 0) return Eigen::MatrixXd(0, static_cast<Eigen::Index>(grid.size()));
  Eigen::MatrixXd c_yv = eigenfunction_matrix(kl, grid, d).transpose();
  for (std::size_t k = 0; k < d; ++k) c_yv.row(static_cast<Eigen::Index>(k)) *= kl.lambda(k + 1);
  return c_yv * psd_pinv(grid_covariance(kl.spec(), grid));
}

namespace detail {

// Exact one-step transition X_{i} = a_i X_{i-1} + b_i eps_i of the centered
// process along a time grid (a_0 = 0). The bridge is simulated as a Brownian
// motion plus one extra step to T, then pinned.
struct PathKernel {
  std::vector<double> a;
  std::vector<double> b;
  bool pinned = false;
  double pin_step = 0.0;  // sqrt(T - t_n) for the bridge
  std::vector<double> pin_weight;  // t_i / T for the bridge

  static PathKernel make(const GaussianProcessSpec& spec, const std::vector<double>& t) {
    PathKernel k;
    const std::size_t n = t.size();
    k.a.assign(n, 0.0);
    k.b.assign(n, 0.0);
    switch (spec.kind()) {
      case ProcessKind::BrownianMotion:
      case ProcessKind::BrownianBridge:
        for (std::size_t i = 0; i < n; ++i) {
          const double prev = i ? t[i - 1] : 0.0;
          k.a[i] = i ? 1.0 : 0.0;
          k.b[i] = std::sqrt(std::max(t[i] - prev, 0.0));
        }
        if (spec.kind() == ProcessKind::BrownianBridge) {
          const double T = spec.horizon();
          k.pinned = true;
          k.pin_step = std::sqrt(std::max(T - t.back(), 0.0));
          k.pin_weight.resize(n);
          for (std::size_t i = 0; i < n; ++i) k.pin_weight[i] = t[i] / T;
        }
        break;
      case ProcessKind::OrnsteinUhlenbeck: {
        const OuParams& p = spec.ou();
        k.b[0] = std::sqrt(std::max(spec.variance(t[0]), 0.0));
        for (std::size_t i = 1; i < n; ++i) {
          const double h = t[i] - t[i - 1];
          k.a[i] = std::exp(-p.theta * h);
          k.b[i] = p.sigma * std::sqrt(-std::expm1(-2.0 * p.theta * h) / (2.0 * p.theta));
        }
        break;
      }
    }
    return k;
  }

  // Centered path; one normal per date (skipped where b_i = 0), plus one
  // for the bridge pin.
  void simulate(RngStream& rng, double* out) const {
    const std::size_t n = a.size();
    double x = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x = a[i] * x;
      if (b[i] != 0.0) x += b[i] * rng.normal();
      out[i] = x;
    }
    if (pinned) {
      double wT = x;
      if (pin_step != 0.0) wT += pin_step * rng.normal();
      for (std::size_t i = 0; i < n; ++i) out[i] -= pin_weight[i] * wT;
    }
  }
};

}  // namespace detail

/// Unconditional grid path, mean included. O(n).
inline std::vector<double> sample_unconditional_path(const GaussianProcessSpec& spec, const TimeGrid& grid,
                                                     RngStream& rng) {
  grid.check_within(spec.horizon());
  const auto kernel = detail::PathKernel::make(spec, grid.times());
  std::vector<double> out(grid.size());
  kernel.simulate(rng, out.data());
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] += spec.mean(grid[i]);
  return out;
}

/**
 * Least-squares estimate of R_YV from n_fit simulated pairs (V, Y). Paths
 * are simulated exactly on the union of the grid and a uniform sub-grid of
 * `subgrid` steps, and Y_k is the exact integral of the piecewise-linear
 * interpolant against e_k. Columns of V with zero variance or duplicating
 * an earlier date get zero coefficients.
 */
inline Eigen::MatrixXd regression_r_yv(const KLSystem& kl, const TimeGrid& grid, std::size_t d,
                                       std::size_t n_fit, std::uint64_t seed = 0,
                                       std::size_t subgrid = 1024) {
  const std::size_t n1 = grid.size();
  if (d == 0) return Eigen::MatrixXd(0, static_cast<Eigen::Index>(n1));
  if (n_fit < 2) throw DomainError("regression_r_yv: need at least two samples");
  const GaussianProcessSpec& spec = kl.spec();
  const double T = spec.horizon();
  grid.check_within(T);

  // Fine grid and the positions of the coarse dates inside it.
  std::vector<double> fine(grid.times());
  for (std::size_t i = 0; i <= subgrid; ++i) fine.push_back(T * static_cast<double>(i) / static_cast<double>(subgrid));
  std::sort(fine.begin(), fine.end());
  fine.erase(std::unique(fine.begin(), fine.end()), fine.end());
  std::vector<std::size_t> pos(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    pos[i] = static_cast<std::size_t>(std::lower_bound(fine.begin(), fine.end(), grid[i]) - fine.begin());
  }
  const std::size_t nf = fine.size();

  // Y_k = sum_j w(k,j) X(s_j) with w(k,j) = integral of the hat function at s_j times e_k.
  using Rule = boost::math::quadrature::gauss<double, 10>;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(nf));
  for (std::size_t k = 0; k < d; ++k) {
    const Eigenfunction e = kl.term(k + 1).function;
    for (std::size_t j = 0; j + 1 < nf; ++j) {
      const double lo = fine[j], hi = fine[j + 1], h = hi - lo;
      const double left = Rule::integrate([&](double s) { return (hi - s) / h * e(s); }, lo, hi);
      const double right = Rule::integrate([&](double s) { return (s - lo) / h * e(s); }, lo, hi);
      w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) += left;
      w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j + 1)) += right;
    }
  }

  // Usable design columns.
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < n1; ++i) {
    const bool dup = i > 0 && grid[i] == grid[i - 1];
    if (!dup && spec.variance(grid[i]) > 1e-14 * std::max(1.0, spec.total_variance())) cols.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd vtv = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd vty = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(d));

  const auto kernel = detail::PathKernel::make(spec, fine);
  RngStream rng(seed, 0x5245475245535349ull);
  std::vector<double> path(nf);
  Eigen::VectorXd v(m);
  Eigen::Map<const Eigen::VectorXd> xf(path.data(), static_cast<Eigen::Index>(nf));
  constexpr std::size_t kBlock = 256;
  Eigen::MatrixXd vb(m, static_cast<Eigen::Index>(kBlock));
  Eigen::MatrixXd yb(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(kBlock));
  std::size_t filled = 0;
  auto flush = [&]() {
    if (filled == 0) return;
    const auto f = static_cast<Eigen::Index>(filled);
    vtv.noalias() += vb.leftCols(f) * vb.leftCols(f).transpose();
    vty.noalias() += vb.leftCols(f) * yb.leftCols(f).transpose();
    filled = 0;
  };
  for (std::size_t r = 0; r < n_fit; ++r) {
    kernel.simulate(rng, path.data());
    for (Eigen::Index c = 0; c < m; ++c) vb(c, static_cast<Eigen::Index>(filled)) = path[pos[cols[static_cast<std::size_t>(c)]]];
    yb.col(static_cast<Eigen::Index>(filled)).noalias() = w * xf;
    if (++filled == kBlock) flush();
  }
  flush();

  const Eigen::MatrixXd beta = vtv.ldlt().solve(vty);  // m x d
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n1));
  for (Eigen::Index c = 0; c < m; ++c) {
    r.col(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(c)])) = beta.row(c).transpose();
  }
  return r;
}

enum class RyvMethod { Auto, ClosedForm, Covariance, Regression };

struct SamplerOptions {
  RyvMethod method = RyvMethod::Auto;
  std::size_t n_fit = 1000000;
  std::size_t subgrid = 1024;
  std::uint64_t seed = 0;
};

/// Precomputed matrices for one (process, grid, stratification).
class ConditionalSampler {
 public:
  ConditionalSampler(const Stratification& strata, TimeGrid grid, const SamplerOptions& opt = {})
      : strata_(&strata), grid_(std::move(grid)) {
    const GaussianProcessSpec& spec = strata.spec();
    grid_.check_within(spec.horizon());
    const std::size_t d = strata.dimension();
    const auto n1 = static_cast<Eigen::Index>(grid_.size());
    kernel_ = detail::PathKernel::make(spec, grid_.times());
    mean_.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) mean_[i] = spec.mean(grid_[i]);
    sqrt_lambda_.resize(d);
    for (std::size_t k = 0; k < d; ++k) sqrt_lambda_[k] = std::sqrt(strata.lambda(k));

    cov_v_ = grid_covariance(spec, grid_);
    r_vy_ = eigenfunction_matrix(strata.kl(), grid_, d);
    if (d == 0) {
      r_yv_ = Eigen::MatrixXd(0, n1);
      s_factor_ = Eigen::MatrixXd(0, 0);
      s_ = Eigen::MatrixXd(0, 0);
      return;
    }

    RyvMethod method = opt.method;
    const bool bm_closed_ok = spec.kind() == ProcessKind::BrownianMotion && grid_.size() >= 2 &&
                              grid_.front() == 0.0 &&
                              std::abs(grid_.back() - spec.horizon()) <= 1e-12 * spec.horizon();
    if (method == RyvMethod::Auto) method = bm_closed_ok ? RyvMethod::ClosedForm : RyvMethod::Covariance;
    switch (method) {
      case RyvMethod::ClosedForm: r_yv_ = brownian_r_yv(strata.kl(), grid_, d); break;
      case RyvMethod::Covariance: r_yv_ = covariance_r_yv(strata.kl(), grid_, d); break;
      case RyvMethod::Regression:
        r_yv_ = regression_r_yv(strata.kl(), grid_, d, opt.n_fit, opt.seed, opt.subgrid);
        break;
      case RyvMethod::Auto: break;
    }

    Eigen::MatrixXd cov_y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) cov_y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = strata.lambda(k);
    s_ = cov_y - r_yv_ * cov_v_ * r_yv_.transpose();
    s_ = (0.5 * (s_ + s_.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s_);
    const double clip = -1e-10 * std::max(s_.trace(), 0.0);
    Eigen::VectorXd root(es.eigenvalues().size());
    for (Eigen::Index i = 0; i < root.size(); ++i) {
      const double ev = es.eigenvalues()(i);
      if (ev < clip) {
        throw StructuralError("ConditionalSampler: residual covariance S is not PSD (eigenvalue " +
                              std::to_string(ev) + ")");
      }
      root(i) = std::sqrt(std::max(ev, 0.0));
    }
    s_factor_ = es.eigenvectors() * root.asDiagonal();
  }

  const Stratification& strata() const noexcept { return *strata_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dimension() const noexcept { return sqrt_lambda_.size(); }
  const Eigen::MatrixXd& r_vy() const noexcept { return r_vy_; }
  const Eigen::MatrixXd& r_yv() const noexcept { return r_yv_; }
  const Eigen::MatrixXd& cov_v() const noexcept { return cov_v_; }
  const Eigen::MatrixXd& residual_cov() const noexcept { return s_; }
  const Eigen::MatrixXd& residual_factor() const noexcept { return s_factor_; }
  const std::vector<double>& mean_path() const noexcept { return mean_; }

  /// Coordinate cells of stratum s, standardized scale.
  std::vector<TruncatedNormal> stratum_cells(std::size_t s) const {
    const auto idx = strata_->multi_index(s);
    std::vector<TruncatedNormal> cells;
    cells.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) cells.push_back(strata_->cell(k, idx[k]));
    return cells;
  }

  /// Parts of one conditional draw, for diagnostics.
  struct Draw {
    std::vector<double> path;  ///< conditional path, mean included
    std::vector<double> y;     ///< K-L coordinates drawn in the cell
    std::vector<double> z;     ///< V - R_VY G, independent of y
  };

  /**
   * One conditional path into `out` (grid.size() values). Draw order on the
   * stream: d uniforms for y, the unconditional path normals, d normals for
   * G. Work is O(n d).
   */
  void sample(const std::vector<TruncatedNormal>& cells, RngStream& rng, double* out,
              double* y_out = nullptr, double* z_out = nullptr) const {
    const std::size_t d = dimension();
    const std::size_t n1 = grid_.size();
    double y[kMaxDim];
    double g[kMaxDim];
    if (d > kMaxDim) throw DomainError("ConditionalSampler: dimension too large");
    for (std::size_t k = 0; k < d; ++k) y[k] = sqrt_lambda_[k] * truncated_normal_sample(cells[k], rng.uniform());
    kernel_.simulate(rng, out);
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      const auto row = r_yv_.row(static_cast<Eigen::Index>(k));
      for (std::size_t i = 0; i < n1; ++i) acc += row(static_cast<Eigen::Index>(i)) * out[i];
      g[k] = acc;
    }
    double eps[kMaxDim];
    for (std::size_t k = 0; k < d; ++k) eps[k] = rng.normal();
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += s_factor_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * eps[j];
      g[k] += acc;
    }
    for (std::size_t i = 0; i < n1; ++i) {
      double corr = 0.0, zc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double e = r_vy_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        corr += e * (y[k] - g[k]);
        zc += e * g[k];
      }
      if (z_out) z_out[i] = out[i] - zc;
      out[i] += corr + mean_[i];
    }
    if (y_out) std::copy(y, y + d, y_out);
  }

  Draw sample_parts(std::size_t s, RngStream& rng) const {
    Draw dr;
    dr.path.resize(grid_.size());
    dr.y.resize(dimension());
    dr.z.resize(grid_.size());
    sample(stratum_cells(s), rng, dr.path.data(), dr.y.data(), dr.z.data());
    return dr;
  }

  static constexpr std::size_t kMaxDim = 64;

 private:
  const Stratification* strata_;
  TimeGrid grid_;
  detail::PathKernel kernel_;
  std::vector<double> mean_;
  std::vector<double> sqrt_lambda_;
  Eigen::MatrixXd cov_v_;
  Eigen::MatrixXd r_vy_;
  Eigen::MatrixXd r_yv_;
  Eigen::MatrixXd s_;
  Eigen::MatrixXd s_factor_;
};

/// Builds all sampler matrices once. The stratification must outlive the sampler.
inline ConditionalSampler prepare(const Stratification& strata, const TimeGrid& grid,
                                  const SamplerOptions& opt = {}) {
  return ConditionalSampler(strata, grid, opt);
}

/// One path conditioned on stratum s, mean included.
inline std::vector<double> sample_conditional_path(const ConditionalSampler& sampler, std::size_t s,
                                                   RngStream& rng) {
  std::vector<double> out(sampler.grid().size());
  sampler.sample(sampler.stratum_cells(s), rng, out.data());
  return out;
}

}  // namespace fqs
