#pragma once

// Models, path-dependent payoffs and the benchmark harness. Rates and
// dividends are zero throughout, so nothing is discounted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fqs/conditional_sampler.hpp"
#include "fqs/errors.hpp"
#include "fqs/estimator.hpp"
#include "fqs/gaussian_math.hpp"
#include "fqs/kl.hpp"
#include "fqs/stratification.hpp"

namespace fqs {

/// dS = sigma S dW.
struct BlackScholes {
  double s0 = 100.0;
  double sigma = 0.3;
};

/// dS = sigma S^(beta/2) dW, simulated by Euler on ln S.
struct Cev {
  double s0 = 100.0;
  double sigma = 0.3;
  double beta = 1.5;
};

/// dS = theta (alpha - ln S) S dt + sigma S dW, i.e. ln S is OU with
/// mu = alpha - sigma^2 / (2 theta).
struct Schwartz {
  double s0 = 100.0;
  double theta = 0.3;
  double alpha = 4.700480365792417;  // ln 110
  double sigma = 0.3;

  double mu() const noexcept { return alpha - sigma * sigma / (2.0 * theta); }
};

using ModelSpec = std::variant<BlackScholes, Cev, Schwartz>;

inline void validate(const ModelSpec& m) {
  std::visit(
      [](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if (!(x.s0 > 0.0)) throw DomainError("model: S0 must be > 0");
        if (!(x.sigma > 0.0)) throw DomainError("model: sigma must be > 0");
        if constexpr (std::is_same_v<T, Cev>) {
          if (!(x.beta >= 0.0 && x.beta < 2.0)) throw DomainError("CEV: beta must lie in [0, 2)");
        }
        if constexpr (std::is_same_v<T, Schwartz>) {
          if (!(x.theta > 0.0)) throw DomainError("Schwartz: theta must be > 0");
        }
      },
      m);
}

inline std::string model_name(const ModelSpec& m) {
  switch (m.index()) {
    case 0: return "bs";
    case 1: return "cev";
    default: return "schwartz";
  }
}

/// The Gaussian driver the model is stratified on: Brownian motion for
/// Black-Scholes and CEV, the log-price OU process for Schwartz.
inline GaussianProcessSpec driver_process(const ModelSpec& m, double T) {
  if (const auto* s = std::get_if<Schwartz>(&m)) {
    return GaussianProcessSpec::ornstein_uhlenbeck({s->theta, s->sigma, 0.0, std::log(s->s0), s->mu()}, T);
  }
  return GaussianProcessSpec::brownian_motion(T);
}

/// Asset path on the grid from a driver path on the same grid.
inline void path_to_price(const ModelSpec& model, const TimeGrid& grid, std::span<const double> driver,
                          std::vector<double>& out) {
  const std::size_t n = grid.size();
  out.resize(n);
  switch (model.index()) {
    case 0: {
      const auto& m = std::get<BlackScholes>(model);
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = m.s0 * std::exp(m.sigma * driver[i] - 0.5 * m.sigma * m.sigma * grid[i]);
      }
      break;
    }
    case 1: {
      const auto& m = std::get<Cev>(model);
      const double s2 = m.sigma * m.sigma;
      double x = std::log(m.s0);
      out[0] = m.s0;
      for (std::size_t i = 1; i < n; ++i) {
        const double dt = grid[i] - grid[i - 1];
        const double dw = driver[i] - driver[i - 1];
        x += -0.5 * s2 * std::exp((m.beta - 2.0) * x) * dt + m.sigma * std::exp((0.5 * m.beta - 1.0) * x) * dw;
        out[i] = std::exp(x);
        if (!std::isfinite(x) || !std::isfinite(out[i])) {
          throw SimulationError("CEV Euler scheme blew up at step " + std::to_string(i));
        }
      }
      break;
    }
    default:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(driver[i]);
      break;
  }
}

/// Discretely monitored up-and-in call: (S_T - K)+ if S_ti >= H at a fixing.
struct UpInCall {
  double strike = 100.0;
  double barrier = 125.0;
  std::size_t fixings = 365;
};

/// Pays (1+C)P at the first observation date with S > K; at the last date
/// pays P if B < S_T <= K and P S_T / K if S_T <= B.
struct AutoCall {
  double strike = 110.0;
  double barrier = 80.0;
  double nominal = 100.0;
  double coupon = 0.07;
  std::vector<double> dates{1.0, 2.0, 3.0};
};

/// (mean of S over the observation dates - K)+.
struct Asian {
  double strike = 100.0;
  std::vector<double> dates;
};

using PayoffSpec = std::variant<UpInCall, AutoCall, Asian>;

inline std::string payoff_name(const PayoffSpec& p) {
  switch (p.index()) {
    case 0: return "uic";
    case 1: return "autocall";
    default: return "asian";
  }
}

/// Observation dates -> grid indices (exact match up to 1e-9 T).
inline std::vector<std::size_t> observation_indices(const TimeGrid& grid, const std::vector<double>& dates) {
  std::vector<std::size_t> idx;
  const double tol = 1e-9 * std::max(1.0, grid.back());
  for (double d : dates) {
    const auto it = std::lower_bound(grid.times().begin(), grid.times().end(), d - tol);
    if (it == grid.times().end() || std::abs(*it - d) > tol) {
      throw DomainError("observation date " + std::to_string(d) + " is not on the time grid");
    }
    idx.push_back(static_cast<std::size_t>(it - grid.times().begin()));
  }
  return idx;
}

/// Payoff of an asset path; `obs` are the grid indices of the observation dates.
inline double payoff_value(const PayoffSpec& payoff, std::span<const double> s, const std::vector<std::size_t>& obs) {
  switch (payoff.index()) {
    case 0: {
      const auto& p = std::get<UpInCall>(payoff);
      bool hit = false;
      for (std::size_t i : obs) {
        if (s[i] >= p.barrier) {
          hit = true;
          break;
        }
      }
      return hit ? std::max(s[obs.back()] - p.strike, 0.0) : 0.0;
    }
    case 1: {
      const auto& p = std::get<AutoCall>(payoff);
      for (std::size_t i : obs) {
        if (s[i] > p.strike) return (1.0 + p.coupon) * p.nominal;
      }
      const double st = s[obs.back()];
      return st > p.barrier ? p.nominal : p.nominal * st / p.strike;
    }
    default: {
      const auto& p = std::get<Asian>(payoff);
      double sum = 0.0;
      for (std::size_t i : obs) sum += s[i];
      return std::max(sum / static_cast<double>(obs.size()) - p.strike, 0.0);
    }
  }
}

// -zeta(1/2)/sqrt(2 pi), from Broadie, Glasserman and Kou, "A continuity
// correction for discrete barrier options", Math. Finance 7 (1997).
inline constexpr double kBroadieGlassermanBeta = 0.5826;

/**
 * Zero-rate continuous up-and-in call with the barrier shifted to
 * H exp(0.5826 sigma sqrt(T/n)) to approximate n discrete fixings.
 */
inline double bs_uic_closed_form(double S, double K, double H, double sigma, double T, std::size_t n) {
  if (!(S > 0.0 && K > 0.0 && sigma > 0.0 && T > 0.0) || n == 0) {
    throw DomainError("bs_uic_closed_form: need S, K, sigma, T > 0 and n >= 1");
  }
  if (!(H > std::max(S, K))) throw DomainError("bs_uic_closed_form: need H > max(S, K)");
  const double h = H * std::exp(kBroadieGlassermanBeta * sigma * std::sqrt(T / static_cast<double>(n)));
  const double vol = sigma * std::sqrt(T);
  const double lam = 0.5;
  const double x1 = std::log(S / h) / vol + lam * vol;
  const double y = std::log(h * h / (S * K)) / vol + lam * vol;
  const double y1 = std::log(h / S) / vol + lam * vol;
  const double r = h / S;
  return S * normal_cdf(x1) - K * normal_cdf(x1 - vol) -
         S * std::pow(r, 2.0 * lam) * (normal_cdf(-y) - normal_cdf(-y1)) +
         K * std::pow(r, 2.0 * lam - 2.0) * (normal_cdf(-y + vol) - normal_cdf(-y1 + vol));
}

/// Zero-rate Black call, the H -> infinity limit of the knock-out twin.
inline double bs_call(double S, double K, double sigma, double T) {
  const double vol = sigma * std::sqrt(T);
  const double d1 = std::log(S / K) / vol + 0.5 * vol;
  return S * normal_cdf(d1) - K * normal_cdf(d1 - vol);
}

/// A model, a payoff, a horizon and the simulation grid.
struct PricingProblem {
  std::string name;
  ModelSpec model;
  PayoffSpec payoff;
  double horizon = 1.0;
  std::size_t steps = 1;

  TimeGrid grid() const { return TimeGrid::uniform(horizon, steps); }

  std::vector<double> observation_dates() const {
    switch (payoff.index()) {
      case 0: {
        const auto& p = std::get<UpInCall>(payoff);
        std::vector<double> d(p.fixings);
        for (std::size_t i = 0; i < p.fixings; ++i) {
          d[i] = horizon * static_cast<double>(i + 1) / static_cast<double>(p.fixings);
        }
        return d;
      }
      case 1: return std::get<AutoCall>(payoff).dates;
      default: return std::get<Asian>(payoff).dates;
    }
  }

  void validate() const {
    fqs::validate(model);
    if (!(horizon > 0.0) || steps == 0) throw DomainError("pricing: need T > 0 and steps >= 1");
    if (const auto* p = std::get_if<UpInCall>(&payoff)) {
      if (!(p->barrier > p->strike && p->strike > 0.0)) throw DomainError("UIC: need H > K > 0");
      if (p->fixings == 0) throw DomainError("UIC: need at least one fixing");
    }
    if (const auto* p = std::get_if<AutoCall>(&payoff)) {
      if (!(p->barrier < p->strike)) throw DomainError("auto-call: need H < K");
      if (p->dates.empty()) throw DomainError("auto-call: need observation dates");
    }
    if (const auto* p = std::get_if<Asian>(&payoff)) {
      if (p->dates.empty()) throw DomainError("Asian: need observation dates");
    }
    for (double d : observation_dates()) {
      if (d < 0.0 || d > horizon * (1.0 + 1e-12)) throw DomainError("observation date outside [0, T]");
    }
    observation_indices(grid(), observation_dates());
  }

  GaussianProcessSpec driver() const { return driver_process(model, horizon); }

  /// Closed-form reference where one exists (Black-Scholes UIC), else NaN.
  double proxy() const {
    const auto* bs = std::get_if<BlackScholes>(&model);
    const auto* p = std::get_if<UpInCall>(&payoff);
    if (!bs || !p) return std::numeric_limits<double>::quiet_NaN();
    return bs_uic_closed_form(bs->s0, p->strike, p->barrier, bs->sigma, horizon, p->fixings);
  }

  /// Driver path -> discounted payoff (rates are zero).
  PathFunctional functional() const {
    auto g = grid();
    auto obs = observation_indices(g, observation_dates());
    return [model = model, payoff = payoff, g = std::move(g), obs = std::move(obs)](std::span<const double> w) {
      thread_local std::vector<double> s;
      path_to_price(model, g, w, s);
      return payoff_value(payoff, s, obs);
    };
  }
};

/// Up-in call benchmark: S = K = 100, sigma = 0.3, 365 fixings.
inline PricingProblem uic_problem(double barrier, double T, std::size_t fixings = 365) {
  return {"uic_H" + std::to_string(static_cast<int>(barrier)), BlackScholes{100.0, 0.3},
          UpInCall{100.0, barrier, fixings}, T, fixings};
}

/// Auto-call under CEV(beta = 1.5), observed at 1, 2, 3 with 300 Euler steps to T = 3.
inline PricingProblem autocall_problem(std::size_t steps = 300) {
  return {"autocall_cev", Cev{100.0, 0.3, 1.5}, AutoCall{110.0, 80.0, 100.0, 0.07, {1.0, 2.0, 3.0}}, 3.0, steps};
}

/// Asian option under the Schwartz model, 36 + 1 equally spaced dates on [0, 3].
inline PricingProblem asian_problem(std::size_t n = 36) {
  const double T = 3.0;
  std::vector<double> dates(n + 1);
  for (std::size_t i = 0; i <= n; ++i) dates[i] = T * static_cast<double>(i) / static_cast<double>(n);
  dates.back() = T;
  return {"asian_schwartz", Schwartz{100.0, 0.3, std::log(110.0), 0.3}, Asian{100.0, dates}, T, n};
}

/// One benchmark line: plain MC and the three stratified estimators.
struct BenchmarkRow {
  std::string problem;
  std::size_t strata_budget = 1;
  ProductDecomposition decomposition;
  double proxy = 0.0;
  EstimatorReport plain;
  std::vector<EstimatorReport> stratified;  ///< proportional, lipschitz, estimated
};

struct BenchmarkOptions {
  std::size_t paths = 100000;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t pilot = 50;
  std::vector<AllocationKind> rules{AllocationKind::Proportional, AllocationKind::LipschitzOptimal,
                                    AllocationKind::EstimatedOptimal};
};

/**
 * Runs plain MC and the stratified estimators on the Lipschitz-optimal
 * decomposition for `strata_budget`. Estimator j (plain = 0) draws from
 * seed + j so the columns are independent.
 */
inline BenchmarkRow run_benchmark(const PricingProblem& prob, std::size_t strata_budget, const BenchmarkOptions& opt,
                                  const ProductDecomposition* dec_override = nullptr) {
  prob.validate();
  if (strata_budget < 1) throw DomainError("strata budget must be >= 1");
  const TimeGrid grid = prob.grid();
  const KLSystem kl(prob.driver());
  BenchmarkRow row;
  row.problem = prob.name;
  row.strata_budget = strata_budget;
  row.proxy = prob.proxy();
  row.decomposition = dec_override ? *dec_override
                                   : optimize_decomposition(kl, strata_budget, Criterion::Lipschitz).decomposition;
  const auto f = prob.functional();

  const Stratification trivial(kl, ProductDecomposition{{}, 1});
  const ConditionalSampler plain_sampler(trivial, grid);
  row.plain = run_estimator(f, plain_sampler, AllocationRule::proportional(), opt.paths,
                            {opt.seed, opt.workers, 8192});
  row.plain.rule = "plain";

  const Stratification strata(kl, row.decomposition);
  const ConditionalSampler sampler(strata, grid);
  std::uint64_t offset = 1;
  for (AllocationKind k : opt.rules) {
    AllocationRule rule{k, k == AllocationKind::EstimatedOptimal ? opt.pilot : 0};
    row.stratified.push_back(run_estimator(f, sampler, rule, opt.paths, {opt.seed + offset, opt.workers, 8192}));
    ++offset;
  }
  return row;
}

namespace detail {

inline std::string fmt(double v, int digits = 10) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

inline void write_csv_header(std::ostream& os, const std::vector<AllocationKind>& rules) {
  os << "problem,strata_budget,strata,decomposition,proxy";
  auto cols = [&](const std::string& p) {
    os << "," << p << "_estimate," << p << "_ci_lo," << p << "_ci_hi," << p << "_variance";
  };
  cols("plain");
  for (auto k : rules) cols(to_string(k));
  os << "\n";
}

inline void write_csv_row(std::ostream& os, const BenchmarkRow& r) {
  os << r.problem << "," << r.strata_budget << "," << r.decomposition.strata_count() << ","
     << r.decomposition.label() << "," << detail::fmt(r.proxy);
  auto cols = [&](const EstimatorReport& e) {
    os << "," << detail::fmt(e.estimate) << "," << detail::fmt(e.ci_lo) << "," << detail::fmt(e.ci_hi) << ","
       << detail::fmt(e.estimator_variance);
  };
  cols(r.plain);
  for (const auto& e : r.stratified) cols(e);
  os << "\n";
}

/// Human-readable block per row.
inline void write_table_row(std::ostream& os, const BenchmarkRow& r) {
  os << r.problem << "  strata budget " << r.strata_budget << "  (" << r.decomposition.strata_count()
     << " = " << r.decomposition.label() << ")";
  if (!std::isnan(r.proxy)) os << "  proxy " << std::fixed << std::setprecision(4) << r.proxy;
  os << "\n";
  auto line = [&](const EstimatorReport& e) {
    os << "  " << std::left << std::setw(13) << e.rule << std::right << std::fixed << std::setprecision(4)
       << std::setw(10) << e.estimate << "  [" << e.ci_lo << ", " << e.ci_hi << "]  var = " << e.estimator_variance
       << "\n";
  };
  line(r.plain);
  for (const auto& e : r.stratified) line(e);
  os.unsetf(std::ios::floatfield);
  os << std::setprecision(6);
}

}  // namespace fqs
