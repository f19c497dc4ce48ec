#pragma once

// Stratified Monte-Carlo estimator over the strata of a ConditionalSampler.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fqs/conditional_sampler.hpp"
#include "fqs/errors.hpp"
#include "fqs/rng.hpp"
#include "fqs/stratification.hpp"

namespace fqs {

/// A functional of the (mean-included) grid path.
using PathFunctional = std::function<double(std::span<const double>)>;

enum class AllocationKind { Proportional, LipschitzOptimal, EstimatedOptimal };

struct AllocationRule {
  AllocationKind kind = AllocationKind::Proportional;
  std::size_t pilot_size = 50;  ///< per stratum, EstimatedOptimal only

  static AllocationRule proportional() { return {AllocationKind::Proportional, 0}; }
  static AllocationRule lipschitz() { return {AllocationKind::LipschitzOptimal, 0}; }
  static AllocationRule estimated(std::size_t pilot = 50) {
    if (pilot < 2) throw DomainError("estimated-optimal allocation needs a pilot size >= 2");
    return {AllocationKind::EstimatedOptimal, pilot};
  }
};

inline std::string to_string(AllocationKind k) {
  switch (k) {
    case AllocationKind::Proportional: return "proportional";
    case AllocationKind::LipschitzOptimal: return "lipschitz";
    case AllocationKind::EstimatedOptimal: return "estimated";
  }
  return "?";
}

/**
 * Integer budgets M_i close to M q_i / sum(q): floors first, leftovers to the
 * largest fractional parts (lowest index on ties), then every stratum with
 * positive weight is raised to at least one path, taking from the largest
 * budgets.
 */
inline std::vector<std::size_t> integerize(const std::vector<double>& weights, std::size_t M) {
  const std::size_t m = weights.size();
  if (m == 0) throw DomainError("integerize: no strata");
  std::size_t positive = 0;
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("integerize: weights must be finite and >= 0");
    if (w > 0.0) ++positive;
    total += w;
  }
  if (positive == 0) throw DomainError("integerize: all weights are zero");
  if (M < positive) {
    throw DomainError("budget M=" + std::to_string(M) + " is smaller than the " +
                      std::to_string(positive) + " strata to sample");
  }
  std::vector<std::size_t> out(m);
  std::vector<double> frac(m);
  std::size_t used = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double target = static_cast<double>(M) * weights[i] / total;
    out[i] = static_cast<std::size_t>(std::floor(target));
    frac[i] = target - static_cast<double>(out[i]);
    used += out[i];
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; used < M; ++r, ++used) ++out[order[r % m]];
  while (used > M) {  // floating excess, never more than a few
    const auto it = std::max_element(out.begin(), out.end());
    --*it;
    --used;
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (weights[i] > 0.0 && out[i] == 0) {
      const auto it = std::max_element(out.begin(), out.end());
      --*it;
      out[i] = 1;
    }
  }
  return out;
}

/**
 * Main-run budgets for `M` paths. Proportional: q_i = p_i. Lipschitz:
 * q_i ~ p_i sigma_i with sigma_i^2 the local inertias. Estimated:
 * q_i ~ p_i sigma_hat_i from `pilot_sigma` (the caller removes the pilot
 * cost from M beforehand).
 */
inline std::vector<std::size_t> allocate(const Stratification& strata, const AllocationRule& rule,
                                         std::size_t M, const std::vector<double>* pilot_sigma = nullptr) {
  const std::size_t m = strata.size();
  std::vector<double> w(m);
  switch (rule.kind) {
    case AllocationKind::Proportional:
      for (std::size_t i = 0; i < m; ++i) w[i] = strata.prob(i);
      break;
    case AllocationKind::LipschitzOptimal:
      for (std::size_t i = 0; i < m; ++i) w[i] = strata.prob(i) * std::sqrt(strata.inertia(i));
      break;
    case AllocationKind::EstimatedOptimal: {
      if (!pilot_sigma || pilot_sigma->size() != m) {
        throw DomainError("estimated-optimal allocation needs one pilot sigma per stratum");
      }
      double top = 0.0;
      for (double s : *pilot_sigma) top = std::max(top, s);
      for (std::size_t i = 0; i < m; ++i) w[i] = top > 0.0 ? strata.prob(i) * (*pilot_sigma)[i] : strata.prob(i);
      break;
    }
  }
  return integerize(w, M);
}

/// Running count, mean and central moments M2..M4, mergeable in any fixed order.
struct MomentAccumulator {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;

  void add(double x) {
    const double n1 = n;
    n += 1.0;
    const double delta = x - mean;
    const double dn = delta / n;
    const double dn2 = dn * dn;
    const double term1 = delta * dn * n1;
    mean += dn;
    m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2 - 4.0 * dn * m3;
    m3 += term1 * dn * (n - 2.0) - 3.0 * dn * m2;
    m2 += term1;
  }

  void merge(const MomentAccumulator& b) {
    if (b.n == 0.0) return;
    if (n == 0.0) {
      *this = b;
      return;
    }
    const double na = n, nb = b.n, nt = na + nb;
    const double d = b.mean - mean, d2 = d * d, d3 = d2 * d, d4 = d2 * d2;
    const double m2n = m2 + b.m2 + d2 * na * nb / nt;
    const double m3n = m3 + b.m3 + d3 * na * nb * (na - nb) / (nt * nt) + 3.0 * d * (na * b.m2 - nb * m2) / nt;
    const double m4n = m4 + b.m4 + d4 * na * nb * (na * na - na * nb + nb * nb) / (nt * nt * nt) +
                       6.0 * d2 * (na * na * b.m2 + nb * nb * m2) / (nt * nt) + 4.0 * d * (na * b.m3 - nb * m3) / nt;
    mean += d * nb / nt;
    m2 = m2n;
    m3 = m3n;
    m4 = m4n;
    n = nt;
  }

  /// Unbiased sample variance (0 below two samples).
  double variance() const noexcept { return n > 1.0 ? m2 / (n - 1.0) : 0.0; }

  /// Approximate variance of the sample variance.
  double variance_of_variance() const noexcept {
    if (n < 4.0) return 0.0;
    const double s2 = m2 / n;
    const double k4 = m4 / n;
    return std::max((k4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n, 0.0);
  }
};

struct StratumResult {
  double prob = 0.0;
  std::size_t budget = 0;  ///< main-run paths
  std::size_t pilot = 0;   ///< pilot paths (not used in the estimate)
  double mean = 0.0;
  double variance = 0.0;  ///< within-stratum sample variance of the payoff
};

struct EstimatorReport {
  double estimate = 0.0;
  /// M sum_i p_i^2 sigma_hat_i^2 / M_i, comparable to a plain-MC per-path variance.
  double estimator_variance = 0.0;
  double variance_se = 0.0;  ///< delta-method standard error of estimator_variance
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t total_paths = 0;  ///< M, pilots included
  std::string rule;
  std::vector<StratumResult> strata;
};

struct EstimatorOptions {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t chunk = 8192;  ///< paths per RNG substream
};

namespace detail {

// Runs budgets[s] paths of every stratum. Work is cut into (stratum, chunk)
// tasks with their own RNG substream; results are merged in task order, so
// the output does not depend on the number of workers.
inline std::vector<MomentAccumulator> run_strata(const PathFunctional& payoff, const ConditionalSampler& sampler,
                                                 const std::vector<std::size_t>& budgets,
                                                 const EstimatorOptions& opt, std::uint64_t phase) {
  struct Task {
    std::size_t stratum;
    std::size_t chunk;
    std::size_t count;
  };
  const std::size_t chunk = std::max<std::size_t>(opt.chunk, 1);
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < budgets.size(); ++s) {
    for (std::size_t c = 0, done = 0; done < budgets[s]; ++c) {
      const std::size_t cnt = std::min(chunk, budgets[s] - done);
      tasks.push_back({s, c, cnt});
      done += cnt;
    }
  }
  std::vector<MomentAccumulator> partial(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  const std::size_t n1 = sampler.grid().size();

  auto worker = [&]() {
    std::vector<double> path(n1);
    while (true) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      const Task& task = tasks[t];
      try {
        const auto cells = sampler.stratum_cells(task.stratum);
        RngStream rng(opt.seed, task.stratum, phase + task.chunk);
        MomentAccumulator acc;
        for (std::size_t r = 0; r < task.count; ++r) {
          sampler.sample(cells, rng, path.data());
          const double v = payoff(std::span<const double>(path));
          if (!std::isfinite(v)) {
            throw SimulationError("payoff returned a non-finite value in stratum " + std::to_string(task.stratum) +
                                  ", replicate " + std::to_string(task.chunk * chunk + r));
          }
          acc.add(v);
        }
        partial[t] = acc;
      } catch (const std::exception& e) {
        errors[t] = e.what();
      }
    }
  };

  const std::size_t nworkers = std::max<std::size_t>(1, std::min(opt.workers, tasks.size()));
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nworkers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw SimulationError(e);
  }
  std::vector<MomentAccumulator> out(budgets.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) out[tasks[t].stratum].merge(partial[t]);
  return out;
}

}  // namespace detail

/**
 * Per-stratum sample standard deviations from `pilot_size` paths each.
 * Zero estimates are raised to 1e-6 max_j sigma_hat_j; if all are zero the
 * result is all zeros and allocation falls back to proportional.
 */
inline std::vector<double> pilot_sigma(const PathFunctional& payoff, const ConditionalSampler& sampler,
                                       std::size_t pilot_size, const EstimatorOptions& opt = {}) {
  if (pilot_size < 2) throw DomainError("pilot_sigma: pilot size must be >= 2");
  const std::vector<std::size_t> budgets(sampler.strata().size(), pilot_size);
  const auto acc = detail::run_strata(payoff, sampler, budgets, opt, kPilotPhase);
  std::vector<double> sig(acc.size());
  double top = 0.0;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    sig[i] = std::sqrt(acc[i].variance());
    top = std::max(top, sig[i]);
  }
  if (top > 0.0) {
    for (double& s : sig) s = std::max(s, 1e-6 * top);
  }
  return sig;
}

/// Stratified estimate with given main-run budgets. `pilots` only enters the
/// bookkeeping of M.
inline EstimatorReport estimate(const PathFunctional& payoff, const ConditionalSampler& sampler,
                                const std::vector<std::size_t>& budgets, const EstimatorOptions& opt = {},
                                std::size_t pilots_per_stratum = 0) {
  const Stratification& strata = sampler.strata();
  if (budgets.size() != strata.size()) throw DomainError("estimate: one budget per stratum required");
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (strata.prob(i) > 0.0 && budgets[i] == 0) {
      throw DomainError("estimate: stratum " + std::to_string(i) + " has positive mass but no paths");
    }
  }
  const auto acc = detail::run_strata(payoff, sampler, budgets, opt, kMainPhase);

  EstimatorReport rep;
  rep.total_paths = std::accumulate(budgets.begin(), budgets.end(), std::size_t{0}) +
                    pilots_per_stratum * budgets.size();
  const double M = static_cast<double>(rep.total_paths);
  double var_of_var = 0.0;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    StratumResult sr;
    sr.prob = strata.prob(i);
    sr.budget = budgets[i];
    sr.pilot = pilots_per_stratum;
    sr.mean = acc[i].mean;
    sr.variance = acc[i].variance();
    rep.estimate += sr.prob * sr.mean;
    if (budgets[i] > 0) {
      const double c = sr.prob * sr.prob / static_cast<double>(budgets[i]);
      rep.estimator_variance += M * c * sr.variance;
      var_of_var += M * M * c * c * acc[i].variance_of_variance();
    }
    rep.strata.push_back(sr);
  }
  rep.variance_se = std::sqrt(var_of_var);
  const double half = 1.96 * std::sqrt(rep.estimator_variance / M);
  rep.ci_lo = rep.estimate - half;
  rep.ci_hi = rep.estimate + half;
  return rep;
}

/// Allocation plus estimate for a total budget of M paths, pilots included.
inline EstimatorReport run_estimator(const PathFunctional& payoff, const ConditionalSampler& sampler,
                                     const AllocationRule& rule, std::size_t M, const EstimatorOptions& opt = {}) {
  const Stratification& strata = sampler.strata();
  std::vector<std::size_t> budgets;
  std::size_t pilot = 0;
  if (rule.kind == AllocationKind::EstimatedOptimal) {
    pilot = rule.pilot_size;
    const std::size_t cost = pilot * strata.size();
    if (cost + strata.size() > M) {
      throw DomainError("budget M=" + std::to_string(M) + " cannot cover the pilot run of " +
                        std::to_string(cost) + " paths");
    }
    const auto sig = pilot_sigma(payoff, sampler, pilot, opt);
    budgets = allocate(strata, rule, M - cost, &sig);
  } else {
    budgets = allocate(strata, rule, M);
  }
  EstimatorReport rep = estimate(payoff, sampler, budgets, opt, pilot);
  rep.rule = to_string(rule.kind);
  return rep;
}

}  // namespace fqs
