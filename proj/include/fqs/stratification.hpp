#pragma once

// K-L product quantizers: level decompositions N_1 x ... x N_d <= N, their
// scores, and the strata they induce on path space.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fqs/errors.hpp"
#include "fqs/gaussian_math.hpp"
#include "fqs/kl.hpp"
#include "fqs/scalar_quantizer.hpp"

namespace fqs {

struct ProductDecomposition {
  std::vector<std::size_t> levels;  ///< non-increasing, each >= 2
  std::size_t budget = 1;

  std::size_t dimension() const noexcept { return levels.size(); }

  /// Number of strata N_rec = prod N_k.
  std::size_t strata_count() const noexcept {
    std::size_t n = 1;
    for (std::size_t l : levels) n *= l;
    return n;
  }

  /// "5-2", or "1" for the trivial decomposition.
  std::string label() const {
    if (levels.empty()) return "1";
    std::string s;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (k) s += "-";
      s += std::to_string(levels[k]);
    }
    return s;
  }

  void validate() const {
    if (budget < 1) throw DomainError("decomposition budget must be >= 1");
    for (std::size_t k = 0; k < levels.size(); ++k) {
      if (levels[k] < 2) throw DomainError("decomposition levels must be >= 2");
      if (k > 0 && levels[k] > levels[k - 1]) {
        throw DomainError("decomposition levels must be non-increasing");
      }
    }
    if (strata_count() > budget) {
      throw DomainError("decomposition " + label() + " exceeds budget " + std::to_string(budget));
    }
  }

  friend bool operator==(const ProductDecomposition&, const ProductDecomposition&) = default;
};

/// All non-increasing level sequences with product <= budget, depth first:
/// (), (2), (2,2), ..., (3), (3,2), ...
inline std::vector<ProductDecomposition> enumerate_decompositions(std::size_t budget) {
  if (budget < 1) throw DomainError("enumerate_decompositions: budget must be >= 1");
  std::vector<ProductDecomposition> out;
  std::vector<std::size_t> prefix;
  auto rec = [&](auto&& self, std::size_t max_level, std::size_t product) -> void {
    out.push_back({prefix, budget});
    for (std::size_t l = 2; l <= max_level && product * l <= budget; ++l) {
      prefix.push_back(l);
      self(self, l, product * l);
      prefix.pop_back();
    }
  };
  rec(rec, budget, 1);
  return out;
}

enum class Criterion { Quadratic, Lipschitz };

inline std::string to_string(Criterion c) {
  return c == Criterion::Quadratic ? "quadratic" : "lipschitz";
}

/// sum_k lambda_k D_{N_k} + (total variance - sum_k lambda_k).
inline double quadratic_criterion(const KLSystem& kl, const ProductDecomposition& dec) {
  double score = kl.tail_variance(dec.dimension());
  for (std::size_t k = 0; k < dec.dimension(); ++k) {
    score += kl.lambda(k + 1) * normal_quantizer(dec.levels[k])->distortion();
  }
  return score;
}

namespace detail {

// Per-stratum probabilities and inertias, first coordinate slowest.
inline void expand_strata(const KLSystem& kl, const ProductDecomposition& dec,
                          std::vector<double>& probs, std::vector<double>& inertias) {
  probs.assign(1, 1.0);
  inertias.assign(1, kl.tail_variance(dec.dimension()));
  for (std::size_t k = 0; k < dec.dimension(); ++k) {
    const auto q = normal_quantizer(dec.levels[k]);
    const double lam = kl.lambda(k + 1);
    const std::size_t m = q->size();
    std::vector<double> p2(probs.size() * m), v2(probs.size() * m);
    for (std::size_t a = 0; a < probs.size(); ++a) {
      for (std::size_t i = 0; i < m; ++i) {
        p2[a * m + i] = probs[a] * q->probs()[i];
        v2[a * m + i] = inertias[a] + lam * q->cond_vars()[i];
      }
    }
    probs.swap(p2);
    inertias.swap(v2);
  }
}

}  // namespace detail

/// d(chi) = (sum_ui p_ui sigma_ui)^2.
inline double lipschitz_criterion(const KLSystem& kl, const ProductDecomposition& dec) {
  std::vector<double> p, v;
  detail::expand_strata(kl, dec, p, v);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::sqrt(v[i]);
  return s * s;
}

inline double criterion_value(const KLSystem& kl, const ProductDecomposition& dec, Criterion c) {
  return c == Criterion::Quadratic ? quadratic_criterion(kl, dec) : lipschitz_criterion(kl, dec);
}

struct OptimalDecomposition {
  ProductDecomposition decomposition;
  double score = 0.0;
};

/// Exhaustive search; ties go to the lexicographically smallest levels.
inline OptimalDecomposition optimize_decomposition(const KLSystem& kl, std::size_t budget,
                                                   Criterion c) {
  OptimalDecomposition best;
  bool have = false;
  for (auto& dec : enumerate_decompositions(budget)) {
    const double s = criterion_value(kl, dec, c);
    if (!have || s < best.score || (s == best.score && dec.levels < best.decomposition.levels)) {
      best = {std::move(dec), s};
      have = true;
    }
  }
  return best;
}

/**
 * The strata of a K-L product quantizer. Stratum s has multi-index
 * (i_1, ..., i_d) with i_1 varying slowest; its K-L coordinates satisfy
 * Y_k / sqrt(lambda_k) in cell i_k of the N_k-point normal quantizer.
 */
class Stratification {
 public:
  Stratification(KLSystem kl, ProductDecomposition dec) : kl_(std::move(kl)), dec_(std::move(dec)) {
    dec_.validate();
    for (std::size_t l : dec_.levels) quantizers_.push_back(normal_quantizer(l));
    for (std::size_t k = 0; k < dec_.dimension(); ++k) lambdas_.push_back(kl_.lambda(k + 1));
    tail_ = kl_.tail_variance(dec_.dimension());
    detail::expand_strata(kl_, dec_, probs_, inertias_);
  }

  const KLSystem& kl() const noexcept { return kl_; }
  const GaussianProcessSpec& spec() const noexcept { return kl_.spec(); }
  const ProductDecomposition& decomposition() const noexcept { return dec_; }
  std::size_t dimension() const noexcept { return dec_.dimension(); }
  std::size_t size() const noexcept { return probs_.size(); }
  double tail_variance() const noexcept { return tail_; }
  double lambda(std::size_t k) const { return lambdas_.at(k); }
  const ScalarQuantizer& quantizer(std::size_t k) const { return *quantizers_.at(k); }

  double prob(std::size_t s) const { return probs_.at(s); }
  double inertia(std::size_t s) const { return inertias_.at(s); }
  const std::vector<double>& probs() const noexcept { return probs_; }
  const std::vector<double>& inertias() const noexcept { return inertias_; }

  std::vector<std::size_t> multi_index(std::size_t s) const {
    if (s >= size()) throw DomainError("stratum index out of range");
    std::vector<std::size_t> idx(dimension());
    for (std::size_t k = dimension(); k-- > 0;) {
      idx[k] = s % dec_.levels[k];
      s /= dec_.levels[k];
    }
    return idx;
  }

  std::size_t flat_index(const std::vector<std::size_t>& idx) const {
    if (idx.size() != dimension()) throw DomainError("multi-index has wrong dimension");
    std::size_t s = 0;
    for (std::size_t k = 0; k < dimension(); ++k) {
      if (idx[k] >= dec_.levels[k]) throw DomainError("multi-index out of range");
      s = s * dec_.levels[k] + idx[k];
    }
    return s;
  }

  /// Cell of the standardized coordinate Y_k / sqrt(lambda_k).
  TruncatedNormal cell(std::size_t k, std::size_t i) const { return quantizers_.at(k)->cell(i); }

  /// Codebook coordinates sqrt(lambda_k) x_{i_k}.
  std::vector<double> codebook_coefficients(std::size_t s) const {
    const auto idx = multi_index(s);
    std::vector<double> c(dimension());
    for (std::size_t k = 0; k < dimension(); ++k) {
      c[k] = std::sqrt(lambdas_[k]) * quantizers_[k]->points()[idx[k]];
    }
    return c;
  }

  /// Codebook path chi_s(t), mean path included.
  double codebook_path(std::size_t s, double t) const {
    const auto c = codebook_coefficients(s);
    double v = spec().mean(t);
    for (std::size_t k = 0; k < dimension(); ++k) v += c[k] * kl_.term(k + 1).function(t);
    return v;
  }

  /// sum_s p_s sigma_s^2; equals the quadratic criterion.
  double intraclass_inertia() const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += probs_[i] * inertias_[i];
    return s;
  }

 private:
  KLSystem kl_;
  ProductDecomposition dec_;
  std::vector<std::shared_ptr<const ScalarQuantizer>> quantizers_;
  std::vector<double> lambdas_;
  double tail_ = 0.0;
  std::vector<double> probs_;
  std::vector<double> inertias_;
};

inline Stratification build_stratification(const KLSystem& kl, const ProductDecomposition& dec) {
  return Stratification(kl, dec);
}

}  // namespace fqs
