#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "fqs/stratification.hpp"
#include "oracles.hpp"

using namespace fqs;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const KLSystem& stationary_ou() {
  static const KLSystem kl(GaussianProcessSpec::stationary_ou(1.0, 1.0, 3.0));
  return kl;
}

const KLSystem& brownian() {
  static const KLSystem kl(GaussianProcessSpec::brownian_motion(1.0));
  return kl;
}

ProductDecomposition dec(std::vector<std::size_t> levels, std::size_t budget) { return {std::move(levels), budget}; }

// Every level tuple with entries in [2, N], filtered afterwards.
std::set<std::vector<std::size_t>> brute_force_decompositions(std::size_t N) {
  std::set<std::vector<std::size_t>> out{{}};
  std::vector<std::vector<std::size_t>> frontier{{}};
  while (!frontier.empty()) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& f : frontier) {
      for (std::size_t l = 2; l <= N; ++l) {
        auto g = f;
        g.push_back(l);
        const std::size_t prod = std::accumulate(g.begin(), g.end(), std::size_t{1}, std::multiplies<>());
        if (prod > N) continue;
        next.push_back(g);
        if (std::is_sorted(g.rbegin(), g.rend())) out.insert(g);
      }
    }
    frontier.swap(next);
  }
  return out;
}

// Scalar distortion by quadrature, independent of the closed form.
double quad_distortion(const ScalarQuantizer& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double x = q.points()[i];
    d += oracle::integrate([x](double z) { return (z - x) * (z - x) * oracle::pdf(z); }, q.thresholds()[i],
                           q.thresholds()[i + 1], 1e-14);
  }
  return d;
}

double cell_mass(double a, double b) { return 0.5 * (std::erfc(-b / std::sqrt(2.0)) - std::erfc(-a / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("enumeration examples") {
  const auto one = enumerate_decompositions(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].levels.empty());
  CHECK(one[0].label() == "1");

  std::set<std::vector<std::size_t>> four;
  for (const auto& d : enumerate_decompositions(4)) four.insert(d.levels);
  CHECK(four == std::set<std::vector<std::size_t>>{{}, {2}, {3}, {4}, {2, 2}});

  bool has_52 = false;
  for (const auto& d : enumerate_decompositions(10)) has_52 |= d.levels == std::vector<std::size_t>{5, 2};
  CHECK(has_52);
  CHECK_THROWS_AS(enumerate_decompositions(0), DomainError);
}

TEST_CASE("enumeration is complete and duplicate free") {
  for (std::size_t N : {2, 7, 16, 36, 64, 97}) {
    const auto got = enumerate_decompositions(N);
    std::set<std::vector<std::size_t>> seen;
    for (const auto& d : got) {
      CHECK(seen.insert(d.levels).second);
      CHECK_NOTHROW(d.validate());
      CHECK(d.strata_count() <= N);
    }
    CHECK(seen == brute_force_decompositions(N));
  }
}

TEST_CASE("decomposition validation") {
  CHECK_THROWS_AS(dec({2, 3}, 10).validate(), DomainError);
  CHECK_THROWS_AS(dec({1}, 10).validate(), DomainError);
  CHECK_THROWS_AS(dec({5, 3}, 10).validate(), DomainError);
  CHECK(dec({5, 2}, 10).label() == "5-2");
  CHECK(dec({6, 4, 2, 2}, 100).strata_count() == 96);
}

TEST_CASE("quadratic criterion examples") {
  const auto& kl = stationary_ou();
  CHECK_THAT(quadratic_criterion(kl, dec({}, 1)), WithinAbs(1.5, 1e-12));
  CHECK_THAT(quadratic_criterion(kl, dec({5, 2}, 10)), WithinAbs(0.65318, 5e-4));
  CHECK_THAT(quadratic_criterion(kl, dec({6, 4, 2, 2}, 100)), WithinAbs(0.40929, 5e-4));
}

TEST_CASE("quadratic criterion against quadrature distortions") {
  const auto& kl = stationary_ou();
  for (auto levels : {std::vector<std::size_t>{5, 2}, {6, 4, 2, 2}, {10, 6, 4, 2, 2}, {7}}) {
    double want = kl.spec().total_variance();
    for (std::size_t k = 0; k < levels.size(); ++k) {
      want -= kl.lambda(k + 1) * (1.0 - quad_distortion(*normal_quantizer(levels[k])));
    }
    CHECK_THAT(quadratic_criterion(kl, dec(levels, 1000)), WithinAbs(want, 1e-10));
  }
}

TEST_CASE("Lipschitz criterion examples") {
  const auto& kl = brownian();
  CHECK_THAT(lipschitz_criterion(kl, dec({}, 1)), WithinAbs(0.5, 1e-14));
  CHECK_THAT(lipschitz_criterion(kl, dec({5, 2}, 10)), WithinAbs(9.75689e-2, 1e-5));
  CHECK_THAT(lipschitz_criterion(kl, dec({12, 4, 2}, 100)), WithinAbs(5.10548e-2, 1e-5));
}

TEST_CASE("Lipschitz criterion against a direct sum over multi-indices") {
  const auto& kl = brownian();
  const auto q5 = normal_quantizer(5);
  const auto q2 = normal_quantizer(2);
  const double tail = 0.5 - kl.lambda(1) - kl.lambda(2);
  double s = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double a = q5->thresholds()[i], b = q5->thresholds()[i + 1];
    const double pa = cell_mass(a, b);
    const double ma = oracle::integrate([](double z) { return z * oracle::pdf(z); }, a, b) / pa;
    const double va = oracle::integrate([](double z) { return z * z * oracle::pdf(z); }, a, b) / pa - ma * ma;
    for (std::size_t j = 0; j < 2; ++j) {
      const double c = q2->thresholds()[j], d = q2->thresholds()[j + 1];
      const double pb = cell_mass(c, d);
      const double mb = oracle::integrate([](double z) { return z * oracle::pdf(z); }, c, d) / pb;
      const double vb = oracle::integrate([](double z) { return z * z * oracle::pdf(z); }, c, d) / pb - mb * mb;
      s += pa * pb * std::sqrt(kl.lambda(1) * va + kl.lambda(2) * vb + tail);
    }
  }
  CHECK_THAT(lipschitz_criterion(kl, dec({5, 2}, 10)), WithinRel(s * s, 1e-10));
}

TEST_CASE("optimization examples") {
  const auto ou10 = optimize_decomposition(stationary_ou(), 10, Criterion::Quadratic);
  CHECK(ou10.decomposition.levels == std::vector<std::size_t>{5, 2});
  const auto ou100 = optimize_decomposition(stationary_ou(), 100, Criterion::Quadratic);
  CHECK(ou100.decomposition.levels == std::vector<std::size_t>{6, 4, 2, 2});
  CHECK(ou100.decomposition.strata_count() == 96);
  CHECK_THAT(ou100.score, WithinAbs(0.40929, 5e-4));
  const auto bm1000 = optimize_decomposition(brownian(), 1000, Criterion::Lipschitz);
  CHECK(bm1000.decomposition.levels == std::vector<std::size_t>{23, 7, 3, 2});
  CHECK_THAT(bm1000.score, WithinRel(3.51289e-2, 2e-5));
}

TEST_CASE("optimal score is non-increasing in the budget") {
  for (const KLSystem* kl : {&stationary_ou(), &brownian()}) {
    for (Criterion c : {Criterion::Quadratic, Criterion::Lipschitz}) {
      double prev = kInf;
      for (std::size_t N = 1; N <= 80; ++N) {
        const double s = optimize_decomposition(*kl, N, c).score;
        CHECK(s <= prev);
        prev = s;
      }
    }
  }
}

TEST_CASE("both criteria pick the same BM decomposition") {
  for (std::size_t N : {10, 100, 1000}) {
    INFO("N = " << N);
    CHECK(optimize_decomposition(brownian(), N, Criterion::Quadratic).decomposition ==
          optimize_decomposition(brownian(), N, Criterion::Lipschitz).decomposition);
  }
}

TEST_CASE("optimization is deterministic") {
  const auto a = optimize_decomposition(brownian(), 50, Criterion::Lipschitz);
  const auto b = optimize_decomposition(brownian(), 50, Criterion::Lipschitz);
  CHECK(a.decomposition == b.decomposition);
  CHECK(a.score == b.score);
}

TEST_CASE("stratification invariants") {
  for (const KLSystem* kl : {&stationary_ou(), &brownian()}) {
    for (auto levels : {std::vector<std::size_t>{}, {2}, {5, 2}, {6, 4, 2, 2}, {10, 2}}) {
      const auto st = build_stratification(*kl, dec(levels, 1000));
      INFO(st.decomposition().label());
      CHECK_THAT(std::accumulate(st.probs().begin(), st.probs().end(), 0.0), WithinAbs(1.0, 1e-10));
      CHECK_THAT(st.intraclass_inertia(), WithinAbs(quadratic_criterion(*kl, st.decomposition()), 1e-9));
      CHECK_THAT(st.tail_variance(), WithinAbs(kl->tail_variance(levels.size()), 1e-15));
      for (std::size_t s = 0; s < st.size(); ++s) {
        CHECK(st.inertia(s) >= st.tail_variance());
        const auto idx = st.multi_index(s);
        CHECK(st.flat_index(idx) == s);
        double p = 1.0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
          const auto c = st.cell(k, idx[k]);
          p *= cell_mass(c.lower(), c.upper());
        }
        CHECK_THAT(st.prob(s), WithinAbs(p, 1e-12));
      }
    }
  }
}

TEST_CASE("stratification examples") {
  const auto& kl = stationary_ou();
  const auto trivial = build_stratification(kl, dec({}, 1));
  REQUIRE(trivial.size() == 1);
  CHECK(trivial.prob(0) == 1.0);
  CHECK_THAT(trivial.inertia(0), WithinAbs(1.5, 1e-12));

  const auto two = build_stratification(kl, dec({2}, 2));
  REQUIRE(two.size() == 2);
  CHECK_THAT(two.prob(0), WithinAbs(0.5, 1e-15));
  CHECK_THAT(two.prob(1), WithinAbs(0.5, 1e-15));

  const auto st = build_stratification(brownian(), dec({5, 2}, 10));
  CHECK(st.multi_index(0) == std::vector<std::size_t>{0, 0});
  CHECK(st.multi_index(1) == std::vector<std::size_t>{0, 1});
  CHECK(st.multi_index(2) == std::vector<std::size_t>{1, 0});
  const auto c = st.codebook_coefficients(7);  // (3, 1)
  CHECK_THAT(c[0], WithinAbs(std::sqrt(brownian().lambda(1)) * normal_quantizer(5)->points()[3], 1e-15));
  CHECK_THAT(c[1], WithinAbs(std::sqrt(brownian().lambda(2)) * normal_quantizer(2)->points()[1], 1e-15));
  const double t = 0.37;
  CHECK_THAT(st.codebook_path(7, t),
             WithinAbs(c[0] * std::sqrt(2.0) * std::sin(std::numbers::pi * 0.5 * t) +
                           c[1] * std::sqrt(2.0) * std::sin(std::numbers::pi * 1.5 * t),
                       1e-14));
}

TEST_CASE("stratum weights and inertias agree with Monte Carlo on K-L coordinates") {
  // X_t = sum_n sqrt(lambda_n) xi_n e_n(t); the stratum is determined by
  // (xi_1, xi_2) and its inertia is E[sum_n lambda_n (xi_n - E[xi_n | A])^2 | A].
  const auto& kl = brownian();
  const auto st = build_stratification(kl, dec({3, 2}, 6));
  const std::size_t n_terms = 400, paths = 200000;
  std::vector<double> lam(n_terms);
  for (std::size_t n = 0; n < n_terms; ++n) lam[n] = kl.lambda(n + 1);
  std::vector<double> cnt(6, 0.0), s1(6 * 2, 0.0), s2(6, 0.0);
  std::mt19937_64 gen(99);
  std::normal_distribution<double> z;
  double tail = 0.0;
  for (std::size_t n = 2; n < n_terms; ++n) tail += lam[n];
  tail += kl.tail_variance(n_terms);
  for (std::size_t p = 0; p < paths; ++p) {
    const double x1 = z(gen), x2 = z(gen);
    std::size_t i = 0, j = 0;
    while (x1 > st.cell(0, i).upper()) ++i;
    while (x2 > st.cell(1, j).upper()) ++j;
    const std::size_t s = i * 2 + j;
    cnt[s] += 1.0;
    s1[2 * s] += x1;
    s1[2 * s + 1] += x2;
    s2[s] += lam[0] * x1 * x1 + lam[1] * x2 * x2;
  }
  for (std::size_t s = 0; s < 6; ++s) {
    const double p = cnt[s] / paths;
    CHECK(std::abs(p - st.prob(s)) <= 4.0 * std::sqrt(st.prob(s) * (1 - st.prob(s)) / paths));
    const double m1 = s1[2 * s] / cnt[s], m2 = s1[2 * s + 1] / cnt[s];
    const double inertia = s2[s] / cnt[s] - lam[0] * m1 * m1 - lam[1] * m2 * m2 + tail;
    CHECK_THAT(inertia, WithinRel(st.inertia(s), 0.02));
  }
}
