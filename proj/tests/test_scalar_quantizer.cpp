#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <numeric>

#include "fqs/scalar_quantizer.hpp"
#include "oracles.hpp"

using namespace fqs;
using Catch::Matchers::WithinAbs;

namespace {

// Distortion by quadrature over the cells.
double quad_distortion(const ScalarQuantizer& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double x = q.points()[i];
    d += oracle::integrate([x](double z) { return (z - x) * (z - x) * oracle::pdf(z); }, q.thresholds()[i],
                           q.thresholds()[i + 1], 1e-14);
  }
  return d;
}

// Lloyd iterations to a fixed point.
ScalarQuantizer lloyd_limit(std::size_t n) {
  std::vector<double> init(n);
  for (std::size_t i = 0; i < n; ++i) init[i] = -2.0 + 4.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  auto q = ScalarQuantizer::from_points(init);
  for (int it = 0; it < 400000; ++it) {
    auto next = lloyd_step(q);
    double move = 0.0;
    for (std::size_t i = 0; i < n; ++i) move = std::max(move, std::abs(next.points()[i] - q.points()[i]));
    q = std::move(next);
    if (move < 1e-15) break;
  }
  return q;
}

}  // namespace

TEST_CASE("n = 1 is the analytic point 0") {
  const auto q = optimize_normal_quantizer(1);
  REQUIRE(q.size() == 1);
  CHECK(q.points()[0] == 0.0);
  CHECK_THAT(q.distortion(), WithinAbs(1.0, 1e-15));
}

TEST_CASE("n = 2 is +-sqrt(2/pi)") {
  const auto q = optimize_normal_quantizer(2);
  const double r = std::sqrt(2.0 / std::numbers::pi);
  CHECK_THAT(q.points()[0], WithinAbs(-r, 1e-9));
  CHECK_THAT(q.points()[1], WithinAbs(r, 1e-9));
  CHECK_THAT(q.distortion(), WithinAbs(1.0 - 2.0 / std::numbers::pi, 1e-9));
  CHECK_THAT(q.distortion(), WithinAbs(quad_distortion(q), 1e-10));
}

TEST_CASE("optimal quantizers are stationary, symmetric and satisfy Huyghens") {
  for (std::size_t n = 1; n <= 30; ++n) {
    const auto q = optimize_normal_quantizer(n);
    INFO("n = " << n);
    CHECK(q.gradient_norm() <= 1e-12);
    CHECK(q.stationarity_gap() <= 1e-9);
    const auto p = q.probs();
    CHECK_THAT(std::accumulate(p.begin(), p.end(), 0.0), WithinAbs(1.0, 1e-12));
    double inter = 0.0;
    for (std::size_t i = 0; i < n; ++i) inter += p[i] * q.points()[i] * q.points()[i];
    CHECK_THAT(q.distortion() + inter, WithinAbs(1.0, 1e-9));
    for (std::size_t i = 0; i < n; ++i) CHECK_THAT(q.points()[i], WithinAbs(-q.points()[n - 1 - i], 1e-9));
  }
}

TEST_CASE("distortion strictly decreases in n") {
  double prev = 2.0;
  for (std::size_t n = 1; n <= 30; ++n) {
    const double d = normal_quantizer(n)->distortion();
    CHECK(d < prev);
    prev = d;
  }
}

TEST_CASE("closed-form distortion matches quadrature") {
  for (std::size_t n : {1, 2, 5, 10, 23}) {
    const auto q = normal_quantizer(n);
    INFO("n = " << n);
    CHECK_THAT(q->distortion(), WithinAbs(quad_distortion(*q), 1e-10));
  }
  const auto shifted = ScalarQuantizer::from_points({0.7});
  CHECK_THAT(shifted.distortion(), WithinAbs(1.0 + 0.49, 1e-14));
}

TEST_CASE("Newton agrees with the limit of Lloyd iterations") {
  for (std::size_t n : {2, 3, 5, 8, 13, 21, 30}) {
    const auto newton = optimize_normal_quantizer(n);
    const auto lloyd = lloyd_limit(n);
    INFO("n = " << n);
    for (std::size_t i = 0; i < n; ++i) CHECK_THAT(newton.points()[i], WithinAbs(lloyd.points()[i], 1e-8));
  }
}

TEST_CASE("lloyd_step") {
  const auto q = optimize_normal_quantizer(7);
  const auto same = lloyd_step(q);
  for (std::size_t i = 0; i < 7; ++i) CHECK_THAT(same.points()[i], WithinAbs(q.points()[i], 1e-12));

  const auto two = lloyd_step(ScalarQuantizer::from_points({-1.0, 1.0}));
  const double r = std::sqrt(2.0 / std::numbers::pi);
  CHECK_THAT(two.points()[0], WithinAbs(-r, 1e-12));
  CHECK_THAT(two.points()[1], WithinAbs(r, 1e-12));

  for (auto pts : {std::vector<double>{-3.0, 0.1, 0.2, 2.0}, std::vector<double>{0.0, 0.5}, std::vector<double>{-5.0, 5.0}}) {
    const auto a = ScalarQuantizer::from_points(pts);
    CHECK(lloyd_step(a).distortion() <= a.distortion() + 1e-15);
  }
}

TEST_CASE("invalid input") {
  CHECK_THROWS_AS(optimize_normal_quantizer(0), DomainError);
  QuantizerOptions bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(optimize_normal_quantizer(3, bad), DomainError);
  CHECK_THROWS_AS(ScalarQuantizer::from_points({1.0, 1.0}), DomainError);
  CHECK_THROWS_AS(ScalarQuantizer::from_points({}), DomainError);
}

TEST_CASE("large quantizers converge") {
  // Tail cells carry tiny mass, so the centroid gap there is loose even at a 1e-12 gradient.
  for (std::size_t n : {100, 500, 1000}) {
    const auto q = normal_quantizer(n);
    CHECK(q->gradient_norm() <= 1e-12);
    CHECK(q->stationarity_gap() <= 1e-6);
  }
}

TEST_CASE("cache returns shared instances") {
  CHECK(normal_quantizer(9).get() == normal_quantizer(9).get());
}
