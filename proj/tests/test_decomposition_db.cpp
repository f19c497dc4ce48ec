#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "fqs/decomposition_db.hpp"

using namespace fqs;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& stem) {
  std::random_device rd;
  return fs::temp_directory_path() / (stem + "_" + std::to_string(rd()) + ".json");
}

struct Cleanup {
  fs::path p;
  ~Cleanup() { fs::remove(p); }
};

}  // namespace

TEST_CASE("missing file gives an empty database") {
  const auto p = temp_file("fqs_missing");
  CHECK(DecompositionDb::load(p).entries().empty());
}

TEST_CASE("round trip keeps scores bit for bit") {
  const auto p = temp_file("fqs_roundtrip");
  Cleanup c{p};
  const auto ou = GaussianProcessSpec::stationary_ou(1.0, 1.0, 3.0);
  const auto bm = GaussianProcessSpec::brownian_motion(1.0);
  DecompositionDb db;
  const KLSystem kou(ou), kbm(bm);
  for (std::size_t n : {1, 10, 100}) {
    db.upsert(make_entry(ou, n, Criterion::Quadratic, optimize_decomposition(kou, n, Criterion::Quadratic)));
    db.upsert(make_entry(bm, n, Criterion::Lipschitz, optimize_decomposition(kbm, n, Criterion::Lipschitz)));
  }
  db.save(p);
  const auto back = DecompositionDb::load(p);
  REQUIRE(back.entries().size() == db.entries().size());
  for (std::size_t i = 0; i < db.entries().size(); ++i) {
    const auto& a = db.entries()[i];
    const auto& b = back.entries()[i];
    CHECK(a.same_key(b));
    CHECK(a.score == b.score);
    CHECK(a.levels == b.levels);
    CHECK(a.quantizers == b.quantizers);
    CHECK(a.params.sigma0 == b.params.sigma0);
  }
  const auto e10 = back.find(make_entry(ou, 10, Criterion::Quadratic, {{{}, 1}, 0.0}));
  REQUIRE(e10);
  CHECK(e10->levels == std::vector<std::size_t>{5, 2});
  CHECK(e10->n_rec() == 10);
  CHECK(std::abs(e10->score - 0.65318) <= 5e-4);

  std::ifstream in(p);
  nlohmann::json j;
  in >> j;
  const auto& first = j.at("entries").at(0);
  for (const char* k : {"process", "params", "budget", "criterion", "levels", "score", "n_rec"}) CHECK(first.contains(k));
  for (const char* k : {"theta", "sigma", "sigma0", "m0", "mu", "T"}) CHECK(first.at("params").contains(k));
}

TEST_CASE("upsert replaces entries with the same key") {
  const auto bm = GaussianProcessSpec::brownian_motion(1.0);
  DecompositionDb db;
  db.upsert(make_entry(bm, 10, Criterion::Lipschitz, {{{5, 2}, 10}, 0.1}));
  db.upsert(make_entry(bm, 10, Criterion::Lipschitz, {{{3, 3}, 9}, 0.2}));
  REQUIRE(db.entries().size() == 1);
  CHECK(db.entries()[0].levels == std::vector<std::size_t>{3, 3});
  db.upsert(make_entry(bm, 10, Criterion::Quadratic, {{{5, 2}, 10}, 0.1}));
  db.upsert(make_entry(GaussianProcessSpec::brownian_motion(2.0), 10, Criterion::Lipschitz, {{{5, 2}, 10}, 0.1}));
  CHECK(db.entries().size() == 3);
  CHECK_FALSE(db.find(make_entry(bm, 11, Criterion::Lipschitz, {{{}, 1}, 0.0})));
}

TEST_CASE("entry spec reproduces the process") {
  const auto ou = GaussianProcessSpec::ornstein_uhlenbeck({0.5, 0.3, 0.2, 1.0, 2.0}, 2.0);
  const auto e = make_entry(ou, 1, Criterion::Quadratic, {{{}, 1}, 0.0});
  const auto s = entry_spec(e);
  REQUIRE(s.is_ou());
  CHECK(s.ou().theta == 0.5);
  CHECK(s.ou().mu == 2.0);
  CHECK(s.horizon() == 2.0);
  CHECK(entry_spec(make_entry(GaussianProcessSpec::brownian_bridge(1.5), 1, Criterion::Quadratic, {{{}, 1}, 0.0})).kind() ==
        ProcessKind::BrownianBridge);
  DbEntry bad = e;
  bad.process = "levy";
  CHECK_THROWS_AS(entry_spec(bad), DomainError);
}

TEST_CASE("stored quantizers warm the cache") {
  DbEntry e = make_entry(GaussianProcessSpec::brownian_motion(1.0), 10, Criterion::Lipschitz, {{{5, 2}, 10}, 0.1});
  REQUIRE(e.quantizers.at(5).size() == 5);
  DecompositionDb db;
  db.upsert(e);
  CHECK_NOTHROW(db.warm_quantizer_cache());
  const auto q = normal_quantizer(5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(q->points()[i] == e.quantizers.at(5)[i]);
}

TEST_CASE("malformed files throw") {
  const auto p = temp_file("fqs_bad");
  Cleanup c{p};
  {
    std::ofstream out(p);
    out << "{\"entries\": [ {\"process\": \"ou\" } ]}";
  }
  CHECK_THROWS_AS(DecompositionDb::load(p), std::runtime_error);
  {
    std::ofstream out(p);
    out << "not json";
  }
  CHECK_THROWS_AS(DecompositionDb::load(p), std::runtime_error);
  CHECK_THROWS_AS(parse_criterion("cubic"), DomainError);
}
