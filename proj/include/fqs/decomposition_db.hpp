#pragma once

// JSON store of optimal decompositions, keyed by (process, parameters,
// budget, criterion). Each entry also carries the scalar quantizer points
// of its levels so they can be reloaded without re-optimizing.
//
// {
//   "entries": [
//     {"process": "ou", "params": {"theta":1, "sigma":1, "sigma0":0.7071, "m0":0, "mu":0, "T":3},
//      "budget": 10, "criterion": "quadratic", "levels": [5, 2], "score": 0.6531,
//      "n_rec": 10, "quantizers": {"2": [...], "5": [...]}}
//   ]
// }

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fqs/errors.hpp"
#include "fqs/kl.hpp"
#include "fqs/scalar_quantizer.hpp"
#include "fqs/stratification.hpp"

namespace fqs {

struct DbEntry {
  std::string process;
  OuParams params;  ///< zeros for Brownian motion and bridge
  double horizon = 1.0;
  std::size_t budget = 1;
  Criterion criterion = Criterion::Quadratic;
  std::vector<std::size_t> levels;
  double score = 0.0;
  std::map<std::size_t, std::vector<double>> quantizers;

  std::size_t n_rec() const {
    std::size_t n = 1;
    for (auto l : levels) n *= l;
    return n;
  }

  bool same_key(const DbEntry& o) const {
    return process == o.process && params.theta == o.params.theta && params.sigma == o.params.sigma &&
           params.sigma0 == o.params.sigma0 && params.m0 == o.params.m0 && params.mu == o.params.mu &&
           horizon == o.horizon && budget == o.budget && criterion == o.criterion;
  }
};

inline Criterion parse_criterion(const std::string& s) {
  if (s == "quadratic") return Criterion::Quadratic;
  if (s == "lipschitz") return Criterion::Lipschitz;
  throw DomainError("unknown criterion '" + s + "' (expected quadratic or lipschitz)");
}

/// Entry for an optimized decomposition of `spec`.
inline DbEntry make_entry(const GaussianProcessSpec& spec, std::size_t budget, Criterion c,
                          const OptimalDecomposition& best) {
  DbEntry e;
  e.process = to_string(spec.kind());
  if (spec.is_ou()) e.params = spec.ou();
  else e.params = {0.0, 0.0, 0.0, 0.0, 0.0};
  e.horizon = spec.horizon();
  e.budget = budget;
  e.criterion = c;
  e.levels = best.decomposition.levels;
  e.score = best.score;
  for (auto l : e.levels) {
    const auto q = normal_quantizer(l);
    e.quantizers[l] = std::vector<double>(q->points().begin(), q->points().end());
  }
  return e;
}

inline GaussianProcessSpec entry_spec(const DbEntry& e) {
  if (e.process == "brownian") return GaussianProcessSpec::brownian_motion(e.horizon);
  if (e.process == "bridge") return GaussianProcessSpec::brownian_bridge(e.horizon);
  if (e.process == "ou") return GaussianProcessSpec::ornstein_uhlenbeck(e.params, e.horizon);
  throw DomainError("unknown process '" + e.process + "'");
}

inline nlohmann::json to_json(const DbEntry& e) {
  nlohmann::json j;
  j["process"] = e.process;
  j["params"] = {{"theta", e.params.theta}, {"sigma", e.params.sigma}, {"sigma0", e.params.sigma0},
                 {"m0", e.params.m0},       {"mu", e.params.mu},       {"T", e.horizon}};
  j["budget"] = e.budget;
  j["criterion"] = to_string(e.criterion);
  j["levels"] = e.levels;
  j["score"] = e.score;
  j["n_rec"] = e.n_rec();
  nlohmann::json q = nlohmann::json::object();
  for (const auto& [n, pts] : e.quantizers) q[std::to_string(n)] = pts;
  j["quantizers"] = q;
  return j;
}

inline DbEntry from_json(const nlohmann::json& j) {
  DbEntry e;
  e.process = j.at("process").get<std::string>();
  const auto& p = j.at("params");
  e.params = {p.at("theta").get<double>(), p.at("sigma").get<double>(), p.at("sigma0").get<double>(),
              p.at("m0").get<double>(), p.at("mu").get<double>()};
  e.horizon = p.at("T").get<double>();
  e.budget = j.at("budget").get<std::size_t>();
  e.criterion = parse_criterion(j.at("criterion").get<std::string>());
  e.levels = j.at("levels").get<std::vector<std::size_t>>();
  e.score = j.at("score").get<double>();
  if (j.contains("quantizers")) {
    for (const auto& [k, v] : j.at("quantizers").items()) {
      e.quantizers[static_cast<std::size_t>(std::stoul(k))] = v.get<std::vector<double>>();
    }
  }
  return e;
}

class DecompositionDb {
 public:
  /// Reads `path`; a missing file gives an empty database.
  static DecompositionDb load(const std::filesystem::path& path) {
    DecompositionDb db;
    if (!std::filesystem::exists(path)) return db;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open database " + path.string());
    nlohmann::json j;
    try {
      in >> j;
      for (const auto& e : j.at("entries")) db.entries_.push_back(from_json(e));
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("malformed database " + path.string() + ": " + ex.what());
    }
    return db;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries_) j["entries"].push_back(to_json(e));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write database " + path.string());
    out << j.dump(2) << "\n";
  }

  /// Replaces the entry with the same key, or appends.
  void upsert(const DbEntry& e) {
    for (auto& x : entries_) {
      if (x.same_key(e)) {
        x = e;
        return;
      }
    }
    entries_.push_back(e);
  }

  std::optional<DbEntry> find(const DbEntry& key) const {
    for (const auto& x : entries_) {
      if (x.same_key(key)) return x;
    }
    return std::nullopt;
  }

  /// Puts every stored quantizer into the process-wide cache.
  void warm_quantizer_cache() const {
    for (const auto& e : entries_) {
      for (const auto& [n, pts] : e.quantizers) {
        if (pts.size() == n) QuantizerCache::instance().insert(pts);
      }
    }
  }

  const std::vector<DbEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<DbEntry> entries_;
};

}  // namespace fqs
