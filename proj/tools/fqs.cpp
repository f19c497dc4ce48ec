// fqs: quantizers, decomposition databases and stratified pricing runs.
//
//   fqs quantizer --n 10
//   fqs decompose --process stationary-ou --theta 1 --sigma 1 --horizon 3 --budget 100 --db db.json
//   fqs price --model bs --payoff uic --barrier 125 --horizon 1.5 --strata 20 --paths 100000 --seed 1
//   fqs tables --out tables.csv
//
// Any subcommand accepts --config file.json holding {"flag": value} pairs;
// flags given on the command line win over the file.
//
// Exit codes: 0 success, 2 usage or invalid parameters, 1 runtime failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fqs/decomposition_db.hpp"
#include "fqs/pricing.hpp"
#include "fqs/scalar_quantizer.hpp"
#include "fqs/stratification.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProcessArgs {
  std::string process = "brownian";
  double theta = 1.0;
  double sigma = 1.0;
  double sigma0 = 0.0;
  double m0 = 0.0;
  double mu = 0.0;
  double horizon = 1.0;
};

struct PriceArgs {
  std::string model = "bs";
  std::string payoff = "uic";
  double s0 = 100.0;
  double sigma = 0.3;
  double beta = 1.5;
  double theta = 0.3;
  double alpha = std::log(110.0);
  std::optional<double> strike;   // payoff default
  std::optional<double> barrier;  // payoff default
  double nominal = 100.0;
  double coupon = 0.07;
  std::optional<double> horizon;  // 1.5 for uic, else 3
  std::size_t fixings = 365;
  std::size_t steps = 0;  // 0: payoff default
  std::vector<double> dates;
  std::size_t strata = 20;
  std::size_t paths = 100000;
  std::string rule = "all";
  std::size_t pilot = 50;
};

struct OutputArgs {
  std::string out;
  std::string format = "csv";
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string db;
};

fqs::GaussianProcessSpec make_process(const ProcessArgs& a) {
  if (a.process == "brownian") return fqs::GaussianProcessSpec::brownian_motion(a.horizon);
  if (a.process == "bridge") return fqs::GaussianProcessSpec::brownian_bridge(a.horizon);
  if (a.process == "ou") return fqs::GaussianProcessSpec::ornstein_uhlenbeck({a.theta, a.sigma, a.sigma0, a.m0, a.mu}, a.horizon);
  if (a.process == "stationary-ou") return fqs::GaussianProcessSpec::stationary_ou(a.theta, a.sigma, a.horizon, a.mu);
  throw UsageError("unknown process '" + a.process + "'");
}

fqs::PricingProblem make_problem(const PriceArgs& a) {
  fqs::PricingProblem p;
  if (a.model == "bs") p.model = fqs::BlackScholes{a.s0, a.sigma};
  else if (a.model == "cev") p.model = fqs::Cev{a.s0, a.sigma, a.beta};
  else if (a.model == "schwartz") p.model = fqs::Schwartz{a.s0, a.theta, a.alpha, a.sigma};
  else throw UsageError("unknown model '" + a.model + "'");
  p.horizon = a.horizon.value_or(a.payoff == "uic" ? 1.5 : 3.0);
  if (a.payoff == "uic") {
    p.payoff = fqs::UpInCall{a.strike.value_or(100.0), a.barrier.value_or(125.0), a.fixings};
    p.steps = a.steps ? a.steps : a.fixings;
  } else if (a.payoff == "autocall") {
    p.payoff = fqs::AutoCall{a.strike.value_or(110.0), a.barrier.value_or(80.0), a.nominal, a.coupon,
                             a.dates.empty() ? std::vector<double>{1.0, 2.0, 3.0} : a.dates};
    p.steps = a.steps ? a.steps : 300;
  } else if (a.payoff == "asian") {
    p.steps = a.steps ? a.steps : 36;
    std::vector<double> d = a.dates;
    if (d.empty()) {
      for (std::size_t i = 0; i <= p.steps; ++i) d.push_back(p.horizon * static_cast<double>(i) / static_cast<double>(p.steps));
      d.back() = p.horizon;
    }
    p.payoff = fqs::Asian{a.strike.value_or(100.0), d};
  } else {
    throw UsageError("unknown payoff '" + a.payoff + "'");
  }
  p.name = a.model + "_" + a.payoff;
  p.validate();
  return p;
}

std::vector<fqs::AllocationKind> parse_rules(const std::string& r) {
  using fqs::AllocationKind;
  if (r == "all") return {AllocationKind::Proportional, AllocationKind::LipschitzOptimal, AllocationKind::EstimatedOptimal};
  if (r == "proportional") return {AllocationKind::Proportional};
  if (r == "lipschitz") return {AllocationKind::LipschitzOptimal};
  if (r == "estimated") return {AllocationKind::EstimatedOptimal};
  throw UsageError("unknown rule '" + r + "'");
}

// Writes to --out when given, else stdout.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw std::runtime_error("cannot write " + path);
    }
  }
  std::ostream& os() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

void check_format(const std::string& f) {
  if (f != "csv" && f != "table") throw UsageError("--format must be csv or table");
}

int cmd_quantizer(std::size_t n, double tol, const OutputArgs& o) {
  check_format(o.format);
  if (n < 1) throw UsageError("--n must be >= 1");
  if (!(tol > 0.0)) throw UsageError("--tol must be > 0");
  fqs::QuantizerOptions qo;
  qo.tol = tol;
  const auto q = fqs::optimize_normal_quantizer(n, qo);
  Sink sink(o.out);
  auto& os = sink.os();
  os << std::setprecision(12);
  if (o.format == "csv") {
    os << "i,point,lower,upper,prob,cond_mean,cond_var\n";
    for (std::size_t i = 0; i < q.size(); ++i) {
      os << i << "," << q.points()[i] << "," << q.thresholds()[i] << "," << q.thresholds()[i + 1] << ","
         << q.probs()[i] << "," << q.cond_means()[i] << "," << q.cond_vars()[i] << "\n";
    }
    os << "# distortion," << q.distortion() << "\n";
  } else {
    os << "N = " << n << "  distortion = " << q.distortion() << "  gradient = " << q.gradient_norm() << "\n";
    for (std::size_t i = 0; i < q.size(); ++i) {
      os << std::setw(5) << i << std::setw(20) << q.points()[i] << std::setw(20) << q.probs()[i] << "\n";
    }
  }
  return 0;
}

int cmd_decompose(const ProcessArgs& pa, std::size_t budget, const std::string& criterion, const OutputArgs& o) {
  check_format(o.format);
  if (budget < 1) throw UsageError("--budget must be >= 1");
  fqs::Criterion c;
  try {
    c = fqs::parse_criterion(criterion);
  } catch (const fqs::DomainError& e) {
    throw UsageError(e.what());
  }
  const auto spec = make_process(pa);
  std::optional<fqs::DecompositionDb> db;
  if (!o.db.empty()) {
    db = fqs::DecompositionDb::load(o.db);
    db->warm_quantizer_cache();
  }
  const fqs::KLSystem kl(spec);
  const auto best = fqs::optimize_decomposition(kl, budget, c);
  const auto entry = fqs::make_entry(spec, budget, c, best);
  if (db) {
    db->upsert(entry);
    db->save(o.db);
  }
  Sink sink(o.out);
  auto& os = sink.os();
  os << std::setprecision(10);
  if (o.format == "csv") {
    os << "process,budget,criterion,levels,n_rec,score\n";
    os << '"' << spec.describe() << "\"," << budget << "," << criterion << "," << best.decomposition.label() << ","
       << best.decomposition.strata_count() << "," << best.score << "\n";
  } else {
    os << spec.describe() << "\n  budget " << budget << ", " << criterion << ": " << best.decomposition.label()
       << " (N_rec = " << best.decomposition.strata_count() << "), score " << best.score << "\n";
  }
  return 0;
}

// Decomposition from the database when present, else computed (and stored).
fqs::ProductDecomposition lookup_decomposition(const fqs::PricingProblem& p, std::size_t strata, const OutputArgs& o) {
  const fqs::KLSystem kl(p.driver());
  if (o.db.empty()) return fqs::optimize_decomposition(kl, strata, fqs::Criterion::Lipschitz).decomposition;
  auto db = fqs::DecompositionDb::load(o.db);
  db.warm_quantizer_cache();
  fqs::DbEntry key = fqs::make_entry(p.driver(), strata, fqs::Criterion::Lipschitz, {{{}, strata}, 0.0});
  if (auto hit = db.find(key)) return {hit->levels, strata};
  std::cerr << "warning: no database entry for " << p.driver().describe() << " budget " << strata
            << "; computing it\n";
  const auto best = fqs::optimize_decomposition(kl, strata, fqs::Criterion::Lipschitz);
  db.upsert(fqs::make_entry(p.driver(), strata, fqs::Criterion::Lipschitz, best));
  db.save(o.db);
  return best.decomposition;
}

int cmd_price(const PriceArgs& a, const OutputArgs& o) {
  check_format(o.format);
  if (a.strata < 1) throw UsageError("--strata must be >= 1");
  if (a.paths < 1) throw UsageError("--paths must be >= 1");
  if (o.workers < 1) throw UsageError("--workers must be >= 1");
  if (a.pilot < 2) throw UsageError("--pilot must be >= 2");
  const auto rules = parse_rules(a.rule);
  const auto problem = make_problem(a);
  const auto dec = lookup_decomposition(problem, a.strata, o);
  if (a.paths < dec.strata_count() * (a.pilot + 1)) throw UsageError("--paths too small for the strata and pilot runs");

  fqs::BenchmarkOptions bo;
  bo.paths = a.paths;
  bo.seed = o.seed;
  bo.workers = o.workers;
  bo.pilot = a.pilot;
  bo.rules = rules;
  const auto row = fqs::run_benchmark(problem, a.strata, bo, &dec);
  Sink sink(o.out);
  if (o.format == "csv") {
    fqs::write_csv_header(sink.os(), rules);
    fqs::write_csv_row(sink.os(), row);
  } else {
    fqs::write_table_row(sink.os(), row);
  }
  return 0;
}

int cmd_tables(std::size_t paths, bool quick, const OutputArgs& o) {
  check_format(o.format);
  if (paths < 1) throw UsageError("--paths must be >= 1");
  if (o.workers < 1) throw UsageError("--workers must be >= 1");
  Sink sink(o.out);
  auto& os = sink.os();

  // Decomposition records.
  const fqs::KLSystem ou(fqs::GaussianProcessSpec::stationary_ou(1.0, 1.0, 3.0));
  const fqs::KLSystem bm(fqs::GaussianProcessSpec::brownian_motion(1.0));
  const std::vector<std::size_t> budgets = quick ? std::vector<std::size_t>{1, 10, 100}
                                                 : std::vector<std::size_t>{1, 10, 100, 1000};
  os << std::setprecision(10);
  if (o.format == "csv") os << "table,process,criterion,N,N_rec,decomposition,score\n";
  for (const auto& [kl, c, name] : {std::tuple{&ou, fqs::Criterion::Quadratic, "stationary_ou_T3"},
                                    std::tuple{&bm, fqs::Criterion::Lipschitz, "brownian_T1"}}) {
    for (std::size_t N : budgets) {
      const auto b = fqs::optimize_decomposition(*kl, N, c);
      if (o.format == "csv") {
        os << "decomposition," << name << "," << fqs::to_string(c) << "," << N << ","
           << b.decomposition.strata_count() << "," << b.decomposition.label() << "," << b.score << "\n";
      } else {
        os << std::setw(18) << name << std::setw(11) << fqs::to_string(c) << std::setw(6) << N << std::setw(6)
           << b.decomposition.strata_count() << std::setw(16) << b.decomposition.label() << "  " << b.score << "\n";
      }
    }
  }
  os << "\n";

  fqs::BenchmarkOptions bo;
  bo.paths = paths;
  bo.seed = o.seed;
  bo.workers = o.workers;
  struct Run {
    fqs::PricingProblem problem;
    std::vector<std::size_t> strata;
  };
  std::vector<Run> runs{{fqs::uic_problem(125.0, 1.5), {20, 100}},
                        {fqs::uic_problem(200.0, 1.0), {20, 100}},
                        {fqs::autocall_problem(), {20, 50}},
                        {fqs::asian_problem(), {20, 50, 100}}};
  if (o.format == "csv") fqs::write_csv_header(os, bo.rules);
  for (const auto& r : runs) {
    for (std::size_t s : r.strata) {
      if (quick && s != 20) continue;
      const auto row = fqs::run_benchmark(r.problem, s, bo);
      if (o.format == "csv") fqs::write_csv_row(os, row);
      else fqs::write_table_row(os, row);
    }
  }
  return 0;
}

// "--config f.json" -> list of "--key value" arguments.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [k, v] : j.items()) {
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back("--" + k);
      continue;
    }
    out.push_back("--" + k);
    if (v.is_array()) {
      for (const auto& x : v) out.push_back(x.is_string() ? x.get<std::string>() : x.dump());
    } else {
      out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  return out;
}

// Splices config-file arguments in front of the command-line ones so that
// the command line wins (every option keeps its last value).
std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty() || rest.empty()) return rest;
  std::vector<std::string> out{rest.front()};
  for (auto& a : config_args(config)) out.push_back(std::move(a));
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional-quantization stratified sampling"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  OutputArgs out;
  auto add_output = [&](CLI::App* sc, bool seeded) {
    sc->add_option("--out", out.out, "output file (default stdout)");
    sc->add_option("--format", out.format, "csv or table")->capture_default_str();
    sc->add_option("--db", out.db, "decomposition database (JSON)");
    if (seeded) {
      sc->add_option("--seed", out.seed, "random seed")->capture_default_str();
      sc->add_option("--workers", out.workers, "parallel workers")->capture_default_str();
    }
  };

  std::size_t qn = 0;
  double qtol = 1e-12;
  auto* quant = app.add_subcommand("quantizer", "optimal N-point quantizer of N(0,1)");
  quant->add_option("--n", qn, "number of points")->required();
  quant->add_option("--tol", qtol, "gradient tolerance")->capture_default_str();
  add_output(quant, false);

  ProcessArgs pa;
  std::size_t budget = 10;
  std::string criterion = "quadratic";
  auto* dec = app.add_subcommand("decompose", "optimal K-L product decomposition");
  dec->add_option("--process", pa.process, "brownian | bridge | ou | stationary-ou")->capture_default_str();
  dec->add_option("--theta", pa.theta)->capture_default_str();
  dec->add_option("--sigma", pa.sigma)->capture_default_str();
  dec->add_option("--sigma0", pa.sigma0)->capture_default_str();
  dec->add_option("--m0", pa.m0)->capture_default_str();
  dec->add_option("--mu", pa.mu)->capture_default_str();
  dec->add_option("--horizon", pa.horizon)->capture_default_str();
  dec->add_option("--budget", budget, "maximal number of strata N")->capture_default_str();
  dec->add_option("--criterion", criterion, "quadratic | lipschitz")->capture_default_str();
  add_output(dec, false);

  PriceArgs pr;
  auto* price = app.add_subcommand("price", "stratified Monte-Carlo pricing run");
  price->add_option("--model", pr.model, "bs | cev | schwartz")->capture_default_str();
  price->add_option("--payoff", pr.payoff, "uic | autocall | asian")->capture_default_str();
  price->add_option("--s0", pr.s0)->capture_default_str();
  price->add_option("--sigma", pr.sigma)->capture_default_str();
  price->add_option("--beta", pr.beta, "CEV exponent")->capture_default_str();
  price->add_option("--theta", pr.theta, "Schwartz mean reversion")->capture_default_str();
  price->add_option("--alpha", pr.alpha, "Schwartz log level")->capture_default_str();
  price->add_option("--strike", pr.strike, "default 100, auto-call 110");
  price->add_option("--barrier", pr.barrier, "default 125, auto-call 80");
  price->add_option("--nominal", pr.nominal)->capture_default_str();
  price->add_option("--coupon", pr.coupon)->capture_default_str();
  price->add_option("--horizon", pr.horizon, "default 1.5 for uic, else 3");
  price->add_option("--fixings", pr.fixings, "UIC barrier fixings")->capture_default_str();
  price->add_option("--steps", pr.steps, "time steps (default per payoff)");
  price->add_option("--dates", pr.dates, "observation dates");
  price->add_option("--strata,--budget", pr.strata, "strata budget N")->capture_default_str();
  price->add_option("--paths", pr.paths, "total paths M")->capture_default_str();
  price->add_option("--rule", pr.rule, "proportional | lipschitz | estimated | all")->capture_default_str();
  price->add_option("--pilot", pr.pilot, "pilot paths per stratum")->capture_default_str();
  add_output(price, true);

  std::size_t tpaths = 100000;
  bool quick = false;
  auto* tables = app.add_subcommand("tables", "decomposition records and all pricing benchmarks");
  tables->add_option("--paths", tpaths)->capture_default_str();
  tables->add_flag("--quick", quick, "small budgets and 20 strata only");
  add_output(tables, true);

  try {
    auto args = expand_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*quant) return cmd_quantizer(qn, qtol, out);
    if (*dec) return cmd_decompose(pa, budget, criterion, out);
    if (*price) return cmd_price(pr, out);
    if (*tables) return cmd_tables(tpaths, quick, out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const fqs::DomainError& e) {
    std::cerr << "invalid parameter: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
