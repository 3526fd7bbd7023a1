// Command-line front end: one subcommand per experiment, a JSON config merged onto
// built-in defaults, scalar overrides with --set, reports written atomically under the
// output prefix.
//
// Exit status: 0 success, 1 invalid input, 2 runtime failure.

#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gext/errors.hpp"
#include "gext/fields.hpp"
#include "gext/geometry.hpp"
#include "gext/limit_law.hpp"
#include "gext/montecarlo.hpp"
#include "gext/pickands.hpp"
#include "gext/serialization.hpp"

namespace {

using gext::io::json;

constexpr const char* kSeedEnv = "GEXT_SEED";

json default_quadrature() { return {{"node_count", 64}, {"method", "gauss_hermite"}, {"mc_draws", 1000000}}; }

json default_sup_config() {
  return {{"model",
           {{"family", "separable_stable"},
            {"alphas", {2.0, 2.0}},
            {"R", 0.0},
            {"horizon_T", 0.0},
            {"bounded_dims", 0},
            {"block_edge", 1.0}}},
          {"plan", gext::io::to_json(gext::geometry::ScalingPlan::symmetric(2))},
          {"J", gext::io::to_json(gext::geometry::JordanSet::unit_cube(2))},
          {"x", {1.0, 1.0}},
          {"u_values", {2.5, 3.0, 3.5}},
          {"a", 0.25},
          {"replicates", 10000},
          {"seed", 0},
          {"pickands_values", nullptr},
          {"workers", 1},
          {"quadrature", default_quadrature()},
          {"grid_budget", gext::geometry::kDefaultGridBudget}};
}

json default_config(const std::string& sub) {
  if (sub == "pickands") {
    return {{"alpha", 2.0},     {"horizon", 64.0},          {"step", 0.015625}, {"replicates", 100000},
            {"seed", 0},        {"method", "dieker_yakir"}, {"workers", 1}};
  }
  if (sub == "limit-cdf") {
    return {{"x", {1.0, 1.0}}, {"lambda_J", 1.0}, {"c", nullptr},        {"R", 0.0},
            {"gamma", 0.25},   {"seed", 0},       {"quadrature", default_quadrature()}};
  }
  if (sub == "simulate-sup") {
    json c = default_sup_config();
    c["dump_field"] = false;
    return c;
  }
  if (sub == "converge") return default_sup_config();
  if (sub == "tail-check") {
    return {{"alphas", {2.0, 2.0}}, {"pickands_values", nullptr}, {"u_values", {2.0, 2.5, 3.0}},
            {"replicates", 100000}, {"seed", 0},                   {"a", 0.25},
            {"workers", 1}};
  }
  if (sub == "lemma-sums") {
    return {{"alphas", {2.0, 2.0}},
            {"bounded_dims", 0},
            {"plan", gext::io::to_json(gext::geometry::ScalingPlan::symmetric(2))},
            {"pickands_values", nullptr},
            {"u_values", {3.0, 4.0, 5.0}},
            {"a", 0.25},
            {"eps", 0.25},
            {"R_lemma2", 0.5},
            {"R_lemma3", 0.0},
            {"tau", nullptr},
            {"seed", 0}};
  }
  if (sub == "corollary") {
    json c = default_sup_config();
    gext::geometry::ScalingPlan plan{2, 1, {1.0}, {0.5}, {gext::geometry::SlowFactor{}}};
    c["plan"] = gext::io::to_json(plan);
    c["kind"] = "szybko";
    c["kappa"] = 0.125;
    return c;
  }
  throw gext::ValidationError("unknown subcommand '" + sub + "'");
}

// Overlays `patch` on `base`; keys absent from the defaults are rejected.
void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw gext::ValidationError(where + ": expected a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw gext::ValidationError("unknown config key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && it->is_object()) {
      merge_strict(slot, *it, path);
    } else {
      slot = *it;
    }
  }
}

// key.path=value on an existing scalar (or null) leaf.
void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw gext::ValidationError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &config;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw gext::ValidationError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  if (node->is_object() || node->is_array()) {
    throw gext::ValidationError("--set only overrides scalar leaves; '" + key + "' is structured");
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  if (value.is_object() || value.is_array()) {
    throw gext::ValidationError("--set only accepts scalar values for '" + key + "'");
  }
  *node = value;
}

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
  try {
    // stoull would quietly wrap "-4" around to 2^64 − 4.
    if (text.empty() || !std::isdigit(static_cast<unsigned char>(text.front()))) {
      throw std::invalid_argument("not a digit");
    }
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used, 0);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw gext::ValidationError(origin + ": '" + text + "' is not an unsigned 64-bit seed");
  }
}

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// H_α for each alpha: the given values, else closed forms, else a grid estimate.
struct PickandsResolution {
  std::vector<double> values;
  std::vector<std::string> source;
};

PickandsResolution resolve_pickands(const json& given, const std::vector<double>& alphas, std::uint64_t seed,
                                    unsigned workers) {
  PickandsResolution out;
  if (!given.is_null()) {
    out.values = given.get<std::vector<double>>();
    if (out.values.size() != alphas.size()) throw gext::ValidationError("pickands_values must have one entry per alpha");
    out.source.assign(alphas.size(), "override");
    return out;
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (auto closed = gext::pickands::closed_form_pickands(alphas[i])) {
      out.values.push_back(*closed);
      out.source.push_back("closed_form");
    } else {
      const auto est = gext::pickands::estimate_pickands(alphas[i], 64.0, 1.0 / 64.0, 10000,
                                                         gext::derive_seed(seed, i, 0x50494b), {.workers = workers});
      out.values.push_back(est.value);
      out.source.push_back("estimate");
    }
  }
  return out;
}

json pickands_json(const PickandsResolution& p) { return {{"values", p.values}, {"source", p.source}}; }

struct Outcome {
  json result;
  std::string csv;
  std::optional<gext::fields::FieldSample> field;
};

gext::montecarlo::SupExperimentConfig sup_config(json cfg, unsigned workers, PickandsResolution& pk) {
  cfg.erase("dump_field");
  cfg.erase("kind");
  cfg.erase("kappa");
  const json given = cfg["pickands_values"];
  cfg["pickands_values"] = nullptr;
  auto c = gext::io::sup_config_from_json(cfg, false);
  c.workers = workers;
  pk = resolve_pickands(given, c.model.alphas, c.seed, workers);
  c.pickands_values = pk.values;
  c.validate();
  return c;
}

Outcome run_pickands(const json& cfg, unsigned workers) {
  gext::io::StrictObject o(cfg, "config");
  const double alpha = o.get<double>("alpha");
  const double horizon = o.get<double>("horizon");
  const double step = o.get<double>("step");
  const auto replicates = o.get<std::uint64_t>("replicates");
  const auto seed = o.get<std::uint64_t>("seed");
  const auto method = gext::pickands::method_from_string(o.get<std::string>("method"));
  o.get_or<unsigned>("workers", 1);
  o.finish();
  const auto est = gext::pickands::estimate_pickands(alpha, horizon, step, replicates, seed, {method, workers});
  Outcome out;
  out.result = gext::io::to_json(est);
  if (auto closed = gext::pickands::closed_form_pickands(alpha)) out.result["closed_form"] = *closed;
  std::ostringstream csv;
  csv << "alpha,horizon,step,replicates,value,std_error,seed\n"
      << gext::io::format_double(alpha) << ',' << gext::io::format_double(horizon) << ','
      << gext::io::format_double(step) << ',' << replicates << ',' << gext::io::format_double(est.value) << ','
      << gext::io::format_double(est.std_error) << ',' << seed << '\n';
  out.csv = csv.str();
  return out;
}

Outcome run_limit_cdf(const json& cfg) {
  gext::io::StrictObject o(cfg, "config");
  gext::limit_law::LimitLawParams p;
  p.x = o.get<std::vector<double>>("x");
  p.lambda_J = o.get<double>("lambda_J");
  p.R = o.get<double>("R");
  p.gamma = o.get<double>("gamma");
  const auto seed = o.get<std::uint64_t>("seed");
  auto quad = gext::io::quadrature_from_json(o.at("quadrature"));
  quad.seed = seed;
  std::optional<double> c;
  if (o.has("c")) c = o.get<double>("c");
  o.get_or<double>("c", 0.0);
  o.finish();
  gext::limit_law::LimitCdfResult r;
  if (c) {
    r = gext::limit_law::limit_cdf_intensity(*c, p.R, p.gamma, quad);
  } else {
    r = gext::limit_law::limit_cdf(p, quad);
  }
  Outcome out;
  out.result = gext::io::to_json(r);
  const double intensity = c ? *c : p.intensity();
  std::ostringstream csv;
  csv << "c,R,gamma,value,std_error,method\n"
      << gext::io::format_double(intensity) << ',' << gext::io::format_double(p.R) << ','
      << gext::io::format_double(p.gamma) << ',' << gext::io::format_double(r.value) << ','
      << gext::io::format_double(r.std_error) << ',' << gext::limit_law::to_string(r.method) << '\n';
  out.csv = csv.str();
  return out;
}

Outcome run_sup(const json& cfg, unsigned workers, bool converge) {
  PickandsResolution pk;
  const auto c = sup_config(cfg, workers, pk);
  const auto rep = converge ? gext::montecarlo::convergence_study(c) : gext::montecarlo::estimate_sup_cdf(c);
  Outcome out;
  out.result = gext::io::to_json(rep);
  out.result["pickands"] = pickands_json(pk);
  out.csv = gext::io::report_csv(rep);
  if (!converge && cfg.value("dump_field", false)) {
    // One field on the window of the largest threshold, at that threshold's grid.
    const double u = *std::max_element(c.u_values.begin(), c.u_values.end());
    const auto m = gext::geometry::evaluate_m_i(c.plan, u, c.model.alphas, c.pickands_values).m;
    const auto bb = gext::geometry::scale_set(c.J, c.x, m).bounding_box();
    std::vector<std::pair<double, double>> extents;
    for (std::size_t i = 0; i < bb.dim(); ++i) extents.emplace_back(bb.lower[i], bb.upper[i]);
    const auto grid = gext::geometry::build_grid(extents, c.model.alphas, c.a, u, c.grid_budget);
    auto model = c.model;
    if (model.family == gext::fields::Family::mixture_strong) {
      double T = 0.0;
      for (std::size_t i = 0; i < m.size(); ++i) T = std::max(T, c.x[i] * m[i]);
      model.horizon_T = T;
    }
    out.field = gext::fields::sample_field(model, grid, c.seed);
  }
  return out;
}

Outcome run_tail_check(const json& cfg, unsigned workers) {
  gext::io::StrictObject o(cfg, "config");
  gext::montecarlo::TailCheckConfig c;
  c.model = gext::fields::CorrelationModel::separable(o.get<std::vector<double>>("alphas"));
  c.u_values = o.get<std::vector<double>>("u_values");
  c.replicates = o.get<std::uint64_t>("replicates");
  c.seed = o.get<std::uint64_t>("seed");
  c.a = o.get<double>("a");
  o.get_or<unsigned>("workers", 1);
  const json given = o.at("pickands_values");
  o.finish();
  c.workers = workers;
  const auto pk = resolve_pickands(given, c.model.alphas, c.seed, workers);
  c.pickands_values = pk.values;
  const auto rep = gext::montecarlo::piterbarg_tail_check(c);
  Outcome out;
  out.result = gext::io::to_json(rep);
  out.result["pickands"] = pickands_json(pk);
  out.csv = gext::io::report_csv(rep);
  return out;
}

Outcome run_lemma_sums(const json& cfg, unsigned workers) {
  gext::io::StrictObject o(cfg, "config");
  gext::montecarlo::LemmaSumConfig c;
  c.model = gext::fields::CorrelationModel::separable(o.get<std::vector<double>>("alphas"));
  c.model.bounded_dims = o.get<std::size_t>("bounded_dims");
  c.model.validate();
  c.plan = gext::io::scaling_plan_from_json(o.at("plan"));
  c.u_values = o.get<std::vector<double>>("u_values");
  c.a = o.get<double>("a");
  c.eps = o.get<double>("eps");
  c.R_lemma2 = o.get<double>("R_lemma2");
  c.R_lemma3 = o.get<double>("R_lemma3");
  c.tau = o.get_or<std::vector<double>>("tau", {});
  const auto seed = o.get<std::uint64_t>("seed");
  const json given = o.at("pickands_values");
  o.finish();
  const auto pk = resolve_pickands(given, c.model.alphas, seed, workers);
  c.pickands_values = pk.values;
  const auto [l2, l3] = gext::montecarlo::lemma_sums(c);
  Outcome out;
  out.result = {{"lemma2", gext::io::to_json(l2)}, {"lemma3", gext::io::to_json(l3)}, {"pickands", pickands_json(pk)}};
  out.csv = gext::io::lemma_csv({l2, l3});
  return out;
}

Outcome run_corollary(const json& cfg, unsigned workers) {
  PickandsResolution pk;
  gext::montecarlo::CorollaryConfig c;
  c.kind = gext::montecarlo::corollary_kind_from_string(cfg.at("kind").get<std::string>());
  c.kappa = cfg.at("kappa").get<double>();
  c.base = sup_config(cfg, workers, pk);
  const auto rep = gext::montecarlo::corollary_experiments(c);
  Outcome out;
  out.result = gext::io::to_json(rep);
  out.result["pickands"] = pickands_json(pk);
  out.csv = gext::io::report_csv(rep);
  return out;
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> seed;
  std::string out;
  std::string format = "json";
  std::optional<unsigned> workers;
  bool print = false;
};

int run(const std::string& sub, const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  json cfg = default_config(sub);

  // Seed precedence: built-in 0 < environment < config file < --seed.
  if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
    cfg["seed"] = parse_seed(env, kSeedEnv);
  }
  if (!opt.config_path.empty()) {
    std::ifstream f(opt.config_path);
    if (!f) throw gext::ValidationError("cannot read config file '" + opt.config_path + "'");
    json file;
    try {
      file = json::parse(f);
    } catch (const json::exception& e) {
      throw gext::ValidationError("config file '" + opt.config_path + "' is not valid JSON: " + e.what());
    }
    merge_strict(cfg, file, "");
  }
  for (const auto& assignment : opt.overrides) apply_override(cfg, assignment);
  if (opt.seed) cfg["seed"] = parse_seed(*opt.seed, "--seed");
  if (!cfg["seed"].is_number_unsigned()) {
    if (cfg["seed"].is_number_integer() && cfg["seed"].get<long long>() >= 0) {
      cfg["seed"] = cfg["seed"].get<std::uint64_t>();
    } else {
      throw gext::ValidationError("seed must be an unsigned 64-bit integer");
    }
  }

  // Scheduling only: results do not depend on it, so it stays out of the hashed config.
  unsigned workers = 1;
  if (cfg.contains("workers")) {
    if (!cfg["workers"].is_number_integer() || cfg["workers"].get<long long>() < 0) {
      throw gext::ValidationError("workers must be a nonnegative integer");
    }
    workers = cfg["workers"].get<unsigned>();
    cfg.erase("workers");
  }
  if (opt.workers) workers = *opt.workers;
  workers = gext::resolve_workers(workers);
  if (opt.format != "json" && opt.format != "csv" && opt.format != "both") {
    throw gext::ValidationError("--format must be json, csv or both");
  }

  Outcome outcome;
  if (sub == "pickands") {
    outcome = run_pickands(cfg, workers);
  } else if (sub == "limit-cdf") {
    outcome = run_limit_cdf(cfg);
  } else if (sub == "simulate-sup") {
    outcome = run_sup(cfg, workers, false);
  } else if (sub == "converge") {
    outcome = run_sup(cfg, workers, true);
  } else if (sub == "tail-check") {
    outcome = run_tail_check(cfg, workers);
  } else if (sub == "lemma-sums") {
    outcome = run_lemma_sums(cfg, workers);
  } else {
    outcome = run_corollary(cfg, workers);
  }

  const std::string hash = gext::io::config_hash(cfg);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json doc = {{"subcommand", sub},
              {"config", cfg},
              {"config_hash", hash},
              {"result", outcome.result},
              {"metadata", {{"config_hash", hash}, {"seed", cfg["seed"]}}},
              {"timing", {{"wall_time_s", wall}, {"timestamp", timestamp_utc()}, {"workers", workers}}}};

  const std::filesystem::path prefix = opt.out.empty() ? std::filesystem::path(sub) : std::filesystem::path(opt.out);
  auto with_suffix = [&](const std::string& suffix) {
    std::filesystem::path p = prefix;
    p += suffix;
    return p;
  };
  if (opt.format == "json" || opt.format == "both") gext::io::atomic_write(with_suffix(".json"), doc.dump(2) + "\n");
  if (opt.format == "csv" || opt.format == "both") gext::io::atomic_write(with_suffix(".csv"), outcome.csv);
  if (outcome.field) gext::io::write_field_dump(with_suffix(".field.bin"), *outcome.field);
  if (opt.print) std::cout << doc.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extreme-value limit laws of stationary Gaussian fields: simulation and checks"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"pickands", "Monte Carlo estimate of the Pickands constant H_alpha"},
      {"limit-cdf", "Evaluate the limiting sup distribution"},
      {"simulate-sup", "Empirical P(sup <= u) over scaled sets"},
      {"converge", "Convergence study against the limit law"},
      {"tail-check", "Empirical tail of sup over [0,1]^d against the Piterbarg asymptotics"},
      {"lemma-sums", "Deterministic lattice sums of the correlation lemmas"},
      {"corollary", "Fast-shrinking (szybko) and slow-shrinking (wolno) window experiments"},
  };
  for (const auto& [name, help] : subs) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("-c,--config", opt.config_path, "JSON config file merged onto the defaults");
    s->add_option("--set", opt.overrides, "Override a scalar leaf: key.path=value")->take_all();
    s->add_option("--seed", opt.seed, std::string("Master seed (default from $") + kSeedEnv + ", else 0)");
    s->add_option("-o,--out", opt.out, "Output path prefix (default: the subcommand name)");
    s->add_option("-f,--format", opt.format, "json, csv or both")->check(CLI::IsMember({"json", "csv", "both"}));
    s->add_option("-w,--workers", opt.workers, "Worker threads (0 = all cores); results do not depend on it");
    s->add_flag("--print", opt.print, "Also print the JSON document to stdout");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    return run(sub, opt);
  } catch (const gext::ValidationError& e) {
    std::cerr << "gext " << sub << ": invalid input: " << e.what() << '\n';
    return 1;
  } catch (const gext::io::json::exception& e) {
    std::cerr << "gext " << sub << ": invalid input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gext " << sub << ": runtime failure: " << e.what() << '\n';
    return 2;
  }
}
