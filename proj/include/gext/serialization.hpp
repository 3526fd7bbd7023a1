#pragma once

// JSON and CSV for configurations and reports, strict config parsing (unknown keys are
// rejected), the canonical form used for hashing and determinism checks, atomic file
// writes and the binary field dump.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gext/errors.hpp"
#include "gext/fields.hpp"
#include "gext/geometry.hpp"
#include "gext/limit_law.hpp"
#include "gext/montecarlo.hpp"
#include "gext/pickands.hpp"

namespace gext::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Strict readers

/// Reads the members of one JSON object and rejects members nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ValidationError(where_ + ": missing key '" + key + "'");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const json& v = at(key);
    try {
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  T get_or(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return get<T>(key);
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  /// Throws if the object holds members that were never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// ---------------------------------------------------------------------------
// Geometry

inline json to_json(const geometry::JordanSet& J) {
  json out = json::array();
  for (const auto& b : J.boxes()) out.push_back(json::array({b.lower, b.upper}));
  return out;
}

inline geometry::JordanSet jordan_set_from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("J: expected a list of [lower, upper] corner pairs");
  std::vector<geometry::Box> boxes;
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2) throw ValidationError("J: every box must be a [lower, upper] pair");
    try {
      boxes.push_back({pair[0].get<std::vector<double>>(), pair[1].get<std::vector<double>>()});
    } catch (const json::exception& e) {
      throw ValidationError(std::string("J: ") + e.what());
    }
  }
  return geometry::JordanSet(std::move(boxes));
}

inline json to_json(const geometry::ScalingPlan& p) {
  json factors = json::array();
  for (const auto& f : p.factors) factors.push_back({{"kind", geometry::to_string(f.kind)}, {"param", f.param}});
  return {{"d", p.d},           {"k", p.k}, {"M", p.M}, {"gammas", p.gammas}, {"c_descriptors", factors},
          {"growth_tolerance", p.growth_tolerance}};
}

inline geometry::ScalingPlan scaling_plan_from_json(const json& j) {
  StrictObject o(j, "plan");
  geometry::ScalingPlan p;
  p.d = o.get<std::size_t>("d");
  p.k = o.get_or<std::size_t>("k", 0);
  p.M = o.get_or<std::vector<double>>("M", {});
  p.gammas = o.get<std::vector<double>>("gammas");
  p.factors.clear();
  if (o.has("c_descriptors")) {
    for (const auto& f : o.at("c_descriptors")) {
      StrictObject fo(f, "plan.c_descriptors[]");
      geometry::SlowFactor sf;
      sf.kind = geometry::slow_factor_kind_from_string(fo.get<std::string>("kind"));
      sf.param = fo.get<double>("param");
      fo.finish();
      p.factors.push_back(sf);
    }
  } else {
    o.at("c_descriptors");
    p.factors.assign(p.gammas.size(), geometry::SlowFactor{});
  }
  p.growth_tolerance = o.get_or<double>("growth_tolerance", 0.25);
  o.finish();
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Models and limit law

inline json to_json(const fields::CorrelationModel& m) {
  return {{"family", fields::to_string(m.family)}, {"alphas", m.alphas},
          {"R", m.R},                              {"horizon_T", m.horizon_T},
          {"bounded_dims", m.bounded_dims},        {"block_edge", m.block_edge}};
}

/// With `require_horizon` false the mixture horizon may be left at 0 (experiments set it per u).
inline fields::CorrelationModel model_from_json(const json& j, bool require_horizon = true) {
  StrictObject o(j, "model");
  fields::CorrelationModel m;
  m.family = fields::family_from_string(o.get_or<std::string>("family", "separable_stable"));
  m.alphas = o.get<std::vector<double>>("alphas");
  m.R = o.get_or<double>("R", 0.0);
  m.horizon_T = o.get_or<double>("horizon_T", 0.0);
  m.bounded_dims = o.get_or<std::size_t>("bounded_dims", 0);
  m.block_edge = o.get_or<double>("block_edge", 1.0);
  o.finish();
  if (require_horizon || m.family == fields::Family::separable_stable) {
    m.validate();
  } else {
    fields::CorrelationModel probe = m;
    probe.horizon_T = std::exp(2.0 * std::max(m.R, 1.0));
    probe.validate();
  }
  return m;
}

inline json to_json(const limit_law::QuadratureSpec& q) {
  return {{"node_count", q.node_count},
          {"method", limit_law::to_string(q.method)},
          {"mc_draws", q.mc_draws},
          {"seed", q.seed}};
}

inline limit_law::QuadratureSpec quadrature_from_json(const json& j) {
  StrictObject o(j, "quadrature");
  limit_law::QuadratureSpec q;
  q.node_count = o.get_or<int>("node_count", q.node_count);
  q.method = limit_law::quadrature_method_from_string(o.get_or<std::string>("method", "gauss_hermite"));
  q.mc_draws = o.get_or<std::uint64_t>("mc_draws", q.mc_draws);
  q.seed = o.get_or<std::uint64_t>("seed", q.seed);
  o.finish();
  q.validate();
  return q;
}

inline json to_json(const limit_law::LimitCdfResult& r) {
  return {{"value", r.value},
          {"std_error", r.std_error},
          {"method", limit_law::to_string(r.method)},
          {"intensity", r.intensity},
          {"saturated", r.saturated}};
}

inline json to_json(const pickands::PickandsEstimate& e) {
  return {{"alpha", e.alpha},         {"horizon", e.horizon},     {"step", e.step},
          {"replicates", e.replicates}, {"value", e.value},       {"std_error", e.std_error},
          {"seed", e.seed},           {"method", pickands::to_string(e.method)}};
}

// ---------------------------------------------------------------------------
// Experiment configs

inline json to_json(const montecarlo::SupExperimentConfig& c) {
  return {{"model", to_json(c.model)},
          {"plan", to_json(c.plan)},
          {"J", to_json(c.J)},
          {"x", c.x},
          {"u_values", c.u_values},
          {"a", c.a},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"pickands_values", c.pickands_values},
          {"workers", c.workers},
          {"quadrature", to_json(c.quadrature)},
          {"grid_budget", c.grid_budget}};
}

/// Parses a sup-experiment config. `pickands_values` may be null/absent; the caller
/// then supplies them (closed forms or estimates) before validation.
inline montecarlo::SupExperimentConfig sup_config_from_json(const json& j, bool validate = true) {
  StrictObject o(j, "config");
  montecarlo::SupExperimentConfig c;
  c.model = model_from_json(o.at("model"), false);
  c.plan = scaling_plan_from_json(o.at("plan"));
  c.J = jordan_set_from_json(o.at("J"));
  c.x = o.get<std::vector<double>>("x");
  c.u_values = o.get<std::vector<double>>("u_values");
  c.a = o.get_or<double>("a", 0.25);
  c.replicates = o.get<std::uint64_t>("replicates");
  c.seed = o.get_or<std::uint64_t>("seed", 0);
  c.pickands_values = o.get_or<std::vector<double>>("pickands_values", {});
  c.workers = o.get_or<unsigned>("workers", 1);
  if (o.has("quadrature")) {
    c.quadrature = quadrature_from_json(o.at("quadrature"));
  } else {
    o.get_or<int>("quadrature", 0);
  }
  c.grid_budget = o.get_or<std::size_t>("grid_budget", geometry::kDefaultGridBudget);
  o.finish();
  if (validate) c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reports

inline json to_json(const montecarlo::Record& r) {
  json extra = json::object();
  for (const auto& [k, v] : r.extra) extra[k] = v;
  return {{"u", r.u},
          {"empirical", r.empirical},
          {"ci_low", r.ci_low},
          {"ci_high", r.ci_high},
          {"theory", r.theory},
          {"successes", r.successes},
          {"replicates", r.replicates},
          {"grid_points", r.grid_points},
          {"extra", extra}};
}

inline json to_json(const montecarlo::Verdict& v) { return {{"rule", v.rule}, {"pass", v.pass}, {"detail", v.detail}}; }

inline json to_json(const montecarlo::ExperimentReport& rep) {
  json records = json::array();
  for (const auto& r : rep.records) records.push_back(to_json(r));
  json summary = json::object();
  for (const auto& [k, v] : rep.summary) summary[k] = v;
  return {{"experiment", rep.experiment},
          {"records", records},
          {"verdict", rep.verdict ? to_json(*rep.verdict) : json(nullptr)},
          {"flags", rep.flags},
          {"summary", summary},
          {"seed", rep.seed}};
}

inline json to_json(const montecarlo::LemmaSumReport& rep) {
  json values = json::array();
  for (std::size_t i = 0; i < rep.values.size(); ++i) {
    const auto& v = rep.values[i];
    values.push_back({{"u", rep.u_values[i]},
                      {"sum", v.value},
                      {"max_term", v.max_term},
                      {"prefactor", v.prefactor},
                      {"terms", v.terms},
                      {"stride", v.stride},
                      {"approximated", v.approximated},
                      {"T", rep.T_values[i]}});
  }
  return {{"lemma", rep.lemma},
          {"values", values},
          {"parameters", {{"eps", rep.eps}, {"a", rep.a}, {"R", rep.R}}},
          {"verdict", to_json(rep.verdict)}};
}

/// Hex-encoded 64-bit FNV-1a.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Compact dump with sorted keys; the basis of hashing and byte comparisons.
inline std::string canonical(const json& j) { return j.dump(); }

inline std::string config_hash(const json& config) { return fnv1a_hex(canonical(config)); }

/// The document without its "timing" block, as compared across reruns.
inline std::string canonical_payload(const json& document) {
  json copy = document;
  copy.erase("timing");
  return canonical(copy);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kReportCsvHeader = "u,empirical,ci_low,ci_high,theory,n";

/// Per-u table: u, empirical, ci_low, ci_high, theory, n.
inline std::string report_csv(const montecarlo::ExperimentReport& rep) {
  std::ostringstream out;
  out << kReportCsvHeader << '\n';
  for (const auto& r : rep.records) {
    out << format_double(r.u) << ',' << format_double(r.empirical) << ',' << format_double(r.ci_low) << ','
        << format_double(r.ci_high) << ',' << format_double(r.theory) << ',' << r.replicates << '\n';
  }
  return out.str();
}

inline constexpr const char* kLemmaCsvHeader = "lemma,u,sum,max_term,terms,stride,approximated";

inline std::string lemma_csv(const std::vector<montecarlo::LemmaSumReport>& reports) {
  std::ostringstream out;
  out << kLemmaCsvHeader << '\n';
  for (const auto& rep : reports) {
    for (std::size_t i = 0; i < rep.values.size(); ++i) {
      const auto& v = rep.values[i];
      out << rep.lemma << ',' << format_double(rep.u_values[i]) << ',' << format_double(v.value) << ','
          << format_double(v.max_term) << ',' << v.terms << ',' << v.stride << ',' << (v.approximated ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Files

/// Writes `content` to a sibling temporary file and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeFailure("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) throw RuntimeFailure("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw RuntimeFailure("rename to " + path.string() + " failed: " + ec.message());
  }
}

inline json field_header(const fields::FieldSample& s) {
  return {{"dims", s.grid.counts},  {"spacings", s.grid.spacings}, {"lower", s.grid.lower},
          {"seed", s.seed},         {"dtype", "float64"},          {"byte_order", "little"},
          {"layout", "row_major"}};
}

/// One JSON header line, then the values as little-endian float64 in row-major order.
inline std::string field_dump_bytes(const fields::FieldSample& s) {
  std::string out = field_header(s).dump() + "\n";
  const std::size_t offset = out.size();
  out.resize(offset + s.values.size() * sizeof(double));
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(s.values[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    for (int b = 0; b < 8; ++b) out[offset + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

inline void write_field_dump(const std::filesystem::path& path, const fields::FieldSample& s) {
  atomic_write(path, field_dump_bytes(s));
}

/// Reads a dump back: header JSON and values.
inline std::pair<json, std::vector<double>> read_field_dump(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open " + path.string());
  std::string header;
  std::getline(f, header);
  json h = json::parse(header);
  std::vector<double> values;
  char buf[8];
  while (f.read(buf, 8)) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
    values.push_back(std::bit_cast<double>(bits));
  }
  return {h, values};
}

}  // namespace gext::io
