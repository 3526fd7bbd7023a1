#pragma once

// Monte Carlo experiments around the sup-distribution limit: empirical P(sup ≤ u) over
// scaled sets with common random numbers across thresholds and sets, convergence
// studies, the Piterbarg tail check, discretization gaps, the deterministic lattice
// sums of the two correlation lemmas and the fast/slow-window corollary experiments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gext/errors.hpp"
#include "gext/fields.hpp"
#include "gext/geometry.hpp"
#include "gext/limit_law.hpp"
#include "gext/parallel.hpp"
#include "gext/rng.hpp"

namespace gext::montecarlo {

inline constexpr double kWilsonZ = 1.959963984540054;

/// 95% Wilson score interval for `successes` out of `n`.
inline std::pair<double, double> wilson_interval(std::uint64_t successes, std::uint64_t n, double z = kWilsonZ) {
  detail::require(n > 0 && successes <= n, "wilson_interval: need 0 <= successes <= n, n > 0");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct Record {
  double u = 0.0;
  double empirical = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double theory = 0.0;
  std::uint64_t successes = 0;
  std::uint64_t replicates = 0;
  std::uint64_t grid_points = 0;
  std::map<std::string, double> extra;  // experiment-specific columns (sorted, deterministic)
};

struct Verdict {
  std::string rule;
  bool pass = false;
  std::string detail;
};

struct ExperimentReport {
  std::string experiment;
  std::vector<Record> records;
  std::optional<Verdict> verdict;
  std::vector<std::string> flags;       // e.g. "truncated", "conjecture_conditional"
  std::map<std::string, double> summary;
  std::uint64_t seed = 0;
};

/// Inputs of a sup-CDF experiment.
struct SupExperimentConfig {
  fields::CorrelationModel model;  // for mixture_strong the horizon is set per u to max_i x_i m_i(u)
  geometry::ScalingPlan plan = geometry::ScalingPlan::symmetric(2);
  geometry::JordanSet J = geometry::JordanSet::unit_cube(2);
  std::vector<double> x{1.0, 1.0};
  std::vector<double> u_values{2.5, 3.0, 3.5};
  double a = 0.25;
  std::uint64_t replicates = 10000;
  std::uint64_t seed = 0;
  std::vector<double> pickands_values;
  unsigned workers = 1;
  limit_law::QuadratureSpec quadrature{};
  std::size_t grid_budget = geometry::kDefaultGridBudget;

  std::size_t dim() const { return model.dim(); }

  void validate() const {
    const std::size_t d = model.alphas.size();
    detail::require(d > 0, "SupExperimentConfig: model.alphas must be non-empty");
    for (double al : model.alphas) detail::require(al > 0.0 && al <= 2.0, "SupExperimentConfig: alphas must lie in (0, 2]");
    if (model.family == fields::Family::mixture_strong) {
      detail::require(model.R > 0.0, "SupExperimentConfig: mixture_strong needs R > 0");
      detail::require(model.block_edge > 0.0, "SupExperimentConfig: block_edge must be positive");
    } else {
      detail::require(model.R == 0.0, "SupExperimentConfig: separable_stable has R = 0");
    }
    plan.validate();
    detail::require(plan.d == d, "SupExperimentConfig: plan dimension differs from the model");
    detail::require(J.dim() == d, "SupExperimentConfig: J dimension differs from the model");
    detail::require(x.size() == d, "SupExperimentConfig: x must have d entries");
    for (double xi : x) detail::require(xi > 0.0 && std::isfinite(xi), "SupExperimentConfig: x must be positive");
    detail::require(!u_values.empty(), "SupExperimentConfig: u_values must be non-empty");
    for (double u : u_values) detail::require(u > 0.0 && std::isfinite(u), "SupExperimentConfig: u_values must be positive");
    detail::require(a > 0.0, "SupExperimentConfig: a must be positive");
    detail::require(replicates >= 100, "SupExperimentConfig: replicates must be at least 100");
    detail::require(pickands_values.size() == d, "SupExperimentConfig: pickands_values must have d entries");
    for (double h : pickands_values) detail::require(h > 0.0, "SupExperimentConfig: pickands_values must be positive");
    quadrature.validate();
  }
};

// ---------------------------------------------------------------------------
// Common random numbers

/// Per-replicate grid suprema for a list of query sets sampled on one shared grid.
struct CrnSups {
  geometry::GridSpec grid;
  std::size_t queries = 0;
  std::vector<double> sup;        // replicate-major: sup[r·queries + k]
  std::vector<double> W;          // mixture only: the shared normal of each replicate
  std::vector<std::uint64_t> points;  // grid points scanned per query

  double at(std::size_t replicate, std::size_t query) const { return sup[replicate * queries + query]; }
};

namespace detail {

using gext::detail::require;

struct IndexBox {
  std::vector<std::size_t> lo, hi;  // inclusive
  bool empty = false;
};

inline std::vector<IndexBox> index_boxes(const geometry::GridSpec& grid, const geometry::JordanSet& set) {
  std::vector<IndexBox> out;
  for (const auto& b : set.boxes()) {
    IndexBox ib;
    for (std::size_t i = 0; i < grid.dim(); ++i) {
      const double lo = std::ceil((b.lower[i] - grid.lower[i]) / grid.spacings[i] - 1e-9);
      const double hi = std::floor((b.upper[i] - grid.lower[i]) / grid.spacings[i] + 1e-9);
      const double top = static_cast<double>(grid.counts[i]) - 1.0;
      const double clo = std::max(lo, 0.0);
      const double chi = std::min(hi, top);
      if (chi < clo) {
        ib.empty = true;
        ib.lo.push_back(0);
        ib.hi.push_back(0);
      } else {
        ib.lo.push_back(static_cast<std::size_t>(clo));
        ib.hi.push_back(static_cast<std::size_t>(chi));
      }
    }
    if (!ib.empty) out.push_back(std::move(ib));
  }
  return out;
}

inline std::uint64_t point_count(const std::vector<IndexBox>& boxes) {
  std::uint64_t total = 0;
  for (const auto& b : boxes) {
    std::uint64_t n = 1;
    for (std::size_t i = 0; i < b.lo.size(); ++i) n *= b.hi[i] - b.lo[i] + 1;
    total += n;
  }
  return total;
}

/// Max of `values` (row-major over `counts`) over index boxes, visiting every
/// `stride`-th index per axis; −∞ when no point falls inside.
inline double box_sup(std::span<const double> values, const std::vector<std::size_t>& counts,
                      const std::vector<IndexBox>& boxes, std::size_t stride = 1) {
  double best = -std::numeric_limits<double>::infinity();
  const std::size_t d = counts.size();
  std::vector<std::size_t> idx(d);
  for (const auto& b : boxes) {
    std::vector<std::size_t> lo(d), hi(d);
    bool empty = false;
    for (std::size_t i = 0; i < d; ++i) {
      lo[i] = (b.lo[i] + stride - 1) / stride * stride;
      hi[i] = b.hi[i];
      if (lo[i] > hi[i]) empty = true;
    }
    if (empty) continue;
    idx = lo;
    while (true) {
      std::size_t off = 0;
      for (std::size_t i = 0; i + 1 < d; ++i) off = (off + idx[i]) * counts[i + 1];
      const double* row = values.data() + off;
      for (std::size_t j = lo[d - 1]; j <= hi[d - 1]; j += stride) best = std::max(best, row[j]);
      std::size_t i = d - 1;
      bool done = true;
      while (i-- > 0) {
        idx[i] += stride;
        if (idx[i] <= hi[i]) {
          done = false;
          break;
        }
        idx[i] = lo[i];
      }
      if (done) break;
    }
  }
  return best;
}

}  // namespace detail

/// Samples one field per replicate on the grid with the given spacings covering the union
/// of all query sets and records the grid sup over every query. For mixture_strong the
/// sups are those of η; W is returned separately so callers can combine them per ρ.
/// Replicate r uses the stream derive_seed(seed, r); the result does not depend on workers.
inline CrnSups crn_sups(const fields::CorrelationModel& model, const std::vector<geometry::JordanSet>& queries,
                        std::vector<double> spacings, std::uint64_t replicates, std::uint64_t seed, unsigned workers,
                        std::size_t budget = geometry::kDefaultGridBudget) {
  gext::detail::require(!queries.empty(), "crn_sups: at least one query set is required");
  const std::size_t d = model.dim();
  std::vector<double> lower(d, std::numeric_limits<double>::infinity());
  std::vector<double> upper(d, -std::numeric_limits<double>::infinity());
  for (const auto& q : queries) {
    const auto bb = q.bounding_box();
    for (std::size_t i = 0; i < d; ++i) {
      lower[i] = std::min(lower[i], bb.lower[i]);
      upper[i] = std::max(upper[i], bb.upper[i]);
    }
  }
  CrnSups out;
  out.grid = geometry::grid_with_spacings(lower, upper, std::move(spacings), budget);
  out.queries = queries.size();
  std::vector<std::vector<detail::IndexBox>> boxes;
  for (const auto& q : queries) {
    boxes.push_back(detail::index_boxes(out.grid, q));
    out.points.push_back(detail::point_count(boxes.back()));
  }

  const bool mixture = model.family == fields::Family::mixture_strong;
  std::optional<fields::SeparableSampler> separable;
  std::optional<fields::BlockSampler> blocks;
  if (mixture) {
    blocks.emplace(out.grid, model.alphas, model.bounded_dims, model.block_edge);
  } else {
    separable.emplace(out.grid, model.alphas);
  }

  const unsigned w = effective_workers(replicates, workers);
  std::vector<fields::Scratch> scratch(w);
  std::vector<std::vector<double>> buffers(w, std::vector<double>(out.grid.total_points()));
  out.sup.assign(replicates * out.queries, 0.0);
  if (mixture) out.W.assign(replicates, 0.0);

  parallel_for(replicates, w, [&](std::size_t r, unsigned worker) {
    NormalSource normals(derive_seed(seed, r));
    auto& values = buffers[worker];
    if (mixture) {
      out.W[r] = normals();
      blocks->sample(normals, scratch[worker], values);
    } else {
      separable->sample(normals, scratch[worker], values);
    }
    for (std::size_t k = 0; k < out.queries; ++k) {
      out.sup[r * out.queries + k] = detail::box_sup(values, out.grid.counts, boxes[k]);
    }
  });
  return out;
}

/// Finest spacing a·u^{−2/α_i} over the given thresholds.
inline std::vector<double> finest_spacings(std::span<const double> alphas, double a, double u_max) {
  std::vector<double> q;
  for (double al : alphas) q.push_back(a * std::pow(u_max, -2.0 / al));
  return q;
}

// ---------------------------------------------------------------------------
// Sup-CDF experiments

/// Side lengths m_i(u) of the observation window at threshold u.
using SideLengths = std::function<std::vector<double>(double u)>;

inline SideLengths plan_side_lengths(const SupExperimentConfig& config) {
  return [&config](double u) {
    return geometry::evaluate_m_i(config.plan, u, config.model.alphas, config.pickands_values).m;
  };
}

/// Limit value E exp(−∏x·λ(J)·exp(−R/(2γ)+√(R/γ)W)) for the configuration.
inline double theory_limit(const SupExperimentConfig& config, double gamma, double lambda) {
  limit_law::LimitLawParams params{config.x, lambda, config.model.R, gamma};
  return limit_law::limit_cdf(params, config.quadrature).value;
}

namespace detail {

struct UStudy {
  std::vector<double> u_values;
  std::vector<std::vector<double>> m;  // per u
  std::vector<double> rho;             // per u (0 for separable)
  CrnSups sups;
  bool truncated = false;
};

// Runs the CRN sampling for every u (dropping the largest thresholds while the grid
// exceeds the budget) with query set J^x_{m(u)} per u.
inline UStudy run_u_study(const SupExperimentConfig& config, const SideLengths& sides,
                          const std::vector<geometry::JordanSet>& base_sets) {
  std::vector<double> us = config.u_values;
  UStudy st;
  while (!us.empty()) {
    try {
      st.u_values = us;
      st.m.clear();
      st.rho.clear();
      std::vector<geometry::JordanSet> queries;
      for (double u : us) {
        auto m = sides(u);
        gext::detail::require(m.size() == config.dim(), "side lengths must have d entries");
        double rho = 0.0;
        if (config.model.family == fields::Family::mixture_strong) {
          double T = 0.0;
          for (std::size_t i = 0; i < m.size(); ++i) T = std::max(T, config.x[i] * m[i]);
          gext::detail::require(T > 1.0, "mixture horizon max_i x_i m_i(u) must exceed 1 at u = " + std::to_string(u));
          rho = config.model.R / std::log(T);
          gext::detail::require(rho < 1.0, "R/log T must be below 1 at u = " + std::to_string(u));
        }
        for (const auto& J : base_sets) queries.push_back(geometry::scale_set(J, config.x, m));
        st.m.push_back(std::move(m));
        st.rho.push_back(rho);
      }
      const double u_max = *std::max_element(us.begin(), us.end());
      st.sups = crn_sups(config.model, queries, finest_spacings(config.model.alphas, config.a, u_max),
                         config.replicates, config.seed, config.workers, config.grid_budget);
      return st;
    } catch (const BudgetError&) {
      if (us.size() == 1) throw;
      us.erase(std::max_element(us.begin(), us.end()));
      st.truncated = true;
    }
  }
  throw BudgetError("no threshold fits the grid budget");
}

inline double combined_sup(const UStudy& st, std::size_t r, std::size_t query, std::size_t ui) {
  const double s = st.sups.at(r, query);
  if (st.sups.W.empty()) return s;
  return std::sqrt(1.0 - st.rho[ui]) * s + std::sqrt(st.rho[ui]) * st.sups.W[r];
}

inline Record make_record(double u, std::uint64_t successes, std::uint64_t n, double theory, std::uint64_t points) {
  Record rec;
  rec.u = u;
  rec.successes = successes;
  rec.replicates = n;
  rec.empirical = static_cast<double>(successes) / static_cast<double>(n);
  std::tie(rec.ci_low, rec.ci_high) = wilson_interval(successes, n);
  rec.theory = theory;
  rec.grid_points = points;
  rec.extra["discrepancy"] = std::abs(rec.empirical - theory);
  return rec;
}

inline std::vector<Record> records_for_set(const SupExperimentConfig& config, const UStudy& st, std::size_t set_index,
                                           std::size_t set_count, double theory) {
  std::vector<Record> out;
  for (std::size_t ui = 0; ui < st.u_values.size(); ++ui) {
    const double u = st.u_values[ui];
    const std::size_t q = ui * set_count + set_index;
    std::uint64_t hits = 0;
    for (std::size_t r = 0; r < config.replicates; ++r) hits += combined_sup(st, r, q, ui) <= u ? 1 : 0;
    Record rec = make_record(u, hits, config.replicates, theory, st.sups.points[q]);
    if (!st.sups.W.empty()) rec.extra["rho"] = st.rho[ui];
    for (std::size_t i = 0; i < st.m[ui].size(); ++i) rec.extra["m_" + std::to_string(i + 1)] = st.m[ui][i];
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

/// Empirical P(sup over J^x_m ≤ u) per u with Wilson intervals and the limit value.
inline ExperimentReport estimate_sup_cdf(const SupExperimentConfig& config, const SideLengths& sides, double gamma) {
  config.validate();
  const auto st = detail::run_u_study(config, sides, {config.J});
  ExperimentReport rep;
  rep.experiment = "sup_cdf";
  rep.seed = config.seed;
  rep.records = detail::records_for_set(config, st, 0, 1, theory_limit(config, gamma, config.J.measure()));
  if (st.truncated) rep.flags.push_back("truncated");
  rep.summary["grid_points_sampled"] = static_cast<double>(st.sups.grid.total_points());
  return rep;
}

inline ExperimentReport estimate_sup_cdf(const SupExperimentConfig& config) {
  config.validate();
  return estimate_sup_cdf(config, plan_side_lengths(config), config.plan.gamma());
}

/// Same replicates restricted to several base sets; one report per set.
inline std::vector<ExperimentReport> estimate_sup_cdf_sets(const SupExperimentConfig& config,
                                                           const std::vector<geometry::JordanSet>& sets) {
  config.validate();
  detail::require(!sets.empty(), "estimate_sup_cdf_sets: at least one set is required");
  const auto st = detail::run_u_study(config, plan_side_lengths(config), sets);
  std::vector<ExperimentReport> out;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    ExperimentReport rep;
    rep.experiment = "sup_cdf";
    rep.seed = config.seed;
    rep.records = detail::records_for_set(config, st, s, sets.size(),
                                          theory_limit(config, config.plan.gamma(), sets[s].measure()));
    if (st.truncated) rep.flags.push_back("truncated");
    out.push_back(std::move(rep));
  }
  return out;
}

/// Discrepancy at the largest u must not exceed the discrepancy at the smallest u plus
/// the width of its confidence interval.
inline Verdict trend_verdict(const std::vector<Record>& records) {
  Verdict v;
  v.rule = "discrepancy(u_max) <= discrepancy(u_min) + ci_width(u_min)";
  if (records.size() < 2) {
    v.detail = "fewer than two thresholds";
    return v;
  }
  const Record& first = records.front();
  const Record& last = records.back();
  const double d0 = std::abs(first.empirical - first.theory);
  const double d1 = std::abs(last.empirical - last.theory);
  const double width = first.ci_high - first.ci_low;
  v.pass = d1 <= d0 + width;
  v.detail = "discrepancy " + std::to_string(d0) + " -> " + std::to_string(d1) + ", ci width " + std::to_string(width);
  return v;
}

inline ExperimentReport convergence_study(const SupExperimentConfig& config) {
  config.validate();
  detail::require(config.u_values.size() >= 3, "convergence_study: at least three thresholds are required");
  for (std::size_t i = 1; i < config.u_values.size(); ++i) {
    detail::require(config.u_values[i] > config.u_values[i - 1], "convergence_study: u_values must be increasing");
  }
  ExperimentReport rep = estimate_sup_cdf(config);
  rep.experiment = "convergence";
  rep.verdict = trend_verdict(rep.records);
  rep.summary["discrepancy_first"] = rep.records.front().extra.at("discrepancy");
  rep.summary["discrepancy_last"] = rep.records.back().extra.at("discrepancy");
  return rep;
}

// ---------------------------------------------------------------------------
// Tail check

struct TailCheckConfig {
  fields::CorrelationModel model;
  std::vector<double> pickands_values;
  std::vector<double> u_values{2.0, 2.5, 3.0};
  std::uint64_t replicates = 100000;
  std::uint64_t seed = 0;
  double a = 0.25;
  unsigned workers = 1;
};

/// Empirical P(sup over [0,1]^d > u) against ∏(H_{α_i} u^{2/α_i})·Ψ(u) = 1/m(u).
/// Records: empirical = exceedance fraction, theory = 1/m(u), extra.ratio = empirical/theory.
inline ExperimentReport piterbarg_tail_check(const TailCheckConfig& config) {
  config.model.validate();
  const std::size_t d = config.model.dim();
  detail::require(config.model.family == fields::Family::separable_stable, "tail check needs a separable model");
  detail::require(config.pickands_values.size() == d, "tail check: pickands_values must have d entries");
  detail::require(!config.u_values.empty(), "tail check: u_values must be non-empty");
  detail::require(config.replicates >= 100, "tail check: replicates must be at least 100");
  detail::require(config.a > 0.0, "tail check: a must be positive");
  for (std::size_t i = 1; i < config.u_values.size(); ++i) {
    detail::require(config.u_values[i] > config.u_values[i - 1], "tail check: u_values must be increasing");
  }
  const double u_max = config.u_values.back();
  const auto sups = crn_sups(config.model, {geometry::JordanSet::unit_cube(d)},
                             finest_spacings(config.model.alphas, config.a, u_max), config.replicates, config.seed,
                             config.workers);
  ExperimentReport rep;
  rep.experiment = "tail_check";
  rep.seed = config.seed;
  for (double u : config.u_values) {
    std::uint64_t exceed = 0;
    for (std::size_t r = 0; r < config.replicates; ++r) exceed += sups.at(r, 0) > u ? 1 : 0;
    const auto tail = limit_law::tail_constant_m(u, config.model.alphas, config.pickands_values);
    Record rec = detail::make_record(u, exceed, config.replicates, 1.0 / tail.m, sups.points[0]);
    rec.extra["ratio"] = rec.empirical / rec.theory;
    rec.extra["psi"] = tail.psi;
    rec.extra.erase("discrepancy");
    rep.records.push_back(std::move(rec));
  }
  if (rep.records.back().successes < 20) rep.flags.push_back("too_few_exceedances");
  Verdict v;
  v.rule = "ratio in [0.5, 2] at every u and |ratio(u_max) - 1| < |ratio(u_min) - 1|";
  bool band = true;
  for (const auto& r : rep.records) band = band && r.extra.at("ratio") >= 0.5 && r.extra.at("ratio") <= 2.0;
  const double e0 = std::abs(rep.records.front().extra.at("ratio") - 1.0);
  const double e1 = std::abs(rep.records.back().extra.at("ratio") - 1.0);
  v.pass = band && e1 < e0;
  v.detail = "|ratio-1| " + std::to_string(e0) + " -> " + std::to_string(e1) + (band ? "" : ", ratio outside [0.5, 2]");
  rep.verdict = v;
  return rep;
}

// ---------------------------------------------------------------------------
// Discretization gap

struct GapConfig {
  fields::CorrelationModel model;
  geometry::Box box = geometry::unit_box(2);
  double u = 3.0;
  std::vector<double> a_values{1.0, 0.5, 0.25};
  std::uint64_t replicates = 10000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

/// P(grid-sup ≤ u) − P(fine-grid-sup ≤ u) per a, the fine grid using a_ref = min(a)/4.
/// Grids are nested (a/a_ref must be an integer), so every gap is ≥ 0 replicate-wise.
/// Records: empirical = coarse-grid CDF, theory = fine-grid CDF, extra.gap, extra.a.
inline ExperimentReport discretization_gap(const GapConfig& config) {
  config.model.validate();
  detail::require(config.model.family == fields::Family::separable_stable, "discretization_gap needs a separable model");
  detail::require(config.box.dim() == config.model.dim(), "discretization_gap: box dimension differs from the model");
  detail::require(!config.a_values.empty(), "discretization_gap: a_values must be non-empty");
  for (std::size_t i = 1; i < config.a_values.size(); ++i) {
    detail::require(config.a_values[i] < config.a_values[i - 1], "discretization_gap: a_values must be decreasing");
  }
  const double a_ref = config.a_values.back() / 4.0;
  std::vector<std::size_t> strides;
  for (double a : config.a_values) {
    const double ratio = a / a_ref;
    detail::require(a > 0.0 && std::abs(ratio - std::round(ratio)) < 1e-9 * ratio,
                    "discretization_gap: every a must be an integer multiple of min(a)/4");
    strides.push_back(static_cast<std::size_t>(std::llround(ratio)));
  }
  const auto sampler_grid_spacings = finest_spacings(config.model.alphas, a_ref, config.u);
  const std::size_t d = config.model.dim();
  const auto grid = geometry::grid_with_spacings(config.box.lower, config.box.upper, sampler_grid_spacings);
  const fields::SeparableSampler sampler(grid, config.model.alphas);
  const std::vector<detail::IndexBox> all{detail::IndexBox{std::vector<std::size_t>(d, 0), [&] {
                                            std::vector<std::size_t> hi;
                                            for (std::size_t c : grid.counts) hi.push_back(c - 1);
                                            return hi;
                                          }(), false}};

  const std::size_t n_a = strides.size();
  std::vector<double> sups(config.replicates * (n_a + 1));
  const unsigned w = effective_workers(config.replicates, config.workers);
  std::vector<fields::Scratch> scratch(w);
  std::vector<std::vector<double>> buffers(w, std::vector<double>(grid.total_points()));
  parallel_for(config.replicates, w, [&](std::size_t r, unsigned worker) {
    NormalSource normals(derive_seed(config.seed, r));
    sampler.sample(normals, scratch[worker], buffers[worker]);
    for (std::size_t k = 0; k < n_a; ++k) {
      sups[r * (n_a + 1) + k] = detail::box_sup(buffers[worker], grid.counts, all, strides[k]);
    }
    sups[r * (n_a + 1) + n_a] = detail::box_sup(buffers[worker], grid.counts, all, 1);
  });

  std::uint64_t fine_hits = 0;
  for (std::size_t r = 0; r < config.replicates; ++r) fine_hits += sups[r * (n_a + 1) + n_a] <= config.u ? 1 : 0;
  const double fine = static_cast<double>(fine_hits) / static_cast<double>(config.replicates);

  ExperimentReport rep;
  rep.experiment = "discretization_gap";
  rep.seed = config.seed;
  for (std::size_t k = 0; k < n_a; ++k) {
    std::uint64_t hits = 0;
    for (std::size_t r = 0; r < config.replicates; ++r) hits += sups[r * (n_a + 1) + k] <= config.u ? 1 : 0;
    std::uint64_t points = 1;
    for (std::size_t c : grid.counts) points *= (c - 1) / strides[k] + 1;
    Record rec = detail::make_record(config.u, hits, config.replicates, fine, points);
    rec.extra.erase("discrepancy");
    rec.extra["a"] = config.a_values[k];
    rec.extra["gap"] = rec.empirical - fine;
    rep.records.push_back(std::move(rec));
  }
  rep.summary["a_ref"] = a_ref;
  rep.summary["fine_cdf"] = fine;
  Verdict v;
  v.rule = "gap nonincreasing as a decreases and gap >= 0";
  v.pass = true;
  for (std::size_t k = 0; k < rep.records.size(); ++k) {
    const double g = rep.records[k].extra.at("gap");
    v.pass = v.pass && g >= 0.0;
    if (k > 0) v.pass = v.pass && g <= rep.records[k - 1].extra.at("gap");
  }
  rep.verdict = v;
  return rep;
}

// ---------------------------------------------------------------------------
// Lattice sums of the correlation lemmas

struct LemmaSumValue {
  double value = 0.0;
  double max_term = 0.0;         // largest single weighted summand (before the prefactor)
  double prefactor = 0.0;
  std::uint64_t terms = 0;       // lattice points evaluated
  std::uint64_t stride = 1;      // > 1 when the outer zone was subsampled
  bool approximated = false;
};

inline std::vector<double> lattice_spacings(std::span<const double> alphas, double a, double u) {
  std::vector<double> q;
  for (double al : alphas) q.push_back(a * std::pow(u, -2.0 / al));
  return q;
}

/// (m/∏q_i)·Σ over jq ∈ (−ε,ε)^d \ {0} of
/// (1−r)·ρ·(1−(r+(1−r)ρ)²)^{−1/2}·exp(−u²/(1+r+(1−r)ρ)), ρ = R/log T.
inline LemmaSumValue lemma2_sum(const fields::CorrelationModel& model, std::span<const double> pickands_values,
                                double u, double a, double eps, double R, double T) {
  detail::require(u > 0.0 && a > 0.0 && eps > 0.0, "lemma2_sum: u, a and eps must be positive");
  detail::require(R >= 0.0, "lemma2_sum: R must be nonnegative");
  detail::require(T > 1.0, "lemma2_sum: T must exceed 1");
  const std::size_t d = model.dim();
  const double rho = R / std::log(T);
  const auto q = lattice_spacings(model.alphas, a, u);
  const auto tail = limit_law::tail_constant_m(u, model.alphas, pickands_values);

  std::vector<long> n(d);
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < d; ++i) {
    // |j|·q < ε strictly
    long k = static_cast<long>(std::ceil(eps / q[i])) - 1;
    while (static_cast<double>(k + 1) * q[i] < eps) ++k;
    n[i] = std::max(k, 0L);
    total *= static_cast<std::uint64_t>(2 * n[i] + 1);
  }
  if (total > (std::uint64_t{1} << 26)) throw BudgetError("lemma2_sum: lattice exceeds 2^26 points");

  LemmaSumValue out;
  double prod_q = 1.0;
  for (double v : q) prod_q *= v;
  out.prefactor = tail.m / prod_q;
  std::vector<long> j(d);
  for (std::size_t i = 0; i < d; ++i) j[i] = -n[i];
  std::vector<double> t(d);
  double sum = 0.0;
  while (true) {
    bool origin = true;
    for (std::size_t i = 0; i < d; ++i) {
      t[i] = static_cast<double>(j[i]) * q[i];
      origin = origin && j[i] == 0;
    }
    if (!origin) {
      const double r = fields::separable_correlation(model.alphas, t);
      const double x = r + (1.0 - r) * rho;
      const double arg = 1.0 - x * x;
      if (!(arg > 0.0)) {
        throw ValidationError("lemma2_sum: 1 - (r + (1 - r)R/log T)^2 <= 0 inside (-eps, eps)^d; eps is too large");
      }
      const double term = (1.0 - r) * rho / std::sqrt(arg) * std::exp(-u * u / (1.0 + x));
      sum += term;
      out.max_term = std::max(out.max_term, term);
      ++out.terms;
    }
    std::size_t i = d;
    while (i-- > 0) {
      if (++j[i] <= n[i]) break;
      j[i] = -n[i];
    }
    if (i == static_cast<std::size_t>(-1)) break;
  }
  out.value = out.prefactor * sum;
  return out;
}

/// ρ_T and ϱ_T at t: the near branch applies when every unbounded |t_i| < 1.
inline std::pair<double, double> lemma3_weights(double r, std::span<const double> t, std::size_t bounded_dims, double rho) {
  double far = 0.0;
  for (std::size_t i = bounded_dims; i < t.size(); ++i) far = std::max(far, std::abs(t[i]));
  if (far < 1.0) return {1.0, std::abs(r) + (1.0 - r) * rho};
  return {std::abs(r - rho), rho};
}

inline constexpr std::uint64_t kLemmaBudget = std::uint64_t{1} << 24;

/// (∏T_i/∏q_i)·Σ over jq ∈ ∏[−T_i,T_i] \ (−ε,ε)^d of ρ_T(jq)·exp(−u²/(1+max{|r|, ϱ_T})),
/// T = max T_i. Points with ‖jq‖∞ ≤ `inner_zone` are summed exactly; the rest of the
/// lattice is visited with a common stride s (j_i ≡ 0 mod s) and weighted by s^d when the
/// full lattice exceeds `budget`, which is flagged as approximated.
inline LemmaSumValue lemma3_sum(const fields::CorrelationModel& model, double u, double a, double eps,
                                std::span<const double> T_values, double R, double inner_zone = 2.0,
                                std::uint64_t budget = kLemmaBudget) {
  const std::size_t d = model.dim();
  detail::require(T_values.size() == d, "lemma3_sum: one T_i per coordinate is required");
  detail::require(u > 0.0 && a > 0.0 && eps > 0.0, "lemma3_sum: u, a and eps must be positive");
  detail::require(R >= 0.0, "lemma3_sum: R must be nonnegative");
  const double T = *std::max_element(T_values.begin(), T_values.end());
  detail::require(T > 1.0, "lemma3_sum: max T_i must exceed 1");
  for (double Ti : T_values) detail::require(Ti > 0.0, "lemma3_sum: T_i must be positive");
  const double rho = R / std::log(T);
  const auto q = lattice_spacings(model.alphas, a, u);

  std::vector<long> n(d), n_in(d);
  double full = 1.0;
  double prefactor = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    n[i] = static_cast<long>(std::floor(T_values[i] / q[i] + 1e-9));
    n_in[i] = std::min(n[i], static_cast<long>(std::floor(inner_zone / q[i] + 1e-9)));
    full *= static_cast<double>(2 * n[i] + 1);
    prefactor *= T_values[i] / q[i];
  }

  LemmaSumValue out;
  out.prefactor = prefactor;
  std::vector<double> t(d);
  auto term_at = [&](const std::vector<long>& j) {
    for (std::size_t i = 0; i < d; ++i) t[i] = static_cast<double>(j[i]) * q[i];
    const double r = fields::separable_correlation(model.alphas, t);
    const auto [w, varrho] = lemma3_weights(r, t, model.bounded_dims, rho);
    return w * std::exp(-u * u / (1.0 + std::max(std::abs(r), varrho)));
  };
  auto excluded = [&](const std::vector<long>& j) {
    for (std::size_t i = 0; i < d; ++i) {
      if (!(std::abs(static_cast<double>(j[i]) * q[i]) < eps)) return false;
    }
    return true;
  };
  auto in_zone = [&](const std::vector<long>& j) {
    for (std::size_t i = 0; i < d; ++i) {
      if (std::abs(j[i]) > n_in[i]) return false;
    }
    return true;
  };
  // Visits j with j_i ∈ [−lim_i, lim_i], j_i ≡ 0 mod step.
  auto visit = [&](const std::vector<long>& lim, long step, auto&& fn) {
    std::vector<long> j(d);
    for (std::size_t i = 0; i < d; ++i) j[i] = -(lim[i] / step) * step;
    while (true) {
      fn(j);
      std::size_t i = d;
      while (i-- > 0) {
        j[i] += step;
        if (j[i] <= lim[i]) break;
        j[i] = -(lim[i] / step) * step;
      }
      if (i == static_cast<std::size_t>(-1)) break;
    }
  };

  double inner_count = 1.0;
  for (std::size_t i = 0; i < d; ++i) inner_count *= static_cast<double>(2 * n_in[i] + 1);
  if (inner_count > static_cast<double>(budget)) throw BudgetError("lemma3_sum: inner zone exceeds the lattice budget");

  long stride = 1;
  while (true) {
    double count = 1.0;
    for (std::size_t i = 0; i < d; ++i) count *= static_cast<double>(2 * (n[i] / stride) + 1);
    if (count <= static_cast<double>(budget)) break;
    ++stride;
  }
  out.stride = static_cast<std::uint64_t>(stride);
  out.approximated = stride > 1;
  (void)full;

  double sum = 0.0;
  visit(n_in, 1, [&](const std::vector<long>& j) {
    if (excluded(j)) return;
    const double term = term_at(j);
    sum += term;
    out.max_term = std::max(out.max_term, term);
    ++out.terms;
  });
  const double weight = std::pow(static_cast<double>(stride), static_cast<double>(d));
  visit(n, stride, [&](const std::vector<long>& j) {
    if (in_zone(j) || excluded(j)) return;
    const double term = term_at(j);
    sum += weight * term;
    out.max_term = std::max(out.max_term, term);
    ++out.terms;
  });
  out.value = prefactor * sum;
  return out;
}

struct LemmaSumReport {
  std::string lemma;  // "lemma2" or "lemma3"
  std::vector<double> u_values;
  std::vector<LemmaSumValue> values;
  std::vector<double> T_values;  // T (lemma2) or max T_i (lemma3) per u
  double eps = 0.0;
  double a = 0.0;
  double R = 0.0;
  Verdict verdict;
};

struct LemmaSumConfig {
  fields::CorrelationModel model = fields::CorrelationModel::separable({2.0, 2.0});
  geometry::ScalingPlan plan = geometry::ScalingPlan::symmetric(2);
  std::vector<double> pickands_values;
  std::vector<double> u_values{3.0, 4.0, 5.0};
  double a = 0.25;
  double eps = 0.25;
  double R_lemma2 = 0.5;
  double R_lemma3 = 0.0;
  std::vector<double> tau;  // T_i = τ_i m_i(u); defaults to 1
};

inline Verdict strictly_decreasing_verdict(const std::vector<LemmaSumValue>& values) {
  Verdict v;
  v.rule = "sum strictly decreasing across u";
  v.pass = values.size() >= 2;
  std::string detail;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) v.pass = v.pass && values[i].value < values[i - 1].value;
    detail += (i ? " -> " : "") + std::to_string(values[i].value);
  }
  v.detail = detail;
  return v;
}

/// Lemma 2 with T = exp(γu²) (γ = max_i γ_i of the plan) and Lemma 3 with T_i = τ_i m_i(u).
inline std::pair<LemmaSumReport, LemmaSumReport> lemma_sums(const LemmaSumConfig& config) {
  config.model.validate();
  config.plan.validate();
  const std::size_t d = config.model.dim();
  detail::require(config.plan.d == d, "lemma_sums: plan dimension differs from the model");
  detail::require(config.pickands_values.size() == d, "lemma_sums: pickands_values must have d entries");
  detail::require(!config.u_values.empty(), "lemma_sums: u_values must be non-empty");
  std::vector<double> tau = config.tau.empty() ? std::vector<double>(d, 1.0) : config.tau;
  detail::require(tau.size() == d, "lemma_sums: tau must have d entries");

  LemmaSumReport l2{"lemma2", config.u_values, {}, {}, config.eps, config.a, config.R_lemma2, {}};
  LemmaSumReport l3{"lemma3", config.u_values, {}, {}, config.eps, config.a, config.R_lemma3, {}};
  const double gamma = config.plan.gamma();
  for (double u : config.u_values) {
    const double T2 = std::exp(gamma * u * u);
    l2.T_values.push_back(T2);
    l2.values.push_back(lemma2_sum(config.model, config.pickands_values, u, config.a, config.eps, config.R_lemma2, T2));
    const auto m = geometry::evaluate_m_i(config.plan, u, config.model.alphas, config.pickands_values).m;
    std::vector<double> Ti(d);
    for (std::size_t i = 0; i < d; ++i) Ti[i] = tau[i] * m[i];
    l3.T_values.push_back(*std::max_element(Ti.begin(), Ti.end()));
    l3.values.push_back(lemma3_sum(config.model, u, config.a, config.eps, Ti, config.R_lemma3));
  }
  l2.verdict = strictly_decreasing_verdict(l2.values);
  l3.verdict = strictly_decreasing_verdict(l3.values);
  return {l2, l3};
}

// ---------------------------------------------------------------------------
// Corollary experiments

enum class CorollaryKind { szybko, wolno };

inline std::string to_string(CorollaryKind k) { return k == CorollaryKind::szybko ? "szybko" : "wolno"; }

inline CorollaryKind corollary_kind_from_string(const std::string& s) {
  if (s == "szybko") return CorollaryKind::szybko;
  if (s == "wolno") return CorollaryKind::wolno;
  throw ValidationError("unknown corollary kind '" + s + "' (expected szybko or wolno)");
}

struct CorollaryConfig {
  CorollaryKind kind = CorollaryKind::szybko;
  double kappa = 0.125;  // szybko: m̄_1 = exp(−κu²)
  SupExperimentConfig base;  // model, J, x, u_values, a, replicates, seed, pickands, workers
};

/// Window side lengths of the corollary regimes:
///  szybko: m̄_1 = exp(−κu²), m̄_i = m_i(u) of the base plan for 1 < i < d and the last
///          coordinate closes the product to m(u);
///  wolno:  m̄_1 = u^{−2/α_1}·log u (the conjectured rate times a diverging factor),
///          m_1 ≡ 1 in the base plan (k = 1, M_1 = 1), last coordinate divided by m̄_1.
inline std::vector<double> corollary_side_lengths(const CorollaryConfig& config, double u) {
  const auto& base = config.base;
  const std::size_t d = base.dim();
  const auto tail = limit_law::tail_constant_m(u, base.model.alphas, base.pickands_values);
  std::vector<double> m(d);
  if (config.kind == CorollaryKind::szybko) {
    const auto plan_m = geometry::evaluate_m_i(base.plan, u, base.model.alphas, base.pickands_values).log_m;
    double partial = -config.kappa * u * u;
    m[0] = std::exp(partial);
    for (std::size_t i = 1; i + 1 < d; ++i) {
      m[i] = std::exp(plan_m[i]);
      partial += plan_m[i];
    }
    m[d - 1] = std::exp(tail.log_m - partial);
  } else {
    const auto plan_m = geometry::evaluate_m_i(base.plan, u, base.model.alphas, base.pickands_values).log_m;
    const double log_bar1 = -2.0 / base.model.alphas[0] * std::log(u) + std::log(std::log(u));
    m[0] = std::exp(log_bar1);
    for (std::size_t i = 1; i + 1 < d; ++i) m[i] = std::exp(plan_m[i]);
    m[d - 1] = std::exp(plan_m[d - 1] - log_bar1);
  }
  return m;
}

inline ExperimentReport corollary_experiments(const CorollaryConfig& config) {
  const auto& base = config.base;
  base.validate();
  detail::require(base.dim() >= 2, "corollary experiments need d >= 2");
  if (config.kind == CorollaryKind::szybko) {
    detail::require(config.kappa >= 0.0 && std::isfinite(config.kappa), "szybko: kappa must be nonnegative");
  } else {
    detail::require(base.plan.k >= 1 && base.plan.M[0] == 1.0,
                    "wolno: the base plan must keep the first coordinate bounded with M_1 = 1");
    for (double u : base.u_values) detail::require(u > 1.0, "wolno: thresholds must exceed 1");
  }
  for (std::size_t i = 1; i < base.u_values.size(); ++i) {
    detail::require(base.u_values[i] > base.u_values[i - 1], "corollary: u_values must be increasing");
  }
  ExperimentReport rep =
      estimate_sup_cdf(base, [&](double u) { return corollary_side_lengths(config, u); }, base.plan.gamma());
  rep.experiment = "corollary_" + to_string(config.kind);
  rep.summary["kappa"] = config.kind == CorollaryKind::szybko ? config.kappa : 0.0;
  if (config.kind == CorollaryKind::szybko && config.kappa > 0.0) {
    Verdict v;
    v.rule = "empirical_cdf strictly decreasing across u (trend to 0)";
    v.pass = rep.records.size() >= 2;
    for (std::size_t i = 1; i < rep.records.size(); ++i) {
      v.pass = v.pass && rep.records[i].empirical < rep.records[i - 1].empirical;
    }
    v.detail = "empirical " + std::to_string(rep.records.front().empirical) + " -> " +
               std::to_string(rep.records.back().empirical);
    for (auto& r : rep.records) r.theory = 0.0;
    for (auto& r : rep.records) r.extra["discrepancy"] = r.empirical;
    rep.verdict = v;
  } else {
    rep.verdict = trend_verdict(rep.records);
    if (config.kind == CorollaryKind::wolno) rep.flags.push_back("conjecture_conditional");
  }
  return rep;
}

}  // namespace gext::montecarlo
