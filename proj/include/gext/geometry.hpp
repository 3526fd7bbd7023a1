#pragma once

// Jordan sets as finite unions of boxes, the scaling plan behind the side lengths
// m_i(u), the observation grids q_i = a·u^{-2/α_i} and inner/outer box approximations
// of arbitrary regions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gext/errors.hpp"
#include "gext/limit_law.hpp"

namespace gext::geometry {

/// Closed axis-aligned box [lower, upper].
struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  std::size_t dim() const { return lower.size(); }

  double volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < lower.size(); ++i) v *= upper[i] - lower[i];
    return v;
  }

  bool contains(std::span<const double> point) const {
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (point[i] < lower[i] || point[i] > upper[i]) return false;
    }
    return true;
  }

  bool contains(const Box& other) const {
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (other.lower[i] < lower[i] || other.upper[i] > upper[i]) return false;
    }
    return true;
  }

  /// True when the interiors intersect.
  bool overlaps(const Box& other) const {
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (std::max(lower[i], other.lower[i]) >= std::min(upper[i], other.upper[i])) return false;
    }
    return true;
  }

  bool operator==(const Box&) const = default;
};

inline Box unit_box(std::size_t d) { return Box{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }

/// Finite union of pairwise interior-disjoint closed boxes with positive measure.
class JordanSet {
 public:
  JordanSet() = default;

  /// Validates dimensions, nondegenerate edges and pairwise interior-disjointness.
  explicit JordanSet(std::vector<Box> boxes) : boxes_(std::move(boxes)) {
    detail::require(!boxes_.empty(), "JordanSet: at least one box is required");
    const std::size_t d = boxes_.front().dim();
    detail::require(d > 0, "JordanSet: boxes must have dimension >= 1");
    for (const Box& b : boxes_) {
      detail::require(b.lower.size() == d && b.upper.size() == d, "JordanSet: boxes differ in dimension");
      for (std::size_t i = 0; i < d; ++i) {
        detail::require(std::isfinite(b.lower[i]) && std::isfinite(b.upper[i]), "JordanSet: non-finite corner");
        detail::require(b.upper[i] > b.lower[i], "JordanSet: degenerate box (zero or negative edge)");
      }
    }
    for (std::size_t a = 0; a < boxes_.size(); ++a) {
      for (std::size_t b = a + 1; b < boxes_.size(); ++b) {
        detail::require(!boxes_[a].overlaps(boxes_[b]),
                        "JordanSet: boxes " + std::to_string(a) + " and " + std::to_string(b) + " overlap");
      }
    }
  }

  /// For box lists that are disjoint by construction (partition cells, scaled sets).
  static JordanSet from_disjoint(std::vector<Box> boxes) {
    JordanSet s;
    s.boxes_ = std::move(boxes);
    return s;
  }

  static JordanSet unit_cube(std::size_t d) { return JordanSet({unit_box(d)}); }

  const std::vector<Box>& boxes() const { return boxes_; }
  std::size_t dim() const { return boxes_.empty() ? 0 : boxes_.front().dim(); }

  /// λ(J), the exact sum of box volumes.
  double measure() const {
    double total = 0.0;
    for (const Box& b : boxes_) total += b.volume();
    return total;
  }

  Box bounding_box() const {
    Box bb{boxes_.front().lower, boxes_.front().upper};
    for (const Box& b : boxes_) {
      for (std::size_t i = 0; i < b.dim(); ++i) {
        bb.lower[i] = std::min(bb.lower[i], b.lower[i]);
        bb.upper[i] = std::max(bb.upper[i], b.upper[i]);
      }
    }
    return bb;
  }

  bool contains(std::span<const double> point) const {
    return std::any_of(boxes_.begin(), boxes_.end(), [&](const Box& b) { return b.contains(point); });
  }

  bool operator==(const JordanSet&) const = default;

 private:
  std::vector<Box> boxes_;
};

inline double measure(const JordanSet& J) { return J.measure(); }

/// J^x_m: every corner multiplied coordinate-wise by x_i·m_i.
inline JordanSet scale_set(const JordanSet& J, std::span<const double> x, std::span<const double> m) {
  const std::size_t d = J.dim();
  detail::require(x.size() == d && m.size() == d, "scale_set: x and m must match the set dimension");
  std::vector<Box> out;
  out.reserve(J.boxes().size());
  for (const Box& b : J.boxes()) {
    Box s = b;
    for (std::size_t i = 0; i < d; ++i) {
      detail::require(x[i] > 0.0 && m[i] > 0.0, "scale_set: scale factors must be positive");
      const double f = x[i] * m[i];
      s.lower[i] *= f;
      s.upper[i] *= f;
    }
    out.push_back(std::move(s));
  }
  return JordanSet::from_disjoint(std::move(out));
}

// ---------------------------------------------------------------------------
// Scaling plan

/// Slowly varying factor c_i(u) with log c_i(u) = o(u²).
struct SlowFactor {
  enum class Kind { constant, power, log_power };
  Kind kind = Kind::constant;
  double param = 1.0;  // κ for constant, p for u^p and (log u)^p

  static SlowFactor constant(double kappa) { return {Kind::constant, kappa}; }
  static SlowFactor power(double p) { return {Kind::power, p}; }
  static SlowFactor log_power(double p) { return {Kind::log_power, p}; }

  void validate() const {
    detail::require(std::isfinite(param), "SlowFactor: parameter must be finite");
    if (kind == Kind::constant) detail::require(param > 0.0, "SlowFactor: constant factor must be positive");
  }

  double log_value(double u) const {
    switch (kind) {
      case Kind::constant:
        return std::log(param);
      case Kind::power:
        return param * std::log(u);
      case Kind::log_power:
        detail::require(u > 1.0, "SlowFactor: (log u)^p needs u > 1");
        return param * std::log(std::log(u));
    }
    return 0.0;
  }

  bool operator==(const SlowFactor&) const = default;
};

inline std::string to_string(SlowFactor::Kind kind) {
  switch (kind) {
    case SlowFactor::Kind::constant: return "constant";
    case SlowFactor::Kind::power: return "power";
    case SlowFactor::Kind::log_power: return "log_power";
  }
  return "constant";
}

inline SlowFactor::Kind slow_factor_kind_from_string(const std::string& s) {
  if (s == "constant") return SlowFactor::Kind::constant;
  if (s == "power") return SlowFactor::Kind::power;
  if (s == "log_power") return SlowFactor::Kind::log_power;
  throw ValidationError("unknown slow factor kind '" + s + "'");
}

/// (k, M_i, γ_i, c_i): bounded coordinates 1..k tend to M_i, the others grow like
/// exp(γ_i u²)·c_i(u). The last coordinate absorbs the remainder so ∏ m_i(u) = m(u).
struct ScalingPlan {
  std::size_t d = 1;
  std::size_t k = 0;
  std::vector<double> M;             // k entries
  std::vector<double> gammas{0.5};   // d − k entries, for coordinates k+1..d
  std::vector<SlowFactor> factors{SlowFactor{}};
  double growth_tolerance = 0.25;    // allowed |empirical γ_d − γ_d| before flagging

  void validate() const {
    detail::require(d >= 1, "ScalingPlan: d must be at least 1");
    detail::require(k < d, "ScalingPlan: k must lie in [0, d)");
    detail::require(M.size() == k, "ScalingPlan: M must have k entries");
    detail::require(gammas.size() == d - k, "ScalingPlan: gammas must have d - k entries");
    detail::require(factors.size() == d - k, "ScalingPlan: c_descriptors must have d - k entries");
    for (double Mi : M) detail::require(Mi > 0.0 && std::isfinite(Mi), "ScalingPlan: every M_i must be positive");
    double sum = 0.0;
    for (double g : gammas) {
      detail::require(g >= 0.0 && g <= 0.5, "ScalingPlan: every gamma_i must lie in [0, 1/2]");
      sum += g;
    }
    if (std::abs(sum - 0.5) > 1e-12) {
      throw ValidationError("ScalingPlan: gammas must sum to 1/2 over the unbounded coordinates (got " +
                            std::to_string(sum) + ")");
    }
    for (const auto& f : factors) f.validate();
    detail::require(growth_tolerance > 0.0, "ScalingPlan: growth_tolerance must be positive");
  }

  /// γ = max_i γ_i.
  double gamma() const { return *std::max_element(gammas.begin(), gammas.end()); }

  /// Plan whose last γ is set to 1/2 − Σ(others).
  static ScalingPlan closing_last(std::size_t d, std::size_t k, std::vector<double> M, std::vector<double> gammas,
                                  std::vector<SlowFactor> factors) {
    detail::require(!gammas.empty(), "ScalingPlan: gammas must be non-empty");
    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < gammas.size(); ++i) partial += gammas[i];
    gammas.back() = 0.5 - partial;
    ScalingPlan plan{d, k, std::move(M), std::move(gammas), std::move(factors)};
    plan.validate();
    return plan;
  }

  /// k = 0 and γ_i = 1/(2d), c_i ≡ 1.
  static ScalingPlan symmetric(std::size_t d) {
    ScalingPlan plan{d, 0, {}, std::vector<double>(d, 0.5 / static_cast<double>(d)),
                     std::vector<SlowFactor>(d, SlowFactor{})};
    plan.validate();
    return plan;
  }

  bool operator==(const ScalingPlan&) const = default;
};

struct ScaleEvaluation {
  std::vector<double> m;       // m_i(u)
  std::vector<double> log_m;   // log m_i(u)
  double log_m_total = 0.0;    // log m(u)
  double empirical_gamma_last = 0.0;  // (log m_d − log c_d(u)) / u²
  bool growth_mismatch = false;
};

/// m_i(u) for every coordinate. Bounded coordinates return M_i; the last one is
/// m(u)/∏_{i<d} m_i(u) and is checked against its declared (γ_d, c_d).
inline ScaleEvaluation evaluate_m_i(const ScalingPlan& plan, double u, std::span<const double> alphas,
                                    std::span<const double> pickands_values) {
  plan.validate();
  detail::require(alphas.size() == plan.d, "evaluate_m_i: alphas must have d entries");
  const auto tail = limit_law::tail_constant_m(u, alphas, pickands_values);

  ScaleEvaluation out;
  out.log_m.resize(plan.d);
  out.log_m_total = tail.log_m;
  double partial = 0.0;
  for (std::size_t i = 0; i + 1 < plan.d; ++i) {
    if (i < plan.k) {
      out.log_m[i] = std::log(plan.M[i]);
    } else {
      const std::size_t j = i - plan.k;
      out.log_m[i] = plan.gammas[j] * u * u + plan.factors[j].log_value(u);
    }
    partial += out.log_m[i];
  }
  out.log_m.back() = tail.log_m - partial;
  out.m.resize(plan.d);
  for (std::size_t i = 0; i < plan.d; ++i) out.m[i] = std::exp(out.log_m[i]);

  out.empirical_gamma_last = (out.log_m.back() - plan.factors.back().log_value(u)) / (u * u);
  out.growth_mismatch = std::abs(out.empirical_gamma_last - plan.gammas.back()) > plan.growth_tolerance;
  return out;
}

// ---------------------------------------------------------------------------
// Observation grids

/// Regular lattice lower_i + j·q_i, j = 0..counts_i − 1.
struct GridSpec {
  double a = 0.25;
  double u = 1.0;
  std::vector<double> spacings;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::size_t> counts;

  std::size_t dim() const { return spacings.size(); }

  std::size_t total_points() const {
    std::size_t n = 1;
    for (std::size_t c : counts) n *= c;
    return n;
  }

  double coordinate(std::size_t axis, std::size_t j) const {
    return lower[axis] + static_cast<double>(j) * spacings[axis];
  }

  bool operator==(const GridSpec&) const = default;
};

inline constexpr std::size_t kDefaultGridBudget = std::size_t{1} << 26;

/// ⌊L/q⌋ + 1 with a relative slack so that an endpoint hit up to rounding is kept.
inline std::size_t points_on_extent(double length, double spacing) {
  return static_cast<std::size_t>(std::floor(length / spacing * (1.0 + 1e-12) + 1e-9)) + 1;
}

/// Lattice with explicit spacings covering [lower_i, upper_i].
inline GridSpec grid_with_spacings(std::vector<double> lower, std::vector<double> upper, std::vector<double> spacings,
                                   std::size_t budget = kDefaultGridBudget) {
  const std::size_t d = spacings.size();
  detail::require(lower.size() == d && upper.size() == d, "grid: extent dimension mismatch");
  GridSpec g;
  g.counts.resize(d);
  double total = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    detail::require(spacings[i] > 0.0 && std::isfinite(spacings[i]), "grid: spacings must be positive");
    detail::require(upper[i] >= lower[i], "grid: extents must be ordered");
    const double count = std::floor((upper[i] - lower[i]) / spacings[i] * (1.0 + 1e-12) + 1e-9) + 1.0;
    total *= count;
    if (total > static_cast<double>(budget)) {
      throw BudgetError("grid exceeds the point budget of " + std::to_string(budget) + " points");
    }
    g.counts[i] = static_cast<std::size_t>(count);
  }
  g.spacings = std::move(spacings);
  g.lower = std::move(lower);
  g.upper = std::move(upper);
  return g;
}

/// q_i = a·u^{−2/α_i} over the extents [lo_i, hi_i].
inline GridSpec build_grid(const std::vector<std::pair<double, double>>& extents, std::span<const double> alphas,
                           double a, double u, std::size_t budget = kDefaultGridBudget) {
  detail::require(a > 0.0 && u > 0.0, "build_grid: a and u must be positive");
  detail::require(extents.size() == alphas.size(), "build_grid: one extent per alpha is required");
  std::vector<double> lower, upper, spacings;
  for (std::size_t i = 0; i < extents.size(); ++i) {
    detail::require(alphas[i] > 0.0 && alphas[i] <= 2.0, "build_grid: alphas must lie in (0, 2]");
    lower.push_back(extents[i].first);
    upper.push_back(extents[i].second);
    spacings.push_back(a * std::pow(u, -2.0 / alphas[i]));
  }
  GridSpec g = grid_with_spacings(std::move(lower), std::move(upper), std::move(spacings), budget);
  g.a = a;
  g.u = u;
  return g;
}

// ---------------------------------------------------------------------------
// Inner/outer approximation

enum class CellClass { inside, outside, boundary };

/// A region given by a bounding box and a cell classifier.
struct Region {
  Box bounds;
  std::function<CellClass(const Box&)> classify;
  bool exact = true;  // false when the classifier only samples points

  /// Classifies cells by their corners and centre; exact for convex regions only on the
  /// inside test, so the outer set may miss thin features.
  static Region from_predicate(Box bounds, std::function<bool(std::span<const double>)> contains) {
    Region r;
    r.bounds = std::move(bounds);
    r.exact = false;
    r.classify = [contains = std::move(contains)](const Box& cell) {
      const std::size_t d = cell.dim();
      std::vector<double> p(d);
      std::size_t in = 0;
      const std::size_t corners = std::size_t{1} << d;
      for (std::size_t mask = 0; mask < corners; ++mask) {
        for (std::size_t i = 0; i < d; ++i) p[i] = (mask >> i & 1) ? cell.upper[i] : cell.lower[i];
        in += contains(p) ? 1 : 0;
      }
      for (std::size_t i = 0; i < d; ++i) p[i] = 0.5 * (cell.lower[i] + cell.upper[i]);
      in += contains(p) ? 1 : 0;
      if (in == corners + 1) return CellClass::inside;
      if (in == 0) return CellClass::outside;
      return CellClass::boundary;
    };
    return r;
  }
};

/// Closed Euclidean ball, with an exact cell classifier.
inline Region ball_region(std::vector<double> centre, double radius) {
  detail::require(radius > 0.0, "ball_region: radius must be positive");
  Region r;
  const std::size_t d = centre.size();
  r.bounds.lower.resize(d);
  r.bounds.upper.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    r.bounds.lower[i] = centre[i] - radius;
    r.bounds.upper[i] = centre[i] + radius;
  }
  r.classify = [centre = std::move(centre), radius](const Box& cell) {
    double near = 0.0;
    double far = 0.0;
    for (std::size_t i = 0; i < centre.size(); ++i) {
      const double lo = cell.lower[i] - centre[i];
      const double hi = cell.upper[i] - centre[i];
      const double n = (lo > 0.0) ? lo : (hi < 0.0 ? -hi : 0.0);
      const double f = std::max(std::abs(lo), std::abs(hi));
      near += n * n;
      far += f * f;
    }
    if (far <= radius * radius) return CellClass::inside;
    if (near >= radius * radius) return CellClass::outside;
    return CellClass::boundary;
  };
  return r;
}

/// A box union as a region; cells inside a single box count as inside.
inline Region box_union_region(const JordanSet& J) {
  Region r;
  r.bounds = J.bounding_box();
  r.classify = [J](const Box& cell) {
    bool touches = false;
    for (const Box& b : J.boxes()) {
      if (b.contains(cell)) return CellClass::inside;
      touches = touches || b.overlaps(cell);
    }
    return touches ? CellClass::boundary : CellClass::outside;
  };
  return r;
}

struct InnerOuter {
  std::optional<JordanSet> inner;  // empty when no cell is inside yet
  JordanSet outer;
  double inner_measure = 0.0;
  double outer_measure = 0.0;
  double gap = 0.0;
  int level = 0;                   // cells have edge (bounds edge)/2^level
  std::size_t cells_classified = 0;
  bool exact = true;
};

inline constexpr std::size_t kDefaultCellBudget = std::size_t{1} << 24;

/// L ⊆ target ⊆ U on the dyadic partition of the bounding box, refined until
/// λ(U) − λ(L) ≤ eps. Only boundary cells are split, which yields the same L and U as
/// the uniform partition of the final level.
inline InnerOuter inner_outer_approx(const Region& target, double eps, std::size_t cell_budget = kDefaultCellBudget) {
  detail::require(eps > 0.0, "inner_outer_approx: eps must be positive");
  detail::require(target.bounds.dim() > 0 && target.bounds.volume() > 0.0, "inner_outer_approx: empty bounds");
  const std::size_t d = target.bounds.dim();

  std::vector<Box> inside;
  std::vector<Box> boundary{target.bounds};
  double inside_measure = 0.0;
  InnerOuter out;
  out.exact = target.exact;
  {
    const CellClass c = target.classify(target.bounds);
    out.cells_classified = 1;
    if (c == CellClass::inside) {
      inside = std::move(boundary);
      boundary.clear();
      inside_measure = target.bounds.volume();
    } else if (c == CellClass::outside) {
      boundary.clear();
    }
  }

  auto boundary_measure = [&] {
    double s = 0.0;
    for (const Box& b : boundary) s += b.volume();
    return s;
  };

  int level = 0;
  while (boundary_measure() > eps) {
    const std::size_t children = std::size_t{1} << d;
    if (out.cells_classified + boundary.size() * children > cell_budget) {
      throw BudgetError("inner_outer_approx: cell budget exhausted at level " + std::to_string(level) +
                        " (eps too small or boundary too rough)");
    }
    std::vector<Box> next;
    for (const Box& cell : boundary) {
      for (std::size_t mask = 0; mask < children; ++mask) {
        Box child = cell;
        for (std::size_t i = 0; i < d; ++i) {
          const double mid = 0.5 * (cell.lower[i] + cell.upper[i]);
          if (mask >> i & 1) {
            child.lower[i] = mid;
          } else {
            child.upper[i] = mid;
          }
        }
        ++out.cells_classified;
        switch (target.classify(child)) {
          case CellClass::inside:
            inside_measure += child.volume();
            inside.push_back(std::move(child));
            break;
          case CellClass::boundary:
            next.push_back(std::move(child));
            break;
          case CellClass::outside:
            break;
        }
      }
    }
    boundary = std::move(next);
    ++level;
  }

  out.level = level;
  out.inner_measure = inside_measure;
  out.gap = boundary_measure();
  out.outer_measure = inside_measure + out.gap;
  std::vector<Box> outer_boxes = inside;
  outer_boxes.insert(outer_boxes.end(), boundary.begin(), boundary.end());
  if (!inside.empty()) out.inner = JordanSet::from_disjoint(std::move(inside));
  out.outer = JordanSet::from_disjoint(std::move(outer_boxes));
  return out;
}

}  // namespace gext::geometry
