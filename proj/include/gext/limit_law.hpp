#pragma once

// Limiting law of the supremum over scaled Jordan sets, standard normal tail
// utilities and the tail scale m(u).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gext/errors.hpp"
#include "gext/rng.hpp"

namespace gext::limit_law {

namespace detail {

// erfc(x)·exp(x²) by the Laplace continued fraction, modified Lentz evaluation.
// Converges quickly for x ≳ 3; only used for x > 6/√2.
inline double erfcx_continued_fraction(double x) {
  constexpr double tiny = 1e-300;
  double f = x;
  double c = x;
  double d = 0.0;
  for (int j = 1; j < 2000; ++j) {
    const double a = 0.5 * j;
    d = x + a * d;
    if (d == 0.0) d = tiny;
    c = x + a / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / (f * std::sqrt(std::numbers::pi));
}

constexpr double kScaledTailThreshold = 6.0;

}  // namespace detail

/// Ψ(u) = P(W > u) for a standard normal W.
inline double normal_tail(double u) {
  if (std::isnan(u)) throw ValidationError("normal_tail: u is NaN");
  if (u > detail::kScaledTailThreshold) {
    if (std::isinf(u)) return 0.0;
    return 0.5 * detail::erfcx_continued_fraction(u / std::numbers::sqrt2) * std::exp(-0.5 * u * u);
  }
  return 0.5 * std::erfc(u / std::numbers::sqrt2);
}

/// log Ψ(u); finite for every finite u, including the deep tail where Ψ underflows.
inline double log_normal_tail(double u) {
  if (u > detail::kScaledTailThreshold) {
    return std::log(0.5 * detail::erfcx_continued_fraction(u / std::numbers::sqrt2)) - 0.5 * u * u;
  }
  return std::log(normal_tail(u));
}

/// Φ(u) = P(W ≤ u).
inline double normal_cdf(double u) { return normal_tail(-u); }

/// Nodes and weights for E f(W), W ~ N(0,1): E f(W) ≈ Σ weights[i]·f(nodes[i]).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Builds the n-point rule by Golub–Welsch, then polishes nodes with Newton steps on
/// the orthonormal Hermite recurrence so that tiny tail weights keep full relative accuracy.
inline GaussHermiteRule make_gauss_hermite_rule(int n) {
  gext::detail::require(n >= 1 && n <= 400, "Gauss-Hermite node count must be in [1, 400]");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);

  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double pi_quarter = std::pow(std::numbers::pi, -0.25);
  for (int i = 0; i < n; ++i) {
    double x = solver.eigenvalues()[i];
    double derivative = 0.0;
    for (int iter = 0; iter < 8; ++iter) {
      double p_prev = 0.0;
      double p = pi_quarter;
      for (int j = 0; j < n; ++j) {
        const double next = x * std::sqrt(2.0 / (j + 1)) * p - std::sqrt(static_cast<double>(j) / (j + 1)) * p_prev;
        p_prev = p;
        p = next;
      }
      derivative = std::sqrt(2.0 * n) * p_prev;
      const double step = p / derivative;
      x -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    rule.nodes[i] = std::numbers::sqrt2 * x;
    rule.weights[i] = 2.0 / (derivative * derivative) / std::sqrt(std::numbers::pi);
  }
  return rule;
}

/// Cached rule; safe to call concurrently.
inline const GaussHermiteRule& gauss_hermite_rule(int n) {
  static std::mutex mutex;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_gauss_hermite_rule(n)).first;
  return it->second;
}

/// Ψ(u) together with the volume scale m(u) = (∏ H_{α_i} u^{2/α_i} Ψ(u))^{-1}.
struct TailAsymptotics {
  double u = 0.0;
  double psi = 0.0;
  double log_psi = 0.0;
  double m = 0.0;      // +inf once m overflows; log_m stays exact
  double log_m = 0.0;
  std::vector<double> alphas;
  std::vector<double> pickands_values;
};

inline TailAsymptotics tail_constant_m(double u, std::span<const double> alphas,
                                       std::span<const double> pickands_values) {
  gext::detail::require(std::isfinite(u) && u > 0.0, "tail_constant_m: u must be positive");
  gext::detail::require(!alphas.empty(), "tail_constant_m: alphas must be non-empty");
  if (alphas.size() != pickands_values.size()) {
    throw ValidationError("tail_constant_m: alphas and pickands_values differ in length (" +
                          std::to_string(alphas.size()) + " vs " + std::to_string(pickands_values.size()) + ")");
  }
  TailAsymptotics out;
  out.u = u;
  out.alphas.assign(alphas.begin(), alphas.end());
  out.pickands_values.assign(pickands_values.begin(), pickands_values.end());
  out.log_psi = log_normal_tail(u);
  out.psi = normal_tail(u);
  double log_product = out.log_psi;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    gext::detail::require(alphas[i] > 0.0 && alphas[i] <= 2.0, "tail_constant_m: every alpha must lie in (0,2]");
    gext::detail::require(pickands_values[i] > 0.0 && std::isfinite(pickands_values[i]),
                          "tail_constant_m: Pickands values must be positive");
    log_product += std::log(pickands_values[i]) + (2.0 / alphas[i]) * std::log(u);
  }
  out.log_m = -log_product;
  out.m = std::exp(out.log_m);
  return out;
}

/// Parameters (x, λ(J), R, γ) of the limit E exp(−∏x_i·λ(J)·exp(−R/(2γ) + √(R/γ)·W)).
struct LimitLawParams {
  std::vector<double> x{1.0};
  double lambda_J = 1.0;
  double R = 0.0;
  double gamma = 0.25;

  void validate() const {
    gext::detail::require(!x.empty(), "LimitLawParams: x must be non-empty");
    for (double xi : x) gext::detail::require(xi > 0.0 && std::isfinite(xi), "LimitLawParams: every x_i must be positive");
    gext::detail::require(lambda_J > 0.0 && std::isfinite(lambda_J), "LimitLawParams: lambda_J must be positive");
    gext::detail::require(R >= 0.0 && std::isfinite(R), "LimitLawParams: R must be nonnegative");
    gext::detail::require(gamma > 0.0 && gamma <= 0.5, "LimitLawParams: gamma must lie in (0, 1/2]");
  }

  /// c = λ(J)·∏x_i.
  double intensity() const {
    double c = lambda_J;
    for (double xi : x) c *= xi;
    return c;
  }
};

enum class QuadratureMethod { gauss_hermite, monte_carlo };

inline std::string to_string(QuadratureMethod method) {
  return method == QuadratureMethod::gauss_hermite ? "gauss_hermite" : "monte_carlo";
}

inline QuadratureMethod quadrature_method_from_string(const std::string& name) {
  if (name == "gauss_hermite") return QuadratureMethod::gauss_hermite;
  if (name == "monte_carlo") return QuadratureMethod::monte_carlo;
  throw ValidationError("unknown quadrature method '" + name + "'");
}

struct QuadratureSpec {
  int node_count = 64;
  QuadratureMethod method = QuadratureMethod::gauss_hermite;
  std::uint64_t mc_draws = 1'000'000;
  std::uint64_t seed = 0;

  void validate() const {
    if (method == QuadratureMethod::gauss_hermite) {
      gext::detail::require(node_count >= 8, "QuadratureSpec: gauss_hermite needs node_count >= 8");
    } else {
      gext::detail::require(mc_draws >= 100'000, "QuadratureSpec: monte_carlo needs mc_draws >= 1e5");
    }
  }
};

struct LimitCdfResult {
  double value = 1.0;
  double std_error = 0.0;  // zero for the deterministic rule
  QuadratureMethod method = QuadratureMethod::gauss_hermite;
  double intensity = 0.0;  // c after clamping
  bool saturated = false;  // c was clamped into [1e-300, 1e300]
};

/// (R/(2γ), √(R/γ)): shift and scale of the lognormal mixing exponent.
inline std::pair<double, double> specialization_coefficients(double R, double gamma) {
  gext::detail::require(R >= 0.0 && std::isfinite(R), "specialization_coefficients: R must be nonnegative");
  gext::detail::require(gamma > 0.0 && gamma <= 0.5, "specialization_coefficients: gamma must lie in (0, 1/2]");
  return {R / (2.0 * gamma), std::sqrt(R / gamma)};
}

/// E exp(−c·exp(−R/(2γ) + √(R/γ)·W)) for an explicit intensity c ≥ 0.
inline LimitCdfResult limit_cdf_intensity(double c, double R, double gamma, const QuadratureSpec& quad) {
  gext::detail::require(c >= 0.0 && !std::isnan(c), "limit_cdf: intensity must be nonnegative");
  quad.validate();
  const auto [shift, scale] = specialization_coefficients(R, gamma);

  LimitCdfResult result;
  result.method = quad.method;
  if (c == 0.0) {
    result.value = 1.0;
    return result;
  }
  constexpr double lo = 1e-300;
  constexpr double hi = 1e300;
  if (c < lo || c > hi) {
    result.saturated = true;
    c = std::clamp(c, lo, hi);
  }
  result.intensity = c;
  const double log_c = std::log(c);
  auto integrand = [&](double w) { return std::exp(-std::exp(log_c - shift + scale * w)); };

  if (quad.method == QuadratureMethod::gauss_hermite) {
    const auto& rule = gauss_hermite_rule(quad.node_count);
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) sum += rule.weights[i] * integrand(rule.nodes[i]);
    result.value = sum;
  } else {
    NormalSource normals(derive_seed(quad.seed, 0, 0x4c494d4954ULL));
    double mean = 0.0;
    double m2 = 0.0;
    for (std::uint64_t i = 0; i < quad.mc_draws; ++i) {
      const double f = integrand(normals());
      const double delta = f - mean;
      mean += delta / static_cast<double>(i + 1);
      m2 += delta * (f - mean);
    }
    result.value = mean;
    const auto n = static_cast<double>(quad.mc_draws);
    result.std_error = std::sqrt(m2 / (n - 1.0) / n);
  }
  if (!std::isfinite(result.value)) {
    throw NumericalError("limit_cdf: non-finite quadrature result; reduce c or increase node_count");
  }
  return result;
}

inline LimitCdfResult limit_cdf(const LimitLawParams& params, const QuadratureSpec& quad = {}) {
  params.validate();
  return limit_cdf_intensity(params.intensity(), params.R, params.gamma, quad);
}

/// u_z = (u − (R/log T)^{1/2} z) / (1 − R/log T)^{1/2}.
inline double u_z_transform(double u, double z, double R, double T) {
  gext::detail::require(T > 1.0 && std::isfinite(T), "u_z_transform: T must exceed 1");
  gext::detail::require(R >= 0.0, "u_z_transform: R must be nonnegative");
  const double ratio = R / std::log(T);
  if (ratio >= 1.0) {
    throw ValidationError("u_z_transform: R/log T >= 1, horizon too small for strong-dependence mixing");
  }
  return (u - std::sqrt(ratio) * z) / std::sqrt(1.0 - ratio);
}

/// Same transform with log T supplied directly, for horizons that overflow a double.
inline double u_z_transform_log(double u, double z, double R, double log_T) {
  gext::detail::require(log_T > 0.0, "u_z_transform: log T must be positive");
  const double ratio = R / log_T;
  if (ratio >= 1.0) {
    throw ValidationError("u_z_transform: R/log T >= 1, horizon too small for strong-dependence mixing");
  }
  return (u - std::sqrt(ratio) * z) / std::sqrt(1.0 - ratio);
}

/// lim m(u)/m(u_z) = exp(−R/(2γ) + √(R/γ)·z).
inline double m_ratio_limit(double z, double R, double gamma) {
  const auto [shift, scale] = specialization_coefficients(R, gamma);
  return std::exp(-shift + scale * z);
}

}  // namespace gext::limit_law
