#pragma once

// Monte Carlo estimation of Pickands constants H_α from fractional Brownian motion.
//
// Paths are exact on the grid: fractional Gaussian noise is drawn by circulant
// embedding of its autocovariance and cumulated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gext/circulant.hpp"
#include "gext/errors.hpp"
#include "gext/parallel.hpp"
#include "gext/rng.hpp"

namespace gext::pickands {

/// Fractional Brownian motion on the grid {0, step, 2·step, …, horizon}.
struct FbmSpec {
  double hurst = 0.5;
  double horizon = 1.0;
  double step = 1.0 / 64.0;

  std::size_t increments() const { return static_cast<std::size_t>(std::llround(horizon / step)); }

  void validate() const {
    detail::require(hurst > 0.0 && hurst <= 1.0, "FbmSpec: hurst must lie in (0, 1]");
    detail::require(horizon > 0.0 && std::isfinite(horizon), "FbmSpec: horizon must be positive");
    detail::require(step > 0.0 && step <= horizon, "FbmSpec: step must lie in (0, horizon]");
    detail::require(horizon / step <= 16777216.0, "FbmSpec: horizon/step exceeds 2^24");
    const double n = static_cast<double>(increments());
    detail::require(std::abs(n * step - horizon) <= 1e-9 * horizon, "FbmSpec: horizon must be a multiple of step");
  }
};

/// Autocovariance of unit-step fractional Gaussian noise at lag k.
inline double fgn_autocovariance(std::size_t k, double hurst) {
  const double h2 = 2.0 * hurst;
  const double kk = static_cast<double>(k);
  if (k == 0) return 1.0;
  return 0.5 * (std::pow(kk + 1.0, h2) - 2.0 * std::pow(kk, h2) + std::pow(kk - 1.0, h2));
}

/// Exact fBm sampler for one grid; immutable and shareable across threads.
class FbmSampler {
 public:
  explicit FbmSampler(const FbmSpec& spec) : spec_((spec.validate(), spec)), n_(spec.increments()),
        scale_(std::pow(spec.step, spec.hurst)),
        embedding_(circulant::make_embedding_1d(n_, [h = spec.hurst](std::size_t k) {
          return fgn_autocovariance(k, h);
        })) {}

  const FbmSpec& spec() const { return spec_; }
  /// Number of grid points, n + 1 including t = 0.
  std::size_t path_size() const { return n_ + 1; }
  double clipped_mass() const { return embedding_.clipped_mass(); }

  circulant::Workspace make_workspace() const { return embedding_.make_workspace(); }

  /// Two independent paths; each span holds path_size() values and starts at B(0) = 0.
  void sample_pair(NormalSource& normals, circulant::Workspace& ws, std::span<double> first,
                   std::span<double> second) const {
    embedding_.sample_pair(normals, ws, first.subspan(1, n_), second.subspan(1, n_));
    cumulate(first);
    cumulate(second);
  }

 private:
  void cumulate(std::span<double> path) const {
    path[0] = 0.0;
    double acc = 0.0;
    for (std::size_t j = 1; j <= n_; ++j) {
      acc += scale_ * path[j];
      path[j] = acc;
    }
  }

  FbmSpec spec_;
  std::size_t n_;
  double scale_;
  circulant::Embedding embedding_;
};

/// One fBm path on the grid of `spec`.
inline std::vector<double> simulate_fbm(const FbmSpec& spec, std::uint64_t seed) {
  FbmSampler sampler(spec);
  auto ws = sampler.make_workspace();
  NormalSource normals(derive_seed(seed, 0));
  std::vector<double> path(sampler.path_size());
  std::vector<double> spare(sampler.path_size());
  sampler.sample_pair(normals, ws, path, spare);
  return path;
}

enum class Method {
  /// E exp(max_{0≤t≤T} √2·B(t) − t^α) / T on the one-sided grid.
  truncated_mean,
  /// E[max e^{Y} / (step·Σ e^{Y})], Y(t) = √2·B(t) − |t|^α on the two-sided grid [−T, T].
  dieker_yakir,
};

inline std::string to_string(Method m) { return m == Method::truncated_mean ? "truncated_mean" : "dieker_yakir"; }

inline Method method_from_string(const std::string& name) {
  if (name == "truncated_mean") return Method::truncated_mean;
  if (name == "dieker_yakir") return Method::dieker_yakir;
  throw ValidationError("unknown Pickands estimator '" + name + "'");
}

/// exp(max_j √2·B(t_j) − t_j^α) for a path sampled at t_j = j·step. At least 1 since B(0) = 0.
inline double truncated_mean_functional(std::span<const double> path, double step, double alpha) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < path.size(); ++j) {
    const double t = static_cast<double>(j) * step;
    best = std::max(best, std::numbers::sqrt2 * path[j] - std::pow(t, alpha));
  }
  return std::exp(best);
}

/// max e^{Y} / (step·Σ e^{Y}) for a path on [0, 2T] re-centred at its midpoint.
inline double dieker_yakir_functional(std::span<const double> path, double step, double alpha) {
  const std::size_t centre = (path.size() - 1) / 2;
  const double origin = path[centre];
  double best = -std::numeric_limits<double>::infinity();
  thread_local std::vector<double> y;
  y.resize(path.size());
  for (std::size_t j = 0; j < path.size(); ++j) {
    const double t = std::abs(static_cast<double>(j) - static_cast<double>(centre)) * step;
    y[j] = std::numbers::sqrt2 * (path[j] - origin) - std::pow(t, alpha);
    best = std::max(best, y[j]);
  }
  double sum = 0.0;
  for (double v : y) sum += std::exp(v - best);
  return 1.0 / (step * sum);
}

struct PickandsEstimate {
  double alpha = 1.0;
  double horizon = 64.0;
  double step = 1.0 / 64.0;
  std::uint64_t replicates = 0;
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t seed = 0;
  Method method = Method::dieker_yakir;
};

struct EstimateOptions {
  Method method = Method::dieker_yakir;
  unsigned workers = 1;
};

/// Estimates H_α from `replicates` independent paths. Replicates 2p and 2p+1 share the
/// stream derive_seed(seed, p), so the result is a pure function of the arguments.
inline PickandsEstimate estimate_pickands(double alpha, double horizon, double step, std::uint64_t replicates,
                                          std::uint64_t seed, EstimateOptions options = {}) {
  detail::require(alpha > 0.0 && alpha <= 2.0, "estimate_pickands: alpha must lie in (0, 2]");
  detail::require(horizon >= 1.0, "estimate_pickands: horizon must be at least 1");
  detail::require(replicates >= 1000, "estimate_pickands: replicates must be at least 1000");

  const bool two_sided = options.method == Method::dieker_yakir;
  const FbmSpec spec{alpha / 2.0, two_sided ? 2.0 * horizon : horizon, step};
  const FbmSampler sampler(spec);

  const std::size_t pairs = (replicates + 1) / 2;
  const unsigned workers = effective_workers(pairs, options.workers);
  std::vector<double> values(replicates);
  std::vector<circulant::Workspace> spaces;
  std::vector<std::vector<double>> paths;
  for (unsigned w = 0; w < workers; ++w) {
    spaces.push_back(sampler.make_workspace());
    paths.emplace_back(2 * sampler.path_size());
  }

  parallel_for(pairs, workers, [&](std::size_t p, unsigned w) {
    NormalSource normals(derive_seed(seed, p));
    std::span<double> both(paths[w]);
    auto first = both.subspan(0, sampler.path_size());
    auto second = both.subspan(sampler.path_size());
    sampler.sample_pair(normals, spaces[w], first, second);
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t r = 2 * p + k;
      if (r >= replicates) break;
      std::span<const double> path = k == 0 ? first : second;
      values[r] = two_sided ? dieker_yakir_functional(path, step, alpha)
                            : truncated_mean_functional(path, step, alpha) / horizon;
    }
  });

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(replicates);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double n = static_cast<double>(replicates);

  PickandsEstimate est;
  est.alpha = alpha;
  est.horizon = horizon;
  est.step = step;
  est.replicates = replicates;
  est.value = mean;
  est.std_error = std::sqrt(ss / (n - 1.0) / n);
  est.seed = seed;
  est.method = options.method;
  return est;
}

/// H_1 = 1 and H_2 = 1/√π; no other closed forms are known.
inline std::optional<double> closed_form_pickands(double alpha) {
  if (alpha == 1.0) return 1.0;
  if (alpha == 2.0) return 1.0 / std::sqrt(std::numbers::pi);
  return std::nullopt;
}

}  // namespace gext::pickands
