#pragma once

// Stationary Gaussian fields on regular grids: the separable model
// r(t) = exp(−Σ|t_i|^{α_i}) sampled through its Kronecker structure, the block mixture
// Y_T = √(1−ρ)·η + √ρ·W with ρ = R/log T, generic d-dimensional circulant sampling,
// and numeric checks of the local (A1) and long-range (A3) correlation conditions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gext/circulant.hpp"
#include "gext/errors.hpp"
#include "gext/geometry.hpp"
#include "gext/rng.hpp"

namespace gext::fields {

enum class Family { separable_stable, mixture_strong };

inline std::string to_string(Family f) { return f == Family::separable_stable ? "separable_stable" : "mixture_strong"; }

inline Family family_from_string(const std::string& s) {
  if (s == "separable_stable") return Family::separable_stable;
  if (s == "mixture_strong") return Family::mixture_strong;
  throw ValidationError("unknown correlation family '" + s + "'");
}

/// Correlation model. For mixture_strong the base is the separable model with the same
/// alphas; independent copies live on blocks of edge `block_edge` in the coordinates
/// k+1..d, the first k (bounded) coordinates share one copy.
struct CorrelationModel {
  Family family = Family::separable_stable;
  std::vector<double> alphas{2.0, 2.0};
  double R = 0.0;
  double horizon_T = 0.0;
  std::size_t bounded_dims = 0;
  double block_edge = 1.0;

  std::size_t dim() const { return alphas.size(); }

  void validate() const {
    detail::require(!alphas.empty(), "CorrelationModel: alphas must be non-empty");
    for (double a : alphas) detail::require(a > 0.0 && a <= 2.0, "CorrelationModel: alphas must lie in (0, 2]");
    detail::require(bounded_dims < alphas.size(), "CorrelationModel: bounded_dims must lie in [0, d)");
    if (family == Family::separable_stable) {
      detail::require(R == 0.0, "CorrelationModel: separable_stable has R = 0");
      return;
    }
    detail::require(R > 0.0 && std::isfinite(R), "CorrelationModel: mixture_strong needs R > 0");
    detail::require(horizon_T > 1.0 && std::isfinite(horizon_T), "CorrelationModel: horizon_T must exceed 1");
    detail::require(R / std::log(horizon_T) < 1.0, "CorrelationModel: R/log(horizon_T) must be below 1");
    detail::require(block_edge > 0.0 && std::isfinite(block_edge), "CorrelationModel: block_edge must be positive");
  }

  /// Mixing weight ρ = R/log T (0 for the separable family).
  double rho() const { return family == Family::mixture_strong ? R / std::log(horizon_T) : 0.0; }

  CorrelationModel base() const {
    CorrelationModel b;
    b.alphas = alphas;
    b.bounded_dims = bounded_dims;
    return b;
  }

  static CorrelationModel separable(std::vector<double> alphas) {
    CorrelationModel m;
    m.alphas = std::move(alphas);
    m.validate();
    return m;
  }

  static CorrelationModel mixture(std::vector<double> alphas, double R, double horizon_T, std::size_t bounded_dims = 0,
                                  double block_edge = 1.0) {
    CorrelationModel m{Family::mixture_strong, std::move(alphas), R, horizon_T, bounded_dims, block_edge};
    m.validate();
    return m;
  }

  bool operator==(const CorrelationModel&) const = default;
};

/// exp(−Σ|t_i|^{α_i}).
inline double separable_correlation(std::span<const double> alphas, std::span<const double> t) {
  double s = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) s += std::pow(std::abs(t[i]), alphas[i]);
  return std::exp(-s);
}

/// True when s and t lie in the same η block.
inline bool same_block(const CorrelationModel& model, std::span<const double> s, std::span<const double> t) {
  for (std::size_t i = model.bounded_dims; i < model.dim(); ++i) {
    if (std::floor(s[i] / model.block_edge) != std::floor(t[i] / model.block_edge)) return false;
  }
  return true;
}

/// Cov(X(s), X(t)); for the mixture (1−ρ)·r(t−s) + ρ inside one block and ρ across blocks.
inline double covariance(const CorrelationModel& model, std::span<const double> s, std::span<const double> t) {
  detail::require(s.size() == model.dim() && t.size() == model.dim(), "covariance: dimension mismatch");
  std::vector<double> lag(model.dim());
  for (std::size_t i = 0; i < lag.size(); ++i) lag[i] = t[i] - s[i];
  const double base = separable_correlation(model.alphas, lag);
  if (model.family == Family::separable_stable) return base;
  const double rho = model.rho();
  return same_block(model, s, t) ? (1.0 - rho) * base + rho : rho;
}

/// r(t) = Cov(X(t), X(0)). For the mixture, 0 and t are compared block-wise, so a lag
/// that leaves the block [0, edge) of the origin yields exactly ρ.
inline double correlation(const CorrelationModel& model, std::span<const double> t) {
  const std::vector<double> origin(model.dim(), 0.0);
  return covariance(model, origin, t);
}

// ---------------------------------------------------------------------------
// Condition validators

using CorrelationFn = std::function<double(std::span<const double>)>;

struct A1Report {
  std::vector<double> radii;       // r, r/2, r/4
  std::vector<double> sup_ratio;   // sup |1 − r(t) − s(t)| / s(t) over Σ|t_i|^{α_i} ≤ radius
  double tolerance = 0.0;
  bool pass = false;
};

struct A3Report {
  std::vector<double> radii;
  std::vector<double> max_deviation;  // max over directions of |r(t)·log‖t‖ − R|
  bool pass = false;
};

namespace detail {

using gext::detail::require;

// Deterministic weights on the simplex: the vertices, the barycentre and a Halton-like
// interior sequence, so validators do not depend on a random stream.
inline std::vector<std::vector<double>> simplex_weights(std::size_t d, std::size_t interior = 24) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> w(d, 0.0);
    w[i] = 1.0;
    out.push_back(w);
  }
  out.emplace_back(d, 1.0 / static_cast<double>(d));
  const double golden = 0.6180339887498949;
  for (std::size_t k = 1; k <= interior && d > 1; ++k) {
    std::vector<double> w(d);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double frac = std::fmod(static_cast<double>(k) * golden * static_cast<double>(i + 1) + 0.5 * static_cast<double>(i), 1.0);
      w[i] = 0.05 + frac;
      sum += w[i];
    }
    for (double& v : w) v /= sum;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace detail

/// Checks r(t) = 1 − Σ|t_i|^{α_i} + o(Σ|t_i|^{α_i}) near 0: the sup ratio must shrink
/// with each halving of the radius, unless it already sits below `tolerance` everywhere.
inline A1Report verify_A1(const CorrelationFn& r, std::span<const double> alphas, double radius, double tolerance) {
  gext::detail::require(radius > 0.0, "verify_A1: radius must be positive");
  const std::size_t d = alphas.size();
  const auto weights = detail::simplex_weights(d);
  A1Report rep;
  rep.tolerance = tolerance;
  std::vector<double> t(d);
  for (double rad : {radius, radius / 2.0, radius / 4.0}) {
    double sup = 0.0;
    for (double frac : {1.0, 0.5, 0.25, 0.1}) {
      const double s_target = rad * frac;
      for (std::size_t w = 0; w < weights.size(); ++w) {
        for (std::size_t i = 0; i < d; ++i) {
          const double sign = ((w + i) % 2 == 0) ? 1.0 : -1.0;
          t[i] = sign * std::pow(weights[w][i] * s_target, 1.0 / alphas[i]);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += std::pow(std::abs(t[i]), alphas[i]);
        if (s <= 0.0) continue;
        sup = std::max(sup, std::abs(1.0 - r(t) - s) / s);
      }
    }
    rep.radii.push_back(rad);
    rep.sup_ratio.push_back(sup);
  }
  const bool all_small = std::all_of(rep.sup_ratio.begin(), rep.sup_ratio.end(),
                                     [&](double v) { return v <= tolerance; });
  const bool shrinking = rep.sup_ratio[1] < rep.sup_ratio[0] && rep.sup_ratio[2] < rep.sup_ratio[1] &&
                         rep.sup_ratio[2] <= tolerance;
  rep.pass = all_small || shrinking;
  return rep;
}

inline A1Report verify_A1(const CorrelationModel& model, double radius, double tolerance) {
  model.validate();
  return verify_A1([&](std::span<const double> t) { return correlation(model, t); }, model.alphas, radius, tolerance);
}

/// Checks r(t)·log‖t‖ → R along the given increasing radii (all ≥ e): the maximal
/// deviation over directions must be nonincreasing and end below where it started
/// (or be negligible, ≤ 1e-12, throughout).
inline A3Report verify_A3(const CorrelationFn& r, std::size_t d, double R, std::span<const double> radii) {
  gext::detail::require(!radii.empty(), "verify_A3: radii must be non-empty");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    gext::detail::require(radii[i] >= std::numbers::e, "verify_A3: radii must be at least e");
    if (i > 0) gext::detail::require(radii[i] > radii[i - 1], "verify_A3: radii must be increasing");
  }
  const auto weights = detail::simplex_weights(d);
  A3Report rep;
  std::vector<double> t(d);
  for (double rad : radii) {
    double worst = 0.0;
    for (std::size_t w = 0; w < weights.size(); ++w) {
      for (std::size_t i = 0; i < d; ++i) {
        const double sign = ((w + i) % 2 == 0) ? 1.0 : -1.0;
        t[i] = sign * rad * std::sqrt(weights[w][i]);
      }
      worst = std::max(worst, std::abs(r(t) * std::log(rad) - R));
    }
    rep.radii.push_back(rad);
    rep.max_deviation.push_back(worst);
  }
  bool nonincreasing = true;
  for (std::size_t i = 1; i < rep.max_deviation.size(); ++i) {
    nonincreasing = nonincreasing && rep.max_deviation[i] <= rep.max_deviation[i - 1];
  }
  const bool negligible = rep.max_deviation.back() <= 1e-12;
  rep.pass = nonincreasing && (negligible || rep.max_deviation.back() < rep.max_deviation.front());
  return rep;
}

inline A3Report verify_A3(const CorrelationModel& model, std::span<const double> radii) {
  model.validate();
  return verify_A3([&](std::span<const double> t) { return correlation(model, t); }, model.dim(), model.R, radii);
}

// ---------------------------------------------------------------------------
// Samplers

inline constexpr std::size_t kMaxGridPoints = std::size_t{1} << 26;
inline constexpr std::size_t kDenseAxisLimit = 2048;

/// Square-root factor of the 1-D covariance exp(−|jq|^α) on n points: a dense low-rank
/// matrix for short axes, circulant embedding for long ones.
struct AxisFactor {
  std::size_t n = 0;
  Eigen::MatrixXd dense;  // n × rank
  std::shared_ptr<const circulant::Embedding> embedding;

  bool is_circulant() const { return embedding != nullptr; }
  /// Length of the noise fibre the factor consumes.
  std::size_t in_size() const { return is_circulant() ? embedding->noise_size() : static_cast<std::size_t>(dense.cols()); }
};

/// PSD square root through a symmetric eigendecomposition; eigenvalues below
/// 1e-15·λmax are dropped, a negative eigenvalue beyond −1e-12·λmax is a failure.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw FactorizationError("eigendecomposition did not converge");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double max_l = lambda.maxCoeff();
  if (!(max_l > 0.0)) throw FactorizationError("covariance matrix has no positive eigenvalue");
  if (lambda.minCoeff() < -1e-12 * max_l) {
    throw FactorizationError("covariance matrix is not positive semidefinite (min eigenvalue " +
                             std::to_string(lambda.minCoeff()) + ")");
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = lambda.size(); i-- > 0;) {
    if (lambda[i] > 1e-15 * max_l) keep.push_back(i);
  }
  Eigen::MatrixXd L(cov.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    L.col(static_cast<Eigen::Index>(c)) = eig.eigenvectors().col(keep[c]) * std::sqrt(lambda[keep[c]]);
  }
  return L;
}

inline AxisFactor make_axis_factor(std::size_t n, double spacing, double alpha,
                                   std::size_t dense_limit = kDenseAxisLimit) {
  AxisFactor f;
  f.n = n;
  auto cov = [spacing, alpha](std::size_t lag) {
    return std::exp(-std::pow(static_cast<double>(lag) * spacing, alpha));
  };
  if (n <= dense_limit) {
    Eigen::MatrixXd C(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) C(i, j) = cov(i > j ? i - j : j - i);
    }
    f.dense = psd_factor(C);
  } else {
    f.embedding = std::make_shared<const circulant::Embedding>(circulant::make_embedding_1d(n, cov));
  }
  return f;
}

/// Reusable per-thread buffers for the samplers below.
struct Scratch {
  std::vector<double> a, b, fibre_in, fibre_out, pair_a, pair_b, block;
  std::vector<std::pair<const circulant::Embedding*, circulant::Workspace>> spaces;

  circulant::Workspace& workspace(const circulant::Embedding& e) {
    for (auto& [key, ws] : spaces) {
      if (key == &e) return ws;
    }
    spaces.emplace_back(&e, e.make_workspace());
    return spaces.back().second;
  }
};

/// Exact sampler for r(t) = exp(−Σ|t_i|^{α_i}) on a lattice: X = (F_1 ⊗ … ⊗ F_d)·Z with
/// per-axis square-root factors F_i. Immutable and shareable across threads.
class SeparableSampler {
 public:
  SeparableSampler(std::vector<std::size_t> counts, std::span<const double> spacings, std::span<const double> alphas,
                   std::size_t dense_limit = kDenseAxisLimit)
      : counts_(std::move(counts)) {
    gext::detail::require(counts_.size() == spacings.size() && counts_.size() == alphas.size(),
                          "SeparableSampler: counts, spacings and alphas must have equal length");
    std::size_t total = 1;
    for (std::size_t c : counts_) {
      gext::detail::require(c > 0, "SeparableSampler: empty axis");
      total *= c;
    }
    if (total > kMaxGridPoints) throw BudgetError("SeparableSampler: grid exceeds 2^26 points");
    total_ = total;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      factors_.push_back(make_axis_factor(counts_[i], spacings[i], alphas[i], dense_limit));
    }
    // The first circulant axis is filled directly with i.i.d. fibres (two per FFT).
    for (std::size_t i = 0; i < factors_.size(); ++i) {
      if (factors_[i].is_circulant()) {
        fast_axis_ = i;
        break;
      }
    }
  }

  explicit SeparableSampler(const geometry::GridSpec& grid, std::span<const double> alphas)
      : SeparableSampler(grid.counts, grid.spacings, alphas) {}

  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t size() const { return total_; }
  const std::vector<AxisFactor>& factors() const { return factors_; }
  bool all_dense() const {
    return std::none_of(factors_.begin(), factors_.end(), [](const AxisFactor& f) { return f.is_circulant(); });
  }

  /// F_1 ⊗ … ⊗ F_d as a dense matrix (dense axes only; meant for small grids).
  Eigen::MatrixXd linear_map() const {
    gext::detail::require(all_dense(), "linear_map: only available when every axis is dense");
    Eigen::MatrixXd A = Eigen::MatrixXd::Ones(1, 1);
    for (const AxisFactor& f : factors_) {
      const Eigen::MatrixXd& L = f.dense;
      Eigen::MatrixXd K(A.rows() * L.rows(), A.cols() * L.cols());
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
          K.block(i * L.rows(), j * L.cols(), L.rows(), L.cols()) = A(i, j) * L;
        }
      }
      A = std::move(K);
    }
    return A;
  }

  /// One sample in row-major order into `out` (size()).
  void sample(NormalSource& normals, Scratch& s, std::span<double> out) const {
    std::vector<std::size_t> shape(factors_.size());
    for (std::size_t i = 0; i < factors_.size(); ++i) shape[i] = (i == fast_axis_) ? counts_[i] : factors_[i].in_size();
    const std::size_t start = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    s.a.resize(start);

    if (fast_axis_ < factors_.size()) {
      fill_fast_axis(normals, s, shape);
    } else {
      normals.fill(s.a);
    }

    for (std::size_t axis = 0; axis < factors_.size(); ++axis) {
      if (axis == fast_axis_) continue;
      apply_mode(axis, shape, s);
    }
    std::copy(s.a.begin(), s.a.end(), out.begin());
  }

 private:
  // Splits `shape` around `axis` into (pre, len, post).
  static void split(const std::vector<std::size_t>& shape, std::size_t axis, std::size_t& pre, std::size_t& post) {
    pre = 1;
    post = 1;
    for (std::size_t i = 0; i < axis; ++i) pre *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) post *= shape[i];
  }

  void fill_fast_axis(NormalSource& normals, Scratch& s, const std::vector<std::size_t>& shape) const {
    const AxisFactor& f = factors_[fast_axis_];
    const std::size_t n = f.n;
    std::size_t pre, post;
    split(shape, fast_axis_, pre, post);
    const std::size_t fibres = pre * post;
    s.pair_a.resize(n);
    s.pair_b.resize(n);
    auto& ws = s.workspace(*f.embedding);
    auto scatter = [&](std::size_t fibre, const std::vector<double>& src) {
      const std::size_t p = fibre / post;
      const std::size_t q = fibre % post;
      double* base = s.a.data() + p * n * post + q;
      for (std::size_t j = 0; j < n; ++j) base[j * post] = src[j];
    };
    for (std::size_t k = 0; k < fibres; k += 2) {
      f.embedding->sample_pair(normals, ws, s.pair_a, s.pair_b);
      scatter(k, s.pair_a);
      if (k + 1 < fibres) scatter(k + 1, s.pair_b);
    }
  }

  void apply_mode(std::size_t axis, std::vector<std::size_t>& shape, Scratch& s) const {
    const AxisFactor& f = factors_[axis];
    std::size_t pre, post;
    split(shape, axis, pre, post);
    const std::size_t in = shape[axis];
    const std::size_t out = f.n;
    s.b.resize(pre * out * post);
    if (!f.is_circulant()) {
      using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      const auto ei = static_cast<Eigen::Index>(in);
      const auto eo = static_cast<Eigen::Index>(out);
      const auto ep = static_cast<Eigen::Index>(post);
      if (post == 1) {
        // Last axis: one product over all leading indices.
        Eigen::Map<const RowMat> A(s.a.data(), static_cast<Eigen::Index>(pre), ei);
        Eigen::Map<RowMat> B(s.b.data(), static_cast<Eigen::Index>(pre), eo);
        B.noalias() = A * f.dense.transpose();
      } else {
        for (std::size_t p = 0; p < pre; ++p) {
          Eigen::Map<const RowMat> A(s.a.data() + p * in * post, ei, ep);
          Eigen::Map<RowMat> B(s.b.data() + p * out * post, eo, ep);
          B.noalias() = f.dense * A;
        }
      }
    } else {
      auto& ws = s.workspace(*f.embedding);
      s.fibre_in.resize(in);
      s.fibre_out.resize(out);
      for (std::size_t p = 0; p < pre; ++p) {
        for (std::size_t q = 0; q < post; ++q) {
          const double* src = s.a.data() + p * in * post + q;
          for (std::size_t j = 0; j < in; ++j) s.fibre_in[j] = src[j * post];
          f.embedding->apply(s.fibre_in, ws, s.fibre_out);
          double* dst = s.b.data() + p * out * post + q;
          for (std::size_t j = 0; j < out; ++j) dst[j * post] = s.fibre_out[j];
        }
      }
    }
    std::swap(s.a, s.b);
    shape[axis] = out;
  }

  std::vector<std::size_t> counts_;
  std::size_t total_ = 0;
  std::vector<AxisFactor> factors_;
  std::size_t fast_axis_ = static_cast<std::size_t>(-1);
};

/// One η block: index ranges [start_i, start_i + len_i) per axis.
struct Block {
  std::vector<std::size_t> start;
  std::vector<std::size_t> len;
};

/// Splits a grid into η blocks: unit cells of edge `edge` along coordinates ≥ k, the
/// bounded coordinates are not split.
inline std::vector<Block> block_partition(const geometry::GridSpec& grid, std::size_t bounded_dims, double edge) {
  const std::size_t d = grid.dim();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> runs(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (i < bounded_dims) {
      runs[i].emplace_back(0, grid.counts[i]);
      continue;
    }
    std::size_t begin = 0;
    double current = std::floor(grid.coordinate(i, 0) / edge);
    for (std::size_t j = 1; j < grid.counts[i]; ++j) {
      const double b = std::floor(grid.coordinate(i, j) / edge);
      if (b != current) {
        runs[i].emplace_back(begin, j - begin);
        begin = j;
        current = b;
      }
    }
    runs[i].emplace_back(begin, grid.counts[i] - begin);
  }
  std::vector<Block> blocks;
  std::vector<std::size_t> idx(d, 0);
  while (true) {
    Block b;
    for (std::size_t i = 0; i < d; ++i) {
      b.start.push_back(runs[i][idx[i]].first);
      b.len.push_back(runs[i][idx[i]].second);
    }
    blocks.push_back(std::move(b));
    std::size_t i = d;
    while (i-- > 0) {
      if (++idx[i] < runs[i].size()) break;
      idx[i] = 0;
    }
    if (i == static_cast<std::size_t>(-1)) break;
  }
  return blocks;
}

/// η on a grid: independent separable copies per block, block samplers cached by shape.
class BlockSampler {
 public:
  BlockSampler(const geometry::GridSpec& grid, std::span<const double> alphas, std::size_t bounded_dims, double edge)
      : counts_(grid.counts), blocks_(block_partition(grid, bounded_dims, edge)) {
    if (grid.total_points() > kMaxGridPoints) throw BudgetError("BlockSampler: grid exceeds 2^26 points");
    for (const Block& b : blocks_) {
      if (samplers_.find(b.len) == samplers_.end()) {
        samplers_.emplace(b.len, std::make_unique<SeparableSampler>(b.len, grid.spacings, alphas));
      }
    }
  }

  std::size_t size() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::size_t{1}, std::multiplies<>());
  }
  const std::vector<Block>& blocks() const { return blocks_; }

  void sample(NormalSource& normals, Scratch& s, std::span<double> out) const {
    const std::size_t d = counts_.size();
    std::vector<std::size_t> local(d);
    for (const Block& b : blocks_) {
      const SeparableSampler& sampler = *samplers_.at(b.len);
      s.block.resize(sampler.size());
      sampler.sample(normals, s, s.block);
      const std::vector<double>& block_values = s.block;
      std::fill(local.begin(), local.end(), 0);
      for (std::size_t flat = 0; flat < block_values.size(); ++flat) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < d; ++i) off = off * counts_[i] + b.start[i] + local[i];
        out[off] = block_values[flat];
        for (std::size_t i = d; i-- > 0;) {
          if (++local[i] < b.len[i]) break;
          local[i] = 0;
        }
      }
    }
  }

 private:
  std::vector<std::size_t> counts_;
  std::vector<Block> blocks_;
  std::map<std::vector<std::size_t>, std::unique_ptr<SeparableSampler>> samplers_;
};

/// Y_T = √(1−ρ)·η + √ρ·W on a grid; W is drawn first from the stream.
class MixtureSampler {
 public:
  MixtureSampler(const CorrelationModel& model, const geometry::GridSpec& grid)
      : rho_((model.validate(), model.rho())),
        eta_(grid, model.alphas, model.bounded_dims, model.block_edge) {
    gext::detail::require(model.family == Family::mixture_strong, "MixtureSampler: model must be mixture_strong");
  }

  double rho() const { return rho_; }
  std::size_t size() const { return eta_.size(); }
  const BlockSampler& eta() const { return eta_; }

  /// η into `eta_out`, returns W.
  double sample_components(NormalSource& normals, Scratch& s, std::span<double> eta_out) const {
    const double W = normals();
    eta_.sample(normals, s, eta_out);
    return W;
  }

  void sample(NormalSource& normals, Scratch& s, std::span<double> out) const {
    const double W = sample_components(normals, s, out);
    const double a = std::sqrt(1.0 - rho_);
    const double b = std::sqrt(rho_) * W;
    for (double& v : out) v = a * v + b;
  }

 private:
  double rho_;
  BlockSampler eta_;
};

/// Any stationary correlation on a lattice by d-dimensional circulant embedding.
class StationarySampler {
 public:
  StationarySampler(const geometry::GridSpec& grid, const CorrelationFn& r, circulant::EmbeddingOptions options = {})
      : embedding_(grid.counts,
                   [&](std::span<const long> lag) {
                     std::vector<double> t(lag.size());
                     for (std::size_t i = 0; i < lag.size(); ++i) t[i] = static_cast<double>(lag[i]) * grid.spacings[i];
                     return r(t);
                   },
                   options) {
    if (grid.total_points() > kMaxGridPoints) throw BudgetError("StationarySampler: grid exceeds 2^26 points");
  }

  std::size_t size() const { return embedding_.output_size(); }
  double clipped_mass() const { return embedding_.clipped_mass(); }
  const circulant::Embedding& embedding() const { return embedding_; }

  void sample_pair(NormalSource& normals, Scratch& s, std::span<double> first, std::span<double> second) const {
    embedding_.sample_pair(normals, s.workspace(embedding_), first, second);
  }

 private:
  circulant::Embedding embedding_;
};

struct FieldSample {
  geometry::GridSpec grid;
  std::vector<double> values;  // row-major over grid.counts
  std::uint64_t seed = 0;
};

/// One field on `grid` drawn from the stream derive_seed(seed, 0).
inline FieldSample sample_field(const CorrelationModel& model, const geometry::GridSpec& grid, std::uint64_t seed) {
  model.validate();
  gext::detail::require(grid.dim() == model.dim(), "sample_field: grid and model dimensions differ");
  if (grid.total_points() > kMaxGridPoints) throw BudgetError("sample_field: grid exceeds 2^26 points");
  FieldSample out{grid, std::vector<double>(grid.total_points()), seed};
  NormalSource normals(derive_seed(seed, 0));
  Scratch scratch;
  if (model.family == Family::separable_stable) {
    SeparableSampler(grid, model.alphas).sample(normals, scratch, out.values);
  } else {
    MixtureSampler(model, grid).sample(normals, scratch, out.values);
  }
  return out;
}

/// Stationary field with an arbitrary correlation, by circulant embedding.
inline FieldSample sample_stationary(const CorrelationFn& r, const geometry::GridSpec& grid, std::uint64_t seed) {
  StationarySampler sampler(grid, r);
  FieldSample out{grid, std::vector<double>(sampler.size()), seed};
  std::vector<double> spare(sampler.size());
  NormalSource normals(derive_seed(seed, 0));
  Scratch scratch;
  sampler.sample_pair(normals, scratch, out.values, spare);
  return out;
}

}  // namespace gext::fields
