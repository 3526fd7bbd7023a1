#pragma once

// Circulant embedding of stationary covariances on regular grids (1-D and d-D),
// sampled through FFTW. The embedding objects are immutable after construction and
// can be shared across threads; every thread brings its own Workspace.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "gext/errors.hpp"
#include "gext/rng.hpp"

namespace gext::circulant {

namespace detail {

// FFTW's planner is not reentrant; execution of an existing plan is.
inline std::mutex& planner_mutex() {
  static std::mutex mutex;
  return mutex;
}

struct FftwFree {
  void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};

struct PlanDestroy {
  void operator()(fftw_plan_s* plan) const noexcept {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
};

using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;
using SharedPlan = std::shared_ptr<fftw_plan_s>;

inline ComplexBuffer allocate(std::size_t n) {
  auto* p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * std::max<std::size_t>(n, 1)));
  if (p == nullptr) throw RuntimeFailure("fftw_malloc failed");
  return ComplexBuffer(p);
}

// In-place forward transform over `dims` (row-major), FFTW_ESTIMATE so that plans,
// and therefore results, do not depend on timing measurements.
inline SharedPlan make_plan(const std::vector<int>& dims) {
  std::size_t total = 1;
  for (int d : dims) total *= static_cast<std::size_t>(d);
  ComplexBuffer scratch = allocate(total);
  std::lock_guard lock(planner_mutex());
  fftw_plan plan = fftw_plan_dft(static_cast<int>(dims.size()), dims.data(), scratch.get(), scratch.get(),
                                 FFTW_FORWARD, FFTW_ESTIMATE);
  if (plan == nullptr) throw RuntimeFailure("fftw_plan_dft failed");
  return SharedPlan(plan, PlanDestroy{});
}

}  // namespace detail

/// Smallest 2^a·3^b·5^c that is ≥ n.
inline std::size_t good_fft_size(std::size_t n) {
  if (n <= 1) return 1;
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t f : {2u, 3u, 5u}) {
      while (r % f == 0) r /= f;
    }
    if (r == 1) return m;
  }
}

/// Per-thread scratch for one embedding.
class Workspace {
 public:
  Workspace() = default;
  explicit Workspace(std::size_t size) : buffer_(detail::allocate(size)), size_(size) {}
  fftw_complex* data() { return buffer_.get(); }
  std::size_t size() const { return size_; }

 private:
  detail::ComplexBuffer buffer_;
  std::size_t size_ = 0;
};

struct EmbeddingOptions {
  double negative_tolerance = 1e-9;  // relative to the largest eigenvalue
  int max_attempts = 4;              // the padded size doubles after each failure
};

/// Circulant embedding on a d-dimensional lattice of `dims` points.
///
/// The covariance callback receives a signed lag in lattice units. Eigenvalues of the
/// embedding are computed once; sample_pair then produces two independent exact
/// samples (real and imaginary parts of one complex transform).
class Embedding {
 public:
  using Covariance = std::function<double(std::span<const long>)>;

  Embedding(std::vector<std::size_t> dims, const Covariance& covariance, EmbeddingOptions options = {})
      : dims_(std::move(dims)) {
    if (dims_.empty()) throw ValidationError("circulant embedding needs at least one dimension");
    for (std::size_t n : dims_) {
      if (n == 0) throw ValidationError("circulant embedding: empty dimension");
    }
    std::vector<std::size_t> padded(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) padded[i] = good_fft_size(std::max<std::size_t>(2 * (dims_[i] - 1), 1));

    for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
      if (try_embed(padded, covariance, options.negative_tolerance)) return;
      for (auto& n : padded) n = (n == 1) ? 2 : 2 * n;
    }
    throw EmbeddingError("circulant embedding is not nonnegative definite after " +
                         std::to_string(options.max_attempts) + " padding attempts (min eigenvalue " +
                         std::to_string(last_min_eigenvalue_) + ")");
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  const std::vector<std::size_t>& embedded_dims() const { return embedded_; }
  std::size_t embedded_size() const { return embedded_total_; }
  std::size_t output_size() const { return output_total_; }
  /// Σ|negative eigenvalues| / Σ|eigenvalues| discarded by clipping.
  double clipped_mass() const { return clipped_mass_; }
  /// Eigenvalues of the embedding matrix (after clipping), row-major over embedded_dims().
  const std::vector<double>& spectrum() const { return spectrum_; }

  Workspace make_workspace() const { return Workspace(embedded_total_); }

  /// Two independent draws; each output span must hold output_size() values (row-major).
  void sample_pair(NormalSource& normals, Workspace& ws, std::span<double> first, std::span<double> second) const {
    fftw_complex* buf = ws.data();
    for (std::size_t k = 0; k < embedded_total_; ++k) {
      const double s = scale_[k];
      const double re = normals();
      const double im = normals();
      buf[k][0] = s * re;
      buf[k][1] = s * im;
    }
    fftw_execute_dft(plan_.get(), buf, buf);
    extract(buf, first, 0);
    extract(buf, second, 1);
  }

  /// Real part only: a linear map from 2·embedded_size() i.i.d. normals to one sample.
  void apply(std::span<const double> noise, Workspace& ws, std::span<double> out) const {
    fftw_complex* buf = ws.data();
    for (std::size_t k = 0; k < embedded_total_; ++k) {
      buf[k][0] = scale_[k] * noise[2 * k];
      buf[k][1] = scale_[k] * noise[2 * k + 1];
    }
    fftw_execute_dft(plan_.get(), buf, buf);
    extract(buf, out, 0);
  }

  std::size_t noise_size() const { return 2 * embedded_total_; }

 private:
  bool try_embed(const std::vector<std::size_t>& padded, const Covariance& covariance, double tolerance) {
    const std::size_t d = padded.size();
    std::size_t total = 1;
    for (std::size_t n : padded) total *= n;

    detail::ComplexBuffer buf = detail::allocate(total);
    std::vector<long> lag(d);
    std::vector<std::size_t> index(d, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      for (std::size_t i = 0; i < d; ++i) {
        const auto n = static_cast<long>(padded[i]);
        const auto k = static_cast<long>(index[i]);
        lag[i] = (2 * k <= n) ? k : k - n;
      }
      buf[flat][0] = covariance(lag);
      buf[flat][1] = 0.0;
      for (std::size_t i = d; i-- > 0;) {
        if (++index[i] < padded[i]) break;
        index[i] = 0;
      }
    }
    std::vector<int> int_dims(padded.begin(), padded.end());
    auto plan = detail::make_plan(int_dims);
    fftw_execute_dft(plan.get(), buf.get(), buf.get());

    double max_eig = 0.0;
    double min_eig = 0.0;
    for (std::size_t k = 0; k < total; ++k) {
      max_eig = std::max(max_eig, buf[k][0]);
      min_eig = std::min(min_eig, buf[k][0]);
    }
    last_min_eigenvalue_ = min_eig;
    if (max_eig <= 0.0 || min_eig < -tolerance * max_eig) return false;

    embedded_ = padded;
    embedded_total_ = total;
    plan_ = std::move(plan);
    spectrum_.resize(total);
    scale_.resize(total);
    double negative = 0.0;
    double absolute = 0.0;
    for (std::size_t k = 0; k < total; ++k) {
      const double lambda = buf[k][0];
      absolute += std::abs(lambda);
      if (lambda < 0.0) negative += -lambda;
      spectrum_[k] = std::max(lambda, 0.0);
      scale_[k] = std::sqrt(spectrum_[k] / static_cast<double>(total));
    }
    clipped_mass_ = absolute > 0.0 ? negative / absolute : 0.0;

    output_total_ = 1;
    for (std::size_t n : dims_) output_total_ *= n;
    // Row-major offsets of the output sub-lattice inside the embedded lattice.
    offsets_.resize(output_total_);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t flat = 0; flat < output_total_; ++flat) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < d; ++i) off = off * embedded_[i] + idx[i];
      offsets_[flat] = off;
      for (std::size_t i = d; i-- > 0;) {
        if (++idx[i] < dims_[i]) break;
        idx[i] = 0;
      }
    }
    return true;
  }

  void extract(const fftw_complex* buf, std::span<double> out, int part) const {
    for (std::size_t i = 0; i < output_total_; ++i) out[i] = buf[offsets_[i]][part];
  }

  std::vector<std::size_t> dims_;
  std::vector<std::size_t> embedded_;
  std::size_t embedded_total_ = 0;
  std::size_t output_total_ = 0;
  std::vector<double> spectrum_;
  std::vector<double> scale_;
  std::vector<std::size_t> offsets_;
  detail::SharedPlan plan_;
  double clipped_mass_ = 0.0;
  double last_min_eigenvalue_ = 0.0;
};

/// 1-D convenience wrapper: covariance given as a function of the nonnegative lag index.
inline Embedding make_embedding_1d(std::size_t n, const std::function<double(std::size_t)>& covariance,
                                   EmbeddingOptions options = {}) {
  return Embedding({n}, [&](std::span<const long> lag) {
    return covariance(static_cast<std::size_t>(std::abs(lag[0])));
  }, options);
}

}  // namespace gext::circulant
