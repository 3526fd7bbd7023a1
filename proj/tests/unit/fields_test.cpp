// Correlation models, condition validators and the exact lattice samplers.

#include "gext/fields.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace gf = gext::fields;
namespace gg = gext::geometry;

namespace {

// Draws `n` fields and returns the sample covariance of the values at flat indices i and j
// together with a standard error for it.
struct CovEstimate {
  double value = 0.0;
  double se = 0.0;
};

template <class Sampler>
CovEstimate empirical_cov(const Sampler& sampler, std::size_t size, std::size_t i, std::size_t j, int n,
                          std::uint64_t seed) {
  gf::Scratch scratch;
  std::vector<double> out(size);
  double s = 0.0, s2 = 0.0;
  for (int r = 0; r < n; ++r) {
    gext::NormalSource normals(gext::derive_seed(seed, r));
    sampler.sample(normals, scratch, out);
    const double p = out[i] * out[j];
    s += p;
    s2 += p * p;
  }
  const double mean = s / n;
  return {mean, std::sqrt((s2 / n - mean * mean) / n)};
}

}  // namespace

TEST(Correlation, ClosedForms) {
  const auto sep = gf::CorrelationModel::separable({1.0, 1.0});
  const std::vector<double> zero{0.0, 0.0};
  const std::vector<double> t{1.0, 0.0};
  EXPECT_DOUBLE_EQ(gf::correlation(sep, zero), 1.0);
  EXPECT_NEAR(gf::correlation(sep, t), 0.36787944117144233, 1e-15);

  const auto mix = gf::CorrelationModel::mixture({2.0, 2.0}, 0.5, std::exp(5.0));
  EXPECT_DOUBLE_EQ(mix.rho(), 0.1);
  EXPECT_DOUBLE_EQ(gf::correlation(mix, zero), 1.0);
  const std::vector<double> across{1.5, 0.25};
  EXPECT_EQ(gf::correlation(mix, across), mix.rho());
  const std::vector<double> inside{0.5, 0.25};
  EXPECT_DOUBLE_EQ(gf::correlation(mix, inside), (1.0 - 0.1) * gf::correlation(mix.base(), inside) + 0.1);
}

TEST(Correlation, CovarianceCaseSplit) {
  const auto mix = gf::CorrelationModel::mixture({2.0, 1.0}, 0.5, 100.0, 1, 1.0);
  const double rho = 0.5 / std::log(100.0);
  // Coordinate 0 is bounded, so only coordinate 1 is split into blocks.
  const std::vector<double> s{0.2, 0.3};
  const std::vector<double> same{3.7, 0.9};
  const std::vector<double> other{0.2, 1.1};
  const std::vector<double> lag{3.5, 0.6};
  EXPECT_DOUBLE_EQ(gf::covariance(mix, s, same), (1.0 - rho) * gf::separable_correlation(mix.alphas, lag) + rho);
  EXPECT_EQ(gf::covariance(mix, s, other), rho);
}

TEST(Correlation, A2StrictlyBelowOneAwayFromZero) {
  const auto sep = gf::CorrelationModel::separable({2.0, 0.5});
  const auto mix = gf::CorrelationModel::mixture({2.0, 0.5}, 0.5, 50.0);
  for (double a : {0.1, 0.7, 3.0}) {
    const std::vector<double> t{a, -a / 2};
    EXPECT_LT(gf::correlation(sep, t), 1.0 - 1e-3);
    EXPECT_LT(gf::correlation(mix, t), 1.0 - 1e-3);
  }
}

TEST(CorrelationModel, Validation) {
  EXPECT_THROW(gf::CorrelationModel::separable({}), gext::ValidationError);
  EXPECT_THROW(gf::CorrelationModel::separable({2.5}), gext::ValidationError);
  EXPECT_THROW(gf::CorrelationModel::mixture({2.0}, 3.0, std::exp(2.0)), gext::ValidationError);
  EXPECT_THROW(gf::CorrelationModel::mixture({2.0}, 0.5, 1.0), gext::ValidationError);
  EXPECT_THROW(gf::family_from_string("gaussian"), gext::ValidationError);
  EXPECT_EQ(gf::family_from_string(gf::to_string(gf::Family::mixture_strong)), gf::Family::mixture_strong);
}

TEST(VerifyA1, SeparableModelPasses) {
  const auto m = gf::CorrelationModel::separable({2.0, 1.0});
  const auto rep = gf::verify_A1(m, 1e-2, 1e-2);
  EXPECT_TRUE(rep.pass);
  for (double v : rep.sup_ratio) EXPECT_LT(v, 1e-2);

  const auto smooth = gf::CorrelationModel::separable({2.0});
  EXPECT_LT(gf::verify_A1(smooth, 1e-3, 1e-2).sup_ratio.front(), gf::verify_A1(smooth, 1e-1, 1e-2).sup_ratio.front());
}

TEST(VerifyA1, BrokenModelFails) {
  const std::vector<double> alphas{1.0};
  const auto rep = gf::verify_A1([](std::span<const double> t) { return 1.0 - 2.0 * std::abs(t[0]); }, alphas, 1e-2,
                                 1e-2);
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.sup_ratio.back(), 1.0, 1e-9);
}

TEST(VerifyA3, SeparableDecaysAndConstantDiverges) {
  const auto m = gf::CorrelationModel::separable({2.0, 1.0});
  const std::vector<double> radii{10.0, 25.0, 50.0};
  const auto rep = gf::verify_A3(m, radii);
  EXPECT_TRUE(rep.pass);
  EXPECT_LT(rep.max_deviation.back(), 1e-15);

  const auto bad = gf::verify_A3([](std::span<const double>) { return 0.5; }, 2, 0.0, radii);
  EXPECT_FALSE(bad.pass);
  EXPECT_GT(bad.max_deviation.back(), bad.max_deviation.front());
  EXPECT_THROW(gf::verify_A3(m, std::vector<double>{1.0, 5.0}), gext::ValidationError);
}

TEST(VerifyA3, MixtureWithinBlockValueIsRecorded) {
  // r(t)·log‖t‖ at ‖t‖ = √T with one block covering the window: ≈ ρ·log √T = R/2.
  const double T = std::exp(40.0);
  const auto m = gf::CorrelationModel::mixture({2.0}, 0.5, T, 0, 2.0 * std::sqrt(T));
  const std::vector<double> t{std::sqrt(T)};
  EXPECT_NEAR(gf::correlation(m, t) * std::log(std::sqrt(T)), 0.25, 1e-12);
}

TEST(PsdFactor, RejectsIndefiniteMatrices) {
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(gf::psd_factor(bad), gext::FactorizationError);
  Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(3, 3);
  const auto L = gf::psd_factor(singular);
  EXPECT_EQ(L.cols(), 1);
  EXPECT_NEAR((L * L.transpose() - singular).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(SeparableSampler, ImpliedCovarianceIsExactOn16x16) {
  const std::vector<double> alphas{2.0, 1.0};
  const std::vector<double> spacings{0.0625, 0.2};
  const gf::SeparableSampler sampler({16, 16}, spacings, alphas);
  ASSERT_TRUE(sampler.all_dense());
  const Eigen::MatrixXd A = sampler.linear_map();
  const Eigen::MatrixXd C = A * A.transpose();
  double worst = 0.0;
  for (std::size_t a = 0; a < 256; ++a) {
    for (std::size_t b = 0; b < 256; ++b) {
      const std::vector<double> t{(static_cast<double>(b / 16) - static_cast<double>(a / 16)) * spacings[0],
                                  (static_cast<double>(b % 16) - static_cast<double>(a % 16)) * spacings[1]};
      worst = std::max(worst, std::abs(C(a, b) - gf::separable_correlation(alphas, t)));
    }
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(SeparableSampler, SampleMatchesLinearMap) {
  // With every axis dense, sample() is A·Z with Z read in order from the stream.
  const std::vector<double> alphas{1.0, 1.5, 2.0};
  const std::vector<double> spacings{0.3, 0.2, 0.5};
  const gf::SeparableSampler sampler({3, 4, 5}, spacings, alphas);
  const Eigen::MatrixXd A = sampler.linear_map();
  gext::NormalSource normals(42);
  gf::Scratch s;
  std::vector<double> out(sampler.size());
  sampler.sample(normals, s, out);
  gext::NormalSource replay(42);
  Eigen::VectorXd z(A.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = replay();
  const Eigen::VectorXd expected = A * z;
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], expected[static_cast<Eigen::Index>(i)], 1e-12);
}

TEST(SeparableSampler, CirculantAxesKeepTheCovariance) {
  // Force the circulant path on both axes and check moments empirically.
  const std::vector<double> alphas{1.0, 1.0};
  const std::vector<double> spacings{0.5, 0.25};
  const gf::SeparableSampler sampler({6, 5}, spacings, alphas, 2);
  ASSERT_FALSE(sampler.all_dense());
  const int n = 10000;
  const auto var = empirical_cov(sampler, sampler.size(), 7, 7, n, 1);
  EXPECT_NEAR(var.value, 1.0, 3.0 * var.se);
  // (0,0) and (2,0): lag (1.0, 0) → e^{-1}.
  const auto lag = empirical_cov(sampler, sampler.size(), 0, 10, n, 2);
  EXPECT_NEAR(lag.value, std::exp(-1.0), 3.0 * lag.se);
  const auto diag = empirical_cov(sampler, sampler.size(), 0, 6, n, 3);
  EXPECT_NEAR(diag.value, std::exp(-0.75), 3.0 * diag.se);
}

TEST(SeparableSampler, StationarityAcrossBasePoints) {
  const auto grid = gg::grid_with_spacings({0.0, 0.0}, {2.0, 1.0}, {0.25, 0.25});
  const gf::SeparableSampler sampler(grid, std::vector<double>{1.0, 2.0});
  const int n = 10000;
  // Lag (0.5, 0.25) from two base points.
  const std::size_t w = grid.counts[1];
  const auto a = empirical_cov(sampler, sampler.size(), 0, 2 * w + 1, n, 4);
  const auto b = empirical_cov(sampler, sampler.size(), 4 * w + 2, 6 * w + 3, n, 5);
  EXPECT_NEAR(a.value - b.value, 0.0, 3.0 * std::hypot(a.se, b.se));
}

TEST(SampleField, UnitVarianceAndLagCorrelation) {
  const auto model = gf::CorrelationModel::separable({1.0, 1.0});
  const auto grid = gg::grid_with_spacings({0.0, 0.0}, {1.0, 0.5}, {0.25, 0.25});
  const gf::SeparableSampler sampler(grid, model.alphas);
  const int n = 10000;
  const std::size_t w = grid.counts[1];
  const auto var = empirical_cov(sampler, sampler.size(), w + 1, w + 1, n, 6);
  EXPECT_NEAR(var.value, 1.0, 3.0 * var.se);
  const auto lag = empirical_cov(sampler, sampler.size(), 0, 4 * w, n, 7);
  EXPECT_NEAR(lag.value, std::exp(-1.0), 3.0 * lag.se);
}

TEST(SampleField, DeterministicPerSeed) {
  const auto model = gf::CorrelationModel::separable({2.0, 2.0});
  const auto grid = gg::build_grid({{0.0, 1.0}, {0.0, 1.0}}, model.alphas, 0.25, 3.0);
  const auto a = gf::sample_field(model, grid, 5);
  const auto b = gf::sample_field(model, grid, 5);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, gf::sample_field(model, grid, 6).values);
  for (double v : a.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(SampleField, BudgetIsEnforced) {
  const auto model = gf::CorrelationModel::separable({2.0, 2.0});
  gg::GridSpec grid;
  grid.spacings = {1.0, 1.0};
  grid.lower = {0.0, 0.0};
  grid.upper = {1.0, 1.0};
  grid.counts = {std::size_t{1} << 14, std::size_t{1} << 13};
  EXPECT_THROW(gf::sample_field(model, grid, 0), gext::BudgetError);
}

TEST(BlockPartition, UnitCellsAlongUnboundedAxes) {
  const auto grid = gg::grid_with_spacings({0.0, 0.0}, {2.5, 1.5}, {0.25, 0.5});
  const auto blocks = gf::block_partition(grid, 1, 1.0);
  // Axis 0 is bounded (one run); axis 1 has points 0, .5 | 1, 1.5.
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].len, (std::vector<std::size_t>{11, 2}));
  EXPECT_EQ(blocks[1].start, (std::vector<std::size_t>{0, 2}));
  const auto all = gf::block_partition(grid, 0, 1.0);
  EXPECT_EQ(all.size(), 6u);
  std::size_t covered = 0;
  for (const auto& b : all) covered += b.len[0] * b.len[1];
  EXPECT_EQ(covered, grid.total_points());
}

TEST(MixtureSampler, CovarianceWithinAndAcrossBlocks) {
  const auto model = gf::CorrelationModel::mixture({2.0, 2.0}, 0.5, std::exp(2.5));  // ρ = 0.2
  const auto grid = gg::grid_with_spacings({0.0, 0.0}, {1.5, 0.5}, {0.5, 0.5});
  const gf::MixtureSampler sampler(model, grid);
  EXPECT_DOUBLE_EQ(sampler.rho(), 0.2);
  const int n = 10000;
  const std::size_t w = grid.counts[1];
  // (0,0)–(0.5,0): same block; (0,0)–(1.5,0): different blocks.
  const auto same = empirical_cov(sampler, sampler.size(), 0, w, n, 8);
  const std::vector<double> lag{0.5, 0.0};
  EXPECT_NEAR(same.value, 0.8 * gf::separable_correlation(model.alphas, lag) + 0.2, 3.0 * same.se);
  const auto across = empirical_cov(sampler, sampler.size(), 0, 3 * w, n, 9);
  EXPECT_NEAR(across.value, 0.2, 3.0 * across.se);
  const auto var = empirical_cov(sampler, sampler.size(), 3 * w + 1, 3 * w + 1, n, 10);
  EXPECT_NEAR(var.value, 1.0, 3.0 * var.se);
}

TEST(StationarySampler, MatchesSeparableMoments) {
  const auto grid = gg::grid_with_spacings({0.0, 0.0}, {1.0, 1.0}, {0.25, 0.25});
  const std::vector<double> alphas{1.0, 1.0};
  const gf::StationarySampler sampler(grid, [&](std::span<const double> t) {
    return gf::separable_correlation(alphas, t);
  });
  EXPECT_EQ(sampler.clipped_mass(), 0.0);
  gf::Scratch s;
  std::vector<double> a(sampler.size()), b(sampler.size());
  double lag = 0.0;
  const int n = 5000;
  for (int r = 0; r < n; ++r) {
    gext::NormalSource normals(gext::derive_seed(11, r));
    sampler.sample_pair(normals, s, a, b);
    lag += a[0] * a[20] + b[0] * b[20];
  }
  EXPECT_NEAR(lag / (2 * n), std::exp(-1.0), 0.04);
}
