#include <gtest/gtest.h>

#include <cmath>

#include "foa/losses.hpp"
#include "foa/oracles.hpp"

using namespace foa;

namespace {

struct Fixture {
  EncoderSpec enc = init_encoder(EncoderKind::AttentionBlock, {16, 16, 4, 16}, 3);
  Image adv, tar;
  FeatureSet fa, ft;

  explicit Fixture(std::uint64_t seed) {
    Rng rng(seed);
    adv = oracle::random_image(16, 16, rng);
    tar = oracle::random_image(16, 16, rng);
    fa = encode(enc, adv);
    ft = encode(enc, tar);
  }

  TargetFeatures target(std::size_t n, std::uint64_t seed) const {
    return {ft.global, kmeans(ft.patches, n, Rng(seed))};
  }
};

}  // namespace

TEST(CoarseLoss, SelfIsZeroWithOrthogonalGradient) {
  const Vector x{0.3, -1.2, 2.0, 0.7};
  const auto r = coarse_loss_grad(x, x);
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  EXPECT_LE(norm2(r.d_x), 1e-10);
  EXPECT_NEAR(dot(r.d_x, x), 0.0, 1e-12);
}

TEST(CoarseLoss, HandDifferentiated) {
  const auto r = coarse_loss_grad(Vector{1, 0}, Vector{0, 1});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_DOUBLE_EQ(r.d_x[0], 0.0);
  EXPECT_DOUBLE_EQ(r.d_x[1], -1.0);
}

TEST(CoarseLoss, FiniteDifference) {
  for (const auto& c : oracle::gradient_checks(20, 14)) {
    if (c.name.rfind("coarse_loss_grad", 0) != 0) continue;
    EXPECT_TRUE(c.passed) << c.worst;
    EXPECT_GE(c.trials, 20u);
    EXPECT_LE(c.tolerance, 1e-6);
  }
}

TEST(CoarseLoss, ZeroNorm) {
  EXPECT_THROW(coarse_loss_grad(Vector{0, 0}, Vector{1, 0}), Error);
}

TEST(FoaLoss, TotalIsExactCombination) {
  const Fixture f(1);
  for (double eta : {0.0, 0.2, 1.5}) {
    LossOptions o;
    o.eta = eta;
    const auto r = foa_loss(f.fa, f.target(3, 9), 3, o, Rng(4));
    const auto& b = r.breakdown;
    EXPECT_NEAR(b.total, b.coarse + eta * b.fine, 1e-12);
    EXPECT_GE(b.coarse, 0.0);
    EXPECT_LE(b.coarse, 2.0);
    EXPECT_GE(b.fine, 0.0);
  }
}

TEST(FoaLoss, EtaZeroDisablesFineGradient) {
  const Fixture f(2);
  LossOptions o;
  o.eta = 0.0;
  const auto r = foa_loss(f.fa, f.target(3, 9), 3, o, Rng(4));
  EXPECT_EQ(r.breakdown.total, r.breakdown.coarse);
  EXPECT_EQ(max_abs(r.d_patches.flat()), 0.0);
}

TEST(FoaLoss, SelfAlignment) {
  const Fixture f(3);
  LossOptions o;
  o.lambda = 0.01;
  // Matched seeds: identical clusterings, so only entropic leakage remains.
  const TargetFeatures self{f.fa.global, kmeans(f.fa.patches, 3, Rng(21))};
  const auto r = foa_loss(f.fa, self, 3, o, Rng(21));
  EXPECT_NEAR(r.breakdown.coarse, 0.0, 1e-10);
  EXPECT_LE(r.breakdown.fine, 1e-10);
  // Default lambda keeps a little mass off the diagonal.
  const auto d = foa_loss(f.fa, self, 3, LossOptions{}, Rng(21));
  EXPECT_NEAR(d.breakdown.coarse, 0.0, 1e-10);
  EXPECT_LE(d.breakdown.fine, 1e-2);
}

TEST(FoaLoss, DeterministicGivenSeed) {
  const Fixture f(4);
  const auto t = f.target(3, 9);
  const auto a = foa_loss(f.fa, t, 3, LossOptions{}, Rng(8));
  const auto b = foa_loss(f.fa, t, 3, LossOptions{}, Rng(8));
  EXPECT_EQ(a.breakdown.total, b.breakdown.total);
  EXPECT_EQ(a.d_patches, b.d_patches);
  EXPECT_EQ(a.d_global, b.d_global);
}

TEST(FoaLoss, GradientLinearInEta) {
  const Fixture f(5);
  const auto t = f.target(3, 9);
  LossOptions o1, o2;
  o1.eta = 0.2;
  o2.eta = 0.4;
  const auto a = foa_loss(f.fa, t, 3, o1, Rng(8));
  const auto b = foa_loss(f.fa, t, 3, o2, Rng(8));
  EXPECT_EQ(a.d_global, b.d_global);
  for (std::size_t i = 0; i < a.d_patches.size(); ++i)
    EXPECT_NEAR(b.d_patches.flat()[i], 2.0 * a.d_patches.flat()[i],
                1e-15 * std::abs(a.d_patches.flat()[i]) + 1e-300);
}

TEST(FoaLoss, WithoutCoarseTerm) {
  const Fixture f(6);
  LossOptions o;
  o.include_coarse = false;
  const auto r = foa_loss(f.fa, f.target(3, 9), 3, o, Rng(8));
  EXPECT_NEAR(r.breakdown.total, o.eta * r.breakdown.fine, 1e-15);
  EXPECT_EQ(max_abs(r.d_global), 0.0);
}

TEST(FoaLoss, Preconditions) {
  const Fixture f(7);
  EXPECT_THROW(foa_loss(f.fa, f.target(3, 9), 5, LossOptions{}, Rng(1)), Error);
  FeatureSet few = f.fa;
  few.patches = Matrix(2, 16, 0.1);
  EXPECT_THROW(foa_loss(few, f.target(3, 9), 3, LossOptions{}, Rng(1)), Error);
}

TEST(FoaLoss, PipelineFiniteDifference) {
  for (const auto& c : oracle::gradient_checks(20, 15)) {
    if (c.name.find("chained") == std::string::npos) continue;
    EXPECT_TRUE(c.passed) << c.worst << " " << c.failing.dump();
    EXPECT_GE(c.trials, 100u);  // 20 instances x 5 pixels
  }
}

TEST(FoaLoss, FeatureGradientMatchesFrozenDifference) {
  // Feature-level check of d_global and d_patches against foa_loss_frozen.
  const Fixture f(8);
  const auto t = f.target(3, 9);
  const auto r = foa_loss(f.fa, t, 3, LossOptions{}, Rng(2));
  Rng rng(5);
  const double h = 1e-5;
  for (int k = 0; k < 10; ++k) {
    FeatureSet up = f.fa, dn = f.fa;
    double an;
    if (k % 2 == 0) {
      const std::size_t i = rng.below(16);
      up.global[i] += h;
      dn.global[i] -= h;
      an = r.d_global[i];
    } else {
      const std::size_t i = rng.below(f.fa.patches.size());
      up.patches.flat()[i] += h;
      dn.patches.flat()[i] -= h;
      an = r.d_patches.flat()[i];
    }
    const double fd = (foa_loss_frozen(up, t, r.adv_clusters.assignment, r.plan.plan, LossOptions{}) -
                       foa_loss_frozen(dn, t, r.adv_clusters.assignment, r.plan.plan, LossOptions{})) /
                      (2 * h);
    EXPECT_LT(oracle::rel_err(fd, an), 1e-5) << fd << " vs " << an;
  }
}
