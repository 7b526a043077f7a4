#pragma once

#include <cstddef>
#include <span>

#include "foa/clustering.hpp"
#include "foa/encoders.hpp"
#include "foa/error.hpp"
#include "foa/matrix.hpp"
#include "foa/rng.hpp"
#include "foa/transport.hpp"

namespace foa {

inline constexpr double kDefaultEta = 0.2;
inline constexpr double kDefaultLambda = 0.1;

/// total = coarse_weight * coarse + eta * fine. coarse_weight is 1 for the
/// full loss and 0 only when the global term is ablated.
struct LossBreakdown {
  double coarse = 0.0;
  double fine = 0.0;
  double total = 0.0;
  double eta = kDefaultEta;
  double coarse_weight = 1.0;
};

struct CoarseLossGrad {
  double value = 0.0;
  Vector d_x;
};

/// 1 - cos(X, Y) and its gradient w.r.t. X.
inline CoarseLossGrad coarse_loss_grad(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && !x.empty(), ErrorCode::ShapeMismatch,
          "coarse loss needs equal-length features");
  const double nx = norm2(x);
  const double ny = norm2(y);
  require(nx >= 1e-12 && ny >= 1e-12, ErrorCode::ZeroNorm, "coarse loss on a zero-norm feature");
  const double cos = dot(x, y) / (nx * ny);
  CoarseLossGrad out;
  out.value = 1.0 - std::clamp(cos, -1.0, 1.0);
  out.d_x.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.d_x[i] = -(y[i] / (nx * ny) - cos * x[i] / (nx * nx));
  return out;
}

struct LossOptions {
  double eta = kDefaultEta;
  double lambda = kDefaultLambda;
  bool include_coarse = true;
  std::size_t sinkhorn_max_iter = 1000;
};

/// Loss value, feature gradients, and the discrete structure (clusters and
/// plan) the gradient was taken at.
struct FoaLoss {
  LossBreakdown breakdown;
  Vector d_global;
  Matrix d_patches;
  ClusterResult adv_clusters;
  TransportPlan plan;
};

/// Target side of the loss: the global feature (from the same view the
/// adversarial global is taken on) and the cached target cluster centers.
struct TargetFeatures {
  Vector global;
  ClusterResult clusters;
};

inline FoaLoss foa_loss(const FeatureSet& adv, const TargetFeatures& target, std::size_t n,
                        const LossOptions& opt, Rng rng) {
  require(target.clusters.cluster_count() == n, ErrorCode::ShapeMismatch,
          "target clusters were computed with a different n");
  require(adv.patches.rows() >= n, ErrorCode::TooFewPoints, "fewer adversarial patches than clusters");

  FoaLoss out;
  const auto coarse = coarse_loss_grad(adv.global, target.global);
  out.adv_clusters = kmeans(adv.patches, n, rng);

  SinkhornOptions so;
  so.lambda = opt.lambda;
  so.max_iter = opt.sinkhorn_max_iter;
  auto fine = sinkhorn_loss_grad(out.adv_clusters.centers, target.clusters.centers, so);
  out.plan = std::move(fine.plan);

  auto& b = out.breakdown;
  b.coarse = coarse.value;
  b.fine = fine.cost;
  b.eta = opt.eta;
  b.coarse_weight = opt.include_coarse ? 1.0 : 0.0;
  b.total = b.coarse_weight * b.coarse + b.eta * b.fine;

  out.d_global = coarse.d_x;
  if (!opt.include_coarse) std::fill(out.d_global.begin(), out.d_global.end(), 0.0);
  out.d_patches = kmeans_vjp(adv.patches, out.adv_clusters, fine.d_x_clu);
  for (double& g : out.d_patches.flat()) g *= opt.eta;
  return out;
}

/// Loss value with the adversarial assignment and transport plan frozen; the
/// finite-difference reference for foa_loss gradients.
inline double foa_loss_frozen(const FeatureSet& adv, const TargetFeatures& target,
                              const std::vector<std::size_t>& assignment, const Matrix& plan,
                              const LossOptions& opt) {
  const std::size_t n = target.clusters.cluster_count();
  const Matrix centers = detail::cluster_means(adv.patches, assignment, n);
  const CostMatrix c = cost_matrix(centers, target.clusters.centers);
  double fine = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) fine += c.matrix().flat()[i] * plan.flat()[i];
  const double coarse = 1.0 - cosine(adv.global, target.global);
  return (opt.include_coarse ? coarse : 0.0) + opt.eta * fine;
}

}  // namespace foa
