#pragma once

// Independent numerical checks of the analytic machinery: central finite
// differences against every hand-derived gradient, brute-force OT against
// Sinkhorn, exhaustive partitions against k-means, and inner-product adjoint
// identities for the resampling maps. Used by `foa oracle` and the
// acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "foa/attack.hpp"
#include "foa/clustering.hpp"
#include "foa/encoders.hpp"
#include "foa/image.hpp"
#include "foa/losses.hpp"
#include "foa/rng.hpp"
#include "foa/transport.hpp"

namespace foa::oracle {

struct Check {
  std::string name;
  std::size_t trials = 0;
  double worst = 0.0;  // largest observed error measure
  double tolerance = 0.0;
  bool passed = true;
  nlohmann::json failing;  // first failing instance, for replay

  void record(double err, const std::function<nlohmann::json()>& instance) {
    ++trials;
    if (!std::isnan(worst) && !(err <= worst)) worst = err;  // NaN sticks
    if (!(err <= tolerance) && passed) {
      passed = false;
      failing = instance();
      failing["error"] = err;
    }
  }
};

inline Check make_check(std::string name, double tolerance) {
  Check c;
  c.name = std::move(name);
  c.tolerance = tolerance;
  return c;
}

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline nlohmann::json to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline nlohmann::json to_json(const Image& img) {
  return {{"height", img.height()}, {"width", img.width()},
          {"data", std::vector<double>(img.flat().begin(), img.flat().end())}};
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& x : m.flat()) x = rng.uniform(lo, hi);
  return m;
}

inline Image random_image(std::size_t h, std::size_t w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Image img(h, w);
  for (double& x : img.flat()) x = rng.uniform(lo, hi);
  return img;
}

inline CostMatrix random_cost(std::size_t n, Rng& rng) {
  return CostMatrix(random_matrix(n, n, rng, 0.0, 2.0));
}

/// Adversary-side encoders used by the gradient suites: one of each kind,
/// small enough for dense finite differences.
inline std::vector<EncoderSpec> oracle_encoders(std::uint64_t seed) {
  return {init_encoder(EncoderKind::PatchLinear, {8, 8, 4, 6}, seed, "pl-oracle"),
          init_encoder(EncoderKind::AttentionBlock, {8, 8, 4, 6}, seed + 1, "attn-oracle"),
          init_encoder(EncoderKind::AttentionBlock, {8, 8, 2, 5}, seed + 2, "attn2-oracle")};
}

// ---------------------------------------------------------------------------
// Gradient suite

inline constexpr double kFdStep = 1e-4;

inline std::vector<Check> gradient_checks(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  const auto encs = oracle_encoders(seed);
  Check enc = make_check("encode_vjp central difference", 1e-5);
  Check zero = make_check("encode_vjp zero cotangent", 0.0);
  Check coarse = make_check("coarse_loss_grad central difference", 1e-6);
  Check fine = make_check("sinkhorn_loss_grad frozen-plan difference", 1e-5);
  Check km = make_check("kmeans_vjp frozen-assignment difference", 1e-6);
  Check chain = make_check("crop-resize-encode-foa_loss chained difference", 1e-4);

  for (std::size_t t = 0; t < trials; ++t) {
    // encode_vjp: <J v, (g, P)> against <v, J^T (g, P)>
    const EncoderSpec& e = encs[t % encs.size()];
    const Image x = random_image(e.dims.input_h, e.dims.input_w, rng);
    const Image v = random_image(e.dims.input_h, e.dims.input_w, rng, -1.0, 1.0);
    const Vector dg = [&] {
      Vector g(e.dims.embed_dim);
      for (double& z : g) z = rng.uniform(-1.0, 1.0);
      return g;
    }();
    const Matrix dp = random_matrix(e.dims.patch_count(), e.dims.embed_dim, rng);
    auto pairing = [&](const Image& img) {
      const FeatureSet fs = encode(e, img);
      return dot(fs.global, dg) + dot(fs.patches.flat(), dp.flat());
    };
    auto shifted = [&](double h) {
      Image y = x;
      axpy(h, v.flat(), y.flat());
      return y;
    };
    const double fd = (pairing(shifted(kFdStep)) - pairing(shifted(-kFdStep))) / (2.0 * kFdStep);
    const double an = dot(encode_vjp(e, x, dg, dp).flat(), v.flat());
    enc.record(rel_err(fd, an), [&] {
      return nlohmann::json{{"encoder", e.name}, {"fd", fd}, {"analytic", an}, {"image", to_json(x)}};
    });

    const InputGradient g0 = encode_vjp(e, x, Vector(e.dims.embed_dim, 0.0),
                                        Matrix(e.dims.patch_count(), e.dims.embed_dim));
    zero.record(max_abs(g0.flat()), [&] { return nlohmann::json{{"encoder", e.name}}; });

    // coarse loss, d = 16
    {
      Vector a(16), b(16), dir(16);
      for (std::size_t i = 0; i < 16; ++i) {
        a[i] = rng.uniform(-1.0, 1.0);
        b[i] = rng.uniform(-1.0, 1.0);
        dir[i] = rng.uniform(-1.0, 1.0);
      }
      auto value = [&](double h) {
        Vector y = a;
        axpy(h, dir, y);
        return 1.0 - dot(y, b) / (norm2(y) * norm2(b));
      };
      const double cfd = (value(kFdStep) - value(-kFdStep)) / (2.0 * kFdStep);
      const double can = dot(coarse_loss_grad(a, b).d_x, dir);
      coarse.record(rel_err(cfd, can), [&] { return nlohmann::json{{"x", a}, {"y", b}, {"dir", dir}}; });
    }

    // Sinkhorn loss with the plan frozen, n = 3, d = 8
    {
      const Matrix xc = random_matrix(3, 8, rng);
      const Matrix yc = random_matrix(3, 8, rng);
      const Matrix dir = random_matrix(3, 8, rng);
      const auto res = sinkhorn_loss_grad(xc, yc);
      auto value = [&](double h) {
        Matrix y = xc;
        axpy(h, dir.flat(), y.flat());
        const CostMatrix c = cost_matrix(y, yc);
        return dot(c.matrix().flat(), res.plan.plan.flat());
      };
      const double sfd = (value(kFdStep) - value(-kFdStep)) / (2.0 * kFdStep);
      const double san = dot(res.d_x_clu.flat(), dir.flat());
      fine.record(rel_err(sfd, san),
                  [&] { return nlohmann::json{{"x_clu", to_json(xc)}, {"y_clu", to_json(yc)}}; });
    }

    // k-means centers with the assignment frozen
    {
      const std::size_t m = 6 + t % 5, n = 1 + t % 3, d = 4;
      const Matrix pts = random_matrix(m, d, rng);
      const Matrix dir = random_matrix(m, d, rng);
      const Matrix dc = random_matrix(n, d, rng);
      const ClusterResult cr = kmeans(pts, n, rng.derive({t}));
      auto value = [&](double h) {
        Matrix y = pts;
        axpy(h, dir.flat(), y.flat());
        return dot(detail::cluster_means(y, cr.assignment, n).flat(), dc.flat());
      };
      const double kfd = (value(kFdStep) - value(-kFdStep)) / (2.0 * kFdStep);
      const double kan = dot(kmeans_vjp(pts, cr, dc).flat(), dir.flat());
      km.record(rel_err(kfd, kan), [&] { return nlohmann::json{{"points", to_json(pts)}, {"n", n}}; });
    }

    // Full per-encoder pipeline of one attack step, structure frozen, on 5 pixels.
    {
      const std::size_t h = 12, w = 12, n = 2;
      const Image adv = random_image(h, w, rng);
      const Image tar = random_image(h, w, rng);
      Rng crop_rng = rng.derive({t, 77});
      const CropParams crop = sample_crop(h, w, crop_rng, 0.5, 1.0);
      const LossOptions lo{};
      const detail::EncoderContext ctx{&e, {}};
      const Rng adv_rng = rng.derive({t, 1}), tar_rng = rng.derive({t, 2});
      const auto ev = detail::evaluate_encoder(ctx, adv, tar, crop, n, lo, adv_rng, tar_rng, true);

      const Image tar_view = bilinear_resize(apply_crop(tar, crop), e.dims.input_h, e.dims.input_w);
      const FeatureSet ft = encode(e, tar_view);
      TargetFeatures target{ft.global, kmeans(ft.patches, n, tar_rng)};
      auto value = [&](const Image& img) {
        const Image view = bilinear_resize(apply_crop(img, crop), e.dims.input_h, e.dims.input_w);
        return foa_loss_frozen(encode(e, view), target, ev.loss.adv_clusters.assignment,
                               ev.loss.plan.plan, lo);
      };
      for (int k = 0; k < 5; ++k) {
        const std::size_t idx = rng.below(adv.size());
        Image up = adv, dn = adv;
        up.flat()[idx] += kFdStep;
        dn.flat()[idx] -= kFdStep;
        const double pfd = (value(up) - value(dn)) / (2.0 * kFdStep);
        const double pan = ev.grad.flat()[idx];
        chain.record(rel_err(pfd, pan), [&] {
          return nlohmann::json{{"encoder", e.name}, {"pixel", idx}, {"fd", pfd}, {"analytic", pan},
                                {"crop", {crop.top, crop.left, crop.height, crop.width}}};
        });
      }
    }
  }
  return {enc, zero, coarse, fine, km, chain};
}

// ---------------------------------------------------------------------------
// Transport suite

inline constexpr double kSmallLambda = 0.001;
// Budgets for running to the 1e-9 tolerance rather than the default cap.
inline constexpr std::size_t kAnnealStageMaxIter = 100000;

// Default scaling budget, then Newton on whatever residual is left.
inline SinkhornOptions converged_options(double lambda = kDefaultLambda) {
  SinkhornOptions o;
  o.lambda = lambda;
  o.newton_polish = true;
  return o;
}

inline SinkhornOptions small_lambda_options(double lambda = kSmallLambda) {
  SinkhornOptions o;
  o.lambda = lambda;
  o.max_iter = kAnnealStageMaxIter;
  o.anneal = true;
  o.newton_polish = true;
  return o;
}

inline std::vector<Check> transport_checks(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  Check marg = make_check("sinkhorn marginal residual (lambda 0.1)", 1e-9);
  Check exact = make_check("annealed sinkhorn cost vs brute-force OT (lambda 0.001)", 1e-3);
  Check lower = make_check("sinkhorn cost >= exact cost", 1e-12);
  Check shift = make_check("plan invariant to constant cost shift", 1e-9);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 2 + t % 4;
    const CostMatrix c = random_cost(n, rng);
    auto inst = [&] { return nlohmann::json{{"cost", to_json(c.matrix())}}; };
    const TransportPlan p = sinkhorn(c, converged_options());
    marg.record(p.marginal_residual, inst);
    const TransportPlan ps = sinkhorn(c, small_lambda_options());
    const ExactTransport ex = exact_ot_bruteforce(c);
    exact.record(std::abs(ps.cost - ex.cost), inst);
    lower.record(std::max(0.0, ex.cost - p.cost), inst);

    Matrix plus = c.matrix();
    const double k = rng.uniform(0.0, 2.0 - *std::max_element(plus.flat().begin(), plus.flat().end()));
    for (double& x : plus.flat()) x += k;
    SinkhornOptions plain;
    plain.reduce_costs = false;
    const TransportPlan a = sinkhorn(c, plain);
    const TransportPlan b = sinkhorn(CostMatrix(plus), plain);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.plan.size(); ++i)
      diff = std::max(diff, std::abs(a.plan.flat()[i] - b.plan.flat()[i]));
    shift.record(diff, inst);
  }
  return {marg, exact, lower, shift};
}

// Cost reduced by exact dual potentials of the assignment LP: nonnegative,
// zero on the optimal permutation. Duals come from the difference
// constraints beta_j - beta_sigma(i) <= C_ij - C_i,sigma(i), solved by
// Bellman-Ford (no negative cycle because sigma is optimal).
inline Matrix dual_reduced_cost(const CostMatrix& c, const std::vector<std::size_t>& sigma) {
  const std::size_t n = c.n();
  std::vector<double> beta(n, 0.0);
  for (std::size_t pass = 0; pass < n; ++pass)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        beta[j] = std::min(beta[j], beta[sigma[i]] + c(i, j) - c(i, sigma[i]));
  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      r(i, j) = std::max(0.0, c(i, j) - c(i, sigma[i]) - (beta[j] - beta[sigma[i]]));
  return r;
}

struct LambdaGap {
  std::vector<double> lambdas;
  // sum_ab pi_ab * reduced_ab: the entropic excess over the exact optimum,
  // computed without the cancellation in (sinkhorn cost - exact cost)
  std::vector<double> gaps;
  std::vector<double> raw_gaps;  // sinkhorn cost - exact cost
  bool strictly_decreasing = true;
};

inline LambdaGap lambda_gap_sweep(const CostMatrix& c, std::vector<double> lambdas = {0.1, 0.01, 0.001}) {
  LambdaGap out;
  out.lambdas = lambdas;
  const auto exact = exact_ot_bruteforce(c);
  const Matrix reduced = dual_reduced_cost(c, exact.permutation);
  for (double l : lambdas) {
    const auto p = sinkhorn(c, small_lambda_options(l));
    double g = 0.0;
    for (std::size_t k = 0; k < reduced.size(); ++k) g += p.plan.data()[k] * reduced.data()[k];
    out.gaps.push_back(g);
    out.raw_gaps.push_back(p.cost - exact.cost);
  }
  for (std::size_t i = 1; i < out.gaps.size(); ++i)
    out.strictly_decreasing = out.strictly_decreasing && out.gaps[i] < out.gaps[i - 1];
  return out;
}

// ---------------------------------------------------------------------------
// k-means suite

// Minimum Lloyd objective over every assignment of m points to n nonempty clusters.
inline double optimal_partition_objective(const Matrix& pts, std::size_t n) {
  const std::size_t m = pts.rows();
  std::vector<std::size_t> a(m, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::size_t> count(n, 0);
    for (std::size_t x : a) ++count[x];
    if (std::all_of(count.begin(), count.end(), [](std::size_t c) { return c > 0; })) {
      const Matrix c = detail::cluster_means(pts, a, n);
      best = std::min(best, detail::lloyd_objective(pts, c, a));
    }
    std::size_t i = 0;
    while (i < m && ++a[i] == n) a[i++] = 0;
    if (i == m) break;
  }
  return best;
}

inline std::vector<Check> kmeans_checks(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  Check means = make_check("centers equal member means", 1e-10);
  Check nearest = make_check("assignment is a Lloyd fixed point", 0.0);
  Check bound = make_check("objective >= exhaustive optimum", 1e-12);
  Check planted = make_check("planted separated clusters reach the exhaustive optimum", 1e-9);
  Check mono = make_check("Lloyd objective non-increasing", 1e-12);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 1 + t % 3;
    const std::size_t m = n + 2 + t % 4;  // at most 8 points keeps enumeration small
    const Matrix pts = random_matrix(m, 2, rng);
    const ClusterResult cr = kmeans(pts, n, rng.derive({t}));
    auto inst = [&] { return nlohmann::json{{"points", to_json(pts)}, {"n", n}}; };

    const Matrix mc = detail::cluster_means(pts, cr.assignment, n);
    double dm = 0.0;
    for (std::size_t i = 0; i < mc.size(); ++i) dm = std::max(dm, std::abs(mc.flat()[i] - cr.centers.flat()[i]));
    means.record(dm, inst);
    nearest.record(detail::assign_points(pts, cr.centers) == cr.assignment ? 0.0 : 1.0, inst);
    const double obj = detail::lloyd_objective(pts, cr.centers, cr.assignment);
    bound.record(std::max(0.0, optimal_partition_objective(pts, n) - obj), inst);
    double rise = 0.0;
    for (std::size_t i = 1; i < cr.objective_trace.size(); ++i)
      rise = std::max(rise, cr.objective_trace[i] - cr.objective_trace[i - 1]);
    mono.record(rise, inst);

    // n well-separated blobs of tight points
    Matrix sep(m, 2);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t blob = i % n;
      sep(i, 0) = 100.0 * static_cast<double>(blob) + rng.uniform(-0.5, 0.5);
      sep(i, 1) = rng.uniform(-0.5, 0.5);
    }
    const ClusterResult cs = kmeans(sep, n, rng.derive({t, 1}));
    const double gap = detail::lloyd_objective(sep, cs.centers, cs.assignment) -
                       optimal_partition_objective(sep, n);
    planted.record(std::abs(gap), [&] { return nlohmann::json{{"points", to_json(sep)}, {"n", n}}; });
  }
  return {means, nearest, bound, planted, mono};
}

// ---------------------------------------------------------------------------
// Adjoint suite

inline std::vector<Check> adjoint_checks(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  Check resize = make_check("bilinear resize adjoint identity", 1e-10);
  Check crop = make_check("crop-resize adjoint identity", 1e-10);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t ih = 1 + rng.below(12), iw = 1 + rng.below(12);
    const std::size_t oh = 1 + rng.below(12), ow = 1 + rng.below(12);
    const Image x = random_image(ih, iw, rng, -1.0, 1.0);
    const Image g = random_image(oh, ow, rng, -1.0, 1.0);
    const double lhs = dot(bilinear_resize(x, oh, ow).flat(), g.flat());
    const double rhs = dot(x.flat(), bilinear_resize_vjp(ih, iw, g).flat());
    resize.record(rel_err(lhs, rhs, 1.0), [&] {
      return nlohmann::json{{"in", {ih, iw}}, {"out", {oh, ow}}, {"x", to_json(x)}};
    });

    const std::size_t h = 4 + rng.below(16), w = 4 + rng.below(16);
    Rng crng = rng.derive({t});
    const CropParams p = sample_crop(h, w, crng, 0.5, 1.0);
    const Image cx = random_image(h, w, rng, -1.0, 1.0);
    const Image cg = random_image(h, w, rng, -1.0, 1.0);
    const double cl = dot(apply_crop(cx, p).flat(), cg.flat());
    const double cr = dot(cx.flat(), apply_crop_vjp(h, w, p, cg).flat());
    crop.record(rel_err(cl, cr, 1.0), [&] {
      return nlohmann::json{{"shape", {h, w}}, {"crop", {p.top, p.left, p.height, p.width}}};
    });
  }
  return {resize, crop};
}

inline std::vector<SuiteReport> run_suites(const std::string& suite, std::size_t trials,
                                           std::uint64_t seed) {
  std::vector<SuiteReport> out;
  auto want = [&](const char* s) { return suite == "all" || suite == s; };
  if (want("grad")) out.push_back({"grad", gradient_checks(trials, seed)});
  if (want("ot")) out.push_back({"ot", transport_checks(trials, seed)});
  if (want("kmeans")) out.push_back({"kmeans", kmeans_checks(trials, seed)});
  if (want("adjoint")) out.push_back({"adjoint", adjoint_checks(trials, seed)});
  require(!out.empty(), ErrorCode::InvalidConfig, "unknown oracle suite '" + suite + "'");
  return out;
}

}  // namespace foa::oracle
