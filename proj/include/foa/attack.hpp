#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "foa/clustering.hpp"
#include "foa/encoders.hpp"
#include "foa/ensemble.hpp"
#include "foa/error.hpp"
#include "foa/image.hpp"
#include "foa/losses.hpp"
#include "foa/rng.hpp"

namespace foa {

struct AttackConfig {
  double epsilon = 16.0 / 255.0;
  double step_size = 1.0 / 255.0;
  std::size_t iterations = 300;
  double eta = kDefaultEta;
  double lambda = kDefaultLambda;
  double temperature = 1.0;
  double w_init = 1.0;
  std::vector<std::size_t> cluster_schedule{3, 5};
  double crop_scale_min = 0.5;
  double crop_scale_max = 1.0;
  std::uint64_t seed = 0;
  double fail_threshold = 0.1;
  // Ablation switches; both on for the full method.
  bool dynamic_weighting = true;
  bool global_alignment = true;
};

inline void validate(const AttackConfig& c) {
  auto check = [](bool ok, const char* what) { require(ok, ErrorCode::InvalidConfig, what); };
  check(std::isfinite(c.epsilon) && c.epsilon > 0.0 && c.epsilon <= 1.0, "epsilon must be in (0, 1]");
  check(std::isfinite(c.step_size) && c.step_size > 0.0 && c.step_size <= c.epsilon,
        "step size must satisfy 0 < step_size <= epsilon");
  check(std::isfinite(c.eta) && c.eta >= 0.0, "eta must be >= 0");
  check(std::isfinite(c.lambda) && c.lambda > 0.0, "lambda must be > 0");
  check(std::isfinite(c.temperature) && c.temperature > 0.0, "temperature must be > 0");
  check(std::isfinite(c.w_init) && c.w_init > 0.0, "w_init must be > 0");
  check(!c.cluster_schedule.empty(), "cluster schedule must be nonempty");
  for (std::size_t i = 0; i < c.cluster_schedule.size(); ++i) {
    check(c.cluster_schedule[i] >= 1, "cluster counts must be >= 1");
    check(i == 0 || c.cluster_schedule[i] > c.cluster_schedule[i - 1],
          "cluster schedule must be strictly increasing");
  }
  check(c.crop_scale_min > 0.0 && c.crop_scale_max <= 1.0 && c.crop_scale_min <= c.crop_scale_max,
        "crop scales must satisfy 0 < min <= max <= 1");
  check(std::isfinite(c.fail_threshold) && c.fail_threshold >= 0.0, "fail threshold must be >= 0");
}

// ---------------------------------------------------------------------------
// Crop-and-resize augmentation

struct CropParams {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  double scale = 1.0;

  friend bool operator==(const CropParams&, const CropParams&) = default;
};

inline CropParams sample_crop(std::size_t h, std::size_t w, Rng& rng, double scale_min,
                              double scale_max) {
  require(scale_min > 0.0 && scale_max <= 1.0 && scale_min <= scale_max, ErrorCode::InvalidConfig,
          "crop scales must satisfy 0 < min <= max <= 1");
  CropParams p;
  p.scale = scale_min == scale_max ? scale_min : rng.uniform(scale_min, scale_max);
  p.height = static_cast<std::size_t>(std::floor(p.scale * static_cast<double>(h)));
  p.width = static_cast<std::size_t>(std::floor(p.scale * static_cast<double>(w)));
  require(p.height >= 2 && p.width >= 2, ErrorCode::DegenerateCrop, "crop is smaller than 2x2");
  p.top = p.height == h ? 0 : rng.below(h - p.height + 1);
  p.left = p.width == w ? 0 : rng.below(w - p.width + 1);
  return p;
}

/// Crops `img` by `p` and resizes the crop back to the image's own size.
inline Image apply_crop(const Image& img, const CropParams& p) {
  require(p.top + p.height <= img.height() && p.left + p.width <= img.width(),
          ErrorCode::ShapeMismatch, "crop window exceeds the image");
  if (p.height == img.height() && p.width == img.width()) return img;
  Image crop(p.height, p.width);
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        crop.at(y, x, c) = img.at(p.top + y, p.left + x, c);
  return bilinear_resize(crop, img.height(), img.width());
}

/// Transpose of apply_crop for an image of size h x w.
inline InputGradient apply_crop_vjp(std::size_t h, std::size_t w, const CropParams& p,
                                    const InputGradient& g) {
  require(g.height() == h && g.width() == w, ErrorCode::ShapeMismatch,
          "crop cotangent must match the image size");
  if (p.height == h && p.width == w) return g;
  const InputGradient gc = bilinear_resize_vjp(p.height, p.width, g);
  InputGradient out(h, w);
  for (std::size_t y = 0; y < p.height; ++y)
    for (std::size_t x = 0; x < p.width; ++x)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        out.at(p.top + y, p.left + x, c) = gc.at(y, x, c);
  return out;
}

struct CroppedImage {
  Image image;
  CropParams params;
};

inline CroppedImage random_crop(const Image& img, Rng& rng, double scale_min, double scale_max) {
  require(!img.empty(), ErrorCode::EmptyImage, "cannot crop an empty image");
  const CropParams p = sample_crop(img.height(), img.width(), rng, scale_min, scale_max);
  return {apply_crop(img, p), p};
}

// ---------------------------------------------------------------------------
// Attack loop

struct StepRecord {
  std::size_t step = 0;
  std::vector<LossBreakdown> losses;  // per encoder
  Vector speeds;
  Vector weights;
  double weighted_total = 0.0;
  double delta_linf = 0.0;
  std::size_t clusters = 0;
};

struct AttackResult {
  Image adv_image;
  Image delta;
  std::vector<LossBreakdown> final_losses;  // evaluated on the uncropped final image
  std::vector<StepRecord> loss_trace;
  std::size_t clusters_used = 0;
  std::size_t stages_run = 0;
  bool succeeded_on_surrogates = false;

  double mean_final_total() const {
    double s = 0.0;
    for (const auto& l : final_losses) s += l.total;
    return final_losses.empty() ? 0.0 : s / static_cast<double>(final_losses.size());
  }
};

/// Observer invoked after every update with the new iterate and perturbation.
using StepObserver = std::function<void(const StepRecord&, const Image& adv, const Image& delta)>;

struct AttackRunOptions {
  std::size_t clusters = 0;            // 0 selects cluster_schedule[0]
  std::optional<Image> initial_delta;  // warm start, projected into the budget
  StepObserver observer;
  std::size_t step_offset = 0;         // added to recorded step numbers
};

namespace detail {

enum StreamTag : std::uint64_t { kCropStream = 1, kAdvClusterStream = 2, kTargetClusterStream = 3,
                                 kFinalClusterStream = 4, kStageStream = 5 };

struct EncoderContext {
  const EncoderSpec* spec;
  ClusterResult full_target_clusters;  // clusters of the uncropped target view
};

struct EncoderEval {
  FoaLoss loss;
  InputGradient grad;  // w.r.t. the attack-resolution adversarial image
};

inline Image to_encoder_input(const EncoderSpec& e, const Image& img) {
  return bilinear_resize(img, e.dims.input_h, e.dims.input_w);
}

inline bool is_identity(const CropParams& c, const Image& img) {
  return c.top == 0 && c.left == 0 && c.height == img.height() && c.width == img.width();
}

// Both images go through the same crop; the adversarial view is encoded once
// and its global and patch features enter the loss together. Target clusters
// depend on the crop, so they are only reused when the crop is the identity.
inline EncoderEval evaluate_encoder(const EncoderContext& ctx, const Image& adv, const Image& tar,
                                    const CropParams& crop, std::size_t n, const LossOptions& lo,
                                    Rng adv_rng, Rng tar_rng, bool with_grad) {
  const EncoderSpec& e = *ctx.spec;
  const std::size_t h = adv.height(), w = adv.width();
  const Image adv_view = to_encoder_input(e, apply_crop(adv, crop));
  const FeatureSet fa = encode(e, adv_view);
  TargetFeatures target;
  const FeatureSet ft = encode(e, to_encoder_input(e, apply_crop(tar, crop)));
  target.global = ft.global;
  target.clusters = is_identity(crop, tar) ? ctx.full_target_clusters : kmeans(ft.patches, n, tar_rng);

  EncoderEval out;
  out.loss = foa_loss(fa, target, n, lo, adv_rng);
  if (!with_grad) return out;
  const InputGradient g_view = encode_vjp(e, adv_view, out.loss.d_global, out.loss.d_patches);
  out.grad = apply_crop_vjp(h, w, crop, bilinear_resize_vjp(h, w, g_view));
  return out;
}

inline std::vector<EncoderContext> prepare_targets(const Image& tar,
                                                   std::span<const EncoderSpec> encoders,
                                                   std::size_t n, const Rng& base) {
  std::vector<EncoderContext> ctx;
  ctx.reserve(encoders.size());
  for (std::size_t j = 0; j < encoders.size(); ++j) {
    const FeatureSet ft = encode(encoders[j], to_encoder_input(encoders[j], tar));
    ctx.push_back({&encoders[j], kmeans(ft.patches, n, base.derive({kTargetClusterStream, j, n}))});
  }
  return ctx;
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Loss of each encoder at `adv` on the uncropped view.
inline std::vector<LossBreakdown> evaluate_losses(const Image& adv, const Image& tar,
                                                  std::span<const EncoderSpec> encoders,
                                                  const AttackConfig& cfg, std::size_t n) {
  const Rng base(cfg.seed);
  const auto ctx = detail::prepare_targets(tar, encoders, n, base);
  LossOptions lo{cfg.eta, cfg.lambda, cfg.global_alignment};
  const CropParams full{0, 0, adv.height(), adv.width(), 1.0};
  std::vector<LossBreakdown> out;
  for (std::size_t j = 0; j < ctx.size(); ++j)
    out.push_back(detail::evaluate_encoder(ctx[j], adv, tar, full, n, lo,
                                           base.derive({detail::kFinalClusterStream, j, n}),
                                           base.derive({detail::kTargetClusterStream, j, n}), false)
                      .loss.breakdown);
  return out;
}

/// Sign-gradient descent on the weighted ensemble alignment loss inside the
/// L-infinity ball around `nat`.
inline AttackResult run_attack(const Image& nat, const Image& tar,
                               std::span<const EncoderSpec> encoders, const AttackConfig& cfg,
                               const AttackRunOptions& run = {}) {
  validate(cfg);
  require(!nat.empty(), ErrorCode::EmptyImage, "natural image is empty");
  require(nat.same_shape(tar), ErrorCode::ShapeMismatch, "natural and target images differ in size");
  require(!encoders.empty(), ErrorCode::InvalidConfig, "attack needs at least one encoder");
  for (const auto& e : encoders) validate(e);

  const std::size_t n = run.clusters == 0 ? cfg.cluster_schedule.front() : run.clusters;
  const std::size_t h = nat.height(), w = nat.width();
  const std::size_t t = encoders.size();
  const Rng base(cfg.seed);
  const auto ctx = detail::prepare_targets(tar, encoders, n, base);
  const LossOptions lo{cfg.eta, cfg.lambda, cfg.global_alignment};

  Image delta(h, w);
  Image adv = nat;
  auto project = [&] {
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double d = std::clamp(delta.flat()[i], -cfg.epsilon, cfg.epsilon);
      adv.flat()[i] = std::clamp(nat.flat()[i] + d, 0.0, 1.0);
      delta.flat()[i] = adv.flat()[i] - nat.flat()[i];
    }
  };
  if (run.initial_delta) {
    require(run.initial_delta->same_shape(nat), ErrorCode::ShapeMismatch,
            "initial perturbation has the wrong shape");
    delta = *run.initial_delta;
    project();
  }

  AttackResult res;
  res.loss_trace.reserve(cfg.iterations);
  EnsembleState ens = EnsembleState::create(t, cfg.w_init, cfg.temperature);
  std::vector<double> totals(t);
  std::vector<InputGradient> grads(t);

  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    Rng crop_rng = base.derive({detail::kCropStream, step});
    const CropParams crop = sample_crop(h, w, crop_rng, cfg.crop_scale_min, cfg.crop_scale_max);

    StepRecord rec;
    rec.step = run.step_offset + step;
    rec.clusters = n;
    for (std::size_t j = 0; j < t; ++j) {
      auto ev = detail::evaluate_encoder(ctx[j], adv, tar, crop, n, lo,
                                         base.derive({detail::kAdvClusterStream, step, j}),
                                         base.derive({detail::kTargetClusterStream, step, j, n}), true);
      const auto& b = ev.loss.breakdown;
      if (!std::isfinite(b.total))
        fail(ErrorCode::NonFiniteLoss, "non-finite loss on encoder '" + encoders[j].name +
                                           "' at step " + std::to_string(rec.step));
      totals[j] = b.total;
      grads[j] = std::move(ev.grad);
      rec.losses.push_back(b);
    }

    ens = update_weights(std::move(ens), totals);
    if (!cfg.dynamic_weighting) std::fill(ens.weights.begin(), ens.weights.end(), cfg.w_init);
    rec.speeds = ens.speeds;
    rec.weights = ens.weights;

    const auto agg = weighted_total(totals, grads, ens.weights);
    rec.weighted_total = agg.total;
    for (std::size_t i = 0; i < delta.size(); ++i)
      delta.flat()[i] -= cfg.step_size * detail::sign(agg.grad.flat()[i]);
    project();
    rec.delta_linf = max_abs(delta.flat());

    if (run.observer) run.observer(rec, adv, delta);
    res.loss_trace.push_back(std::move(rec));
  }

  res.adv_image = adv;
  res.delta = delta;
  res.final_losses = evaluate_losses(adv, tar, encoders, cfg, n);
  res.clusters_used = n;
  res.stages_run = 1;
  res.succeeded_on_surrogates = res.mean_final_total() <= cfg.fail_threshold;
  return res;
}

/// Runs the cluster schedule in order, warm-starting each stage from the
/// previous perturbation, until the mean surrogate loss is at or below
/// fail_threshold or the schedule is exhausted.
inline AttackResult run_progressive(const Image& nat, const Image& tar,
                                    std::span<const EncoderSpec> encoders, const AttackConfig& cfg,
                                    StepObserver observer = {}) {
  validate(cfg);
  AttackResult res;
  std::vector<StepRecord> trace;
  for (std::size_t s = 0; s < cfg.cluster_schedule.size(); ++s) {
    AttackConfig stage_cfg = cfg;
    if (s > 0) stage_cfg.seed = Rng(cfg.seed).derive({detail::kStageStream, s}).seed();
    AttackRunOptions run;
    run.clusters = cfg.cluster_schedule[s];
    run.observer = observer;
    run.step_offset = s * cfg.iterations;
    if (s > 0) run.initial_delta = res.delta;
    res = run_attack(nat, tar, encoders, stage_cfg, run);
    trace.insert(trace.end(), std::make_move_iterator(res.loss_trace.begin()),
                 std::make_move_iterator(res.loss_trace.end()));
    res.stages_run = s + 1;
    if (res.mean_final_total() <= cfg.fail_threshold) break;
  }
  res.loss_trace = std::move(trace);
  return res;
}

}  // namespace foa
