#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

#include "foa/encoders.hpp"
#include "foa/image.hpp"
#include "foa/rng.hpp"

namespace foa::synth {

struct ImageStyle {
  double base_lo = 0.3, base_hi = 0.7;
  double wave_amp = 0.15;
  double blob_amp = 0.4;
  std::size_t waves = 3;
  std::size_t blobs = 2;
};

/// Smooth synthetic picture: a base color per channel, a few oriented
/// sinusoids and soft colored blobs. Deterministic in `seed`.
inline Image sample_image(std::size_t h, std::size_t w, std::uint64_t seed,
                          const ImageStyle& style = {}) {
  Rng rng(seed);
  Image img(h, w);
  double base[3];
  for (double& b : base) b = rng.uniform(style.base_lo, style.base_hi);
  struct Wave { double fy, fx, phase, amp[3]; };
  struct Blob { double cy, cx, radius, amp[3]; };
  std::vector<Wave> waves(style.waves);
  for (auto& wv : waves) {
    const double freq = rng.uniform(0.5, 3.0);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    wv.fy = freq * std::sin(angle);
    wv.fx = freq * std::cos(angle);
    wv.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (double& a : wv.amp) a = rng.uniform(-style.wave_amp, style.wave_amp);
  }
  std::vector<Blob> blobs(style.blobs);
  for (auto& bl : blobs) {
    bl.cy = rng.uniform(0.0, 1.0);
    bl.cx = rng.uniform(0.0, 1.0);
    bl.radius = rng.uniform(0.1, 0.3);
    for (double& a : bl.amp) a = rng.uniform(-style.blob_amp, style.blob_amp);
  }
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c];
        for (const auto& wv : waves)
          v += wv.amp[c] * std::sin(2.0 * std::numbers::pi * (wv.fy * fy + wv.fx * fx) + wv.phase);
        for (const auto& bl : blobs) {
          const double r2 = (fy - bl.cy) * (fy - bl.cy) + (fx - bl.cx) * (fx - bl.cx);
          v += bl.amp[c] * std::exp(-r2 / (2.0 * bl.radius * bl.radius));
        }
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

/// Shared low-frequency filter prior of the bundled toy encoders.
inline constexpr InitOptions kToyInit{2};

/// Three heterogeneous surrogates; each resizes its input to 16 x 16 or 24 x 24.
inline std::vector<EncoderSpec> default_ensemble(std::uint64_t seed = 1) {
  return {
      init_encoder(EncoderKind::PatchLinear, {16, 16, 4, 16}, seed, kToyInit, "pl4"),
      init_encoder(EncoderKind::AttentionBlock, {16, 16, 2, 24}, seed + 1, kToyInit, "attn2"),
      init_encoder(EncoderKind::PatchLinear, {24, 24, 4, 24}, seed + 2, kToyInit, "pl4w"),
  };
}

/// Encoder excluded from optimization, used to measure transfer. Pass the
/// same seed as default_ensemble; its weights come from seed + 100.
inline EncoderSpec heldout_encoder(std::uint64_t seed = 1) {
  return init_encoder(EncoderKind::AttentionBlock, {16, 16, 4, 16}, seed + 100, kToyInit,
                      "heldout-attn4");
}

}  // namespace foa::synth
