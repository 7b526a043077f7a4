#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "foa/error.hpp"
#include "foa/image.hpp"
#include "foa/matrix.hpp"
#include "foa/rng.hpp"

namespace foa {

enum class EncoderKind : std::uint8_t { PatchLinear = 0, AttentionBlock = 1 };

inline std::string to_string(EncoderKind k) {
  return k == EncoderKind::PatchLinear ? "patch-linear" : "attention-block";
}

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "patch-linear") return EncoderKind::PatchLinear;
  if (s == "attention-block") return EncoderKind::AttentionBlock;
  fail(ErrorCode::InvalidDims, "unknown encoder kind '" + s + "'");
}

struct EncoderDims {
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 16;

  std::size_t patch_count() const { return (input_h / patch_size) * (input_w / patch_size); }
  std::size_t patch_len() const { return patch_size * patch_size * Image::kChannels; }

  friend bool operator==(const EncoderDims&, const EncoderDims&) = default;
};

/// Weight layout, in order:
///   patch-linear:    W_e (d x P), b_e (d), W_h (d x d), b_h (d)
///   attention-block: W_e (d x P), b_e (d), cls (d), pos (m x d), W_q, W_k, W_v (d x d each)
/// with P = patch_size^2 * 3 and m the patch count.
inline std::size_t weight_count(EncoderKind kind, const EncoderDims& dims) {
  const std::size_t d = dims.embed_dim;
  const std::size_t p = dims.patch_len();
  if (kind == EncoderKind::PatchLinear) return d * p + d + d * d + d;
  return d * p + 2 * d + dims.patch_count() * d + 3 * d * d;
}

inline void validate_dims(const EncoderDims& dims) {
  require(dims.patch_size >= 1 && dims.input_h >= 1 && dims.input_w >= 1, ErrorCode::InvalidDims,
          "encoder dims must be positive");
  require(dims.input_h % dims.patch_size == 0 && dims.input_w % dims.patch_size == 0,
          ErrorCode::InvalidDims, "input dims must be divisible by patch_size");
  require(dims.embed_dim >= 2, ErrorCode::InvalidDims, "embed_dim must be >= 2");
}

struct EncoderSpec {
  std::string name;
  EncoderKind kind = EncoderKind::PatchLinear;
  EncoderDims dims;
  std::vector<double> weights;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

inline void validate(const EncoderSpec& spec) {
  validate_dims(spec.dims);
  require(spec.weights.size() == weight_count(spec.kind, spec.dims), ErrorCode::InvalidDims,
          "weight count does not match the architecture of '" + spec.name + "'");
}

/// Global pooled token plus one embedding row per patch.
struct FeatureSet {
  Vector global;
  Matrix patches;
};

/// Fixed per-pixel input normalization applied before patch embedding.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

namespace detail {

struct WeightView {
  std::span<const double> embed, embed_bias;
  // patch-linear
  std::span<const double> head, head_bias;
  // attention-block
  std::span<const double> cls, pos, wq, wk, wv;
};

inline WeightView view_weights(const EncoderSpec& spec) {
  const std::size_t d = spec.dims.embed_dim;
  const std::size_t p = spec.dims.patch_len();
  std::span<const double> w = spec.weights;
  WeightView v;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    auto s = w.subspan(off, n);
    off += n;
    return s;
  };
  v.embed = take(d * p);
  v.embed_bias = take(d);
  if (spec.kind == EncoderKind::PatchLinear) {
    v.head = take(d * d);
    v.head_bias = take(d);
  } else {
    v.cls = take(d);
    v.pos = take(spec.dims.patch_count() * d);
    v.wq = take(d * d);
    v.wk = take(d * d);
    v.wv = take(d * d);
  }
  return v;
}

inline void gather_patch(const Image& img, std::size_t patch, std::size_t ps, std::span<double> out) {
  const std::size_t per_row = img.width() / ps;
  const std::size_t y0 = (patch / per_row) * ps;
  const std::size_t x0 = (patch % per_row) * ps;
  std::size_t i = 0;
  for (std::size_t dy = 0; dy < ps; ++dy)
    for (std::size_t dx = 0; dx < ps; ++dx)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        out[i++] = (img.at(y0 + dy, x0 + dx, c) - kPixelMean) / kPixelStd;
}

inline void scatter_patch(InputGradient& g, std::size_t patch, std::size_t ps,
                          std::span<const double> in) {
  const std::size_t per_row = g.width() / ps;
  const std::size_t y0 = (patch / per_row) * ps;
  const std::size_t x0 = (patch % per_row) * ps;
  std::size_t i = 0;
  for (std::size_t dy = 0; dy < ps; ++dy)
    for (std::size_t dx = 0; dx < ps; ++dx)
      for (std::size_t c = 0; c < Image::kChannels; ++c)
        g.at(y0 + dy, x0 + dx, c) += in[i++] / kPixelStd;
}

// Patch embeddings W_e * vec(patch) + b_e, one row per patch.
inline Matrix embed_patches(const EncoderSpec& spec, const WeightView& w, const Image& img) {
  const std::size_t m = spec.dims.patch_count();
  const std::size_t d = spec.dims.embed_dim;
  Matrix e(m, d);
  std::vector<double> buf(spec.dims.patch_len());
  for (std::size_t k = 0; k < m; ++k) {
    gather_patch(img, k, spec.dims.patch_size, buf);
    matvec(w.embed, buf, e.row(k));
    axpy(1.0, w.embed_bias, e.row(k));
  }
  return e;
}

// Intermediates of the attention block, kept for the backward pass.
struct AttentionTape {
  Matrix z;     // (m+1) x d tokens, row 0 is cls
  Matrix q, k, v;
  Matrix attn;  // (m+1) x (m+1) row-softmax
  Matrix out;   // z + attn * v
};

inline AttentionTape attention_forward(const EncoderSpec& spec, const WeightView& w,
                                       const Image& img) {
  const std::size_t m = spec.dims.patch_count();
  const std::size_t d = spec.dims.embed_dim;
  const std::size_t t = m + 1;
  AttentionTape tp;
  Matrix e = embed_patches(spec, w, img);
  tp.z = Matrix(t, d);
  std::copy(w.cls.begin(), w.cls.end(), tp.z.row(0).begin());
  for (std::size_t i = 0; i < m; ++i) {
    auto zr = tp.z.row(i + 1);
    for (std::size_t c = 0; c < d; ++c) zr[c] = e(i, c) + w.pos[i * d + c];
  }
  tp.q = Matrix(t, d);
  tp.k = Matrix(t, d);
  tp.v = Matrix(t, d);
  for (std::size_t i = 0; i < t; ++i) {
    matvec(w.wq, tp.z.row(i), tp.q.row(i));
    matvec(w.wk, tp.z.row(i), tp.k.row(i));
    matvec(w.wv, tp.z.row(i), tp.v.row(i));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  tp.attn = Matrix(t, t);
  Vector scores(t);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) scores[j] = scale * dot(tp.q.row(i), tp.k.row(j));
    const Vector a = softmax(scores, 1.0);
    std::copy(a.begin(), a.end(), tp.attn.row(i).begin());
  }
  tp.out = tp.z;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) axpy(tp.attn(i, j), tp.v.row(j), tp.out.row(i));
  return tp;
}

}  // namespace detail

inline FeatureSet encode(const EncoderSpec& spec, const Image& img) {
  validate(spec);
  require(img.height() == spec.dims.input_h && img.width() == spec.dims.input_w,
          ErrorCode::ShapeMismatch, "image dims do not match encoder '" + spec.name + "' input");
  const auto w = detail::view_weights(spec);
  const std::size_t m = spec.dims.patch_count();
  const std::size_t d = spec.dims.embed_dim;
  FeatureSet fs;
  if (spec.kind == EncoderKind::PatchLinear) {
    fs.patches = detail::embed_patches(spec, w, img);
    Vector pooled(d, 0.0);
    for (std::size_t k = 0; k < m; ++k) axpy(1.0 / static_cast<double>(m), fs.patches.row(k), pooled);
    fs.global.assign(d, 0.0);
    matvec(w.head, pooled, fs.global);
    axpy(1.0, w.head_bias, fs.global);
    return fs;
  }
  const auto tp = detail::attention_forward(spec, w, img);
  fs.global.assign(tp.out.row(0).begin(), tp.out.row(0).end());
  fs.patches = Matrix(m, d);
  for (std::size_t k = 0; k < m; ++k)
    std::copy(tp.out.row(k + 1).begin(), tp.out.row(k + 1).end(), fs.patches.row(k).begin());
  return fs;
}

/// Reverse-mode gradient of <global, d_global> + <patches, d_patches> w.r.t. the image.
inline InputGradient encode_vjp(const EncoderSpec& spec, const Image& img,
                                std::span<const double> d_global, const Matrix& d_patches) {
  validate(spec);
  const std::size_t m = spec.dims.patch_count();
  const std::size_t d = spec.dims.embed_dim;
  require(img.height() == spec.dims.input_h && img.width() == spec.dims.input_w,
          ErrorCode::ShapeMismatch, "image dims do not match encoder '" + spec.name + "' input");
  require(d_global.size() == d && d_patches.rows() == m && d_patches.cols() == d,
          ErrorCode::ShapeMismatch, "cotangent shapes do not match encoder outputs");
  const auto w = detail::view_weights(spec);
  const std::size_t ps = spec.dims.patch_size;
  InputGradient g(img.height(), img.width());
  std::vector<double> dpix(spec.dims.patch_len());

  // d_embed: m x d gradient on the patch embedding rows.
  Matrix d_embed(m, d);
  if (spec.kind == EncoderKind::PatchLinear) {
    Vector d_pooled(d, 0.0);
    matvec_t_acc(w.head, d_global, d_pooled);
    for (std::size_t k = 0; k < m; ++k) {
      auto r = d_embed.row(k);
      std::copy(d_patches.row(k).begin(), d_patches.row(k).end(), r.begin());
      axpy(1.0 / static_cast<double>(m), d_pooled, r);
    }
  } else {
    const auto tp = detail::attention_forward(spec, w, img);
    const std::size_t t = m + 1;
    Matrix d_out(t, d);
    std::copy(d_global.begin(), d_global.end(), d_out.row(0).begin());
    for (std::size_t k = 0; k < m; ++k)
      std::copy(d_patches.row(k).begin(), d_patches.row(k).end(), d_out.row(k + 1).begin());

    Matrix dz = d_out;  // residual path
    Matrix dq(t, d), dk(t, d), dv(t, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Vector da(t);
    for (std::size_t i = 0; i < t; ++i) {
      double weighted = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        da[j] = dot(d_out.row(i), tp.v.row(j));
        weighted += tp.attn(i, j) * da[j];
        axpy(tp.attn(i, j), d_out.row(i), dv.row(j));
      }
      for (std::size_t j = 0; j < t; ++j) {
        const double ds = tp.attn(i, j) * (da[j] - weighted) * scale;
        axpy(ds, tp.k.row(j), dq.row(i));
        axpy(ds, tp.q.row(i), dk.row(j));
      }
    }
    for (std::size_t i = 0; i < t; ++i) {
      matvec_t_acc(w.wq, dq.row(i), dz.row(i));
      matvec_t_acc(w.wk, dk.row(i), dz.row(i));
      matvec_t_acc(w.wv, dv.row(i), dz.row(i));
    }
    for (std::size_t k = 0; k < m; ++k)
      std::copy(dz.row(k + 1).begin(), dz.row(k + 1).end(), d_embed.row(k).begin());
  }

  for (std::size_t k = 0; k < m; ++k) {
    std::fill(dpix.begin(), dpix.end(), 0.0);
    matvec_t_acc(w.embed, d_embed.row(k), dpix);
    detail::scatter_patch(g, k, ps, dpix);
  }
  return g;
}

struct InitOptions {
  // 0 draws every patch-embedding weight i.i.d. Otherwise each embedding row
  // is a random combination of the per-channel 2-D DCT basis functions with
  // both frequencies below `filter_bands`, so all encoders built this way see
  // the same low-frequency patch subspace. Entry variance stays 1 / fan_in.
  std::size_t filter_bands = 0;
};

namespace detail {

inline std::vector<Vector> low_frequency_basis(std::size_t ps, std::size_t bands) {
  std::vector<Vector> basis;
  const double pi = 3.14159265358979323846;
  const std::size_t len = ps * ps * Image::kChannels;
  for (std::size_t fu = 0; fu < bands; ++fu)
    for (std::size_t fv = 0; fv < bands; ++fv)
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        Vector b(len, 0.0);
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            b[(y * ps + x) * Image::kChannels + c] =
                std::cos(pi * (static_cast<double>(y) + 0.5) * static_cast<double>(fu) / static_cast<double>(ps)) *
                std::cos(pi * (static_cast<double>(x) + 0.5) * static_cast<double>(fv) / static_cast<double>(ps));
        const double nb = norm2(b);
        for (double& v : b) v /= nb;
        basis.push_back(std::move(b));
      }
  return basis;
}

}  // namespace detail

/// Deterministic toy encoder. Weights come from Rng(seed) with standard
/// deviation 1 / sqrt(fan_in).
inline EncoderSpec init_encoder(EncoderKind kind, const EncoderDims& dims, std::uint64_t seed,
                                const InitOptions& opt, std::string name = {}) {
  validate_dims(dims);
  require(opt.filter_bands <= dims.patch_size, ErrorCode::InvalidDims,
          "filter_bands cannot exceed patch_size");
  const std::size_t d = dims.embed_dim;
  const std::size_t p = dims.patch_len();
  const double embed_scale = 1.0 / std::sqrt(static_cast<double>(p));
  const double dim_scale = 1.0 / std::sqrt(static_cast<double>(d));
  EncoderSpec spec;
  spec.name = name.empty() ? to_string(kind) + "-" + std::to_string(seed) : std::move(name);
  spec.kind = kind;
  spec.dims = dims;
  spec.weights.reserve(weight_count(kind, dims));
  Rng rng(seed);
  auto fill = [&](std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) spec.weights.push_back(scale * rng.normal());
  };
  if (opt.filter_bands == 0) {
    fill(d * p, embed_scale);
  } else {
    const auto basis = detail::low_frequency_basis(dims.patch_size, opt.filter_bands);
    const double coef_scale = 1.0 / std::sqrt(static_cast<double>(basis.size()));
    Vector row(p);
    for (std::size_t r = 0; r < d; ++r) {
      std::fill(row.begin(), row.end(), 0.0);
      for (const auto& b : basis) axpy(coef_scale * rng.normal(), b, row);
      spec.weights.insert(spec.weights.end(), row.begin(), row.end());
    }
  }
  fill(d, embed_scale);
  if (kind == EncoderKind::PatchLinear) {
    fill(d * d + d, dim_scale);
  } else {
    fill(d + dims.patch_count() * d, dim_scale);
    fill(3 * d * d, dim_scale);
  }
  return spec;
}

inline EncoderSpec init_encoder(EncoderKind kind, const EncoderDims& dims, std::uint64_t seed,
                                std::string name = {}) {
  return init_encoder(kind, dims, seed, InitOptions{}, std::move(name));
}

}  // namespace foa
