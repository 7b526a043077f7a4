#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "foa/error.hpp"

namespace foa {

/// H x W x 3 grid of doubles, row-major with interleaved channels (HWC).
/// Pixel images hold values in [0, 1]; the same type carries input gradients.
class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), data_(height * width * kChannels, fill) {}
  Image(std::size_t height, std::size_t width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    require(data_.size() == height_ * width_ * kChannels, ErrorCode::ShapeMismatch,
            "image data length does not equal H*W*3");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * width_ + x) * kChannels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * kChannels + c];
  }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool same_shape(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

/// d(loss)/d(pixel), shaped like the image it was taken against.
using InputGradient = Image;

inline Image clamp01(Image img) {
  for (double& v : img.flat()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

namespace detail {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double w_lo;
  double w_hi;
};

// Corner-aligned sampling: output index i maps to i*(in-1)/(out-1). A single
// output sample reads the input center.
inline std::vector<Tap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = out == 1 ? 0.5 * static_cast<double>(in - 1)
                          : static_cast<double>(i) * static_cast<double>(in - 1) /
                                static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[i] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize with corner-aligned sampling; identity when sizes match.
inline Image bilinear_resize(const Image& img, std::size_t out_h, std::size_t out_w) {
  require(!img.empty(), ErrorCode::EmptyImage, "cannot resize an empty image");
  require(out_h >= 1 && out_w >= 1, ErrorCode::InvalidDims, "resize target must be >= 1x1");
  if (out_h == img.height() && out_w == img.width()) return img;
  const auto ty = detail::resize_taps(img.height(), out_h);
  const auto tx = detail::resize_taps(img.width(), out_w);
  Image out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& b = tx[x];
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        out.at(y, x, c) = a.w_lo * (b.w_lo * img.at(a.lo, b.lo, c) + b.w_hi * img.at(a.lo, b.hi, c)) +
                          a.w_hi * (b.w_lo * img.at(a.hi, b.lo, c) + b.w_hi * img.at(a.hi, b.hi, c));
      }
    }
  }
  return out;
}

/// Transpose of bilinear_resize from (in_h, in_w) to out_grad's shape.
inline InputGradient bilinear_resize_vjp(std::size_t in_h, std::size_t in_w,
                                         const InputGradient& out_grad) {
  require(in_h >= 1 && in_w >= 1, ErrorCode::ShapeMismatch, "vjp input shape must be >= 1x1");
  require(!out_grad.empty(), ErrorCode::ShapeMismatch, "vjp cotangent is empty");
  if (out_grad.height() == in_h && out_grad.width() == in_w) return out_grad;
  const auto ty = detail::resize_taps(in_h, out_grad.height());
  const auto tx = detail::resize_taps(in_w, out_grad.width());
  Image g(in_h, in_w);
  for (std::size_t y = 0; y < out_grad.height(); ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < out_grad.width(); ++x) {
      const auto& b = tx[x];
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double v = out_grad.at(y, x, c);
        g.at(a.lo, b.lo, c) += a.w_lo * b.w_lo * v;
        g.at(a.lo, b.hi, c) += a.w_lo * b.w_hi * v;
        g.at(a.hi, b.lo, c) += a.w_hi * b.w_lo * v;
        g.at(a.hi, b.hi, c) += a.w_hi * b.w_hi * v;
      }
    }
  }
  return g;
}

}  // namespace foa
