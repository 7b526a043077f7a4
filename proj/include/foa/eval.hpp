#pragma once

// Held-out transfer measurement: cosine between the global features of an
// adversarial image and its target under an encoder the attack never saw.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "foa/encoders.hpp"
#include "foa/error.hpp"
#include "foa/image.hpp"
#include "foa/io.hpp"
#include "foa/matrix.hpp"

namespace foa {

inline constexpr double kDefaultSuccessThreshold = 0.5;

/// Global-feature cosine of two images under one encoder (each image is
/// resized to the encoder's input first).
inline double global_cosine(const EncoderSpec& e, const Image& a, const Image& b) {
  const auto fa = encode(e, bilinear_resize(a, e.dims.input_h, e.dims.input_w));
  const auto fb = encode(e, bilinear_resize(b, e.dims.input_h, e.dims.input_w));
  return cosine(fa.global, fb.global);
}

struct ImageTransfer {
  std::string image;
  std::optional<double> clean_cosine;  // cos(nat, tar), when the natural image is known
  double adv_cosine = 0.0;

  std::optional<double> delta() const {
    if (!clean_cosine) return std::nullopt;
    return adv_cosine - *clean_cosine;
  }
  friend bool operator==(const ImageTransfer&, const ImageTransfer&) = default;
};

struct TransferReport {
  std::string heldout_encoder;
  double threshold = kDefaultSuccessThreshold;
  std::vector<ImageTransfer> images;

  double mean_adv_cosine() const {
    if (images.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : images) s += r.adv_cosine;
    return s / static_cast<double>(images.size());
  }
  /// Fraction of images whose adversarial cosine strictly exceeds the threshold.
  double success_rate() const {
    if (images.empty()) return 0.0;
    const auto hits = std::count_if(images.begin(), images.end(),
                                    [&](const ImageTransfer& r) { return r.adv_cosine > threshold; });
    return static_cast<double>(hits) / static_cast<double>(images.size());
  }
  std::optional<double> mean_clean_cosine() const {
    if (images.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& r : images) {
      if (!r.clean_cosine) return std::nullopt;
      s += *r.clean_cosine;
    }
    return s / static_cast<double>(images.size());
  }
  friend bool operator==(const TransferReport&, const TransferReport&) = default;
};

struct ImageTriple {
  std::string name;
  Image adv;
  Image tar;
  std::optional<Image> nat;
};

inline TransferReport evaluate_transfer(const std::vector<ImageTriple>& pairs, const EncoderSpec& heldout,
                                        double threshold = kDefaultSuccessThreshold) {
  TransferReport rep;
  rep.heldout_encoder = heldout.name;
  rep.threshold = threshold;
  for (const auto& p : pairs) {
    ImageTransfer r;
    r.image = p.name;
    r.adv_cosine = global_cosine(heldout, p.adv, p.tar);
    if (p.nat) r.clean_cosine = global_cosine(heldout, *p.nat, p.tar);
    rep.images.push_back(std::move(r));
  }
  return rep;
}

/// Every *.ppm in adv_dir paired by file name with tar_dir (and nat_dir).
inline std::vector<ImageTriple> load_pairs(const std::filesystem::path& adv_dir,
                                           const std::filesystem::path& tar_dir,
                                           const std::optional<std::filesystem::path>& nat_dir = {}) {
  namespace fs = std::filesystem;
  require(fs::is_directory(adv_dir), ErrorCode::Io, "not a directory: " + adv_dir.string());
  require(fs::is_directory(tar_dir), ErrorCode::Io, "not a directory: " + tar_dir.string());
  if (nat_dir) require(fs::is_directory(*nat_dir), ErrorCode::Io, "not a directory: " + nat_dir->string());
  std::vector<fs::path> names;
  for (const auto& e : fs::directory_iterator(adv_dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  std::vector<ImageTriple> out;
  for (const auto& n : names) {
    require(fs::exists(tar_dir / n), ErrorCode::MissingPair,
            "no target for " + n.string() + " in " + tar_dir.string());
    ImageTriple t{n.stem().string(), io::read_ppm(adv_dir / n), io::read_ppm(tar_dir / n), std::nullopt};
    if (nat_dir) {
      require(fs::exists(*nat_dir / n), ErrorCode::MissingPair,
              "no natural image for " + n.string() + " in " + nat_dir->string());
      t.nat = io::read_ppm(*nat_dir / n);
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline constexpr std::string_view kTransferHeader =
    "image,heldout_encoder,threshold,clean_cosine,adv_cosine,delta";

inline std::string format_transfer_csv(const TransferReport& rep) {
  io::require_csv_safe(rep.heldout_encoder);
  std::string out(kTransferHeader);
  out += '\n';
  for (const auto& r : rep.images) {
    io::require_csv_safe(r.image);
    const auto d = r.delta();
    out += r.image + ',' + rep.heldout_encoder + ',' + io::format_double(rep.threshold) + ',' +
           (r.clean_cosine ? io::format_double(*r.clean_cosine) : "") + ',' +
           io::format_double(r.adv_cosine) + ',' + (d ? io::format_double(*d) : "") + '\n';
  }
  return out;
}

/// Inverse of format_transfer_csv. A report with no rows carries no encoder
/// id or threshold, so those come back as the supplied defaults.
inline TransferReport parse_transfer_csv(const std::string& text, std::string heldout_if_empty = {},
                                         double threshold_if_empty = kDefaultSuccessThreshold) {
  TransferReport rep;
  rep.heldout_encoder = std::move(heldout_if_empty);
  rep.threshold = threshold_if_empty;
  const auto rows = io::parse_csv(text, kTransferHeader);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    const double thr = io::parse_double(f[2]);
    if (i == 0) {
      rep.heldout_encoder = f[1];
      rep.threshold = thr;
    }
    require(f[1] == rep.heldout_encoder && thr == rep.threshold, ErrorCode::Format,
            "transfer CSV mixes encoders or thresholds");
    ImageTransfer r;
    r.image = f[0];
    if (!f[3].empty()) r.clean_cosine = io::parse_double(f[3]);
    r.adv_cosine = io::parse_double(f[4]);
    rep.images.push_back(std::move(r));
  }
  return rep;
}

}  // namespace foa
