#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "foa/attack.hpp"
#include "foa/encoders.hpp"
#include "foa/error.hpp"
#include "foa/image.hpp"

namespace foa::io {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "short write to '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Little-endian byte packing

class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  template <class T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}

  void expect_magic(std::string_view magic) {
    need(magic.size());
    require(std::memcmp(b_.data() + pos_, magic.data(), magic.size()) == 0, ErrorCode::Format,
            what_ + ": bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) {
    require(pos_ + n <= b_.size(), ErrorCode::Format, what_ + ": truncated file");
  }
  const std::vector<std::uint8_t>& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255): byte = round(v * 255), v = byte / 255.

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
  require(!img.empty(), ErrorCode::EmptyImage, "cannot write an empty image");
  const std::string header =
      "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (double v : img.flat())
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

inline Image decode_ppm(const std::vector<std::uint8_t>& b, const std::string& what = "ppm") {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_ws();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
    require(pos > start, ErrorCode::Format, what + ": malformed PPM header");
    return v;
  };
  require(b.size() >= 2 && b[0] == 'P' && b[1] == '6', ErrorCode::Format, what + ": not a P6 PPM");
  pos = 2;
  const std::size_t w = number();
  const std::size_t h = number();
  const std::size_t maxval = number();
  require(maxval == 255, ErrorCode::Format, what + ": only 8-bit PPM is supported");
  require(pos < b.size() && std::isspace(b[pos]), ErrorCode::Format, what + ": malformed PPM header");
  ++pos;
  require(w > 0 && h > 0 && b.size() - pos == w * h * 3, ErrorCode::Format,
          what + ": PPM pixel payload has the wrong size");
  Image img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) img.flat()[i] = static_cast<double>(b[pos + i]) / 255.0;
  return img;
}

inline void write_ppm(const fs::path& path, const Image& img) { write_bytes(path, encode_ppm(img)); }
inline Image read_ppm(const fs::path& path) { return decode_ppm(read_bytes(path), path.string()); }

// ---------------------------------------------------------------------------
// FOAT tensor: "FOAT", u16 version, u8 rank, rank x u32 dims, f64 data.

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::uint16_t kEncoderVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  require(count == t.data.size() && t.dims.size() <= 255, ErrorCode::ShapeMismatch,
          "tensor dims do not match its data");
  ByteWriter w;
  w.raw("FOAT");
  w.le<std::uint16_t>(kTensorVersion);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) w.le<std::uint32_t>(d);
  for (double v : t.data) w.f64(v);
  return w.take();
}

inline Tensor decode_tensor(const std::vector<std::uint8_t>& b, const std::string& what = "tensor") {
  ByteReader r(b, what);
  r.expect_magic("FOAT");
  const auto version = r.le<std::uint16_t>();
  require(version == kTensorVersion, ErrorCode::Format, what + ": unsupported FOAT version");
  Tensor t;
  t.dims.resize(r.le<std::uint8_t>());
  std::size_t count = 1;
  for (auto& d : t.dims) {
    d = r.le<std::uint32_t>();
    count *= d;
  }
  t.data.resize(count);
  for (double& v : t.data) v = r.f64();
  require(r.done(), ErrorCode::Format, what + ": trailing bytes after tensor data");
  return t;
}

inline Tensor image_tensor(const Image& img) {
  return {{static_cast<std::uint32_t>(img.height()), static_cast<std::uint32_t>(img.width()),
           static_cast<std::uint32_t>(Image::kChannels)},
          std::vector<double>(img.flat().begin(), img.flat().end())};
}

inline Image tensor_image(const Tensor& t) {
  require(t.dims.size() == 3 && t.dims[2] == Image::kChannels, ErrorCode::ShapeMismatch,
          "tensor is not an H x W x 3 image");
  return Image(t.dims[0], t.dims[1], t.data);
}

inline void write_tensor(const fs::path& p, const Tensor& t) { write_bytes(p, encode_tensor(t)); }
inline Tensor read_tensor(const fs::path& p) { return decode_tensor(read_bytes(p), p.string()); }

// ---------------------------------------------------------------------------
// FOAE encoder: "FOAE", u16 version, u8 kind, u32 input_h, input_w,
// patch_size, embed_dim, f64 weights (count fixed by kind and dims).

inline std::vector<std::uint8_t> encode_encoder(const EncoderSpec& spec) {
  validate(spec);
  ByteWriter w;
  w.raw("FOAE");
  w.le<std::uint16_t>(kEncoderVersion);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(spec.kind));
  for (std::size_t d : {spec.dims.input_h, spec.dims.input_w, spec.dims.patch_size, spec.dims.embed_dim})
    w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (double v : spec.weights) w.f64(v);
  return w.take();
}

inline EncoderSpec decode_encoder(const std::vector<std::uint8_t>& b, std::string name,
                                  const std::string& what = "encoder") {
  ByteReader r(b, what);
  r.expect_magic("FOAE");
  require(r.le<std::uint16_t>() == kEncoderVersion, ErrorCode::Format, what + ": unsupported FOAE version");
  const auto tag = r.le<std::uint8_t>();
  require(tag <= 1, ErrorCode::Format, what + ": unknown encoder kind tag");
  EncoderSpec spec;
  spec.name = std::move(name);
  spec.kind = static_cast<EncoderKind>(tag);
  spec.dims.input_h = r.le<std::uint32_t>();
  spec.dims.input_w = r.le<std::uint32_t>();
  spec.dims.patch_size = r.le<std::uint32_t>();
  spec.dims.embed_dim = r.le<std::uint32_t>();
  validate_dims(spec.dims);
  spec.weights.resize(weight_count(spec.kind, spec.dims));
  for (double& v : spec.weights) v = r.f64();
  require(r.done(), ErrorCode::Format, what + ": trailing bytes after encoder weights");
  validate(spec);
  return spec;
}

inline void write_encoder(const fs::path& p, const EncoderSpec& s) { write_bytes(p, encode_encoder(s)); }
inline EncoderSpec read_encoder(const fs::path& p) {
  return decode_encoder(read_bytes(p), p.stem().string(), p.string());
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc{} && res.ptr == s.data() + s.size(), ErrorCode::Format,
          "bad number '" + std::string(s) + "' in CSV");
  return v;
}

inline void require_csv_safe(std::string_view field) {
  require(field.find_first_of(",\r\n") == std::string_view::npos, ErrorCode::Format,
          "name '" + std::string(field) + "' cannot be written to CSV");
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                       std::string_view expected_header) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::Format, "empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == expected_header, ErrorCode::Format, "unexpected CSV header '" + line + "'");
  const std::size_t cols = split_csv_line(expected_header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    require(fields.size() == cols, ErrorCode::Format, "CSV row has the wrong field count");
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline constexpr std::string_view kMetricsHeader =
    "step,encoder,loss_coarse,loss_fine,loss_total,speed,weight,delta_linf";

struct MetricsRow {
  std::size_t step = 0;
  std::string encoder;
  double loss_coarse = 0.0, loss_fine = 0.0, loss_total = 0.0;
  double speed = 0.0, weight = 0.0, delta_linf = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline std::vector<MetricsRow> metrics_rows(const std::vector<StepRecord>& trace,
                                            std::span<const EncoderSpec> encoders) {
  std::vector<MetricsRow> rows;
  for (const auto& rec : trace)
    for (std::size_t j = 0; j < rec.losses.size(); ++j)
      rows.push_back({rec.step, encoders[j].name, rec.losses[j].coarse, rec.losses[j].fine,
                      rec.losses[j].total, rec.speeds[j], rec.weights[j], rec.delta_linf});
  return rows;
}

inline std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    require_csv_safe(r.encoder);
    out += std::to_string(r.step) + ',' + r.encoder + ',' + format_double(r.loss_coarse) + ',' +
           format_double(r.loss_fine) + ',' + format_double(r.loss_total) + ',' +
           format_double(r.speed) + ',' + format_double(r.weight) + ',' +
           format_double(r.delta_linf) + '\n';
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::vector<MetricsRow> rows;
  for (const auto& f : parse_csv(text, kMetricsHeader))
    rows.push_back({static_cast<std::size_t>(parse_double(f[0])), f[1], parse_double(f[2]),
                    parse_double(f[3]), parse_double(f[4]), parse_double(f[5]), parse_double(f[6]),
                    parse_double(f[7])});
  return rows;
}

}  // namespace foa::io
