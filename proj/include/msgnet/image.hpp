#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/linalg.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/rng.hpp"
#include "msgnet/tensor.hpp"

namespace msgnet {

// Interleaved RGB image, values in [0, 1], row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // width * height * 3

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
    if (w <= 0 || h <= 0) raise<ShapeError>("image dimensions must be positive, got ", w, "x", h);
  }

  float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

inline std::uint8_t quantize_channel(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

namespace detail {

struct PnmHeader {
  char magic = 0;  // '5' or '6'
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t offset = 0;
};

inline PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes) {
  PnmHeader h;
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    raise<DataError>("ppm: missing P6/P5 magic");
  }
  h.magic = static_cast<char>(bytes[1]);
  std::size_t pos = 2;
  auto next_int = [&](const char* what) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) raise<DataError>("ppm: malformed header, expected ", what);
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 24)) raise<DataError>("ppm: ", what, " too large");
      ++pos;
    }
    return static_cast<int>(v);
  };
  h.width = next_int("width");
  h.height = next_int("height");
  h.maxval = next_int("maxval");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) raise<DataError>("ppm: malformed header, missing separator before payload");
  h.offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) raise<DataError>("ppm: image dimensions must be positive");
  if (h.maxval != 255) raise<DataError>("ppm: unsupported maxval ", h.maxval, " (only 255)");
  return h;
}

}  // namespace detail

// Binary P6 (RGB) or P5 (gray, replicated to RGB), maxval 255. Byte b maps to b / 255.
inline Image load_ppm(std::span<const std::uint8_t> bytes) {
  const auto h = detail::parse_pnm_header(bytes);
  const std::size_t channels = h.magic == '6' ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height) * channels;
  if (bytes.size() - h.offset < need) {
    raise<DataError>("ppm: truncated payload, expected ", need, " bytes, found ", bytes.size() - h.offset);
  }
  Image img(h.width, h.height);
  for (std::size_t p = 0; p < static_cast<std::size_t>(h.width) * h.height; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t b = bytes[h.offset + p * channels + (channels == 3 ? c : 0)];
      img.pixels[p * 3 + c] = static_cast<float>(b) / 255.0f;
    }
  return img;
}

inline std::vector<std::uint8_t> save_ppm(const Image& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) out.push_back(quantize_channel(v));
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise<DataError>("cannot open ", path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise<DataError>("cannot write ", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise<DataError>("write failed for ", path.string());
}

inline Image load_ppm_file(const std::filesystem::path& path) {
  try {
    return load_ppm(read_file(path));
  } catch (const DataError& e) {
    raise<DataError>(path.string(), ": ", e.what());
  }
}

inline void save_ppm_file(const std::filesystem::path& path, const Image& img) { write_file(path, save_ppm(img)); }

// Sorted list of *.ppm files in a directory.
inline std::vector<std::filesystem::path> list_ppm_files(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) raise<DataError>("not a directory: ", dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// 1 x 3 x H x W planar tensor.
inline Tensor to_tensor(const Image& img) {
  const auto hw = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> v(hw * 3);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * hw + p] = img.pixels[p * 3 + c];
  return Tensor({1, 3, img.height, img.width}, std::move(v));
}

// Accepts 1 x 3 x H x W or 3 x H x W; values are clamped to [0, 1].
inline Image from_tensor(const Tensor& t) {
  const bool batched = t.ndim() == 4;
  if (!(batched && t.dim(0) == 1 && t.dim(1) == 3) && !(t.ndim() == 3 && t.dim(0) == 3)) {
    raise<ShapeError>("from_tensor: expected 1 x 3 x H x W, got ", shape_str(t.shape()));
  }
  const int h = static_cast<int>(t.dim(-2)), w = static_cast<int>(t.dim(-1));
  Image img(w, h);
  const auto hw = static_cast<std::size_t>(w) * h;
  const auto v = t.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = std::clamp(v[c * hw + p], 0.0f, 1.0f);
  return img;
}

// Bilinear resize with half-pixel-center alignment.
inline Image resize(const Image& img, int width, int height) {
  if (width <= 0 || height <= 0) raise<ShapeError>("resize: target size must be positive");
  if (width == img.width && height == img.height) return img;
  const Tensor t = to_tensor(img);
  const auto out = detail::bilinear_planes(t.data(), 3, img.height, img.width, height, width);
  return from_tensor(Tensor({1, 3, height, width}, out));
}

enum class TextureKind { stripes, checker, blobs, noise };

inline TextureKind parse_texture_kind(const std::string& name) {
  if (name == "stripes") return TextureKind::stripes;
  if (name == "checker") return TextureKind::checker;
  if (name == "blobs") return TextureKind::blobs;
  if (name == "noise") return TextureKind::noise;
  raise<ConfigError>("unknown texture kind '", name, "'");
}

// Deterministic two-color (or noise) texture. `period` is the stripe width,
// checker cell size, or blob smoothing radius.
inline Image synth_texture(TextureKind kind, int size, std::uint64_t seed, int period = 4) {
  if (size <= 0 || period <= 0) raise<ConfigError>("synth_texture: size and period must be positive");
  Rng rng = Rng(seed).split(static_cast<std::uint64_t>(kind) + 1);
  std::array<float, 3> dark{}, light{};
  for (int c = 0; c < 3; ++c) {
    dark[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(0.0, 0.4));
    light[static_cast<std::size_t>(c)] = static_cast<float>(rng.uniform(0.6, 1.0));
  }
  Image img(size, size);
  auto paint = [&](int x, int y, bool on) {
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = on ? light[static_cast<std::size_t>(c)] : dark[static_cast<std::size_t>(c)];
  };
  switch (kind) {
    case TextureKind::stripes:
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) paint(x, y, (x / period) % 2 == 0);
      break;
    case TextureKind::checker:
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) paint(x, y, ((x / period) + (y / period)) % 2 == 0);
      break;
    case TextureKind::noise:
      for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
      break;
    case TextureKind::blobs: {
      const auto n = static_cast<std::size_t>(size) * size;
      std::vector<double> field(n), smooth(n);
      for (double& v : field) v = rng.uniform();
      // Box blur with wrap-around, then threshold at the field median.
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          double s = 0.0;
          for (int dy = -period; dy <= period; ++dy)
            for (int dx = -period; dx <= period; ++dx) {
              const int yy = ((y + dy) % size + size) % size, xx = ((x + dx) % size + size) % size;
              s += field[static_cast<std::size_t>(yy) * size + xx];
            }
          smooth[static_cast<std::size_t>(y) * size + x] = s;
        }
      std::vector<double> sorted = smooth;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
      const double median = sorted[n / 2];
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) paint(x, y, smooth[static_cast<std::size_t>(y) * size + x] >= median);
      break;
    }
  }
  return img;
}

struct ColorStats {
  std::array<double, 3> mean{};
  linalg::Matrix covariance{3};
};

// Channel means and population covariance.
inline ColorStats color_stats(std::span<const float> rgb) {
  ColorStats s;
  const std::size_t n = rgb.size() / 3;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) s.mean[c] += rgb[p * 3 + c];
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 3; ++j)
        s.covariance(i, j) += (rgb[p * 3 + static_cast<std::size_t>(i)] - s.mean[static_cast<std::size_t>(i)]) *
                              (rgb[p * 3 + static_cast<std::size_t>(j)] - s.mean[static_cast<std::size_t>(j)]);
  for (double& v : s.covariance.a) v /= static_cast<double>(n);
  return s;
}

// Linear color transfer of `style` onto the color statistics of `content`:
// s' = L_c L_s^{-1} (s - mu_s) + mu_c, with L the Cholesky factor of the RGB
// covariance regularized by 1e-6 * trace. Returns unclamped interleaved RGB.
inline std::vector<float> color_match_raw(const Image& style, const Image& content) {
  const auto ss = color_stats(style.pixels);
  const auto cs = color_stats(content.pixels);
  const double trace_s = linalg::trace(ss.covariance);
  if (!(trace_s > 0.0)) raise<NumericError>("color_match: style image has singular color covariance");
  auto regularized = [](linalg::Matrix m) {
    const double sigma = 1e-6 * linalg::trace(m);
    for (std::int64_t i = 0; i < 3; ++i) m(i, i) += sigma;
    return m;
  };
  const linalg::Matrix ls = linalg::cholesky(regularized(ss.covariance), 1e-12 * trace_s);
  const double trace_c = linalg::trace(cs.covariance);
  const linalg::Matrix lc = trace_c > 0.0 ? linalg::cholesky(regularized(cs.covariance), 1e-12 * trace_c) : linalg::Matrix(3);
  const linalg::Matrix a = linalg::multiply(lc, linalg::invert_lower(ls));

  std::vector<float> out(style.pixels.size());
  const std::size_t n = out.size() / 3;
  for (std::size_t p = 0; p < n; ++p)
    for (std::int64_t i = 0; i < 3; ++i) {
      double v = cs.mean[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < 3; ++j)
        v += a(i, j) * (style.pixels[p * 3 + static_cast<std::size_t>(j)] - ss.mean[static_cast<std::size_t>(j)]);
      out[p * 3 + static_cast<std::size_t>(i)] = static_cast<float>(v);
    }
  return out;
}

inline Image color_match(const Image& style, const Image& content) {
  Image out(style.width, style.height);
  out.pixels = color_match_raw(style, content);
  for (float& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace msgnet
