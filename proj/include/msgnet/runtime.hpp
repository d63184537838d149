#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "msgnet/adam.hpp"
#include "msgnet/errors.hpp"
#include "msgnet/gram.hpp"
#include "msgnet/image.hpp"
#include "msgnet/loss.hpp"
#include "msgnet/network.hpp"
#include "msgnet/serialize.hpp"

// Inference-time manipulation on a trained generator, plus the pixel
// optimization baseline.
namespace msgnet {

// With preserve_color the style is first recolored to the content's RGB mean
// and covariance.
inline StyleEmbedding embed_style(const NetworkWeights& w, const Image& style, int style_size, bool preserve_color = false,
                                  const Image* content = nullptr, std::string style_id = {}) {
  if (preserve_color) {
    if (!content) raise<ConfigError>("preserve_color needs the content image");
    return encode_style(color_match(style, *content), w, style_size, std::move(style_id));
  }
  return encode_style(style, w, style_size, std::move(style_id));
}

inline Image stylize(const NetworkWeights& w, const Image& content, const StyleEmbedding& embedding) {
  return generate(content, embedding, w);
}

// (1 - alpha) * a + alpha * b per site.
inline StyleEmbedding blend_embeddings(const StyleEmbedding& a, const StyleEmbedding& b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) raise<ConfigError>("alpha must lie in [0, 1], got ", alpha);
  return interpolate_embeddings({a, b}, {1.0 - alpha, alpha});
}

inline Image mask_from_image(const Image& m) {
  Image out(m.width, m.height);
  for (std::size_t p = 0; p < out.pixels.size(); p += 3) {
    const float v = m.pixels[p];
    if (m.pixels[p + 1] != v || m.pixels[p + 2] != v) raise<DataError>("mask must be grayscale");
    out.pixels[p] = out.pixels[p + 1] = out.pixels[p + 2] = v;
  }
  return out;
}

// mask * fg + (1 - mask) * bg per pixel; the mask is read from its first channel.
inline Image composite(const Image& mask, const Image& fg, const Image& bg) {
  if (fg.width != bg.width || fg.height != bg.height) raise<ShapeError>("composite: foreground and background sizes differ");
  if (mask.width != fg.width || mask.height != fg.height) {
    raise<ShapeError>("mask is ", mask.width, "x", mask.height, " but the content is ", fg.width, "x", fg.height);
  }
  Image out(fg.width, fg.height);
  for (std::size_t p = 0; p < out.pixels.size(); ++p) {
    const float m = mask.pixels[p - p % 3];
    if (!(m >= 0.0f && m <= 1.0f)) raise<DataError>("mask values must lie in [0, 1]");
    out.pixels[p] = m * fg.pixels[p] + (1.0f - m) * bg.pixels[p];
  }
  return out;
}

inline Image spatial_stylize(const NetworkWeights& w, const Image& content, const StyleEmbedding& fg, const StyleEmbedding& bg,
                             const Image& mask) {
  if (mask.width != content.width || mask.height != content.height) {
    raise<ShapeError>("mask is ", mask.width, "x", mask.height, " but the content is ", content.width, "x", content.height);
  }
  return composite(mask, stylize(w, content, fg), stylize(w, content, bg));
}

enum class PixelInit { content, noise };

inline PixelInit parse_pixel_init(const std::string& s) {
  if (s == "content") return PixelInit::content;
  if (s == "noise") return PixelInit::noise;
  raise<ConfigError>("unknown init '", s, "' (expected content or noise)");
}

struct OptimizeOptions {
  int iterations = 100;
  LossWeights weights;
  PixelInit init = PixelInit::content;
  double lr = 0.02;
  std::uint64_t seed = 0;
};

struct OptimizeRecord {
  int iter = 0;
  float total = 0, content = 0, style = 0, tv = 0;
  float best = 0;  // lowest total seen up to and including this iteration
};

struct OptimizeResult {
  Image image;  // pixels at the best iteration, unclamped
  Image initial;
  int best_iter = 0;
  std::vector<OptimizeRecord> history;  // iterations 0..N; row i is evaluated after i updates
};

inline std::string optimize_csv(const std::vector<OptimizeRecord>& h) {
  std::ostringstream s;
  s.precision(9);
  s << "iter,total,content,style,tv,best\n";
  for (const auto& r : h) s << r.iter << "," << r.total << "," << r.content << "," << r.style << "," << r.tv << "," << r.best << "\n";
  return s.str();
}

// Adam directly on the output pixels against the perceptual objective.
inline OptimizeResult optimize_pixels(const Image& content, const Image& style, const LossNetwork& net, const OptimizeOptions& opt) {
  if (opt.iterations < 1) raise<ConfigError>("iterations must be at least 1");
  if (!(opt.lr > 0.0)) raise<ConfigError>("lr must be positive");
  opt.weights.validate();
  const Tensor xc = to_tensor(content);
  const auto grams = style_targets(to_tensor(style), net);

  OptimizeResult result;
  if (opt.init == PixelInit::content) {
    result.initial = content;
  } else {
    Rng rng = Rng(opt.seed).split(0x901);
    result.initial = Image(content.width, content.height);
    for (float& v : result.initial.pixels) v = static_cast<float>(rng.uniform());
  }
  Tensor y = to_tensor(result.initial);
  y.set_requires_grad(true);
  NamedParams params = {{"pixels", y}};
  AdamState adam;
  float best = std::numeric_limits<float>::infinity();
  std::vector<float> best_values = y.values();
  for (int it = 0; it <= opt.iterations; ++it) {
    Tape tape;
    TapeScope scope(tape);
    y.zero_grad();
    const LossParts parts = perceptual_loss(y, xc, grams, net, opt.weights);
    const float total = parts.total.item();
    if (!std::isfinite(total)) raise<NumericError>("optimize: loss diverged at iteration ", it);
    if (total < best) {
      best = total;
      best_values = y.values();
      result.best_iter = it;
    }
    result.history.push_back({it, total, parts.content.item(), parts.style.item(), parts.tv.item(), best});
    if (it == opt.iterations) break;
    backward(parts.total);
    adam_step(params, adam, opt.lr);
  }
  // planar to interleaved without the clamp from_tensor applies
  result.image = Image(content.width, content.height);
  const auto hw = static_cast<std::size_t>(content.width) * content.height;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) result.image.pixels[p * 3 + c] = best_values[c * hw + p];
  return result;
}

inline std::string describe_model(const NetworkWeights& w, std::uint32_t version = kMsgwVersion) {
  std::ostringstream s;
  s << "format: MSGW version " << version << "\n";
  s << "architecture:\n";
  for (const auto& [k, v] : architecture_meta(w.arch)) s << "  " << k << " = " << v << "\n";
  s << "parameters: " << w.parameter_count() << "\n";
  s << "analytic parameter count: " << analytic_parameter_count(w.arch) << "\n";
  s << "tensors: " << w.params.size() << "\n";
  return s.str();
}

}  // namespace msgnet
