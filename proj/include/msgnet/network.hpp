#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/gram.hpp"
#include "msgnet/image.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/rng.hpp"
#include "msgnet/serialize.hpp"
#include "msgnet/tensor.hpp"

namespace msgnet {

enum class UpsampleMode { upsampled_conv, fractional_conv };

inline std::string to_string(UpsampleMode m) {
  return m == UpsampleMode::upsampled_conv ? "upsampled_conv" : "fractional_conv";
}

inline UpsampleMode parse_upsample_mode(const std::string& s) {
  if (s == "upsampled_conv") return UpsampleMode::upsampled_conv;
  if (s == "fractional_conv") return UpsampleMode::fractional_conv;
  raise<ConfigError>("unknown upsample_mode '", s, "'");
}

// Shape of the generator. Stage k of the encoder has base_width * 2^k channels
// at 1 / 2^k resolution; stage 0 is the output of the input convolution.
struct ArchitectureSpec {
  int base_width = 8;
  int downsample_stages = 2;
  int mid_blocks = 2;
  std::vector<int> comatch_scales = {2};
  UpsampleMode upsample_mode = UpsampleMode::upsampled_conv;
  int io_kernel = 9;
  int bottleneck_expansion = 2;  // block inner width = output width / expansion

  int stage_width(int stage) const { return base_width << stage; }
  int multiple() const { return 1 << downsample_stages; }
  int min_input_size() const { return std::max(io_kernel / 2 + 1, 2 * multiple()); }

  void validate() const {
    if (base_width < 1 || downsample_stages < 0 || mid_blocks < 0 || io_kernel < 1 || io_kernel % 2 == 0) {
      raise<ConfigError>("architecture: invalid base_width/downsample_stages/mid_blocks/io_kernel");
    }
    if (bottleneck_expansion < 1) raise<ConfigError>("architecture: bottleneck_expansion must be positive");
    for (int s = 1; s <= downsample_stages; ++s) {
      if (stage_width(s) / bottleneck_expansion < 1 || stage_width(s - 1) / bottleneck_expansion < 1) {
        raise<ConfigError>("architecture: bottleneck width collapses to zero at stage ", s);
      }
    }
    std::vector<int> sorted = comatch_scales;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) raise<ConfigError>("architecture: duplicate comatch scale");
    for (int s : comatch_scales)
      if (s < 0 || s > downsample_stages) raise<ConfigError>("architecture: comatch scale ", s, " outside stages 0..", downsample_stages);
    if (comatch_scales.empty()) raise<ConfigError>("architecture: at least one comatch scale is required");
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      raise<ConfigError>("expected an integer list, got '", s, "'");
    }
    if (used != item.size()) raise<ConfigError>("expected an integer list, got '", s, "'");
    out.push_back(v);
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> architecture_meta(const ArchitectureSpec& a) {
  return {{"base_width", std::to_string(a.base_width)},
          {"downsample_stages", std::to_string(a.downsample_stages)},
          {"mid_blocks", std::to_string(a.mid_blocks)},
          {"comatch_scales", join_ints(a.comatch_scales)},
          {"upsample_mode", to_string(a.upsample_mode)},
          {"io_kernel", std::to_string(a.io_kernel)},
          {"bottleneck_expansion", std::to_string(a.bottleneck_expansion)}};
}

inline ArchitectureSpec architecture_from_meta(const MsgwFile& f) {
  auto as_int = [&](const char* key) {
    const auto& v = f.require_meta(key);
    try {
      std::size_t used = 0;
      const int x = std::stoi(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    raise<DataError>("msgw: metadata '", key, "' is not an integer: '", v, "'");
  };
  ArchitectureSpec a;
  a.base_width = as_int("base_width");
  a.downsample_stages = as_int("downsample_stages");
  a.mid_blocks = as_int("mid_blocks");
  a.io_kernel = as_int("io_kernel");
  a.bottleneck_expansion = as_int("bottleneck_expansion");
  try {
    a.comatch_scales = parse_int_list(f.require_meta("comatch_scales"));
    a.upsample_mode = parse_upsample_mode(f.require_meta("upsample_mode"));
    a.validate();
  } catch (const ConfigError& e) {
    raise<DataError>("msgw: invalid architecture block: ", e.what());
  }
  return a;
}

// Named, ordered generator parameters plus their architecture.
struct NetworkWeights {
  ArchitectureSpec arch;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    raise<DataError>("network weights: missing parameter '", name, "'");
  }

  Tensor get(const std::string& name) const {
    const auto* t = find(name);
    return t ? *t : Tensor();
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params) t.zero_grad();
  }

  // Deep copy; the copy's tensors are independent leaves.
  NetworkWeights clone() const {
    NetworkWeights c;
    c.arch = arch;
    for (const auto& [name, t] : params) c.params.emplace_back(name, Tensor(t.shape(), t.values(), t.requires_grad()));
    return c;
  }
};

// Parameters of one bottleneck residual block. Undefined shortcut means identity.
struct ResBlockWeights {
  Tensor norm1_gamma, norm1_beta, conv1;
  Tensor norm2_gamma, norm2_beta, conv2;
  Tensor norm3_gamma, norm3_beta, conv3;
  Tensor shortcut;
};

inline ResBlockWeights block_weights(const NetworkWeights& w, const std::string& prefix) {
  ResBlockWeights b;
  b.norm1_gamma = w.at(prefix + ".norm1.gamma");
  b.norm1_beta = w.at(prefix + ".norm1.beta");
  b.conv1 = w.at(prefix + ".conv1.weight");
  b.norm2_gamma = w.at(prefix + ".norm2.gamma");
  b.norm2_beta = w.at(prefix + ".norm2.beta");
  b.conv2 = w.at(prefix + ".conv2.weight");
  b.norm3_gamma = w.at(prefix + ".norm3.gamma");
  b.norm3_beta = w.at(prefix + ".norm3.beta");
  b.conv3 = w.at(prefix + ".conv3.weight");
  b.shortcut = w.get(prefix + ".shortcut.weight");
  return b;
}

inline Tensor norm_relu(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  return relu(instance_norm(x, gamma, beta));
}

// Stride-1 convolution to r*r*O channels followed by the pixel_shuffle
// rearrangement, producing N x O x rH x rW. Each r x r output block comes from
// one convolution window, so there is no overlap between windows.
inline Tensor upsampled_conv(const Tensor& input, const Tensor& weight, const Tensor& bias, int factor) {
  detail::require_rank(weight, 4, "upsampled_conv", "weight");
  if (factor < 1) raise<ShapeError>("upsampled_conv: factor must be positive");
  if (weight.dim(0) % (factor * factor) != 0) {
    raise<ShapeError>("upsampled_conv: weight output dimension ", weight.dim(0), " not divisible by ", factor * factor);
  }
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) raise<ShapeError>("upsampled_conv: kernel must be square and odd");
  const int pad = static_cast<int>(weight.dim(2) / 2);
  const Tensor conv = conv2d(input, weight, bias, 1, PaddingSpec::reflect(pad));
  return factor == 1 ? conv : pixel_shuffle(conv, factor);
}

// Pre-activation bottleneck main path shared by all residual blocks.
inline Tensor bottleneck_path(const Tensor& x, const ResBlockWeights& w, int stride, int up_factor, UpsampleMode mode) {
  Tensor h = conv2d(norm_relu(x, w.norm1_gamma, w.norm1_beta), w.conv1);
  h = norm_relu(h, w.norm2_gamma, w.norm2_beta);
  if (up_factor > 1) {
    if (mode == UpsampleMode::upsampled_conv) {
      h = upsampled_conv(h, w.conv2, Tensor(), up_factor);
    } else {
      // 3x3 transposed conv, stride 2, padding 1, output padding 1: 2H x 2W
      const auto hh = h.dim(2), ww = h.dim(3);
      h = conv2d_transposed(h, w.conv2, Tensor(), up_factor, up_factor - 1);
      h = crop(h, 1, 1, hh * up_factor, ww * up_factor);
    }
  } else {
    h = conv2d(h, w.conv2, Tensor(), stride, PaddingSpec::reflect(static_cast<int>(w.conv2.dim(2) / 2)));
  }
  h = norm_relu(h, w.norm3_gamma, w.norm3_beta);
  return conv2d(h, w.conv3);
}

// Identity-shortcut residual block.
inline Tensor res_block(const Tensor& x, const ResBlockWeights& w) {
  return add(bottleneck_path(x, w, 1, 1, UpsampleMode::upsampled_conv), x);
}

// Downsampling residual block: strided 3x3 in the main path, strided 1x1
// convolution as the shortcut.
inline Tensor down_res_block(const Tensor& x, const ResBlockWeights& w, int stride = 2) {
  return add(bottleneck_path(x, w, stride, 1, UpsampleMode::upsampled_conv), conv2d(x, w.shortcut, Tensor(), stride));
}

// Upsampling residual block: the main path upsamples in its 3x3 stage and the
// shortcut is a 1x1 fractionally-strided convolution of the same factor.
inline Tensor up_res_block(const Tensor& x, const ResBlockWeights& w, int factor = 2,
                           UpsampleMode mode = UpsampleMode::upsampled_conv) {
  return add(bottleneck_path(x, w, 1, factor, mode), conv2d_transposed(x, w.shortcut, Tensor(), factor, factor - 1));
}

namespace detail {

inline int block_mid(int out, const ArchitectureSpec& a) { return out / a.bottleneck_expansion; }

inline std::int64_t norm_params(int c) { return 2 * static_cast<std::int64_t>(c); }

}  // namespace detail

// Closed-form parameter count of the generator described by `a`.
inline std::int64_t analytic_parameter_count(const ArchitectureSpec& a) {
  using detail::norm_params;
  const std::int64_t k2 = static_cast<std::int64_t>(a.io_kernel) * a.io_kernel;
  const std::int64_t w = a.base_width;
  std::int64_t n = 3 * w * k2 + norm_params(a.base_width);
  auto bottleneck = [&](std::int64_t in, std::int64_t out, std::int64_t conv2_params) {
    const std::int64_t mid = out / a.bottleneck_expansion;
    return 2 * in + in * mid + 2 * mid + conv2_params + 2 * mid + mid * out;
  };
  for (int s = 1; s <= a.downsample_stages; ++s) {
    const std::int64_t in = a.stage_width(s - 1), out = a.stage_width(s), mid = out / a.bottleneck_expansion;
    n += bottleneck(in, out, 9 * mid * mid) + in * out;
  }
  for (int s : a.comatch_scales) n += static_cast<std::int64_t>(a.stage_width(s)) * a.stage_width(s);
  const std::int64_t cb = a.stage_width(a.downsample_stages);
  for (int m = 0; m < a.mid_blocks; ++m) {
    const std::int64_t mid = cb / a.bottleneck_expansion;
    n += bottleneck(cb, cb, 9 * mid * mid);
  }
  for (int s = a.downsample_stages; s >= 1; --s) {
    const std::int64_t in = a.stage_width(s), out = a.stage_width(s - 1), mid = out / a.bottleneck_expansion;
    const std::int64_t conv2 = a.upsample_mode == UpsampleMode::upsampled_conv ? 4 * 9 * mid * mid : 9 * mid * mid;
    n += bottleneck(in, out, conv2) + in * out;
  }
  n += norm_params(a.base_width) + w * 3 * k2 + 3;
  return n;
}

// Seeded initialization: fan-in scaled normal convolutions, unit/zero
// instance-norm affine terms, CoMatch weights (1/C) I + 0.01 noise.
inline NetworkWeights init_weights(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  NetworkWeights net;
  net.arch = arch;
  Rng root(seed);
  std::uint64_t stream = 0;
  auto normal = [&](Shape shape, double stddev) {
    Rng r = root.split(++stream);
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(stddev * r.normal());
    return Tensor(std::move(shape), std::move(v), true);
  };
  auto conv = [&](const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k) {
    net.params.emplace_back(name, normal({out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k))));
  };
  auto tconv = [&](const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k) {
    net.params.emplace_back(name, normal({in, out, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k))));
  };
  auto norm = [&](const std::string& name, std::int64_t c) {
    net.params.emplace_back(name + ".gamma", Tensor::full({c}, 1.0f, true));
    net.params.emplace_back(name + ".beta", Tensor::zeros({c}, true));
  };
  auto bias = [&](const std::string& name, std::int64_t c) { net.params.emplace_back(name, Tensor::zeros({c}, true)); };
  auto block = [&](const std::string& p, int in, int out, int kind) {  // kind: 0 identity, 1 down, 2 up
    const int mid = detail::block_mid(out, arch);
    norm(p + ".norm1", in);
    conv(p + ".conv1.weight", mid, in, 1);
    norm(p + ".norm2", mid);
    if (kind == 2 && arch.upsample_mode == UpsampleMode::upsampled_conv) {
      conv(p + ".conv2.weight", 4 * mid, mid, 3);
    } else if (kind == 2) {
      tconv(p + ".conv2.weight", mid, mid, 3);
    } else {
      conv(p + ".conv2.weight", mid, mid, 3);
    }
    norm(p + ".norm3", mid);
    conv(p + ".conv3.weight", out, mid, 1);
    if (kind == 1) conv(p + ".shortcut.weight", out, in, 1);
    if (kind == 2) tconv(p + ".shortcut.weight", in, out, 1);
  };

  conv("enc.conv_in.weight", arch.base_width, 3, arch.io_kernel);
  norm("enc.norm_in", arch.base_width);
  for (int s = 1; s <= arch.downsample_stages; ++s)
    block("enc.down" + std::to_string(s), arch.stage_width(s - 1), arch.stage_width(s), 1);
  for (int s : arch.comatch_scales) {
    const int c = arch.stage_width(s);
    Tensor w = normal({c, c}, 0.01);
    for (int i = 0; i < c; ++i) w.mutable_data()[static_cast<std::size_t>(i * c + i)] += 1.0f / static_cast<float>(c);
    net.params.emplace_back("comatch" + std::to_string(s) + ".weight", std::move(w));
  }
  for (int m = 0; m < arch.mid_blocks; ++m) {
    const int c = arch.stage_width(arch.downsample_stages);
    block("mid" + std::to_string(m), c, c, 0);
  }
  for (int s = arch.downsample_stages; s >= 1; --s)
    block("dec.up" + std::to_string(s), arch.stage_width(s), arch.stage_width(s - 1), 2);
  norm("dec.norm_out", arch.base_width);
  conv("dec.conv_out.weight", 3, arch.base_width, arch.io_kernel);
  bias("dec.conv_out.bias", 3);
  return net;
}

namespace detail {

struct PadPlan {
  int top = 0, bottom = 0, left = 0, right = 0;
};

inline PadPlan pad_to_multiple(std::int64_t h, std::int64_t w, int multiple) {
  const int th = static_cast<int>((multiple - h % multiple) % multiple);
  const int tw = static_cast<int>((multiple - w % multiple) % multiple);
  return {th / 2, th - th / 2, tw / 2, tw - tw / 2};
}

inline void check_input_size(const ArchitectureSpec& a, std::int64_t h, std::int64_t w, const char* what) {
  if (h < a.min_input_size() || w < a.min_input_size()) {
    raise<ShapeError>(what, " of size ", w, "x", h, " is below the network minimum of ", a.min_input_size());
  }
}

inline Tensor prepare_input(const Tensor& x, const ArchitectureSpec& a, PadPlan& plan, const char* what) {
  detail::require_rank(x, 4, what, "image batch");
  if (x.dim(1) != 3) raise<ShapeError>(what, ": expected 3 color channels, got ", x.dim(1));
  check_input_size(a, x.dim(2), x.dim(3), what);
  plan = pad_to_multiple(x.dim(2), x.dim(3), a.multiple());
  if (plan.top + plan.bottom + plan.left + plan.right == 0) return x;
  return reflect_pad(x, plan.top, plan.bottom, plan.left, plan.right);
}

inline bool has_scale(const ArchitectureSpec& a, int s) {
  return std::find(a.comatch_scales.begin(), a.comatch_scales.end(), s) != a.comatch_scales.end();
}

}  // namespace detail

// Encoder stages 0..downsample_stages of an already padded batch. When
// `targets` is given (one per comatch scale, in comatch_scales order) the
// CoMatch layer is applied at each site before the next stage.
inline std::vector<Tensor> run_encoder(const Tensor& x, const NetworkWeights& w, const StyleEmbedding* targets) {
  const auto& a = w.arch;
  std::vector<Tensor> stages;
  Tensor h = conv2d(x, w.at("enc.conv_in.weight"), Tensor(), 1, PaddingSpec::reflect(a.io_kernel / 2));
  h = norm_relu(h, w.at("enc.norm_in.gamma"), w.at("enc.norm_in.beta"));
  auto site = [&](int s) {
    if (!targets) return;
    for (std::size_t k = 0; k < a.comatch_scales.size(); ++k) {
      if (a.comatch_scales[k] != s) continue;
      h = comatch_forward(h, targets->grams[k].values, w.at("comatch" + std::to_string(s) + ".weight"));
    }
  };
  stages.push_back(h);
  site(0);
  for (int s = 1; s <= a.downsample_stages; ++s) {
    h = down_res_block(h, block_weights(w, "enc.down" + std::to_string(s)));
    stages.push_back(h);
    site(s);
  }
  if (targets) stages.back() = h;
  return stages;
}

// Siamese style path: shared encoder parameters, normalized Grams at the
// comatch scales. `style` is a 1 x 3 x H x W tensor (differentiable).
inline StyleEmbedding encode_style_tensor(const Tensor& style, const NetworkWeights& w) {
  detail::PadPlan plan;
  const Tensor x = detail::prepare_input(style, w.arch, plan, "style image");
  if (x.dim(0) != 1) raise<ShapeError>("style image: expected a single image, got batch of ", x.dim(0));
  const auto stages = run_encoder(x, w, nullptr);
  StyleEmbedding e;
  e.scales = w.arch.comatch_scales;
  e.style_size = style.dim(2);
  for (int s : w.arch.comatch_scales) e.grams.push_back(gram(stages[static_cast<std::size_t>(s)], true));
  return e;
}

inline Image resize_square(const Image& img, int size) { return resize(img, size, size); }

// Resizes the style image to style_size x style_size before encoding.
inline StyleEmbedding encode_style(const Image& style, const NetworkWeights& w, int style_size,
                                   std::string style_id = {}) {
  if (style_size < w.arch.min_input_size()) {
    raise<ShapeError>("style size ", style_size, " is below the network minimum of ", w.arch.min_input_size());
  }
  StyleEmbedding e = encode_style_tensor(to_tensor(resize_square(style, style_size)), w);
  e.style_id = std::move(style_id);
  e.style_size = style_size;
  return e;
}

inline void check_embedding(const StyleEmbedding& e, const ArchitectureSpec& a) {
  if (e.scales != a.comatch_scales || e.grams.size() != a.comatch_scales.size()) {
    raise<ShapeError>("embedding sites (", join_ints(e.scales), ") do not match the model (", join_ints(a.comatch_scales), ")");
  }
  for (std::size_t k = 0; k < e.grams.size(); ++k) {
    const auto c = a.stage_width(a.comatch_scales[k]);
    if (e.grams[k].channels != c) raise<ShapeError>("embedding site ", k, " has ", e.grams[k].channels, " channels, model expects ", c);
  }
}

// Generator forward pass on an N x 3 x H x W batch. Arbitrary sizes are
// reflect-padded to a multiple of 2^downsample_stages and cropped back.
inline Tensor generate_tensor(const Tensor& content, const StyleEmbedding& embedding, const NetworkWeights& w) {
  const auto& a = w.arch;
  check_embedding(embedding, a);
  detail::PadPlan plan;
  const Tensor x = detail::prepare_input(content, a, plan, "content image");
  auto stages = run_encoder(x, w, &embedding);
  Tensor h = stages.back();
  for (int m = 0; m < a.mid_blocks; ++m) h = res_block(h, block_weights(w, "mid" + std::to_string(m)));
  for (int s = a.downsample_stages; s >= 1; --s)
    h = up_res_block(h, block_weights(w, "dec.up" + std::to_string(s)), 2, a.upsample_mode);
  h = norm_relu(h, w.at("dec.norm_out.gamma"), w.at("dec.norm_out.beta"));
  h = conv2d(h, w.at("dec.conv_out.weight"), w.at("dec.conv_out.bias"), 1, PaddingSpec::reflect(a.io_kernel / 2));
  if (plan.top + plan.bottom + plan.left + plan.right == 0) return h;
  return crop(h, plan.top, plan.left, content.dim(2), content.dim(3));
}

inline Image generate(const Image& content, const StyleEmbedding& embedding, const NetworkWeights& w) {
  NoGradGuard no_grad;
  return from_tensor(generate_tensor(to_tensor(content), embedding, w));
}

inline MsgwFile weights_to_msgw(const NetworkWeights& w) {
  MsgwFile f;
  f.set_meta("kind", "model");
  for (auto& [k, v] : architecture_meta(w.arch)) f.set_meta(k, v);
  for (const auto& [name, t] : w.params) f.tensors.emplace_back(name, t);
  return f;
}

// Checks every expected parameter is present with the expected shape.
inline NetworkWeights weights_from_msgw(const MsgwFile& f) {
  const ArchitectureSpec arch = architecture_from_meta(f);
  const NetworkWeights reference = init_weights(arch, 0);
  NetworkWeights w;
  w.arch = arch;
  for (const auto& [name, ref] : reference.params) {
    const Tensor* t = f.find(name);
    if (!t) raise<DataError>("msgw: model is missing parameter '", name, "'");
    if (t->shape() != ref.shape()) {
      raise<DataError>("msgw: parameter '", name, "' has shape ", shape_str(t->shape()), ", expected ", shape_str(ref.shape()));
    }
    w.params.emplace_back(name, Tensor(t->shape(), t->values(), true));
  }
  return w;
}

inline std::vector<std::uint8_t> save_weights(const NetworkWeights& w) { return encode_msgw(weights_to_msgw(w)); }

inline NetworkWeights load_weights(std::span<const std::uint8_t> bytes) { return weights_from_msgw(decode_msgw(bytes)); }

inline MsgwFile embedding_to_msgw(const StyleEmbedding& e) {
  MsgwFile f;
  f.set_meta("kind", "embedding");
  f.set_meta("style_id", e.style_id);
  f.set_meta("style_size", std::to_string(e.style_size));
  f.set_meta("scales", join_ints(e.scales));
  for (std::size_t k = 0; k < e.grams.size(); ++k) {
    const auto& g = e.grams[k];
    f.set_meta("gram" + std::to_string(k) + ".source_dims",
               std::to_string(g.channels) + "," + std::to_string(g.height) + "," + std::to_string(g.width));
    f.set_meta("gram" + std::to_string(k) + ".normalized", g.normalized ? "1" : "0");
    f.tensors.emplace_back("gram" + std::to_string(k), g.values.detach());
  }
  return f;
}

inline StyleEmbedding embedding_from_msgw(const MsgwFile& f) {
  if (const auto* kind = f.meta_value("kind"); !kind || *kind != "embedding") raise<DataError>("msgw: file is not a style embedding");
  StyleEmbedding e;
  try {
    e.style_id = f.require_meta("style_id");
    e.style_size = std::stoll(f.require_meta("style_size"));
    e.scales = parse_int_list(f.require_meta("scales"));
    for (std::size_t k = 0; k < e.scales.size(); ++k) {
      const std::string p = "gram" + std::to_string(k);
      const Tensor* t = f.find(p);
      if (!t) raise<DataError>("msgw: embedding is missing tensor '", p, "'");
      const auto dims = parse_int_list(f.require_meta(p + ".source_dims"));
      if (dims.size() != 3) raise<DataError>("msgw: bad source_dims for ", p);
      if (t->ndim() != 2 || t->dim(0) != dims[0] || t->dim(1) != dims[0]) raise<DataError>("msgw: Gram tensor ", p, " has wrong shape");
      GramMatrix g;
      g.values = t->detach();
      g.channels = dims[0];
      g.height = dims[1];
      g.width = dims[2];
      g.normalized = f.require_meta(p + ".normalized") == "1";
      e.grams.push_back(std::move(g));
    }
  } catch (const ConfigError& err) {
    raise<DataError>("msgw: malformed embedding: ", err.what());
  } catch (const std::invalid_argument&) {
    raise<DataError>("msgw: malformed embedding metadata");
  } catch (const std::out_of_range&) {
    raise<DataError>("msgw: malformed embedding metadata");
  }
  return e;
}

}  // namespace msgnet
