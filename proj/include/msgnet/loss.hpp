#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msgnet/errors.hpp"
#include "msgnet/gram.hpp"
#include "msgnet/ops.hpp"
#include "msgnet/rng.hpp"
#include "msgnet/serialize.hpp"
#include "msgnet/tensor.hpp"

namespace msgnet {

// Frozen descriptive network: 4 stages of 2 x [3x3 conv -> ReLU] with 2x2
// average pooling between stages. Convolutions are reflect-padded. Tap i is the last ReLU of stage i.
//
// Inputs are preprocessed as (x - input_mean) * input_scale, mirroring the
// 0..255 mean-subtracted inputs of ImageNet-trained loss networks.
struct LossNetwork {
  static constexpr int kStages = 4;
  static constexpr int kConvsPerStage = 2;

  std::vector<Tensor> weights;  // kStages * kConvsPerStage, OIKK
  std::vector<Tensor> biases;
  float input_mean = 0.5f;
  float input_scale = 255.0f;

  std::int64_t tap_channels(int tap) const { return weights[static_cast<std::size_t>(tap * kConvsPerStage + 1)].dim(0); }

  static LossNetwork seeded(std::uint64_t seed, std::array<int, kStages> widths = {8, 16, 32, 64}) {
    LossNetwork net;
    Rng root = Rng(seed).split(0x105505);
    std::uint64_t stream = 0;
    std::int64_t in = 3;
    for (int s = 0; s < kStages; ++s) {
      for (int k = 0; k < kConvsPerStage; ++k) {
        const std::int64_t out = widths[static_cast<std::size_t>(s)];
        Rng r = root.split(++stream);
        const double stddev = std::sqrt(2.0 / static_cast<double>(in * 9));
        std::vector<float> v(static_cast<std::size_t>(out * in * 9));
        for (auto& x : v) x = static_cast<float>(stddev * r.normal());
        net.weights.emplace_back(Shape{out, in, 3, 3}, std::move(v));
        net.biases.push_back(Tensor::zeros({out}));
        in = out;
      }
    }
    return net;
  }

  // External weights: tensors "stage<i>.conv<j>.weight" / ".bias" (i in 1..4,
  // j in 1..2) and optional metadata input_mean / input_scale.
  static LossNetwork from_msgw(const MsgwFile& f) {
    LossNetwork net;
    std::int64_t in = 3;
    for (int s = 1; s <= kStages; ++s)
      for (int k = 1; k <= kConvsPerStage; ++k) {
        const std::string p = "stage" + std::to_string(s) + ".conv" + std::to_string(k);
        const Tensor* w = f.find(p + ".weight");
        const Tensor* b = f.find(p + ".bias");
        if (!w || !b) raise<DataError>("loss network: missing ", p, " weight or bias");
        if (w->ndim() != 4 || w->dim(1) != in || w->dim(2) != 3 || w->dim(3) != 3) {
          raise<DataError>("loss network: ", p, ".weight has shape ", shape_str(w->shape()), ", expected [O, ", in, ", 3, 3]");
        }
        if (b->ndim() != 1 || b->dim(0) != w->dim(0)) raise<DataError>("loss network: ", p, ".bias shape mismatch");
        net.weights.push_back(w->detach());
        net.biases.push_back(b->detach());
        in = w->dim(0);
      }
    try {
      if (const auto* m = f.meta_value("input_mean")) net.input_mean = std::stof(*m);
      if (const auto* m = f.meta_value("input_scale")) net.input_scale = std::stof(*m);
    } catch (const std::exception&) {
      raise<DataError>("loss network: malformed input_mean/input_scale metadata");
    }
    return net;
  }

  MsgwFile to_msgw() const {
    MsgwFile f;
    f.set_meta("kind", "loss_network");
    f.set_meta("input_mean", std::to_string(input_mean));
    f.set_meta("input_scale", std::to_string(input_scale));
    for (int s = 0; s < kStages; ++s)
      for (int k = 0; k < kConvsPerStage; ++k) {
        const std::string p = "stage" + std::to_string(s + 1) + ".conv" + std::to_string(k + 1);
        const auto idx = static_cast<std::size_t>(s * kConvsPerStage + k);
        f.tensors.emplace_back(p + ".weight", weights[idx]);
        f.tensors.emplace_back(p + ".bias", biases[idx]);
      }
    return f;
  }
};

// Features at the four taps; differentiable with respect to x only.
inline std::vector<Tensor> extract_features(const Tensor& x, const LossNetwork& net) {
  detail::require_rank(x, 4, "extract_features", "input");
  if (x.dim(1) != 3) raise<ShapeError>("extract_features: expected 3 channels, got ", x.dim(1));
  constexpr int kMin = 1 << (LossNetwork::kStages - 1);
  if (x.dim(2) < kMin || x.dim(3) < kMin) {
    raise<ShapeError>("extract_features: input ", x.dim(3), "x", x.dim(2), " is smaller than the minimum ", kMin, "x", kMin);
  }
  const Tensor mean_t = Tensor::scalar(net.input_mean);
  Tensor h = mul_scalar(sub(x, mean_t), net.input_scale);
  std::vector<Tensor> taps;
  for (int s = 0; s < LossNetwork::kStages; ++s) {
    if (s > 0) h = avg_pool2d(h, 2);
    for (int k = 0; k < LossNetwork::kConvsPerStage; ++k) {
      const auto idx = static_cast<std::size_t>(s * LossNetwork::kConvsPerStage + k);
      // a single row or column has nothing to mirror; zero pad there
      const auto pad = h.dim(2) > 1 && h.dim(3) > 1 ? PaddingSpec::reflect(1) : PaddingSpec::zeros(1);
      h = relu(conv2d(h, net.weights[idx], net.biases[idx], 1, pad));
    }
    taps.push_back(h);
  }
  return taps;
}

// Squared anisotropic total variation summed over batch and channels.
inline Tensor tv_loss(const Tensor& y) {
  detail::require_rank(y, 4, "tv_loss", "input");
  const auto planes = y.dim(0) * y.dim(1), h = y.dim(2), w = y.dim(3);
  const auto v = y.data();
  double s = 0.0;
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const double c = v[static_cast<std::size_t>((p * h + i) * w + j)];
        if (j + 1 < w) {
          const double d = v[static_cast<std::size_t>((p * h + i) * w + j + 1)] - c;
          s += d * d;
        }
        if (i + 1 < h) {
          const double d = v[static_cast<std::size_t>((p * h + i + 1) * w + j)] - c;
          s += d * d;
        }
      }
  return detail::make_result("tv_loss", {1}, {static_cast<float>(s)}, {y}, [=](std::span<const float> g) {
    float* gy = detail::grad_sink(y);
    if (!gy) return;
    const auto yv = y.data();
    const double g0 = g[0];
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const auto at = [&](std::int64_t a, std::int64_t b) { return static_cast<double>(yv[static_cast<std::size_t>((p * h + a) * w + b)]); };
          double d = 0.0;
          const double c = at(i, j);
          if (j + 1 < w) d -= 2.0 * (at(i, j + 1) - c);
          if (j > 0) d += 2.0 * (c - at(i, j - 1));
          if (i + 1 < h) d -= 2.0 * (at(i + 1, j) - c);
          if (i > 0) d += 2.0 * (c - at(i - 1, j));
          gy[(p * h + i) * w + j] += static_cast<float>(g0 * d);
        }
  });
}

struct LossWeights {
  float lambda_c = 1.0f;
  float lambda_s = 5.0f;
  float lambda_tv = 1e-6f;
  int content_tap = 2;                   // 1-based
  std::vector<int> style_taps = {1, 2, 3, 4};

  void validate() const {
    if (lambda_c < 0 || lambda_s < 0 || lambda_tv < 0) raise<ConfigError>("loss weights must be nonnegative");
    if (!(lambda_c > 0 || lambda_s > 0)) raise<ConfigError>("at least one of lambda_c, lambda_s must be positive");
    if (content_tap < 1 || content_tap > LossNetwork::kStages) raise<ConfigError>("content tap out of range");
    for (int t : style_taps)
      if (t < 1 || t > LossNetwork::kStages) raise<ConfigError>("style tap ", t, " out of range");
  }
};

// Terms are unweighted; total carries the lambdas.
struct LossParts {
  Tensor total;
  Tensor content;
  Tensor style;
  Tensor tv;
};

// Normalized style Grams of a target image at every tap (no gradient).
inline std::vector<Tensor> style_targets(const Tensor& style_image, const LossNetwork& net) {
  NoGradGuard no_grad;
  const auto taps = extract_features(style_image, net);
  std::vector<Tensor> grams;
  for (const auto& t : taps) grams.push_back(gram(select0(t, 0), true).values);
  return grams;
}

// lambda_c ||F^c(y) - F^c(x_c)||^2 + lambda_s sum_i ||G(F^i(y)) - G_s^i||^2 + lambda_tv tv(y),
// summed over the batch. `style_grams[i]` is the normalized Gram at tap i + 1.
inline LossParts perceptual_loss(const Tensor& y, const Tensor& content, const std::vector<Tensor>& style_grams,
                                 const LossNetwork& net, const LossWeights& lw) {
  lw.validate();
  if (y.shape() != content.shape()) {
    raise<ShapeError>("perceptual_loss: output ", shape_str(y.shape()), " and content ", shape_str(content.shape()), " differ");
  }
  if (style_grams.size() != static_cast<std::size_t>(LossNetwork::kStages)) {
    raise<ShapeError>("perceptual_loss: expected ", LossNetwork::kStages, " style Grams, got ", style_grams.size());
  }
  const auto fy = extract_features(y, net);
  std::vector<Tensor> fc;
  {
    NoGradGuard no_grad;
    fc = extract_features(content.detach(), net);
  }
  LossParts parts;
  const auto ci = static_cast<std::size_t>(lw.content_tap - 1);
  parts.content = sum_squares(sub(fy[ci], fc[ci]));
  Tensor style;
  for (int t : lw.style_taps) {
    const auto i = static_cast<std::size_t>(t - 1);
    const auto c = fy[i].dim(1);
    const auto& target = style_grams[i];
    if (target.ndim() != 2 || target.dim(0) != c || target.dim(1) != c) {
      raise<ShapeError>("perceptual_loss: style Gram at tap ", t, " has shape ", shape_str(target.shape()), ", expected ", c, "x", c);
    }
    const Tensor term = sum_squares(sub(batched_gram(fy[i], true), target));
    style = style.defined() ? add(style, term) : term;
  }
  parts.style = style.defined() ? style : Tensor::scalar(0.0f);
  parts.tv = tv_loss(y);
  parts.total = add(add(mul_scalar(parts.content, lw.lambda_c), mul_scalar(parts.style, lw.lambda_s)),
                    mul_scalar(parts.tv, lw.lambda_tv));
  return parts;
}

}  // namespace msgnet
