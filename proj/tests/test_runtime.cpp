#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "msgnet/runtime.hpp"

using namespace msgnet;

namespace {

ArchitectureSpec tiny_arch() {
  ArchitectureSpec a;
  a.base_width = 4;
  a.io_kernel = 3;
  a.mid_blocks = 1;
  return a;
}

double mad(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.pixels.size());
}

}  // namespace

TEST(Embed, PreserveColorMatchesManualRecolor) {
  const auto w = init_weights(tiny_arch(), 1);
  const Image style = synth_texture(TextureKind::stripes, 24, 2), content = synth_texture(TextureKind::blobs, 16, 3);
  const auto e = embed_style(w, style, 16, true, &content);
  const auto ref = encode_style(color_match(style, content), w, 16);
  ASSERT_EQ(e.grams.size(), ref.grams.size());
  EXPECT_EQ(e.grams[0].values.values(), ref.grams[0].values.values());
  EXPECT_NE(e.grams[0].values.values(), encode_style(style, w, 16).grams[0].values.values());
  EXPECT_THROW(embed_style(w, style, 16, true, nullptr), ConfigError);
}

// Recoloring a style to its own statistics is nearly the identity.
TEST(Embed, PreserveColorAgainstItselfIsNearNoOp) {
  const auto w = init_weights(tiny_arch(), 1);
  const Image style = synth_texture(TextureKind::noise, 16, 4);
  const auto a = embed_style(w, style, 16, true, &style), b = embed_style(w, style, 16);
  EXPECT_LT(relative_frobenius_distance(a.grams[0].values, b.grams[0].values), 1e-3);
}

TEST(Blend, EndpointsAreBitExact) {
  const auto w = init_weights(tiny_arch(), 2);
  const auto a = encode_style(synth_texture(TextureKind::stripes, 16, 1), w, 16);
  const auto b = encode_style(synth_texture(TextureKind::checker, 16, 2), w, 16);
  EXPECT_EQ(blend_embeddings(a, b, 0.0).grams[0].values.values(), a.grams[0].values.values());
  EXPECT_EQ(blend_embeddings(a, b, 1.0).grams[0].values.values(), b.grams[0].values.values());
  const auto half = blend_embeddings(a, b, 0.5);
  EXPECT_NE(half.grams[0].values.values(), a.grams[0].values.values());
  EXPECT_NE(half.grams[0].values.values(), b.grams[0].values.values());
  const Image c = synth_texture(TextureKind::blobs, 16, 3);
  EXPECT_EQ(stylize(w, c, blend_embeddings(a, b, 0.0)), stylize(w, c, a));
  EXPECT_THROW(blend_embeddings(a, b, 1.5), ConfigError);
  EXPECT_THROW(blend_embeddings(a, b, -0.1), ConfigError);
}

TEST(Composite, ExactOnBinaryAndHalfMasks) {
  const Image fg = synth_texture(TextureKind::noise, 8, 1), bg = synth_texture(TextureKind::blobs, 8, 2);
  EXPECT_EQ(composite(Image(8, 8, 1.0f), fg, bg), fg);
  EXPECT_EQ(composite(Image(8, 8, 0.0f), fg, bg), bg);
  const Image half = composite(Image(8, 8, 0.5f), fg, bg);
  for (std::size_t i = 0; i < half.pixels.size(); ++i) EXPECT_EQ(half.pixels[i], 0.5f * fg.pixels[i] + 0.5f * bg.pixels[i]);

  Image split(8, 8, 0.0f);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) split.at(x, y, c) = 1.0f;
  const Image s = composite(split, fg, bg);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(s.at(x, y, c), x < 4 ? fg.at(x, y, c) : bg.at(x, y, c));
}

TEST(Composite, Errors) {
  const Image fg(8, 8, 0.2f), bg(8, 8, 0.4f);
  EXPECT_THROW(composite(Image(4, 8, 1.0f), fg, bg), ShapeError);
  EXPECT_THROW(composite(Image(8, 8, 1.0f), fg, Image(8, 4)), ShapeError);
  Image bad(8, 8, 0.5f);
  bad.pixels[0] = bad.pixels[1] = bad.pixels[2] = 1.5f;
  EXPECT_THROW(composite(bad, fg, bg), DataError);
  Image tinted(8, 8, 0.5f);
  tinted.pixels[1] = 0.2f;
  EXPECT_THROW(mask_from_image(tinted), DataError);
}

TEST(Spatial, RegionsComeFromTheirOwnStylization) {
  const auto w = init_weights(tiny_arch(), 5);
  const Image content = synth_texture(TextureKind::blobs, 16, 6);
  const auto a = encode_style(synth_texture(TextureKind::stripes, 16, 1), w, 16);
  const auto b = encode_style(synth_texture(TextureKind::checker, 16, 2), w, 16);
  EXPECT_EQ(spatial_stylize(w, content, a, b, Image(16, 16, 1.0f)), stylize(w, content, a));
  EXPECT_EQ(spatial_stylize(w, content, a, b, Image(16, 16, 0.0f)), stylize(w, content, b));
  EXPECT_THROW(spatial_stylize(w, content, a, b, Image(8, 8, 1.0f)), ShapeError);
}

TEST(Optimize, SelfTargetStartsAtZeroAndStaysPut) {
  const auto net = LossNetwork::seeded(3);
  const Image img = synth_texture(TextureKind::blobs, 16, 1);
  OptimizeOptions o;
  o.iterations = 5;
  o.weights.lambda_tv = 0.0;
  const auto r = optimize_pixels(img, img, net, o);
  EXPECT_EQ(r.history[0].content, 0.0f);
  EXPECT_EQ(r.history[0].style, 0.0f);
  EXPECT_EQ(r.best_iter, 0);
  EXPECT_EQ(r.image, img);
}

TEST(Optimize, BestIsRunningMinimumAndRunIsDeterministic) {
  const auto net = LossNetwork::seeded(3);
  const Image c = synth_texture(TextureKind::blobs, 16, 1), s = synth_texture(TextureKind::checker, 16, 2);
  OptimizeOptions o;
  o.iterations = 12;
  o.init = PixelInit::noise;
  o.seed = 9;
  const auto r = optimize_pixels(c, s, net, o);
  ASSERT_EQ(r.history.size(), 13u);
  float running = r.history[0].total;
  for (const auto& row : r.history) {
    running = std::min(running, row.total);
    EXPECT_EQ(row.best, running);
  }
  EXPECT_EQ(r.history[static_cast<std::size_t>(r.best_iter)].total, r.history.back().best);
  const auto again = optimize_pixels(c, s, net, o);
  EXPECT_EQ(again.image, r.image);
  EXPECT_EQ(again.initial, r.initial);
  o.seed = 10;
  EXPECT_NE(optimize_pixels(c, s, net, o).initial, r.initial);

  const std::string csv = optimize_csv(r.history);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "iter,total,content,style,tv,best");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 14);
}

TEST(Optimize, InvalidOptions) {
  const auto net = LossNetwork::seeded(3);
  const Image c(16, 16, 0.5f);
  OptimizeOptions o;
  o.iterations = 0;
  EXPECT_THROW(optimize_pixels(c, c, net, o), ConfigError);
  o.iterations = 1;
  o.lr = 0.0;
  EXPECT_THROW(optimize_pixels(c, c, net, o), ConfigError);
  EXPECT_EQ(parse_pixel_init("noise"), PixelInit::noise);
  EXPECT_THROW(parse_pixel_init("zeros"), ConfigError);
}

TEST(Describe, ReportsCountsAndArchitecture) {
  const auto w = init_weights(tiny_arch(), 1);
  const std::string d = describe_model(w);
  EXPECT_NE(d.find("parameters: " + std::to_string(analytic_parameter_count(tiny_arch()))), std::string::npos) << d;
  EXPECT_NE(d.find("analytic parameter count: " + std::to_string(w.parameter_count())), std::string::npos);
  EXPECT_NE(d.find("base_width = 4"), std::string::npos) << d;
}

TEST(Embed, SavedEmbeddingStylizesIdentically) {
  const auto w = init_weights(tiny_arch(), 7);
  const auto e = encode_style(synth_texture(TextureKind::checker, 24, 1), w, 16, "checker");
  const auto back = embedding_from_msgw(decode_msgw(encode_msgw(embedding_to_msgw(e))));
  EXPECT_EQ(back.style_id, "checker");
  const Image c = synth_texture(TextureKind::blobs, 16, 2);
  EXPECT_EQ(stylize(w, c, back), stylize(w, c, e));
  EXPECT_GT(mad(stylize(w, c, e), c), 0.0);
}
