#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msgnet/runtime.hpp"
#include "msgnet/train.hpp"

using namespace msgnet;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string model, content, style, embedding, out;
  int style_size = 32;
  bool preserve_color = false;

  // train
  std::string content_dir, styles_dir, history, resume, checkpoint;
  std::optional<std::int64_t> iterations;
  std::optional<std::uint64_t> seed;

  // interp / spatial
  std::string style_a, style_b, style_fg, style_bg, mask;
  double alpha = 0.5;

  // optimize
  int iters = 100;
  float lambda_c = 1.0f, lambda_s = 5.0f, lambda_tv = 1e-6f;
  std::string init = "content";
  double lr = 0.02;
  std::uint64_t opt_seed = 0;
  std::uint64_t loss_seed = TrainConfig{}.loss_seed;
  std::string csv;

  std::string id;
};

std::unique_ptr<CLI::App> build_app(Options& o) {
  auto app = std::make_unique<CLI::App>("Multi-style generative network: training, stylization and the pixel-optimization baseline");
  app->require_subcommand(1);
  app->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app->set_version_flag("--version", "msgnet MSGW format " + std::to_string(kMsgwVersion));

  auto common = [&](CLI::App* s) {
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    s->add_option("--config", o.config, "key=value file; keys are flag names with underscores, flags win");
  };
  auto style_size = [&](CLI::App* s) { s->add_option("--style-size", o.style_size, "square side the style is resized to")->capture_default_str(); };

  auto* train = app->add_subcommand("train", "train a generator on a content and a style directory");
  common(train);
  train->add_option("--content", o.content_dir, "directory of content .ppm files");
  train->add_option("--styles", o.styles_dir, "directory of style .ppm files");
  train->add_option("--out", o.out, "output model (MSGW)");
  train->add_option("--history", o.history, "loss CSV (default: model path with .csv)");
  train->add_option("--iterations", o.iterations, "overrides the config");
  train->add_option("--seed", o.seed, "overrides the config");
  train->add_option("--resume", o.resume, "continue from a checkpoint");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint path (default: model path with .ckpt)");

  auto* stylize = app->add_subcommand("stylize", "stylize one content image");
  common(stylize);
  stylize->add_option("--model", o.model);
  stylize->add_option("--content", o.content);
  stylize->add_option("--style", o.style);
  stylize->add_option("--embedding", o.embedding, "precomputed embedding instead of --style");
  style_size(stylize);
  stylize->add_flag("--preserve-color", o.preserve_color, "recolor the style to the content first");
  stylize->add_option("--out", o.out);

  auto* interp = app->add_subcommand("interp", "stylize with (1 - alpha) * emb(a) + alpha * emb(b)");
  common(interp);
  interp->add_option("--model", o.model);
  interp->add_option("--content", o.content);
  interp->add_option("--style-a", o.style_a);
  interp->add_option("--style-b", o.style_b);
  interp->add_option("--alpha", o.alpha)->capture_default_str();
  style_size(interp);
  interp->add_option("--out", o.out);

  auto* spatial = app->add_subcommand("spatial", "foreground and background styles under a mask");
  common(spatial);
  spatial->add_option("--model", o.model);
  spatial->add_option("--content", o.content);
  spatial->add_option("--style-fg", o.style_fg);
  spatial->add_option("--style-bg", o.style_bg);
  spatial->add_option("--mask", o.mask, "grayscale .ppm, white selects the foreground style");
  style_size(spatial);
  spatial->add_option("--out", o.out);

  auto* optimize = app->add_subcommand("optimize", "optimize pixels directly against the perceptual loss");
  common(optimize);
  optimize->add_option("--content", o.content);
  optimize->add_option("--style", o.style);
  optimize->add_option("--iters", o.iters)->capture_default_str();
  optimize->add_option("--lambda-c", o.lambda_c)->capture_default_str();
  optimize->add_option("--lambda-s", o.lambda_s)->capture_default_str();
  optimize->add_option("--lambda-tv", o.lambda_tv)->capture_default_str();
  optimize->add_option("--init", o.init, "content or noise")->capture_default_str();
  optimize->add_option("--lr", o.lr)->capture_default_str();
  optimize->add_option("--seed", o.opt_seed)->capture_default_str();
  optimize->add_option("--loss-seed", o.loss_seed)->capture_default_str();
  optimize->add_option("--csv", o.csv, "loss CSV (default: output path with .csv)");
  optimize->add_option("--out", o.out);

  auto* embed = app->add_subcommand("embed", "write the style embedding of one image");
  common(embed);
  embed->add_option("--model", o.model);
  embed->add_option("--style", o.style);
  style_size(embed);
  embed->add_option("--id", o.id, "style id stored in the file (default: file stem)");
  embed->add_option("--out", o.out);

  auto* info = app->add_subcommand("info", "describe a model file");
  common(info);
  info->add_option("--model", o.model);
  return app;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) raise<ConfigError>("missing ", flag);
}

bool truthy(const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  raise<ConfigError>("config: expected a boolean, got '", v, "'");
}

NetworkWeights load_model(const std::string& path) {
  require(path, "--model");
  try {
    return load_weights(read_file(path));
  } catch (const DataError& e) {
    raise<DataError>(path, ": ", e.what());
  }
}

fs::path with_extension(const std::string& path, const char* ext) { return fs::path(path).replace_extension(ext); }

void write_text(const fs::path& path, const std::string& text) { write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())); }

StyleEmbedding style_for(const NetworkWeights& w, const std::string& path, int size, bool preserve_color = false,
                         const Image* content = nullptr) {
  return embed_style(w, load_ppm_file(path), size, preserve_color, content, fs::path(path).stem().string());
}

int run_train(const Options& o, const std::vector<std::pair<std::string, std::string>>& train_keys) {
  require(o.content_dir, "--content");
  require(o.styles_dir, "--styles");
  require(o.out, "--out");
  TrainConfig cfg;
  for (const auto& [k, v] : train_keys) set_config_value(cfg, k, v);
  if (o.iterations) cfg.iterations = *o.iterations;
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  auto data = load_training_set(o.content_dir, o.styles_dir);
  auto net = make_loss_network(cfg);
  Trainer trainer = o.resume.empty() ? Trainer(cfg, std::move(data), std::move(net))
                                     : Trainer::resume(decode_msgw(read_file(o.resume)), cfg, std::move(data), std::move(net));
  const fs::path ckpt = o.checkpoint.empty() ? with_extension(o.out, ".ckpt") : fs::path(o.checkpoint);
  trainer.run([&](const Trainer& t) { write_file(ckpt, encode_msgw(t.checkpoint())); });
  write_file(o.out, save_weights(trainer.weights()));
  write_text(o.history.empty() ? with_extension(o.out, ".csv") : fs::path(o.history), history_csv(trainer.history()));
  if (!trainer.history().empty()) {
    const auto& r = trainer.history().back();
    std::printf("iteration %lld: total %g content %g style %g tv %g\n", static_cast<long long>(r.iter), r.total, r.content, r.style, r.tv);
  }
  return 0;
}

int run_stylize(const Options& o) {
  const auto w = load_model(o.model);
  require(o.content, "--content");
  require(o.out, "--out");
  const Image content = load_ppm_file(o.content);
  StyleEmbedding emb;
  if (!o.embedding.empty()) {
    if (!o.style.empty()) raise<ConfigError>("give either --style or --embedding, not both");
    if (o.preserve_color) raise<ConfigError>("--preserve-color needs --style");
    try {
      emb = embedding_from_msgw(decode_msgw(read_file(o.embedding)));
    } catch (const DataError& e) {
      raise<DataError>(o.embedding, ": ", e.what());
    }
    check_embedding(emb, w.arch);
  } else {
    require(o.style, "--style or --embedding");
    emb = style_for(w, o.style, o.style_size, o.preserve_color, &content);
  }
  save_ppm_file(o.out, stylize(w, content, emb));
  return 0;
}

int run_interp(const Options& o) {
  const auto w = load_model(o.model);
  require(o.content, "--content");
  require(o.style_a, "--style-a");
  require(o.style_b, "--style-b");
  require(o.out, "--out");
  const auto emb = blend_embeddings(style_for(w, o.style_a, o.style_size), style_for(w, o.style_b, o.style_size), o.alpha);
  save_ppm_file(o.out, stylize(w, load_ppm_file(o.content), emb));
  return 0;
}

int run_spatial(const Options& o) {
  const auto w = load_model(o.model);
  require(o.content, "--content");
  require(o.style_fg, "--style-fg");
  require(o.style_bg, "--style-bg");
  require(o.mask, "--mask");
  require(o.out, "--out");
  const Image mask = mask_from_image(load_ppm_file(o.mask));
  save_ppm_file(o.out, spatial_stylize(w, load_ppm_file(o.content), style_for(w, o.style_fg, o.style_size),
                                       style_for(w, o.style_bg, o.style_size), mask));
  return 0;
}

int run_optimize(const Options& o) {
  require(o.content, "--content");
  require(o.style, "--style");
  require(o.out, "--out");
  OptimizeOptions opt;
  opt.iterations = o.iters;
  opt.weights.lambda_c = o.lambda_c;
  opt.weights.lambda_s = o.lambda_s;
  opt.weights.lambda_tv = o.lambda_tv;
  opt.init = parse_pixel_init(o.init);
  opt.lr = o.lr;
  opt.seed = o.opt_seed;
  const auto r = optimize_pixels(load_ppm_file(o.content), load_ppm_file(o.style), LossNetwork::seeded(o.loss_seed), opt);
  save_ppm_file(o.out, r.image);
  write_text(o.csv.empty() ? with_extension(o.out, ".csv") : fs::path(o.csv), optimize_csv(r.history));
  const auto& first = r.history.front();
  std::printf("iteration 0: total %g style %g; best total %g at iteration %d\n", first.total, first.style, r.history.back().best, r.best_iter);
  return 0;
}

int run_embed(const Options& o) {
  const auto w = load_model(o.model);
  require(o.style, "--style");
  require(o.out, "--out");
  auto emb = style_for(w, o.style, o.style_size);
  if (!o.id.empty()) emb.style_id = o.id;
  write_file(o.out, encode_msgw(embedding_to_msgw(emb)));
  return 0;
}

// Config entries become --flag=value tokens placed ahead of the real arguments,
// so with TakeLast the command line wins. Keys that are not flags of the
// subcommand belong to the training config (train only).
int dispatch(int argc, char** argv) {
  Options probe;
  auto first = build_app(probe);
  try {
    first->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = first->exit(e);
    return code == 0 ? 0 : 1;
  }
  CLI::App* sub = first->get_subcommands().front();
  const std::string name = sub->get_name();

  std::vector<std::pair<std::string, std::string>> train_keys;
  std::vector<std::string> args;
  if (!probe.config.empty()) {
    for (const auto& [k, v] : parse_key_values(read_text_file(probe.config))) {
      std::string flag = "--" + k;
      for (char& ch : flag)
        if (ch == '_') ch = '-';
      const CLI::Option* opt = sub->get_option_no_throw(flag);
      if (opt && flag != "--config") {
        if (opt->get_expected_min() == 0) {
          if (truthy(v)) args.push_back(flag);
        } else {
          args.push_back(flag + "=" + v);
        }
      } else if (name == "train") {
        train_keys.emplace_back(k, v);
      } else {
        raise<ConfigError>(probe.config, ": '", k, "' is not an option of ", name);
      }
    }
  }

  Options o;
  auto app = build_app(o);
  std::vector<std::string> full = {name};
  full.insert(full.end(), args.begin(), args.end());
  bool seen = false;
  for (int i = 1; i < argc; ++i) {
    if (!seen && argv[i] == name) {
      seen = true;
      continue;
    }
    full.emplace_back(argv[i]);
  }
  std::reverse(full.begin(), full.end());  // CLI11 consumes the vector from the back
  try {
    app->parse(full);
  } catch (const CLI::ParseError& e) {
    const int code = app->exit(e);
    return code == 0 ? 0 : 1;
  }

  if (name == "train") return run_train(o, train_keys);
  if (name == "stylize") return run_stylize(o);
  if (name == "interp") return run_interp(o);
  if (name == "spatial") return run_spatial(o);
  if (name == "optimize") return run_optimize(o);
  if (name == "embed") return run_embed(o);
  std::cout << describe_model(load_model(o.model));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
