#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msgnet/adam.hpp"
#include "msgnet/errors.hpp"
#include "msgnet/image.hpp"
#include "msgnet/loss.hpp"
#include "msgnet/network.hpp"
#include "msgnet/rng.hpp"
#include "msgnet/serialize.hpp"

namespace msgnet {

struct TrainConfig {
  float lambda_c = 1.0f;
  float lambda_s = 5.0f;
  float lambda_tv = 1e-6f;
  double lr = 1e-3;
  int batch_size = 2;
  std::int64_t iterations = 300;
  std::vector<int> style_size_cycle = {16, 32, 48};
  int content_size = 32;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t loss_seed = 0x10557;
  std::string loss_network;  // optional MSGW file with external loss-network weights
  ArchitectureSpec arch;

  // The full-size recipe. Not used by any test; a desk CPU cannot run it.
  static TrainConfig full_scale() {
    TrainConfig c;
    c.batch_size = 4;
    c.iterations = 80000;
    c.style_size_cycle = {256, 512, 768};
    c.content_size = 256;
    c.arch.base_width = 64;
    return c;
  }

  LossWeights loss_weights() const {
    LossWeights lw;
    lw.lambda_c = lambda_c;
    lw.lambda_s = lambda_s;
    lw.lambda_tv = lambda_tv;
    return lw;
  }

  void validate() const {
    arch.validate();
    loss_weights().validate();
    if (!(lr > 0.0) || !std::isfinite(lr)) raise<ConfigError>("lr must be positive");
    if (batch_size < 1) raise<ConfigError>("batch_size must be positive");
    if (iterations < 1) raise<ConfigError>("iterations must be positive");
    if (checkpoint_every < 0) raise<ConfigError>("checkpoint_every must be nonnegative");
    if (style_size_cycle.empty()) raise<ConfigError>("style_size_cycle must not be empty");
    const int lo = std::max(arch.min_input_size(), 1 << (LossNetwork::kStages - 1));
    for (int s : style_size_cycle)
      if (s < lo) raise<ConfigError>("style size ", s, " is below the minimum of ", lo);
    if (content_size < lo) raise<ConfigError>("content_size ", content_size, " is below the minimum of ", lo);
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) raise<ConfigError>("config: value for '", key, "' is not a valid number: '", v, "'");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  auto list = [&] {
    try {
      return parse_int_list(value);
    } catch (const ConfigError&) {
      raise<ConfigError>("config: value for '", key, "' is not an integer list: '", value, "'");
    }
  };
  if (key == "lambda_c") c.lambda_c = parse_number<float>(key, value);
  else if (key == "lambda_s") c.lambda_s = parse_number<float>(key, value);
  else if (key == "lambda_tv") c.lambda_tv = parse_number<float>(key, value);
  else if (key == "lr") c.lr = parse_number<double>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
  else if (key == "iterations") c.iterations = parse_number<std::int64_t>(key, value);
  else if (key == "style_size_cycle") c.style_size_cycle = list();
  else if (key == "content_size") c.content_size = parse_number<int>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "checkpoint_every") c.checkpoint_every = parse_number<std::int64_t>(key, value);
  else if (key == "loss_seed") c.loss_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "loss_network") c.loss_network = value;
  else if (key == "base_width") c.arch.base_width = parse_number<int>(key, value);
  else if (key == "downsample_stages") c.arch.downsample_stages = parse_number<int>(key, value);
  else if (key == "mid_blocks") c.arch.mid_blocks = parse_number<int>(key, value);
  else if (key == "comatch_scales") c.arch.comatch_scales = list();
  else if (key == "upsample_mode") c.arch.upsample_mode = parse_upsample_mode(value);
  else if (key == "io_kernel") c.arch.io_kernel = parse_number<int>(key, value);
  else if (key == "bottleneck_expansion") c.arch.bottleneck_expansion = parse_number<int>(key, value);
  else raise<ConfigError>("config: unknown key '", key, "'");
}

// key=value lines; blank lines and lines starting with '#' are ignored.
// Returns the pairs in file order. Repeated keys are an error.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) raise<ConfigError>("config line ", lineno, ": expected key=value, got '", t, "'");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) raise<ConfigError>("config line ", lineno, ": empty key");
    for (const auto& [k, v] : out)
      if (k == key) raise<ConfigError>("config line ", lineno, ": key '", key, "' given twice");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline TrainConfig parse_train_config(std::string_view text, TrainConfig base = {}) {
  for (const auto& [k, v] : parse_key_values(text)) set_config_value(base, k, v);
  return base;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

inline TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {}) {
  try {
    return parse_train_config(read_text_file(path), base);
  } catch (const ConfigError& e) {
    raise<ConfigError>(path.string(), ": ", e.what());
  }
}

inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  using detail::format_number;
  std::vector<std::pair<std::string, std::string>> kv = {
      {"lambda_c", format_number(c.lambda_c)},
      {"lambda_s", format_number(c.lambda_s)},
      {"lambda_tv", format_number(c.lambda_tv)},
      {"lr", format_number(c.lr)},
      {"batch_size", std::to_string(c.batch_size)},
      {"iterations", std::to_string(c.iterations)},
      {"style_size_cycle", join_ints(c.style_size_cycle)},
      {"content_size", std::to_string(c.content_size)},
      {"seed", std::to_string(c.seed)},
      {"checkpoint_every", std::to_string(c.checkpoint_every)},
      {"loss_seed", std::to_string(c.loss_seed)},
      {"loss_network", c.loss_network},
  };
  for (auto& e : architecture_meta(c.arch)) kv.push_back(std::move(e));
  return kv;
}

// Inverse of parse_train_config.
inline std::string format_train_config(const TrainConfig& c) {
  std::string s;
  for (const auto& [k, v] : config_entries(c)) s += k + "=" + v + "\n";
  return s;
}

inline LossNetwork make_loss_network(const TrainConfig& c) {
  if (c.loss_network.empty()) return LossNetwork::seeded(c.loss_seed);
  return LossNetwork::from_msgw(decode_msgw(read_file(c.loss_network)));
}

struct LossRecord {
  std::int64_t iter = 0;
  float total = 0, content = 0, style = 0, tv = 0;

  bool operator==(const LossRecord&) const = default;
};

inline std::string history_csv(const std::vector<LossRecord>& h) {
  std::string s = "iter,total,content,style,tv\n";
  using detail::format_number;
  for (const auto& r : h) {
    s += std::to_string(r.iter) + "," + format_number(r.total) + "," + format_number(r.content) + "," +
         format_number(r.style) + "," + format_number(r.tv) + "\n";
  }
  return s;
}

// Trailing moving average with the given window (shorter at the start).
inline std::vector<double> smoothed_totals(const std::vector<LossRecord>& h, std::size_t window) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    acc += h[i].total;
    if (i >= window) acc -= h[i - window].total;
    out.push_back(acc / static_cast<double>(std::min(window, i + 1)));
  }
  return out;
}

struct TrainingSet {
  std::vector<Image> contents;
  std::vector<Image> styles;
};

// Every *.ppm of both directories, sorted by name. Any unreadable file aborts.
inline TrainingSet load_training_set(const std::filesystem::path& content_dir, const std::filesystem::path& style_dir) {
  TrainingSet set;
  auto load_all = [](const std::filesystem::path& dir, std::vector<Image>& into, const char* what) {
    const auto files = list_ppm_files(dir);
    if (files.empty()) raise<DataError>("no .ppm ", what, " images in ", dir.string());
    for (const auto& f : files) into.push_back(load_ppm_file(f));
  };
  load_all(content_dir, set.contents, "content");
  load_all(style_dir, set.styles, "style");
  return set;
}

class Trainer {
 public:
  Trainer(TrainConfig config, TrainingSet data, LossNetwork loss_net)
      : config_(std::move(config)), data_(std::move(data)), loss_net_(std::move(loss_net)) {
    config_.validate();
    if (data_.contents.empty() || data_.styles.empty()) raise<DataError>("training needs at least one content and one style image");
    weights_ = init_weights(config_.arch, config_.seed);
  }

  // Continue from a checkpoint written by checkpoint(). The architecture and
  // every setting that shapes the sample stream must match.
  static Trainer resume(const MsgwFile& ckpt, TrainConfig config, TrainingSet data, LossNetwork loss_net) {
    Trainer t(std::move(config), std::move(data), std::move(loss_net));
    if (const auto* kind = ckpt.meta_value("kind"); !kind || *kind != "checkpoint") raise<DataError>("msgw: file is not a training checkpoint");
    const ArchitectureSpec arch = architecture_from_meta(ckpt);
    if (!(arch == t.config_.arch)) raise<DataError>("checkpoint architecture does not match the configured architecture");
    for (const auto& [k, v] : config_entries(t.config_)) {
      if (k == "iterations" || k == "checkpoint_every" || k == "loss_network") continue;
      const auto* stored = ckpt.meta_value("train." + k);
      if (!stored || *stored != v) raise<DataError>("checkpoint setting '", k, "' differs from the configuration");
    }
    t.weights_ = weights_from_msgw(ckpt);
    auto as_i64 = [&](const char* key) {
      try {
        return std::stoll(ckpt.require_meta(key));
      } catch (const std::logic_error&) {
        raise<DataError>("msgw: metadata '", key, "' is not an integer");
      }
    };
    t.iteration_ = as_i64("train.iteration");
    t.adam_.step = as_i64("adam.t");
    if (t.adam_.step > 0) {
      for (const auto& [name, p] : t.weights_.params) {
        const Tensor* m = ckpt.find("adam.m/" + name);
        const Tensor* v = ckpt.find("adam.v/" + name);
        if (!m || !v || m->shape() != p.shape() || v->shape() != p.shape()) raise<DataError>("checkpoint: bad optimizer state for '", name, "'");
        t.adam_.m.push_back(m->values());
        t.adam_.v.push_back(v->values());
      }
    }
    if (t.iteration_ > 0) {
      const Tensor* h = ckpt.find("train.history");
      const Tensor* s = ckpt.find("train.style_sizes");
      if (!h || !s || h->shape() != Shape{t.iteration_, 4} || s->shape() != Shape{t.iteration_}) {
        raise<DataError>("checkpoint: history does not cover ", t.iteration_, " iterations");
      }
      for (std::int64_t i = 0; i < t.iteration_; ++i) {
        const auto* r = h->data().data() + i * 4;
        t.history_.push_back({i, r[0], r[1], r[2], r[3]});
        t.style_sizes_.push_back(static_cast<int>(s->data()[static_cast<std::size_t>(i)]));
      }
    }
    return t;
  }

  const TrainConfig& config() const { return config_; }
  const NetworkWeights& weights() const { return weights_; }
  const AdamState& adam() const { return adam_; }
  const LossNetwork& loss_network() const { return loss_net_; }
  std::int64_t iteration() const { return iteration_; }
  const std::vector<LossRecord>& history() const { return history_; }
  const std::vector<int>& style_sizes() const { return style_sizes_; }

  struct Sample {
    std::vector<std::size_t> contents;
    std::size_t style = 0;
    int style_size = 0;
  };

  // Draws depend only on (seed, iteration), so a resumed run sees the same
  // stream as an uninterrupted one.
  Sample sample(std::int64_t iter) const {
    Rng rng = Rng(config_.seed).split(0x5a3d1e).split(static_cast<std::uint64_t>(iter));
    Sample s;
    for (int b = 0; b < config_.batch_size; ++b) s.contents.push_back(static_cast<std::size_t>(rng.below(data_.contents.size())));
    s.style = static_cast<std::size_t>(rng.below(data_.styles.size()));
    s.style_size = config_.style_size_cycle[static_cast<std::size_t>(iter) % config_.style_size_cycle.size()];
    return s;
  }

  // One optimizer step on the loss of the current iteration's sample.
  LossRecord step() {
    const Sample s = sample(iteration_);
    LossRecord rec;
    {
      Tape tape;
      TapeScope scope(tape);
      weights_.zero_grad();
      const LossParts parts = objective(s);
      backward(parts.total);
      rec = {iteration_, parts.total.item(), parts.content.item(), parts.style.item(), parts.tv.item()};
    }
    adam_step(weights_.params, adam_, config_.lr);
    history_.push_back(rec);
    style_sizes_.push_back(s.style_size);
    ++iteration_;
    return rec;
  }

  // Runs to config().iterations. `on_checkpoint` fires every checkpoint_every
  // iterations when both are set.
  void run(const std::function<void(const Trainer&)>& on_checkpoint = {},
           const std::function<void(const LossRecord&)>& on_step = {}) {
    while (iteration_ < config_.iterations) {
      const auto rec = step();
      if (on_step) on_step(rec);
      if (on_checkpoint && config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0) on_checkpoint(*this);
    }
  }

  // Largest |gradient| of every trainable parameter at the current iteration's
  // sample, without updating anything.
  std::vector<std::pair<std::string, double>> gradient_audit() {
    Tape tape;
    TapeScope scope(tape);
    weights_.zero_grad();
    backward(objective(sample(iteration_)).total);
    std::vector<std::pair<std::string, double>> out;
    for (const auto& [name, t] : weights_.params) {
      double m = 0.0;
      for (float g : t.grad()) m = std::max(m, static_cast<double>(std::abs(g)));
      out.emplace_back(name, m);
    }
    weights_.zero_grad();
    return out;
  }

  MsgwFile checkpoint() const {
    MsgwFile f = weights_to_msgw(weights_);
    f.set_meta("kind", "checkpoint");
    f.set_meta("train.iteration", std::to_string(iteration_));
    f.set_meta("adam.t", std::to_string(adam_.step));
    for (const auto& [k, v] : config_entries(config_)) f.set_meta("train." + k, v);
    if (adam_.step > 0) {
      for (std::size_t k = 0; k < weights_.params.size(); ++k) {
        const auto& [name, p] = weights_.params[k];
        f.tensors.emplace_back("adam.m/" + name, Tensor(p.shape(), adam_.m[k]));
        f.tensors.emplace_back("adam.v/" + name, Tensor(p.shape(), adam_.v[k]));
      }
    }
    if (iteration_ > 0) {
      std::vector<float> h, s;
      for (std::size_t i = 0; i < history_.size(); ++i) {
        h.insert(h.end(), {history_[i].total, history_[i].content, history_[i].style, history_[i].tv});
        s.push_back(static_cast<float>(style_sizes_[i]));
      }
      f.tensors.emplace_back("train.history", Tensor({iteration_, 4}, std::move(h)));
      f.tensors.emplace_back("train.style_sizes", Tensor({iteration_}, std::move(s)));
    }
    return f;
  }

 private:
  struct StyleEntry {
    Tensor image;
    std::vector<Tensor> grams;
  };

  const Tensor& content_tensor(std::size_t i) {
    auto it = content_cache_.find(i);
    if (it == content_cache_.end()) {
      it = content_cache_.emplace(i, to_tensor(resize_square(data_.contents[i], config_.content_size))).first;
    }
    return it->second;
  }

  const StyleEntry& style_entry(std::size_t i, int size) {
    const auto key = std::make_pair(i, size);
    auto it = style_cache_.find(key);
    if (it == style_cache_.end()) {
      StyleEntry e;
      e.image = to_tensor(resize_square(data_.styles[i], size));
      e.grams = style_targets(e.image, loss_net_);
      it = style_cache_.emplace(key, std::move(e)).first;
    }
    return it->second;
  }

  LossParts objective(const Sample& s) {
    std::vector<Tensor> batch;
    for (std::size_t i : s.contents) batch.push_back(content_tensor(i));
    const Tensor content = batch.size() == 1 ? batch[0] : concat0(batch);
    const StyleEntry& style = style_entry(s.style, s.style_size);
    const StyleEmbedding emb = encode_style_tensor(style.image, weights_);
    const Tensor y = generate_tensor(content, emb, weights_);
    return perceptual_loss(y, content, style.grams, loss_net_, config_.loss_weights());
  }

  TrainConfig config_;
  TrainingSet data_;
  LossNetwork loss_net_;
  NetworkWeights weights_;
  AdamState adam_;
  std::int64_t iteration_ = 0;
  std::vector<LossRecord> history_;
  std::vector<int> style_sizes_;
  std::map<std::size_t, Tensor> content_cache_;
  std::map<std::pair<std::size_t, int>, StyleEntry> style_cache_;
};

}  // namespace msgnet
