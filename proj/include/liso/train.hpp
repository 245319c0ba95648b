// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "liso/checkpoint.hpp"
#include "liso/imageio.hpp"
#include "liso/losses.hpp"
#include "liso/nets.hpp"

namespace liso {

/// First-order adaptive-moment optimizer over archive entries.
class Adam {
 public:
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  Adam() = default;
  explicit Adam(double learning_rate) : lr(learning_rate) {}

  /// Updates every trainable entry whose name starts with one of the
  /// prefixes, using its accumulated gradient.
  void step(ParameterArchive& a, const std::vector<std::string>& prefixes) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, t_);
    const double c2 = 1.0 - std::pow(beta2, t_);
    for (auto& [name, e] : a.entries()) {
      if (!e.trainable || !matches(name, prefixes)) continue;
      if (e.grad.shape() != e.value.shape()) continue;
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != e.value.size()) {
        m.assign(e.value.size(), 0.0f);
        v.assign(e.value.size(), 0.0f);
      }
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g);
        v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * g * g);
        e.value[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
      }
    }
  }

  long steps() const { return t_; }

  static bool matches(const std::string& name, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes)
      if (name.compare(0, p.size(), p) == 0) return true;
    return false;
  }

 private:
  long t_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

inline constexpr float kCriticClip = 0.01f;

inline void clamp_component(ParameterArchive& a, const std::string& prefix, float bound) {
  for (auto& [name, e] : a.entries())
    if (e.trainable && name.compare(0, prefix.size(), prefix) == 0)
      for (auto& v : e.value.storage()) v = std::clamp(v, -bound, bound);
}

struct TrainConfig {
  std::string data_dir;
  std::size_t val_count = 1000;
  std::size_t train_count = 1000;
  int crop_size = 128;
  int steps = 15;  // unrolled encoder iterations T
  double eta_train = 1.0;
  LossWeights weights;
  int epochs = 1;
  int batch_size = 4;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  double tau = std::numeric_limits<double>::infinity();
  JpegConfig jpeg;
  NetConfig net;
  std::string checkpoint;       // written every epoch when set
  std::string log;              // CSV, one row per encoder-decoder update
  std::string init_checkpoint;  // start from these weights when set
  long max_updates = 0;         // 0: no cap

  void validate() const {
    require(steps >= 1, ErrorCode::ConfigError, "steps must be >= 1");
    require(eta_train > 0.0, ErrorCode::ConfigError, "eta_train must be > 0");
    require(epochs >= 1, ErrorCode::ConfigError, "epochs must be >= 1");
    require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be >= 1");
    require(learning_rate > 0.0, ErrorCode::ConfigError, "learning_rate must be > 0");
    require(crop_size >= kMinImageSide, ErrorCode::ConfigError, "crop_size must be >= 16");
    require(tau > 0.0, ErrorCode::ConfigError, "tau must be > 0");
    try {
      weights.validate();
      jpeg.validate();
      net.validate();
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, e.what());
    }
  }
};

/// Applies one `key = value` setting.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto num = [&](auto& field) {
    using F = std::decay_t<decltype(field)>;
    std::istringstream is(value);
    F v{};
    if constexpr (std::is_same_v<F, bool>) {
      if (value == "true" || value == "1") v = true;
      else if (value == "false" || value == "0") v = false;
      else fail(ErrorCode::ConfigError, "key '" + key + "': expected true/false, got '" + value + "'");
    } else {
      is >> v;
      require(!is.fail() && is.peek() == std::char_traits<char>::eof(), ErrorCode::ConfigError,
              "key '" + key + "': cannot parse '" + value + "'");
    }
    field = v;
  };
  if (key == "data_dir") c.data_dir = value;
  else if (key == "val_count") num(c.val_count);
  else if (key == "train_count") num(c.train_count);
  else if (key == "crop_size") num(c.crop_size);
  else if (key == "steps" || key == "T") num(c.steps);
  else if (key == "eta_train") num(c.eta_train);
  else if (key == "lambda") num(c.weights.lambda);
  else if (key == "mu") num(c.weights.mu);
  else if (key == "gamma") num(c.weights.gamma);
  else if (key == "epochs") num(c.epochs);
  else if (key == "batch_size") num(c.batch_size);
  else if (key == "learning_rate") num(c.learning_rate);
  else if (key == "seed") num(c.seed);
  else if (key == "tau") num(c.tau);
  else if (key == "bpp") num(c.net.bpp);
  else if (key == "jpeg_quality") num(c.jpeg.quality);
  else if (key == "jpeg_enabled") num(c.jpeg.enabled);
  else if (key == "hidden_channels") num(c.net.hidden_channels);
  else if (key == "leaky_slope") num(c.net.leaky_slope);
  else if (key == "decoder_width") num(c.net.decoder_width);
  else if (key == "critic_width") num(c.net.critic_width);
  else if (key == "stem_width") num(c.net.stem_width);
  else if (key == "extractor_width") num(c.net.extractor_width);
  else if (key == "detector_width") num(c.net.detector_width);
  else if (key == "checkpoint") c.checkpoint = value;
  else if (key == "log") c.log = value;
  else if (key == "init_checkpoint") c.init_checkpoint = value;
  else if (key == "max_updates") num(c.max_updates);
  else fail(ErrorCode::ConfigError, "unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Flat `key = value` lines; '#' starts a comment.
inline void parse_config(std::istream& in, TrainConfig& c) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::ConfigError,
            "line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::ConfigError, "cannot read config " + path.string());
  TrainConfig c;
  parse_config(in, c);
  return c;
}

struct TrainLogRow {
  long update = 0;
  int epoch = 0;
  double loss = 0.0;
  double acc = 0.0;  // last unrolled step
  double qua = 0.0;
  double crit = 0.0;
  double critic_loss = 0.0;
  double error_rate = 0.0;  // last unrolled step, unquantized
  double seconds = 0.0;
};

inline void write_log_header(std::ostream& os) {
  os << "update,epoch,loss,acc,qua,crit,critic_loss,error_rate,seconds\n";
}
inline void write_log_row(std::ostream& os, const TrainLogRow& r) {
  os << r.update << ',' << r.epoch << ',' << r.loss << ',' << r.acc << ',' << r.qua << ',' << r.crit << ','
     << r.critic_loss << ',' << r.error_rate << ',' << r.seconds << '\n';
}

inline const std::vector<std::string>& encoder_decoder_prefixes() {
  static const std::vector<std::string> p{"encoder/", "decoder/"};
  return p;
}

/// One training batch: covers (N,3,S,S) and messages (N,B,S,S).
struct TrainBatch {
  Tensor<float> covers;
  Tensor<float> messages;
};

struct StepStats {
  TrainLogRow row;
  bool finite = true;
};

/// The training-time unroll: T learned steps from delta = 0 with the inner
/// gradient taken through the current decoder. Returns the stego
/// intermediates as graph variables (for the loss) in `stegos`.
inline std::vector<Var<float>> unroll(Graph<float>& g, ParameterArchive& p, const TrainBatch& b, int steps,
                                      double eta, double tau, double lambda, const JpegConfig& jpeg) {
  Objective<float> inner;
  inner.decoder = &p;
  inner.cover = b.covers;
  inner.target = b.messages;
  inner.lambda = lambda;
  inner.jpeg = jpeg;
  inner.mode = NormMode::TrainFrozen;

  Var<float> img = g.constant(b.covers);
  Var<float> h = nets::initial_hidden(g, p, img);
  Var<float> feat = nets::image_features(g, p, img);
  Var<float> delta = g.constant(Tensor<float>::zeros(b.covers.shape()));
  std::vector<Var<float>> stegos;
  for (int t = 1; t <= steps; ++t) {
    Tensor<float> grad = inner.value_and_grad(b.covers + delta.value()).second;
    auto out = nets::update_step(g, p, h, feat, delta, g.constant(std::move(grad)));
    h = out.hidden;
    delta = ops::project_box(ops::add(delta, ops::scale(out.step, static_cast<float>(eta))), b.covers,
                             static_cast<float>(tau));
    stegos.push_back(ops::add_constant(delta, b.covers));
  }
  return stegos;
}

/// One alternating update: critic step on the detached final stego batch,
/// then an encoder+decoder step on the gamma-weighted loss.
inline StepStats train_step(ParameterArchive& p, Adam& enc_dec, Adam& critic, const TrainBatch& b,
                            const TrainConfig& cfg) {
  StepStats st;
  Graph<float> g(true);
  const auto stegos = unroll(g, p, b, cfg.steps, cfg.eta_train, cfg.tau, cfg.weights.lambda, cfg.jpeg);
  std::vector<Var<float>> totals;
  StepTerms<float> last;
  for (std::size_t t = 0; t < stegos.size(); ++t) {
    const NormMode mode = t + 1 == stegos.size() ? NormMode::Train : NormMode::TrainFrozen;
    last = step_terms(g, p, stegos[t], b.covers, b.messages, cfg.weights, mode, cfg.jpeg);
    totals.push_back(last.total);
  }
  Var<float> loss = training_loss(totals, cfg.weights.gamma);

  // critic
  {
    Graph<float> cg(true);
    Var<float> closs = critic_training_loss(cg, p, b.covers, stegos.back().value());
    st.row.critic_loss = closs.value()[0];
    p.zero_grad();
    cg.backward(closs);
    cg.flush_param_grads();
    critic.step(p, {"critic/"});
    clamp_component(p, "critic/", kCriticClip);
  }

  st.row.loss = loss.value()[0];
  st.row.acc = last.acc.value()[0];
  st.row.qua = last.qua.value()[0];
  st.row.crit = last.crit.value()[0];
  {
    Tensor<float> probe = stegos.back().value();
    if (cfg.jpeg.enabled) probe = jpeg_forward(probe, cfg.jpeg.quality);
    Graph<float> eg(false);
    const auto& z = nets::decoder_logits(eg, p, eg.constant(probe), NormMode::TrainFrozen).value();
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < z.size(); ++i) wrong += (z[i] > 0.0f) != (b.messages[i] > 0.5f);
    st.row.error_rate = static_cast<double>(wrong) / static_cast<double>(z.size());
  }
  st.finite = std::isfinite(st.row.loss);
  if (!st.finite) return st;

  p.zero_grad();
  g.backward(loss);
  g.flush_param_grads();
  enc_dec.step(p, encoder_decoder_prefixes());
  return st;
}

/// Random square crops (or a fit for small images) plus fresh messages.
class BatchSampler {
 public:
  BatchSampler(const std::vector<Image>& images, int size, int bpp, std::uint64_t seed)
      : images_(images), size_(size), bpp_(bpp), rng_(seed) {
    require(!images.empty(), ErrorCode::EmptyDataset, "no training images");
  }

  std::vector<std::size_t> epoch_order() {
    std::vector<std::size_t> order(images_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    return order;
  }

  TrainBatch make(const std::vector<std::size_t>& indices) {
    std::vector<Tensor<float>> covers, msgs;
    for (auto i : indices) {
      const Image& img = images_[i];
      Image c;
      if (img.dim(2) >= size_ && img.dim(3) >= size_) {
        const int top = std::uniform_int_distribution<int>(0, img.dim(2) - size_)(rng_);
        const int left = std::uniform_int_distribution<int>(0, img.dim(3) - size_)(rng_);
        c = crop(img, top, left, size_, size_);
      } else {
        c = fit_square(img, size_);
      }
      covers.push_back(std::move(c));
      msgs.push_back(message_to_tensor<float>(sample_random_message(size_, size_, bpp_, rng_)));
    }
    return {stack_batch<float>(covers), stack_batch<float>(msgs)};
  }

 private:
  const std::vector<Image>& images_;
  int size_;
  int bpp_;
  std::mt19937_64 rng_;
};

using TrainCallback = std::function<void(const TrainLogRow&)>;

/// Trains encoder, decoder and critic on in-memory images.
inline ParameterArchive train(const std::vector<Image>& images, const TrainConfig& cfg,
                              const TrainCallback& on_update = {}) {
  cfg.validate();
  require(!images.empty(), ErrorCode::EmptyDataset, "training set is empty");
  ParameterArchive p;
  if (!cfg.init_checkpoint.empty()) {
    p = load_checkpoint(cfg.init_checkpoint);
    require(p.config.bpp == cfg.net.bpp, ErrorCode::PayloadMismatch, "init checkpoint bpp differs from config");
  } else {
    p = nets::make_liso_archive<float>(cfg.net, cfg.seed);
    clamp_component(p, "critic/", kCriticClip);
  }
  Adam enc_dec(cfg.learning_rate), critic(cfg.learning_rate);
  BatchSampler sampler(images, cfg.crop_size, cfg.net.bpp, cfg.seed ^ 0x5eed5eedULL);

  std::ofstream log;
  if (!cfg.log.empty()) {
    log.open(cfg.log);
    require(static_cast<bool>(log), ErrorCode::IoError, "cannot write " + cfg.log);
    write_log_header(log);
  }
  const auto t0 = std::chrono::steady_clock::now();
  ParameterArchive last_good = p;
  long updates = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = sampler.epoch_order();
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_updates > 0 && updates >= cfg.max_updates) break;
      const std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + std::min(order.size(), start + cfg.batch_size));
      StepStats st = train_step(p, enc_dec, critic, sampler.make(idx), cfg);
      if (!st.finite) {
        if (!cfg.checkpoint.empty()) save_checkpoint(last_good, cfg.checkpoint);
        fail(ErrorCode::DivergenceDetected, "non-finite training loss at update " + std::to_string(updates + 1));
      }
      ++updates;
      st.row.update = updates;
      st.row.epoch = epoch;
      st.row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (log.is_open()) {
        write_log_row(log, st.row);
        log.flush();
      }
      if (on_update) on_update(st.row);
    }
    last_good = p;
    if (!cfg.checkpoint.empty()) save_checkpoint(p, cfg.checkpoint);
    if (cfg.max_updates > 0 && updates >= cfg.max_updates) break;
  }
  for (auto& [_, e] : p.entries()) e.grad = Tensor<float>();
  return p;
}

/// Loads the training split of `cfg.data_dir`.
inline std::vector<Image> load_training_images(const TrainConfig& cfg) {
  require(!cfg.data_dir.empty(), ErrorCode::ConfigError, "config key 'data_dir' is not set");
  require(std::filesystem::is_directory(cfg.data_dir), ErrorCode::ConfigError,
          "config key 'data_dir': no such directory " + cfg.data_dir);
  const auto split = make_split(cfg.data_dir, cfg.val_count, cfg.train_count);
  std::vector<Image> out;
  for (const auto& f : split.training) out.push_back(load_image(f));
  return out;
}

}  // namespace liso
