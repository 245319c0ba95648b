// SPDX-License-Identifier: Apache-2.0
#pragma once

// The learned optimizer (feature extractor + convolutional GRU update cell
// + step head), the message decoder, the critic and the steganalysis
// detector. All networks are fully convolutional, 3x3 stride 1, with no
// resampling, so they run on any H x W.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>

#include "liso/autodiff.hpp"
#include "liso/ops.hpp"

namespace liso {

struct NetConfig {
  int hidden_channels = 64;
  int bpp = 1;
  float leaky_slope = 0.2f;
  int decoder_width = 32;
  int critic_width = 32;
  int stem_width = 16;  // feature channels per update-cell input (delta, gradient, image)
  int extractor_width = 32;
  int detector_width = 16;

  void validate() const {
    require(hidden_channels >= 8, ErrorCode::InvalidArgument, "hidden_channels must be >= 8");
    require(bpp >= 1 && bpp <= 8, ErrorCode::InvalidArgument, "bpp must be in [1,8]");
    require(leaky_slope >= 0.0f && leaky_slope < 1.0f, ErrorCode::InvalidArgument, "leaky_slope must be in [0,1)");
    require(decoder_width >= 1 && critic_width >= 1 && stem_width >= 1 && extractor_width >= 1 && detector_width >= 1,
            ErrorCode::InvalidArgument, "layer widths must be >= 1");
  }

  bool operator==(const NetConfig&) const = default;
};

/// Named parameter arrays ("component/layer/tensor") for every network,
/// plus batch-norm running statistics stored as non-trainable entries.
template <class T>
class BasicArchive {
 public:
  NetConfig config;

  BasicArchive() = default;
  explicit BasicArchive(NetConfig cfg) : config(cfg) {}

  ParamEntry<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorCode::InvalidArgument, "missing parameter " + name);
    return it->second;
  }
  const ParamEntry<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), ErrorCode::InvalidArgument, "missing parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  void add(const std::string& name, Tensor<T> value, bool trainable = true) {
    ParamEntry<T> e;
    e.value = std::move(value);
    e.trainable = trainable;
    entries_[name] = std::move(e);
  }

  std::map<std::string, ParamEntry<T>>& entries() { return entries_; }
  const std::map<std::string, ParamEntry<T>>& entries() const { return entries_; }

  bool has_component(const std::string& component) const {
    const std::string prefix = component + "/";
    auto it = entries_.lower_bound(prefix);
    return it != entries_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.zero_grad();
  }

  /// Copies every entry under `component/` from another archive.
  void merge_component(const BasicArchive& other, const std::string& component) {
    const std::string prefix = component + "/";
    for (const auto& [name, e] : other.entries_)
      if (name.compare(0, prefix.size(), prefix) == 0) entries_[name] = e;
  }

  template <class U>
  BasicArchive<U> cast() const {
    BasicArchive<U> out(config);
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.trainable);
    return out;
  }

 private:
  std::map<std::string, ParamEntry<T>> entries_;
};

using ParameterArchive = BasicArchive<float>;

/// GRU hidden map plus iteration counter.
template <class T>
struct BasicEncoderState {
  Tensor<T> h;
  int t = 0;
};
using EncoderState = BasicEncoderState<float>;

namespace nets {

namespace detail {

template <class T>
void add_conv(BasicArchive<T>& a, const std::string& name, int cin, int cout, std::mt19937_64& rng,
              bool zero = false) {
  Tensor<T> w(Shape{cout, cin, 3, 3});
  if (!zero) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * 9.0)));
    for (auto& v : w.storage()) v = static_cast<T>(dist(rng));
  }
  a.add(name + "/weight", std::move(w));
  a.add(name + "/bias", Tensor<T>(Shape{cout}));
}

template <class T>
void add_bn(BasicArchive<T>& a, const std::string& name, int c) {
  a.add(name + "/gamma", Tensor<T>(Shape{c}, T{1}));
  a.add(name + "/beta", Tensor<T>(Shape{c}));
  a.add(name + "/running_mean", Tensor<T>(Shape{c}), false);
  a.add(name + "/running_var", Tensor<T>(Shape{c}, T{1}), false);
}

template <class T>
void add_block(BasicArchive<T>& a, const std::string& name, int cin, int cout, std::mt19937_64& rng) {
  add_conv(a, name + "/conv", cin, cout, rng);
  add_bn(a, name + "/bn", cout);
}

}  // namespace detail

/// Fresh encoder, decoder and critic parameters. Convolutions use fan-in
/// scaled normal weights and zero biases; the last layer of the step head
/// is zero so the first update is zero.
template <class T = float>
BasicArchive<T> make_liso_archive(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  BasicArchive<T> a(cfg);
  const int hc = cfg.hidden_channels, sw = cfg.stem_width, ew = cfg.extractor_width;
  detail::add_conv(a, "encoder/extract/conv1", 3, ew, rng);
  detail::add_conv(a, "encoder/extract/conv2", ew, ew, rng);
  detail::add_conv(a, "encoder/extract/conv3", ew, hc, rng);
  detail::add_conv(a, "encoder/stem_delta", 3, sw, rng);
  detail::add_conv(a, "encoder/stem_grad", 3, sw, rng);
  detail::add_conv(a, "encoder/stem_image", 3, sw, rng);
  const int gru_in = hc + 3 * sw;
  detail::add_conv(a, "encoder/gru/z", gru_in, hc, rng);
  detail::add_conv(a, "encoder/gru/r", gru_in, hc, rng);
  detail::add_conv(a, "encoder/gru/h", gru_in, hc, rng);
  detail::add_conv(a, "encoder/head/conv1", hc, hc, rng);
  detail::add_conv(a, "encoder/head/conv2", hc, 3, rng, /*zero=*/true);

  const int dw = cfg.decoder_width;
  detail::add_block(a, "decoder/block1", 3, dw, rng);
  detail::add_block(a, "decoder/block2", dw, dw, rng);
  detail::add_block(a, "decoder/block3", dw, dw, rng);
  detail::add_conv(a, "decoder/out", dw, cfg.bpp, rng);

  const int cw = cfg.critic_width;
  detail::add_block(a, "critic/block1", 3, cw, rng);
  detail::add_block(a, "critic/block2", cw, cw, rng);
  detail::add_block(a, "critic/block3", cw, cw, rng);
  detail::add_conv(a, "critic/out", cw, 1, rng);
  return a;
}

template <class T = float>
BasicArchive<T> make_detector_archive(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  BasicArchive<T> a(cfg);
  const int w = cfg.detector_width;
  detail::add_block(a, "detector/block1", 3, w, rng);
  detail::add_block(a, "detector/block2", w, w, rng);
  detail::add_block(a, "detector/block3", w, w, rng);
  Tensor<T> fc(Shape{2, w});
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / w));
  for (auto& v : fc.storage()) v = static_cast<T>(dist(rng));
  a.add("detector/fc/weight", std::move(fc));
  a.add("detector/fc/bias", Tensor<T>(Shape{2}));
  return a;
}

// ---- graph-level building blocks -------------------------------------

template <class T>
Var<T> conv(Graph<T>& g, BasicArchive<T>& p, const std::string& name, Var<T> x) {
  return ops::conv2d(x, g.param(p.at(name + "/weight")), g.param(p.at(name + "/bias")));
}

/// conv -> batch-norm -> leaky-ReLU
template <class T>
Var<T> conv_block(Graph<T>& g, BasicArchive<T>& p, const std::string& name, Var<T> x, NormMode mode) {
  Var<T> y = conv(g, p, name + "/conv", x);
  const std::string bn = name + "/bn";
  y = ops::batch_norm(y, g.param(p.at(bn + "/gamma")), g.param(p.at(bn + "/beta")),
                      p.at(bn + "/running_mean").value, p.at(bn + "/running_var").value, mode);
  return ops::leaky_relu(y, static_cast<T>(p.config.leaky_slope));
}

template <class T>
void check_rgb(Var<T> x) {
  require(x.shape().rank() == 4 && x.shape()[1] == 3, ErrorCode::ShapeMismatch,
          "expected an (N,3,H,W) image batch, got " + x.shape().str());
}

/// Pre-sigmoid decoder output, (N, B, H, W).
template <class T>
Var<T> decoder_logits(Graph<T>& g, BasicArchive<T>& p, Var<T> image, NormMode mode) {
  check_rgb(image);
  Var<T> y = conv_block(g, p, "decoder/block1", image, mode);
  y = conv_block(g, p, "decoder/block2", y, mode);
  y = conv_block(g, p, "decoder/block3", y, mode);
  return conv(g, p, "decoder/out", y);
}

/// Critic score per image, (N, 1, 1, 1). Lower reads as more natural.
template <class T>
Var<T> critic_scores(Graph<T>& g, BasicArchive<T>& p, Var<T> image, NormMode mode) {
  check_rgb(image);
  Var<T> y = conv_block(g, p, "critic/block1", image, mode);
  y = conv_block(g, p, "critic/block2", y, mode);
  y = conv_block(g, p, "critic/block3", y, mode);
  return ops::spatial_mean(conv(g, p, "critic/out", y));
}

/// (N, 2) logits ordered (cover, stego).
template <class T>
Var<T> detector_logits(Graph<T>& g, BasicArchive<T>& p, Var<T> image, NormMode mode) {
  check_rgb(image);
  Var<T> y = conv_block(g, p, "detector/block1", image, mode);
  y = conv_block(g, p, "detector/block2", y, mode);
  y = conv_block(g, p, "detector/block3", y, mode);
  return ops::linear(ops::spatial_mean(y), g.param(p.at("detector/fc/weight")), g.param(p.at("detector/fc/bias")));
}

/// h0 = tanh(3-layer conv stack(X)).
template <class T>
Var<T> initial_hidden(Graph<T>& g, BasicArchive<T>& p, Var<T> image) {
  check_rgb(image);
  const T slope = static_cast<T>(p.config.leaky_slope);
  Var<T> y = ops::leaky_relu(conv(g, p, "encoder/extract/conv1", image), slope);
  y = ops::leaky_relu(conv(g, p, "encoder/extract/conv2", y), slope);
  return ops::tanh(conv(g, p, "encoder/extract/conv3", y));
}

/// Cover-image features fed to every update; constant across iterations.
template <class T>
Var<T> image_features(Graph<T>& g, BasicArchive<T>& p, Var<T> image) {
  return ops::leaky_relu(conv(g, p, "encoder/stem_image", image), static_cast<T>(p.config.leaky_slope));
}

/// Convolutional GRU:
///   z = sigmoid(conv([h, x]; Wz)), r = sigmoid(conv([h, x]; Wr)),
///   c = tanh(conv([r * h, x]; Wh)), h' = (1 - z) * h + z * c.
template <class T>
Var<T> gru_cell(Var<T> h, Var<T> x, Var<T> wz, Var<T> bz, Var<T> wr, Var<T> br, Var<T> wh, Var<T> bh) {
  const Shape& hs = h.shape();
  const Shape& xs = x.shape();
  require(hs.rank() == 4 && xs.rank() == 4 && hs[0] == xs[0] && hs[2] == xs[2] && hs[3] == xs[3],
          ErrorCode::ShapeMismatch, "gru inputs not aligned: " + hs.str() + " vs " + xs.str());
  Var<T> hx = ops::concat_channels<T>({h, x});
  Var<T> z = ops::sigmoid(ops::conv2d(hx, wz, bz));
  Var<T> r = ops::sigmoid(ops::conv2d(hx, wr, br));
  Var<T> rhx = ops::concat_channels<T>({ops::mul(r, h), x});
  Var<T> c = ops::tanh(ops::conv2d(rhx, wh, bh));
  return ops::gate_blend(z, h, c);
}

template <class T>
Var<T> gru_update(Graph<T>& g, BasicArchive<T>& p, Var<T> h, Var<T> x) {
  auto w = [&](const char* n) { return g.param(p.at(std::string("encoder/gru/") + n)); };
  return gru_cell(h, x, w("z/weight"), w("z/bias"), w("r/weight"), w("r/bias"), w("h/weight"), w("h/bias"));
}

template <class T>
struct StepOutput {
  Var<T> hidden;
  Var<T> step;  // g_t, (N, 3, H, W)
};

/// One learned-optimizer update. `grad` is the raw objective gradient with
/// respect to the perturbation; it is multiplied by H*W before the stem so
/// its scale does not depend on the image size.
template <class T>
StepOutput<T> update_step(Graph<T>& g, BasicArchive<T>& p, Var<T> hidden, Var<T> image_feat, Var<T> delta,
                          Var<T> grad) {
  check_rgb(delta);
  check_rgb(grad);
  require(delta.shape() == grad.shape(), ErrorCode::ShapeMismatch, "delta/grad shape mismatch");
  const T slope = static_cast<T>(p.config.leaky_slope);
  const T grad_scale = static_cast<T>(delta.shape()[2]) * static_cast<T>(delta.shape()[3]);
  Var<T> fd = ops::leaky_relu(conv(g, p, "encoder/stem_delta", delta), slope);
  Var<T> fg = ops::leaky_relu(conv(g, p, "encoder/stem_grad", ops::scale(grad, grad_scale)), slope);
  Var<T> x = ops::concat_channels<T>({fd, fg, image_feat});
  Var<T> h = gru_update(g, p, hidden, x);
  Var<T> y = ops::leaky_relu(conv(g, p, "encoder/head/conv1", h), slope);
  return {h, conv(g, p, "encoder/head/conv2", y)};
}

// ---- plain wrappers (inference, read-only parameters) -----------------

/// Decoder probabilities (sigmoid outputs) for a single image or batch.
template <class T>
Tensor<T> decoder_forward(BasicArchive<T>& p, const Tensor<T>& image) {
  Graph<T> g(false);
  return ops::sigmoid(decoder_logits(g, p, g.constant(image), NormMode::Eval)).value();
}

template <class T>
T critic_forward(BasicArchive<T>& p, const Tensor<T>& image) {
  require(image.dim(0) == 1, ErrorCode::ShapeMismatch, "critic_forward takes one image");
  Graph<T> g(false);
  return critic_scores(g, p, g.constant(image), NormMode::Eval).value()[0];
}

template <class T>
BasicEncoderState<T> init_state(BasicArchive<T>& p, const Tensor<T>& image) {
  Graph<T> g(false);
  return {initial_hidden(g, p, g.constant(image)).value(), 0};
}

template <class T>
Tensor<T> gru_update(BasicArchive<T>& p, const Tensor<T>& h_prev, const Tensor<T>& x_t) {
  Graph<T> g(false);
  return gru_update(g, p, g.constant(h_prev), g.constant(x_t)).value();
}

template <class T>
std::pair<BasicEncoderState<T>, Tensor<T>> update_step(BasicArchive<T>& p, const BasicEncoderState<T>& state,
                                                       const Tensor<T>& image, const Tensor<T>& delta_prev,
                                                       const Tensor<T>& grad) {
  require(image.shape() == delta_prev.shape() && image.shape() == grad.shape(), ErrorCode::ShapeMismatch,
          "update_step inputs not aligned");
  Graph<T> g(false);
  Var<T> img = g.constant(image);
  StepOutput<T> out = update_step(g, p, g.constant(state.h), image_features(g, p, img), g.constant(delta_prev),
                                  g.constant(grad));
  return {BasicEncoderState<T>{out.hidden.value(), state.t + 1}, out.step.value()};
}

}  // namespace nets
}  // namespace liso
