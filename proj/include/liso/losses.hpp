// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "liso/bitstream.hpp"
#include "liso/jpeg.hpp"
#include "liso/nets.hpp"

namespace liso {

struct LossWeights {
  double lambda = 1.0;  // quality
  double mu = 1.0;      // critic
  double gamma = 0.8;   // step decay

  void validate() const {
    require(lambda >= 0.0 && mu >= 0.0, ErrorCode::InvalidArgument, "loss weights must be >= 0");
    require(gamma > 0.0 && gamma < 1.0, ErrorCode::InvalidArgument, "gamma must be in (0,1)");
  }
};

inline constexpr double kProbEps = 1e-7;

/// gamma^(T-t) for t = 1..T.
inline std::vector<double> step_weights(int steps, double gamma) {
  require(steps >= 1, ErrorCode::EmptySequence, "need at least one step");
  std::vector<double> w(steps);
  for (int t = 1; t <= steps; ++t) w[t - 1] = std::pow(gamma, steps - t);
  return w;
}

// ---- plain values -----------------------------------------------------

/// Mean binary cross-entropy of decoder probabilities against the message.
template <class T>
double acc_loss(const Tensor<T>& probs, const MessageTensor& m) {
  require(probs.rank() == 4 && probs.dim(0) == 1 && probs.dim(1) == m.bpp && probs.dim(2) == m.height &&
              probs.dim(3) == m.width,
          ErrorCode::ShapeMismatch, "acc_loss shape mismatch");
  double s = 0.0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (int b = 0; b < m.bpp; ++b) {
        const double p = std::clamp(static_cast<double>(probs.at(0, b, y, x)), kProbEps, 1.0 - kProbEps);
        s -= m.at(y, x, b) ? std::log(p) : std::log(1.0 - p);
      }
  return s / static_cast<double>(m.size());
}

template <class T>
double qua_loss(const Tensor<T>& stego, const Tensor<T>& cover) {
  stego.check_same(cover, "qua_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < stego.size(); ++i) {
    const double d = static_cast<double>(stego[i]) - static_cast<double>(cover[i]);
    s += d * d;
  }
  return s / static_cast<double>(stego.size());
}

template <class T>
double critic_loss_encoder(BasicArchive<T>& critic, const Tensor<T>& stego) {
  return static_cast<double>(nets::critic_forward(critic, stego));
}

/// Stego-class logit when it beats the cover logit, else 0.
template <class T>
double detection_defense_loss(BasicArchive<T>& detector, const Tensor<T>& stego) {
  Graph<T> g(false);
  auto logits = nets::detector_logits(g, detector, g.constant(stego), NormMode::Eval);
  return static_cast<double>(ops::detected_stego_logit_sum(logits).value()[0]);
}

// ---- graph level ------------------------------------------------------

/// What the decoder sees: the stego image, through the JPEG layer if on.
template <class T>
Var<T> decoder_view(Var<T> stego, const JpegConfig& jpeg) {
  return jpeg.enabled ? jpeg_straight_through(stego, jpeg.quality) : stego;
}

/// Batch mean of the accuracy term, computed from decoder logits.
template <class T>
Var<T> acc_term(Graph<T>& g, BasicArchive<T>& p, Var<T> stego, const Tensor<T>& target, NormMode mode,
                const JpegConfig& jpeg) {
  return ops::bce_logits_mean(nets::decoder_logits(g, p, decoder_view(stego, jpeg), mode), target,
                              static_cast<T>(kProbEps));
}

/// mean(critic(X)) - mean(critic(X~)), minimized by the critic.
template <class T>
Var<T> critic_training_loss(Graph<T>& g, BasicArchive<T>& p, const Tensor<T>& cover, const Tensor<T>& stego) {
  Var<T> real = ops::mean(nets::critic_scores(g, p, g.constant(cover), NormMode::Train));
  Var<T> fake = ops::mean(nets::critic_scores(g, p, g.constant(stego), NormMode::Train));
  return ops::sub(real, fake);
}

template <class T>
struct StepTerms {
  Var<T> acc;
  Var<T> qua;
  Var<T> crit;
  Var<T> total;  // acc + lambda qua + mu crit
};

/// Loss terms of one intermediate stego batch (batch means).
template <class T>
StepTerms<T> step_terms(Graph<T>& g, BasicArchive<T>& p, Var<T> stego, const Tensor<T>& cover,
                        const Tensor<T>& target, const LossWeights& w, NormMode mode, const JpegConfig& jpeg) {
  StepTerms<T> s;
  s.acc = acc_term(g, p, stego, target, mode, jpeg);
  s.qua = ops::mse_mean(stego, cover);
  s.crit = ops::mean(nets::critic_scores(g, p, stego, mode == NormMode::Eval ? NormMode::Eval : NormMode::TrainFrozen));
  s.total = ops::weighted_sum<T>({s.acc, s.qua, s.crit},
                                 {T{1}, static_cast<T>(w.lambda), static_cast<T>(w.mu)});
  return s;
}

/// Sum over t of gamma^(T-t) times the per-step totals.
template <class T>
Var<T> training_loss(const std::vector<Var<T>>& step_totals, double gamma) {
  require(!step_totals.empty(), ErrorCode::EmptySequence, "training_loss needs at least one step");
  const auto w = step_weights(static_cast<int>(step_totals.size()), gamma);
  std::vector<T> wt(w.begin(), w.end());
  return ops::weighted_sum(step_totals, wt);
}

/// Plain-value training loss over intermediates of a single image.
template <class T>
double training_loss(BasicArchive<T>& p, const std::vector<Tensor<T>>& intermediates, const MessageTensor& m,
                     const Tensor<T>& cover, const LossWeights& w, const JpegConfig& jpeg = {}) {
  require(!intermediates.empty(), ErrorCode::EmptySequence, "training_loss needs at least one step");
  Graph<T> g(false);
  const Tensor<T> target = message_to_tensor<T>(m);
  std::vector<Var<T>> totals;
  for (const auto& x : intermediates)
    totals.push_back(step_terms(g, p, g.constant(x), cover, target, w, NormMode::Eval, jpeg).total);
  return static_cast<double>(training_loss(totals, w.gamma).value()[0]);
}

/// Inference objective acc + lambda qua (+ defense), summed over the batch
/// so each image's gradient is that of its own objective.
template <class T>
struct Objective {
  BasicArchive<T>* decoder = nullptr;   // archive holding decoder/ weights
  BasicArchive<T>* detector = nullptr;  // optional, adds the defense term
  Tensor<T> cover;                      // (N,3,H,W)
  Tensor<T> target;                     // (N,B,H,W)
  double lambda = 1.0;
  double defense_weight = 1.0;
  JpegConfig jpeg;
  NormMode mode = NormMode::Eval;

  Var<T> build(Graph<T>& g, Var<T> stego) const {
    const T n = static_cast<T>(cover.dim(0));
    Var<T> acc = acc_term(g, *decoder, stego, target, mode, jpeg);
    Var<T> qua = ops::mse_mean(stego, cover);
    std::vector<Var<T>> terms{acc, qua};
    std::vector<T> weights{n, n * static_cast<T>(lambda)};
    if (detector) {
      terms.push_back(ops::detected_stego_logit_sum(
          nets::detector_logits(g, *detector, decoder_view(stego, jpeg), NormMode::Eval)));
      weights.push_back(static_cast<T>(defense_weight));
    }
    return ops::weighted_sum(terms, weights);
  }

  T value(const Tensor<T>& stego) const {
    Graph<T> g(false);
    return build(g, g.constant(stego)).value()[0];
  }

  /// (objective, gradient with respect to the stego image)
  std::pair<T, Tensor<T>> value_and_grad(const Tensor<T>& stego) const {
    Graph<T> g(false);
    Var<T> x = g.variable(stego);
    Var<T> obj = build(g, x);
    g.backward(obj);
    return {obj.value()[0], g.grad(x)};
  }

  /// Bit error of the quantized stego image (single image).
  double error(const Tensor<T>& stego) const {
    Tensor<T> q = quantize(stego);
    if (jpeg.enabled) q = jpeg_forward(q, jpeg.quality);
    Graph<T> g(false);
    Var<T> logits = nets::decoder_logits(g, *decoder, g.constant(q), mode);
    std::size_t wrong = 0;
    const auto& z = logits.value();
    for (std::size_t i = 0; i < z.size(); ++i) wrong += (ops::sigmoid_value(z[i]) > T(0.5)) != (target[i] > T(0.5));
    return static_cast<double>(wrong) / static_cast<double>(z.size());
  }
};

}  // namespace liso
