// SPDX-License-Identifier: Apache-2.0
#pragma once

// A small CNN cover/stego classifier. Logit 0 is "cover", logit 1 "stego".

#include <cmath>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "liso/nets.hpp"
#include "liso/train.hpp"

namespace liso {

struct DetectorTrainConfig {
  int epochs = 10;
  int batch_pairs = 4;  // cover/stego pairs per update
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  NetConfig net;  // detector_width is used
};

struct Detection {
  double p_stego = 0.5;
  double cover_logit = 0.0;
  double stego_logit = 0.0;
};

inline double stego_probability(double cover_logit, double stego_logit) {
  return 1.0 / (1.0 + std::exp(cover_logit - stego_logit));
}

inline ParameterArchive train_detector(const std::vector<Image>& covers, const std::vector<Image>& stegos,
                                       const DetectorTrainConfig& cfg) {
  require(!covers.empty() && !stegos.empty(), ErrorCode::EmptyDataset, "detector needs covers and stegos");
  require(cfg.batch_pairs >= 1 && cfg.epochs >= 1, ErrorCode::InvalidArgument, "bad detector training config");
  ParameterArchive p = nets::make_detector_archive<float>(cfg.net, cfg.seed);
  Adam adam(cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed ^ 0xde7ec7ULL);
  const std::size_t n = std::max(covers.size(), stegos.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_pairs) {
      std::vector<Tensor<float>> batch;
      std::vector<int> labels;
      for (std::size_t k = start; k < std::min(n, start + cfg.batch_pairs); ++k) {
        batch.push_back(covers[order[k] % covers.size()]);
        labels.push_back(0);
        batch.push_back(stegos[order[k] % stegos.size()]);
        labels.push_back(1);
      }
      Graph<float> g(true);
      Var<float> logits = nets::detector_logits(g, p, g.constant(stack_batch<float>(batch)), NormMode::Train);
      Var<float> loss = ops::softmax_cross_entropy(logits, std::span<const int>(labels));
      p.zero_grad();
      g.backward(loss);
      g.flush_param_grads();
      adam.step(p, {"detector/"});
    }
  }
  for (auto& [_, e] : p.entries()) e.grad = Tensor<float>();
  return p;
}

inline Detection detect(ParameterArchive& detector, const Image& x) {
  Graph<float> g(false);
  const auto& z = nets::detector_logits(g, detector, g.constant(x), NormMode::Eval).value();
  Detection d;
  d.cover_logit = z[0];
  d.stego_logit = z[1];
  d.p_stego = stego_probability(d.cover_logit, d.stego_logit);
  return d;
}

/// Percentage of correct decisions over covers and stegos together.
inline double detection_accuracy(ParameterArchive& detector, const std::vector<Image>& covers,
                                 const std::vector<Image>& stegos, double threshold = 0.5) {
  require(!covers.empty() && !stegos.empty(), ErrorCode::EmptyDataset, "accuracy needs covers and stegos");
  std::size_t correct = 0;
  for (const auto& c : covers) correct += detect(detector, c).p_stego <= threshold;
  for (const auto& s : stegos) correct += detect(detector, s).p_stego > threshold;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(covers.size() + stegos.size());
}

}  // namespace liso
