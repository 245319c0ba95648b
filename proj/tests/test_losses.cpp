// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "liso/losses.hpp"
#include "liso/train.hpp"

using namespace liso;
using D = double;

namespace {

NetConfig tiny() {
  NetConfig c;
  c.hidden_channels = 8;
  c.decoder_width = 4;
  c.critic_width = 4;
  c.stem_width = 2;
  c.extractor_width = 4;
  c.detector_width = 4;
  return c;
}

template <class T>
Tensor<T> rand_image(int h, int w, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(Shape{1, 3, h, w});
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

void perturb_bn(BasicArchive<D>& a, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, e] : a.entries())
    if (name.find("/bn/") != std::string::npos)
      for (auto& v : e.value.storage()) v = u(rng) - (name.find("mean") != std::string::npos ? 1.0 : 0.0);
}

template <class F>
double worst_fd_error(const Tensor<D>& x0, F f, const Tensor<D>& analytic) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor<D> xp = x0, xm = x0;
    xp[i] += 1e-5;
    xm[i] -= 1e-5;
    const double num = (f(xp) - f(xm)) / 2e-5;
    worst = std::max(worst, std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), 1e-8}));
  }
  return worst;
}

}  // namespace

TEST(AccLoss, ClosedForms) {
  const auto m = sample_random_message(4, 4, 2, 1);
  EXPECT_NEAR(acc_loss(Tensor<D>(Shape{1, 2, 4, 4}, 0.5), m), std::log(2.0), 1e-12);
  EXPECT_LE(acc_loss(message_to_tensor<D>(m), m), 1e-6);

  MessageTensor one(1, 1, 1);
  one.bits[0] = 1;
  EXPECT_NEAR(acc_loss(Tensor<D>(Shape{1, 1, 1, 1}, 0.25), one), -std::log(0.25), 1e-12);
}

TEST(AccLoss, NonNegativeAndShapeChecked) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    Tensor<D> p(Shape{1, 1, 3, 3});
    for (auto& v : p.storage()) v = u(rng);
    EXPECT_GE(acc_loss(p, sample_random_message(3, 3, 1, k)), 0.0);
  }
  try {
    acc_loss(Tensor<D>(Shape{1, 2, 3, 3}, 0.5), MessageTensor(3, 3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(QuaLoss, ClosedFormsAndBruteForce) {
  const auto x = rand_image<D>(6, 7, 3);
  EXPECT_EQ(qua_loss(x, x), 0.0);
  Tensor<D> y = x;
  for (auto& v : y.storage()) v += 0.1;
  EXPECT_NEAR(qua_loss(y, x), 0.01, 1e-12);

  const auto a = rand_image<D>(5, 9, 4);
  const auto b = rand_image<D>(5, 9, 5);
  double brute = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 5; ++h)
      for (int w = 0; w < 9; ++w) brute += std::pow(a.at(0, c, h, w) - b.at(0, c, h, w), 2);
  brute /= 5 * 9 * 3;
  EXPECT_NEAR(qua_loss(a, b), brute, 1e-14);
  EXPECT_EQ(qua_loss(a, b), qua_loss(b, a));
  EXPECT_THROW(qua_loss(a, x), Error);
}

TEST(CriticLossEncoder, DefinitionAndZeroWeights) {
  auto p = nets::make_liso_archive<D>(tiny(), 6);
  const auto x = rand_image<D>(16, 16, 7);
  EXPECT_EQ(critic_loss_encoder(p, x), nets::critic_forward(p, x));
  for (auto& [name, e] : p.entries())
    if (name.rfind("critic/", 0) == 0 && name.find("running") == std::string::npos) e.value.fill(0.0);
  EXPECT_EQ(critic_loss_encoder(p, x), 0.0);
}

TEST(CriticLossEncoder, GradientMatchesFiniteDifferences) {
  auto p = nets::make_liso_archive<D>(tiny(), 8);
  perturb_bn(p, 9);
  const auto x0 = rand_image<D>(8, 8, 10);
  Graph<D> g(false);
  Var<D> xv = g.variable(x0);
  g.backward(ops::mean(nets::critic_scores(g, p, xv, NormMode::Eval)));
  EXPECT_LT(worst_fd_error(x0, [&](const Tensor<D>& x) { return critic_loss_encoder(p, x); }, g.grad(xv)), 1e-4);
}

TEST(CriticTrainingLoss, SymmetricPairIsZero) {
  auto p = nets::make_liso_archive<D>(tiny(), 11);
  const auto x = rand_image<D>(16, 16, 12);
  Graph<D> g(false);
  EXPECT_EQ(critic_training_loss(g, p, x, x).value()[0], 0.0);
}

TEST(CriticTrainingLoss, DecreasesUnderClampedUpdates) {
  auto p = nets::make_liso_archive<float>(tiny(), 13);
  clamp_component(p, "critic/", kCriticClip);
  const auto cover = rand_image<float>(16, 16, 14, 0.2, 0.6);
  const auto stego = rand_image<float>(16, 16, 15, 0.4, 0.8);
  Adam adam(1e-3);
  auto loss_now = [&] {
    Graph<float> g(false);
    return critic_training_loss(g, p, cover, stego).value()[0];
  };
  const float first = loss_now();
  for (int k = 0; k < 10; ++k) {
    Graph<float> g(true);
    Var<float> l = critic_training_loss(g, p, cover, stego);
    p.zero_grad();
    g.backward(l);
    g.flush_param_grads();
    adam.step(p, {"critic/"});
    clamp_component(p, "critic/", kCriticClip);
    for (const auto& [name, e] : p.entries())
      if (e.trainable && name.rfind("critic/", 0) == 0) {
        for (float v : e.value.storage()) ASSERT_LE(std::abs(v), kCriticClip);
      }
  }
  EXPECT_LT(loss_now(), first);
}

TEST(StepWeights, Powers) {
  const auto w = step_weights(15, 0.8);
  EXPECT_DOUBLE_EQ(w.back(), 1.0);
  EXPECT_NEAR(w.front(), 0.0440, 5e-5);
  EXPECT_THROW(step_weights(0, 0.8), Error);
}

TEST(TrainingLoss, WeightArithmetic) {
  Graph<D> g(false);
  const Tensor<D> one(Shape{1}, 1.0);
  EXPECT_NEAR(training_loss<D>({g.constant(one), g.constant(one)}, 0.8).value()[0], 1.8, 1e-12);
  EXPECT_THROW(training_loss<D>({}, 0.8), Error);
}

TEST(TrainingLoss, SingleStepIsObjectivePlusCritic) {
  auto p = nets::make_liso_archive<D>(tiny(), 16);
  const auto x = rand_image<D>(16, 16, 17);
  const auto s = rand_image<D>(16, 16, 18);
  const auto m = sample_random_message(16, 16, 1, 19);
  LossWeights w{0.7, 0.3, 0.8};
  const double direct = acc_loss(nets::decoder_forward(p, s), m) + w.lambda * qua_loss(s, x) +
                        w.mu * critic_loss_encoder(p, s);
  EXPECT_NEAR(training_loss(p, {s}, m, x, w), direct, 1e-9);
}

TEST(TrainingLoss, ThreeStepsMatchBruteForce) {
  auto p = nets::make_liso_archive<D>(tiny(), 20);
  perturb_bn(p, 21);
  const auto x = rand_image<D>(16, 16, 22);
  const auto m = sample_random_message(16, 16, 1, 23);
  const std::vector<Tensor<D>> xs{rand_image<D>(16, 16, 24), rand_image<D>(16, 16, 25), rand_image<D>(16, 16, 26)};
  for (LossWeights w : {LossWeights{1.0, 1.0, 0.8}, LossWeights{2.0, 0.5, 0.5}}) {
    auto term = [&](const Tensor<D>& s) {
      return acc_loss(nets::decoder_forward(p, s), m) + w.lambda * qua_loss(s, x) + w.mu * critic_loss_encoder(p, s);
    };
    const double l1 = term(xs[0]), l2 = term(xs[1]), l3 = term(xs[2]);
    const double brute = w.gamma * w.gamma * l1 + w.gamma * l2 + l3;
    EXPECT_NEAR(training_loss(p, xs, m, x, w), brute, 1e-9);
    if (w.gamma == 0.5) {
      // every intermediate contributes
      for (int drop = 0; drop < 3; ++drop) {
        const double without = brute - std::pow(0.5, 2 - drop) * std::vector<double>{l1, l2, l3}[drop];
        EXPECT_GT(std::abs(brute - without), 1e-6);
      }
    }
  }
}

TEST(TrainingLoss, MonotoneInEachStep) {
  Graph<D> g(false);
  std::mt19937 rng(27);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> l{u(rng), u(rng), u(rng), u(rng)};
    auto eval = [&](const std::vector<double>& v) {
      std::vector<Var<D>> vars;
      for (double x : v) vars.push_back(g.constant(Tensor<D>(Shape{1}, x)));
      return training_loss(vars, 0.8).value()[0];
    };
    const double base = eval(l);
    for (int t = 0; t < 4; ++t) {
      auto bumped = l;
      bumped[t] += 0.1;
      EXPECT_GE(eval(bumped), base);
    }
  }
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  auto p = nets::make_liso_archive<D>(tiny(), 28);
  perturb_bn(p, 29);
  Objective<D> obj;
  obj.decoder = &p;
  obj.cover = rand_image<D>(8, 8, 30);
  obj.target = message_to_tensor<D>(sample_random_message(8, 8, 1, 31));
  obj.lambda = 1.0;
  const auto x0 = rand_image<D>(8, 8, 32);
  const auto [v, grad] = obj.value_and_grad(x0);
  EXPECT_NEAR(v, acc_loss(nets::decoder_forward(p, x0), sample_random_message(8, 8, 1, 31)) + qua_loss(x0, obj.cover),
              1e-9);
  EXPECT_LT(worst_fd_error(x0, [&](const Tensor<D>& x) { return obj.value(x); }, grad), 1e-4);
}

TEST(DefenseLoss, Branches) {
  Graph<D> g(false);
  Var<D> x = g.variable(Tensor<D>(Shape{2, 2}, std::vector<D>{2.0, 1.0, 0.0, 3.0}));
  Var<D> l = ops::detected_stego_logit_sum(x);
  EXPECT_DOUBLE_EQ(l.value()[0], 3.0);
  g.backward(l);
  const auto gr = g.grad(x);
  EXPECT_EQ(gr[0], 0.0);
  EXPECT_EQ(gr[1], 0.0);
  EXPECT_EQ(gr[2], 0.0);
  EXPECT_EQ(gr[3], 1.0);
}

TEST(DefenseLoss, NonNegativeOnDetector) {
  auto det = nets::make_detector_archive<D>(tiny(), 33);
  for (unsigned s = 0; s < 5; ++s) EXPECT_GE(detection_defense_loss(det, rand_image<D>(16, 16, 40 + s)), 0.0);
}
