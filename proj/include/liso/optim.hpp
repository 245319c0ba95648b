// SPDX-License-Identifier: Apache-2.0
#pragma once

// Iterative solvers for the embedding objective: the learned update (LISO),
// sign-gradient PGD, box-clamped L-BFGS, and LISO followed by L-BFGS.

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "liso/imageio.hpp"
#include "liso/losses.hpp"
#include "liso/nets.hpp"

namespace liso {

struct OptimizeConfig {
  double eta = 0.1;
  int max_iters = 50;
  int patience = 5;
  double tau = std::numeric_limits<double>::infinity();
  bool stop_on_zero = true;
  double lambda = 1.0;
  double defense_weight = 1.0;
  JpegConfig jpeg;

  void validate() const {
    require(eta > 0.0, ErrorCode::InvalidArgument, "eta must be > 0");
    require(max_iters >= 1, ErrorCode::InvalidArgument, "max_iters must be >= 1");
    require(patience >= 1, ErrorCode::InvalidArgument, "patience must be >= 1");
    require(tau > 0.0, ErrorCode::InvalidArgument, "tau must be > 0");
    require(lambda >= 0.0, ErrorCode::InvalidArgument, "lambda must be >= 0");
    jpeg.validate();
  }
};

struct TraceRecord {
  int iteration = 0;
  double objective = 0.0;
  double error_rate = 0.0;
  double seconds = 0.0;
};

struct Trace {
  std::vector<TraceRecord> records;
  bool line_search_failed = false;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  const TraceRecord& back() const { return records.back(); }

  double min_error() const {
    double e = std::numeric_limits<double>::infinity();
    for (const auto& r : records) e = std::min(e, r.error_rate);
    return e;
  }

  /// Error of the current iterate at iteration t; runs that stopped
  /// earlier carry their last value forward.
  double error_at(int t) const {
    require(!records.empty(), ErrorCode::EmptySequence, "empty trace");
    double e = records.front().error_rate;
    for (const auto& r : records)
      if (r.iteration <= t) e = r.error_rate;
    return e;
  }

  void write_csv(std::ostream& os) const {
    os << "iteration,objective,error_rate,seconds\n";
    for (const auto& r : records) os << r.iteration << ',' << r.objective << ',' << r.error_rate << ',' << r.seconds << '\n';
  }
  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + path.string());
    write_csv(os);
  }
};

struct OptimizeResult {
  Image stego;  // quantized
  Trace trace;
  int iterations = 0;  // iteration of the returned iterate
  double error_rate = 1.0;
  double objective = 0.0;
};

struct LisoResult : OptimizeResult {
  EncoderState state;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void check_message(const Image& cover, const MessageTensor& m, const NetConfig& cfg) {
  require(cover.rank() == 4 && cover.dim(0) == 1 && cover.dim(1) == 3, ErrorCode::ShapeMismatch,
          "cover must be (1,3,H,W)");
  require(m.bpp == cfg.bpp, ErrorCode::PayloadMismatch,
          "message has " + std::to_string(m.bpp) + " bpp, networks were built for " + std::to_string(cfg.bpp));
  require(m.height == cover.dim(2) && m.width == cover.dim(3), ErrorCode::ShapeMismatch,
          "message and image sizes differ");
}

/// Tracks the best quantized iterate (lowest error, earliest on ties).
struct BestTracker {
  OptimizeResult& out;
  bool have = false;

  void offer(int t, const Image& quantized, double err, double obj) {
    if (!have || err < out.error_rate) {
      out.stego = quantized;
      out.error_rate = err;
      out.objective = obj;
      out.iterations = t;
      have = true;
    }
  }
};

}  // namespace detail

/// The objective used by every solver for one cover/message pair.
inline Objective<float> make_objective(ParameterArchive& archive, const Image& cover, const MessageTensor& m,
                                       double lambda, const JpegConfig& jpeg, ParameterArchive* detector = nullptr,
                                       double defense_weight = 1.0) {
  detail::check_message(cover, m, archive.config);
  Objective<float> obj;
  obj.decoder = &archive;
  obj.detector = detector;
  obj.cover = cover;
  obj.target = message_to_tensor<float>(m);
  obj.lambda = lambda;
  obj.defense_weight = defense_weight;
  obj.jpeg = jpeg;
  obj.mode = NormMode::Eval;
  return obj;
}

/// Objective value and bit error of the quantized image.
inline std::pair<double, double> score_quantized(const Objective<float>& obj, const Image& quantized) {
  return {static_cast<double>(obj.value(quantized)), obj.error(quantized)};
}

/// Learned iterative embedding. Trace starts at t = 1.
inline LisoResult liso_encode(const Image& cover, const MessageTensor& m, ParameterArchive& archive,
                              const OptimizeConfig& cfg, ParameterArchive* detector = nullptr) {
  cfg.validate();
  const auto t0 = detail::Clock::now();
  const Objective<float> obj = make_objective(archive, cover, m, cfg.lambda, cfg.jpeg, detector, cfg.defense_weight);
  const float eta = static_cast<float>(cfg.eta);
  const float tau = static_cast<float>(cfg.tau);

  LisoResult res;
  detail::BestTracker best{res};
  Image delta = Image::zeros(cover.shape());
  EncoderState state = nets::init_state(archive, cover);
  Tensor<float> feat;
  {
    Graph<float> g(false);
    feat = nets::image_features(g, archive, g.constant(cover)).value();
  }
  int stale = 0;
  for (int t = 1; t <= cfg.max_iters; ++t) {
    Tensor<float> grad = obj.value_and_grad(cover + delta).second;
    Tensor<float> step;
    {
      Graph<float> g(false);
      auto out = nets::update_step(g, archive, g.constant(state.h), g.constant(feat), g.constant(delta),
                                   g.constant(std::move(grad)));
      state.h = out.hidden.value();
      step = out.step.value();
    }
    state.t = t;
    step *= eta;
    delta = ops::project_box_value(cover, delta + step, tau);

    const Image q = quantize(cover + delta);
    const auto [value, err] = score_quantized(obj, q);
    res.trace.records.push_back({t, value, err, detail::seconds_since(t0)});
    const bool improved = !best.have || err < res.error_rate;
    best.offer(t, q, err, value);
    res.state = state;
    stale = improved ? 0 : stale + 1;
    if ((cfg.stop_on_zero && err == 0.0) || stale >= cfg.patience) break;
  }
  return res;
}

struct PgdConfig {
  int steps = 50;
  double lr = 1.0 / 255.0;
  bool sign = true;  // false: plain projected gradient steps
  bool stop_on_zero = true;
  double lambda = 1.0;
  JpegConfig jpeg;
};

/// Projected (sign-)gradient descent on the stego image. Trace starts at t = 0.
inline OptimizeResult pgd_optimize(const Image& cover, const MessageTensor& m, ParameterArchive& archive,
                                   const PgdConfig& cfg, const Image* init = nullptr) {
  require(cfg.lr > 0.0, ErrorCode::InvalidArgument, "PGD lr must be > 0");
  require(cfg.steps >= 0, ErrorCode::InvalidArgument, "PGD steps must be >= 0");
  const auto t0 = detail::Clock::now();
  const Objective<float> obj = make_objective(archive, cover, m, cfg.lambda, cfg.jpeg);
  Image x = init ? *init : cover;
  cover.check_same(x, "pgd init");

  OptimizeResult res;
  detail::BestTracker best{res};
  auto record = [&](int t) {
    const Image q = quantize(x);
    const auto [value, err] = score_quantized(obj, q);
    res.trace.records.push_back({t, value, err, detail::seconds_since(t0)});
    best.offer(t, q, err, value);
    return err;
  };
  double err = record(0);
  const float lr = static_cast<float>(cfg.lr);
  for (int t = 1; t <= cfg.steps && !(cfg.stop_on_zero && err == 0.0); ++t) {
    const Tensor<float> grad = obj.value_and_grad(x).second;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float d = cfg.sign ? static_cast<float>((grad[i] > 0.0f) - (grad[i] < 0.0f)) : grad[i];
      x[i] = std::clamp(x[i] - lr * d, 0.0f, 1.0f);
    }
    err = record(t);
  }
  return res;
}

// ---- L-BFGS -----------------------------------------------------------

struct LbfgsOptions {
  int max_steps = 50;
  int history = 10;
  double c1 = 1e-4;
  int max_trials = 20;
  double lower = 0.0;
  double upper = 1.0;
};

/// Outcome of the generic L-BFGS core.
struct LbfgsCoreResult {
  int steps = 0;  // accepted steps
  bool line_search_failed = false;
};

/// Two-loop L-BFGS on f over [lower, upper]^n. `fg(x, grad)` returns f and
/// fills its gradient; `after_step(t, x, f)` is called after every accepted
/// step and returns true to stop.
template <class T, class FG, class Callback>
LbfgsCoreResult lbfgs_minimize(std::vector<T>& x, FG&& fg, Callback&& after_step, const LbfgsOptions& opt) {
  require(opt.max_steps >= 1 && opt.history >= 1, ErrorCode::InvalidArgument, "L-BFGS needs max_steps, history >= 1");
  const std::size_t n = x.size();
  auto dot = [n](const std::vector<T>& a, const std::vector<T>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
  };
  struct Pair {
    std::vector<T> s, y;
    double rho;
  };
  std::deque<Pair> mem;
  std::vector<T> g(n), g_new(n), d(n), x_new(n);
  double f = fg(x, g);
  LbfgsCoreResult res;

  for (int step = 1; step <= opt.max_steps; ++step) {
    const double gnorm = std::sqrt(dot(g, g));
    if (gnorm == 0.0) break;

    // d = -H g
    std::vector<double> q(g.begin(), g.end());
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      double a = 0.0;
      for (std::size_t i = 0; i < n; ++i) a += mem[k].s[i] * q[i];
      a *= mem[k].rho;
      alpha[k] = a;
      for (std::size_t i = 0; i < n; ++i) q[i] -= a * mem[k].y[i];
    }
    double h0 = 1.0 / gnorm;
    if (!mem.empty()) h0 = dot(mem.back().s, mem.back().y) / dot(mem.back().y, mem.back().y);
    for (auto& v : q) v *= h0;
    for (std::size_t k = 0; k < mem.size(); ++k) {
      double b = 0.0;
      for (std::size_t i = 0; i < n; ++i) b += mem[k].y[i] * q[i];
      b *= mem[k].rho;
      for (std::size_t i = 0; i < n; ++i) q[i] += (alpha[k] - b) * mem[k].s[i];
    }
    for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<T>(-q[i]);
    if (dot(d, g) >= 0.0) {  // not a descent direction; restart
      mem.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<T>(-g[i] / gnorm);
    }

    double step_len = 1.0;
    double f_new = f;
    bool accepted = false;
    for (int trial = 0; trial < opt.max_trials; ++trial, step_len *= 0.5) {
      double moved = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        x_new[i] = std::clamp(static_cast<T>(x[i] + step_len * d[i]), static_cast<T>(opt.lower),
                              static_cast<T>(opt.upper));
        moved += static_cast<double>(g[i]) * (static_cast<double>(x_new[i]) - static_cast<double>(x[i]));
      }
      if (moved >= 0.0) continue;  // clamped onto a non-descending point
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + opt.c1 * moved) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }

    Pair p{std::vector<T>(n), std::vector<T>(n), 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      p.s[i] = x_new[i] - x[i];
      p.y[i] = g_new[i] - g[i];
    }
    const double sy = dot(p.s, p.y);
    if (sy > 0.0) {
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (static_cast<int>(mem.size()) > opt.history) mem.pop_front();
    }
    std::swap(x, x_new);
    std::swap(g, g_new);
    f = f_new;
    res.steps = step;
    if (after_step(step, x, f)) break;
  }
  return res;
}

struct LbfgsConfig {
  int max_steps = 50;
  int history = 10;
  bool stop_on_zero = true;
  double stop_error = 0.0;  // with stop_on_zero: stop once error <= this
  double lambda = 1.0;
  double defense_weight = 1.0;
  JpegConfig jpeg;
};

/// Box-clamped L-BFGS on the stego image starting at `start`. Trace starts
/// at t = 0 (the start point).
inline OptimizeResult lbfgs_optimize(const Image& start, const Image& cover, const MessageTensor& m,
                                     ParameterArchive& archive, const LbfgsConfig& cfg,
                                     ParameterArchive* detector = nullptr) {
  start.check_same(cover, "lbfgs start");
  const auto t0 = detail::Clock::now();
  const Objective<float> obj = make_objective(archive, cover, m, cfg.lambda, cfg.jpeg, detector, cfg.defense_weight);
  OptimizeResult res;
  detail::BestTracker best{res};
  auto record = [&](int t, const Image& x) {
    const Image q = quantize(x);
    const auto [value, err] = score_quantized(obj, q);
    res.trace.records.push_back({t, value, err, detail::seconds_since(t0)});
    best.offer(t, q, err, value);
    return cfg.stop_on_zero && err <= cfg.stop_error;
  };
  if (record(0, start)) return res;

  Image x = start;
  std::vector<float> flat(x.storage().begin(), x.storage().end());
  auto fg = [&](const std::vector<float>& v, std::vector<float>& grad) {
    Image xi(cover.shape(), v);
    auto [value, gr] = obj.value_and_grad(xi);
    grad.assign(gr.storage().begin(), gr.storage().end());
    return static_cast<double>(value);
  };
  auto after = [&](int t, const std::vector<float>& v, double) { return record(t, Image(cover.shape(), v)); };
  LbfgsOptions opt;
  opt.max_steps = cfg.max_steps;
  opt.history = cfg.history;
  const auto core = lbfgs_minimize(flat, fg, after, opt);
  res.trace.line_search_failed = core.line_search_failed;
  return res;
}

/// LISO, then L-BFGS from its output unless it already decodes perfectly.
inline OptimizeResult liso_refine_lbfgs(const Image& cover, const MessageTensor& m, ParameterArchive& archive,
                                        const OptimizeConfig& cfg, int max_lbfgs_steps,
                                        ParameterArchive* detector = nullptr) {
  LisoResult liso = liso_encode(cover, m, archive, cfg, detector);
  OptimizeResult res = liso;
  if (liso.error_rate == 0.0 || max_lbfgs_steps <= 0) return res;
  LbfgsConfig lc;
  lc.max_steps = max_lbfgs_steps;
  lc.stop_on_zero = true;
  lc.lambda = cfg.lambda;
  lc.defense_weight = cfg.defense_weight;
  lc.jpeg = cfg.jpeg;
  OptimizeResult refined = lbfgs_optimize(liso.stego, cover, m, archive, lc, detector);
  const int offset = liso.trace.empty() ? 0 : liso.trace.back().iteration;
  for (const auto& r : refined.trace.records) {
    if (r.iteration == 0) continue;
    res.trace.records.push_back(
        {offset + r.iteration, r.objective, r.error_rate, liso.trace.back().seconds + r.seconds});
  }
  res.trace.line_search_failed = refined.trace.line_search_failed;
  const bool better = refined.error_rate < liso.error_rate ||
                      (refined.error_rate == liso.error_rate &&
                       qua_loss(refined.stego, cover) < qua_loss(liso.stego, cover));
  if (better) {
    res.stego = refined.stego;
    res.error_rate = refined.error_rate;
    res.objective = refined.objective;
    res.iterations = offset + refined.iterations;
  }
  return res;
}

}  // namespace liso
