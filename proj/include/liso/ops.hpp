// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "liso/autodiff.hpp"

namespace liso::ops {

namespace detail {
template <class T>
void accumulate(Graph<T>& g, Var<T> v, const Tensor<T>& delta) {
  if (g.requires_grad(v)) g.grad_buffer(v) += delta;
}

template <class T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{1}, v);
}
}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tensor<T> out = a.value() + b.value();
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    detail::accumulate(g, a, dy);
    detail::accumulate(g, b, dy);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tensor<T> out = a.value() - b.value();
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    detail::accumulate(g, a, dy);
    if (g.requires_grad(b)) g.grad_buffer(b) -= dy;
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  a.value().check_same(b.value(), "mul");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.requires_grad(a)) {
      auto& da = g.grad_buffer(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad_buffer(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> out = x.value() * s;
  return x.graph->record(std::move(out), {x}, [x, s](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += s * dy[i];
  });
}

/// GRU blend (1 - z) * h + z * c in one node.
template <class T>
Var<T> gate_blend(Var<T> z, Var<T> h, Var<T> c) {
  const auto& zv = z.value();
  const auto& hv = h.value();
  const auto& cv = c.value();
  zv.check_same(hv, "gate_blend");
  zv.check_same(cv, "gate_blend");
  Tensor<T> out(zv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = hv[i] + zv[i] * (cv[i] - hv[i]);
  return z.graph->record(std::move(out), {z, h, c}, [z, h, c](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    const auto& zv = g.value(z);
    const auto& hv = g.value(h);
    const auto& cv = g.value(c);
    if (g.requires_grad(z)) {
      auto& d = g.grad_buffer(z);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * (cv[i] - hv[i]);
    }
    if (g.requires_grad(h)) {
      auto& d = g.grad_buffer(h);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * (T{1} - zv[i]);
    }
    if (g.requires_grad(c)) {
      auto& d = g.grad_buffer(c);
      for (std::size_t i = 0; i < dy.size(); ++i) d[i] += dy[i] * zv[i];
    }
  });
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_value(in[i]);
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& dy) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
  });
}

template <class T>
Var<T> tanh(Var<T> x) {
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& y, const Tensor<T>& dy) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T{1} - y[i] * y[i]);
  });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  const auto& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : slope * in[i];
  return x.graph->record(std::move(out), {x}, [x, slope](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    const auto& in = g.value(x);
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += in[i] > T{0} ? dy[i] : slope * dy[i];
  });
}

/// Stride-1, same-padded convolution. `bias` may be an invalid Var.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias = {}) {
  const bool has_bias = bias.valid();
  Tensor<T> out = kernels::conv2d_forward(x.value(), weight.value(), has_bias ? &bias.value() : nullptr);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.graph->record(std::move(out), inputs,
                         [x, weight, bias, has_bias](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                           Tensor<T>* dx = g.requires_grad(x) ? &g.grad_buffer(x) : nullptr;
                           Tensor<T>* dw = g.requires_grad(weight) ? &g.grad_buffer(weight) : nullptr;
                           Tensor<T>* db = has_bias && g.requires_grad(bias) ? &g.grad_buffer(bias) : nullptr;
                           kernels::conv2d_backward(g.value(x), g.value(weight), dy, dx, dw, db);
                         });
}

/// Concatenates NCHW tensors along the channel axis.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), ErrorCode::InvalidArgument, "concat of nothing");
  const Shape& s0 = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.rank() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3], ErrorCode::ShapeMismatch,
            "concat_channels: " + s.str() + " vs " + s0.str());
    channels += s[1];
  }
  const int n = s0[0];
  const std::size_t plane = static_cast<std::size_t>(s0[2]) * s0[3];
  Tensor<T> out(Shape{n, channels, s0[2], s0[3]});
  for (int i = 0; i < n; ++i) {
    T* dst = out.data() + static_cast<std::size_t>(i) * channels * plane;
    for (const auto& p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p.shape()[1]) * plane;
      std::copy_n(p.value().data() + i * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return parts.front().graph->record(
      std::move(out), parts, [parts, channels, plane](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
        const int n = dy.dim(0);
        for (int i = 0; i < n; ++i) {
          const T* src = dy.data() + static_cast<std::size_t>(i) * channels * plane;
          for (const auto& p : parts) {
            const std::size_t chunk = static_cast<std::size_t>(g.value(p).shape()[1]) * plane;
            if (g.requires_grad(p)) {
              T* d = g.grad_buffer(p).data() + i * chunk;
              for (std::size_t j = 0; j < chunk; ++j) d[j] += src[j];
            }
            src += chunk;
          }
        }
      });
}

/// Per-channel batch normalization over (N, H, W).
template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                  NormMode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& xv = x.value();
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  const std::size_t count = n * plane;
  require(gamma.value().size() == static_cast<std::size_t>(c) && beta.value().size() == static_cast<std::size_t>(c),
          ErrorCode::ShapeMismatch, "batch_norm parameter size");
  std::vector<T> mean(c), inv_std(c);
  if (mode == NormMode::Eval) {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(running_var[ch] + eps);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      T s{0};
      for (int i = 0; i < n; ++i) {
        const T* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      const T m = s / static_cast<T>(count);
      T v{0};
      for (int i = 0; i < n; ++i) {
        const T* p = xv.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) v += (p[j] - m) * (p[j] - m);
      }
      const T var = v / static_cast<T>(count);
      mean[ch] = m;
      inv_std[ch] = T{1} / std::sqrt(var + eps);
      if (mode == NormMode::Train) {
        const T unbiased = count > 1 ? v / static_cast<T>(count - 1) : var;
        running_mean[ch] = (T{1} - momentum) * running_mean[ch] + momentum * m;
        running_var[ch] = (T{1} - momentum) * running_var[ch] + momentum * unbiased;
      }
    }
  }
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const T h = (xv[base + j] - mean[ch]) * inv_std[ch];
        xhat[base + j] = h;
        out[base + j] = gv[ch] * h + bv[ch];
      }
    }
  }
  const bool batch_stats = mode != NormMode::Eval;
  return x.graph->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch_stats, n, c, plane, count](
          Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
        const auto& gv = g.value(gamma);
        std::vector<T> sum_dy(c, T{0}), sum_dy_xhat(c, T{0});
        for (int i = 0; i < n; ++i) {
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              sum_dy[ch] += dy[base + j];
              sum_dy_xhat[ch] += dy[base + j] * xhat[base + j];
            }
          }
        }
        if (g.requires_grad(gamma)) {
          auto& dg = g.grad_buffer(gamma);
          for (int ch = 0; ch < c; ++ch) dg[ch] += sum_dy_xhat[ch];
        }
        if (g.requires_grad(beta)) {
          auto& db = g.grad_buffer(beta);
          for (int ch = 0; ch < c; ++ch) db[ch] += sum_dy[ch];
        }
        if (!g.requires_grad(x)) return;
        auto& dx = g.grad_buffer(x);
        const T inv_count = T{1} / static_cast<T>(count);
        for (int i = 0; i < n; ++i) {
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
            const T k = gv[ch] * inv_std[ch];
            if (batch_stats) {
              const T mdy = sum_dy[ch] * inv_count;
              const T mdyx = sum_dy_xhat[ch] * inv_count;
              for (std::size_t j = 0; j < plane; ++j) dx[base + j] += k * (dy[base + j] - mdy - xhat[base + j] * mdyx);
            } else {
              for (std::size_t j = 0; j < plane; ++j) dx[base + j] += k * dy[base + j];
            }
          }
        }
      });
}

/// Feasibility projection of a perturbation: clamp to [-tau, tau], then so
/// that cover + delta stays inside [0, 1]. Gradients pass where no bound
/// was active.
template <class T>
Tensor<T> project_box_value(const Tensor<T>& cover, const Tensor<T>& delta, T tau) {
  cover.check_same(delta, "project_box");
  Tensor<T> out(delta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T d = std::clamp(delta[i], -tau, tau);
    out[i] = std::clamp(cover[i] + d, T{0}, T{1}) - cover[i];
  }
  return out;
}

template <class T>
Var<T> project_box(Var<T> delta, const Tensor<T>& cover, T tau) {
  Tensor<T> out = project_box_value(cover, delta.value(), tau);
  return delta.graph->record(std::move(out), {delta},
                             [delta, cover, tau](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                               const auto& dv = g.value(delta);
                               auto& dd = g.grad_buffer(delta);
                               for (std::size_t i = 0; i < dy.size(); ++i) {
                                 const T d = dv[i];
                                 const bool inside = d >= -tau && d <= tau && cover[i] + d >= T{0} &&
                                                     cover[i] + d <= T{1};
                                 if (inside) dd[i] += dy[i];
                               }
                             });
}

/// Adds a constant tensor.
template <class T>
Var<T> add_constant(Var<T> x, const Tensor<T>& c) {
  Tensor<T> out = x.value() + c;
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    g.grad_buffer(x) += dy;
  });
}

/// Forward value replaced by `value`, backward is the identity.
template <class T>
Var<T> straight_through(Var<T> x, Tensor<T> value) {
  x.value().check_same(value, "straight_through");
  return x.graph->record(std::move(value), {x}, [x](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    g.grad_buffer(x) += dy;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  const auto& xv = x.value();
  require(!xv.empty(), ErrorCode::InvalidArgument, "mean of empty tensor");
  const T n = static_cast<T>(xv.size());
  return x.graph->record(detail::scalar_tensor(sum(xv) / n), {x},
                         [x, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                           auto& dx = g.grad_buffer(x);
                           const T s = dy[0] / n;
                           for (auto& v : dx.storage()) v += s;
                         });
}

/// Weighted sum of scalar Vars.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  require(!terms.empty() && terms.size() == weights.size(), ErrorCode::InvalidArgument, "weighted_sum arity");
  T total{0};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, ErrorCode::ShapeMismatch, "weighted_sum expects scalars");
    total += weights[i] * terms[i].value()[0];
  }
  return terms.front().graph->record(detail::scalar_tensor(total), terms,
                                     [terms, weights](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                                       for (std::size_t i = 0; i < terms.size(); ++i) {
                                         if (g.requires_grad(terms[i])) g.grad_buffer(terms[i])[0] += weights[i] * dy[0];
                                       }
                                     });
}

/// Mean binary cross-entropy of probabilities against {0,1} targets, with
/// probabilities clamped to [eps, 1 - eps].
template <class T>
Var<T> bce_mean(Var<T> probs, const Tensor<T>& target, T eps = T(1e-7)) {
  const auto& p = probs.value();
  p.check_same(target, "bce");
  T s{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T q = std::clamp(p[i], eps, T{1} - eps);
    s -= target[i] * std::log(q) + (T{1} - target[i]) * std::log(T{1} - q);
  }
  const T n = static_cast<T>(p.size());
  return probs.graph->record(detail::scalar_tensor(s / n), {probs},
                             [probs, target, eps, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                               const auto& p = g.value(probs);
                               auto& dp = g.grad_buffer(probs);
                               for (std::size_t i = 0; i < p.size(); ++i) {
                                 if (p[i] < eps || p[i] > T{1} - eps) continue;
                                 dp[i] += dy[0] * (-target[i] / p[i] + (T{1} - target[i]) / (T{1} - p[i])) / n;
                               }
                             });
}

/// Mean binary cross-entropy evaluated from logits. The value equals
/// bce_mean(sigmoid(logits)) including the clamp; the gradient is the
/// unclamped (sigmoid(z) - target) / n so saturated wrong bits still
/// receive signal.
template <class T>
Var<T> bce_logits_mean(Var<T> logits, const Tensor<T>& target, T eps = T(1e-7)) {
  const auto& z = logits.value();
  z.check_same(target, "bce_logits");
  const T log_eps = std::log(eps);
  const T log_1m_eps = std::log1p(-eps);
  T s{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    // log sigmoid(z) and log(1 - sigmoid(z)) computed stably.
    const T lp = z[i] >= T{0} ? -std::log1p(std::exp(-z[i])) : z[i] - std::log1p(std::exp(z[i]));
    const T lq = lp - z[i];
    const T lpc = std::clamp(lp, log_eps, log_1m_eps);
    const T lqc = std::clamp(lq, log_eps, log_1m_eps);
    s -= target[i] * lpc + (T{1} - target[i]) * lqc;
  }
  const T n = static_cast<T>(z.size());
  return logits.graph->record(detail::scalar_tensor(s / n), {logits},
                              [logits, target, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                                const auto& z = g.value(logits);
                                auto& dz = g.grad_buffer(logits);
                                for (std::size_t i = 0; i < z.size(); ++i)
                                  dz[i] += dy[0] * (sigmoid_value(z[i]) - target[i]) / n;
                              });
}

/// Mean squared error against a constant reference.
template <class T>
Var<T> mse_mean(Var<T> x, const Tensor<T>& ref) {
  const auto& xv = x.value();
  xv.check_same(ref, "mse");
  T s{0};
  for (std::size_t i = 0; i < xv.size(); ++i) s += (xv[i] - ref[i]) * (xv[i] - ref[i]);
  const T n = static_cast<T>(xv.size());
  return x.graph->record(detail::scalar_tensor(s / n), {x},
                         [x, ref, n](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                           const auto& xv = g.value(x);
                           auto& dx = g.grad_buffer(x);
                           const T k = T{2} * dy[0] / n;
                           for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += k * (xv[i] - ref[i]);
                         });
}

/// Spatial mean pooling: (N,C,H,W) -> (N,C,1,1).
template <class T>
Var<T> spatial_mean(Var<T> x) {
  const auto& xv = x.value();
  const int n = xv.dim(0), c = xv.dim(1);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out(Shape{n, c, 1, 1});
  for (std::size_t k = 0; k < static_cast<std::size_t>(n) * c; ++k) {
    T s{0};
    for (std::size_t j = 0; j < plane; ++j) s += xv[k * plane + j];
    out[k] = s / static_cast<T>(plane);
  }
  return x.graph->record(std::move(out), {x}, [x, plane](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t k = 0; k < dy.size(); ++k) {
      const T s = dy[k] / static_cast<T>(plane);
      for (std::size_t j = 0; j < plane; ++j) dx[k * plane + j] += s;
    }
  });
}

/// Fully connected layer on (N,C,1,1) or (N,C): y = x W^T + b, y is (N,O).
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const int n = xv.dim(0);
  const int in = static_cast<int>(xv.size() / n);
  const int out_dim = wv.dim(0);
  require(wv.rank() == 2 && wv.dim(1) == in, ErrorCode::ShapeMismatch, "linear weight " + wv.shape().str());
  Tensor<T> out(Shape{n, out_dim});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_dim; ++o) {
      T s = bias.value()[o];
      for (int k = 0; k < in; ++k) s += xv[static_cast<std::size_t>(i) * in + k] * wv[static_cast<std::size_t>(o) * in + k];
      out[static_cast<std::size_t>(i) * out_dim + o] = s;
    }
  return x.graph->record(std::move(out), {x, weight, bias},
                         [x, weight, bias, n, in, out_dim](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                           const auto& xv = g.value(x);
                           const auto& wv = g.value(weight);
                           for (int i = 0; i < n; ++i)
                             for (int o = 0; o < out_dim; ++o) {
                               const T d = dy[static_cast<std::size_t>(i) * out_dim + o];
                               if (g.requires_grad(bias)) g.grad_buffer(bias)[o] += d;
                               if (g.requires_grad(weight)) {
                                 auto& dw = g.grad_buffer(weight);
                                 for (int k = 0; k < in; ++k)
                                   dw[static_cast<std::size_t>(o) * in + k] += d * xv[static_cast<std::size_t>(i) * in + k];
                               }
                               if (g.requires_grad(x)) {
                                 auto& dx = g.grad_buffer(x);
                                 for (int k = 0; k < in; ++k)
                                   dx[static_cast<std::size_t>(i) * in + k] += d * wv[static_cast<std::size_t>(o) * in + k];
                               }
                             }
                         });
}

/// Mean softmax cross-entropy of (N,K) logits against class labels.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const auto& z = logits.value();
  const int n = z.dim(0), k = z.dim(1);
  require(static_cast<int>(labels.size()) == n, ErrorCode::ShapeMismatch, "labels count");
  Tensor<T> probs(z.shape());
  T loss{0};
  for (int i = 0; i < n; ++i) {
    const T* row = z.data() + static_cast<std::size_t>(i) * k;
    const T m = *std::max_element(row, row + k);
    T s{0};
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - m);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] = std::exp(row[j] - m) / s;
    loss -= row[labels[i]] - m - std::log(s);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.graph->record(detail::scalar_tensor(loss / static_cast<T>(n)), {logits},
                              [logits, probs = std::move(probs), lab, n, k](Graph<T>& g, const Tensor<T>&,
                                                                              const Tensor<T>& dy) {
                                auto& dz = g.grad_buffer(logits);
                                for (int i = 0; i < n; ++i)
                                  for (int j = 0; j < k; ++j) {
                                    const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                                    dz[idx] += dy[0] * (probs[idx] - (j == lab[i] ? T{1} : T{0})) / static_cast<T>(n);
                                  }
                              });
}

/// Sum over the batch of the stego-class logit (column 1) for every row
/// where it beats the cover-class logit (column 0); zero elsewhere.
template <class T>
Var<T> detected_stego_logit_sum(Var<T> logits) {
  const auto& z = logits.value();
  require(z.rank() == 2 && z.dim(1) == 2, ErrorCode::ShapeMismatch, "expected (N,2) logits");
  const int n = z.dim(0);
  T s{0};
  std::vector<char> active(n);
  for (int i = 0; i < n; ++i) {
    active[i] = z[2 * i + 1] > z[2 * i];
    if (active[i]) s += z[2 * i + 1];
  }
  return logits.graph->record(detail::scalar_tensor(s), {logits},
                              [logits, active](Graph<T>& g, const Tensor<T>&, const Tensor<T>& dy) {
                                auto& dz = g.grad_buffer(logits);
                                for (std::size_t i = 0; i < active.size(); ++i)
                                  if (active[i]) dz[2 * i + 1] += dy[0];
                              });
}

}  // namespace liso::ops
