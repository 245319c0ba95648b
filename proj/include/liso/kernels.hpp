// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cblas.h>

#include <vector>

#include "liso/tensor.hpp"

namespace liso::kernels {

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, lda, b, ldb, beta, c, ldc);
}

/// Unfolds one CHW image into a (C*k*k) x (H*W) column matrix for a
/// stride-1 "same" convolution with an odd kernel size k.
template <class T>
void im2col(const T* image, int channels, int height, int width, int k, T* cols) {
  const int pad = k / 2;
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    const T* src = image + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          T* row = dst + static_cast<std::size_t>(y) * width;
          if (sy < 0 || sy >= height) {
            std::fill(row, row + width, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * width;
          const int x0 = std::min(width, std::max(0, -dx));
          const int x1 = std::min(width, width - dx);
          for (int x = 0; x < x0; ++x) row[x] = T{0};
          for (int x = x0; x < x1; ++x) row[x] = srow[x + dx];
          for (int x = std::max(x1, x0); x < width; ++x) row[x] = T{0};
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the image.
template <class T>
void col2im_add(const T* cols, int channels, int height, int width, int k, T* image) {
  const int pad = k / 2;
  const int plane = height * width;
  for (int c = 0; c < channels; ++c) {
    T* dst = image + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * plane;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= height) continue;
          const T* row = src + static_cast<std::size_t>(y) * width;
          T* drow = dst + static_cast<std::size_t>(sy) * width;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(width, width - dx);
          for (int x = x0; x < x1; ++x) drow[x + dx] += row[x];
        }
      }
    }
  }
}

/// Stride-1 same-padded 2-D convolution (cross-correlation), NCHW input,
/// weight (Cout, Cin, k, k), optional bias (Cout).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  require(x.rank() == 4 && w.rank() == 4, ErrorCode::ShapeMismatch, "conv2d expects NCHW input and 4-D weight");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  require(w.dim(1) == cin, ErrorCode::ShapeMismatch,
          "conv2d channel mismatch: input " + x.shape().str() + " weight " + w.shape().str());
  require(k % 2 == 1 && w.dim(3) == k, ErrorCode::ShapeMismatch, "conv2d needs odd square kernels");
  const int plane = h * wd;
  const int ck = cin * k * k;
  Tensor<T> y(Shape{n, cout, h, wd});
  std::vector<T> cols(k == 1 ? 0 : static_cast<std::size_t>(ck) * plane);
  for (int i = 0; i < n; ++i) {
    const T* xi = x.data() + static_cast<std::size_t>(i) * cin * plane;
    const T* b = xi;
    if (k != 1) {
      im2col(xi, cin, h, wd, k, cols.data());
      b = cols.data();
    }
    T* yi = y.data() + static_cast<std::size_t>(i) * cout * plane;
    if (bias) {
      for (int o = 0; o < cout; ++o) std::fill(yi + static_cast<std::size_t>(o) * plane, yi + (o + 1) * plane, (*bias)[o]);
    }
    gemm(false, false, cout, plane, ck, T{1}, w.data(), ck, b, plane, bias ? T{1} : T{0}, yi, plane);
  }
  return y;
}

/// Accumulates gradients of a conv2d into dx (if non-null), dw and db.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                     Tensor<T>* db) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int plane = h * wd;
  const int ck = cin * k * k;
  std::vector<T> cols(k == 1 ? 0 : static_cast<std::size_t>(ck) * plane);
  std::vector<T> dcols(dx && k != 1 ? static_cast<std::size_t>(ck) * plane : 0);
  for (int i = 0; i < n; ++i) {
    const T* xi = x.data() + static_cast<std::size_t>(i) * cin * plane;
    const T* dyi = dy.data() + static_cast<std::size_t>(i) * cout * plane;
    if (dw) {
      const T* b = xi;
      if (k != 1) {
        im2col(xi, cin, h, wd, k, cols.data());
        b = cols.data();
      }
      gemm(false, true, cout, ck, plane, T{1}, dyi, plane, b, plane, T{1}, dw->data(), ck);
    }
    if (db) {
      for (int o = 0; o < cout; ++o) {
        T s{0};
        const T* row = dyi + static_cast<std::size_t>(o) * plane;
        for (int p = 0; p < plane; ++p) s += row[p];
        (*db)[o] += s;
      }
    }
    if (dx) {
      T* dxi = dx->data() + static_cast<std::size_t>(i) * cin * plane;
      if (k == 1) {
        gemm(true, false, ck, plane, cout, T{1}, w.data(), ck, dyi, plane, T{1}, dxi, plane);
      } else {
        gemm(true, false, ck, plane, cout, T{1}, w.data(), ck, dyi, plane, T{0}, dcols.data(), plane);
        col2im_add(dcols.data(), cin, h, wd, k, dxi);
      }
    }
  }
}

}  // namespace liso::kernels
