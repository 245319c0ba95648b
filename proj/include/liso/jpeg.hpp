// SPDX-License-Identifier: Apache-2.0
#pragma once

// Real JPEG compression as a network layer. The forward pass runs the
// codec in memory; the backward pass is the identity.

#include "liso/autodiff.hpp"
#include "liso/imageio.hpp"
#include "liso/ops.hpp"

namespace liso {

struct JpegConfig {
  int quality = 80;
  bool enabled = false;

  void validate() const {
    require(quality >= 1 && quality <= 100, ErrorCode::InvalidArgument, "JPEG quality must be in [1,100]");
  }
};

/// Encode + decode each image of an (N,3,H,W) batch.
template <class T>
Tensor<T> jpeg_forward(const Tensor<T>& x, int quality) {
  require(x.rank() == 4 && x.dim(1) == 3, ErrorCode::ShapeMismatch, "jpeg_forward expects (N,3,H,W)");
  Tensor<T> out(x.shape());
  const std::size_t per = x.size() / x.dim(0);
  for (int n = 0; n < x.dim(0); ++n) {
    Image one = slice_batch(x, n).template cast<float>();
    Image back = decode_jpeg(encode_jpeg(one, quality));
    require(back.shape() == one.shape(), ErrorCode::CodecError, "JPEG roundtrip changed the shape");
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] = static_cast<T>(back[i]);
  }
  return out;
}

template <class T>
Var<T> jpeg_straight_through(Var<T> x, int quality) {
  return ops::straight_through(x, jpeg_forward(x.value(), quality));
}

}  // namespace liso
