#pragma once

#include <cstdint>
#include <vector>

#include "affectlab/tensor.hpp"

// Layer primitives with analytic backward passes. Images are NHWC.
namespace affectlab::nn::ops {

// ---- fully connected: x[B,in] * W[in,out] + b[out] ----

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b);

struct FcGrads {
  Tensor dx, dw, db;
};
FcGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

// ---- 2-D cross-correlation: x[B,H,W,C], k[kh,kw,C,F], b[F] ----

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Throws ShapeError if (H + 2p - kh) is not a multiple of the stride.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, ConvGeometry g);

Tensor conv2d_forward(const Tensor& x, const Tensor& k, const Tensor& b, ConvGeometry g);

struct ConvGrads {
  Tensor dx, dk, db;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dy, ConvGeometry g);

// ---- max pooling over x[B,H,W,C]; output extent floor((H - window)/stride) + 1 ----

std::size_t pool_output_extent(std::size_t in, std::size_t window, std::size_t stride);

struct PoolResult {
  Tensor out;
  std::vector<std::uint32_t> argmax;  // flat index into x for each output element
};
PoolResult maxpool_forward(const Tensor& x, std::size_t window, std::size_t stride);
Tensor maxpool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Shape& x_shape);

// ---- ReLU (derivative at 0 is 0) ----

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// ---- GRU cell ----
//   z  = sigmoid(x Wz + h Uz + bz)
//   r  = sigmoid(x Wr + h Ur + br)
//   hc = tanh(x Wh + (r*h) Uh + bh)
//   h' = (1 - z) * h + z * hc

struct GruWeights {
  const Tensor *w_z, *u_z, *b_z;
  const Tensor *w_r, *u_r, *b_r;
  const Tensor *w_h, *u_h, *b_h;
};

struct GruCellCache {
  Tensor x, h_prev, z, r, h_cand, rh;
};

struct GruCellResult {
  Tensor h;
  GruCellCache cache;
};

GruCellResult gru_cell_forward(const Tensor& x, const Tensor& h_prev, const GruWeights& w);

struct GruCellGrads {
  Tensor dx, dh_prev;
  Tensor dw_z, du_z, db_z, dw_r, du_r, db_r, dw_h, du_h, db_h;
};
GruCellGrads gru_cell_backward(const GruCellCache& cache, const GruWeights& w, const Tensor& dh);

}  // namespace affectlab::nn::ops
