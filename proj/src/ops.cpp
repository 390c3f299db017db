#include "affectlab/ops.hpp"

#include <cmath>
#include <limits>

#include "affectlab/error.hpp"

namespace affectlab::nn::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// out[B,out] += x[B,in] * w[in,out]
void matmul_acc(const Tensor& x, const Tensor& w, Tensor& out) {
  const std::size_t batch = x.dim(0), in = x.dim(1), n_out = w.dim(1);
  const double* xp = x.ptr();
  const double* wp = w.ptr();
  double* op = out.ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    double* orow = op + b * n_out;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xp[b * in + i];
      if (xi == 0.0) continue;
      const double* wrow = wp + i * n_out;
      for (std::size_t j = 0; j < n_out; ++j) orow[j] += xi * wrow[j];
    }
  }
}

// dx[B,in] += dy[B,out] * w[in,out]^T
void matmul_transposed_acc(const Tensor& dy, const Tensor& w, Tensor& dx) {
  const std::size_t batch = dy.dim(0), in = w.dim(0), n_out = w.dim(1);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyrow = dy.ptr() + b * n_out;
    double* dxrow = dx.ptr() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double* wrow = w.ptr() + i * n_out;
      double acc = 0.0;
      for (std::size_t j = 0; j < n_out; ++j) acc += wrow[j] * dyrow[j];
      dxrow[i] += acc;
    }
  }
}

// dw[in,out] += x[B,in]^T * dy[B,out]
void outer_acc(const Tensor& x, const Tensor& dy, Tensor& dw) {
  const std::size_t batch = x.dim(0), in = x.dim(1), n_out = dy.dim(1);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyrow = dy.ptr() + b * n_out;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x.ptr()[b * in + i];
      if (xi == 0.0) continue;
      double* dwrow = dw.ptr() + i * n_out;
      for (std::size_t j = 0; j < n_out; ++j) dwrow[j] += xi * dyrow[j];
    }
  }
}

void add_bias(Tensor& out, const Tensor& b) {
  const std::size_t n = b.size();
  for (std::size_t r = 0; r < out.size() / n; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b[j];
}

void bias_grad_acc(const Tensor& dy, Tensor& db) {
  const std::size_t n = db.size();
  for (std::size_t r = 0; r < dy.size() / n; ++r)
    for (std::size_t j = 0; j < n; ++j) db[j] += dy[r * n + j];
}

}  // namespace

Tensor fc_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "fc input");
  require_rank(w, 2, "fc weight");
  if (x.dim(1) != w.dim(0))
    throw ShapeError("fc: input width " + std::to_string(x.dim(1)) + " does not match weight rows " +
                     std::to_string(w.dim(0)));
  require_shape(b, {w.dim(1)}, "fc bias");
  Tensor out({x.dim(0), w.dim(1)});
  matmul_acc(x, w, out);
  add_bias(out, b);
  return out;
}

FcGrads fc_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  require_shape(dy, {x.dim(0), w.dim(1)}, "fc output gradient");
  FcGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({w.dim(1)})};
  matmul_transposed_acc(dy, w, g.dx);
  outer_acc(x, dy, g.dw);
  bias_grad_acc(dy, g.db);
  return g;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, ConvGeometry g) {
  if (g.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t padded = in + 2 * g.padding;
  if (padded < kernel)
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(padded));
  if ((padded - kernel) % g.stride != 0)
    throw ShapeError("conv2d: output size (" + std::to_string(in) + " + 2*" + std::to_string(g.padding) +
                     " - " + std::to_string(kernel) + ")/" + std::to_string(g.stride) +
                     " + 1 is not integral");
  return (padded - kernel) / g.stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& k, const Tensor& b, ConvGeometry g) {
  require_rank(x, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), f = k.dim(3);
  if (k.dim(2) != c)
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.dim(2)) + " input channels, got " +
                     std::to_string(c));
  require_shape(b, {f}, "conv2d bias");
  const std::size_t oh = conv_output_extent(h, kh, g), ow = conv_output_extent(w, kw, g);
  Tensor out({batch, oh, ow, f});
  const long pad = static_cast<long>(g.padding);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* o = out.ptr() + ((n * oh + oy) * ow + ox) * f;
        for (std::size_t j = 0; j < f; ++j) o[j] = b[j];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const double* xin = x.ptr() + ((n * h + iy) * w + ix) * c;
            const double* kp = k.ptr() + (ky * kw + kx) * c * f;
            for (std::size_t ci = 0; ci < c; ++ci) {
              const double xv = xin[ci];
              if (xv == 0.0) continue;
              const double* krow = kp + ci * f;
              for (std::size_t j = 0; j < f; ++j) o[j] += xv * krow[j];
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& k, const Tensor& dy, ConvGeometry g) {
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), f = k.dim(3);
  const std::size_t oh = conv_output_extent(h, kh, g), ow = conv_output_extent(w, kw, g);
  require_shape(dy, {batch, oh, ow, f}, "conv2d output gradient");
  ConvGrads grads{Tensor(x.shape()), Tensor(k.shape()), Tensor({f})};
  const long pad = static_cast<long>(g.padding);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* d = dy.ptr() + ((n * oh + oy) * ow + ox) * f;
        for (std::size_t j = 0; j < f; ++j) grads.db[j] += d[j];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t xoff = ((n * h + iy) * w + ix) * c;
            const double* xin = x.ptr() + xoff;
            double* dxin = grads.dx.ptr() + xoff;
            const double* kp = k.ptr() + (ky * kw + kx) * c * f;
            double* dkp = grads.dk.ptr() + (ky * kw + kx) * c * f;
            for (std::size_t ci = 0; ci < c; ++ci) {
              const double xv = xin[ci];
              const double* krow = kp + ci * f;
              double* dkrow = dkp + ci * f;
              double acc = 0.0;
              for (std::size_t j = 0; j < f; ++j) {
                acc += krow[j] * d[j];
                dkrow[j] += xv * d[j];
              }
              dxin[ci] += acc;
            }
          }
        }
      }
    }
  }
  return grads;
}

std::size_t pool_output_extent(std::size_t in, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ShapeError("maxpool: window and stride must be >= 1");
  if (window > in)
    throw ShapeError("maxpool: window " + std::to_string(window) + " exceeds input extent " + std::to_string(in));
  return (in - window) / stride + 1;
}

PoolResult maxpool_forward(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 4, "maxpool input");
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = pool_output_extent(h, window, stride), ow = pool_output_extent(w, window, stride);
  PoolResult r{Tensor({batch, oh, ow, c}), std::vector<std::uint32_t>(batch * oh * ow * c)};
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ci = 0; ci < c; ++ci) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t wy = 0; wy < window; ++wy)
            for (std::size_t wx = 0; wx < window; ++wx) {
              const std::size_t idx = ((n * h + oy * stride + wy) * w + ox * stride + wx) * c + ci;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          const std::size_t o = ((n * oh + oy) * ow + ox) * c + ci;
          r.out[o] = best;
          r.argmax[o] = static_cast<std::uint32_t>(best_idx);
        }
  return r;
}

Tensor maxpool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Shape& x_shape) {
  if (argmax.size() != dy.size()) throw ShapeError("maxpool backward: argmax/gradient size mismatch");
  Tensor dx(x_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.storage())
    if (!(v > 0.0)) v = 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_shape(dy, x.shape(), "relu output gradient");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

GruCellResult gru_cell_forward(const Tensor& x, const Tensor& h_prev, const GruWeights& w) {
  require_rank(x, 2, "gru input");
  require_rank(h_prev, 2, "gru hidden state");
  const std::size_t batch = x.dim(0), in = x.dim(1), hid = h_prev.dim(1);
  if (h_prev.dim(0) != batch) throw ShapeError("gru: batch size of x and h differ");
  for (const Tensor* m : {w.w_z, w.w_r, w.w_h}) require_shape(*m, {in, hid}, "gru input weight");
  for (const Tensor* m : {w.u_z, w.u_r, w.u_h}) require_shape(*m, {hid, hid}, "gru recurrent weight");
  for (const Tensor* m : {w.b_z, w.b_r, w.b_h}) require_shape(*m, {hid}, "gru bias");

  GruCellResult res;
  GruCellCache& c = res.cache;
  c.x = x;
  c.h_prev = h_prev;
  c.z = Tensor({batch, hid});
  c.r = Tensor({batch, hid});
  c.h_cand = Tensor({batch, hid});
  matmul_acc(x, *w.w_z, c.z);
  matmul_acc(h_prev, *w.u_z, c.z);
  add_bias(c.z, *w.b_z);
  matmul_acc(x, *w.w_r, c.r);
  matmul_acc(h_prev, *w.u_r, c.r);
  add_bias(c.r, *w.b_r);
  for (std::size_t i = 0; i < c.z.size(); ++i) {
    c.z[i] = sigmoid(c.z[i]);
    c.r[i] = sigmoid(c.r[i]);
  }
  c.rh = Tensor({batch, hid});
  for (std::size_t i = 0; i < c.rh.size(); ++i) c.rh[i] = c.r[i] * h_prev[i];
  matmul_acc(x, *w.w_h, c.h_cand);
  matmul_acc(c.rh, *w.u_h, c.h_cand);
  add_bias(c.h_cand, *w.b_h);
  res.h = Tensor({batch, hid});
  for (std::size_t i = 0; i < c.h_cand.size(); ++i) {
    c.h_cand[i] = std::tanh(c.h_cand[i]);
    res.h[i] = (1.0 - c.z[i]) * h_prev[i] + c.z[i] * c.h_cand[i];
  }
  return res;
}

GruCellGrads gru_cell_backward(const GruCellCache& c, const GruWeights& w, const Tensor& dh) {
  require_shape(dh, c.h_prev.shape(), "gru output gradient");
  const std::size_t n = dh.size();
  GruCellGrads g{Tensor(c.x.shape()),   Tensor(c.h_prev.shape()), Tensor(w.w_z->shape()),
                 Tensor(w.u_z->shape()), Tensor(w.b_z->shape()),   Tensor(w.w_r->shape()),
                 Tensor(w.u_r->shape()), Tensor(w.b_r->shape()),   Tensor(w.w_h->shape()),
                 Tensor(w.u_h->shape()), Tensor(w.b_h->shape())};
  Tensor da_z(dh.shape()), da_h(dh.shape()), da_r(dh.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double z = c.z[i], hc = c.h_cand[i];
    const double dz = dh[i] * (hc - c.h_prev[i]);
    g.dh_prev[i] = dh[i] * (1.0 - z);
    da_z[i] = dz * z * (1.0 - z);
    da_h[i] = dh[i] * z * (1.0 - hc * hc);
  }
  // Candidate path.
  outer_acc(c.x, da_h, g.dw_h);
  outer_acc(c.rh, da_h, g.du_h);
  bias_grad_acc(da_h, g.db_h);
  matmul_transposed_acc(da_h, *w.w_h, g.dx);
  Tensor d_rh(dh.shape());
  matmul_transposed_acc(da_h, *w.u_h, d_rh);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = c.r[i];
    g.dh_prev[i] += d_rh[i] * r;
    da_r[i] = d_rh[i] * c.h_prev[i] * r * (1.0 - r);
  }
  // Gates.
  outer_acc(c.x, da_z, g.dw_z);
  outer_acc(c.h_prev, da_z, g.du_z);
  bias_grad_acc(da_z, g.db_z);
  matmul_transposed_acc(da_z, *w.w_z, g.dx);
  matmul_transposed_acc(da_z, *w.u_z, g.dh_prev);
  outer_acc(c.x, da_r, g.dw_r);
  outer_acc(c.h_prev, da_r, g.du_r);
  bias_grad_acc(da_r, g.db_r);
  matmul_transposed_acc(da_r, *w.w_r, g.dx);
  matmul_transposed_acc(da_r, *w.u_r, g.dh_prev);
  return g;
}

}  // namespace affectlab::nn::ops
