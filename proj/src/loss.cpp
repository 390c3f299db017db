#include "affectlab/loss.hpp"

#include <algorithm>

#include "affectlab/error.hpp"
#include "affectlab/metrics.hpp"

namespace affectlab::nn {

namespace {

// CCC of strided values and its gradient w.r.t. pred, scaled by `scale` and
// accumulated into grad at the same positions.
double ccc_with_grad(const double* pred, const double* truth, std::size_t count, std::size_t stride, double scale,
                     double* grad) {
  const double n = static_cast<double>(count);
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    mp += pred[i * stride];
    mt += truth[i * stride];
  }
  mp /= n;
  mt /= n;
  double vp = 0.0, vt = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double dp = pred[i * stride] - mp, dt = truth[i * stride] - mt;
    vp += dp * dp;
    vt += dt * dt;
    cov += dp * dt;
  }
  vp /= n;
  vt /= n;
  cov /= n;
  const double gap = mp - mt;
  const double raw_den = vp + vt + gap * gap;
  const bool floored = raw_den < metrics::kCccEpsilon;
  const double den = floored ? metrics::kCccEpsilon : raw_den;
  const double num = 2.0 * cov;
  const double value = num / den;
  // d num / d p_i = 2 (t_i - mt) / n
  // d den / d p_i = 2 (p_i - mp) / n + 2 gap / n   (zero while floored)
  for (std::size_t i = 0; i < count; ++i) {
    const double dnum = 2.0 * (truth[i * stride] - mt) / n;
    const double dden = floored ? 0.0 : 2.0 * ((pred[i * stride] - mp) + gap) / n;
    grad[i * stride] += scale * (dnum * den - num * dden) / (den * den);
  }
  return value;
}

}  // namespace

LossResult loss_1mccc(const Tensor& pred, const Tensor& target, CccStats stats) {
  if (pred.rank() != 3 || pred.dim(2) != 2) throw ShapeError("loss: predictions must be [n,l,2], got " + shape_string(pred.shape()));
  require_shape(target, pred.shape(), "loss target");
  const std::size_t n = pred.dim(0), l = pred.dim(1);
  LossResult r;
  r.grad = Tensor(pred.shape());
  if (stats == CccStats::joint) {
    if (n * l < 2) throw ShapeError("loss: need at least 2 values per dimension");
    r.ccc_valence = ccc_with_grad(pred.ptr(), target.ptr(), n * l, 2, -0.5, r.grad.ptr());
    r.ccc_arousal = ccc_with_grad(pred.ptr() + 1, target.ptr() + 1, n * l, 2, -0.5, r.grad.ptr() + 1);
  } else {
    if (l < 2) throw ShapeError("loss: per-sequence statistics need l >= 2");
    const double scale = -0.5 / static_cast<double>(n);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = s * l * 2;
      r.ccc_valence += ccc_with_grad(pred.ptr() + off, target.ptr() + off, l, 2, scale, r.grad.ptr() + off);
      r.ccc_arousal += ccc_with_grad(pred.ptr() + off + 1, target.ptr() + off + 1, l, 2, scale, r.grad.ptr() + off + 1);
    }
    r.ccc_valence /= static_cast<double>(n);
    r.ccc_arousal /= static_cast<double>(n);
  }
  r.loss = 1.0 - 0.5 * (r.ccc_valence + r.ccc_arousal);
  return r;
}

}  // namespace affectlab::nn
