#include "affectlab/optim.hpp"

#include <cmath>

#include "affectlab/error.hpp"

namespace affectlab::nn {

void adam_step(const std::vector<Parameter*>& params, AdamState& state) {
  for (const Parameter* p : params)
    if (p->trainable && p->grad.shape() != p->value.shape())
      throw ShapeError("adam: gradient of " + p->name + " has shape " + shape_string(p->grad.shape()) +
                       ", parameter has " + shape_string(p->value.shape()));
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    Tensor& m = state.m[p->name];
    Tensor& v = state.v[p->name];
    if (m.shape() != p->value.shape()) m = Tensor(p->value.shape());
    if (v.shape() != p->value.shape()) v = Tensor(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p->value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace affectlab::nn
