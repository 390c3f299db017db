#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "affectlab/tensor.hpp"

namespace affectlab::nn {

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // First and second moments keyed by parameter name.
  std::map<std::string, Tensor> m, v;
};

// One bias-corrected Adam update over the trainable parameters, using their
// accumulated grads. Frozen parameters are left untouched.
void adam_step(const std::vector<Parameter*>& params, AdamState& state);

}  // namespace affectlab::nn
