#pragma once

#include "affectlab/tensor.hpp"

namespace affectlab::nn {

// Where the CCC moments come from.
enum class CccStats {
  joint,         // flatten all n*l values per dimension
  per_sequence,  // CCC per sequence and dimension, then averaged
};

struct LossResult {
  double loss = 0.0;
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
  Tensor grad;  // d loss / d pred, shape [n,l,2]
};

// loss = 1 - (CCC_valence + CCC_arousal) / 2 with the same epsilon floor as
// metrics::ccc; grad is the exact derivative.
LossResult loss_1mccc(const Tensor& pred, const Tensor& target, CccStats stats = CccStats::joint);

}  // namespace affectlab::nn
