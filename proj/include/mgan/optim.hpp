#pragma once

#include <map>
#include <string>

#include "mgan/tensor.hpp"

namespace mgan {

struct Moments {
  Tensor first;
  Tensor second;
};

/// Adam hyper-parameters plus per-parameter moment accumulators keyed by name.
struct OptimizerState {
  double learning_rate = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double epsilon_adam = 1e-8;
  std::map<std::string, Moments> moments;
  std::int64_t step_count = 0;

  void validate() const;
};

/// Bias-corrected Adam update over `params`, then clears their gradients.
/// Throws TrainingError naming the first parameter without a gradient.
void adam_step(const ParamRefs& params, OptimizerState& state);

/// Clears gradients without updating.
void zero_grad(const ParamRefs& params);

}  // namespace mgan
