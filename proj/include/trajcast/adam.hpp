#pragma once

#include <vector>

#include "trajcast/tensor.hpp"

namespace trajcast {

// Adam with bias correction. Moment buffers are allocated per parameter at
// construction and must keep matching the parameter list passed to each step.
struct AdamState {
  explicit AdamState(const std::vector<Tensor>& params, double learning_rate = 1e-3,
                     double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  long step_count = 0;
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// In-place update from the gradients populated by backward(). A parameter
// with no gradient buffer is an error (backward was never run).
void adam_step(std::vector<Tensor>& params, AdamState& state);

void zero_grad(std::vector<Tensor>& params);

}  // namespace trajcast
