#include "trajcast/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace trajcast {

AdamState::AdamState(const std::vector<Tensor>& params, double learning_rate, double beta1,
                     double beta2, double epsilon)
    : learning_rate(learning_rate), beta1(beta1), beta2(beta2), epsilon(epsilon) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const Tensor& p : params) {
    first_moment.emplace_back(p.size(), 0.0);
    second_moment.emplace_back(p.size(), 0.0);
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter list does not match optimizer state");
  }
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (size_t p = 0; p < params.size(); ++p) {
    auto grad = params[p].grad();
    if (grad.size() != params[p].size()) {
      throw std::invalid_argument("adam_step: parameter " + std::to_string(p) +
                                  " has no gradient");
    }
    auto values = params[p].mutable_data();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (size_t i = 0; i < grad.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      values[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace trajcast
