#pragma once

#include <cstdint>
#include <vector>

#include "trajcast/data.hpp"
#include "trajcast/tensor.hpp"

namespace trajcast {

struct EncoderConfig {
  std::vector<int> tcn_channels{16, 16};
  int tcn_kernel_size = 3;
  std::vector<int> tcn_dilations{1, 2};
  double dropout_rate = 0.1;
  std::vector<int> cnn_channels{8, 8};
  int cnn_kernel_size = 3;
  // Width of the concatenated encoding; 0 derives it from the channel lists.
  int hidden_dim = 0;

  void validate() const;
  int derived_hidden_dim() const { return tcn_channels.back() + cnn_channels.back(); }
};

// Layout helpers: trajectories become [3,T] tensors (x, y, z rows over time),
// wind sequences become [2,T].
Tensor trajectory_to_tensor(const Trajectory& traj);
Tensor wind_to_tensor(const std::vector<WindSample>& wind);

// Per-agent feature extraction. The past trajectory runs through two dilated
// causal convolution layers (ReLU + dropout after each, last-step readout);
// the wind sequence through a plain two-layer temporal CNN. The encoding is
// their concatenation, trajectory features first.
//
// The mask zeroes padded prefix slots before the convolutions, so a padded
// entry can never influence the encoding; an empty mask means fully present.
class AgentEncoder {
 public:
  AgentEncoder(const EncoderConfig& config, int past_len, uint64_t seed);

  Tensor tcn_encode(const Tensor& past_cn, const std::vector<double>& mask, bool training = false,
                    Rng* dropout_rng = nullptr) const;
  Tensor tcn_encode(const Trajectory& past, const std::vector<double>& mask,
                    bool training = false, Rng* dropout_rng = nullptr) const;
  Tensor cnn_encode_wind(const Tensor& wind_cn, const std::vector<double>& mask,
                         bool training = false, Rng* dropout_rng = nullptr) const;
  Tensor cnn_encode_wind(const std::vector<WindSample>& wind, const std::vector<double>& mask,
                         bool training = false, Rng* dropout_rng = nullptr) const;
  Tensor encode_agent(const Trajectory& past, const std::vector<WindSample>& wind,
                      const std::vector<double>& mask, bool training = false,
                      Rng* dropout_rng = nullptr) const;

  int output_dim() const { return config_.hidden_dim; }
  int past_len() const { return past_len_; }
  const EncoderConfig& config() const { return config_; }

  std::vector<Tensor> parameters();
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  Tensor run_stack(const Tensor& input, const std::vector<double>& mask, size_t first_param,
                   size_t n_layers, const std::vector<int>& dilations, bool training,
                   Rng* dropout_rng, const char* what) const;

  EncoderConfig config_;
  int past_len_;
  // Conv weight/bias pairs: TCN layers first, then wind CNN layers.
  std::vector<Tensor> params_;
  size_t cnn_param_offset_ = 0;
};

}  // namespace trajcast
