#include "trajcast/encoder.hpp"

#include <cmath>
#include <string>

#include "trajcast/errors.hpp"

namespace trajcast {

void EncoderConfig::validate() const {
  if (tcn_channels.size() != 2 || tcn_dilations.size() != 2) {
    throw ConfigError("encoder: the trajectory TCN has exactly two layers");
  }
  if (cnn_channels.empty()) throw ConfigError("encoder: wind CNN needs at least one layer");
  for (int c : tcn_channels) {
    if (c < 1) throw ConfigError("encoder: channel counts must be positive");
  }
  for (int c : cnn_channels) {
    if (c < 1) throw ConfigError("encoder: channel counts must be positive");
  }
  for (int d : tcn_dilations) {
    if (d < 1) throw ConfigError("encoder: dilations must be positive");
  }
  if (tcn_kernel_size < 1 || cnn_kernel_size < 1) {
    throw ConfigError("encoder: kernel sizes must be positive");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("encoder: dropout rate must be in [0,1)");
  }
  if (hidden_dim != 0 && hidden_dim != derived_hidden_dim()) {
    throw ConfigError("encoder: hidden_dim " + std::to_string(hidden_dim) +
                      " does not match channel lists (" + std::to_string(derived_hidden_dim()) +
                      ")");
  }
}

Tensor trajectory_to_tensor(const Trajectory& traj) {
  const int t_len = static_cast<int>(traj.points.size());
  std::vector<double> data(static_cast<size_t>(3) * t_len);
  for (int j = 0; j < t_len; ++j) {
    data[0 * t_len + j] = traj.points[j].x;
    data[1 * t_len + j] = traj.points[j].y;
    data[2 * t_len + j] = traj.points[j].z;
  }
  return Tensor::from_data({3, t_len}, std::move(data));
}

Tensor wind_to_tensor(const std::vector<WindSample>& wind) {
  const int t_len = static_cast<int>(wind.size());
  std::vector<double> data(static_cast<size_t>(2) * t_len);
  for (int j = 0; j < t_len; ++j) {
    data[0 * t_len + j] = wind[j].wind_vx;
    data[1 * t_len + j] = wind[j].wind_vy;
  }
  return Tensor::from_data({2, t_len}, std::move(data));
}

namespace {

Tensor xavier_conv(int out_ch, int in_ch, int k, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in_ch * k + out_ch * k));
  std::vector<double> w(static_cast<size_t>(out_ch) * in_ch * k);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Tensor::from_data({out_ch, in_ch, k}, std::move(w), true);
}

Tensor apply_mask(const Tensor& input, const std::vector<double>& mask, const char* what) {
  if (mask.empty()) return input;
  const int channels = input.shape()[0];
  const int t_len = input.shape()[1];
  if (static_cast<int>(mask.size()) != t_len) {
    throw ShapeError(std::string(what) + ": mask length " + std::to_string(mask.size()) +
                     " for " + std::to_string(t_len) + " steps");
  }
  std::vector<double> m(static_cast<size_t>(channels) * t_len);
  for (int c = 0; c < channels; ++c) {
    for (int j = 0; j < t_len; ++j) m[c * t_len + j] = mask[j];
  }
  return mul(input, Tensor::from_data(input.shape(), std::move(m)));
}

}  // namespace

AgentEncoder::AgentEncoder(const EncoderConfig& config, int past_len, uint64_t seed)
    : config_(config), past_len_(past_len) {
  config_.validate();
  if (past_len_ < 1) throw ConfigError("encoder: past length must be positive");
  if (config_.hidden_dim == 0) config_.hidden_dim = config_.derived_hidden_dim();

  Rng rng(seed);
  int in_ch = 3;
  for (int c : config_.tcn_channels) {
    params_.push_back(xavier_conv(c, in_ch, config_.tcn_kernel_size, rng));
    params_.push_back(Tensor::zeros({c}, true));
    in_ch = c;
  }
  cnn_param_offset_ = params_.size();
  in_ch = 2;
  for (int c : config_.cnn_channels) {
    params_.push_back(xavier_conv(c, in_ch, config_.cnn_kernel_size, rng));
    params_.push_back(Tensor::zeros({c}, true));
    in_ch = c;
  }
}

Tensor AgentEncoder::run_stack(const Tensor& input, const std::vector<double>& mask,
                               size_t first_param, size_t n_layers,
                               const std::vector<int>& dilations, bool training, Rng* dropout_rng,
                               const char* what) const {
  if (input.rank() != 2 || input.shape()[1] != past_len_) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(past_len_) +
                     " time steps, got " + shape_str(input.shape()));
  }
  if (training && config_.dropout_rate > 0.0 && dropout_rng == nullptr) {
    throw ConfigError(std::string(what) + ": training mode needs a dropout rng");
  }
  Tensor h = apply_mask(input, mask, what);
  for (size_t layer = 0; layer < n_layers; ++layer) {
    const Tensor& w = params_[first_param + 2 * layer];
    const Tensor& b = params_[first_param + 2 * layer + 1];
    h = relu(dilated_causal_conv1d(h, w, b, dilations[layer]));
    if (training && config_.dropout_rate > 0.0) {
      h = dropout(h, config_.dropout_rate, true, *dropout_rng);
    }
  }
  return last_step(h);
}

Tensor AgentEncoder::tcn_encode(const Tensor& past_cn, const std::vector<double>& mask,
                                bool training, Rng* dropout_rng) const {
  if (past_cn.rank() != 2 || past_cn.shape()[0] != 3) {
    throw ShapeError("tcn_encode: expected [3,T] input, got " + shape_str(past_cn.shape()));
  }
  return run_stack(past_cn, mask, 0, config_.tcn_channels.size(), config_.tcn_dilations, training,
                   dropout_rng, "tcn_encode");
}

Tensor AgentEncoder::tcn_encode(const Trajectory& past, const std::vector<double>& mask,
                                bool training, Rng* dropout_rng) const {
  if (static_cast<int>(past.points.size()) != past_len_) {
    throw ShapeError("tcn_encode: expected " + std::to_string(past_len_) + " points, got " +
                     std::to_string(past.points.size()));
  }
  return tcn_encode(trajectory_to_tensor(past), mask, training, dropout_rng);
}

Tensor AgentEncoder::cnn_encode_wind(const Tensor& wind_cn, const std::vector<double>& mask,
                                     bool training, Rng* dropout_rng) const {
  if (wind_cn.rank() != 2 || wind_cn.shape()[0] != 2) {
    throw ShapeError("cnn_encode_wind: expected [2,T] input, got " + shape_str(wind_cn.shape()));
  }
  const std::vector<int> dilations(config_.cnn_channels.size(), 1);
  return run_stack(wind_cn, mask, cnn_param_offset_, config_.cnn_channels.size(), dilations,
                   training, dropout_rng, "cnn_encode_wind");
}

Tensor AgentEncoder::cnn_encode_wind(const std::vector<WindSample>& wind,
                                     const std::vector<double>& mask, bool training,
                                     Rng* dropout_rng) const {
  if (static_cast<int>(wind.size()) != past_len_) {
    throw ShapeError("cnn_encode_wind: expected " + std::to_string(past_len_) +
                     " samples, got " + std::to_string(wind.size()));
  }
  return cnn_encode_wind(wind_to_tensor(wind), mask, training, dropout_rng);
}

Tensor AgentEncoder::encode_agent(const Trajectory& past, const std::vector<WindSample>& wind,
                                  const std::vector<double>& mask, bool training,
                                  Rng* dropout_rng) const {
  Tensor h_tcn = tcn_encode(past, mask, training, dropout_rng);
  Tensor h_cnn = cnn_encode_wind(wind, mask, training, dropout_rng);
  return concat({h_tcn, h_cnn});
}

std::vector<Tensor> AgentEncoder::parameters() { return params_; }

}  // namespace trajcast
