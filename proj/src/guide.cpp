#include "trajcast/guide.hpp"

#include <cmath>
#include <string>

#include "trajcast/errors.hpp"

namespace trajcast {

void CvaeConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("cvae: latent_dim must be positive");
  if (guide_steps < 1) throw ConfigError("cvae: guide_steps must be positive");
  if (accel_dims != 3) throw ConfigError("cvae: accelerations are 3-dimensional");
  if (guide_tcn_channels.size() != 2) {
    throw ConfigError("cvae: guide TCN has exactly two layers");
  }
  for (int c : guide_tcn_channels) {
    if (c < 1) throw ConfigError("cvae: channel counts must be positive");
  }
  if (guide_tcn_kernel_size < 1) throw ConfigError("cvae: kernel size must be positive");
  auto check_widths = [](const std::vector<int>& widths, const char* what) {
    for (int w : widths) {
      if (w < 1) throw ConfigError(std::string("cvae: ") + what + " widths must be positive");
    }
  };
  check_widths(encoder_widths, "encoder");
  check_widths(decoder_widths, "decoder");
  check_widths(mlp_widths, "mlp");
}

LossBreakdown make_loss_breakdown(double traj, double cvae) {
  LossBreakdown out;
  out.loss_traj = traj;
  out.loss_cvae = cvae;
  out.loss_total = traj + cvae;
  return out;
}

double loss_traj(const Trajectory& guide, const Trajectory& guide_truth) {
  if (guide.points.size() != guide_truth.points.size() || guide.points.empty()) {
    throw ShapeError("loss_traj: point counts differ (" + std::to_string(guide.points.size()) +
                     " vs " + std::to_string(guide_truth.points.size()) + ")");
  }
  double s = 0.0;
  for (size_t j = 0; j < guide.points.size(); ++j) {
    const double dx = guide.points[j].x - guide_truth.points[j].x;
    const double dy = guide.points[j].y - guide_truth.points[j].y;
    const double dz = guide.points[j].z - guide_truth.points[j].z;
    s += dx * dx + dy * dy + dz * dz;
  }
  return s / (3.0 * static_cast<double>(guide.points.size()));
}

double loss_cvae(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("loss_cvae: mu/logvar sizes differ");
  double s = 0.0;
  for (size_t i = 0; i < mu.size(); ++i) {
    s += std::exp(logvar[i]) + mu[i] * mu[i] - 1.0 - logvar[i];
  }
  return 0.5 * s;
}

GuideTrajectory integrate_guide(const Waypoint& p_prev, const Waypoint& p_curr,
                                const std::vector<std::array<double, 3>>& accelerations,
                                double dt) {
  if (dt <= 0.0) throw ConfigError("integrate_guide: dt must be positive");
  if (accelerations.empty()) throw ShapeError("integrate_guide: no acceleration steps");

  // Seed the recurrence so zero acceleration continues the p_prev -> p_curr
  // velocity; past points are 1 s apart, the guide grid dt s, hence the scale.
  double prev[3] = {p_curr.x - (p_curr.x - p_prev.x) * dt, p_curr.y - (p_curr.y - p_prev.y) * dt,
                    p_curr.z - (p_curr.z - p_prev.z) * dt};
  double curr[3] = {p_curr.x, p_curr.y, p_curr.z};

  GuideTrajectory guide;
  guide.agent_id = -1;
  for (size_t j = 0; j < accelerations.size(); ++j) {
    double next[3];
    for (int a = 0; a < 3; ++a) {
      next[a] = 2.0 * curr[a] - prev[a] + accelerations[j][a] * dt * dt;
      prev[a] = curr[a];
      curr[a] = next[a];
    }
    guide.points.push_back(
        {p_curr.t + static_cast<double>(j + 1) * dt, next[0], next[1], next[2]});
  }
  return guide;
}

namespace {

Tensor xavier_linear(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::vector<double> w(static_cast<size_t>(rows) * cols);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Tensor::from_data({rows, cols}, std::move(w), true);
}

Tensor xavier_conv(int out_ch, int in_ch, int k, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in_ch * k + out_ch * k));
  std::vector<double> w(static_cast<size_t>(out_ch) * in_ch * k);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Tensor::from_data({out_ch, in_ch, k}, std::move(w), true);
}

}  // namespace

GuideGenerator::GuideGenerator(const CvaeConfig& config, int condition_dim,
                               double guide_interval_s, uint64_t seed)
    : config_(config), condition_dim_(condition_dim), dt_(guide_interval_s) {
  config_.validate();
  if (condition_dim_ < 1) throw ConfigError("guide generator: condition width must be positive");
  if (dt_ <= 0.0) throw ConfigError("guide generator: guide interval must be positive");

  Rng rng(seed);
  auto push_linear_stack = [&](int in_dim, const std::vector<int>& widths) {
    for (int w : widths) {
      params_.push_back(xavier_linear(w, in_dim, rng));
      params_.push_back(Tensor::zeros({w}, true));
      in_dim = w;
    }
    return in_dim;
  };

  guide_tcn_at_ = params_.size();
  int ch = 3;
  for (int c : config_.guide_tcn_channels) {
    params_.push_back(xavier_conv(c, ch, config_.guide_tcn_kernel_size, rng));
    params_.push_back(Tensor::zeros({c}, true));
    ch = c;
  }

  enc_at_ = params_.size();
  enc_layers_ = config_.encoder_widths.size();
  const int enc_out =
      push_linear_stack(config_.guide_tcn_channels.back() + condition_dim_, config_.encoder_widths);

  // Zero-initialized heads: the untrained posterior is exactly N(0, I).
  mu_at_ = params_.size();
  params_.push_back(Tensor::zeros({config_.latent_dim, enc_out}, true));
  params_.push_back(Tensor::zeros({config_.latent_dim}, true));
  logvar_at_ = params_.size();
  params_.push_back(Tensor::zeros({config_.latent_dim, enc_out}, true));
  params_.push_back(Tensor::zeros({config_.latent_dim}, true));

  dec_at_ = params_.size();
  dec_layers_ = config_.decoder_widths.size();
  const int dec_out =
      push_linear_stack(config_.latent_dim + condition_dim_, config_.decoder_widths);

  mlp_at_ = params_.size();
  mlp_layers_ = config_.mlp_widths.size();
  const int mlp_out = push_linear_stack(dec_out, config_.mlp_widths);

  // Zero-initialized acceleration head: the untrained guide is the
  // constant-velocity extrapolation.
  accel_at_ = params_.size();
  params_.push_back(Tensor::zeros({config_.guide_steps * 3, mlp_out}, true));
  params_.push_back(Tensor::zeros({config_.guide_steps * 3}, true));

  // Closed form of the double integration: row j weights acceleration i by
  // (j - i + 1) for i <= j, exactly the unrolled recurrence.
  const int m = config_.guide_steps;
  std::vector<double> weights(static_cast<size_t>(m) * m, 0.0);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i <= j; ++i) weights[j * m + i] = static_cast<double>(j - i + 1);
  }
  integrator_ = Tensor::from_data({m, m}, std::move(weights));
}

Tensor GuideGenerator::run_mlp(const Tensor& input, size_t first_param, size_t n_layers) const {
  Tensor h = input;
  for (size_t layer = 0; layer < n_layers; ++layer) {
    h = relu(linear(h, params_[first_param + 2 * layer], params_[first_param + 2 * layer + 1]));
  }
  return h;
}

Tensor GuideGenerator::encode_guide_truth(const Tensor& guide_cn) const {
  if (guide_cn.rank() != 2 || guide_cn.shape()[0] != 3 ||
      guide_cn.shape()[1] != config_.guide_steps) {
    throw ShapeError("encode_guide_truth: expected [3," + std::to_string(config_.guide_steps) +
                     "], got " + shape_str(guide_cn.shape()));
  }
  Tensor h = guide_cn;
  const int dilations[2] = {1, 2};
  for (int layer = 0; layer < 2; ++layer) {
    h = relu(dilated_causal_conv1d(h, params_[guide_tcn_at_ + 2 * layer],
                                   params_[guide_tcn_at_ + 2 * layer + 1], dilations[layer]));
  }
  return last_step(h);
}

std::pair<Tensor, Tensor> GuideGenerator::cvae_encode(const Tensor& h_guide_truth,
                                                      const Tensor& condition) const {
  if (condition.rank() != 1 || condition.shape()[0] != condition_dim_) {
    throw ShapeError("cvae_encode: condition width " + shape_str(condition.shape()) +
                     ", expected [" + std::to_string(condition_dim_) + "]");
  }
  Tensor h = run_mlp(concat({h_guide_truth, condition}), enc_at_, enc_layers_);
  Tensor mu = linear(h, params_[mu_at_], params_[mu_at_ + 1]);
  Tensor logvar = linear(h, params_[logvar_at_], params_[logvar_at_ + 1]);
  return {std::move(mu), std::move(logvar)};
}

Tensor GuideGenerator::cvae_decode(const Tensor& z, const Tensor& condition) const {
  if (z.rank() != 1 || z.shape()[0] != config_.latent_dim) {
    throw ShapeError("cvae_decode: latent width " + shape_str(z.shape()) + ", expected [" +
                     std::to_string(config_.latent_dim) + "]");
  }
  if (condition.rank() != 1 || condition.shape()[0] != condition_dim_) {
    throw ShapeError("cvae_decode: condition width " + shape_str(condition.shape()) +
                     ", expected [" + std::to_string(condition_dim_) + "]");
  }
  return run_mlp(concat({z, condition}), dec_at_, dec_layers_);
}

Tensor GuideGenerator::mlp_accelerations(const Tensor& h_cvae) const {
  Tensor h = run_mlp(h_cvae, mlp_at_, mlp_layers_);
  Tensor flat = linear(h, params_[accel_at_], params_[accel_at_ + 1]);
  return reshape(flat, {config_.guide_steps, 3});
}

Tensor GuideGenerator::integrate_accelerations(const Waypoint& p_prev, const Waypoint& p_curr,
                                               const Tensor& accelerations) const {
  if (accelerations.rank() != 2 || accelerations.shape()[0] != config_.guide_steps ||
      accelerations.shape()[1] != 3) {
    throw ShapeError("integrate_accelerations: expected [" + std::to_string(config_.guide_steps) +
                     ",3], got " + shape_str(accelerations.shape()));
  }
  const int m = config_.guide_steps;
  std::vector<double> base(static_cast<size_t>(m) * 3);
  const double v[3] = {(p_curr.x - p_prev.x) * dt_, (p_curr.y - p_prev.y) * dt_,
                       (p_curr.z - p_prev.z) * dt_};
  const double c[3] = {p_curr.x, p_curr.y, p_curr.z};
  for (int j = 0; j < m; ++j) {
    for (int a = 0; a < 3; ++a) base[j * 3 + a] = c[a] + static_cast<double>(j + 1) * v[a];
  }
  Tensor base_t = Tensor::from_data({m, 3}, std::move(base));
  return add(base_t, scale(matmul(integrator_, accelerations), dt_ * dt_));
}

GuideTrajectory GuideGenerator::generate_guide(const Tensor& condition, const Waypoint& p_prev,
                                               const Waypoint& p_curr, Rng& rng) const {
  NoGradGuard no_grad;
  std::vector<double> z(static_cast<size_t>(config_.latent_dim));
  for (double& v : z) v = rng.normal();
  Tensor h_cvae = cvae_decode(Tensor::from_data({config_.latent_dim}, std::move(z)), condition);
  Tensor accel = mlp_accelerations(h_cvae);

  std::vector<std::array<double, 3>> steps(static_cast<size_t>(config_.guide_steps));
  for (int j = 0; j < config_.guide_steps; ++j) {
    steps[j] = {accel.data()[j * 3 + 0], accel.data()[j * 3 + 1], accel.data()[j * 3 + 2]};
  }
  return integrate_guide(p_prev, p_curr, steps, dt_);
}

std::vector<Tensor> GuideGenerator::parameters() { return params_; }

}  // namespace trajcast
