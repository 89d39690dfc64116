#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "trajcast/data.hpp"
#include "trajcast/tensor.hpp"

namespace trajcast {

// Coarse future at the guide interval: points at t_n + dt, t_n + 2*dt, ...
using GuideTrajectory = Trajectory;

struct CvaeConfig {
  int latent_dim = 8;
  std::vector<int> encoder_widths{32};
  std::vector<int> decoder_widths{32, 32};
  std::vector<int> mlp_widths{32};
  // TCN over the ground-truth guide (training target encoder). Kept separate
  // from the past-trajectory TCN: the guide grid runs at dt-second steps,
  // not 1 s, so the kernels see a different time scale.
  std::vector<int> guide_tcn_channels{16, 16};
  int guide_tcn_kernel_size = 3;
  int guide_steps = 12;  // k / dt
  int accel_dims = 3;

  void validate() const;
};

struct LossBreakdown {
  double loss_traj = 0.0;
  double loss_cvae = 0.0;
  double loss_total = 0.0;
};

LossBreakdown make_loss_breakdown(double traj, double cvae);

// Mean over points and coordinates of squared error.
double loss_traj(const Trajectory& guide, const Trajectory& guide_truth);
// KL(N(mu, diag(exp(logvar))) || N(0, I)).
double loss_cvae(std::span<const double> mu, std::span<const double> logvar);

// Double integration of per-step accelerations from the last two past points:
//   position_{j+1} = 2*position_j - position_{j-1} + accel_j * dt^2
// seeded so the zero-acceleration solution continues the p_prev -> p_curr
// velocity on the dt grid. Guide times are p_curr.t + dt, + 2*dt, ...
GuideTrajectory integrate_guide(const Waypoint& p_prev, const Waypoint& p_curr,
                                const std::vector<std::array<double, 3>>& accelerations,
                                double dt);

// CVAE guide generator. Works in the caller's (normalized) coordinate space;
// only waypoint times are in raw seconds. The mu/logvar heads and the final
// acceleration layer start at zero, so an untrained generator proposes the
// constant-velocity guide and a unit-Gaussian latent.
class GuideGenerator {
 public:
  GuideGenerator(const CvaeConfig& config, int condition_dim, double guide_interval_s,
                 uint64_t seed);

  // TCN encoding of a ground-truth guide laid out as [3, guide_steps].
  Tensor encode_guide_truth(const Tensor& guide_cn) const;
  // Q(z | guide, condition) as a diagonal Gaussian.
  std::pair<Tensor, Tensor> cvae_encode(const Tensor& h_guide_truth,
                                        const Tensor& condition) const;
  Tensor cvae_decode(const Tensor& z, const Tensor& condition) const;
  // [guide_steps, 3] acceleration tensor.
  Tensor mlp_accelerations(const Tensor& h_cvae) const;
  // Tensor twin of integrate_guide for the training graph; rows match guide steps.
  Tensor integrate_accelerations(const Waypoint& p_prev, const Waypoint& p_curr,
                                 const Tensor& accelerations) const;

  // Inference: z ~ N(0, I), decode, integrate. No tape is recorded.
  GuideTrajectory generate_guide(const Tensor& condition, const Waypoint& p_prev,
                                 const Waypoint& p_curr, Rng& rng) const;

  const CvaeConfig& config() const { return config_; }
  int condition_dim() const { return condition_dim_; }
  double guide_interval() const { return dt_; }

  std::vector<Tensor> parameters();
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  Tensor run_mlp(const Tensor& input, size_t first_param, size_t n_layers) const;

  CvaeConfig config_;
  int condition_dim_;
  double dt_;
  std::vector<Tensor> params_;
  // Offsets into params_ (weight/bias pairs per layer).
  size_t guide_tcn_at_ = 0, enc_at_ = 0, mu_at_ = 0, logvar_at_ = 0, dec_at_ = 0, mlp_at_ = 0,
         accel_at_ = 0;
  size_t enc_layers_ = 0, dec_layers_ = 0, mlp_layers_ = 0;
  Tensor integrator_;  // [guide_steps, guide_steps] lower-triangular weights
};

}  // namespace trajcast
