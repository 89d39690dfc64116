#pragma once

#include <map>
#include <string>
#include <vector>

#include "trajcast/rng.hpp"

namespace trajcast {

// Positions are kilometers in a local ground frame, time is seconds at one
// frame per second, wind components are meters per second.

struct Waypoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct Trajectory {
  long long agent_id = -1;
  std::vector<Waypoint> points;

  // Enforces nonempty, strictly increasing timestamps, finite coordinates.
  void validate() const;
};

struct WindSample {
  double wind_vx = 0.0;
  double wind_vy = 0.0;
};

struct Frame {
  long long frame_number = 0;
  long long agent_id = 0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double wind_vx = 0.0;
  double wind_vy = 0.0;
};

// Rows sorted by frame_number; row order within a frame follows the source.
using Scene = std::vector<Frame>;

// One supervised window. The ego past covers relative times 0..n-1, the
// future covers n..n+k-1. Neighbor trails that start inside the window are
// zero-padded at the oldest end and flagged absent in the mask.
struct TrainingSample {
  Trajectory past;
  std::vector<Trajectory> neighbors;
  std::vector<std::vector<double>> neighbor_masks;  // per neighbor, aligned with past; 1 = present
  std::vector<WindSample> ego_wind;
  std::vector<std::vector<WindSample>> neighbor_winds;
  Trajectory guide_truth;   // future subsampled every dt, k/dt points
  Trajectory future_truth;  // k points
};

// Scene files are plain text, one row per agent per frame:
//   frame_number agent_id x y z wind_vx wind_vy
// Fields may be separated by spaces, tabs, or commas; '#' starts a comment.
Scene load_scene(const std::string& path);
void write_scene(const std::string& path, const Scene& scene);

std::map<long long, std::vector<Frame>> group_by_frame(const Scene& scene);

std::vector<TrainingSample> window_scene(const Scene& scene, int n, int k, int dt,
                                         int stride = 1);

struct NormStats {
  double pos_mean[3] = {0.0, 0.0, 0.0};
  double pos_scale[3] = {1.0, 1.0, 1.0};
  double wind_mean[2] = {0.0, 0.0};
  double wind_scale[2] = {1.0, 1.0};
};

// Per-axis mean/std over every present waypoint and wind sample in the
// given (training) split. Axes with degenerate spread get scale 1.
NormStats compute_stats(const std::vector<TrainingSample>& samples);

TrainingSample normalize(const TrainingSample& sample, const NormStats& stats);
Trajectory normalize(const Trajectory& traj, const NormStats& stats);
Trajectory denormalize(const Trajectory& traj, const NormStats& stats);

void write_stats(const std::string& path, const NormStats& stats);
NormStats load_stats(const std::string& path);

// Synthetic terminal-area traffic: each aircraft flies a counterclockwise
// (left-turn) rectangular circuit with its own size and phase, a sinusoidal
// altitude profile, Gaussian position noise, and a shared wind field that
// also pushes a slow deterministic drift. Agents enter the pattern staggered
// so windows near the start see partial neighbor trails.
struct SynthParams {
  double duration_s = 600.0;
  double leg_x_km = 4.0;
  double leg_y_km = 2.0;
  double speed_kms = 0.05;
  double base_alt_km = 0.5;
  double alt_amp_km = 0.15;
  double pos_noise_km = 0.01;
  double wind_mean_x = 3.0;
  double wind_mean_y = -1.0;
  double wind_noise = 0.5;
  double wind_drift_km = 0.0005;  // drift per second per unit of mean wind
  double size_jitter = 0.2;
  double entry_gap_s = 20.0;
  // Fillet radius at the circuit corners. Zero keeps sharp 90-degree turns;
  // a positive radius replaces each corner with a constant-rate quarter arc
  // (clamped to half the shorter leg so opposite arcs never overlap).
  double corner_radius_km = 0.0;
};

Scene generate_synthetic_scene(uint64_t seed, int n_agents, const SynthParams& params = {});

}  // namespace trajcast
