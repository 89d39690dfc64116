#include "trajcast/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "trajcast/errors.hpp"

namespace trajcast {

void Trajectory::validate() const {
  if (points.empty()) throw ShapeError("trajectory is empty");
  for (size_t i = 0; i < points.size(); ++i) {
    const Waypoint& p = points[i];
    if (!std::isfinite(p.t) || !std::isfinite(p.x) || !std::isfinite(p.y) ||
        !std::isfinite(p.z)) {
      throw NumericError("trajectory has a non-finite waypoint");
    }
    if (i > 0 && p.t <= points[i - 1].t) {
      throw ShapeError("trajectory timestamps are not strictly increasing");
    }
  }
}

namespace {

constexpr const char* kFieldNames[7] = {"frame_number", "agent_id", "x",
                                        "y",            "z",        "wind_vx",
                                        "wind_vy"};

long long parse_int_field(const std::string& tok, int field, long lineno) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("bad value '" + tok + "' for " + kFieldNames[field], lineno);
  }
  return v;
}

double parse_double_field(const std::string& tok, int field, long lineno) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw ParseError("bad value '" + tok + "' for " + kFieldNames[field], lineno);
  }
  return v;
}

}  // namespace

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path);

  Scene scene;
  std::set<std::pair<long long, long long>> seen;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    for (char& c : line) {
      if (c == ',' || c == '\t' || c == '\r') c = ' ';
    }
    std::istringstream fields(line);
    std::vector<std::string> tok;
    std::string t;
    while (fields >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 7) {
      throw ParseError("expected 7 fields, got " + std::to_string(tok.size()), lineno);
    }

    Frame f;
    f.frame_number = parse_int_field(tok[0], 0, lineno);
    f.agent_id = parse_int_field(tok[1], 1, lineno);
    f.x = parse_double_field(tok[2], 2, lineno);
    f.y = parse_double_field(tok[3], 3, lineno);
    f.z = parse_double_field(tok[4], 4, lineno);
    f.wind_vx = parse_double_field(tok[5], 5, lineno);
    f.wind_vy = parse_double_field(tok[6], 6, lineno);
    if (f.frame_number < 0) throw ParseError("negative frame_number", lineno);
    if (!seen.insert({f.frame_number, f.agent_id}).second) {
      throw ParseError("duplicate row for frame " + std::to_string(f.frame_number) + ", agent " +
                           std::to_string(f.agent_id),
                       lineno);
    }
    scene.push_back(f);
  }
  if (scene.empty()) throw ParseError("scene file has no data rows: " + path);

  std::stable_sort(scene.begin(), scene.end(),
                   [](const Frame& a, const Frame& b) { return a.frame_number < b.frame_number; });
  return scene;
}

void write_scene(const std::string& path, const Scene& scene) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file: " + path);
  char buf[256];
  for (const Frame& f : scene) {
    std::snprintf(buf, sizeof(buf), "%lld %lld %.17g %.17g %.17g %.17g %.17g\n", f.frame_number,
                  f.agent_id, f.x, f.y, f.z, f.wind_vx, f.wind_vy);
    out << buf;
  }
  if (!out) throw IoError("short write to scene file: " + path);
}

std::map<long long, std::vector<Frame>> group_by_frame(const Scene& scene) {
  std::map<long long, std::vector<Frame>> groups;
  for (const Frame& f : scene) groups[f.frame_number].push_back(f);
  return groups;
}

namespace {

TrainingSample build_sample(const std::map<long long, std::map<long long, Frame>>& by_agent,
                            long long ego, long long start, int n, int k, int dt) {
  TrainingSample sample;
  const auto& ego_rows = by_agent.at(ego);

  sample.past.agent_id = ego;
  sample.ego_wind.reserve(n);
  for (int j = 0; j < n; ++j) {
    const Frame& f = ego_rows.at(start + j);
    sample.past.points.push_back({static_cast<double>(j), f.x, f.y, f.z});
    sample.ego_wind.push_back({f.wind_vx, f.wind_vy});
  }
  sample.future_truth.agent_id = ego;
  for (int j = 0; j < k; ++j) {
    const Frame& f = ego_rows.at(start + n + j);
    sample.future_truth.points.push_back({static_cast<double>(n + j), f.x, f.y, f.z});
  }
  sample.guide_truth.agent_id = ego;
  for (int m = 1; m <= k / dt; ++m) {
    sample.guide_truth.points.push_back(sample.future_truth.points[dt * m - 1]);
  }

  const long long last_past = start + n - 1;
  for (const auto& [other, rows] : by_agent) {
    if (other == ego || !rows.count(last_past)) continue;
    int len = 0;
    while (len < n && rows.count(last_past - len)) ++len;

    Trajectory nb;
    nb.agent_id = other;
    std::vector<double> mask(n, 0.0);
    std::vector<WindSample> winds(n);
    for (int j = 0; j < n; ++j) {
      if (j < n - len) {
        nb.points.push_back({static_cast<double>(j), 0.0, 0.0, 0.0});
      } else {
        const Frame& f = rows.at(start + j);
        nb.points.push_back({static_cast<double>(j), f.x, f.y, f.z});
        mask[j] = 1.0;
        winds[j] = {f.wind_vx, f.wind_vy};
      }
    }
    sample.neighbors.push_back(std::move(nb));
    sample.neighbor_masks.push_back(std::move(mask));
    sample.neighbor_winds.push_back(std::move(winds));
  }

  sample.past.validate();
  sample.future_truth.validate();
  sample.guide_truth.validate();
  return sample;
}

}  // namespace

std::vector<TrainingSample> window_scene(const Scene& scene, int n, int k, int dt, int stride) {
  if (n < 2) throw ConfigError("window_scene: past length must be at least 2");
  if (k < 1 || dt < 1 || k % dt != 0) {
    throw ConfigError("window_scene: guide interval " + std::to_string(dt) +
                      " must divide horizon " + std::to_string(k));
  }
  if (stride < 1) throw ConfigError("window_scene: stride must be at least 1");

  std::map<long long, std::map<long long, Frame>> by_agent;
  for (const Frame& f : scene) by_agent[f.agent_id][f.frame_number] = f;

  std::vector<TrainingSample> samples;
  const long long total = n + k;
  for (const auto& [ego, rows] : by_agent) {
    // Maximal runs of consecutive frames; windows never span a gap.
    auto it = rows.begin();
    while (it != rows.end()) {
      long long run_start = it->first;
      long long next = run_start;
      while (it != rows.end() && it->first == next) {
        ++it;
        ++next;
      }
      const long long run_len = next - run_start;
      for (long long s = run_start; s + total <= run_start + run_len; s += stride) {
        samples.push_back(build_sample(by_agent, ego, s, n, k, dt));
      }
    }
  }
  return samples;
}

namespace {

struct Accumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  long long count = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  double scale() const {
    if (!count) return 1.0;
    const double m = mean();
    const double var = std::max(0.0, sum_sq / static_cast<double>(count) - m * m);
    const double sd = std::sqrt(var);
    return sd < 1e-12 ? 1.0 : sd;
  }
};

}  // namespace

NormStats compute_stats(const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw ConfigError("compute_stats: no samples");
  Accumulator pos[3], wind[2];
  auto add_point = [&](const Waypoint& p) {
    pos[0].add(p.x);
    pos[1].add(p.y);
    pos[2].add(p.z);
  };
  for (const TrainingSample& s : samples) {
    for (const Waypoint& p : s.past.points) add_point(p);
    for (const Waypoint& p : s.future_truth.points) add_point(p);
    for (const WindSample& w : s.ego_wind) {
      wind[0].add(w.wind_vx);
      wind[1].add(w.wind_vy);
    }
    for (size_t nb = 0; nb < s.neighbors.size(); ++nb) {
      for (size_t j = 0; j < s.neighbors[nb].points.size(); ++j) {
        if (s.neighbor_masks[nb][j] == 0.0) continue;  // padding carries no information
        add_point(s.neighbors[nb].points[j]);
        wind[0].add(s.neighbor_winds[nb][j].wind_vx);
        wind[1].add(s.neighbor_winds[nb][j].wind_vy);
      }
    }
  }
  NormStats stats;
  for (int a = 0; a < 3; ++a) {
    stats.pos_mean[a] = pos[a].mean();
    stats.pos_scale[a] = pos[a].scale();
  }
  for (int a = 0; a < 2; ++a) {
    stats.wind_mean[a] = wind[a].mean();
    stats.wind_scale[a] = wind[a].scale();
  }
  return stats;
}

namespace {

void check_scales(const NormStats& stats) {
  for (double s : stats.pos_scale) {
    if (s == 0.0 || !std::isfinite(s)) throw ConfigError("normalization scale is zero");
  }
  for (double s : stats.wind_scale) {
    if (s == 0.0 || !std::isfinite(s)) throw ConfigError("normalization scale is zero");
  }
}

Waypoint normalize_point(const Waypoint& p, const NormStats& st) {
  return {p.t, (p.x - st.pos_mean[0]) / st.pos_scale[0], (p.y - st.pos_mean[1]) / st.pos_scale[1],
          (p.z - st.pos_mean[2]) / st.pos_scale[2]};
}

}  // namespace

Trajectory normalize(const Trajectory& traj, const NormStats& stats) {
  check_scales(stats);
  Trajectory out;
  out.agent_id = traj.agent_id;
  out.points.reserve(traj.points.size());
  for (const Waypoint& p : traj.points) out.points.push_back(normalize_point(p, stats));
  return out;
}

Trajectory denormalize(const Trajectory& traj, const NormStats& stats) {
  check_scales(stats);
  Trajectory out;
  out.agent_id = traj.agent_id;
  out.points.reserve(traj.points.size());
  for (const Waypoint& p : traj.points) {
    out.points.push_back({p.t, p.x * stats.pos_scale[0] + stats.pos_mean[0],
                          p.y * stats.pos_scale[1] + stats.pos_mean[1],
                          p.z * stats.pos_scale[2] + stats.pos_mean[2]});
  }
  return out;
}

TrainingSample normalize(const TrainingSample& sample, const NormStats& stats) {
  check_scales(stats);
  TrainingSample out = sample;
  out.past = normalize(sample.past, stats);
  out.future_truth = normalize(sample.future_truth, stats);
  out.guide_truth = normalize(sample.guide_truth, stats);
  for (size_t i = 0; i < out.neighbors.size(); ++i) {
    out.neighbors[i] = normalize(sample.neighbors[i], stats);
  }
  auto norm_wind = [&](WindSample w) {
    return WindSample{(w.wind_vx - stats.wind_mean[0]) / stats.wind_scale[0],
                      (w.wind_vy - stats.wind_mean[1]) / stats.wind_scale[1]};
  };
  for (WindSample& w : out.ego_wind) w = norm_wind(w);
  for (auto& seq : out.neighbor_winds) {
    for (WindSample& w : seq) w = norm_wind(w);
  }
  return out;
}

void write_stats(const std::string& path, const NormStats& stats) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write stats file: " + path);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "pos_mean %.17g %.17g %.17g\n"
                "pos_scale %.17g %.17g %.17g\n"
                "wind_mean %.17g %.17g\n"
                "wind_scale %.17g %.17g\n",
                stats.pos_mean[0], stats.pos_mean[1], stats.pos_mean[2], stats.pos_scale[0],
                stats.pos_scale[1], stats.pos_scale[2], stats.wind_mean[0], stats.wind_mean[1],
                stats.wind_scale[0], stats.wind_scale[1]);
  out << buf;
  if (!out) throw IoError("short write to stats file: " + path);
}

NormStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stats file: " + path);
  NormStats stats;
  bool have[4] = {false, false, false, false};
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string key;
    if (!(fields >> key)) continue;
    double* dst = nullptr;
    int count = 0;
    int slot = -1;
    if (key == "pos_mean") {
      dst = stats.pos_mean, count = 3, slot = 0;
    } else if (key == "pos_scale") {
      dst = stats.pos_scale, count = 3, slot = 1;
    } else if (key == "wind_mean") {
      dst = stats.wind_mean, count = 2, slot = 2;
    } else if (key == "wind_scale") {
      dst = stats.wind_scale, count = 2, slot = 3;
    } else {
      throw ParseError("unknown stats key '" + key + "'", lineno);
    }
    for (int i = 0; i < count; ++i) {
      if (!(fields >> dst[i]) || !std::isfinite(dst[i])) {
        throw ParseError("bad value for stats key '" + key + "'", lineno);
      }
    }
    have[slot] = true;
  }
  for (bool h : have) {
    if (!h) throw ParseError("stats file is missing keys: " + path);
  }
  return stats;
}

namespace {

// Counterclockwise walk around a rectangle with corners (0,0) and (lx,ly)
// whose corners are filleted with quarter arcs of radius r (r = 0 gives the
// sharp rectangle); s is arc length from the start of the bottom leg.
void circuit_point(double s, double lx, double ly, double r, double* x, double* y) {
  if (r <= 0.0) {
    const double perim = 2.0 * (lx + ly);
    s = std::fmod(s, perim);
    if (s < 0) s += perim;
    if (s < lx) {
      *x = s, *y = 0.0;
    } else if (s < lx + ly) {
      *x = lx, *y = s - lx;
    } else if (s < 2.0 * lx + ly) {
      *x = lx - (s - lx - ly), *y = ly;
    } else {
      *x = 0.0, *y = ly - (s - 2.0 * lx - ly);
    }
    return;
  }
  const double half_pi = 1.57079632679489661923;
  const double sx = lx - 2.0 * r;  // straight length of the x-parallel legs
  const double sy = ly - 2.0 * r;
  const double q = half_pi * r;  // arc length of one quarter turn
  const double perim = 2.0 * (sx + sy) + 4.0 * q;
  s = std::fmod(s, perim);
  if (s < 0) s += perim;
  if (s < sx) {  // bottom leg, heading east
    *x = r + s, *y = 0.0;
    return;
  }
  s -= sx;
  if (s < q) {  // south-east corner
    const double phi = -half_pi + s / r;
    *x = (lx - r) + r * std::cos(phi), *y = r + r * std::sin(phi);
    return;
  }
  s -= q;
  if (s < sy) {  // right leg, heading north
    *x = lx, *y = r + s;
    return;
  }
  s -= sy;
  if (s < q) {  // north-east corner
    const double phi = s / r;
    *x = (lx - r) + r * std::cos(phi), *y = (ly - r) + r * std::sin(phi);
    return;
  }
  s -= q;
  if (s < sx) {  // top leg, heading west
    *x = (lx - r) - s, *y = ly;
    return;
  }
  s -= sx;
  if (s < q) {  // north-west corner
    const double phi = half_pi + s / r;
    *x = r + r * std::cos(phi), *y = (ly - r) + r * std::sin(phi);
    return;
  }
  s -= q;
  if (s < sy) {  // left leg, heading south
    *x = 0.0, *y = (ly - r) - s;
    return;
  }
  s -= sy;
  const double phi = 2.0 * half_pi + s / r;  // south-west corner
  *x = r + r * std::cos(phi), *y = r + r * std::sin(phi);
}

}  // namespace

Scene generate_synthetic_scene(uint64_t seed, int n_agents, const SynthParams& params) {
  if (n_agents < 1) throw ConfigError("generate_synthetic_scene: need at least one agent");
  if (params.duration_s < 1.0 || params.speed_kms <= 0.0 || params.leg_x_km <= 0.0 ||
      params.leg_y_km <= 0.0 || params.corner_radius_km < 0.0) {
    throw ConfigError("generate_synthetic_scene: invalid pattern parameters");
  }

  const long long duration = std::llround(params.duration_s);
  Rng root(seed);

  // One wind sample per frame, shared by every aircraft in that frame.
  Rng wind_rng = root.split(0);
  std::vector<WindSample> wind(duration);
  for (long long t = 0; t < duration; ++t) {
    wind[t] = {params.wind_mean_x + params.wind_noise * wind_rng.normal(),
               params.wind_mean_y + params.wind_noise * wind_rng.normal()};
  }

  Scene scene;
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (int a = 0; a < n_agents; ++a) {
    Rng agent_rng = root.split(1 + static_cast<uint64_t>(a));
    const double lx = params.leg_x_km * (1.0 + params.size_jitter * agent_rng.uniform(-1.0, 1.0));
    const double ly = params.leg_y_km * (1.0 + params.size_jitter * agent_rng.uniform(-1.0, 1.0));
    const double radius = std::min(params.corner_radius_km, 0.5 * std::min(lx, ly));
    const double perim =
        2.0 * (lx + ly) + (radius > 0.0 ? (3.14159265358979323846 - 4.0) * 2.0 * radius : 0.0);
    const double s0 = agent_rng.uniform() * perim;
    const double alt_phase = agent_rng.uniform() * two_pi;
    const long long entry =
        std::min<long long>(std::llround(a * params.entry_gap_s), duration - 1);

    for (long long t = entry; t < duration; ++t) {
      const double s = s0 + params.speed_kms * static_cast<double>(t - entry);
      double x = 0.0, y = 0.0;
      circuit_point(s, lx, ly, radius, &x, &y);
      // Deterministic drift from the mean wind; noise stays separate so a
      // noise-free run keeps the exact left-turn geometry.
      const double drift = params.wind_drift_km * static_cast<double>(t);
      x += drift * params.wind_mean_x + params.pos_noise_km * agent_rng.normal();
      y += drift * params.wind_mean_y + params.pos_noise_km * agent_rng.normal();
      const double z = params.base_alt_km + params.alt_amp_km * std::sin(two_pi * s / perim + alt_phase) +
                       params.pos_noise_km * agent_rng.normal();
      scene.push_back({t, a, x, y, z, wind[t].wind_vx, wind[t].wind_vy});
    }
  }

  std::stable_sort(scene.begin(), scene.end(),
                   [](const Frame& a, const Frame& b) { return a.frame_number < b.frame_number; });
  return scene;
}

}  // namespace trajcast
