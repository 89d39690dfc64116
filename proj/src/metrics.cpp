#include "trajcast/metrics.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "trajcast/errors.hpp"

namespace trajcast {

namespace {

std::vector<double> step_displacements(const Trajectory& pred,
                                       const Trajectory& truth) {
  if (pred.points.empty() || truth.points.empty()) {
    throw ShapeError("displacement metrics need nonempty trajectories");
  }
  if (pred.points.size() != truth.points.size()) {
    throw ShapeError("prediction has " + std::to_string(pred.points.size()) +
                     " points, truth has " + std::to_string(truth.points.size()));
  }
  std::vector<double> out(pred.points.size());
  for (size_t i = 0; i < pred.points.size(); ++i) {
    const Waypoint& a = pred.points[i];
    const Waypoint& b = truth.points[i];
    out[i] = std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                       (a.z - b.z) * (a.z - b.z));
  }
  return out;
}

}  // namespace

double ade(const Trajectory& pred, const Trajectory& truth) {
  const std::vector<double> d = step_displacements(pred, truth);
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum / static_cast<double>(d.size());
}

double fde(const Trajectory& pred, const Trajectory& truth) {
  return step_displacements(pred, truth).back();
}

EvalRecord eval_record(const Trajectory& pred, const Trajectory& truth) {
  EvalRecord rec;
  rec.per_step_ade = step_displacements(pred, truth);
  double sum = 0.0;
  for (double v : rec.per_step_ade) sum += v;
  rec.ade = sum / static_cast<double>(rec.per_step_ade.size());
  rec.fde = rec.per_step_ade.back();
  return rec;
}

EvalRecord best_of_n(const std::vector<Trajectory>& candidates,
                     const Trajectory& truth, BestOfMode mode) {
  if (candidates.empty()) {
    throw ShapeError("best_of_n: no candidates");
  }
  EvalRecord best = eval_record(candidates[0], truth);
  for (size_t i = 1; i < candidates.size(); ++i) {
    const EvalRecord rec = eval_record(candidates[i], truth);
    if (rec.ade < best.ade) {
      const double kept_fde = best.fde;
      best = rec;
      if (mode == BestOfMode::independent) {
        best.fde = std::min(rec.fde, kept_fde);
      }
    } else if (mode == BestOfMode::independent && rec.fde < best.fde) {
      best.fde = rec.fde;
    }
  }
  return best;
}

TimingStats measure_generation_time(const std::function<void()>& predict_fn, int k,
                                    int runs) {
  if (!predict_fn) throw ConfigError("measure_generation_time: missing predictor");
  if (k < 1) throw ConfigError("measure_generation_time: k must be >= 1");
  if (runs < 1) throw ConfigError("measure_generation_time: runs must be >= 1");

  predict_fn();  // warmup, untimed

  TimingStats stats;
  stats.runs = runs;
  double total = 0.0;
  for (int r = 0; r < runs; ++r) {
    const auto start = std::chrono::steady_clock::now();
    predict_fn();
    const auto stop = std::chrono::steady_clock::now();
    const double per_step =
        std::chrono::duration<double>(stop - start).count() / k;
    total += per_step;
    if (r == 0 || per_step < stats.min_per_step) stats.min_per_step = per_step;
    if (r == 0 || per_step > stats.max_per_step) stats.max_per_step = per_step;
  }
  stats.mean_per_step = total / runs;
  return stats;
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("aggregate: no values");
  Aggregate agg;
  for (double v : values) agg.mean += v;
  agg.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return agg;
}

}  // namespace trajcast
