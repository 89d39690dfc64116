#pragma once

#include <functional>
#include <vector>

#include "trajcast/data.hpp"

namespace trajcast {

// Displacement metrics for one evaluation case. Positions are compared by
// index; both trajectories must cover the same steps. For multi-candidate
// records, per_step_ade belongs to the candidate with the best ADE.
struct EvalRecord {
  double ade = 0.0;
  double fde = 0.0;
  std::vector<double> per_step_ade;
  double gen_time_per_step = 0.0;
};

// Mean 3-D displacement across all steps.
double ade(const Trajectory& pred, const Trajectory& truth);

// Displacement at the final step only.
double fde(const Trajectory& pred, const Trajectory& truth);

EvalRecord eval_record(const Trajectory& pred, const Trajectory& truth);

enum class BestOfMode {
  independent,  // minimum ADE and minimum FDE, each over all candidates
  joint,        // ADE and FDE of the single candidate with the best ADE
};

EvalRecord best_of_n(const std::vector<Trajectory>& candidates,
                     const Trajectory& truth,
                     BestOfMode mode = BestOfMode::independent);

struct TimingStats {
  double mean_per_step = 0.0;
  double min_per_step = 0.0;
  double max_per_step = 0.0;
  int runs = 0;
};

// Wall-clock cost of one full prediction divided by the number of predicted
// steps. One untimed warmup call precedes the timed runs.
TimingStats measure_generation_time(const std::function<void()>& predict_fn, int k,
                                    int runs = 10);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

Aggregate aggregate(const std::vector<double>& values);

}  // namespace trajcast
