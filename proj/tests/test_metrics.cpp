#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <thread>
#include <vector>

#include "trajcast/errors.hpp"
#include "trajcast/metrics.hpp"
#include "trajcast/rng.hpp"

using namespace trajcast;

namespace {

Trajectory line(int n, double x0 = 0.0, double y0 = 0.0, double z0 = 0.0) {
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    t.points.push_back({double(i), x0 + i, y0, z0});
  }
  return t;
}

Trajectory random_traj(int n, Rng& rng) {
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    t.points.push_back(
        {double(i), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)});
  }
  return t;
}

}  // namespace

TEST_CASE("displacement basics") {
  Trajectory truth = line(8);
  CHECK(ade(truth, truth) == 0.0);
  CHECK(fde(truth, truth) == 0.0);

  // Constant (3, 4, 0) offset: every step is a 3-4-5 triangle.
  Trajectory offset = line(8, 3.0, 4.0);
  CHECK(ade(offset, truth) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(fde(offset, truth) == doctest::Approx(5.0).epsilon(1e-15));

  Trajectory single_a = line(1), single_b = line(1, 0.7, -0.2, 0.4);
  CHECK(ade(single_b, single_a) == fde(single_b, single_a));

  Trajectory last_off = line(8);
  last_off.points.back().z += 2.0;
  CHECK(fde(last_off, truth) == 2.0);
  CHECK(ade(last_off, truth) == doctest::Approx(2.0 / 8.0).epsilon(1e-15));

  // FDE only looks at the final step.
  Trajectory noisy_front = line(8);
  for (size_t i = 0; i + 1 < noisy_front.points.size(); ++i) {
    noisy_front.points[i].y += 100.0;
  }
  CHECK(fde(noisy_front, truth) == 0.0);
}

TEST_CASE("shape validation") {
  Trajectory a = line(5), b = line(6), empty;
  CHECK_THROWS_AS(ade(a, b), ShapeError);
  CHECK_THROWS_AS(fde(a, b), ShapeError);
  CHECK_THROWS_AS(ade(empty, empty), ShapeError);
  CHECK_THROWS_AS(fde(empty, a), ShapeError);
  CHECK_THROWS_AS(best_of_n({}, a), ShapeError);
}

TEST_CASE("translation invariance and linear scaling") {
  Rng rng(7);
  Trajectory pred = random_traj(10, rng), truth = random_traj(10, rng);
  const double base_ade = ade(pred, truth), base_fde = fde(pred, truth);

  Trajectory pred_shift = pred, truth_shift = truth;
  for (Waypoint& p : pred_shift.points) {
    p.x += 12.5;
    p.y -= 3.0;
    p.z += 0.75;
  }
  for (Waypoint& p : truth_shift.points) {
    p.x += 12.5;
    p.y -= 3.0;
    p.z += 0.75;
  }
  CHECK(ade(pred_shift, truth_shift) == doctest::Approx(base_ade).epsilon(1e-12));
  CHECK(fde(pred_shift, truth_shift) == doctest::Approx(base_fde).epsilon(1e-12));

  // Doubling every error vector doubles both metrics exactly.
  Trajectory doubled = truth;
  for (size_t i = 0; i < doubled.points.size(); ++i) {
    doubled.points[i].x += 2.0 * (pred.points[i].x - truth.points[i].x);
    doubled.points[i].y += 2.0 * (pred.points[i].y - truth.points[i].y);
    doubled.points[i].z += 2.0 * (pred.points[i].z - truth.points[i].z);
  }
  CHECK(ade(doubled, truth) == doctest::Approx(2.0 * base_ade).epsilon(1e-12));
  CHECK(fde(doubled, truth) == doctest::Approx(2.0 * base_fde).epsilon(1e-12));
}

TEST_CASE("per step record is consistent") {
  Rng rng(9);
  Trajectory pred = random_traj(12, rng), truth = random_traj(12, rng);
  EvalRecord rec = eval_record(pred, truth);
  REQUIRE(rec.per_step_ade.size() == 12);
  double sum = 0.0, peak = 0.0;
  for (double v : rec.per_step_ade) {
    sum += v;
    peak = std::max(peak, v);
  }
  CHECK(rec.ade == doctest::Approx(sum / 12.0).epsilon(1e-15));
  CHECK(rec.fde == rec.per_step_ade.back());
  CHECK(rec.ade <= peak);
  CHECK(rec.fde <= 12.0 * rec.ade + 1e-15);
}

TEST_CASE("best of n takes independent minima by default") {
  Trajectory truth = line(6);

  // Candidate a tracks closely but ends far; candidate b is offset everywhere
  // except the final point.
  Trajectory a = line(6);
  a.points.back().y += 9.0;
  Trajectory b = line(6, 0.0, 4.0);
  b.points.back().y -= 4.0;

  const double ade_a = ade(a, truth), ade_b = ade(b, truth);
  const double fde_a = fde(a, truth), fde_b = fde(b, truth);
  REQUIRE(ade_a < ade_b);
  REQUIRE(fde_b < fde_a);

  EvalRecord indep = best_of_n({a, b}, truth);
  CHECK(indep.ade == ade_a);
  CHECK(indep.fde == fde_b);

  EvalRecord joint = best_of_n({a, b}, truth, BestOfMode::joint);
  CHECK(joint.ade == ade_a);
  CHECK(joint.fde == fde_a);

  // Single candidate reports its own numbers.
  EvalRecord solo = best_of_n({b}, truth);
  CHECK(solo.ade == ade_b);
  CHECK(solo.fde == fde_b);

  // The truth itself among candidates zeroes both metrics.
  EvalRecord zero = best_of_n({a, truth, b}, truth);
  CHECK(zero.ade == 0.0);
  CHECK(zero.fde == 0.0);
}

TEST_CASE("adding candidates never hurts") {
  Rng rng(13);
  Trajectory truth = random_traj(9, rng);
  std::vector<Trajectory> candidates;
  double prev_ade = 1e300, prev_fde = 1e300;
  for (int i = 0; i < 8; ++i) {
    candidates.push_back(random_traj(9, rng));
    EvalRecord rec = best_of_n(candidates, truth);
    CHECK(rec.ade <= prev_ade);
    CHECK(rec.fde <= prev_fde);
    prev_ade = rec.ade;
    prev_fde = rec.fde;
  }
}

TEST_CASE("generation timing divides wall time by steps") {
  const auto fake_predict = [] {
    std::this_thread::sleep_for(std::chrono::milliseconds(12));
  };
  TimingStats stats = measure_generation_time(fake_predict, 120, 10);
  CHECK(stats.runs == 10);
  // 12 ms for 120 steps is 0.1 ms per step; allow generous scheduler slack.
  CHECK(stats.mean_per_step >= 0.00005);
  CHECK(stats.mean_per_step <= 0.005);
  CHECK(stats.min_per_step <= stats.mean_per_step);
  CHECK(stats.mean_per_step <= stats.max_per_step);

  CHECK_THROWS_AS(measure_generation_time(fake_predict, 0, 10), ConfigError);
  CHECK_THROWS_AS(measure_generation_time(fake_predict, 120, 0), ConfigError);
  CHECK_THROWS_AS(measure_generation_time(nullptr, 120, 10), ConfigError);
}

TEST_CASE("aggregate reports mean and sample deviation") {
  Aggregate agg = aggregate({1.0, 2.0, 3.0, 4.0});
  CHECK(agg.mean == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(agg.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));

  Aggregate solo = aggregate({7.0});
  CHECK(solo.mean == 7.0);
  CHECK(solo.stddev == 0.0);

  CHECK_THROWS_AS(aggregate({}), ConfigError);
}
