#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "trajcast/adam.hpp"
#include "trajcast/errors.hpp"
#include "trajcast/guide.hpp"

using namespace trajcast;

namespace {

CvaeConfig small_config() {
  CvaeConfig config;
  config.latent_dim = 4;
  config.encoder_widths = {12};
  config.decoder_widths = {12, 12};
  config.mlp_widths = {12};
  config.guide_tcn_channels = {8, 8};
  config.guide_steps = 5;
  return config;
}

Tensor rand_vec(int dim, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data({dim}, std::move(v), requires_grad);
}

Tensor rand_guide_cn(int steps, Rng& rng) {
  std::vector<double> v(3 * steps);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data({3, steps}, std::move(v));
}

// Puts small random values into the zero-initialized heads so gradients flow
// through every layer.
void randomize_heads(GuideGenerator& gen, uint64_t seed) {
  Rng rng(seed);
  auto params = gen.parameters();
  for (Tensor& p : params) {
    bool all_zero = true;
    for (double v : p.data()) all_zero = all_zero && v == 0.0;
    if (!all_zero || p.rank() != 2) continue;  // only the zero weight matrices
    for (double& v : p.mutable_data()) v = 0.3 * rng.uniform(-1.0, 1.0);
  }
}

}  // namespace

TEST_CASE("config validation") {
  CvaeConfig bad = small_config();
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.guide_steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_config();
  bad.accel_dims = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(small_config().validate());
}

TEST_CASE("untrained posterior is exactly the unit Gaussian") {
  GuideGenerator gen(small_config(), 10, 10.0, 3);
  Rng rng(1);
  Tensor h_guide = gen.encode_guide_truth(rand_guide_cn(5, rng));
  auto [mu, logvar] = gen.cvae_encode(h_guide, rand_vec(10, rng));
  for (double v : mu.data()) CHECK(v == 0.0);
  for (double v : logvar.data()) CHECK(v == 0.0);
  CHECK(loss_cvae(mu.data(), logvar.data()) == 0.0);
}

TEST_CASE("kl divergence closed form") {
  // One dimension, mu=1, logvar=0: 0.5 per dimension.
  std::vector<double> mu = {1.0}, lv = {0.0};
  CHECK(loss_cvae(mu, lv) == doctest::Approx(0.5).epsilon(1e-15));
  // Four dims: additive.
  std::vector<double> mu4 = {1.0, 1.0, 1.0, 1.0}, lv4 = {0.0, 0.0, 0.0, 0.0};
  CHECK(loss_cvae(mu4, lv4) == doctest::Approx(2.0).epsilon(1e-15));
  // Variance 4: 0.5*(4 - 1 - ln 4) = 0.8068528...
  std::vector<double> mu0 = {0.0}, lvln4 = {std::log(4.0)};
  CHECK(loss_cvae(mu0, lvln4) == doctest::Approx(0.8068528194400547).epsilon(1e-12));
  // Nonnegative for random values.
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> m(6), l(6);
    for (double& v : m) v = rng.uniform(-3.0, 3.0);
    for (double& v : l) v = rng.uniform(-3.0, 3.0);
    CHECK(loss_cvae(m, l) >= 0.0);
  }
}

TEST_CASE("trajectory loss definition") {
  Trajectory a, b;
  for (int j = 0; j < 4; ++j) {
    a.points.push_back({double(j), 1.0 * j, 2.0 * j, 0.5});
    b.points.push_back({double(j), 1.0 * j, 2.0 * j, 0.5});
  }
  CHECK(loss_traj(a, b) == 0.0);

  // Uniform 2 km offset on x only: mean of (4, 0, 0) = 4/3.
  Trajectory c = b;
  for (Waypoint& p : c.points) p.x += 2.0;
  CHECK(loss_traj(c, b) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));

  // Doubling all errors quadruples the loss.
  Trajectory d = b;
  for (Waypoint& p : d.points) p.x += 4.0;
  CHECK(loss_traj(d, b) == doctest::Approx(4.0 * loss_traj(c, b)).epsilon(1e-15));

  Trajectory shorter = b;
  shorter.points.pop_back();
  CHECK_THROWS_AS(loss_traj(shorter, b), ShapeError);
}

TEST_CASE("loss breakdown sums exactly") {
  LossBreakdown lb = make_loss_breakdown(1.25, 0.75);
  CHECK(lb.loss_total == lb.loss_traj + lb.loss_cvae);
  CHECK(lb.loss_total == 2.0);
}

TEST_CASE("integration recurrence basics") {
  const Waypoint origin{0.0, 0.0, 0.0, 0.0};
  std::vector<std::array<double, 3>> accel = {{1.0, 0.0, 0.0}};
  GuideTrajectory g = integrate_guide(origin, origin, accel, 1.0);
  REQUIRE(g.points.size() == 1);
  CHECK(g.points[0].x == 1.0);
  CHECK(g.points[0].y == 0.0);
  CHECK(g.points[0].z == 0.0);
  CHECK(g.points[0].t == 1.0);

  CHECK_THROWS_AS(integrate_guide(origin, origin, accel, 0.0), ConfigError);
  CHECK_THROWS_AS(integrate_guide(origin, origin, {}, 1.0), ShapeError);
}

TEST_CASE("zero acceleration continues the seed velocity") {
  const Waypoint p_prev{3.0, 1.0, 2.0, 0.5};
  const Waypoint p_curr{4.0, 1.1, 1.9, 0.52};
  const double dt = 10.0;
  std::vector<std::array<double, 3>> accel(4, {0.0, 0.0, 0.0});
  GuideTrajectory g = integrate_guide(p_prev, p_curr, accel, dt);
  REQUIRE(g.points.size() == 4);
  for (int j = 0; j < 4; ++j) {
    const double steps = j + 1;
    CHECK(g.points[j].x == doctest::Approx(p_curr.x + steps * (p_curr.x - p_prev.x) * dt)
                               .epsilon(1e-13));
    CHECK(g.points[j].y == doctest::Approx(p_curr.y + steps * (p_curr.y - p_prev.y) * dt)
                               .epsilon(1e-13));
    CHECK(g.points[j].z == doctest::Approx(p_curr.z + steps * (p_curr.z - p_prev.z) * dt)
                               .epsilon(1e-13));
    CHECK(g.points[j].t == p_curr.t + steps * dt);
  }
}

TEST_CASE("second differences recover the accelerations") {
  Rng rng(4);
  const Waypoint p_prev{0.0, 0.2, -0.1, 0.5};
  const Waypoint p_curr{1.0, 0.25, -0.05, 0.51};
  const double dt = 10.0;
  std::vector<std::array<double, 3>> accel(6);
  for (auto& a : accel) {
    a = {rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3)};
  }
  GuideTrajectory g = integrate_guide(p_prev, p_curr, accel, dt);

  // Rebuild the virtual seed points the recurrence started from.
  std::vector<std::array<double, 3>> pos;
  pos.push_back({p_curr.x - (p_curr.x - p_prev.x) * dt, p_curr.y - (p_curr.y - p_prev.y) * dt,
                 p_curr.z - (p_curr.z - p_prev.z) * dt});
  pos.push_back({p_curr.x, p_curr.y, p_curr.z});
  for (const Waypoint& p : g.points) pos.push_back({p.x, p.y, p.z});
  for (size_t j = 2; j < pos.size(); ++j) {
    for (int a = 0; a < 3; ++a) {
      const double recovered = (pos[j][a] - 2.0 * pos[j - 1][a] + pos[j - 2][a]) / (dt * dt);
      const double expected = accel[j - 2][a];
      CHECK(std::abs(recovered - expected) <=
            1e-12 * std::max(1.0, std::abs(expected)));
    }
  }
}

TEST_CASE("tensor integration matches the scalar recurrence") {
  GuideGenerator gen(small_config(), 10, 10.0, 7);
  Rng rng(5);
  const Waypoint p_prev{0.0, 0.4, 0.1, 0.5};
  const Waypoint p_curr{1.0, 0.42, 0.13, 0.5};
  std::vector<double> accel_flat(15);
  for (double& v : accel_flat) v = rng.uniform(-1e-3, 1e-3);
  Tensor accel_t = Tensor::from_data({5, 3}, accel_flat);
  Tensor g_t = gen.integrate_accelerations(p_prev, p_curr, accel_t);

  std::vector<std::array<double, 3>> accel(5);
  for (int j = 0; j < 5; ++j) accel[j] = {accel_flat[j * 3], accel_flat[j * 3 + 1], accel_flat[j * 3 + 2]};
  GuideTrajectory g = integrate_guide(p_prev, p_curr, accel, 10.0);
  for (int j = 0; j < 5; ++j) {
    CHECK(g_t.data()[j * 3 + 0] == doctest::Approx(g.points[j].x).epsilon(1e-12));
    CHECK(g_t.data()[j * 3 + 1] == doctest::Approx(g.points[j].y).epsilon(1e-12));
    CHECK(g_t.data()[j * 3 + 2] == doctest::Approx(g.points[j].z).epsilon(1e-12));
  }
}

TEST_CASE("untrained guide is the constant-velocity extrapolation for any z") {
  GuideGenerator gen(small_config(), 10, 10.0, 11);
  Rng rng(6);
  Tensor condition = rand_vec(10, rng);
  const Waypoint p_prev{9.0, 1.0, 0.0, 0.5};
  const Waypoint p_curr{10.0, 1.05, 0.02, 0.5};

  Rng z1(100), z2(200);
  GuideTrajectory a = gen.generate_guide(condition, p_prev, p_curr, z1);
  GuideTrajectory b = gen.generate_guide(condition, p_prev, p_curr, z2);
  GuideTrajectory cv =
      integrate_guide(p_prev, p_curr, std::vector<std::array<double, 3>>(5, {0, 0, 0}), 10.0);
  REQUIRE(a.points.size() == 5);
  for (size_t j = 0; j < a.points.size(); ++j) {
    CHECK(a.points[j].x == cv.points[j].x);
    CHECK(b.points[j].x == cv.points[j].x);
    CHECK(a.points[j].y == cv.points[j].y);
    CHECK(a.points[j].z == cv.points[j].z);
  }
}

TEST_CASE("guide sampling is reproducible and diverse") {
  CvaeConfig config = small_config();
  config.guide_steps = 12;  // operational size: 120 s at 10 s interval
  GuideGenerator gen(config, 10, 10.0, 13);
  randomize_heads(gen, 77);

  Rng rng(7);
  Tensor condition = rand_vec(10, rng);
  const Waypoint p_prev{9.0, 0.0, 0.0, 0.5};
  const Waypoint p_curr{10.0, 0.05, 0.0, 0.5};

  Rng s1(42), s2(42), s3(43);
  GuideTrajectory a = gen.generate_guide(condition, p_prev, p_curr, s1);
  GuideTrajectory b = gen.generate_guide(condition, p_prev, p_curr, s2);
  GuideTrajectory c = gen.generate_guide(condition, p_prev, p_curr, s3);
  REQUIRE(a.points.size() == 12);
  CHECK(a.points.front().t == p_curr.t + 10.0);
  CHECK(a.points.back().t == p_curr.t + 120.0);
  bool same = true, diverse = false;
  for (size_t j = 0; j < a.points.size(); ++j) {
    same = same && a.points[j].x == b.points[j].x && a.points[j].y == b.points[j].y;
    diverse = diverse || a.points[j].x != c.points[j].x;
  }
  CHECK(same);
  CHECK(diverse);
}

TEST_CASE("decoder is a pure function and responds to the latent") {
  GuideGenerator gen(small_config(), 10, 10.0, 17);
  Rng rng(8);
  Tensor condition = rand_vec(10, rng);
  Tensor z = rand_vec(4, rng);
  Tensor h1 = gen.cvae_decode(z, condition);
  Tensor h2 = gen.cvae_decode(z, condition);
  for (size_t i = 0; i < h1.size(); ++i) CHECK(h1.data()[i] == h2.data()[i]);

  Tensor z_other = rand_vec(4, rng);
  Tensor h3 = gen.cvae_decode(z_other, condition);
  bool differs = false;
  for (size_t i = 0; i < h1.size(); ++i) differs = differs || h1.data()[i] != h3.data()[i];
  CHECK(differs);
}

TEST_CASE("shape errors") {
  GuideGenerator gen(small_config(), 10, 10.0, 19);
  Rng rng(9);
  CHECK_THROWS_AS(gen.cvae_decode(rand_vec(3, rng), rand_vec(10, rng)), ShapeError);
  CHECK_THROWS_AS(gen.cvae_decode(rand_vec(4, rng), rand_vec(9, rng)), ShapeError);
  CHECK_THROWS_AS(gen.encode_guide_truth(rand_vec(15, rng)), ShapeError);
  CHECK_THROWS_AS(
      gen.cvae_encode(gen.encode_guide_truth(rand_guide_cn(5, rng)), rand_vec(11, rng)),
      ShapeError);
  CHECK_THROWS_AS(gen.integrate_accelerations({0, 0, 0, 0}, {1, 0, 0, 0},
                                              Tensor::zeros({4, 3})),
                  ShapeError);
}

TEST_CASE("gradients flow through the whole training path") {
  GuideGenerator gen(small_config(), 6, 10.0, 23);
  randomize_heads(gen, 99);
  Rng rng(10);
  Tensor condition = rand_vec(6, rng, true);
  Tensor guide_cn = rand_guide_cn(5, rng);
  Tensor truth = Tensor::from_data({5, 3}, std::vector<double>(15, 0.1));
  const Waypoint p_prev{0.0, 0.0, 0.0, 0.0};
  const Waypoint p_curr{1.0, 0.01, 0.0, 0.0};

  auto loss = [&] {
    Rng noise(55);
    Tensor h_guide = gen.encode_guide_truth(guide_cn);
    auto [mu, logvar] = gen.cvae_encode(h_guide, condition);
    Tensor z = gaussian_sample_reparam(mu, logvar, noise);
    Tensor h_cvae = gen.cvae_decode(z, condition);
    Tensor accel = gen.mlp_accelerations(h_cvae);
    Tensor g = gen.integrate_accelerations(p_prev, p_curr, accel);
    return add(mse(g, truth), kl_standard_normal(mu, logvar));
  };
  CHECK(grad_check(loss, {condition}) < 1e-5);
  auto params = gen.parameters();
  CHECK(grad_check(loss, params) < 1e-5);
}

TEST_CASE("a few optimizer steps reduce the guide loss on one sample") {
  GuideGenerator gen(small_config(), 6, 10.0, 29);
  Rng rng(11);
  Tensor condition = rand_vec(6, rng);
  Tensor guide_cn = rand_guide_cn(5, rng);
  std::vector<double> truth_vals(15);
  for (double& v : truth_vals) v = rng.uniform(-0.5, 0.5);
  Tensor truth = Tensor::from_data({5, 3}, truth_vals);
  const Waypoint p_prev{0.0, 0.0, 0.0, 0.0};
  const Waypoint p_curr{1.0, 0.01, 0.0, 0.0};

  auto params = gen.parameters();
  AdamState opt(params, 1e-3);
  double first = -1.0, last = -1.0;
  for (int step = 0; step < 60; ++step) {
    Rng noise(1000);  // fixed draw keeps the objective deterministic
    Tensor h_guide = gen.encode_guide_truth(guide_cn);
    auto [mu, logvar] = gen.cvae_encode(h_guide, condition);
    Tensor z = gaussian_sample_reparam(mu, logvar, noise);
    Tensor h_cvae = gen.cvae_decode(z, condition);
    Tensor accel = gen.mlp_accelerations(h_cvae);
    Tensor g = gen.integrate_accelerations(p_prev, p_curr, accel);
    Tensor total = add(mse(g, truth), kl_standard_normal(mu, logvar));
    if (step == 0) first = total.value();
    last = total.value();
    backward(total);
    adam_step(params, opt);
  }
  CHECK(last < first);
}
