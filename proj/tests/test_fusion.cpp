#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "trajcast/errors.hpp"
#include "trajcast/fusion.hpp"

using namespace trajcast;

namespace {

Tensor rand_vec(int dim, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data({dim}, std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("single agent attends only to itself") {
  GatFusion gat(6, GatConfig{}, 3);
  Rng rng(1);
  Tensor h = rand_vec(6, rng);
  auto [fused, weights] = gat.gat_fuse({h});
  REQUIRE(weights.rows.size() == 1);
  CHECK(weights.rows[0][0] == 1.0);
  REQUIRE(fused.size() == 1);
  CHECK(fused[0].size() == 16);

  // With weight one the pre-activation sum is exactly the self projection,
  // so duplicating the agent (weights 0.5/0.5 on identical rows) must give
  // the bit-identical fused vector.
  auto [fused2, weights2] = gat.gat_fuse({h, h});
  CHECK(weights2.rows[0][0] == 0.5);
  CHECK(weights2.rows[0][1] == 0.5);
  CHECK(weights2.rows[1][0] == 0.5);
  CHECK(weights2.rows[1][1] == 0.5);
  for (size_t i = 0; i < fused[0].size(); ++i) {
    CHECK(fused2[0].data()[i] == fused[0].data()[i]);
  }
}

TEST_CASE("attention rows are a probability distribution over present agents") {
  GatFusion gat(8, GatConfig{}, 11);
  Rng rng(2);
  std::vector<Tensor> agents;
  for (int f = 0; f < 5; ++f) agents.push_back(rand_vec(8, rng));
  auto [fused, weights] = gat.gat_fuse(agents);
  REQUIRE(weights.rows.size() == 5);
  for (const auto& row : weights.rows) {
    double sum = 0.0;
    for (double w : row) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("absent agents get exactly zero weight and do not affect the rest") {
  GatFusion gat(8, GatConfig{}, 13);
  Rng rng(3);
  Tensor a = rand_vec(8, rng), b = rand_vec(8, rng), c = rand_vec(8, rng);

  auto [fused_masked, w_masked] = gat.gat_fuse({a, b, c}, {true, false, true});
  for (size_t i = 0; i < 3; ++i) {
    CHECK(w_masked.rows[i][1] == 0.0);
    CHECK(w_masked.rows[1][i] == 0.0);
  }
  for (double v : fused_masked[1].data()) CHECK(v == 0.0);
  CHECK(w_masked.rows[0][0] + w_masked.rows[0][2] == doctest::Approx(1.0).epsilon(1e-12));

  // Fusing without the absent agent gives the identical result.
  auto [fused_two, w_two] = gat.gat_fuse({a, c});
  for (size_t i = 0; i < fused_two[0].size(); ++i) {
    CHECK(fused_masked[0].data()[i] == fused_two[0].data()[i]);
    CHECK(fused_masked[2].data()[i] == fused_two[1].data()[i]);
  }
  CHECK(w_masked.rows[0][0] == w_two.rows[0][0]);
  CHECK(w_masked.rows[0][2] == w_two.rows[0][1]);

  CHECK_THROWS_AS(gat.gat_fuse({a, b}, {false, false}), ShapeError);
}

TEST_CASE("ego fusion is invariant to neighbor ordering") {
  GatFusion gat(8, GatConfig{}, 17);
  Rng rng(4);
  Tensor ego = rand_vec(8, rng), n1 = rand_vec(8, rng), n2 = rand_vec(8, rng);
  auto [f_a, w_a] = gat.gat_fuse({ego, n1, n2});
  auto [f_b, w_b] = gat.gat_fuse({ego, n2, n1});
  for (size_t i = 0; i < f_a[0].size(); ++i) {
    CHECK(f_a[0].data()[i] == doctest::Approx(f_b[0].data()[i]).epsilon(1e-12));
  }
  CHECK(w_a.rows[0][1] == doctest::Approx(w_b.rows[0][2]).epsilon(1e-12));
  CHECK(w_a.rows[0][2] == doctest::Approx(w_b.rows[0][1]).epsilon(1e-12));
}

TEST_CASE("width mismatches are rejected") {
  GatFusion gat(8, GatConfig{}, 19);
  Rng rng(5);
  CHECK_THROWS_AS(gat.gat_fuse({rand_vec(8, rng), rand_vec(7, rng)}), ShapeError);
  CHECK_THROWS_AS(gat.gat_fuse({}), ShapeError);
  CHECK_THROWS_AS(gat.gat_fuse({rand_vec(8, rng)}, {true, true}), ShapeError);
}

TEST_CASE("gradients flow through attention") {
  GatFusion gat(6, GatConfig{}, 23);
  Rng rng(6);
  Tensor a = rand_vec(6, rng, true);
  Tensor b = rand_vec(6, rng, true);
  Tensor c = rand_vec(6, rng, true);
  Tensor tgt = rand_vec(16, rng);
  auto loss = [&] {
    auto [fused, weights] = gat.gat_fuse({a, b, c});
    return mse(fused[0], tgt);
  };
  CHECK(grad_check(loss, {a, b, c}) < 1e-5);
  auto params = gat.parameters();
  CHECK(grad_check(loss, params) < 1e-5);
}

TEST_CASE("condition vector is the ordered concatenation") {
  Rng rng(7);
  Tensor h_enc = rand_vec(24, rng);
  Tensor h_gat = rand_vec(16, rng);
  Tensor cond = build_condition(h_enc, h_gat);
  REQUIRE(cond.size() == 40);
  for (int i = 0; i < 24; ++i) CHECK(cond.data()[i] == h_enc.data()[i]);
  for (int i = 0; i < 16; ++i) CHECK(cond.data()[24 + i] == h_gat.data()[i]);

  Tensor zeros = Tensor::zeros({16});
  Tensor cond0 = build_condition(h_enc, zeros);
  for (int i = 0; i < 16; ++i) CHECK(cond0.data()[24 + i] == 0.0);
}
