#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "trajcast/encoder.hpp"
#include "trajcast/errors.hpp"

using namespace trajcast;

namespace {

Trajectory line_trajectory(int n, double step) {
  Trajectory t;
  t.agent_id = 1;
  for (int j = 0; j < n; ++j) {
    t.points.push_back({double(j), step * j, -0.5 * step * j, 0.5 + 0.01 * j});
  }
  return t;
}

std::vector<WindSample> constant_wind(int n, double vx, double vy) {
  return std::vector<WindSample>(static_cast<size_t>(n), WindSample{vx, vy});
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig bad;
  bad.tcn_channels = {8, 8, 8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  EncoderConfig mismatch;
  mismatch.hidden_dim = 99;
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);

  EncoderConfig rate;
  rate.dropout_rate = 1.0;
  CHECK_THROWS_AS(rate.validate(), ConfigError);

  EncoderConfig ok;
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.derived_hidden_dim() == 24);
}

TEST_CASE("zero input with zero-initialized biases encodes to zero") {
  AgentEncoder enc(EncoderConfig{}, 5, 3);
  Trajectory zero;
  for (int j = 0; j < 5; ++j) zero.points.push_back({double(j), 0.0, 0.0, 0.0});
  Tensor h_tcn = enc.tcn_encode(zero, {});
  for (double v : h_tcn.data()) CHECK(v == 0.0);

  Tensor h_cnn = enc.cnn_encode_wind(constant_wind(5, 0.0, 0.0), {});
  for (double v : h_cnn.data()) CHECK(v == 0.0);
}

TEST_CASE("encoding is the concatenation, trajectory features first") {
  AgentEncoder enc(EncoderConfig{}, 5, 7);
  Trajectory past = line_trajectory(5, 0.1);
  auto wind = constant_wind(5, 1.0, -0.5);

  Tensor h_tcn = enc.tcn_encode(past, {});
  Tensor h_cnn = enc.cnn_encode_wind(wind, {});
  Tensor h_enc = enc.encode_agent(past, wind, {});
  REQUIRE(h_enc.size() == 24);  // 16 + 8
  CHECK(enc.output_dim() == 24);
  for (int i = 0; i < 16; ++i) CHECK(h_enc.data()[i] == h_tcn.data()[i]);
  for (int i = 0; i < 8; ++i) CHECK(h_enc.data()[16 + i] == h_cnn.data()[i]);
}

TEST_CASE("inference is a pure function") {
  AgentEncoder enc(EncoderConfig{}, 5, 11);
  Trajectory past = line_trajectory(5, 0.2);
  auto wind = constant_wind(5, 2.0, 0.3);
  Tensor a = enc.encode_agent(past, wind, {});
  Tensor b = enc.encode_agent(past, wind, {});
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("constant wind encodes identically across agents") {
  AgentEncoder enc(EncoderConfig{}, 5, 13);
  Tensor a = enc.cnn_encode_wind(constant_wind(5, 3.0, -1.0), {});
  Tensor b = enc.cnn_encode_wind(constant_wind(5, 3.0, -1.0), {});
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("mask contract: padded slots cannot influence the encoding") {
  AgentEncoder enc(EncoderConfig{}, 5, 17);
  Trajectory past = line_trajectory(5, 0.3);
  const std::vector<double> mask = {0.0, 1.0, 1.0, 1.0, 1.0};

  Tensor base = enc.tcn_encode(past, mask);
  Trajectory poked = past;
  poked.points[0].x += 100.0;
  poked.points[0].y -= 50.0;
  Tensor same = enc.tcn_encode(poked, mask);
  for (size_t i = 0; i < base.size(); ++i) CHECK(same.data()[i] == base.data()[i]);

  // The same perturbation is visible once the slot is unmasked (and the
  // receptive field of the default config covers all five steps).
  Tensor moved = enc.tcn_encode(poked, {});
  Tensor unpoked = enc.tcn_encode(past, {});
  double delta = 0.0;
  for (size_t i = 0; i < moved.size(); ++i) {
    delta = std::max(delta, std::abs(moved.data()[i] - unpoked.data()[i]));
  }
  CHECK(delta > 0.0);
}

TEST_CASE("per-agent mapping produces one vector per agent") {
  AgentEncoder enc(EncoderConfig{}, 5, 19);
  std::vector<Tensor> encodings;
  for (int f = 0; f < 4; ++f) {
    encodings.push_back(
        enc.encode_agent(line_trajectory(5, 0.1 * (f + 1)), constant_wind(5, f, -f), {}));
  }
  CHECK(encodings.size() == 4);
  for (const Tensor& h : encodings) CHECK(h.size() == 24);
}

TEST_CASE("shape errors") {
  AgentEncoder enc(EncoderConfig{}, 5, 23);
  CHECK_THROWS_AS(enc.tcn_encode(line_trajectory(4, 0.1), {}), ShapeError);
  CHECK_THROWS_AS(enc.cnn_encode_wind(constant_wind(6, 0, 0), {}), ShapeError);
  CHECK_THROWS_AS(enc.tcn_encode(line_trajectory(5, 0.1), {1, 1, 1}), ShapeError);
  CHECK_THROWS_AS(enc.tcn_encode(line_trajectory(5, 0.1), {}, true, nullptr), ConfigError);
}

TEST_CASE("training mode applies dropout") {
  EncoderConfig config;
  config.dropout_rate = 0.5;
  AgentEncoder enc(config, 5, 29);
  Trajectory past = line_trajectory(5, 0.4);
  Rng drop_rng(2);
  Tensor trained = enc.tcn_encode(past, {}, true, &drop_rng);
  Tensor inferred = enc.tcn_encode(past, {});
  bool differs = false;
  for (size_t i = 0; i < trained.size(); ++i) {
    differs = differs || trained.data()[i] != inferred.data()[i];
  }
  CHECK(differs);
}

TEST_CASE("encoder gradients match finite differences") {
  AgentEncoder enc(EncoderConfig{}, 5, 31);
  Rng rng(6);
  std::vector<double> past_vals(15), wind_vals(10);
  for (double& v : past_vals) v = rng.uniform(-1.0, 1.0);
  for (double& v : wind_vals) v = rng.uniform(-1.0, 1.0);
  Tensor past = Tensor::from_data({3, 5}, past_vals, true);
  Tensor wind = Tensor::from_data({2, 5}, wind_vals, true);
  Tensor tgt_t = Tensor::full({16}, 0.1);
  Tensor tgt_w = Tensor::full({8}, -0.2);

  auto loss = [&] {
    return add(mse(enc.tcn_encode(past, {}), tgt_t), mse(enc.cnn_encode_wind(wind, {}), tgt_w));
  };
  CHECK(grad_check(loss, {past, wind}) < 1e-5);

  // And through the parameters, which is the path training exercises.
  auto params = enc.parameters();
  CHECK(grad_check(loss, params) < 1e-5);
}
