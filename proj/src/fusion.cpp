#include "trajcast/fusion.hpp"

#include <cmath>
#include <string>

#include "trajcast/errors.hpp"

namespace trajcast {

void GatConfig::validate() const {
  if (out_dim < 1) throw ConfigError("gat: out_dim must be positive");
  if (leaky_slope <= 0.0 || leaky_slope >= 1.0) {
    throw ConfigError("gat: leaky slope must be in (0,1)");
  }
}

GatFusion::GatFusion(int in_dim, const GatConfig& config, uint64_t seed)
    : config_(config), in_dim_(in_dim) {
  config_.validate();
  if (in_dim < 1) throw ConfigError("gat: input width must be positive");

  Rng rng(seed);
  auto xavier = [&rng](int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::vector<double> w(static_cast<size_t>(rows) * cols);
    for (double& v : w) v = rng.uniform(-limit, limit);
    return Tensor::from_data({rows, cols}, std::move(w), true);
  };
  proj_w_ = xavier(config_.out_dim, in_dim);
  proj_b_ = Tensor::zeros({config_.out_dim}, true);
  attn_w_ = xavier(1, 2 * config_.out_dim);
  attn_b_ = Tensor::zeros({1}, true);
}

std::pair<std::vector<Tensor>, AttentionWeights> GatFusion::gat_fuse(
    const std::vector<Tensor>& h_enc_all, const std::vector<bool>& present) const {
  const size_t n_agents = h_enc_all.size();
  if (n_agents == 0) throw ShapeError("gat_fuse: needs at least the ego agent");
  if (!present.empty() && present.size() != n_agents) {
    throw ShapeError("gat_fuse: presence flags do not match agent count");
  }
  for (const Tensor& h : h_enc_all) {
    if (h.rank() != 1 || h.shape()[0] != in_dim_) {
      throw ShapeError("gat_fuse: encoding width " + shape_str(h.shape()) + ", expected [" +
                       std::to_string(in_dim_) + "]");
    }
  }
  auto is_present = [&](size_t i) { return present.empty() || present[i]; };

  std::vector<size_t> active;
  for (size_t i = 0; i < n_agents; ++i) {
    if (is_present(i)) active.push_back(i);
  }
  if (active.empty()) throw ShapeError("gat_fuse: every agent is marked absent");

  // Shared projections, then a [n_active, out_dim] matrix for the weighted sums.
  std::vector<Tensor> proj(n_agents);
  std::vector<Tensor> proj_rows;
  proj_rows.reserve(active.size());
  for (size_t i : active) {
    proj[i] = linear(h_enc_all[i], proj_w_, proj_b_);
    proj_rows.push_back(reshape(proj[i], {1, config_.out_dim}));
  }
  Tensor stacked = proj_rows.size() == 1 ? proj_rows[0] : concat(proj_rows, 0);

  std::vector<Tensor> fused(n_agents);
  AttentionWeights weights;
  weights.rows.assign(n_agents, std::vector<double>(n_agents, 0.0));

  for (size_t i = 0; i < n_agents; ++i) {
    if (!is_present(i)) {
      fused[i] = Tensor::zeros({config_.out_dim});
      continue;
    }
    std::vector<Tensor> scores;
    scores.reserve(active.size());
    for (size_t j : active) {
      Tensor pair = concat({proj[i], proj[j]});
      scores.push_back(leaky_relu(linear(pair, attn_w_, attn_b_), config_.leaky_slope));
    }
    Tensor alpha = softmax(scores.size() == 1 ? scores[0] : concat(scores, 0));
    for (size_t a = 0; a < active.size(); ++a) weights.rows[i][active[a]] = alpha.data()[a];

    Tensor summed = matmul(reshape(alpha, {1, static_cast<int>(active.size())}), stacked);
    fused[i] = relu(reshape(summed, {config_.out_dim}));
  }
  return {std::move(fused), std::move(weights)};
}

std::vector<Tensor> GatFusion::parameters() { return {proj_w_, proj_b_, attn_w_, attn_b_}; }

Tensor build_condition(const Tensor& h_enc_ego, const Tensor& h_gat_ego) {
  return concat({h_enc_ego, h_gat_ego});
}

}  // namespace trajcast
