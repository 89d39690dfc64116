#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "trajcast/tensor.hpp"

namespace trajcast {

struct GatConfig {
  int out_dim = 16;
  double leaky_slope = 0.2;

  void validate() const;
};

// Row f holds agent f's attention over all agents (self included). Absent
// agents carry exactly zero weight everywhere, including their own row.
struct AttentionWeights {
  std::vector<std::vector<double>> rows;
};

// Single-head graph attention over the complete graph of present agents.
// Scores come from a shared linear form over concatenated projections with a
// LeakyReLU, normalized per ego by a softmax that only ranges over present
// agents; the fused vector is the ReLU of the attention-weighted sum of
// projections.
class GatFusion {
 public:
  GatFusion(int in_dim, const GatConfig& config, uint64_t seed);

  // h_enc_all: one [in_dim] vector per agent; the ego is one of them.
  // present: per-agent flags; empty means all present.
  std::pair<std::vector<Tensor>, AttentionWeights> gat_fuse(
      const std::vector<Tensor>& h_enc_all, const std::vector<bool>& present = {}) const;

  int out_dim() const { return config_.out_dim; }
  std::vector<Tensor> parameters();

 private:
  GatConfig config_;
  int in_dim_;
  Tensor proj_w_;  // [out_dim, in_dim]
  Tensor proj_b_;  // [out_dim]
  Tensor attn_w_;  // [1, 2*out_dim]
  Tensor attn_b_;  // [1]
};

// condition = [h_enc_ego ; h_gat_ego], the guide generator's conditioning input.
Tensor build_condition(const Tensor& h_enc_ego, const Tensor& h_gat_ego);

}  // namespace trajcast
