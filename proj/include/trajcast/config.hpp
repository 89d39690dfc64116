#pragma once

#include <cstdint>
#include <string>

#include "trajcast/data.hpp"
#include "trajcast/encoder.hpp"
#include "trajcast/fusion.hpp"
#include "trajcast/guide.hpp"
#include "trajcast/mixture.hpp"

namespace trajcast {

struct PipelinePaths {
  std::string train_scene;
  std::string val_scene;
  std::string test_scene;
  std::string out_dir = "out";
};

// Everything the pipeline needs, with desk-scale defaults. Derived fields
// (guide step count, encoder width) are filled in by validate-time helpers,
// not stored in config files.
struct PipelineConfig {
  int n = 11;               // past window length in frames (1 s apart)
  int k = 120;              // prediction horizon in frames
  int guide_interval = 10;  // frames between guide points
  int mixture_components = 5;
  int epochs = 30;
  double learning_rate = 1e-3;
  int batch_size = 16;
  uint64_t seed = 1;
  int guides_per_sample = 1;
  int window_stride = 1;
  int eval_samples = 5;       // candidates per prediction
  int max_eval_windows = 0;   // 0 means no cap
  int synth_agents = 4;

  EmOptions em;
  EncoderConfig encoder;
  GatConfig gat;
  CvaeConfig cvae;
  SynthParams synth;
  PipelinePaths paths;

  void validate() const;
  int guide_steps() const { return k / guide_interval; }
  // CVAE settings with the horizon-derived step count applied.
  CvaeConfig cvae_resolved() const;
};

// JSON round trip. Loading starts from defaults, applies the present keys,
// and rejects unknown keys anywhere in the tree.
PipelineConfig load_config(const std::string& path);
PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& config);
void save_config(const std::string& path, const PipelineConfig& config);

}  // namespace trajcast
