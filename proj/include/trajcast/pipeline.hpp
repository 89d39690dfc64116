#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trajcast/config.hpp"
#include "trajcast/encoder.hpp"
#include "trajcast/fusion.hpp"
#include "trajcast/guide.hpp"
#include "trajcast/metrics.hpp"
#include "trajcast/mixture.hpp"

namespace trajcast {

// Neural half of the pipeline: per-agent encoding, attention fusion over the
// scene, CVAE guide generation. Samples passed in must already be normalized;
// guides come back in the same normalized frame.
class NeuralStage {
 public:
  NeuralStage(const PipelineConfig& config, uint64_t seed);

  // Conditioning vector for the sample's ego: its own encoding concatenated
  // with its fused view of the scene.
  Tensor condition_for(const TrainingSample& sample, bool training = false,
                       Rng* dropout_rng = nullptr) const;

  // CVAE training loss on one sample: guide reconstruction MSE plus the KL of
  // the recognition posterior against the unit Gaussian.
  Tensor sample_loss(const TrainingSample& sample, Rng& noise_rng, bool training = false,
                     Rng* dropout_rng = nullptr, LossBreakdown* breakdown = nullptr) const;

  // Inference: draw a latent from the prior and integrate a guide for the ego.
  GuideTrajectory guide_for(const TrainingSample& sample, Rng& rng) const;

  std::vector<Tensor> parameters();
  // Flat copy of every parameter in a fixed order; load restores it in place.
  std::vector<double> parameter_blob();
  void load_parameter_blob(const std::vector<double>& blob);

  int condition_dim() const { return encoder_.output_dim() + fusion_.out_dim(); }
  const PipelineConfig& config() const { return config_; }

 private:
  PipelineConfig config_;
  AgentEncoder encoder_;
  GatFusion fusion_;
  GuideGenerator guide_;
};

struct LossCurves {
  std::vector<double> train;  // one entry per epoch
  std::vector<double> val;    // empty when no validation split was given
};

struct TrainResult {
  NormStats stats;             // computed from the training split
  std::vector<double> params;  // parameter blob at the selected epoch
  LossCurves curves;           // dropout-off losses with a fixed latent stream
  int best_epoch = -1;         // -1 when no validation set steered selection
};

// Trains the guide generator end to end on raw (kilometer) samples.
// Normalization stats come from the training split and are applied to both
// splits. With a validation split the returned parameters are the best
// validation epoch's; otherwise they are the final ones. Deterministic for a
// fixed config.
TrainResult train_nn(const PipelineConfig& config,
                     const std::vector<TrainingSample>& train_raw,
                     const std::vector<TrainingSample>& val_raw);

// Supervised pairs for the mixture: flattened conditioning inputs x and
// flattened dense futures y, both normalized.
struct GuideDataset {
  std::vector<Eigen::VectorXd> x;
  std::vector<Eigen::VectorXd> y;

  int x_dim() const { return x.empty() ? 0 : static_cast<int>(x.front().size()); }
  int y_dim() const { return y.empty() ? 0 : static_cast<int>(y.front().size()); }
};

// x = past + a generated guide. Drawing several guides per sample widens the
// mixture's view of the guide distribution.
GuideDataset generate_guide_dataset(const NeuralStage& stage, const NormStats& stats,
                                    const std::vector<TrainingSample>& samples_raw,
                                    Rng& rng, int guides_per_sample = 1);

// x = past alone; the reference the guide variant is measured against.
GuideDataset build_ablation_dataset(const std::vector<TrainingSample>& samples_raw,
                                    const NormStats& stats);

// Joins x and y rows and fits the joint mixture; stats ride along in the model.
MixtureModel train_gmm(const GuideDataset& dataset, const NormStats& stats,
                       int n_components, const EmOptions& options, uint64_t seed,
                       EmReport* report = nullptr);

// Neural checkpoint: config, normalization stats, parameter blob.
struct StageCheckpoint {
  PipelineConfig config;
  NormStats stats;
  std::vector<double> params;
};

void save_stage(const std::string& path, const StageCheckpoint& checkpoint);
StageCheckpoint load_stage(const std::string& path);

void save_guides(const std::string& path, const GuideDataset& dataset,
                 const NormStats& stats);
GuideDataset load_guides(const std::string& path, NormStats* stats = nullptr);

// Everything prediction needs in one artifact.
struct ModelBundle {
  PipelineConfig config;
  NormStats stats;
  std::vector<double> nn_params;
  MixtureModel mixture;
};

void save_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& path);

// End-to-end prediction from one trained bundle. Every candidate draws its
// own guide, so best-of-n spreads over latents as well as mixture noise.
class Predictor {
 public:
  explicit Predictor(ModelBundle bundle);
  Predictor(const Predictor&) = delete;
  Predictor& operator=(const Predictor&) = delete;

  std::vector<Trajectory> predict(const TrainingSample& window_raw, int n_samples,
                                  Rng& rng) const;
  const ModelBundle& bundle() const { return bundle_; }

 private:
  ModelBundle bundle_;
  NeuralStage stage_;
  MixtureConditioner conditioner_;
};

// Mixture conditioned on the past alone.
class AblationPredictor {
 public:
  explicit AblationPredictor(MixtureModel model);
  AblationPredictor(const AblationPredictor&) = delete;
  AblationPredictor& operator=(const AblationPredictor&) = delete;

  std::vector<Trajectory> predict(const TrainingSample& window_raw, int n_samples,
                                  Rng& rng) const;
  const MixtureModel& model() const { return model_; }

 private:
  MixtureModel model_;
  MixtureConditioner conditioner_;
};

using PredictFn =
    std::function<std::vector<Trajectory>(const TrainingSample&, int, Rng&)>;

struct MethodReport {
  std::string method;
  std::vector<EvalRecord> records;
  Aggregate ade;
  Aggregate fde;
  std::vector<double> mean_per_step;  // k entries, averaged over cases
};

// Best-of-n evaluation over every case; case i gets the reproducible stream
// split(i) of the seed.
MethodReport evaluate_method(const std::string& name, const PredictFn& predict,
                             const std::vector<TrainingSample>& cases, int n_samples,
                             uint64_t seed, int k);

}  // namespace trajcast
