#include "trajcast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "trajcast/adam.hpp"
#include "trajcast/bytes.hpp"
#include "trajcast/errors.hpp"

namespace trajcast {

namespace {

const PipelineConfig& validated(const PipelineConfig& config) {
  config.validate();
  return config;
}

}  // namespace

NeuralStage::NeuralStage(const PipelineConfig& config, uint64_t seed)
    : config_(validated(config)),
      encoder_(config.encoder, config.n, Rng(seed).split(1).seed()),
      fusion_(encoder_.output_dim(), config.gat, Rng(seed).split(2).seed()),
      guide_(config.cvae_resolved(), encoder_.output_dim() + config.gat.out_dim,
             static_cast<double>(config.guide_interval), Rng(seed).split(3).seed()) {}

Tensor NeuralStage::condition_for(const TrainingSample& sample, bool training,
                                  Rng* dropout_rng) const {
  if (static_cast<int>(sample.past.points.size()) != config_.n) {
    throw ShapeError("condition_for: past has " +
                     std::to_string(sample.past.points.size()) + " points, expected " +
                     std::to_string(config_.n));
  }
  if (sample.neighbors.size() != sample.neighbor_masks.size() ||
      sample.neighbors.size() != sample.neighbor_winds.size()) {
    throw ShapeError("condition_for: neighbor trails, masks, and winds disagree");
  }
  Tensor h_ego = encoder_.encode_agent(sample.past, sample.ego_wind, {}, training,
                                       dropout_rng);
  std::vector<Tensor> h_all{h_ego};
  for (size_t i = 0; i < sample.neighbors.size(); ++i) {
    h_all.push_back(encoder_.encode_agent(sample.neighbors[i], sample.neighbor_winds[i],
                                          sample.neighbor_masks[i], training,
                                          dropout_rng));
  }
  auto [fused, attention] = fusion_.gat_fuse(h_all);
  return build_condition(h_ego, fused[0]);
}

Tensor NeuralStage::sample_loss(const TrainingSample& sample, Rng& noise_rng,
                                bool training, Rng* dropout_rng,
                                LossBreakdown* breakdown) const {
  const int steps = config_.guide_steps();
  if (static_cast<int>(sample.guide_truth.points.size()) != steps) {
    throw ShapeError("sample_loss: guide truth has " +
                     std::to_string(sample.guide_truth.points.size()) +
                     " points, expected " + std::to_string(steps));
  }
  Tensor condition = condition_for(sample, training, dropout_rng);
  Tensor h_truth = guide_.encode_guide_truth(trajectory_to_tensor(sample.guide_truth));
  auto [mu, logvar] = guide_.cvae_encode(h_truth, condition);
  Tensor z = gaussian_sample_reparam(mu, logvar, noise_rng);
  Tensor h_dec = guide_.cvae_decode(z, condition);
  Tensor accels = guide_.mlp_accelerations(h_dec);
  const auto& past = sample.past.points;
  Tensor pred = guide_.integrate_accelerations(past[past.size() - 2], past.back(), accels);

  std::vector<double> truth_rows(static_cast<size_t>(steps) * 3);
  for (int j = 0; j < steps; ++j) {
    const Waypoint& p = sample.guide_truth.points[j];
    truth_rows[j * 3 + 0] = p.x;
    truth_rows[j * 3 + 1] = p.y;
    truth_rows[j * 3 + 2] = p.z;
  }
  Tensor truth = Tensor::from_data({steps, 3}, std::move(truth_rows));

  Tensor l_traj = mse(pred, truth);
  Tensor l_kl = kl_standard_normal(mu, logvar);
  if (breakdown) *breakdown = make_loss_breakdown(l_traj.value(), l_kl.value());
  return add(l_traj, l_kl);
}

GuideTrajectory NeuralStage::guide_for(const TrainingSample& sample, Rng& rng) const {
  NoGradGuard guard;
  Tensor condition = condition_for(sample);
  const auto& past = sample.past.points;
  return guide_.generate_guide(condition, past[past.size() - 2], past.back(), rng);
}

std::vector<Tensor> NeuralStage::parameters() {
  std::vector<Tensor> all = encoder_.parameters();
  std::vector<Tensor> f = fusion_.parameters();
  all.insert(all.end(), f.begin(), f.end());
  std::vector<Tensor> g = guide_.parameters();
  all.insert(all.end(), g.begin(), g.end());
  return all;
}

std::vector<double> NeuralStage::parameter_blob() {
  std::vector<double> blob;
  for (const Tensor& p : parameters()) {
    blob.insert(blob.end(), p.data().begin(), p.data().end());
  }
  return blob;
}

void NeuralStage::load_parameter_blob(const std::vector<double>& blob) {
  std::vector<Tensor> params = parameters();
  size_t total = 0;
  for (const Tensor& p : params) total += p.size();
  if (blob.size() != total) {
    throw ShapeError("parameter blob has " + std::to_string(blob.size()) +
                     " values, expected " + std::to_string(total));
  }
  size_t at = 0;
  for (Tensor& p : params) {
    std::copy_n(blob.begin() + static_cast<ptrdiff_t>(at), p.size(),
                p.mutable_data().begin());
    at += p.size();
  }
}

TrainResult train_nn(const PipelineConfig& config,
                     const std::vector<TrainingSample>& train_raw,
                     const std::vector<TrainingSample>& val_raw) {
  config.validate();
  if (train_raw.empty()) throw ConfigError("train_nn: no training samples");

  TrainResult result;
  result.stats = compute_stats(train_raw);
  std::vector<TrainingSample> train, val;
  train.reserve(train_raw.size());
  for (const TrainingSample& s : train_raw) train.push_back(normalize(s, result.stats));
  val.reserve(val_raw.size());
  for (const TrainingSample& s : val_raw) val.push_back(normalize(s, result.stats));

  NeuralStage stage(config, config.seed);
  std::vector<Tensor> params = stage.parameters();
  AdamState adam(params, config.learning_rate);
  Rng root(config.seed);
  Rng order_rng = root.split(21);
  Rng noise_rng = root.split(22);
  Rng dropout_rng = root.split(23);

  // Comparable across epochs: dropout off, the same latent stream every time.
  auto mean_loss = [&](const std::vector<TrainingSample>& set) {
    NoGradGuard guard;
    Rng eval_noise = root.split(777);
    double total = 0.0;
    for (const TrainingSample& s : set) total += stage.sample_loss(s, eval_noise).value();
    return total / static_cast<double>(set.size());
  };

  std::vector<double> best_blob;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  const size_t batch = static_cast<size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    order_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t stop = std::min(order.size(), start + batch);
      try {
        zero_grad(params);
        Tensor total;
        for (size_t i = start; i < stop; ++i) {
          Tensor l = stage.sample_loss(train[order[i]], noise_rng, true, &dropout_rng);
          total = total.defined() ? add(total, l) : l;
        }
        Tensor loss = scale(total, 1.0 / static_cast<double>(stop - start));
        if (!std::isfinite(loss.value())) throw NumericError("loss is not finite");
        backward(loss);
        adam_step(params, adam);
      } catch (const NumericError& e) {
        throw NumericError("train_nn: diverged at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(start / batch) + ": " + e.what());
      }
    }
    result.curves.train.push_back(mean_loss(train));
    if (!val.empty()) {
      const double vl = mean_loss(val);
      result.curves.val.push_back(vl);
      if (vl < best_val) {
        best_val = vl;
        best_epoch = epoch;
        best_blob = stage.parameter_blob();
      }
    }
  }

  if (best_epoch >= 0) {
    result.params = std::move(best_blob);
    result.best_epoch = best_epoch;
  } else {
    result.params = stage.parameter_blob();
  }
  return result;
}

GuideDataset generate_guide_dataset(const NeuralStage& stage, const NormStats& stats,
                                    const std::vector<TrainingSample>& samples_raw,
                                    Rng& rng, int guides_per_sample) {
  if (guides_per_sample < 1) {
    throw ConfigError("generate_guide_dataset: guides_per_sample must be >= 1");
  }
  GuideDataset ds;
  ds.x.reserve(samples_raw.size() * static_cast<size_t>(guides_per_sample));
  ds.y.reserve(ds.x.capacity());
  for (const TrainingSample& raw : samples_raw) {
    const TrainingSample sample = normalize(raw, stats);
    const Eigen::VectorXd y = flatten_positions(raw.future_truth, stats);
    for (int g = 0; g < guides_per_sample; ++g) {
      const Trajectory guide_km = denormalize(stage.guide_for(sample, rng), stats);
      ds.x.push_back(flatten_input(raw.past, guide_km, stats));
      ds.y.push_back(y);
    }
  }
  return ds;
}

GuideDataset build_ablation_dataset(const std::vector<TrainingSample>& samples_raw,
                                    const NormStats& stats) {
  GuideDataset ds;
  ds.x.reserve(samples_raw.size());
  ds.y.reserve(samples_raw.size());
  for (const TrainingSample& raw : samples_raw) {
    ds.x.push_back(flatten_positions(raw.past, stats));
    ds.y.push_back(flatten_positions(raw.future_truth, stats));
  }
  return ds;
}

MixtureModel train_gmm(const GuideDataset& dataset, const NormStats& stats,
                       int n_components, const EmOptions& options, uint64_t seed,
                       EmReport* report) {
  if (dataset.x.empty() || dataset.x.size() != dataset.y.size()) {
    throw ConfigError("train_gmm: dataset is empty or misaligned");
  }
  const int dx = dataset.x_dim();
  const int dy = dataset.y_dim();
  std::vector<Eigen::VectorXd> joined;
  joined.reserve(dataset.x.size());
  for (size_t i = 0; i < dataset.x.size(); ++i) {
    Eigen::VectorXd row(dx + dy);
    row << dataset.x[i], dataset.y[i];
    joined.push_back(std::move(row));
  }
  MixtureModel model = em_fit(joined, n_components, dx, seed, options, report);
  model.stats = stats;
  return model;
}

namespace {

constexpr char kStageMagic[4] = {'T', 'C', 'N', '1'};
constexpr char kGuidesMagic[4] = {'T', 'C', 'G', '1'};
constexpr char kBundleMagic[4] = {'T', 'C', 'B', '1'};
constexpr uint32_t kPipelineFormatVersion = 1;

void put_stats(std::string& buf, const NormStats& stats) {
  for (double v : stats.pos_mean) bytes::put(buf, v);
  for (double v : stats.pos_scale) bytes::put(buf, v);
  for (double v : stats.wind_mean) bytes::put(buf, v);
  for (double v : stats.wind_scale) bytes::put(buf, v);
}

NormStats take_stats(const std::string& buf, size_t& at) {
  NormStats stats;
  for (double& v : stats.pos_mean) v = bytes::take<double>(buf, at);
  for (double& v : stats.pos_scale) v = bytes::take<double>(buf, at);
  for (double& v : stats.wind_mean) v = bytes::take<double>(buf, at);
  for (double& v : stats.wind_scale) v = bytes::take<double>(buf, at);
  return stats;
}

void put_doubles(std::string& buf, const std::vector<double>& values) {
  bytes::put(buf, static_cast<uint64_t>(values.size()));
  for (double v : values) bytes::put(buf, v);
}

std::vector<double> take_doubles(const std::string& buf, size_t& at) {
  const uint64_t n = bytes::take<uint64_t>(buf, at);
  std::vector<double> values(static_cast<size_t>(n));
  for (double& v : values) v = bytes::take<double>(buf, at);
  return values;
}

void check_version_and_tail(const std::string& payload, uint32_t version, size_t at,
                            const char* kind) {
  if (version != kPipelineFormatVersion) {
    throw ParseError(std::string("unsupported ") + kind + " format version " +
                     std::to_string(version));
  }
  if (at != payload.size()) {
    throw ParseError(std::string(kind) + " payload has trailing bytes");
  }
}

}  // namespace

void save_stage(const std::string& path, const StageCheckpoint& checkpoint) {
  std::string payload;
  bytes::put(payload, kPipelineFormatVersion);
  bytes::put_str(payload, config_to_json(checkpoint.config));
  put_stats(payload, checkpoint.stats);
  put_doubles(payload, checkpoint.params);
  bytes::write_framed(path, kStageMagic, payload);
}

StageCheckpoint load_stage(const std::string& path) {
  const std::string payload = bytes::read_framed(path, kStageMagic, "stage checkpoint");
  size_t at = 0;
  const uint32_t version = bytes::take<uint32_t>(payload, at);
  StageCheckpoint checkpoint;
  checkpoint.config = config_from_json(bytes::take_str(payload, at));
  checkpoint.stats = take_stats(payload, at);
  checkpoint.params = take_doubles(payload, at);
  check_version_and_tail(payload, version, at, "stage checkpoint");
  return checkpoint;
}

void save_guides(const std::string& path, const GuideDataset& dataset,
                 const NormStats& stats) {
  if (dataset.x.size() != dataset.y.size()) {
    throw ShapeError("save_guides: dataset is misaligned");
  }
  std::string payload;
  bytes::put(payload, kPipelineFormatVersion);
  bytes::put(payload, static_cast<uint64_t>(dataset.x.size()));
  bytes::put(payload, static_cast<uint32_t>(dataset.x_dim()));
  bytes::put(payload, static_cast<uint32_t>(dataset.y_dim()));
  put_stats(payload, stats);
  for (size_t i = 0; i < dataset.x.size(); ++i) {
    for (Eigen::Index j = 0; j < dataset.x[i].size(); ++j) {
      bytes::put(payload, dataset.x[i](j));
    }
    for (Eigen::Index j = 0; j < dataset.y[i].size(); ++j) {
      bytes::put(payload, dataset.y[i](j));
    }
  }
  bytes::write_framed(path, kGuidesMagic, payload);
}

GuideDataset load_guides(const std::string& path, NormStats* stats) {
  const std::string payload = bytes::read_framed(path, kGuidesMagic, "guide dataset");
  size_t at = 0;
  const uint32_t version = bytes::take<uint32_t>(payload, at);
  const uint64_t count = bytes::take<uint64_t>(payload, at);
  const int dx = static_cast<int>(bytes::take<uint32_t>(payload, at));
  const int dy = static_cast<int>(bytes::take<uint32_t>(payload, at));
  const NormStats loaded = take_stats(payload, at);
  if (stats) *stats = loaded;
  GuideDataset ds;
  ds.x.reserve(static_cast<size_t>(count));
  ds.y.reserve(static_cast<size_t>(count));
  for (uint64_t i = 0; i < count; ++i) {
    Eigen::VectorXd x(dx), y(dy);
    for (int j = 0; j < dx; ++j) x(j) = bytes::take<double>(payload, at);
    for (int j = 0; j < dy; ++j) y(j) = bytes::take<double>(payload, at);
    ds.x.push_back(std::move(x));
    ds.y.push_back(std::move(y));
  }
  check_version_and_tail(payload, version, at, "guide dataset");
  return ds;
}

void save_bundle(const std::string& path, const ModelBundle& bundle) {
  std::string payload;
  bytes::put(payload, kPipelineFormatVersion);
  bytes::put_str(payload, config_to_json(bundle.config));
  put_stats(payload, bundle.stats);
  put_doubles(payload, bundle.nn_params);
  bytes::put_str(payload, model_to_bytes(bundle.mixture));
  bytes::write_framed(path, kBundleMagic, payload);
}

ModelBundle load_bundle(const std::string& path) {
  const std::string payload = bytes::read_framed(path, kBundleMagic, "model bundle");
  size_t at = 0;
  const uint32_t version = bytes::take<uint32_t>(payload, at);
  ModelBundle bundle;
  bundle.config = config_from_json(bytes::take_str(payload, at));
  bundle.stats = take_stats(payload, at);
  bundle.nn_params = take_doubles(payload, at);
  bundle.mixture = model_from_bytes(bytes::take_str(payload, at));
  check_version_and_tail(payload, version, at, "model bundle");
  return bundle;
}

Predictor::Predictor(ModelBundle bundle)
    : bundle_(std::move(bundle)),
      stage_(bundle_.config, bundle_.config.seed),
      conditioner_(bundle_.mixture) {
  stage_.load_parameter_blob(bundle_.nn_params);
}

std::vector<Trajectory> Predictor::predict(const TrainingSample& window_raw,
                                           int n_samples, Rng& rng) const {
  if (n_samples < 1) throw ConfigError("predict: need at least one candidate");
  const TrainingSample sample = normalize(window_raw, bundle_.stats);
  std::vector<Trajectory> out;
  out.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    const Trajectory guide_km = denormalize(stage_.guide_for(sample, rng), bundle_.stats);
    std::vector<Trajectory> one =
        predict_trajectory(conditioner_, window_raw.past, guide_km, 1, rng);
    out.push_back(std::move(one.front()));
  }
  return out;
}

AblationPredictor::AblationPredictor(MixtureModel model)
    : model_(std::move(model)), conditioner_(model_) {}

std::vector<Trajectory> AblationPredictor::predict(const TrainingSample& window_raw,
                                                   int n_samples, Rng& rng) const {
  return predict_trajectory(conditioner_, window_raw.past, n_samples, rng);
}

MethodReport evaluate_method(const std::string& name, const PredictFn& predict,
                             const std::vector<TrainingSample>& cases, int n_samples,
                             uint64_t seed, int k) {
  if (cases.empty()) throw ConfigError("evaluate_method: no evaluation cases");
  MethodReport report;
  report.method = name;
  report.records.reserve(cases.size());
  Rng root(seed);
  std::vector<double> ades, fdes;
  ades.reserve(cases.size());
  fdes.reserve(cases.size());
  for (size_t i = 0; i < cases.size(); ++i) {
    Rng case_rng = root.split(i);
    const std::vector<Trajectory> candidates = predict(cases[i], n_samples, case_rng);
    EvalRecord rec = best_of_n(candidates, cases[i].future_truth);
    ades.push_back(rec.ade);
    fdes.push_back(rec.fde);
    report.records.push_back(std::move(rec));
  }
  report.ade = aggregate(ades);
  report.fde = aggregate(fdes);
  report.mean_per_step.assign(static_cast<size_t>(k), 0.0);
  for (const EvalRecord& rec : report.records) {
    if (static_cast<int>(rec.per_step_ade.size()) != k) {
      throw ShapeError("evaluate_method: prediction covers " +
                       std::to_string(rec.per_step_ade.size()) + " steps, expected " +
                       std::to_string(k));
    }
    for (int j = 0; j < k; ++j) report.mean_per_step[j] += rec.per_step_ade[j];
  }
  for (double& v : report.mean_per_step) v /= static_cast<double>(report.records.size());
  return report;
}

}  // namespace trajcast
