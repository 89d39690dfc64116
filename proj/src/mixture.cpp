#include "trajcast/mixture.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <string>

#include "trajcast/bytes.hpp"
#include "trajcast/errors.hpp"

namespace trajcast {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr double kWeightFloor = 1e-12;

void symmetrize(Eigen::MatrixXd& m) {
  m = 0.5 * (m + m.transpose()).eval();
}

double logdet_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

// Lower-triangular factor with an escalating diagonal jitter before giving up.
Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& m, const char* what,
                                       int component) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  const double base = std::max(m.diagonal().array().abs().maxCoeff(), 1.0);
  for (double jitter = 1e-12; jitter <= 1e-4; jitter *= 100.0) {
    Eigen::MatrixXd padded = m;
    padded.diagonal().array() += jitter * base;
    llt.compute(padded);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericError(std::string(what) + ": covariance of component " +
                     std::to_string(component) + " is not positive definite");
}

// Rows of `points` against one Gaussian: log N(x | mean, cov) for every row.
Eigen::VectorXd log_gaussian_rows(const Eigen::MatrixXd& points,
                                  const Eigen::VectorXd& mean,
                                  const Eigen::LLT<Eigen::MatrixXd>& llt,
                                  double logdet) {
  const Eigen::Index d = mean.size();
  Eigen::MatrixXd centered_t = (points.rowwise() - mean.transpose()).transpose();
  Eigen::MatrixXd u = llt.matrixL().solve(centered_t);
  Eigen::VectorXd mah = u.colwise().squaredNorm().transpose();
  return (-0.5 * (static_cast<double>(d) * kLog2Pi + logdet + mah.array())).matrix();
}

std::vector<int> kmeanspp_centers(const Eigen::MatrixXd& points, int k, Rng& rng) {
  const int n = static_cast<int>(points.rows());
  std::vector<int> centers;
  centers.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n))));
  Eigen::VectorXd best_d2 =
      (points.rowwise() - points.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = best_d2.sum();
    int pick;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += best_d2(i);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      // All points coincide with an existing center; any choice works.
      pick = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    }
    centers.push_back(pick);
    best_d2 = best_d2.cwiseMin(
        (points.rowwise() - points.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace

void MixtureModel::validate() const {
  if (components.empty()) throw ConfigError("mixture model has no components");
  if (input_dim < 0 || output_dim < 0 || dim() <= 0) {
    throw ConfigError("mixture model dimensions must be positive");
  }
  double total = 0.0;
  for (size_t k = 0; k < components.size(); ++k) {
    const GaussianComponent& c = components[k];
    if (!(c.weight > 0.0) || c.weight > 1.0 || !std::isfinite(c.weight)) {
      throw ConfigError("component " + std::to_string(k) +
                        " weight must lie in (0, 1]");
    }
    if (c.mean.size() != dim() || c.cov.rows() != dim() || c.cov.cols() != dim()) {
      throw ShapeError("component " + std::to_string(k) + " has dimension " +
                       std::to_string(c.mean.size()) + ", model expects " +
                       std::to_string(dim()));
    }
    if ((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
      throw NumericError("component " + std::to_string(k) +
                         " covariance is not symmetric");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("component weights sum to " + std::to_string(total) +
                      ", expected 1");
  }
}

MixtureModel em_fit(const std::vector<Eigen::VectorXd>& data, int n_components,
                    int input_dim, uint64_t seed, const EmOptions& options,
                    EmReport* report) {
  if (data.empty()) throw ConfigError("em_fit: dataset is empty");
  if (n_components < 1) throw ConfigError("em_fit: need at least one component");
  const int n = static_cast<int>(data.size());
  if (n_components > n) {
    throw ConfigError("em_fit: " + std::to_string(n_components) +
                      " components exceed " + std::to_string(n) + " data points");
  }
  if (!(options.reg > 0.0)) throw ConfigError("em_fit: regularization must be > 0");
  if (options.max_iter < 1) throw ConfigError("em_fit: max_iter must be >= 1");
  const int d = static_cast<int>(data[0].size());
  if (d < 1) throw ShapeError("em_fit: zero-dimensional data");
  if (input_dim < 1 || input_dim > d) {
    throw ConfigError("em_fit: input_dim " + std::to_string(input_dim) +
                      " outside [1, " + std::to_string(d) + "]");
  }

  Eigen::MatrixXd points(n, d);
  for (int i = 0; i < n; ++i) {
    if (data[i].size() != d) {
      throw ShapeError("em_fit: point " + std::to_string(i) + " has dimension " +
                       std::to_string(data[i].size()) + ", expected " +
                       std::to_string(d));
    }
    if (!data[i].allFinite()) {
      throw NumericError("em_fit: point " + std::to_string(i) + " is not finite");
    }
    points.row(i) = data[i].transpose();
  }

  const Eigen::RowVectorXd grand_mean = points.colwise().mean();
  Eigen::MatrixXd centered = points.rowwise() - grand_mean;
  Eigen::MatrixXd shared_cov = (centered.transpose() * centered) / double(n);
  symmetrize(shared_cov);
  shared_cov.diagonal().array() += options.reg;

  Rng rng(seed);
  const std::vector<int> centers = kmeanspp_centers(points, n_components, rng);

  const int kc = n_components;
  std::vector<double> weights(kc, 1.0 / kc);
  std::vector<Eigen::VectorXd> means(kc);
  std::vector<Eigen::MatrixXd> covs(kc, shared_cov);
  for (int k = 0; k < kc; ++k) means[k] = points.row(centers[k]).transpose();

  Eigen::MatrixXd logp(n, kc);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iter; ++iter) {
    for (int k = 0; k < kc; ++k) {
      Eigen::LLT<Eigen::MatrixXd> llt = robust_llt(covs[k], "em_fit", k);
      logp.col(k) = log_gaussian_rows(points, means[k], llt, logdet_from_llt(llt));
      logp.col(k).array() += std::log(weights[k]);
    }
    const Eigen::VectorXd row_max = logp.rowwise().maxCoeff();
    Eigen::MatrixXd resp = (logp.colwise() - row_max).array().exp();
    const Eigen::VectorXd row_sum = resp.rowwise().sum();
    const double ll = (row_max.array() + row_sum.array().log()).sum();
    resp.array().colwise() /= row_sum.array();
    if (report) report->log_likelihood.push_back(ll);
    if (iter > 0 && ll - prev_ll < options.tol * (1.0 + std::abs(ll))) break;
    prev_ll = ll;

    const Eigen::VectorXd occupancy = resp.colwise().sum().transpose();
    for (int k = 0; k < kc; ++k) {
      if (occupancy(k) < 1e-10) {
        // A starved component keeps its mean and resets to the shared shape.
        covs[k] = shared_cov;
        weights[k] = kWeightFloor;
        continue;
      }
      means[k] = (resp.col(k).transpose() * points).transpose() / occupancy(k);
      Eigen::MatrixXd local = points.rowwise() - means[k].transpose();
      Eigen::MatrixXd weighted = local.array().colwise() * resp.col(k).array();
      covs[k] = (weighted.transpose() * local) / occupancy(k);
      symmetrize(covs[k]);
      covs[k].diagonal().array() += options.reg;
      weights[k] = occupancy(k) / double(n);
    }
    double total = 0.0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
  }

  MixtureModel model;
  model.input_dim = input_dim;
  model.output_dim = d - input_dim;
  model.components.resize(kc);
  for (int k = 0; k < kc; ++k) {
    model.components[k] = {weights[k], means[k], covs[k]};
  }
  return model;
}

double log_likelihood(const MixtureModel& model,
                      const std::vector<Eigen::VectorXd>& data) {
  model.validate();
  if (data.empty()) return 0.0;
  const int n = static_cast<int>(data.size());
  const int d = model.dim();
  Eigen::MatrixXd points(n, d);
  for (int i = 0; i < n; ++i) {
    if (data[i].size() != d) {
      throw ShapeError("log_likelihood: point dimension " +
                       std::to_string(data[i].size()) + ", model expects " +
                       std::to_string(d));
    }
    points.row(i) = data[i].transpose();
  }
  const int kc = static_cast<int>(model.components.size());
  Eigen::MatrixXd logp(n, kc);
  for (int k = 0; k < kc; ++k) {
    const GaussianComponent& c = model.components[k];
    Eigen::LLT<Eigen::MatrixXd> llt = robust_llt(c.cov, "log_likelihood", k);
    logp.col(k) = log_gaussian_rows(points, c.mean, llt, logdet_from_llt(llt));
    logp.col(k).array() += std::log(c.weight);
  }
  const Eigen::VectorXd row_max = logp.rowwise().maxCoeff();
  const Eigen::VectorXd row_sum =
      (logp.colwise() - row_max).array().exp().rowwise().sum();
  return (row_max.array() + row_sum.array().log()).sum();
}

MixtureConditioner::MixtureConditioner(const MixtureModel& model) : model_(&model) {
  model.validate();
  if (model.output_dim < 1) {
    throw ConfigError("conditioning requires at least one output dimension");
  }
  const int dx = model.input_dim;
  const int dy = model.output_dim;
  blocks_.reserve(model.components.size());
  for (size_t k = 0; k < model.components.size(); ++k) {
    const GaussianComponent& c = model.components[k];
    Block b;
    b.mean_x = c.mean.head(dx);
    b.mean_y = c.mean.tail(dy);
    const Eigen::MatrixXd cov_xx = c.cov.topLeftCorner(dx, dx);
    const Eigen::MatrixXd cov_xy = c.cov.topRightCorner(dx, dy);
    const Eigen::MatrixXd cov_yy = c.cov.bottomRightCorner(dy, dy);
    b.llt_xx = robust_llt(cov_xx, "condition", static_cast<int>(k));
    b.logdet_xx = logdet_from_llt(b.llt_xx);
    b.gain = b.llt_xx.solve(cov_xy).transpose();
    b.cond_cov = cov_yy - b.gain * cov_xy;
    symmetrize(b.cond_cov);
    b.chol = robust_llt(b.cond_cov, "sample", static_cast<int>(k)).matrixL();
    blocks_.push_back(std::move(b));
  }
}

ConditionalMixture MixtureConditioner::condition(const Eigen::VectorXd& x) const {
  const int dx = model_->input_dim;
  if (x.size() != dx) {
    throw ShapeError("condition: input has dimension " + std::to_string(x.size()) +
                     ", model expects " + std::to_string(dx));
  }
  if (!x.allFinite()) throw NumericError("condition: input is not finite");

  const size_t kc = blocks_.size();
  std::vector<double> log_w(kc);
  std::vector<double> mahalanobis(kc);
  double max_log = -std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < kc; ++k) {
    const Block& b = blocks_[k];
    const Eigen::VectorXd u = b.llt_xx.matrixL().solve(x - b.mean_x);
    mahalanobis[k] = u.squaredNorm();
    log_w[k] = std::log(model_->components[k].weight) -
               0.5 * (dx * kLog2Pi + b.logdet_xx + mahalanobis[k]);
    if (log_w[k] > max_log) max_log = log_w[k];
  }

  std::vector<double> weights(kc);
  if (std::isfinite(max_log)) {
    double total = 0.0;
    for (size_t k = 0; k < kc; ++k) {
      weights[k] = std::exp(log_w[k] - max_log);
      total += weights[k];
    }
    for (double& w : weights) w /= total;
  } else {
    // Every density underflowed; fall back to the nearest component.
    size_t nearest = 0;
    for (size_t k = 1; k < kc; ++k) {
      if (mahalanobis[k] < mahalanobis[nearest]) nearest = k;
    }
    std::cerr << "condition: all component densities underflowed, "
                 "assigning the nearest component\n";
    weights[nearest] = 1.0;
  }

  ConditionalMixture cond;
  cond.components.resize(kc);
  for (size_t k = 0; k < kc; ++k) {
    const Block& b = blocks_[k];
    ConditionalComponent& out = cond.components[k];
    out.weight = weights[k];
    out.mean = b.mean_y + b.gain * (x - b.mean_x);
    out.cov = b.cond_cov;
    out.chol = b.chol;
  }
  return cond;
}

ConditionalMixture condition(const MixtureModel& model, const Eigen::VectorXd& x) {
  return MixtureConditioner(model).condition(x);
}

Eigen::VectorXd sample(const ConditionalMixture& cond, Rng& rng) {
  if (cond.components.empty()) {
    throw ShapeError("sample: conditional mixture is empty");
  }
  const double u = rng.uniform();
  const ConditionalComponent* chosen = &cond.components.back();
  double acc = 0.0;
  for (const ConditionalComponent& c : cond.components) {
    acc += c.weight;
    if (u < acc) {
      chosen = &c;
      break;
    }
  }
  Eigen::VectorXd eps(chosen->mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  return chosen->mean + chosen->chol * eps;
}

Eigen::VectorXd conditional_mean(const ConditionalMixture& cond) {
  if (cond.components.empty()) {
    throw ShapeError("conditional_mean: conditional mixture is empty");
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(cond.components[0].mean.size());
  for (const ConditionalComponent& c : cond.components) {
    mean += c.weight * c.mean;
  }
  return mean;
}

namespace {

void append_normalized(const Trajectory& traj, const NormStats& stats,
                       Eigen::VectorXd& out, Eigen::Index& at) {
  for (const Waypoint& p : traj.points) {
    out(at++) = (p.x - stats.pos_mean[0]) / stats.pos_scale[0];
    out(at++) = (p.y - stats.pos_mean[1]) / stats.pos_scale[1];
    out(at++) = (p.z - stats.pos_mean[2]) / stats.pos_scale[2];
  }
}

}  // namespace

Eigen::VectorXd flatten_input(const Trajectory& past, const Trajectory& guide,
                              const NormStats& stats) {
  if (past.points.empty() || guide.points.empty()) {
    throw ShapeError("flatten_input: past and guide must be nonempty");
  }
  Eigen::VectorXd out(3 * (past.points.size() + guide.points.size()));
  Eigen::Index at = 0;
  append_normalized(past, stats, out, at);
  append_normalized(guide, stats, out, at);
  return out;
}

Eigen::VectorXd flatten_positions(const Trajectory& traj, const NormStats& stats) {
  if (traj.points.empty()) throw ShapeError("flatten_positions: empty trajectory");
  Eigen::VectorXd out(3 * traj.points.size());
  Eigen::Index at = 0;
  append_normalized(traj, stats, out, at);
  return out;
}

namespace {

std::vector<Trajectory> draw_candidates(const MixtureConditioner& conditioner,
                                        const Eigen::VectorXd& x,
                                        const Trajectory& past, int n_samples,
                                        Rng& rng) {
  if (n_samples < 1) throw ConfigError("predict_trajectory: n_samples must be >= 1");
  const MixtureModel& model = conditioner.model();
  if (model.output_dim % 3 != 0) {
    throw ShapeError("predict_trajectory: output dimension " +
                     std::to_string(model.output_dim) +
                     " is not divisible by 3 coordinates");
  }
  if (x.size() != model.input_dim) {
    throw ShapeError("predict_trajectory: input flattens to " +
                     std::to_string(x.size()) + " values, model expects " +
                     std::to_string(model.input_dim));
  }
  const ConditionalMixture cond = conditioner.condition(x);
  const int steps = model.output_dim / 3;
  const double t0 = past.points.back().t;
  const NormStats& stats = model.stats;

  std::vector<Trajectory> out;
  out.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    const Eigen::VectorXd y = sample(cond, rng);
    Trajectory traj;
    traj.agent_id = past.agent_id;
    traj.points.reserve(steps);
    for (int j = 0; j < steps; ++j) {
      Waypoint p;
      p.t = t0 + (j + 1) * 1.0;
      p.x = y(3 * j + 0) * stats.pos_scale[0] + stats.pos_mean[0];
      p.y = y(3 * j + 1) * stats.pos_scale[1] + stats.pos_mean[1];
      p.z = y(3 * j + 2) * stats.pos_scale[2] + stats.pos_mean[2];
      traj.points.push_back(p);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace

std::vector<Trajectory> predict_trajectory(const MixtureConditioner& conditioner,
                                           const Trajectory& past,
                                           const Trajectory& guide, int n_samples,
                                           Rng& rng) {
  const Eigen::VectorXd x = flatten_input(past, guide, conditioner.model().stats);
  return draw_candidates(conditioner, x, past, n_samples, rng);
}

std::vector<Trajectory> predict_trajectory(const MixtureModel& model,
                                           const Trajectory& past,
                                           const Trajectory& guide, int n_samples,
                                           Rng& rng) {
  return predict_trajectory(MixtureConditioner(model), past, guide, n_samples, rng);
}

std::vector<Trajectory> predict_trajectory(const MixtureConditioner& conditioner,
                                           const Trajectory& past, int n_samples,
                                           Rng& rng) {
  const Eigen::VectorXd x = flatten_positions(past, conditioner.model().stats);
  return draw_candidates(conditioner, x, past, n_samples, rng);
}

namespace {

constexpr char kMagic[4] = {'T', 'C', 'M', '1'};
constexpr uint32_t kFormatVersion = 1;

using bytes::put;
using bytes::take;

}  // namespace

std::string model_to_bytes(const MixtureModel& model) {
  model.validate();
  std::string payload;
  put(payload, kFormatVersion);
  put(payload, static_cast<uint32_t>(model.components.size()));
  put(payload, static_cast<uint32_t>(model.input_dim));
  put(payload, static_cast<uint32_t>(model.output_dim));
  for (double v : model.stats.pos_mean) put(payload, v);
  for (double v : model.stats.pos_scale) put(payload, v);
  for (double v : model.stats.wind_mean) put(payload, v);
  for (double v : model.stats.wind_scale) put(payload, v);
  const int d = model.dim();
  for (const GaussianComponent& c : model.components) {
    put(payload, c.weight);
    for (int i = 0; i < d; ++i) put(payload, c.mean(i));
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) put(payload, c.cov(i, j));
    }
  }
  return payload;
}

MixtureModel model_from_bytes(const std::string& payload) {
  size_t at = 0;
  const uint32_t version = take<uint32_t>(payload, at);
  if (version != kFormatVersion) {
    throw ParseError("unsupported mixture model format version " +
                     std::to_string(version));
  }
  const uint32_t kc = take<uint32_t>(payload, at);
  MixtureModel model;
  model.input_dim = static_cast<int>(take<uint32_t>(payload, at));
  model.output_dim = static_cast<int>(take<uint32_t>(payload, at));
  for (double& v : model.stats.pos_mean) v = take<double>(payload, at);
  for (double& v : model.stats.pos_scale) v = take<double>(payload, at);
  for (double& v : model.stats.wind_mean) v = take<double>(payload, at);
  for (double& v : model.stats.wind_scale) v = take<double>(payload, at);
  const int d = model.dim();
  if (d <= 0 || kc == 0) throw ParseError("mixture model file has empty shape");
  model.components.resize(kc);
  for (GaussianComponent& c : model.components) {
    c.weight = take<double>(payload, at);
    c.mean.resize(d);
    for (int i = 0; i < d; ++i) c.mean(i) = take<double>(payload, at);
    c.cov.resize(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) c.cov(i, j) = take<double>(payload, at);
    }
  }
  if (at != payload.size()) {
    throw ParseError("mixture model file has trailing bytes");
  }
  model.validate();
  return model;
}

void save_model(const std::string& path, const MixtureModel& model) {
  bytes::write_framed(path, kMagic, model_to_bytes(model));
}

MixtureModel load_model(const std::string& path) {
  return model_from_bytes(bytes::read_framed(path, kMagic, "mixture model"));
}

}  // namespace trajcast
