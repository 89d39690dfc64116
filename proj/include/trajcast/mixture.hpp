#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "trajcast/data.hpp"
#include "trajcast/rng.hpp"

namespace trajcast {

struct GaussianComponent {
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Joint density over flattened (past + guide) inputs and flattened future
// outputs. Covariances are full; the conditioning step needs the
// cross-covariance blocks.
struct MixtureModel {
  int input_dim = 0;
  int output_dim = 0;
  std::vector<GaussianComponent> components;
  NormStats stats;

  int dim() const { return input_dim + output_dim; }
  void validate() const;
};

struct EmOptions {
  int max_iter = 200;
  double tol = 1e-6;  // relative log-likelihood improvement
  double reg = 1e-6;  // diagonal floor added to every covariance
};

struct EmReport {
  std::vector<double> log_likelihood;  // one entry per iteration
};

// Full-covariance EM. Means are seeded k-means++ style, covariances start at
// the shared data covariance, weights start uniform. Deterministic given the
// seed. input_dim records how the leading coordinates split off for later
// conditioning; output_dim becomes dim - input_dim.
MixtureModel em_fit(const std::vector<Eigen::VectorXd>& data, int n_components,
                    int input_dim, uint64_t seed, const EmOptions& options = {},
                    EmReport* report = nullptr);

// Total log density of the data under the model.
double log_likelihood(const MixtureModel& model,
                      const std::vector<Eigen::VectorXd>& data);

struct ConditionalComponent {
  double weight = 0.0;    // posterior responsibility of this component for x
  Eigen::VectorXd mean;   // conditional mean of the outputs
  Eigen::MatrixXd cov;    // conditional covariance, symmetrized
  Eigen::MatrixXd chol;   // lower Cholesky factor of cov, ready for sampling
};

struct ConditionalMixture {
  std::vector<ConditionalComponent> components;
};

// Precomputes, per component, the input-block factorization, the regression
// gain, and the conditional covariance with its Cholesky factor. Those are
// independent of the conditioning point, so repeated conditioning costs one
// triangular solve per component.
class MixtureConditioner {
 public:
  explicit MixtureConditioner(const MixtureModel& model);

  ConditionalMixture condition(const Eigen::VectorXd& x) const;
  const MixtureModel& model() const { return *model_; }

 private:
  struct Block {
    Eigen::VectorXd mean_x;
    Eigen::VectorXd mean_y;
    Eigen::LLT<Eigen::MatrixXd> llt_xx;
    double logdet_xx = 0.0;
    Eigen::MatrixXd gain;      // cross covariance times inverse input block
    Eigen::MatrixXd cond_cov;  // output block minus explained part
    Eigen::MatrixXd chol;
  };

  const MixtureModel* model_;
  std::vector<Block> blocks_;
};

// One-shot convenience that builds the conditioner internally.
ConditionalMixture condition(const MixtureModel& model, const Eigen::VectorXd& x);

// Draws a component per posterior weight, then a multivariate normal from its
// conditional Gaussian.
Eigen::VectorXd sample(const ConditionalMixture& cond, Rng& rng);

// Posterior-weighted mixture expectation of the outputs.
Eigen::VectorXd conditional_mean(const ConditionalMixture& cond);

// Flattened, normalized xyz coordinates in waypoint order. flatten_input
// concatenates past and guide; flatten_positions covers a single trajectory
// (future outputs, or the past alone for guide-free conditioning).
Eigen::VectorXd flatten_input(const Trajectory& past, const Trajectory& guide,
                              const NormStats& stats);
Eigen::VectorXd flatten_positions(const Trajectory& traj, const NormStats& stats);

// Conditions the mixture on past + guide and draws n_samples dense future
// candidates at 1 s spacing, denormalized back to kilometers.
std::vector<Trajectory> predict_trajectory(const MixtureConditioner& conditioner,
                                           const Trajectory& past,
                                           const Trajectory& guide, int n_samples,
                                           Rng& rng);
std::vector<Trajectory> predict_trajectory(const MixtureModel& model,
                                           const Trajectory& past,
                                           const Trajectory& guide, int n_samples,
                                           Rng& rng);

// Guide-free variant for models trained on past-only inputs.
std::vector<Trajectory> predict_trajectory(const MixtureConditioner& conditioner,
                                           const Trajectory& past, int n_samples,
                                           Rng& rng);

// Raw payload encoding shared by model files and bundles.
std::string model_to_bytes(const MixtureModel& model);
MixtureModel model_from_bytes(const std::string& payload);

// Binary model files: magic, version, dims, normalization stats, component
// payload, then a checksum over everything between magic and checksum.
// Round trips are bit exact.
void save_model(const std::string& path, const MixtureModel& model);
MixtureModel load_model(const std::string& path);

}  // namespace trajcast
