#pragma once

// Losses, the training loop and evaluation metrics for the learned operator.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pclap/dataset.hpp"
#include "pclap/ini.hpp"
#include "pclap/model.hpp"

namespace pclap {

inline constexpr double kLossEpsilon = 0.1;
inline constexpr double kMassLossWeight = 0.1;
inline constexpr double kEvalClip = 1.0;

// ---- losses ----

// w_f = 1 / (mean_i |gt_applied(i, f)| + 0.1)
std::vector<double> probe_weights(const Matrix& gt_applied);

// Per-probe ||M^-1 L f - M_gt^-1 L_gt f||^2.
std::vector<double> laplacian_residuals(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes);
double loss_laplacian(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes);
double loss_mass(std::span<const double> pred_mass, std::span<const double> gt_mass);

struct LossBreakdown {
  double laplacian = 0.0;
  double mass = 0.0;
  double total = 0.0;
  std::vector<double> probe_weights;
};

struct LossVars {
  ad::Var total, laplacian, mass;
  std::vector<double> probe_weights;
};

// Differentiable total loss of a model output against a ground-truth pair.
LossVars loss_terms(const ModelOutput& out, const GraphInput& input, const LaplacianPair& gt, const ProbeSet& probes,
                    double mass_weight = kMassLossWeight);

// ---- samples ----

struct TrainingSample {
  std::string name;
  std::string category;
  std::uint64_t seed = 0;
  PointCloud cloud;
  std::shared_ptr<const KnnGraph> graph;
  GraphInput input;
  LaplacianPair gt;
  ProbeSet spectral;  // cached eigenfunction probes
  ProbeSet eval;      // full evaluation set
};

TrainingSample make_training_sample(const ShapeRecord& record, const ModelConfig& config);
std::vector<TrainingSample> make_training_samples(std::span<const ShapeRecord* const> records,
                                                  const ModelConfig& config);

// Spectral probes (first `spectral_count` cached columns) plus 14 fresh
// spatial sinusoids seeded by (sample seed, epoch).
ProbeSet training_probes(const TrainingSample& sample, std::size_t spectral_count, std::size_t epoch);

// ---- training ----

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 150;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double mass_weight = kMassLossWeight;
  std::size_t spectral_probes = 32;
  std::size_t checkpoint_every = 25;
  std::size_t eval_every = 5;
  ModelConfig model;

  static TrainConfig paper();
  void validate() const;
  static TrainConfig from_ini(const IniFile& ini);
  void to_ini(IniFile& ini) const;
  std::string to_json() const;
};

// lr0 (1 - epoch / epochs)
double learning_rate_at(double lr0, std::size_t epoch, std::size_t epochs);

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double laplacian = 0.0;  // means over the epoch's samples
  double mass = 0.0;
  double total = 0.0;
  double heldout_mse = -1.0;  // -1 when not evaluated this epoch
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;  // mean total per optimizer step
};

struct TrainOptions {
  // When set: train_log.csv, checkpoints/epoch_NNNN and checkpoint/ go here.
  std::filesystem::path out_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train(LaplacianModel& model, std::span<const TrainingSample> train_set,
                  std::span<const TrainingSample> heldout, const TrainConfig& config,
                  const TrainOptions& options = {});

// ---- evaluation ----

struct Evaluation {
  std::vector<double> probe_mse;  // clipped per-probe per-point MSE
  std::size_t evaluations = 0;
  std::size_t exceeded = 0;  // unclipped MSE above the clip
  double mse = 0.0;
  double r_gt1 = 0.0;
  double sparsity = 0.0;
};

Evaluation evaluate(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes);
// Mean of per-sample MSE and sparsity; r_gt1 pooled over all evaluations.
Evaluation combine(std::span<const Evaluation> parts);

}  // namespace pclap
