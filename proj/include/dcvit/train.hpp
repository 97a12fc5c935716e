#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "dcvit/dataset.hpp"
#include "dcvit/model.hpp"

namespace dcvit {

enum class LossKind { kMse, kCrossEntropy };

struct TrainConfig {
  int epochs = 15;
  std::size_t batch_size = 32;
  std::size_t eval_batch_size = 64;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int trials = 5;
  bool same_seed_trials = false;  // every trial reuses `seed`
  double px_per_mm = 2.0;
  LossKind loss = LossKind::kMse;

  void validate() const;
};

/// Mean over batch and coordinates of the squared error.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// gradient. Parameters without a gradient are treated as zero-gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options);
void adam_step(Model& model, AdamState& state, const AdamOptions& options);

struct RmseResult {
  double rmse_px = 0.0;          // sqrt(mean squared Euclidean distance)
  double rmse_mm = 0.0;          // rmse_px / px_per_mm
  double mean_distance_mm = 0.0; // mean Euclidean distance, secondary reading
  std::vector<double> distances_px;
};

RmseResult rmse_from_predictions(std::span<const Point2> predictions,
                                 std::span<const Point2> labels, double px_per_mm);

/// [B, 1, C, T] input tensor for the given sample indices.
Tensor make_batch(const Dataset& data, std::span<const std::size_t> indices);
/// [B, 2] label tensor (x, y pixels).
Tensor label_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Eval-mode outputs of the model, [n, outputs], computed in batches.
std::vector<std::vector<double>> predict_outputs(const Model& model, const Dataset& data,
                                                 std::size_t batch_size = 64);
/// Predicted positions: regression outputs directly, or the centroid of the
/// arg-max class for a classification head.
std::vector<Point2> predict_positions(const Model& model, const Dataset& data,
                                      std::span<const Point2> class_centroids = {},
                                      std::size_t batch_size = 64);

RmseResult evaluate_rmse(const Model& model, const Dataset& data, double px_per_mm,
                         std::span<const Point2> class_centroids = {},
                         std::size_t batch_size = 64);

/// Mean label position per cluster id over `data`; k entries. Clusters with
/// no samples fall back to the overall label mean.
std::vector<Point2> class_centroids(const Dataset& data, std::size_t k);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_rmse_mm = 0.0;
};

struct TrainRun {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  ModelState best_state;
  double test_rmse_mm = 0.0;
  double test_mean_distance_mm = 0.0;
  std::vector<double> test_distances_px;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Replaces the validation evaluation; receives the model after `epoch`.
using ValidationFn = std::function<double(const Model&, int epoch)>;

/// 1-based index of the first minimum; NaN scores never win.
int select_best_epoch(std::span<const double> scores);

/// Trains for cfg.epochs, scores validation after each epoch and leaves
/// `model` holding the best-validation weights, on which test is evaluated.
TrainRun train_loop(Model& model, const Splits& splits, const TrainConfig& cfg,
                    const ValidationFn& validation = {});

struct TrialSummary {
  std::vector<double> test_rmse_mm;
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::vector<TrainRun> runs;
};

/// Population mean and standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

/// Independent trials with seeds base_seed + i (model init and training).
/// Runs up to `threads` trials concurrently; 0 means DCVIT_THREADS or the
/// hardware concurrency.
TrialSummary multi_trial(const ModelConfig& model_config, const Splits& splits,
                         const TrainConfig& cfg, std::uint64_t base_seed,
                         unsigned threads = 0);

/// epoch,train_loss,val_rmse_mm rows followed by a '#' summary line.
std::string metrics_csv(const TrainRun& run);

}  // namespace dcvit
