#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcvit/dataset.hpp"
#include "dcvit/tensor.hpp"

namespace dcvit {

/// k x k counts; row = true class, column = predicted class.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * k + predicted]; }
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;
  std::uint64_t total() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::uint32_t> true_ids,
                                 std::span<const std::uint32_t> pred_ids, std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  // False when the denominator was zero; the metric is then reported as 0.
  bool precision_defined = true;
  bool recall_defined = true;
};

struct ClassReport {
  std::vector<ClassMetrics> classes;
  double accuracy = 0.0;

  /// Fixed-width table: class, precision, recall, f1-score, support.
  std::string to_text() const;
  std::string to_csv() const;
};

ClassReport class_report(const ConfusionMatrix& cm);

std::string confusion_csv(const ConfusionMatrix& cm);
/// Heat map of the counts, true classes down, predicted across.
std::string confusion_svg(const ConfusionMatrix& cm);

struct ScatterOptions {
  double threshold_mm = 55.4;
  double px_per_mm = 2.0;
  double screen_w = 800.0;
  double screen_h = 600.0;
};

struct ScatterResult {
  std::string svg;
  std::string csv;  // x,y,distance_mm,flag with x,y the true position
  std::vector<bool> within;  // distance_mm <= threshold_mm
  std::size_t blue = 0;
  std::size_t red = 0;
};

/// Test-error scatter: one marker per true position, blue within the
/// threshold (inclusive) and red beyond, with a faint line to the prediction.
ScatterResult error_scatter(std::span<const Point2> predictions, std::span<const Point2> labels,
                            const ScatterOptions& options = {});

struct HeatmapResult {
  std::vector<double> normalized;  // channels x timesteps in [0, 1]
  std::string svg;
  std::string csv;
};

/// Per-sample min-max normalized raster of one EEG window. A constant
/// window maps to 0.5 everywhere.
HeatmapResult eeg_heatmap(std::span<const float> sample, std::size_t channels,
                          std::size_t timesteps);

struct Selection {
  std::size_t index = 0;
  std::size_t class_id = 0;
  double confidence = 0.0;
};

/// Rows of `logits` [n, k] whose maximum softmax probability is >= threshold.
std::vector<Selection> high_confidence_select(const Tensor& logits, double threshold = 0.9);

}  // namespace dcvit
