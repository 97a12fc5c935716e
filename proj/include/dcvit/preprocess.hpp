#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dcvit/dataset.hpp"

namespace dcvit {

// ---------------------------------------------------------------------------
// K-means label reconciliation

struct CentroidSet {
  std::vector<Point2> centroids;
  double inertia = 0.0;  // sum of squared distances to the assigned centroid
  int iterations_run = 0;
  std::vector<double> inertia_trace;  // one entry per assignment step
  std::vector<std::uint32_t> assignment;

  std::size_t k() const { return centroids.size(); }
  /// Centroids placed at known positions, no fitting.
  static CentroidSet from_points(std::vector<Point2> points);
};

enum class KMeansInit { kGivenCenters, kPlusPlus };

struct KMeansOptions {
  std::size_t k = 25;
  int max_iter = 300;
  double tol = 1e-6;  // pixels of maximum centroid shift
  KMeansInit init = KMeansInit::kPlusPlus;
  std::vector<Point2> initial_centers;  // used with kGivenCenters
  std::uint64_t seed = 0;
};

/// Index of the nearest centroid by squared Euclidean distance; ties go to
/// the lower index.
std::uint32_t nearest_centroid(std::span<const Point2> centroids, Point2 p);

/// k-means++ seeding.
std::vector<Point2> kmeans_plus_plus(std::span<const Point2> points, std::size_t k,
                                     std::uint64_t seed);

/// Lloyd iterations until the largest centroid shift drops below `tol` or
/// `max_iter` is reached. An empty cluster is re-seeded at the point farthest
/// from its assigned centroid.
CentroidSet kmeans_fit(std::span<const Point2> points, const KMeansOptions& options);

/// Label positions of a dataset.
std::vector<Point2> label_points(const Dataset& data);

/// Moves every label onto its nearest centroid and records the cluster id.
/// The original label stays in orig_x_px / orig_y_px.
Dataset relabel(const Dataset& data, const CentroidSet& centroids);

// ---------------------------------------------------------------------------
// Synthetic Large-Grid data

struct SynthConfig {
  double screen_w = 800.0;
  double screen_h = 600.0;
  std::size_t grid_cols = 5;
  std::size_t grid_rows = 5;
  double margin_x = 100.0;
  double margin_y = 100.0;
  double center_weight = 3.0;
  double jitter_radius_px = 40.0;
  std::size_t n_samples = 1000;
  std::uint32_t n_participants = 27;
  std::uint32_t channels = 129;
  std::uint32_t timesteps = 500;
  double noise_std = 10.0;
  double signal_gain = 20.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Target positions, row-major from the top-left.
std::vector<Point2> grid_targets(const SynthConfig& cfg);

/// Samples a target (center weighted), labels it with uniform-disk jitter and
/// synthesizes EEG as a fixed linear image of the target plus Gaussian noise.
/// When `target_ids` is given it receives each sample's index into
/// grid_targets(cfg).
Dataset generate_synthetic(const SynthConfig& cfg,
                           std::vector<std::uint32_t>* target_ids = nullptr);

// ---------------------------------------------------------------------------
// Splitting

/// Participant-disjoint train/val/test split. Participants are shuffled
/// with `seed` and apportioned by largest remainder.
std::array<Dataset, 3> split_dataset(const Dataset& data, std::array<double, 3> fractions,
                                     std::uint64_t seed);

/// Largest-remainder apportionment of `n` items, each part at least one.
std::array<std::size_t, 3> apportion(std::size_t n, std::array<double, 3> fractions);

}  // namespace dcvit
