#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "dcvit/error.hpp"
#include "dcvit/preprocess.hpp"
#include "oracles.hpp"

using namespace dcvit;

namespace {

std::vector<Point2> random_points(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 800.0);
  std::vector<Point2> pts(n);
  for (Point2& p : pts) p = {u(rng), u(rng)};
  return pts;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.channels = 4;
  c.timesteps = 10;
  c.n_samples = 400;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(KMeans, NearestCentroidBreaksTiesTowardLowerIndex) {
  const std::vector<Point2> c{{0, 0}, {2, 0}, {1, 5}};
  EXPECT_EQ(nearest_centroid(c, {1, 0}), 0u);
  EXPECT_EQ(nearest_centroid(c, {1.5, 0}), 1u);
  const std::vector<Point2> same{{3, 3}, {3, 3}};
  EXPECT_EQ(nearest_centroid(same, {0, 0}), 0u);
}

TEST(KMeans, MatchesBruteForceLloyd) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 5 + rng() % 200;
    const std::size_t k = 1 + rng() % std::min<std::size_t>(8, n);
    const auto pts = random_points(rng, n);
    KMeansOptions o;
    o.k = k;
    o.init = KMeansInit::kGivenCenters;
    o.initial_centers.assign(pts.begin(), pts.begin() + static_cast<long>(k));
    const CentroidSet got = kmeans_fit(pts, o);
    const auto want = oracle::brute_lloyd(pts, o.initial_centers, o.max_iter, o.tol);
    ASSERT_EQ(got.k(), k);
    EXPECT_EQ(got.assignment, want.assignment);
    EXPECT_EQ(got.iterations_run, want.iterations);
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_NEAR(got.centroids[j].x, want.centers[j].x, 1e-9);
      EXPECT_NEAR(got.centroids[j].y, want.centers[j].y, 1e-9);
    }
    EXPECT_NEAR(got.inertia, want.inertia.back(), 1e-6 * (1 + want.inertia.back()));
  }
}

TEST(KMeans, InertiaNeverIncreases) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(rng, 150);
    KMeansOptions o;
    o.k = 6;
    o.seed = trial;
    const CentroidSet s = kmeans_fit(pts, o);
    ASSERT_GE(s.inertia_trace.size(), 2u);
    for (std::size_t i = 1; i < s.inertia_trace.size(); ++i)
      EXPECT_LE(s.inertia_trace[i], s.inertia_trace[i - 1] * (1 + 1e-12));
    EXPECT_DOUBLE_EQ(s.inertia, s.inertia_trace.back());
  }
}

TEST(KMeans, EmptyClusterMovesToFarthestPoint) {
  const std::vector<Point2> pts{{0, 0}, {1, 0}, {10, 0}, {11, 0}};
  KMeansOptions o;
  o.k = 3;
  o.init = KMeansInit::kGivenCenters;
  o.initial_centers = {{0.5, 0}, {100, 0}, {10.5, 0}};
  const CentroidSet s = kmeans_fit(pts, o);
  EXPECT_EQ(s.centroids[0], (Point2{1, 0}));
  EXPECT_EQ(s.centroids[1], (Point2{0, 0}));
  EXPECT_EQ(s.centroids[2], (Point2{10.5, 0}));
  EXPECT_EQ(s.assignment, (std::vector<std::uint32_t>{1, 0, 2, 2}));
  EXPECT_DOUBLE_EQ(s.inertia, 0.5);
  EXPECT_EQ(s.iterations_run, 3);
}

TEST(KMeans, TwoSymmetricClusters) {
  const std::vector<Point2> pts{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  KMeansOptions o;
  o.k = 2;
  o.seed = 5;
  const CentroidSet s = kmeans_fit(pts, o);
  std::vector<Point2> c = s.centroids;
  std::sort(c.begin(), c.end(), [](Point2 a, Point2 b) { return a.x < b.x; });
  EXPECT_EQ(c[0], (Point2{0, 0.5}));
  EXPECT_EQ(c[1], (Point2{10, 0.5}));
  EXPECT_DOUBLE_EQ(s.inertia, 1.0);
}

TEST(KMeans, DistinctLocationsAreTheirOwnCentroids) {
  const std::vector<Point2> pts{{1, 2}, {5, 5}, {9, 1}, {1, 2}, {5, 5}};
  KMeansOptions o;
  o.k = 3;
  const CentroidSet s = kmeans_fit(pts, o);
  EXPECT_DOUBLE_EQ(s.inertia, 0.0);
  for (const Point2& p : pts) EXPECT_EQ(s.centroids[nearest_centroid(s.centroids, p)], p);
}

TEST(KMeans, StopsAtMaxIterOrTolerance) {
  std::mt19937_64 rng(1);
  const auto pts = random_points(rng, 100);
  KMeansOptions o;
  o.k = 5;
  o.max_iter = 1;
  EXPECT_EQ(kmeans_fit(pts, o).iterations_run, 1);
  o.max_iter = 300;
  o.tol = 1e9;
  EXPECT_EQ(kmeans_fit(pts, o).iterations_run, 1);
}

TEST(KMeans, RejectsBadOptions) {
  const std::vector<Point2> pts{{0, 0}, {1, 1}};
  KMeansOptions o;
  o.k = 3;
  EXPECT_THROW(kmeans_fit(pts, o), ConfigError);
  o.k = 0;
  EXPECT_THROW(kmeans_fit(pts, o), ConfigError);
  o.k = 2;
  o.init = KMeansInit::kGivenCenters;
  o.initial_centers = {{0, 0}};
  EXPECT_THROW(kmeans_fit(pts, o), ConfigError);
  o.init = KMeansInit::kPlusPlus;
  o.tol = -1;
  EXPECT_THROW(kmeans_fit(pts, o), ConfigError);
}

TEST(KMeans, PlusPlusSeedsAreDistinctDataPoints) {
  std::mt19937_64 rng(9);
  const auto pts = random_points(rng, 60);
  const auto a = kmeans_plus_plus(pts, 10, 4);
  EXPECT_EQ(a, kmeans_plus_plus(pts, 10, 4));
  std::set<std::pair<double, double>> seen;
  for (const Point2& c : a) {
    EXPECT_NE(std::find(pts.begin(), pts.end(), c), pts.end());
    seen.insert({c.x, c.y});
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(KMeans, RecoversWellSeparatedBlobs) {
  SynthConfig c = small_synth();
  c.n_samples = 2000;
  c.jitter_radius_px = 20;
  const Dataset d = generate_synthetic(c);
  KMeansOptions o;
  o.k = 25;
  o.init = KMeansInit::kGivenCenters;
  o.initial_centers = grid_targets(c);
  const CentroidSet s = kmeans_fit(label_points(d), o);
  for (const Point2& t : grid_targets(c)) {
    const Point2 nearest = s.centroids[nearest_centroid(s.centroids, t)];
    EXPECT_LT(std::sqrt(squared_distance(nearest, t)), 5.0);
  }
}

TEST(Relabel, SnapsToCentroidsAndKeepsOriginals) {
  const Dataset d = generate_synthetic(small_synth());
  const CentroidSet targets = CentroidSet::from_points(grid_targets(small_synth()));
  const Dataset r = relabel(d, targets);
  ASSERT_EQ(r.size(), d.size());
  EXPECT_EQ(r.eeg, d.eeg);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const GazeLabel& l = r.labels[i];
    ASSERT_TRUE(l.cluster_id.has_value());
    const Point2 c = targets.centroids[*l.cluster_id];
    EXPECT_EQ(l.x_px, static_cast<float>(c.x));
    EXPECT_EQ(l.y_px, static_cast<float>(c.y));
    EXPECT_EQ(l.orig_x_px, d.labels[i].x_px);
    EXPECT_EQ(l.orig_y_px, d.labels[i].y_px);
    EXPECT_EQ(*l.cluster_id, nearest_centroid(targets.centroids, d.labels[i].position()));
  }
  EXPECT_THROW(relabel(d, CentroidSet{}), ConfigError);
  EXPECT_EQ(relabel(r, targets), r);
}

TEST(Relabel, MidpointGoesToLowerIndex) {
  Dataset d;
  d.channels = d.timesteps = 1;
  d.labels.resize(2);
  d.eeg.assign(2, 0.0f);
  d.labels[0].x_px = 5;
  d.labels[1].x_px = 10;
  const Dataset r = relabel(d, CentroidSet::from_points({{10, 0}, {0, 0}}));
  EXPECT_EQ(*r.labels[0].cluster_id, 0u);
  EXPECT_EQ(*r.labels[1].cluster_id, 0u);
  EXPECT_EQ(r.labels[1].x_px, 10.0f);
}

TEST(Synthetic, GridTargets) {
  const auto t = grid_targets(SynthConfig{});
  ASSERT_EQ(t.size(), 25u);
  EXPECT_EQ(t.front(), (Point2{100, 100}));
  EXPECT_EQ(t[12], (Point2{400, 300}));
  EXPECT_EQ(t.back(), (Point2{700, 500}));
  EXPECT_EQ(t[6], (Point2{250, 200}));
}

TEST(Synthetic, DeterministicAndWithinJitter) {
  const SynthConfig c = small_synth();
  std::vector<std::uint32_t> ids;
  const Dataset a = generate_synthetic(c, &ids);
  EXPECT_EQ(a, generate_synthetic(c));
  ASSERT_EQ(ids.size(), a.size());
  const auto targets = grid_targets(c);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const GazeLabel& l = a.labels[i];
    EXPECT_LE(std::sqrt(squared_distance(l.position(), targets[ids[i]])), c.jitter_radius_px + 1e-3);
    EXPECT_GE(l.x_px, 0.0f);
    EXPECT_LE(l.x_px, 800.0f);
    EXPECT_FALSE(l.cluster_id.has_value());
    EXPECT_EQ(l.participant_id, i * c.n_participants / c.n_samples);
  }
}

TEST(Synthetic, ZeroJitterPutsLabelsOnTargets) {
  SynthConfig c = small_synth();
  c.jitter_radius_px = 0;
  std::vector<std::uint32_t> ids;
  const Dataset d = generate_synthetic(c, &ids);
  const auto targets = grid_targets(c);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.labels[i].position(), targets[ids[i]]);
}

TEST(Synthetic, CenterTargetIsOversampled) {
  SynthConfig c = small_synth();
  c.n_samples = 26000;
  c.channels = 1;
  c.timesteps = 1;
  std::vector<std::uint32_t> ids;
  generate_synthetic(c, &ids);
  std::vector<std::size_t> counts(25);
  for (auto id : ids) ++counts[id];
  const double n = 26000.0;
  for (std::size_t j = 0; j < 25; ++j) {
    const double p = (j == 12 ? 3.0 : 1.0) / 27.0;
    EXPECT_NEAR(counts[j], n * p, 3.0 * std::sqrt(n * p * (1 - p))) << "target " << j;
  }
}

TEST(Synthetic, NoiselessEegIsTheTargetPattern) {
  SynthConfig c = small_synth();
  c.noise_std = 0;
  c.n_samples = 20;
  std::vector<std::uint32_t> ids;
  const Dataset d = generate_synthetic(c, &ids);
  const auto targets = grid_targets(c);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double xn = targets[ids[i]].x / 400.0 - 1.0, yn = targets[ids[i]].y / 300.0 - 1.0;
    for (std::size_t ch = 0; ch < c.channels; ++ch)
      for (std::size_t t = 0; t < c.timesteps; ++t) {
        const double u = (ch + 0.5) / c.channels, v = (t + 0.5) / c.timesteps;
        const double want = c.signal_gain * (xn * std::cos(pi * u) * std::sin(6 * pi * v) +
                                             yn * std::sin(pi * u) * std::cos(10 * pi * v));
        EXPECT_NEAR(d.sample(i)[ch * c.timesteps + t], want, 1e-5);
      }
  }
}

TEST(Synthetic, ValidatesConfig) {
  SynthConfig c = small_synth();
  c.jitter_radius_px = 101;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = small_synth();
  c.center_weight = 0.5;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = small_synth();
  c.n_samples = 0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(Split, ApportionLargestRemainder) {
  EXPECT_EQ(apportion(27, {0.7, 0.15, 0.15}), (std::array<std::size_t, 3>{19, 4, 4}));
  EXPECT_EQ(apportion(10, {0.7, 0.15, 0.15}), (std::array<std::size_t, 3>{7, 2, 1}));
  EXPECT_EQ(apportion(3, {0.9, 0.05, 0.05}), (std::array<std::size_t, 3>{1, 1, 1}));
  EXPECT_EQ(apportion(100, {0.5, 0.25, 0.25}), (std::array<std::size_t, 3>{50, 25, 25}));
  EXPECT_THROW(apportion(2, {0.7, 0.15, 0.15}), DataError);
  EXPECT_THROW(apportion(10, {0.7, 0.2, 0.2}), ConfigError);
  EXPECT_THROW(apportion(10, {1.0, 0.0, 0.0}), ConfigError);
}

TEST(Split, ParticipantDisjointAndComplete) {
  const Dataset d = generate_synthetic(small_synth());
  const auto parts = split_dataset(d, {0.7, 0.15, 0.15}, 11);
  std::array<std::set<std::uint32_t>, 3> ids;
  std::size_t total = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (const GazeLabel& l : parts[s].labels) ids[s].insert(l.participant_id);
    total += parts[s].size();
    EXPECT_EQ(parts[s].eeg.size(), parts[s].size() * d.sample_size());
  }
  EXPECT_EQ(total, d.size());
  EXPECT_EQ(ids[0].size(), 19u);
  EXPECT_EQ(ids[1].size(), 4u);
  EXPECT_EQ(ids[2].size(), 4u);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      for (auto p : ids[a]) EXPECT_EQ(ids[b].count(p), 0u);
  EXPECT_EQ(split_dataset(d, {0.7, 0.15, 0.15}, 11)[1], parts[1]);
  EXPECT_NE(split_dataset(d, {0.7, 0.15, 0.15}, 12)[1].labels, parts[1].labels);
}

TEST(Split, SingleParticipantIsRejected) {
  SynthConfig c = small_synth();
  c.n_participants = 1;
  EXPECT_THROW(split_dataset(generate_synthetic(c), {0.7, 0.15, 0.15}, 0), DataError);
}
