#include "dcvit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "dcvit/error.hpp"

namespace dcvit {

namespace {

// Uniform double in [0, 1) from the top 53 bits.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double assign_all(std::span<const Point2> points, std::span<const Point2> centers,
                  std::vector<std::uint32_t>& assignment) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::uint32_t j = nearest_centroid(centers, points[i]);
    assignment[i] = j;
    inertia += squared_distance(points[i], centers[j]);
  }
  return inertia;
}

}  // namespace

void Dataset::append(const Dataset& other, std::size_t i) {
  labels.push_back(other.labels[i]);
  auto s = other.sample(i);
  eeg.insert(eeg.end(), s.begin(), s.end());
}

void Dataset::validate() const {
  if (eeg.size() != labels.size() * sample_size()) {
    throw DataError("dataset holds " + std::to_string(eeg.size()) + " EEG values for " +
                    std::to_string(labels.size()) + " samples of " +
                    std::to_string(sample_size()));
  }
}

// ---------------------------------------------------------------------------
// K-means

CentroidSet CentroidSet::from_points(std::vector<Point2> points) {
  if (points.empty()) throw ConfigError("centroid set needs at least one centroid");
  CentroidSet c;
  c.centroids = std::move(points);
  return c;
}

std::uint32_t nearest_centroid(std::span<const Point2> centroids, Point2 p) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    const double d = squared_distance(p, centroids[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return best;
}

std::vector<Point2> kmeans_plus_plus(std::span<const Point2> points, std::size_t k,
                                     std::uint64_t seed) {
  if (k == 0 || points.size() < k) throw ConfigError("k-means++: need 1 <= k <= n");
  std::mt19937_64 rng(seed);
  std::vector<Point2> centers;
  centers.push_back(points[static_cast<std::size_t>(uniform01(rng) * points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], centers[0]);
  while (centers.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(uniform01(rng) * points.size());
    }
    centers.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i)
      d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
  }
  return centers;
}

CentroidSet kmeans_fit(std::span<const Point2> points, const KMeansOptions& options) {
  const std::size_t n = points.size();
  const std::size_t k = options.k;
  if (k == 0) throw ConfigError("kmeans: k must be positive");
  if (n < k) {
    throw ConfigError("kmeans: " + std::to_string(n) + " points cannot fill " + std::to_string(k) +
                      " clusters");
  }
  if (!(options.tol >= 0.0)) throw ConfigError("kmeans: tol must be non-negative");
  if (options.max_iter < 1) throw ConfigError("kmeans: max_iter must be at least 1");

  std::vector<Point2> centers;
  if (options.init == KMeansInit::kGivenCenters) {
    if (options.initial_centers.size() != k) {
      throw ConfigError("kmeans: " + std::to_string(options.initial_centers.size()) +
                        " initial centers given for k = " + std::to_string(k));
    }
    centers = options.initial_centers;
  } else {
    centers = kmeans_plus_plus(points, k, options.seed);
  }

  CentroidSet result;
  result.assignment.assign(n, 0);
  std::vector<Point2> sums(k);
  std::vector<std::size_t> counts(k);
  for (int it = 1; it <= options.max_iter; ++it) {
    result.inertia_trace.push_back(assign_all(points, centers, result.assignment));

    std::fill(sums.begin(), sums.end(), Point2{});
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = result.assignment[i];
      sums[j].x += points[i].x;
      sums[j].y += points[i].y;
      ++counts[j];
    }
    std::vector<Point2> next(k);
    std::vector<bool> taken(n, false);
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) {
        next[j] = {sums[j].x / static_cast<double>(counts[j]),
                   sums[j].y / static_cast<double>(counts[j])};
        continue;
      }
      // Empty cluster: re-seed at the farthest point from its current centroid.
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double d = squared_distance(points[i], centers[result.assignment[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      taken[far] = true;
      next[j] = points[far];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      shift = std::max(shift, std::sqrt(squared_distance(next[j], centers[j])));
    centers = std::move(next);
    result.iterations_run = it;
    if (shift < options.tol || shift == 0.0) break;
  }
  result.inertia = assign_all(points, centers, result.assignment);
  result.inertia_trace.push_back(result.inertia);
  result.centroids = std::move(centers);
  return result;
}

std::vector<Point2> label_points(const Dataset& data) {
  std::vector<Point2> pts;
  pts.reserve(data.size());
  for (const GazeLabel& l : data.labels) pts.push_back(l.position());
  return pts;
}

Dataset relabel(const Dataset& data, const CentroidSet& centroids) {
  if (centroids.centroids.empty()) throw ConfigError("relabel: empty centroid set");
  Dataset out = data;
  for (GazeLabel& l : out.labels) {
    const std::uint32_t j = nearest_centroid(centroids.centroids, l.position());
    l.x_px = static_cast<float>(centroids.centroids[j].x);
    l.y_px = static_cast<float>(centroids.centroids[j].y);
    l.cluster_id = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SynthConfig::validate() const {
  if (n_samples == 0) throw ConfigError("synth: n_samples must be positive");
  if (!(jitter_radius_px >= 0.0 && jitter_radius_px <= 100.0)) {
    throw ConfigError("synth: jitter_radius_px must lie in [0, 100]");
  }
  if (!(center_weight >= 1.0)) throw ConfigError("synth: center_weight must be >= 1");
  if (!(screen_w > 0.0 && screen_h > 0.0)) throw ConfigError("synth: screen size must be positive");
  if (grid_cols == 0 || grid_rows == 0) throw ConfigError("synth: grid must be non-empty");
  if (channels == 0 || timesteps == 0) throw ConfigError("synth: channels/timesteps must be positive");
  if (n_participants == 0) throw ConfigError("synth: n_participants must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("synth: noise_std must be non-negative");
  if (!(margin_x >= 0.0 && 2 * margin_x <= screen_w && margin_y >= 0.0 && 2 * margin_y <= screen_h)) {
    throw ConfigError("synth: margins do not fit the screen");
  }
}

std::vector<Point2> grid_targets(const SynthConfig& cfg) {
  std::vector<Point2> targets;
  auto coord = [](double lo, double hi, std::size_t i, std::size_t n) {
    return n == 1 ? (lo + hi) / 2.0 : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (std::size_t r = 0; r < cfg.grid_rows; ++r)
    for (std::size_t c = 0; c < cfg.grid_cols; ++c)
      targets.push_back({coord(cfg.margin_x, cfg.screen_w - cfg.margin_x, c, cfg.grid_cols),
                         coord(cfg.margin_y, cfg.screen_h - cfg.margin_y, r, cfg.grid_rows)});
  return targets;
}

Dataset generate_synthetic(const SynthConfig& cfg, std::vector<std::uint32_t>* target_ids) {
  cfg.validate();
  if (target_ids) target_ids->clear();
  const std::vector<Point2> targets = grid_targets(cfg);
  const std::size_t center = (cfg.grid_rows / 2) * cfg.grid_cols + cfg.grid_cols / 2;
  std::vector<double> cumulative(targets.size());
  double total = 0.0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    total += j == center ? cfg.center_weight : 1.0;
    cumulative[j] = total;
  }

  const std::size_t C = cfg.channels;
  const std::size_t T = cfg.timesteps;
  // Two fixed smooth channel x time patterns carrying x and y.
  std::vector<double> p1(C * T), p2(C * T);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(C);
      const double v = (static_cast<double>(t) + 0.5) / static_cast<double>(T);
      p1[c * T + t] = std::cos(std::numbers::pi * u) * std::sin(2.0 * std::numbers::pi * 3.0 * v);
      p2[c * T + t] = std::sin(std::numbers::pi * u) * std::cos(2.0 * std::numbers::pi * 5.0 * v);
    }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.channels = cfg.channels;
  d.timesteps = cfg.timesteps;
  d.labels.reserve(cfg.n_samples);
  d.eeg.resize(cfg.n_samples * C * T);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const double pick = uniform01(rng) * total;
    const std::size_t j = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    const std::size_t target_id = std::min(j, targets.size() - 1);
    const Point2 target = targets[target_id];
    if (target_ids) target_ids->push_back(static_cast<std::uint32_t>(target_id));

    const double r = cfg.jitter_radius_px * std::sqrt(uniform01(rng));
    const double theta = 2.0 * std::numbers::pi * uniform01(rng);
    const double lx = std::clamp(target.x + r * std::cos(theta), 0.0, cfg.screen_w);
    const double ly = std::clamp(target.y + r * std::sin(theta), 0.0, cfg.screen_h);

    GazeLabel label;
    label.x_px = label.orig_x_px = static_cast<float>(lx);
    label.y_px = label.orig_y_px = static_cast<float>(ly);
    label.participant_id = static_cast<std::uint32_t>(i * cfg.n_participants / cfg.n_samples);
    d.labels.push_back(label);

    const double xn = 2.0 * target.x / cfg.screen_w - 1.0;
    const double yn = 2.0 * target.y / cfg.screen_h - 1.0;
    float* dst = d.eeg.data() + i * C * T;
    for (std::size_t k = 0; k < C * T; ++k) {
      const double signal = cfg.signal_gain * (xn * p1[k] + yn * p2[k]);
      const double n = cfg.noise_std > 0.0 ? cfg.noise_std * noise(rng) : 0.0;
      dst[k] = static_cast<float>(signal + n);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Splitting

std::array<std::size_t, 3> apportion(std::size_t n, std::array<double, 3> fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (n < 3) {
    throw DataError("cannot split " + std::to_string(n) + " participants into 3 disjoint parts");
  }
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * fractions[i];
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    remainder[i] = quota - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
  for (std::size_t i = 0; i < 3; ++i) {
    if (counts[i] > 0) continue;
    const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) -
                                                counts.begin());
    --counts[donor];
    ++counts[i];
  }
  return counts;
}

std::array<Dataset, 3> split_dataset(const Dataset& data, std::array<double, 3> fractions,
                                     std::uint64_t seed) {
  data.validate();
  std::set<std::uint32_t> unique;
  for (const GazeLabel& l : data.labels) unique.insert(l.participant_id);
  std::vector<std::uint32_t> participants(unique.begin(), unique.end());
  const auto counts = apportion(participants.size(), fractions);

  std::mt19937_64 rng(seed);
  for (std::size_t i = participants.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(participants[i - 1], participants[j]);
  }
  std::unordered_map<std::uint32_t, std::size_t> part_of;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t c = 0; c < counts[s]; ++c) part_of[participants[pos++]] = s;

  std::array<Dataset, 3> out;
  for (Dataset& d : out) {
    d.channels = data.channels;
    d.timesteps = data.timesteps;
  }
  for (std::size_t i = 0; i < data.size(); ++i)
    out[part_of.at(data.labels[i].participant_id)].append(data, i);
  return out;
}

}  // namespace dcvit
