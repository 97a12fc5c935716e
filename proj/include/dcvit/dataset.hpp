#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dcvit {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

inline double squared_distance(Point2 a, Point2 b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

/// Gaze label in screen pixels. `orig_*` keep the label as first recorded,
/// before any relabeling.
struct GazeLabel {
  float x_px = 0.0f;
  float y_px = 0.0f;
  float orig_x_px = 0.0f;
  float orig_y_px = 0.0f;
  std::uint32_t participant_id = 0;
  std::optional<std::uint32_t> cluster_id;

  Point2 position() const { return {x_px, y_px}; }
  bool operator==(const GazeLabel&) const = default;
};

/// EEG windows (channels x timesteps, row-major, microvolts) paired with labels.
struct Dataset {
  std::uint32_t channels = 0;
  std::uint32_t timesteps = 0;
  std::vector<GazeLabel> labels;
  std::vector<float> eeg;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return std::size_t{channels} * timesteps; }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(eeg).subspan(i * sample_size(), sample_size());
  }
  std::span<float> sample(std::size_t i) {
    return std::span<float>(eeg).subspan(i * sample_size(), sample_size());
  }
  /// Appends sample `i` of `other` (same geometry).
  void append(const Dataset& other, std::size_t i);
  /// Throws DataError when the EEG blob does not match the label count.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

}  // namespace dcvit
