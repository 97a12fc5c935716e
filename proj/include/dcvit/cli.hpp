#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcvit/model.hpp"
#include "dcvit/preprocess.hpp"
#include "dcvit/train.hpp"

namespace dcvit {

inline constexpr const char* kToolVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Every tunable of the command-line tool. The JSON form is what --config
/// reads and what the run manifest records, so a manifest can be replayed.
struct RunConfig {
  std::string preset = "full";  // "full" or "tiny" base model configuration
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  KMeansOptions kmeans;
  // "grid": start from the synthetic grid targets when k matches their
  // count, otherwise k-means++. "plusplus": always k-means++.
  std::string kmeans_init = "grid";
  bool clustered = false;  // train on labels snapped to train-split centroids
  std::array<double, 3> split_fractions{0.70, 0.15, 0.15};
  std::uint64_t split_seed = 0;
  double threshold_mm = 55.4;
  double confidence = 0.9;
  std::size_t heatmap_sample = 0;
};

/// Clustering options with the initialization resolved.
KMeansOptions resolve_kmeans(const RunConfig& config);

nlohmann::json run_config_to_json(const RunConfig& config);
/// Applies `doc` over the defaults. A run manifest is accepted as well; its
/// "config" member is used.
RunConfig run_config_from_json(const nlohmann::json& doc);

/// Runs one command line (without the program name). Returns 0 on success,
/// 2 for usage errors, 3 for data errors and 4 for numeric failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace dcvit
