#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcvit/dataset.hpp"
#include "dcvit/model.hpp"

namespace dcvit {

// EEGDS layout (little-endian):
//   "EEGD" | u32 version=1 | u64 n_samples | u32 channels | u32 timesteps
//   n_samples x { f32 x, f32 y, f32 orig_x, f32 orig_y, u32 participant, u32 cluster }
//   n_samples * channels * timesteps f32, row-major
// cluster == 0xFFFFFFFF means unset.
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kUnsetCluster = 0xFFFFFFFFu;
inline constexpr std::size_t kDatasetHeaderBytes = 24;
inline constexpr std::size_t kLabelRecordBytes = 24;

// Checkpoint layout (little-endian):
//   "DCVT" | u32 version=1 | u32 config_len | config_len bytes JSON
//   records { u32 name_len | name | u32 rank | u32 dims[rank] | f32 values[] }
//   u32 CRC-32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct DatasetHeader {
  std::uint32_t version = 0;
  std::uint64_t n_samples = 0;
  std::uint32_t channels = 0;
  std::uint32_t timesteps = 0;
  std::uint64_t file_size = 0;
};

std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::string& bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);
DatasetHeader read_dataset_header(const std::filesystem::path& path);

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = 0;
  std::string config_json;
  std::vector<CheckpointRecord> records;
};

std::string encode_checkpoint(const Model& model);
Checkpoint decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const Model& model);
Checkpoint read_checkpoint_file(const std::filesystem::path& path);
/// Loads stored values into an existing model; ShapeConflictError names the
/// first parameter whose layout differs.
void load_into(const Checkpoint& checkpoint, Model& model);
void read_checkpoint(const std::filesystem::path& path, Model& model);
/// Rebuilds the model from the stored configuration.
Model read_checkpoint(const std::filesystem::path& path);

/// Writes `bytes` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

std::uint32_t crc32(const std::string& bytes, std::size_t length);

}  // namespace dcvit
