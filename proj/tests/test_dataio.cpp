#include <gtest/gtest.h>

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "dcvit/config_io.hpp"
#include "dcvit/dataio.hpp"
#include "dcvit/error.hpp"
#include "dcvit/preprocess.hpp"
#include "oracles.hpp"

using namespace dcvit;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("dcvit_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Dataset small_dataset(std::size_t n) {
  SynthConfig c;
  c.channels = 3;
  c.timesteps = 5;
  c.n_samples = n;
  c.seed = 17;
  Dataset d = generate_synthetic(c);
  for (std::size_t i = 0; i < d.size(); i += 2) d.labels[i].cluster_id = static_cast<std::uint32_t>(i % 25);
  return d;
}

std::uint32_t le32(const std::string& b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

float lef32(const std::string& b, std::size_t at) {
  const std::uint32_t u = le32(b, at);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void put32(std::string& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

std::uint32_t zlib_crc(const std::string& b, std::size_t len) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(b.data()), static_cast<uInt>(len)));
}

}  // namespace

// ---------------------------------------------------------------------------
// EEGDS

TEST(Eegds, ByteLayout) {
  Dataset d;
  d.channels = 2;
  d.timesteps = 1;
  GazeLabel l;
  l.x_px = 1.5f;
  l.y_px = -2.0f;
  l.orig_x_px = 3.0f;
  l.orig_y_px = 4.25f;
  l.participant_id = 7;
  d.labels = {l};
  d.eeg = {0.5f, -8.0f};
  const std::string b = encode_dataset(d);
  ASSERT_EQ(b.size(), 24u + 24u + 8u);
  EXPECT_EQ(b.substr(0, 4), "EEGD");
  EXPECT_EQ(le32(b, 4), 1u);
  EXPECT_EQ(le32(b, 8), 1u);
  EXPECT_EQ(le32(b, 12), 0u);
  EXPECT_EQ(le32(b, 16), 2u);
  EXPECT_EQ(le32(b, 20), 1u);
  EXPECT_EQ(lef32(b, 24), 1.5f);
  EXPECT_EQ(lef32(b, 28), -2.0f);
  EXPECT_EQ(lef32(b, 32), 3.0f);
  EXPECT_EQ(lef32(b, 36), 4.25f);
  EXPECT_EQ(le32(b, 40), 7u);
  EXPECT_EQ(le32(b, 44), 0xFFFFFFFFu);
  EXPECT_EQ(lef32(b, 48), 0.5f);
  EXPECT_EQ(lef32(b, 52), -8.0f);
}

TEST(Eegds, RoundTripsBitExactly) {
  TempDir dir;
  for (std::size_t n : {0u, 1u, 10u, 57u}) {
    Dataset d = n ? small_dataset(n) : Dataset{};
    if (!n) d.channels = d.timesteps = 4;
    const fs::path p = dir / ("d" + std::to_string(n) + ".eegds");
    write_dataset(p, d);
    const Dataset back = read_dataset(p);
    EXPECT_EQ(back, d);
    EXPECT_EQ(encode_dataset(back), encode_dataset(d));
    const DatasetHeader h = read_dataset_header(p);
    EXPECT_EQ(h.n_samples, n);
    EXPECT_EQ(h.file_size, fs::file_size(p));
  }
}

TEST(Eegds, TruncationIsASizeMismatch) {
  const std::string b = encode_dataset(small_dataset(10));
  try {
    decode_dataset(b.substr(0, b.size() - 1));
    FAIL();
  } catch (const SizeMismatchError& e) {
    EXPECT_EQ(e.expected(), b.size());
    EXPECT_EQ(e.actual(), b.size() - 1);
    EXPECT_NE(std::string(e.what()).find(std::to_string(b.size())), std::string::npos);
  }
  EXPECT_THROW(decode_dataset(b + "x"), SizeMismatchError);
  EXPECT_THROW(decode_dataset(b.substr(0, 10)), TruncatedFileError);
}

TEST(Eegds, HeaderChecks) {
  std::string b = encode_dataset(small_dataset(3));
  std::string bad = b;
  bad[0] = 'X';
  try {
    decode_dataset(bad);
    FAIL();
  } catch (const BadMagicError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bad = b;
  put32(bad, 4, 2);
  try {
    decode_dataset(bad);
    FAIL();
  } catch (const VersionError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  bad = b;
  put32(bad, 8, 0xFFFFFFFFu);
  put32(bad, 12, 0x0FFFFFFFu);  // absurd sample count, rejected before allocating
  EXPECT_THROW(decode_dataset(bad), SizeMismatchError);
}

TEST(Eegds, MissingFile) {
  EXPECT_THROW(read_dataset("/nonexistent/dir/file.eegds"), DataError);
}

TEST(Eegds, AtomicWriteLeavesNoTemporaries) {
  TempDir dir;
  const fs::path p = dir / "a.eegds";
  write_dataset(p, small_dataset(4));
  write_dataset(p, small_dataset(6));
  EXPECT_EQ(read_dataset(p).size(), 6u);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, ByteLayoutAndCrc) {
  Model m = build_model(tiny_config(), 3);
  const std::string b = encode_checkpoint(m);
  EXPECT_EQ(b.substr(0, 4), "DCVT");
  EXPECT_EQ(le32(b, 4), 1u);
  const std::uint32_t len = le32(b, 8);
  const auto cfg = nlohmann::json::parse(b.substr(12, len)).get<ModelConfig>();
  EXPECT_EQ(cfg, m.config);
  EXPECT_EQ(le32(b, b.size() - 4), zlib_crc(b, b.size() - 4));
  EXPECT_EQ(crc32(b, b.size() - 4), zlib_crc(b, b.size() - 4));
  // First record is the first parameter.
  std::size_t at = 12 + len;
  const std::uint32_t name_len = le32(b, at);
  EXPECT_EQ(b.substr(at + 4, name_len), m.parameters.begin()->first);
}

TEST(Checkpoint, RoundTripIsBitExactAndForwardIdentical) {
  TempDir dir;
  ModelConfig c = tiny_config();
  c.channels = 16;
  c.timesteps = 76;
  Model m = build_model(c, 5);
  m.buffers.at("patch.temporal_bn.running_mean").mutable_data()[0] = 0.3;
  quantize_to_f32(m);
  write_checkpoint(dir / "m.ckpt", m);
  const Model back = read_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.config, m.config);
  const ModelState a = snapshot(m), b = snapshot(back);
  EXPECT_EQ(a.parameters, b.parameters);
  EXPECT_EQ(a.buffers, b.buffers);
  const Tensor x = oracle::random_tensor({2, 1, 16, 76}, 1);
  const Tensor ya = forward(m, x, false), yb = forward(back, x, false);
  EXPECT_TRUE(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
  Model into = build_model(c, 99);
  read_checkpoint(dir / "m.ckpt", into);
  EXPECT_EQ(snapshot(into).parameters, a.parameters);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(m));
}

TEST(Checkpoint, FlippedByteFailsCrc) {
  const std::string b = encode_checkpoint(build_model(tiny_config(), 1));
  for (std::size_t at : {std::size_t{5}, std::size_t{40}, b.size() / 2, b.size() - 5}) {
    std::string bad = b;
    bad[at] = static_cast<char>(bad[at] ^ 0x10);
    EXPECT_THROW(decode_checkpoint(bad), CrcMismatchError) << at;
  }
}

TEST(Checkpoint, TruncationAndVersion) {
  const std::string b = encode_checkpoint(build_model(tiny_config(), 1));
  EXPECT_THROW(decode_checkpoint(b.substr(0, 10)), TruncatedFileError);
  EXPECT_THROW(decode_checkpoint(b.substr(0, b.size() - 1)), DataError);
  std::string v2 = b;
  put32(v2, 4, 2);
  put32(v2, v2.size() - 4, zlib_crc(v2, v2.size() - 4));
  EXPECT_THROW(decode_checkpoint(v2), VersionError);
  // A record that claims more values than the file holds, with a valid CRC.
  std::string cut = b.substr(0, b.size() - 12);
  cut.resize(cut.size() + 4);
  put32(cut, cut.size() - 4, zlib_crc(cut, cut.size() - 4));
  EXPECT_THROW(decode_checkpoint(cut), TruncatedFileError);
  std::string magic = b;
  magic[1] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), BadMagicError);
}

TEST(Checkpoint, ShapeConflictNamesTheParameter) {
  ModelConfig a = tiny_config();
  ModelConfig b = tiny_config();
  b.head_hidden = 16;
  const Checkpoint ckpt = decode_checkpoint(encode_checkpoint(build_model(a, 1)));
  Model target = build_model(b, 1);
  try {
    load_into(ckpt, target);
    FAIL();
  } catch (const ShapeConflictError& e) {
    EXPECT_EQ(e.parameter(), "head.fc1.weight");
  }
  Model plain = build_model(ds_block_toggle(a), 1);
  try {
    load_into(ckpt, plain);
    FAIL();
  } catch (const ShapeConflictError& e) {
    EXPECT_EQ(e.parameter(), "patch.ds_depthwise.weight");
  }
}

TEST(ConfigJson, RoundTripsAndAcceptsPartialDocuments) {
  ModelConfig m = tiny_config();
  m.head_mode = HeadMode::kClassification;
  m.output_scale = {1.5, 2.5};
  EXPECT_EQ(nlohmann::json(m).get<ModelConfig>(), m);
  const auto partial = nlohmann::json::parse(R"({"hidden_dim": 64, "ds_block": false})").get<ModelConfig>();
  EXPECT_EQ(partial.hidden_dim, 64u);
  EXPECT_FALSE(partial.ds_block);
  EXPECT_EQ(partial.heads, ModelConfig{}.heads);
  EXPECT_THROW(nlohmann::json::parse(R"({"head_mode": "other"})").get<ModelConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json::parse(R"({"temporal_kernel": [1]})").get<ModelConfig>(), ConfigError);
  TrainConfig t;
  t.loss = LossKind::kCrossEntropy;
  t.learning_rate = 3e-3;
  const TrainConfig tb = nlohmann::json(t).get<TrainConfig>();
  EXPECT_EQ(tb.loss, LossKind::kCrossEntropy);
  EXPECT_EQ(tb.learning_rate, 3e-3);
  SynthConfig s;
  s.jitter_radius_px = 12;
  EXPECT_EQ(nlohmann::json(s).get<SynthConfig>().jitter_radius_px, 12.0);
}
