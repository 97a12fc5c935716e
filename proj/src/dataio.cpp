#include "dcvit/dataio.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <unistd.h>

#include "dcvit/config_io.hpp"
#include "dcvit/error.hpp"

namespace dcvit {

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { buf_ += s; }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw TruncatedFileError(std::string("truncated file while reading ") + what, pos_);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// a * b with overflow reported as max.
std::uint64_t mul_sat(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
    return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

std::uint64_t add_sat(std::uint64_t a, std::uint64_t b) {
  return b > std::numeric_limits<std::uint64_t>::max() - a ? std::numeric_limits<std::uint64_t>::max()
                                                           : a + b;
}

DatasetHeader parse_dataset_header(ByteReader& r, std::uint64_t file_size) {
  if (file_size < kDatasetHeaderBytes) {
    throw TruncatedFileError("dataset header needs " + std::to_string(kDatasetHeaderBytes) +
                                 " bytes, file has " + std::to_string(file_size),
                             file_size);
  }
  const std::string magic = r.bytes(4, "magic");
  if (magic != "EEGD") throw BadMagicError("not an EEGDS file: bad magic", 0);
  DatasetHeader h;
  h.version = r.u32("version");
  if (h.version != kDatasetVersion) {
    throw VersionError("unsupported EEGDS version " + std::to_string(h.version), 4);
  }
  h.n_samples = r.u64("n_samples");
  h.channels = r.u32("channels");
  h.timesteps = r.u32("timesteps");
  h.file_size = file_size;
  return h;
}

std::uint64_t expected_dataset_size(const DatasetHeader& h) {
  const std::uint64_t labels = mul_sat(h.n_samples, kLabelRecordBytes);
  const std::uint64_t values = mul_sat(mul_sat(h.n_samples, h.channels), h.timesteps);
  return add_sat(add_sat(kDatasetHeaderBytes, labels), mul_sat(values, 4));
}

}  // namespace

std::uint32_t crc32(const std::string& bytes, std::size_t length) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t done = 0;
  while (done < length) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(length - done, 1u << 30));
    crc = ::crc32(crc, p + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Datasets

std::string encode_dataset(const Dataset& data) {
  data.validate();
  ByteWriter w;
  w.bytes("EEGD");
  w.u32(kDatasetVersion);
  w.u64(data.size());
  w.u32(data.channels);
  w.u32(data.timesteps);
  for (const GazeLabel& l : data.labels) {
    w.f32(l.x_px);
    w.f32(l.y_px);
    w.f32(l.orig_x_px);
    w.f32(l.orig_y_px);
    w.u32(l.participant_id);
    w.u32(l.cluster_id.value_or(kUnsetCluster));
  }
  for (float v : data.eeg) w.f32(v);
  return std::move(w.str());
}

Dataset decode_dataset(const std::string& bytes) {
  ByteReader r(bytes, bytes.size());
  const DatasetHeader h = parse_dataset_header(r, bytes.size());
  const std::uint64_t expected = expected_dataset_size(h);
  if (expected != bytes.size()) throw SizeMismatchError(expected, bytes.size());

  Dataset d;
  d.channels = h.channels;
  d.timesteps = h.timesteps;
  d.labels.resize(h.n_samples);
  for (GazeLabel& l : d.labels) {
    l.x_px = r.f32("label");
    l.y_px = r.f32("label");
    l.orig_x_px = r.f32("label");
    l.orig_y_px = r.f32("label");
    l.participant_id = r.u32("label");
    const std::uint32_t c = r.u32("label");
    if (c != kUnsetCluster) l.cluster_id = c;
  }
  d.eeg.resize(h.n_samples * h.channels * h.timesteps);
  for (float& v : d.eeg) v = r.f32("eeg data");
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  write_file_atomic(path, encode_dataset(data));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string head(kDatasetHeaderBytes, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const std::uint64_t size = std::filesystem::file_size(path);
  ByteReader r(head, head.size());
  DatasetHeader h = parse_dataset_header(r, std::min<std::uint64_t>(size, head.size()));
  h.file_size = size;
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_checkpoint(const Model& model) {
  ByteWriter w;
  w.bytes("DCVT");
  w.u32(kCheckpointVersion);
  const std::string config = nlohmann::json(model.config).dump();
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.bytes(config);
  auto record = [&](const std::string& name, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f32(static_cast<float>(v));
  };
  for (const auto& [name, t] : model.parameters) record(name, t);
  for (const auto& [name, t] : model.buffers) record(name, t);
  w.u32(crc32(w.str(), w.str().size()));
  return std::move(w.str());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16) {
    throw TruncatedFileError("checkpoint shorter than its fixed header", bytes.size());
  }
  if (bytes.compare(0, 4, "DCVT") != 0) throw BadMagicError("not a checkpoint: bad magic", 0);
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes, bytes.size());
  tail.bytes(body, "body");
  const std::uint32_t stored = tail.u32("crc");
  const std::uint32_t actual = crc32(bytes, body);
  if (stored != actual) {
    std::ostringstream os;
    os << "checkpoint CRC mismatch: stored " << std::hex << stored << ", computed " << actual;
    throw CrcMismatchError(os.str(), body);
  }

  ByteReader r(bytes, body);
  r.bytes(4, "magic");
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(c.version), 4);
  }
  const std::uint32_t config_len = r.u32("config length");
  c.config_json = r.bytes(config_len, "config");
  std::unordered_set<std::string> names;
  while (r.remaining() > 0) {
    const std::size_t at = r.offset();
    CheckpointRecord rec;
    const std::uint32_t name_len = r.u32("record name length");
    rec.name = r.bytes(name_len, "record name");
    if (!names.insert(rec.name).second) throw DataError("duplicate record " + rec.name, at);
    const std::uint32_t rank = r.u32("record rank");
    r.need(std::uint64_t{rank} * 4, "record dims");
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("record dims");
      if (d == 0) throw DataError("zero dimension in record " + rec.name, r.offset() - 4);
      rec.shape.push_back(d);
      numel = mul_sat(numel, d);
    }
    if (rank == 0) throw DataError("rank-0 record " + rec.name, at);
    if (mul_sat(numel, 4) > r.remaining()) {
      throw TruncatedFileError("record " + rec.name + " declares more values than remain",
                               r.offset());
    }
    rec.values.resize(numel);
    for (float& v : rec.values) v = r.f32("record values");
    c.records.push_back(std::move(rec));
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Model& model) {
  write_file_atomic(path, encode_checkpoint(model));
}

Checkpoint read_checkpoint_file(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

void load_into(const Checkpoint& checkpoint, Model& model) {
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const CheckpointRecord& rec : checkpoint.records) by_name.emplace(rec.name, &rec);
  std::size_t expected = 0;
  auto check = [&](const std::string& name, const Tensor& t) {
    ++expected;
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ShapeConflictError("checkpoint has no parameter " + name, name);
    }
    if (it->second->shape != t.shape()) {
      throw ShapeConflictError("parameter " + name + " stored as " + shape_str(it->second->shape) +
                                   ", model expects " + shape_str(t.shape()),
                               name);
    }
  };
  for (const auto& [name, t] : model.parameters) check(name, t);
  for (const auto& [name, t] : model.buffers) check(name, t);
  if (expected != checkpoint.records.size()) {
    for (const CheckpointRecord& rec : checkpoint.records) {
      if (!model.parameters.contains(rec.name) && !model.buffers.contains(rec.name)) {
        throw ShapeConflictError("model has no parameter " + rec.name, rec.name);
      }
    }
  }
  auto copy = [&](const std::string& name, Tensor& t) {
    const auto& values = by_name.at(name)->values;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<double>(values[i]);
  };
  for (auto& [name, t] : model.parameters) copy(name, t);
  for (auto& [name, t] : model.buffers) copy(name, t);
}

void read_checkpoint(const std::filesystem::path& path, Model& model) {
  load_into(read_checkpoint_file(path), model);
}

Model read_checkpoint(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint_file(path);
  ModelConfig config;
  try {
    config = nlohmann::json::parse(c.config_json).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what(), 12);
  }
  Model m = build_model(config, 0);
  load_into(c, m);
  return m;
}

}  // namespace dcvit
