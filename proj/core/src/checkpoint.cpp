#include "tessera/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "tessera/config_io.hpp"

namespace tessera {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

CheckpointError::CheckpointError(Kind kind, const std::string& message, std::vector<std::string> keys)
    : std::runtime_error(message), kind_(kind), keys_(std::move(keys)) {}

namespace {

constexpr char kMagic[8] = {'T', 'S', 'R', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

}  // namespace

void save_checkpoint(const DehazeModel& model, const fs::path& path, const TrainingMetadata& meta) {
  auto params = const_cast<DehazeModel&>(model).parameters();
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["config"] = json::parse(model_config_to_json(model.config()));
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t->shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t->numel()) * sizeof(float);
  }
  header["tensors"] = tensors;
  json m{{"epoch", meta.epoch}, {"step", meta.step}, {"loss", meta.loss}};
  for (const auto& [k, v] : meta.extra) m["extra"][k] = v;
  header["metadata"] = m;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : params) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(float)));
    }
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot read checkpoint " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  char magic[sizeof kMagic];
  std::uint64_t header_len = 0;
  if (file_size < sizeof kMagic + sizeof header_len || !in.read(magic, sizeof magic) ||
      std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(Kind::parse, path.string() + ": not a checkpoint file");
  }
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  const std::uint64_t data_start = sizeof kMagic + sizeof header_len + header_len;
  if (!in || header_len > file_size || data_start > file_size) {
    throw CheckpointError(Kind::parse, path.string() + ": truncated header");
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));

  json header;
  try {
    header = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(Kind::parse, path.string() + ": malformed header: " + e.what());
  }
  if (!header.contains("format_version") || !header["format_version"].is_number_integer()) {
    throw CheckpointError(Kind::parse, path.string() + ": header lacks format_version");
  }
  const auto version = header["format_version"].get<std::int64_t>();
  if (version != kCheckpointFormatVersion) {
    throw CheckpointError(Kind::version, path.string() + ": format version " + std::to_string(version) +
                                             " is not supported (expected " +
                                             std::to_string(kCheckpointFormatVersion) + ")");
  }

  ModelConfig cfg;
  try {
    cfg = model_config_from_json(header.at("config").dump());
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::config, path.string() + ": invalid config snapshot: " + e.what());
  }
  const auto violations = validate_config(cfg);
  if (!violations.empty()) {
    throw CheckpointError(Kind::config, path.string() + ": config snapshot does not validate: " + violations.front());
  }

  struct Entry {
    Shape shape;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> stored;
  try {
    for (const auto& t : header.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") {
        throw CheckpointError(Kind::parse, path.string() + ": unsupported dtype for " + t.at("name").get<std::string>());
      }
      stored[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(), t.at("offset").get<std::uint64_t>()};
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::parse, path.string() + ": malformed tensor table: " + e.what());
  }

  ModelConfig fp32 = cfg;
  fp32.precision = DType::f32;
  LoadedCheckpoint result{DehazeModel(fp32), {}};
  auto params = result.model.parameters();

  std::vector<std::string> mismatched;
  for (const auto& [name, t] : params) {
    auto it = stored.find(name);
    if (it == stored.end() || it->second.shape != t->shape()) mismatched.push_back(name);
  }
  for (const auto& [name, e] : stored) {
    bool known = false;
    for (const auto& p : params) known = known || p.first == name;
    if (!known) mismatched.push_back(name);
  }
  if (!mismatched.empty()) {
    std::string msg = path.string() + ": weights do not match the config snapshot:";
    for (const auto& k : mismatched) msg += " " + k;
    throw CheckpointError(Kind::shape_mismatch, msg, mismatched);
  }

  for (const auto& [name, t] : params) {
    const Entry& e = stored.at(name);
    const std::uint64_t bytes = static_cast<std::uint64_t>(t->numel()) * sizeof(float);
    if (data_start + e.offset + bytes > file_size) {
      throw CheckpointError(Kind::parse, path.string() + ": truncated data for " + name);
    }
    in.seekg(static_cast<std::streamoff>(data_start + e.offset));
    in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(bytes));
    if (!in) throw CheckpointError(Kind::io, path.string() + ": read failed for " + name);
  }
  if (cfg.precision != DType::f32) result.model.set_precision(cfg.precision);

  try {
    const auto& m = header.at("metadata");
    result.metadata.epoch = m.value("epoch", std::int64_t{0});
    result.metadata.step = m.value("step", std::int64_t{0});
    result.metadata.loss = m.value("loss", 0.0);
    if (m.contains("extra")) {
      for (auto it = m["extra"].begin(); it != m["extra"].end(); ++it) result.metadata.extra[it.key()] = it.value().get<std::string>();
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::parse, path.string() + ": malformed metadata: " + e.what());
  }
  return result;
}

}  // namespace tessera
