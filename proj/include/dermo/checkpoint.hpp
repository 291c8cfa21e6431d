#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dermo/backbone.hpp"
#include "dermo/errors.hpp"
#include "dermo/rng.hpp"

namespace dermo {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written little-endian");

/// Checkpoint container:
///   "DERMOCKP" | u32 version | u64 header bytes | JSON header |
///   u64 float count | float32 payload | u64 FNV-1a of all preceding bytes
inline constexpr char kCheckpointMagic[8] = {'D', 'E', 'R', 'M', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void append_pod(std::vector<char>& buf, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(const std::vector<char>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw IntegrityError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline nlohmann::json checkpoint_header(const AdaptedModel& m, const std::vector<std::string>& class_codes) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : m.all_parameters()) tensors.push_back({{"name", p->name}, {"size", p->value.size()}});
  const auto& s = m.spec();
  return {{"format_version", kCheckpointVersion},
          {"backbone", s.name_string()},
          {"head_classes", m.head_classes()},
          {"input_resolution", {s.input_height, s.input_width}},
          {"normalization", {{"mean", s.mean}, {"std", s.std}}},
          {"classes", class_codes},
          {"tensors", tensors}};
}

/// `class_codes`, when given, names the head outputs and is stored in the header.
inline void save_checkpoint(const AdaptedModel& m, const std::filesystem::path& path,
                            const std::vector<std::string>& class_codes = {}) {
  if (!class_codes.empty() && class_codes.size() != m.head_classes())
    throw ContractError("save_checkpoint: class codes do not match head size");
  std::vector<char> buf(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::append_pod(buf, kCheckpointVersion);
  const std::string header = checkpoint_header(m, class_codes).dump();
  detail::append_pod(buf, static_cast<std::uint64_t>(header.size()));
  buf.insert(buf.end(), header.begin(), header.end());
  std::uint64_t count = 0;
  for (const auto* p : m.all_parameters()) count += p->value.size();
  detail::append_pod(buf, count);
  for (const auto* p : m.all_parameters()) {
    const auto* bytes = reinterpret_cast<const char*>(p->value.data());
    buf.insert(buf.end(), bytes, bytes + p->value.size() * sizeof(float));
  }
  Fnv1a h;
  h.update(buf.data(), buf.size());
  detail::append_pod(buf, h.digest());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

/// Reads only the JSON header after verifying magic, version and integrity digest.
inline nlohmann::json read_checkpoint_header(const std::vector<char>& buf, std::size_t& payload_pos) {
  if (buf.size() < sizeof(kCheckpointMagic) + 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw IntegrityError("not a checkpoint file (bad magic)");
  Fnv1a h;
  h.update(buf.data(), buf.size() - 8);
  std::size_t tail = buf.size() - 8;
  if (detail::read_pod<std::uint64_t>(buf, tail) != h.digest()) throw IntegrityError("checkpoint digest mismatch (corrupt file)");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::read_pod<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion)
    throw IntegrityError("unsupported checkpoint format version " + std::to_string(version));
  const auto header_len = detail::read_pod<std::uint64_t>(buf, pos);
  if (pos + header_len > buf.size() - 8) throw IntegrityError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                   buf.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  payload_pos = pos + header_len;
  return header;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CheckpointInfo {
  std::string backbone;
  std::size_t head_classes = 0;
  std::vector<std::string> classes;
  std::uint32_t format_version = 0;
};

/// Header fields of a checkpoint, after the integrity check.
inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  const auto buf = read_file_bytes(path);
  std::size_t pos = 0;
  const auto header = read_checkpoint_header(buf, pos);
  try {
    CheckpointInfo info{header.at("backbone").get<std::string>(), header.at("head_classes").get<std::size_t>(), {},
                        header.at("format_version").get<std::uint32_t>()};
    if (header.contains("classes")) info.classes = header["classes"].get<std::vector<std::string>>();
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header incomplete: ") + e.what());
  }
}

/// Restores a model written by save_checkpoint. The stored backbone must match `spec`.
inline AdaptedModel load_checkpoint(const BackboneSpec& spec, const std::filesystem::path& path) {
  const auto buf = read_file_bytes(path);
  std::size_t pos = 0;
  const auto header = read_checkpoint_header(buf, pos);
  std::string backbone;
  std::size_t head_classes = 0;
  try {
    backbone = header.at("backbone").get<std::string>();
    head_classes = header.at("head_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header incomplete: ") + e.what());
  }
  if (backbone != spec.name_string())
    throw IntegrityError("checkpoint " + path.string() + " holds backbone '" + backbone + "', expected '" +
                         spec.name_string() + "'");
  if (head_classes < 2) throw IntegrityError("checkpoint head_classes < 2");

  AdaptedModel m(spec, head_classes, 0);
  const auto params = m.all_parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size()) throw IntegrityError("checkpoint tensor count does not match architecture");
  const auto count = detail::read_pod<std::uint64_t>(buf, pos);
  if (pos + count * sizeof(float) != buf.size() - 8) throw IntegrityError("checkpoint payload size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (tensors[i].at("name").get<std::string>() != p->name || tensors[i].at("size").get<std::size_t>() != p->value.size())
      throw IntegrityError("checkpoint tensor " + std::to_string(i) + " does not match " + p->name);
    std::memcpy(p->value.data(), buf.data() + pos, p->value.size() * sizeof(float));
    pos += p->value.size() * sizeof(float);
  }
  return m;
}

/// Pretrained body with its original classification head. The stub backbone's
/// weights are bundled (a fixed seeded initialization); the others are read
/// from `<weights_dir>/<name>.ckpt`, with DERMO_WEIGHTS_DIR as the default directory.
inline AdaptedModel load_pretrained(const BackboneSpec& spec,
                                    const std::optional<std::filesystem::path>& weights_dir = std::nullopt) {
  if (spec.name == BackboneName::kStub) return AdaptedModel(spec, spec.pretrained_classes, 0x5EED5EED);
  const auto dir = weights_dir ? weights_dir : default_weights_dir();
  const std::string file = spec.name_string() + ".ckpt";
  if (!dir)
    throw DependencyError("pretrained weights for " + spec.name_string() +
                          " unavailable: set DERMO_WEIGHTS_DIR or weights_dir to a directory holding " + file +
                          " (ImageNet weights converted to the dermo checkpoint format)");
  const auto path = *dir / file;
  if (!std::filesystem::is_regular_file(path))
    throw DependencyError("pretrained weights for " + spec.name_string() + " not found at " + path.string() +
                          " (expected ImageNet weights converted to the dermo checkpoint format)");
  return load_checkpoint(spec, path);
}

}  // namespace dermo
