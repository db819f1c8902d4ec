#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "smamba/model.hpp"
#include "smamba/smiles.hpp"
#include "smamba/train.hpp"

namespace smamba {

// File layout, little-endian throughout:
//   "SMAMBACK"  u32 version  u64 header_len  header (UTF-8 JSON)
//   per array: u32 name_len, name, u32 rank, u64 dims[rank], f64 data[]
//   u64 FNV-1a of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;  // head arrays included when `head` is set
  Vocabulary vocab;
  std::optional<TaskHead> head;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

struct CheckpointHeader {
  std::uint32_t version = 0;
  ModelConfig config;
  Vocabulary vocab;
  std::optional<TaskHead> head;
  nlohmann::ordered_json metadata;
  std::vector<std::pair<std::string, Shape>> arrays;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatVersionMismatch (bad magic or version), IoError (truncation,
// checksum) and ShapeHeaderMismatch (arrays disagree with the header or the
// model config).
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Reads only the fixed prefix and the header block, not the arrays.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
// 16 lowercase hex digits of fnv1a64 over the file contents.
std::string file_digest(const std::filesystem::path& path);

}  // namespace smamba
