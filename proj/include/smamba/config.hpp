#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "smamba/model.hpp"
#include "smamba/train.hpp"

namespace smamba {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

// Config files are "key = value" lines with # comments. Keys are the field
// names of ModelConfig and TrainConfig (they do not overlap). vocab_size is
// not settable; it always comes from the vocabulary. Throws ConfigError.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);
// "key=value" form, as given on the command line.
void apply_assignment(RunConfig& cfg, std::string_view assignment);
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
// Throws IoError when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
// Every settable field, one per line; parse_run_config(dump) round-trips.
std::string dump_run_config(const RunConfig& cfg);

std::string_view schedule_name(Schedule s);
std::string_view scan_mode_name(ScanMode s);

nlohmann::ordered_json to_json(const ModelConfig& cfg);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
// Throws ConfigError on missing or mistyped fields.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace smamba
