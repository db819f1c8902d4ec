#include "smamba/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "smamba/errors.hpp"

namespace smamba {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

std::string_view schedule_name(Schedule s) {
  return s == Schedule::kConstant ? "constant" : "warmup_cosine";
}

std::string_view scan_mode_name(ScanMode s) {
  return s == ScanMode::kSequential ? "sequential" : "parallel";
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  ModelConfig& m = cfg.model;
  TrainConfig& t = cfg.train;
  const std::string_view v = trim(value);
  if (key == "d_model") m.d_model = to_size(key, v);
  else if (key == "n_layers") m.n_layers = to_size(key, v);
  else if (key == "d_state") m.d_state = to_size(key, v);
  else if (key == "d_conv") m.d_conv = to_size(key, v);
  else if (key == "expand") m.expand = to_size(key, v);
  else if (key == "dt_rank") m.dt_rank = to_size(key, v);
  else if (key == "dt_min") m.dt_min = to_double(key, v);
  else if (key == "dt_max") m.dt_max = to_double(key, v);
  else if (key == "norm_eps") m.norm_eps = to_double(key, v);
  else if (key == "lr") t.lr = to_double(key, v);
  else if (key == "weight_decay") t.weight_decay = to_double(key, v);
  else if (key == "beta1") t.beta1 = to_double(key, v);
  else if (key == "beta2") t.beta2 = to_double(key, v);
  else if (key == "eps") t.eps = to_double(key, v);
  else if (key == "batch_size") t.batch_size = to_size(key, v);
  else if (key == "max_steps") t.max_steps = to_size(key, v);
  else if (key == "epochs") t.epochs = to_size(key, v);
  else if (key == "clip_norm") t.clip_norm = to_double(key, v);
  else if (key == "seed") t.seed = to_size(key, v);
  else if (key == "schedule") {
    if (v == "constant") t.schedule = Schedule::kConstant;
    else if (v == "warmup_cosine") t.schedule = Schedule::kWarmupCosine;
    else throw ConfigError("schedule must be constant or warmup_cosine, got '" + std::string(v) + "'");
  } else if (key == "warmup_steps") t.warmup_steps = to_size(key, v);
  else if (key == "min_lr_ratio") t.min_lr_ratio = to_double(key, v);
  else if (key == "max_len") t.max_len = to_size(key, v);
  else if (key == "truncate") t.truncate = to_bool(key, v);
  else if (key == "eval_every") t.eval_every = to_size(key, v);
  else if (key == "target_loss") t.target_loss = to_double(key, v);
  else if (key == "freeze_backbone") t.freeze_backbone = to_bool(key, v);
  else if (key == "scan") {
    if (v == "sequential") t.scan = ScanMode::kSequential;
    else if (v == "parallel") t.scan = ScanMode::kParallel;
    else throw ConfigError("scan must be sequential or parallel, got '" + std::string(v) + "'");
  } else if (key == "vocab_size") {
    throw ConfigError("vocab_size is taken from the vocabulary and cannot be set");
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

void apply_assignment(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  apply_setting(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(base, line);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

std::string dump_run_config(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  std::ostringstream out;
  out << "d_model = " << m.d_model << "\n"
      << "n_layers = " << m.n_layers << "\n"
      << "d_state = " << m.d_state << "\n"
      << "d_conv = " << m.d_conv << "\n"
      << "expand = " << m.expand << "\n"
      << "dt_rank = " << m.dt_rank << "\n"
      << "dt_min = " << fmt(m.dt_min) << "\n"
      << "dt_max = " << fmt(m.dt_max) << "\n"
      << "norm_eps = " << fmt(m.norm_eps) << "\n"
      << "lr = " << fmt(t.lr) << "\n"
      << "weight_decay = " << fmt(t.weight_decay) << "\n"
      << "beta1 = " << fmt(t.beta1) << "\n"
      << "beta2 = " << fmt(t.beta2) << "\n"
      << "eps = " << fmt(t.eps) << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "max_steps = " << t.max_steps << "\n"
      << "epochs = " << t.epochs << "\n"
      << "clip_norm = " << fmt(t.clip_norm) << "\n"
      << "seed = " << t.seed << "\n"
      << "schedule = " << schedule_name(t.schedule) << "\n"
      << "warmup_steps = " << t.warmup_steps << "\n"
      << "min_lr_ratio = " << fmt(t.min_lr_ratio) << "\n"
      << "max_len = " << t.max_len << "\n"
      << "truncate = " << (t.truncate ? "true" : "false") << "\n"
      << "eval_every = " << t.eval_every << "\n"
      << "target_loss = " << fmt(t.target_loss) << "\n"
      << "freeze_backbone = " << (t.freeze_backbone ? "true" : "false") << "\n"
      << "scan = " << scan_mode_name(t.scan) << "\n";
  return out.str();
}

nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["vocab_size"] = cfg.vocab_size;
  j["d_model"] = cfg.d_model;
  j["n_layers"] = cfg.n_layers;
  j["d_state"] = cfg.d_state;
  j["d_conv"] = cfg.d_conv;
  j["expand"] = cfg.expand;
  j["dt_rank"] = cfg.dt_rank;
  j["dt_min"] = cfg.dt_min;
  j["dt_max"] = cfg.dt_max;
  j["norm_eps"] = cfg.norm_eps;
  return j;
}

nlohmann::ordered_json to_json(const TrainConfig& t) {
  nlohmann::ordered_json j;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["eps"] = t.eps;
  j["batch_size"] = t.batch_size;
  j["max_steps"] = t.max_steps;
  j["epochs"] = t.epochs;
  j["clip_norm"] = t.clip_norm;
  j["seed"] = t.seed;
  j["schedule"] = std::string(schedule_name(t.schedule));
  j["warmup_steps"] = t.warmup_steps;
  j["min_lr_ratio"] = t.min_lr_ratio;
  j["max_len"] = t.max_len;
  j["truncate"] = t.truncate;
  j["eval_every"] = t.eval_every;
  j["target_loss"] = t.target_loss;
  j["freeze_backbone"] = t.freeze_backbone;
  j["scan"] = std::string(scan_mode_name(t.scan));
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.d_state = j.at("d_state").get<std::size_t>();
    cfg.d_conv = j.at("d_conv").get<std::size_t>();
    cfg.expand = j.at("expand").get<std::size_t>();
    cfg.dt_rank = j.at("dt_rank").get<std::size_t>();
    cfg.dt_min = j.at("dt_min").get<double>();
    cfg.dt_max = j.at("dt_max").get<double>();
    cfg.norm_eps = j.at("norm_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return cfg;
}

}  // namespace smamba
