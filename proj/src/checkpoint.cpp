#include "smamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "smamba/config.hpp"
#include "smamba/errors.hpp"

namespace smamba {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr std::string_view kMagic = "SMAMBACK";
constexpr std::size_t kPrefix = 8 + 4 + 8;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw IoError(std::string("checkpoint truncated while reading ") + what);
    }
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct Prefix {
  std::uint32_t version;
  std::uint64_t header_len;
};

Prefix read_prefix(Reader& r) {
  if (r.remaining() < kMagic.size() || r.take(kMagic.size(), "magic") != kMagic) {
    throw FormatVersionMismatch("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatVersionMismatch("checkpoint format version " + std::to_string(version) +
                                ", this build reads version " +
                                std::to_string(kCheckpointVersion));
  }
  return {version, r.get<std::uint64_t>("header length")};
}

CheckpointHeader parse_header(std::uint32_t version, std::string_view text) {
  CheckpointHeader h;
  h.version = version;
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  try {
    h.config = model_config_from_json(nlohmann::json::parse(j.at("model_config").dump()));
    h.vocab = Vocabulary::from_tokens(j.at("vocabulary").get<std::vector<std::string>>());
    const auto& head = j.at("task_head");
    if (!head.is_null()) {
      h.head = TaskHead{parse_label_kind(head.at("kind").get<std::string>()),
                        head.at("label_mean").get<double>(), head.at("label_std").get<double>()};
    }
    h.metadata = j.at("metadata");
    for (const auto& a : j.at("arrays")) {
      h.arrays.emplace_back(a.at("name").get<std::string>(), a.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ShapeHeaderMismatch(std::string("checkpoint header is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw ShapeHeaderMismatch(std::string("checkpoint header: ") + e.what());
  } catch (const ValidationError& e) {
    throw ShapeHeaderMismatch(std::string("checkpoint header: ") + e.what());
  }
  if (h.vocab.size() != h.config.vocab_size) {
    throw ShapeHeaderMismatch("checkpoint vocabulary has " + std::to_string(h.vocab.size()) +
                              " tokens, model config says " +
                              std::to_string(h.config.vocab_size));
  }
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string file_digest(const std::filesystem::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(read_file(path))));
  return buf;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  if (ckpt.vocab.size() != p.config().vocab_size) {
    throw ConfigError("checkpoint vocabulary size does not match the model config");
  }
  if (ckpt.head.has_value() != has_head(p)) {
    throw ConfigError("checkpoint head descriptor and head arrays disagree");
  }
  nlohmann::ordered_json header;
  header["model_config"] = to_json(p.config());
  header["vocabulary"] = ckpt.vocab.tokens();
  if (ckpt.head) {
    header["task_head"] = {{"kind", std::string(label_kind_name(ckpt.head->kind))},
                           {"label_mean", ckpt.head->label_mean},
                           {"label_std", ckpt.head->label_std}};
  } else {
    header["task_head"] = nullptr;
  }
  header["metadata"] = ckpt.metadata;
  auto arrays = nlohmann::ordered_json::array();
  for (const std::string& name : p.names()) {
    arrays.push_back({{"name", name}, {"shape", p.at(name).shape()}});
  }
  header["arrays"] = std::move(arrays);
  const std::string text = header.dump();

  std::string out(kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const std::string& name : p.names()) {
    const Tensor& t = p.at(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  const Prefix prefix = read_prefix(r);
  if (bytes.size() < kPrefix + 8) throw IoError("checkpoint truncated");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(bytes.substr(0, bytes.size() - 8)) != stored) {
    throw IoError("checkpoint checksum mismatch (truncated or corrupted file)");
  }
  Reader body(bytes.substr(0, bytes.size() - 8));
  read_prefix(body);
  CheckpointHeader h = parse_header(prefix.version, body.take(prefix.header_len, "header"));

  ModelParams params;
  try {
    params = ModelParams(h.config);
  } catch (const ConfigError& e) {
    throw ShapeHeaderMismatch(std::string("checkpoint model config: ") + e.what());
  }
  Checkpoint ckpt{std::move(params), std::move(h.vocab), h.head, std::move(h.metadata)};
  if (h.head) {
    ckpt.params.insert(kHeadWeight, Tensor::zeros({h.config.d_model, 1}));
    ckpt.params.insert(kHeadBias, Tensor::zeros({1}));
  }
  if (h.arrays.size() != ckpt.params.names().size()) {
    throw ShapeHeaderMismatch("checkpoint lists " + std::to_string(h.arrays.size()) +
                              " arrays, the model config needs " +
                              std::to_string(ckpt.params.names().size()));
  }
  for (const auto& [name, shape] : h.arrays) {
    const auto name_len = body.get<std::uint32_t>("array name length");
    const std::string_view stored_name = body.take(name_len, "array name");
    if (stored_name != name) {
      throw ShapeHeaderMismatch("array '" + std::string(stored_name) + "' where the header lists '" +
                                name + "'");
    }
    const auto rank = body.get<std::uint32_t>("array rank");
    Shape dims(rank);
    for (auto& d : dims) d = body.get<std::uint64_t>("array dims");
    if (dims != shape) {
      throw ShapeHeaderMismatch("array '" + name + "' has shape " + to_string(dims) +
                                ", header says " + to_string(shape));
    }
    if (!ckpt.params.contains(name)) {
      throw ShapeHeaderMismatch("unexpected array '" + name + "'");
    }
    Tensor& dst = ckpt.params.at(name);
    if (dst.shape() != dims) {
      throw ShapeHeaderMismatch("array '" + name + "' has shape " + to_string(dims) +
                                ", the model config implies " + to_string(dst.shape()));
    }
    const std::string_view raw = body.take(dst.size() * sizeof(double), "array data");
    std::memcpy(dst.data().data(), raw.data(), raw.size());
  }
  if (body.remaining() != 0) throw ShapeHeaderMismatch("trailing bytes after the last array");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kIo) throw;
    // Prefix the path, keeping the error type.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const FormatVersionMismatch*>(&e)) throw FormatVersionMismatch(msg);
    if (dynamic_cast<const ShapeHeaderMismatch*>(&e)) throw ShapeHeaderMismatch(msg);
    throw IoError(msg);
  }
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string prefix(kPrefix, '\0');
  in.read(prefix.data(), static_cast<std::streamsize>(kPrefix));
  prefix.resize(static_cast<std::size_t>(in.gcount()));
  Reader r(prefix);
  const Prefix p = read_prefix(r);
  if (p.header_len > std::filesystem::file_size(path) - kPrefix) {
    throw IoError(path.string() + ": checkpoint truncated inside the header");
  }
  std::string text(p.header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(p.header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != p.header_len) {
    throw IoError(path.string() + ": checkpoint truncated inside the header");
  }
  return parse_header(p.version, text);
}

}  // namespace smamba
