#include "smamba/data.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "smamba/errors.hpp"
#include "smamba/molecule.hpp"
#include "smamba/random.hpp"

namespace smamba {
namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

void strip_line_end(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

// ---- corpus -------------------------------------------------------------

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  Corpus corpus;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    strip_line_end(line);
    const std::string_view body = trim(line);
    if (body.empty()) {
      ++corpus.blank_lines;
      continue;
    }
    if (body.front() == '#') {
      ++corpus.comment_lines;
      continue;
    }
    const std::string smiles(body.substr(0, body.find_first_of(" \t")));
    try {
      lex_smiles(smiles);
    } catch (const SyntaxError& e) {
      corpus.skipped.push_back({line_no, e.what()});
      continue;
    }
    corpus.smiles.push_back(smiles);
  }
  if (in.bad()) throw IoError("read error in '" + path.string() + "'");
  return corpus;
}

Vocabulary build_vocab(std::span<const std::string> corpus) {
  if (corpus.empty()) throw ValidationError("EmptyCorpus: no SMILES to build a vocabulary from");
  return Vocabulary::build(corpus);
}

// ---- labelled task data ------------------------------------------------

std::string_view label_kind_name(LabelKind k) {
  return k == LabelKind::kBinary ? "binary" : "continuous";
}

LabelKind parse_label_kind(std::string_view text) {
  const std::string t = lower(text);
  if (t == "binary") return LabelKind::kBinary;
  if (t == "continuous" || t == "regression") return LabelKind::kContinuous;
  throw ConfigError("unknown label kind '" + std::string(text) + "' (binary or continuous)");
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw ValidationError("unterminated quoted CSV field");
  return fields;
}

TaskDataset load_task_csv(const std::filesystem::path& path, LabelKind kind,
                          const CsvColumns& columns) {
  std::ifstream in = open_input(path);
  TaskDataset d;
  d.name = path.stem().string();
  d.kind = kind;

  std::string header;
  if (!std::getline(in, header)) throw ValidationError("MissingColumn: '" + path.string() + "' is empty");
  strip_line_end(header);
  if (header.starts_with("\xEF\xBB\xBF")) header.erase(0, 3);
  const std::vector<std::string> names = split_csv_line(header);
  auto column = [&](const std::string& wanted) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (trim(names[i]) == wanted) return i;
    }
    throw ValidationError("MissingColumn: '" + path.string() + "' has no column '" + wanted + "'");
  };
  const std::size_t smiles_col = column(columns.smiles);
  const std::size_t label_col = column(columns.label);

  std::size_t line_no = 1;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    strip_line_end(line);
    if (trim(line).empty()) continue;
    const std::size_t row = d.rows_read++;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() <= std::max(smiles_col, label_col)) {
      throw ValidationError("LabelParseError: line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields");
    }
    const auto label = parse_double(fields[label_col]);
    if (!label) {
      throw ValidationError("LabelParseError: line " + std::to_string(line_no) +
                            ": cannot parse label '" + fields[label_col] + "'");
    }
    if (kind == LabelKind::kBinary && *label != 0.0 && *label != 1.0) {
      throw ValidationError("LabelParseError: line " + std::to_string(line_no) +
                            ": binary label must be 0 or 1, got '" + fields[label_col] + "'");
    }
    const std::string smiles(trim(fields[smiles_col]));
    try {
      if (smiles.empty()) throw SemanticError("empty SMILES");
      parse_molecule(smiles);
    } catch (const Error& e) {
      d.excluded.push_back({row, e.what()});
      continue;
    }
    d.records.push_back({smiles, *label, row});
  }
  if (in.bad()) throw IoError("read error in '" + path.string() + "'");
  return d;
}

void check_expected_size(const TaskDataset& d, double tolerance) {
  if (!d.expected_size) return;
  const double expected = static_cast<double>(*d.expected_size);
  const double got = static_cast<double>(d.records.size());
  if (std::abs(got - expected) > tolerance * expected) {
    throw ValidationError("dataset '" + d.name + "' has " + std::to_string(d.records.size()) +
                          " records, expected about " + std::to_string(*d.expected_size));
  }
}

// ---- scaffold split ----------------------------------------------------

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<std::size_t> SplitAssignment::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < of_record.size(); ++i) {
    if (of_record[i] == s) out.push_back(i);
  }
  return out;
}

SplitAssignment scaffold_split(const TaskDataset& dataset, std::array<double, 3> ratios,
                               std::uint64_t seed) {
  const std::size_t n = dataset.records.size();
  if (n == 0) throw ValidationError("EmptyDataset: nothing to split");
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  // Groups in order of first appearance in the shuffled records.
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::string, std::size_t> group_of;
  for (std::size_t idx : order) {
    const std::string key = murcko_scaffold(dataset.records[idx].smiles).key;
    auto [it, fresh] = group_of.emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(idx);
  }
  std::stable_sort(groups.begin(), groups.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });

  SplitAssignment out;
  out.seed = seed;
  out.target = ratios;
  out.of_record.assign(n, Split::kTrain);
  std::array<std::size_t, 3> fill{0, 0, 0};
  for (const auto& g : groups) {
    out.largest_group = std::max(out.largest_group, g.size());
    std::size_t best = 0;
    double best_deficit = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      const double deficit = ratios[s] * static_cast<double>(n) - static_cast<double>(fill[s]);
      if (deficit > best_deficit + 1e-9) {
        best_deficit = deficit;
        best = s;
      }
    }
    fill[best] += g.size();
    for (std::size_t idx : g) out.of_record[idx] = static_cast<Split>(best);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    out.realized[s] = static_cast<double>(fill[s]) / static_cast<double>(n);
  }
  std::vector<std::string> empty;
  for (std::size_t s = 0; s < 3; ++s) {
    if (fill[s] == 0 && ratios[s] > 0.0) empty.emplace_back(split_name(static_cast<Split>(s)));
  }
  if (!empty.empty()) {
    std::string list;
    for (const auto& e : empty) list += (list.empty() ? "" : ", ") + e;
    out.warning = std::to_string(groups.size()) + " scaffold group(s) could not fill every split; empty: " + list;
  }
  return out;
}

std::string split_file_text(const TaskDataset& dataset, const SplitAssignment& split) {
  if (split.of_record.size() != dataset.records.size()) {
    throw ShapeMismatch("split covers " + std::to_string(split.of_record.size()) +
                        " records, dataset has " + std::to_string(dataset.records.size()));
  }
  std::string text;
  for (std::size_t i = 0; i < split.of_record.size(); ++i) {
    text += std::to_string(dataset.records[i].row);
    text += ',';
    text += split_name(split.of_record[i]);
    text += '\n';
  }
  return text;
}

void write_split_file(const std::filesystem::path& path, const TaskDataset& dataset,
                      const SplitAssignment& split) {
  const std::string text = split_file_text(dataset, split);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write error on '" + path.string() + "'");
}

SplitAssignment read_split_file(const std::filesystem::path& path, const TaskDataset& dataset) {
  std::ifstream in = open_input(path);
  std::unordered_map<std::size_t, std::size_t> record_of_row;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) record_of_row[dataset.records[i].row] = i;

  SplitAssignment out;
  out.of_record.assign(dataset.records.size(), Split::kTrain);
  std::vector<bool> seen(dataset.records.size(), false);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    strip_line_end(line);
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    const auto row = parse_double(std::string_view(line).substr(0, comma));
    const std::string name(trim(comma == std::string::npos ? "" : std::string_view(line).substr(comma + 1)));
    auto fail = [&](const std::string& why) {
      throw ValidationError("split file '" + path.string() + "' line " + std::to_string(line_no) +
                            ": " + why);
    };
    if (!row || *row < 0 || *row != std::floor(*row)) fail("bad record index");
    Split s;
    if (name == "train") {
      s = Split::kTrain;
    } else if (name == "valid") {
      s = Split::kValid;
    } else if (name == "test") {
      s = Split::kTest;
    } else {
      fail("unknown split '" + name + "'");
    }
    auto it = record_of_row.find(static_cast<std::size_t>(*row));
    if (it == record_of_row.end()) fail("row " + std::to_string(static_cast<std::size_t>(*row)) + " is not a loaded record");
    if (seen[it->second]) fail("row listed twice");
    seen[it->second] = true;
    out.of_record[it->second] = s;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ValidationError("split file '" + path.string() + "' does not cover every record");
  }
  std::array<std::size_t, 3> fill{0, 0, 0};
  for (Split s : out.of_record) ++fill[static_cast<std::size_t>(s)];
  for (std::size_t s = 0; s < 3; ++s) {
    out.realized[s] = static_cast<double>(fill[s]) / static_cast<double>(out.of_record.size());
  }
  return out;
}

// ---- batching ----------------------------------------------------------

std::vector<double> Batch::mask() const {
  std::vector<double> m(size * len, 0.0);
  for (std::size_t b = 0; b < size; ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t) m[b * len + t] = 1.0;
  return m;
}

std::vector<Batch> make_batches(std::span<const std::vector<int>> sequences,
                                std::span<const double> labels, const BatchOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!labels.empty() && labels.size() != sequences.size()) {
    throw ShapeMismatch("make_batches: " + std::to_string(sequences.size()) + " sequences, " +
                        std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].empty()) throw ValidationError("make_batches: empty sequence " + std::to_string(i));
    if (sequences[i].size() > options.max_len && !options.truncate) {
      throw ValidationError("SequenceTooLong: sequence " + std::to_string(i) + " has " +
                            std::to_string(sequences[i].size()) + " tokens, max_len is " +
                            std::to_string(options.max_len));
    }
  }
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  if (options.shuffle) {
    Rng rng(options.seed);
    rng.shuffle(std::span<std::size_t>(order));
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), start + options.batch_size);
    b.size = end - start;
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t n = std::min(sequences[order[k]].size(), options.max_len);
      b.len = std::max(b.len, n);
      b.lengths.push_back(n);
      b.items.push_back(order[k]);
      if (!labels.empty()) b.labels.push_back(labels[order[k]]);
    }
    b.ids.assign(b.size * b.len, Vocabulary::kPad);
    for (std::size_t r = 0; r < b.size; ++r) {
      const auto& seq = sequences[b.items[r]];
      std::copy_n(seq.begin(), b.lengths[r], b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.len));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> make_batches(std::span<const Record> records, const Vocabulary& vocab,
                                const BatchOptions& options) {
  std::vector<std::vector<int>> seqs;
  std::vector<double> labels;
  for (const Record& r : records) {
    seqs.push_back(tokenize(r.smiles, vocab).ids());
    labels.push_back(r.label);
  }
  return make_batches(seqs, labels, options);
}

// ---- task registry -----------------------------------------------------

const std::vector<TaskInfo>& task_registry() {
  using L = LabelKind;
  using M = Metric;
  static const std::vector<TaskInfo> tasks = {
      {"Caco2_Wang", "Caco2", "Absorption", L::kContinuous, M::kMae, 906, 0.438, 0.030},
      {"HIA_Hou", "HIA", "Absorption", L::kBinary, M::kRocAuc, 578, 0.937, 0.011},
      {"Pgp_Broccatelli", "Pgp", "Absorption", L::kBinary, M::kRocAuc, 1212, 0.930, 0.017},
      {"Bioavailability_Ma", "Bioav", "Absorption", L::kBinary, M::kRocAuc, 640, 0.673, 0.025},
      {"Lipophilicity_AstraZeneca", "Lipo", "Absorption", L::kContinuous, M::kMae, 4200, 0.583, 0.020},
      {"Solubility_AqSolDB", "AqSol", "Absorption", L::kContinuous, M::kMae, 9982, 0.819, 0.020},
      {"BBB_Martins", "BBB", "Distribution", L::kBinary, M::kRocAuc, 1975, 0.852, 0.018},
      {"PPBR_AZ", "PPBR", "Distribution", L::kContinuous, M::kMae, 1797, 9.371, 0.311},
      {"VDss_Lombardo", "VD", "Distribution", L::kContinuous, M::kSpearman, 1130, 0.471, 0.099},
      {"CYP2C19_Veith", "CYP2C19-I", "Metabolism", L::kBinary, M::kRocAuc, 12092, {}, {}},
      {"CYP2D6_Veith", "CYP2D6-I", "Metabolism", L::kBinary, M::kPrAuc, 13130, 0.747, 0.013},
      {"CYP3A4_Veith", "CYP3A4-I", "Metabolism", L::kBinary, M::kPrAuc, 12328, 0.893, 0.012},
      {"CYP1A2_Veith", "CYP1A2-I", "Metabolism", L::kBinary, M::kRocAuc, 12579, {}, {}},
      {"CYP2C9_Veith", "CYP2C9-I", "Metabolism", L::kBinary, M::kPrAuc, 12092, 0.845, 0.011},
      {"CYP2C9_Substrate_CarbonMangels", "CYP2C9-S", "Metabolism", L::kBinary, M::kPrAuc, 666, 0.365, 0.021},
      {"CYP2D6_Substrate_CarbonMangels", "CYP2D6-S", "Metabolism", L::kBinary, M::kPrAuc, 664, 0.748, 0.012},
      {"CYP3A4_Substrate_CarbonMangels", "CYP3A4-S", "Metabolism", L::kBinary, M::kRocAuc, 667, 0.664, 0.027},
      {"Half_Life_Obach", "Half-Life", "Excretion", L::kContinuous, M::kSpearman, 667, 0.247, 0.100},
      {"Clearance_Hepatocyte_AZ", "CL-Hepa", "Excretion", L::kContinuous, M::kSpearman, 1020, 0.423, 0.029},
      {"Clearance_Microsome_AZ", "CL-Micro", "Excretion", L::kContinuous, M::kSpearman, 1102, 0.501, 0.049},
      {"LD50_Zhu", "LD50", "Toxicity", L::kContinuous, M::kMae, 7385, 0.678, 0.012},
      {"hERG", "hERG", "Toxicity", L::kBinary, M::kRocAuc, 648, 0.708, 0.045},
      {"AMES", "AMES", "Toxicity", L::kBinary, M::kRocAuc, 7255, 0.801, 0.030},
      {"DILI", "DILI", "Toxicity", L::kBinary, M::kRocAuc, 475, 0.928, 0.022},
  };
  return tasks;
}

const TaskInfo* find_task(std::string_view name) {
  const std::string key = lower(name);
  for (const TaskInfo& t : task_registry()) {
    if (lower(t.name) == key || lower(t.alias) == key) return &t;
  }
  return nullptr;
}

}  // namespace smamba
