#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smamba/metrics.hpp"
#include "smamba/smiles.hpp"

namespace smamba {

// ---- corpus -------------------------------------------------------------

struct BadLine {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct Corpus {
  std::vector<std::string> smiles;
  std::size_t comment_lines = 0;
  std::size_t blank_lines = 0;
  std::vector<BadLine> skipped;  // lines that failed to lex
};

// One SMILES per line; the first whitespace-separated field is used so that
// "SMILES name" lines work. Comments (#) and blank lines are skipped, lines
// that fail to lex are tallied in `skipped`. Throws IoError.
Corpus load_corpus(const std::filesystem::path& path);

// Throws ValidationError (EmptyCorpus) for an empty corpus.
Vocabulary build_vocab(std::span<const std::string> corpus);

// ---- labelled task data ------------------------------------------------

enum class LabelKind { kBinary, kContinuous };

std::string_view label_kind_name(LabelKind k);
LabelKind parse_label_kind(std::string_view text);  // "binary" | "continuous"

struct Record {
  std::string smiles;
  double label = 0.0;
  std::size_t row = 0;  // 0-based data row in the source file
};

struct Exclusion {
  std::size_t row = 0;
  std::string reason;
};

struct TaskDataset {
  std::string name;
  LabelKind kind = LabelKind::kBinary;
  std::vector<Record> records;
  std::size_t rows_read = 0;
  std::vector<Exclusion> excluded;
  std::optional<std::size_t> expected_size;
};

struct CsvColumns {
  std::string smiles = "Drug";
  std::string label = "Y";
};

// Reads a header-row CSV (RFC 4180 quoting). Rows whose SMILES does not parse
// are excluded and reported. Throws IoError, ValidationError (MissingColumn)
// and ValidationError (LabelParseError, with the 1-based file line) for
// labels that are not numbers or not 0/1 in a binary task.
TaskDataset load_task_csv(const std::filesystem::path& path, LabelKind kind,
                          const CsvColumns& columns = {});

// Throws ValidationError when expected_size is set and the record count is
// off by more than `tolerance` (relative).
void check_expected_size(const TaskDataset& d, double tolerance);

// Splits one CSV line into fields; exposed for tests.
std::vector<std::string> split_csv_line(std::string_view line);

// ---- scaffold split ----------------------------------------------------

enum class Split : std::uint8_t { kTrain = 0, kValid = 1, kTest = 2 };

std::string_view split_name(Split s);

struct SplitAssignment {
  std::vector<Split> of_record;  // parallel to TaskDataset::records
  std::uint64_t seed = 0;
  std::array<double, 3> target{0.7, 0.1, 0.2};
  std::array<double, 3> realized{0.0, 0.0, 0.0};
  std::size_t largest_group = 0;
  std::optional<std::string> warning;

  std::vector<std::size_t> indices(Split s) const;
};

// Groups records by Murcko scaffold key and assigns whole groups, largest
// first, to the split furthest below its target count (ties: train, valid,
// test). The seed shuffles the records first; equal-sized groups are taken in
// order of first appearance in that shuffle. Throws ValidationError
// (EmptyDataset) and ConfigError for ratios that do not sum to 1.
SplitAssignment scaffold_split(const TaskDataset& dataset,
                               std::array<double, 3> ratios = {0.7, 0.1, 0.2},
                               std::uint64_t seed = 0);

// Lines "row,split" using Record::row.
void write_split_file(const std::filesystem::path& path, const TaskDataset& dataset,
                      const SplitAssignment& split);
std::string split_file_text(const TaskDataset& dataset, const SplitAssignment& split);
// Inverse of write_split_file. Every record must be listed exactly once.
SplitAssignment read_split_file(const std::filesystem::path& path, const TaskDataset& dataset);

// ---- batching ----------------------------------------------------------

struct Batch {
  std::vector<int> ids;               // [size, len] row-major, right-padded
  std::size_t size = 0;               // rows
  std::size_t len = 0;                // columns
  std::vector<std::size_t> lengths;   // unpadded length per row
  std::vector<double> labels;         // empty for unlabelled data
  std::vector<std::size_t> items;     // source index of each row

  // 1 for real tokens, 0 for padding, [size, len].
  std::vector<double> mask() const;
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::size_t max_len = 256;
  bool truncate = false;
  bool shuffle = true;
  std::uint64_t seed = 0;
};

// Batches over already tokenized sequences; each appears exactly once.
// Throws ValidationError (SequenceTooLong) when a sequence exceeds max_len
// and truncation is off.
std::vector<Batch> make_batches(std::span<const std::vector<int>> sequences,
                                std::span<const double> labels, const BatchOptions& options);

// Tokenizes records with `vocab`, then batches them with labels.
std::vector<Batch> make_batches(std::span<const Record> records, const Vocabulary& vocab,
                                const BatchOptions& options);

// ---- task registry -----------------------------------------------------

struct TaskInfo {
  std::string name;     // benchmark dataset name
  std::string alias;    // short name used in result tables
  std::string family;   // Absorption, Distribution, ...
  LabelKind kind = LabelKind::kBinary;
  Metric metric = Metric::kRocAuc;
  std::size_t expected_size = 0;
  std::optional<double> reported_mean;
  std::optional<double> reported_std;
};

const std::vector<TaskInfo>& task_registry();
// Matches name or alias, case-insensitively. nullptr when unknown.
const TaskInfo* find_task(std::string_view name);

}  // namespace smamba
