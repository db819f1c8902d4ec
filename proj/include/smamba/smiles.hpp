#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace smamba {

enum class TokenKind { kAtom, kBracketAtom, kBond, kRingBond, kBranchOpen, kBranchClose, kDot, kSpecial };

struct Token {
  TokenKind kind = TokenKind::kAtom;
  std::string text;
  int id = 0;
  std::size_t offset = 0;  // byte offset in the source string

  bool operator==(const Token&) const = default;
};

struct TokenSequence {
  std::vector<Token> tokens;

  std::vector<int> ids() const;
};

// Splits a SMILES string into its lexical units: organic-subset atoms
// (two-letter halogens kept whole), whole bracket expressions, bonds, ring
// labels (digits and %nn), branches and dots. Also checks the structural
// rules a tokenizer can see: balanced parentheses and brackets, closed ring
// labels, no illegal characters. Throws SyntaxError with a byte offset.
// Returned tokens have id 0.
std::vector<Token> lex_smiles(std::string_view smiles);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kNumSpecial = 4;

  // Just the four special tokens.
  Vocabulary();

  // Special tokens followed by every distinct token of `corpus` in order of
  // first appearance. Lines that do not lex are skipped.
  static Vocabulary build(std::span<const std::string> corpus);

  // One token per line; line number is the id. The first four lines must be
  // the special tokens.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Appends `text` if absent; returns its id.
  int add(const std::string& text);
  std::optional<int> find(std::string_view text) const;
  bool contains(std::string_view text) const { return find(text).has_value(); }
  const std::string& text(int id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// <bos>, the lexed body mapped through `vocab` (<unk> for missing entries),
// <eos>.
TokenSequence tokenize(std::string_view smiles, const Vocabulary& vocab);

// Concatenates token texts, dropping <pad>/<bos>/<eos>. Throws UnknownToken
// for ids outside the vocabulary and for <unk>.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace smamba
