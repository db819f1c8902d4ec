#include "smamba/smiles.hpp"

#include <array>
#include <fstream>
#include <utility>

#include "smamba/errors.hpp"

namespace smamba {
namespace {

constexpr std::array<std::string_view, Vocabulary::kNumSpecial> kSpecials = {
    "<pad>", "<bos>", "<eos>", "<unk>"};

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::vector<int> TokenSequence::ids() const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(t.id);
  return out;
}

std::vector<Token> lex_smiles(std::string_view s) {
  std::vector<Token> out;
  std::vector<std::size_t> branch_stack;
  // Offset of the currently open occurrence of each ring label, if any.
  std::unordered_map<int, std::size_t> open_rings;
  bool have_atom = false;

  auto push = [&](TokenKind kind, std::size_t pos, std::size_t len) {
    out.push_back(Token{kind, std::string(s.substr(pos, len)), 0, pos});
  };

  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    switch (c) {
      case 'C':
      case 'B': {
        const bool two = i + 1 < s.size() && ((c == 'C' && s[i + 1] == 'l') ||
                                              (c == 'B' && s[i + 1] == 'r'));
        push(TokenKind::kAtom, i, two ? 2 : 1);
        i += two ? 2 : 1;
        have_atom = true;
        continue;
      }
      case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
      case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
        push(TokenKind::kAtom, i, 1);
        have_atom = true;
        break;
      case '[': {
        const std::size_t close = s.find(']', i + 1);
        const std::size_t nested = s.find('[', i + 1);
        if (close == std::string_view::npos) throw SyntaxError("unclosed '['", i);
        if (nested < close) throw SyntaxError("nested '['", nested);
        if (close == i + 1) throw SyntaxError("empty bracket atom", i);
        push(TokenKind::kBracketAtom, i, close - i + 1);
        i = close + 1;
        have_atom = true;
        continue;
      }
      case ']':
        throw SyntaxError("unmatched ']'", i);
      case '-': case '=': case '#': case ':': case '/': case '\\':
        if (!have_atom) throw SyntaxError("bond without a preceding atom", i);
        push(TokenKind::kBond, i, 1);
        break;
      case '(':
        if (!have_atom) throw SyntaxError("branch without a preceding atom", i);
        branch_stack.push_back(i);
        push(TokenKind::kBranchOpen, i, 1);
        break;
      case ')':
        if (branch_stack.empty()) throw SyntaxError("unmatched ')'", i);
        if (!out.empty() && out.back().kind == TokenKind::kBranchOpen)
          throw SyntaxError("empty branch", i);
        branch_stack.pop_back();
        push(TokenKind::kBranchClose, i, 1);
        break;
      case '.':
        if (!have_atom) throw SyntaxError("'.' without a preceding atom", i);
        if (!branch_stack.empty()) throw SyntaxError("'.' inside a branch", i);
        push(TokenKind::kDot, i, 1);
        have_atom = false;
        break;
      case '%': {
        if (i + 2 >= s.size() || !is_digit(s[i + 1]) || !is_digit(s[i + 2]))
          throw SyntaxError("'%' must be followed by two digits", i);
        if (!have_atom) throw SyntaxError("ring label without a preceding atom", i);
        const int label = (s[i + 1] - '0') * 10 + (s[i + 2] - '0');
        if (!open_rings.erase(label)) open_rings.emplace(label, i);
        push(TokenKind::kRingBond, i, 3);
        i += 3;
        continue;
      }
      default:
        if (is_digit(c)) {
          if (!have_atom) throw SyntaxError("ring label without a preceding atom", i);
          const int label = c - '0';
          if (!open_rings.erase(label)) open_rings.emplace(label, i);
          push(TokenKind::kRingBond, i, 1);
          break;
        }
        throw SyntaxError(std::string("illegal character '") + c + "'", i);
    }
    ++i;
  }
  if (!branch_stack.empty()) throw SyntaxError("unclosed '('", branch_stack.back());
  if (!open_rings.empty()) {
    std::size_t first = s.size();
    for (const auto& [label, pos] : open_rings) first = std::min(first, pos);
    throw SyntaxError("dangling ring label", first);
  }
  if (!out.empty() && out.back().kind == TokenKind::kBond)
    throw SyntaxError("trailing bond", out.back().offset);
  return out;
}

Vocabulary::Vocabulary() {
  for (std::string_view sp : kSpecials) add(std::string(sp));
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  Vocabulary v;
  for (const std::string& smi : corpus) {
    std::vector<Token> toks;
    try {
      toks = lex_smiles(smi);
    } catch (const SyntaxError&) {
      continue;
    }
    for (const Token& t : toks) v.add(t.text);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumSpecial) {
    throw ValidationError("vocabulary has fewer than the four special tokens");
  }
  for (std::size_t i = 0; i < kNumSpecial; ++i) {
    if (tokens[i] != kSpecials[i]) {
      throw ValidationError("vocabulary line " + std::to_string(i + 1) + " must be '" +
                            std::string(kSpecials[i]) + "', found '" + tokens[i] + "'");
    }
  }
  Vocabulary v;
  for (std::size_t i = kNumSpecial; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw ValidationError("empty token on line " + std::to_string(i + 1));
    if (v.contains(tokens[i])) {
      throw ValidationError("duplicate token '" + tokens[i] + "' on line " +
                            std::to_string(i + 1));
    }
    v.add(tokens[i]);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return from_tokens(std::move(lines));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary file " + path.string());
}

int Vocabulary::add(const std::string& text) {
  if (auto it = index_.find(text); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(text);
  index_.emplace(text, id);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view text) const {
  if (auto it = index_.find(std::string(text)); it != index_.end()) return it->second;
  return std::nullopt;
}

const std::string& Vocabulary::text(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw UnknownToken("token id " + std::to_string(id) + " is outside the vocabulary of size " +
                       std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSequence tokenize(std::string_view smiles, const Vocabulary& vocab) {
  TokenSequence seq;
  std::vector<Token> body = lex_smiles(smiles);
  seq.tokens.reserve(body.size() + 2);
  seq.tokens.push_back(Token{TokenKind::kSpecial, "<bos>", Vocabulary::kBos, 0});
  for (Token& t : body) {
    t.id = vocab.find(t.text).value_or(Vocabulary::kUnk);
    seq.tokens.push_back(std::move(t));
  }
  seq.tokens.push_back(Token{TokenKind::kSpecial, "<eos>", Vocabulary::kEos, smiles.size()});
  return seq;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& text = vocab.text(id);
    if (id == Vocabulary::kUnk) throw UnknownToken("cannot detokenize <unk>");
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    out += text;
  }
  return out;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  const std::vector<int> ids = seq.ids();
  return detokenize(ids, vocab);
}

}  // namespace smamba
