#include "smamba/molecule.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <tuple>
#include <unordered_map>
#include <utility>

#include "smamba/errors.hpp"
#include "smamba/smiles.hpp"

namespace smamba {
namespace {

constexpr std::array<std::string_view, 118> kElements = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
    "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

bool is_element(std::string_view sym) {
  return std::find(kElements.begin(), kElements.end(), sym) != kElements.end();
}

bool is_organic(std::string_view sym) {
  static constexpr std::array<std::string_view, 10> kOrganic = {"B", "C",  "N",  "O", "P",
                                                                "S", "F", "Cl", "Br", "I"};
  return std::find(kOrganic.begin(), kOrganic.end(), sym) != kOrganic.end();
}

// Parses "[...]" (including the brackets). `offset` locates errors.
Atom parse_bracket_atom(std::string_view text, std::size_t offset) {
  Atom atom;
  atom.bracket = true;
  std::size_t i = 1;
  const std::size_t end = text.size() - 1;
  auto fail = [&](const std::string& what) {
    throw SemanticError("bad bracket atom '" + std::string(text) + "' at byte " +
                        std::to_string(offset + i) + ": " + what);
  };
  auto digit = [&](std::size_t k) { return k < end && std::isdigit(static_cast<unsigned char>(text[k])); };

  while (digit(i)) ++i;  // isotope, ignored

  if (i >= end) fail("missing element symbol");
  static constexpr std::array<std::string_view, 3> kAromaticTwo = {"se", "as", "te"};
  static constexpr std::string_view kAromaticOne = "bcnops";
  std::string_view rest = text.substr(i, end - i);
  bool matched = false;
  for (std::string_view sym : kAromaticTwo) {
    if (rest.substr(0, 2) == sym) {
      atom.element = {static_cast<char>(std::toupper(sym[0])), sym[1]};
      atom.aromatic = true;
      i += 2;
      matched = true;
      break;
    }
  }
  if (!matched && kAromaticOne.find(rest[0]) != std::string_view::npos) {
    atom.element = std::string(1, static_cast<char>(std::toupper(rest[0])));
    atom.aromatic = true;
    i += 1;
    matched = true;
  }
  if (!matched && std::isupper(static_cast<unsigned char>(rest[0]))) {
    if (rest.size() >= 2 && std::islower(static_cast<unsigned char>(rest[1])) &&
        is_element(rest.substr(0, 2))) {
      atom.element = std::string(rest.substr(0, 2));
      i += 2;
      matched = true;
    } else if (is_element(rest.substr(0, 1))) {
      atom.element = std::string(rest.substr(0, 1));
      i += 1;
      matched = true;
    }
  }
  if (!matched) fail("unknown element");

  // Chirality is accepted and discarded.
  if (i < end && text[i] == '@') {
    ++i;
    if (i < end && text[i] == '@') {
      ++i;
    } else if (i + 1 < end && std::isupper(static_cast<unsigned char>(text[i])) &&
               std::isupper(static_cast<unsigned char>(text[i + 1]))) {
      i += 2;
      while (digit(i)) ++i;
    }
  }
  if (i < end && text[i] == 'H') {
    ++i;
    atom.explicit_h = 1;
    if (digit(i)) {
      atom.explicit_h = 0;
      while (digit(i)) atom.explicit_h = atom.explicit_h * 10 + (text[i++] - '0');
    }
  }
  if (i < end && (text[i] == '+' || text[i] == '-')) {
    const char sign = text[i];
    const int unit = sign == '+' ? 1 : -1;
    ++i;
    if (digit(i)) {
      int mag = 0;
      while (digit(i)) mag = mag * 10 + (text[i++] - '0');
      atom.charge = unit * mag;
    } else {
      atom.charge = unit;
      while (i < end && text[i] == sign) {
        atom.charge += unit;
        ++i;
      }
    }
  }
  if (i < end && text[i] == ':') {
    ++i;
    if (!digit(i)) fail("atom class needs digits");
    while (digit(i)) ++i;
  }
  if (i != end) fail("unexpected character");
  return atom;
}

Atom organic_atom(std::string_view text) {
  Atom atom;
  if (std::islower(static_cast<unsigned char>(text[0]))) {
    atom.aromatic = true;
    atom.element = std::string(1, static_cast<char>(std::toupper(text[0])));
  } else {
    atom.element = std::string(text);
  }
  return atom;
}

int bond_code(const Bond& b) { return b.aromatic ? 4 : b.order; }

std::string atom_symbol(const Atom& a) {
  std::string sym = a.element;
  if (a.aromatic) sym[0] = static_cast<char>(std::tolower(sym[0]));
  if (is_organic(a.element)) return sym;
  return "[" + sym + "]";
}

// Serializes a graph whose atoms all carry distinct ranks.
class Serializer {
 public:
  Serializer(const MoleculeGraph& g, const std::vector<int>& rank) : g_(g), rank_(rank) {
    const std::size_t n = g.atom_count();
    sorted_nbrs_.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      sorted_nbrs_[v] = g.neighbors(v);
      std::sort(sorted_nbrs_[v].begin(), sorted_nbrs_[v].end(),
                [&](const auto& x, const auto& y) { return rank_[x.first] < rank_[y.first]; });
    }
  }

  std::string run() {
    const std::size_t n = g_.atom_count();
    visited_.assign(n, false);
    children_.assign(n, {});
    ring_bonds_.assign(g_.bond_count(), false);
    std::vector<std::size_t> order(n);
    for (std::size_t v = 0; v < n; ++v) order[v] = v;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return rank_[x] < rank_[y]; });
    std::vector<std::string> parts;
    for (std::size_t root : order) {
      if (visited_[root]) continue;
      build_tree(root, g_.bond_count());
      emitted_.assign(n, false);
      open_labels_.clear();
      std::string s;
      emit(root, s);
      parts.push_back(std::move(s));
    }
    std::sort(parts.begin(), parts.end());
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += '.';
      out += parts[i];
    }
    return out;
  }

 private:
  void build_tree(std::size_t v, std::size_t parent_bond) {
    visited_[v] = true;
    for (const auto& [nbr, bond] : sorted_nbrs_[v]) {
      if (bond == parent_bond) continue;
      if (!visited_[nbr]) {
        children_[v].push_back({nbr, bond});
        build_tree(nbr, bond);
      } else {
        ring_bonds_[bond] = true;
      }
    }
  }

  std::string bond_symbol(std::size_t bond) const {
    const Bond& b = g_.bonds()[bond];
    const bool both_aromatic = g_.atoms()[b.from].aromatic && g_.atoms()[b.to].aromatic;
    if (b.aromatic) return both_aromatic ? "" : ":";
    switch (b.order) {
      case 2: return "=";
      case 3: return "#";
      default: return both_aromatic ? "-" : "";
    }
  }

  static std::string label_text(int label) {
    return label < 10 ? std::to_string(label) : "%" + std::to_string(label);
  }

  void emit(std::size_t v, std::string& s) {
    emitted_[v] = true;
    s += atom_symbol(g_.atoms()[v]);
    for (const auto& [nbr, bond] : sorted_nbrs_[v]) {
      if (!ring_bonds_[bond]) continue;
      if (emitted_[nbr]) {
        auto it = open_labels_.find(bond);
        s += label_text(it->second);
        open_labels_.erase(it);
      } else {
        int label = 1;
        while (std::any_of(open_labels_.begin(), open_labels_.end(),
                           [label](const auto& kv) { return kv.second == label; }))
          ++label;
        open_labels_[bond] = label;
        s += bond_symbol(bond) + label_text(label);
      }
    }
    const auto& kids = children_[v];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      const bool last = k + 1 == kids.size();
      if (!last) s += '(';
      s += bond_symbol(kids[k].second);
      emit(kids[k].first, s);
      if (!last) s += ')';
    }
  }

  const MoleculeGraph& g_;
  const std::vector<int>& rank_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> sorted_nbrs_;
  std::vector<bool> visited_;
  std::vector<bool> emitted_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> children_;
  std::vector<bool> ring_bonds_;
  std::map<std::size_t, int> open_labels_;
};

// Iterative neighborhood refinement. Ranks are dense and only ever split.
std::vector<int> refine(const MoleculeGraph& g, std::vector<int> rank) {
  const std::size_t n = g.atom_count();
  using Signature = std::pair<int, std::vector<std::pair<int, int>>>;
  std::size_t classes = 0;
  for (;;) {
    std::vector<Signature> sig(n);
    for (std::size_t v = 0; v < n; ++v) {
      sig[v].first = rank[v];
      for (const auto& [nbr, bond] : g.neighbors(v))
        sig[v].second.emplace_back(bond_code(g.bonds()[bond]), rank[nbr]);
      std::sort(sig[v].second.begin(), sig[v].second.end());
    }
    std::vector<std::size_t> order(n);
    for (std::size_t v = 0; v < n; ++v) order[v] = v;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return sig[x] < sig[y]; });
    int next = -1;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == 0 || sig[order[k]] != sig[order[k - 1]]) ++next;
      rank[order[k]] = next;
    }
    const std::size_t now = static_cast<std::size_t>(next + 1);
    if (now == classes) break;
    classes = now;
  }
  return rank;
}

constexpr std::size_t kMaxLeaves = 4096;

void search(const MoleculeGraph& g, const std::vector<int>& start, std::string& best,
            std::size_t& leaves) {
  std::vector<int> rank = refine(g, start);
  const std::size_t n = g.atom_count();
  // Smallest rank shared by more than one atom.
  std::vector<std::size_t> count(n, 0);
  for (int r : rank) ++count[static_cast<std::size_t>(r)];
  int tied = -1;
  for (std::size_t r = 0; r < n; ++r) {
    if (count[r] > 1) {
      tied = static_cast<int>(r);
      break;
    }
  }
  if (tied < 0) {
    std::string s = Serializer(g, rank).run();
    if (leaves == 0 || s < best) best = std::move(s);
    ++leaves;
    return;
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (rank[v] != tied) continue;
    std::vector<int> split(n);
    for (std::size_t u = 0; u < n; ++u) split[u] = 2 * rank[u] + (rank[u] == tied && u != v ? 1 : 0);
    search(g, split, best, leaves);
    if (leaves >= kMaxLeaves) return;
  }
}

}  // namespace

MoleculeGraph::MoleculeGraph(std::vector<Atom> atoms, std::vector<Bond> bonds)
    : atoms_(std::move(atoms)), bonds_(std::move(bonds)) {
  for (const Bond& b : bonds_) {
    if (b.from >= atoms_.size() || b.to >= atoms_.size())
      throw SemanticError("bond endpoint out of range");
    if (b.from == b.to) throw SemanticError("self-loop bond");
  }
  derive();
}

void MoleculeGraph::derive() {
  const std::size_t n = atoms_.size();
  adjacency_.assign(n, {});
  for (std::size_t k = 0; k < bonds_.size(); ++k) {
    const Bond& b = bonds_[k];
    for (const auto& [nbr, bond] : adjacency_[b.from]) {
      if (nbr == b.to) throw SemanticError("duplicate bond between atoms " +
                                           std::to_string(b.from) + " and " + std::to_string(b.to));
    }
    adjacency_[b.from].emplace_back(b.to, k);
    adjacency_[b.to].emplace_back(b.from, k);
  }
  // Bridges via lowlink; every non-bridge bond lies on a cycle.
  bond_ring_.assign(bonds_.size(), true);
  atom_ring_.assign(n, false);
  std::vector<int> disc(n, -1), low(n, 0);
  int timer = 0;
  struct Frame {
    std::size_t v;
    std::size_t parent_bond;
    std::size_t next = 0;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (disc[root] >= 0) continue;
    std::vector<Frame> stack{{root, bonds_.size()}};
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < adjacency_[f.v].size()) {
        const auto [nbr, bond] = adjacency_[f.v][f.next++];
        if (bond == f.parent_bond) continue;
        if (disc[nbr] < 0) {
          disc[nbr] = low[nbr] = timer++;
          stack.push_back({nbr, bond});
        } else {
          low[f.v] = std::min(low[f.v], disc[nbr]);
        }
      } else {
        const Frame done = f;
        stack.pop_back();
        if (!stack.empty()) {
          const std::size_t parent = stack.back().v;
          low[parent] = std::min(low[parent], low[done.v]);
          if (low[done.v] > disc[parent]) bond_ring_[done.parent_bond] = false;
        }
      }
    }
  }
  for (std::size_t k = 0; k < bonds_.size(); ++k) {
    if (bond_ring_[k]) atom_ring_[bonds_[k].from] = atom_ring_[bonds_[k].to] = true;
  }
}

bool MoleculeGraph::has_ring() const {
  return std::find(bond_ring_.begin(), bond_ring_.end(), true) != bond_ring_.end();
}

MoleculeGraph MoleculeGraph::induced(const std::vector<bool>& keep) const {
  std::vector<std::size_t> remap(atoms_.size(), atoms_.size());
  std::vector<Atom> atoms;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    if (keep[i]) {
      remap[i] = atoms.size();
      atoms.push_back(atoms_[i]);
    }
  }
  std::vector<Bond> bonds;
  for (const Bond& b : bonds_) {
    if (keep[b.from] && keep[b.to]) bonds.push_back({remap[b.from], remap[b.to], b.order, b.aromatic});
  }
  return MoleculeGraph(std::move(atoms), std::move(bonds));
}

MoleculeGraph parse_molecule(std::string_view smiles) {
  const std::vector<Token> tokens = lex_smiles(smiles);
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::optional<std::size_t> prev;
  std::optional<char> pending;
  std::size_t pending_at = 0;
  std::vector<std::optional<std::size_t>> branches;
  struct OpenRing {
    std::size_t atom;
    std::optional<char> bond;
  };
  std::unordered_map<int, OpenRing> rings;

  auto make_bond = [&](std::size_t a, std::size_t b, std::optional<char> sym) {
    Bond bond{a, b, 1, false};
    if (!sym) {
      bond.aromatic = atoms[a].aromatic && atoms[b].aromatic;
    } else {
      switch (*sym) {
        case '=': bond.order = 2; break;
        case '#': bond.order = 3; break;
        case ':': bond.aromatic = true; break;
        default: break;
      }
    }
    for (const Bond& other : bonds) {
      if ((other.from == a && other.to == b) || (other.from == b && other.to == a))
        throw SemanticError("duplicate bond between atoms " + std::to_string(a) + " and " +
                            std::to_string(b));
    }
    bonds.push_back(bond);
  };

  for (const Token& t : tokens) {
    switch (t.kind) {
      case TokenKind::kAtom:
      case TokenKind::kBracketAtom: {
        atoms.push_back(t.kind == TokenKind::kAtom ? organic_atom(t.text)
                                                   : parse_bracket_atom(t.text, t.offset));
        const std::size_t idx = atoms.size() - 1;
        if (prev) make_bond(*prev, idx, pending);
        pending.reset();
        prev = idx;
        break;
      }
      case TokenKind::kBond:
        if (pending) throw SemanticError("two consecutive bonds at byte " + std::to_string(t.offset));
        pending = t.text[0];
        pending_at = t.offset;
        break;
      case TokenKind::kRingBond: {
        const int label = t.text[0] == '%' ? std::stoi(t.text.substr(1)) : t.text[0] - '0';
        auto it = rings.find(label);
        if (it == rings.end()) {
          rings.emplace(label, OpenRing{*prev, pending});
        } else {
          const OpenRing open = it->second;
          rings.erase(it);
          if (open.bond && pending && *open.bond != *pending)
            throw SemanticError("conflicting ring-bond symbols for label " + t.text);
          if (open.atom == *prev)
            throw SemanticError("ring label " + t.text + " closes onto its own atom");
          make_bond(open.atom, *prev, pending ? pending : open.bond);
        }
        pending.reset();
        break;
      }
      case TokenKind::kBranchOpen:
        if (pending) throw SemanticError("bond before '(' at byte " + std::to_string(pending_at));
        branches.push_back(prev);
        break;
      case TokenKind::kBranchClose:
        if (pending) throw SemanticError("dangling bond at byte " + std::to_string(pending_at));
        prev = branches.back();
        branches.pop_back();
        break;
      case TokenKind::kDot:
        if (pending) throw SemanticError("dangling bond at byte " + std::to_string(pending_at));
        prev.reset();
        break;
      case TokenKind::kSpecial:
        break;
    }
  }
  return MoleculeGraph(std::move(atoms), std::move(bonds));
}

std::string canonical_key(const MoleculeGraph& graph) {
  if (!graph.has_ring()) return "";
  const std::size_t n = graph.atom_count();
  using Invariant = std::tuple<std::string, bool, std::size_t, std::vector<int>>;
  std::vector<Invariant> inv(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<int> codes;
    for (const auto& [nbr, bond] : graph.neighbors(v)) codes.push_back(bond_code(graph.bonds()[bond]));
    std::sort(codes.begin(), codes.end());
    inv[v] = {graph.atoms()[v].element, graph.atoms()[v].aromatic, graph.degree(v), std::move(codes)};
  }
  std::vector<std::size_t> order(n);
  for (std::size_t v = 0; v < n; ++v) order[v] = v;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return inv[x] < inv[y]; });
  std::vector<int> rank(n);
  int next = -1;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0 || inv[order[k]] != inv[order[k - 1]]) ++next;
    rank[order[k]] = next;
  }
  std::string best;
  std::size_t leaves = 0;
  search(graph, rank, best, leaves);
  return best;
}

ScaffoldKey murcko_scaffold(const MoleculeGraph& mol) {
  const std::size_t n = mol.atom_count();
  std::vector<bool> keep(n, true);
  std::vector<std::size_t> degree(n);
  std::vector<std::size_t> queue;
  for (std::size_t v = 0; v < n; ++v) {
    degree[v] = mol.degree(v);
    if (degree[v] <= 1 && !mol.atom_in_ring(v)) queue.push_back(v);
  }
  while (!queue.empty()) {
    const std::size_t v = queue.back();
    queue.pop_back();
    if (!keep[v]) continue;
    keep[v] = false;
    for (const auto& [nbr, bond] : mol.neighbors(v)) {
      if (!keep[nbr]) continue;
      if (--degree[nbr] <= 1 && !mol.atom_in_ring(nbr)) queue.push_back(nbr);
    }
  }
  if (std::find(keep.begin(), keep.end(), true) == keep.end()) return {"", true};
  std::string key = canonical_key(mol.induced(keep));
  const bool acyclic = key.empty();
  return {std::move(key), acyclic};
}

ScaffoldKey murcko_scaffold(std::string_view smiles) {
  return murcko_scaffold(parse_molecule(smiles));
}

}  // namespace smamba
