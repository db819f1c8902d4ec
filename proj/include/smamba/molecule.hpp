#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace smamba {

struct Atom {
  std::string element;  // capitalized symbol, e.g. "C", "Cl", "Se"
  bool aromatic = false;
  int charge = 0;
  int explicit_h = 0;
  bool bracket = false;
};

struct Bond {
  std::size_t from = 0;
  std::size_t to = 0;
  int order = 1;  // 1, 2 or 3; aromatic bonds carry order 1
  bool aromatic = false;
};

// Atom/bond graph of a SMILES string. Ring membership is derived: an atom or
// bond is in a ring when it lies on a cycle.
class MoleculeGraph {
 public:
  MoleculeGraph() = default;
  MoleculeGraph(std::vector<Atom> atoms, std::vector<Bond> bonds);

  const std::vector<Atom>& atoms() const noexcept { return atoms_; }
  const std::vector<Bond>& bonds() const noexcept { return bonds_; }
  std::size_t atom_count() const noexcept { return atoms_.size(); }
  std::size_t bond_count() const noexcept { return bonds_.size(); }

  bool atom_in_ring(std::size_t atom) const { return atom_ring_[atom]; }
  bool bond_in_ring(std::size_t bond) const { return bond_ring_[bond]; }
  // (neighbor atom, bond index) pairs.
  const std::vector<std::pair<std::size_t, std::size_t>>& neighbors(std::size_t atom) const {
    return adjacency_[atom];
  }
  std::size_t degree(std::size_t atom) const { return adjacency_[atom].size(); }
  bool has_ring() const;

  // Subgraph induced by the atoms with keep[i] set; atoms are renumbered in
  // their original order.
  MoleculeGraph induced(const std::vector<bool>& keep) const;

 private:
  void derive();

  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency_;
  std::vector<bool> atom_ring_;
  std::vector<bool> bond_ring_;
};

// Builds the graph for a SMILES string. Throws SyntaxError for lexical
// problems and SemanticError for ring closures that duplicate a bond or close
// onto the same atom, conflicting ring-bond symbols and malformed bracket
// atoms.
MoleculeGraph parse_molecule(std::string_view smiles);

struct ScaffoldKey {
  std::string key;
  bool is_acyclic = true;

  bool operator==(const ScaffoldKey&) const = default;
};

// Bemis-Murcko framework: ring systems plus the linkers between them, with
// terminal side chains pruned away. Acyclic molecules map to the empty key.
ScaffoldKey murcko_scaffold(const MoleculeGraph& mol);
ScaffoldKey murcko_scaffold(std::string_view smiles);

// Isomorphism-invariant serialization of a graph (element, aromaticity and
// bond orders only). Graphs without rings serialize to "".
std::string canonical_key(const MoleculeGraph& graph);

}  // namespace smamba
