#!/usr/bin/env python3
"""Regenerates the test fixtures under tests/fixtures/.

Requires RDKit. Everything is seeded, so rerunning produces identical files.
The molecules are assembled from BRICS fragments of well-known drugs and are
written in the same style as ZINC-250K (RDKit canonical isomeric SMILES,
protonated amines, carboxylates).

The labelled task files use the TDC column layout (Drug_ID,Drug,Y). Their
labels are synthetic: a hidden structural rule plus label noise. They stand in
for the public ADMET sets, which are not redistributed with this repository.
"""

import argparse
import csv
import pathlib
import random

from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem, BRICS, Crippen, Descriptors, rdMolDescriptors
from rdkit.Chem.EnumerateStereoisomers import (EnumerateStereoisomers,
                                               StereoEnumerationOptions)

RDLogger.DisableLog("rdApp.*")

SEED_DRUGS = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(=O)Nc1ccc(O)cc1",
    "COc1ccc2[nH]cc(CCN(C)C)c2c1",
    "CN(C)CCCN1c2ccccc2CCc2ccccc21",
    "Clc1ccc2c(c1)C(c1ccccc1F)=NCC(=O)N2C",
    "CC(C)NCC(O)COc1cccc2ccccc12",
    "OC(=O)Cc1ccccc1Nc1c(Cl)cccc1Cl",
    "CN1CCC[C@H]1c1cccnc1",
    "Cc1ccc(cc1)S(=O)(=O)NC(=O)NCCCC",
    "CCOC(=O)C1=C(C)NC(C)=C(C1c1ccccc1[N+](=O)[O-])C(=O)OC",
    "COc1cc2c(cc1OC)C(=O)C(CC1CCN(Cc3ccccc3)CC1)C2",
    "CN1CCN(CC1)c1ccc2nc(sc2c1)N",
    "Fc1ccc(cc1)C(=O)CCCN1CCC(O)(CC1)c1ccc(Cl)cc1",
    "CC(C)(C)NCC(O)c1ccc(O)c(CO)c1",
    "O=C(O)c1cn(C2CC2)c2cc(N3CCNCC3)c(F)cc2c1=O",
    "Cc1oncc1C(=O)Nc1ccc(cc1)C(F)(F)F",
    "CS(=O)(=O)c1ccc(cc1)-c1cc(nn1-c1ccc(cc1)S(N)(=O)=O)C(F)(F)F",
    "COc1ccc(CCN(C)CCCC(C#N)(C(C)C)c2ccc(OC)c(OC)c2)cc1OC",
    "CCN(CC)CC(=O)Nc1c(C)cccc1C",
    "Nc1ccc(cc1)S(=O)(=O)Nc1ccnc(n1)C",
    "O=c1[nH]c(=O)n(cc1F)C1CCCO1",
    "Cn1c(=O)c2c(ncn2C)n(C)c1=O",
    "CC1=C(C(=O)Nc2ccccn2)N(C)S(=O)(=O)c2ccccc21",
    "OC(c1ccccc1)(c1ccccc1)C1CCNCC1",
    "c1ccc2c(c1)sc1ccccc1N2CCCN1CCOCC1",
    "CC(=O)N1CCN(CC1)c1ccc(OCC2COC(Cn3ccnc3)(O2)c2ccc(Cl)cc2Cl)cc1",
    "Clc1ccc(COC(Cn2ccnc2)c2ccc(Cl)cc2Cl)c(Cl)c1",
    "O=C(NC1CCCCC1)Nc1ccc(cc1)S(=O)(=O)N",
    "COc1ccccc1OCCNCC(O)COc1cccc2[nH]c3ccccc3c12",
    "Cc1ncc([N+](=O)[O-])n1CCO",
    "NC(=O)c1cnccn1",
    "CCCc1nn(C)c2c(=O)[nH]c(nc12)-c1cc(ccc1OCC)S(=O)(=O)N1CCN(C)CC1",
    "O=C1CCc2ccc(OCCCCN3CCN(CC3)c3cccc(Cl)c3Cl)cc2N1",
    "CN1C(=O)CN=C(c2ccccc2)c2cc(Cl)ccc21",
    "CC(C)Cn1cnc2c1c1ccccc1nc2N",
    "COC(=O)c1ccccc1Nc1ccnc2cc(Cl)ccc12",
    "Oc1ccc(cc1)C1=CC(=O)c2c(O)cc(O)cc2O1",
    "c1ccc(cc1)C1(c2ccccc2)NC(=O)NC1=O",
    "CC1CCCC(C)N1CC(=O)Nc1c(C)cccc1C",
    "Cc1cc(C)nc(NS(=O)(=O)c2ccc(N)cc2)n1",
    "CCOc1ccc(NC(C)=O)cc1",
    "CC(C)NCC(O)c1ccc(NS(C)(=O)=O)cc1",
    "O=C(CCCN1CCC(CC1)n1c(=O)[nH]c2ccccc21)c1ccc(F)cc1",
    "CN(C)C(=N)N=C(N)N",
    "C1CCC(CC1)NC(=O)c1cc2ccccc2s1",
    "OCC1OC(C(O)C1O)n1cnc2c(N)ncnc12",
    "Cc1c(cccc1Cl)Nc1ccccc1C(=O)O",
    "CC(N)Cc1ccccc1",
    "O=C(O)C1=CN2C(C(=O)C2)S1",
    "Brc1ccc(cc1)C(OCCN(C)C)c1ccccn1",
    "Ic1cc(I)c(O)c(I)c1",
    "CSc1ccc2Sc3ccccc3N(CCC3CCCCN3C)c2c1",
    "NS(=O)(=O)c1cc2c(cc1Cl)NCNS2(=O)=O",
    "CC(C)(C)c1ccc(cc1)C(=O)CCCN1CCC(CC1)OC(c1ccccc1)c1ccccc1",
    "C#Cc1cccc(Nc2ncnc3cc(OCCOC)c(OCCOC)cc23)c1",
    "Cc1ccccc1N1C(=O)c2ccccc2N=C1C",
    "COc1ccc2c(c1)c(CC(=O)O)c(C)n2C(=O)c1ccc(Cl)cc1",
    "Cn1nnc2c(ncn2C)c1=O",
    "OC(=O)CCCc1ccc(N(CCCl)CCCl)cc1",
    "c1ccc(-c2nc3ccccc3[nH]2)cc1",
    "CC(=O)c1ccc2c(c1)Sc1ccccc1N2CCCN(C)C",
    "O=C1NC(=O)C(N1)(c1ccccc1)CC",
    "CCCCOc1ccc(cc1)C(=O)CCN1CCCCC1",
]

SIDE_CHAINS = ["C", "CC", "OC", "F", "Cl", "Br", "C(F)(F)F", "C#N", "N", "O",
               "S(C)(=O)=O", "C(=O)O", "C(N)=O", "CCO", "N(C)C", "OCC",
               "[N+](=O)[O-]", "I", "SC"]


def fragment_pool():
  frags = set()
  for smi in SEED_DRUGS:
    mol = Chem.MolFromSmiles(smi)
    if mol is None:
      continue
    frags.update(BRICS.BRICSDecompose(mol, minFragmentSize=2))
  return sorted(frags)


def protonate(mol):
  """ZINC-style charge states: protonated basic amines, carboxylates."""
  rxns = [
      "[CX4:1][NX3;H2;!$(NC=[O,S,N]);!$(N[a]);!$(NS(=O)=O):2]>>[CX4:1][NH3+:2]",
      "[CX4:1][NX3;H1;!$(NC=[O,S,N]);!$(N[a]);!$(NS(=O)=O):2][CX4:3]>>[CX4:1][NH2+:2][CX4:3]",
      "[CX4:1][NX3;H0;!$(NC=[O,S,N]);!$(N[a]);!$(NS(=O)=O):2]([CX4:3])[CX4:4]>>[CX4:1][NH+:2]([CX4:3])[CX4:4]",
      "[CX3:1](=[O:2])[OX2H1:3]>>[CX3:1](=[O:2])[O-:3]",
  ]
  for smarts in rxns:
    rxn = AllChem.ReactionFromSmarts(smarts)
    products = rxn.RunReactants((mol,))
    if not products:
      continue
    cand = products[0][0]
    try:
      Chem.SanitizeMol(cand)
      mol = cand
    except Exception:
      pass
  return mol


def decorate(mol, rng):
  """Attach a random side chain to an aromatic CH to diversify the pool."""
  sites = [a.GetIdx() for a in mol.GetAtoms()
           if a.GetIsAromatic() and a.GetSymbol() == "C"
           and a.GetTotalNumHs() == 1]
  if not sites:
    return mol
  site = rng.choice(sites)
  chain = Chem.MolFromSmiles(rng.choice(SIDE_CHAINS))
  combo = Chem.RWMol(Chem.CombineMols(mol, chain))
  combo.AddBond(site, mol.GetNumAtoms(), Chem.BondType.SINGLE)
  try:
    out = combo.GetMol()
    Chem.SanitizeMol(out)
    return out
  except Exception:
    return mol


def stereo_variant(mol, rng):
  opts = StereoEnumerationOptions(onlyUnassigned=True, maxIsomers=8,
                                  rand=rng.randint(0, 2**31 - 1))
  isomers = list(EnumerateStereoisomers(mol, options=opts))
  return rng.choice(isomers) if isomers else mol


def generate(n, rng, pool, seen):
  out = []
  builder = BRICS.BRICSBuild([Chem.MolFromSmiles(f) for f in pool],
                             scrambleReagents=True, maxDepth=2)
  for prod in builder:
    if len(out) >= n:
      break
    try:
      prod.UpdatePropertyCache(strict=False)
      Chem.SanitizeMol(prod)
    except Exception:
      continue
    if rng.random() < 0.35:
      prod = decorate(prod, rng)
    mw = Descriptors.MolWt(prod)
    if not 150 <= mw <= 520:
      continue
    if rng.random() < 0.6:
      prod = protonate(prod)
    if rng.random() < 0.5:
      prod = stereo_variant(prod, rng)
    smi = Chem.MolToSmiles(prod)
    if "." in smi or smi in seen or Chem.MolFromSmiles(smi) is None:
      continue
    seen.add(smi)
    out.append(smi)
  return out


def drug_like_pool(n, rng, pool, seen):
  # BRICSBuild enumerates in a fixed order; sample by repeatedly reshuffling
  # the fragment pool so the output is spread across chemotypes.
  out = []
  while len(out) < n:
    sub = rng.sample(pool, min(len(pool), 40))
    out.extend(generate(min(200, n - len(out)), rng, sub, seen))
  return out[:n]


def dili_label(mol, rng):
  # Hidden rule: aromatic nitro, aromatic halogen, aniline or high logP.
  patt = [Chem.MolFromSmarts(s) for s in
          ("a[N+](=O)[O-]", "a[Cl,Br,I]", "a[NH2]", "c1ccsc1")]
  hit = any(mol.HasSubstructMatch(p) for p in patt) or Crippen.MolLogP(mol) > 3.5
  y = 1 if hit else 0
  if rng.random() < 0.08:
    y = 1 - y
  return y


def caco2_label(mol, rng):
  tpsa = rdMolDescriptors.CalcTPSA(mol)
  return round(-4.2 - 0.008 * tpsa + 0.12 * Crippen.MolLogP(mol)
               + rng.gauss(0.0, 0.25), 6)


def write_csv(path, rows):
  with open(path, "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["Drug_ID", "Drug", "Y"])
    w.writerows(rows)


def main():
  ap = argparse.ArgumentParser()
  ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve()
                                       .parent.parent / "tests" / "fixtures"))
  args = ap.parse_args()
  out = pathlib.Path(args.out)
  out.mkdir(parents=True, exist_ok=True)
  rng = random.Random(20240915)
  pool = fragment_pool()
  seen = set()

  zinc = drug_like_pool(10000, rng, pool, seen)
  with open(out / "zinc_10k.smi", "w") as f:
    f.write("# ZINC-format drug-like corpus, one SMILES per line\n")
    f.write("\n".join(zinc) + "\n")

  pretrain = drug_like_pool(1000, rng, pool, seen)
  with open(out / "zinc_mini_1k.smi", "w") as f:
    f.write("\n".join(pretrain) + "\n")

  with open(out / "overfit_32.smi", "w") as f:
    f.write("\n".join(sorted(pretrain[:32], key=len)) + "\n")

  dili = drug_like_pool(475, rng, pool, seen)
  write_csv(out / "dili.csv",
            [(f"DILI_{i}", s, dili_label(Chem.MolFromSmiles(s), rng))
             for i, s in enumerate(dili)])

  caco = drug_like_pool(906, rng, pool, seen)
  write_csv(out / "caco2.csv",
            [(f"Caco2_{i}", s, caco2_label(Chem.MolFromSmiles(s), rng))
             for i, s in enumerate(caco)])

  # Aromatic-ring presence task: half drug-like aromatic molecules, half
  # aliphatic molecules obtained by saturating drug-like scaffolds.
  arom, aliph = [], []
  for s in drug_like_pool(600, rng, pool, seen):
    mol = Chem.MolFromSmiles(s)
    has_arom = any(a.GetIsAromatic() for a in mol.GetAtoms())
    if has_arom and len(arom) < 100 and len(s) <= 60:
      arom.append(s)
  while len(aliph) < 100:
    n = rng.randint(4, 14)
    atoms = [rng.choice("CCCCNOS") for _ in range(n)]
    smi = atoms[0]
    ring_open = False
    for k, a in enumerate(atoms[1:], 1):
      if rng.random() < 0.15:
        smi += "(" + rng.choice(["C", "O", "N", "CC", "F", "Cl", "=O"]) + ")"
      if k == 2 and rng.random() < 0.4:
        smi += "1"
        ring_open = True
      smi += rng.choice(["", "", "", "="]) + a if a == "C" else a
    if ring_open:
      smi += "1"
    mol = Chem.MolFromSmiles(smi)
    if mol is None:
      continue
    can = Chem.MolToSmiles(mol)
    if can not in seen and not any(a.GetIsAromatic() for a in mol.GetAtoms()):
      seen.add(can)
      aliph.append(can)
  toy = [(s, 1) for s in arom] + [(s, 0) for s in aliph]
  rng.shuffle(toy)
  write_csv(out / "aromatic_toy.csv",
            [(f"TOY_{i}", s, y) for i, (s, y) in enumerate(toy)])

  # Three spellings per molecule: canonical plus two randomized atom orders.
  with open(out / "spellings.txt", "w") as f:
    f.write("# three SMILES spellings of the same molecule per line\n")
    picked = 0
    for s in zinc[::37]:
      mol = Chem.MolFromSmiles(s)
      if mol.GetRingInfo().NumRings() == 0:
        continue
      spellings = [s]
      for k in range(200):
        r = Chem.MolToSmiles(mol, doRandom=True, canonical=False)
        if r not in spellings:
          spellings.append(r)
        if len(spellings) == 3:
          break
      f.write(" ".join(spellings) + "\n")
      picked += 1
      if picked == 20:
        break


if __name__ == "__main__":
  main()
