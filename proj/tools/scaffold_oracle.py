"""Reference scaffold keys computed with RDKit, for grouping tests.

The framework is the pure graph one: repeatedly delete atoms of degree <= 1,
then drop charges, hydrogen counts, isotopes and stereo before taking RDKit's
canonical SMILES. Output is tab-separated: smiles, reference key ("" when the
molecule has no ring).

    python tools/scaffold_oracle.py tests/fixtures/zinc_mini_1k.smi \
        tests/fixtures/dili.csv tests/fixtures/aromatic_toy.csv > tests/fixtures/scaffold_oracle.tsv
"""

import csv
import sys

from rdkit import Chem


def reference_key(smiles: str) -> str:
    mol = Chem.MolFromSmiles(smiles, sanitize=False)
    if mol is None:
        raise ValueError(f"RDKit rejected {smiles!r}")
    rw = Chem.RWMol(mol)
    while True:
        doomed = [a.GetIdx() for a in rw.GetAtoms() if a.GetDegree() <= 1]
        if not doomed:
            break
        for idx in sorted(doomed, reverse=True):
            rw.RemoveAtom(idx)
    if rw.GetNumAtoms() == 0:
        return ""
    for atom in rw.GetAtoms():
        atom.SetFormalCharge(0)
        atom.SetNumExplicitHs(0)
        atom.SetNoImplicit(True)
        atom.SetIsotope(0)
        atom.SetChiralTag(Chem.ChiralType.CHI_UNSPECIFIED)
    for bond in rw.GetBonds():
        bond.SetStereo(Chem.BondStereo.STEREONONE)
        bond.SetBondDir(Chem.BondDir.NONE)
    return Chem.MolToSmiles(rw.GetMol(), canonical=True, isomericSmiles=False)


def read_smiles(path: str):
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                yield row["Drug"]
        return
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                yield line.split()[0]


def main() -> None:
    out = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    for path in sys.argv[1:]:
        for smi in read_smiles(path):
            out.writerow([smi, reference_key(smi)])


if __name__ == "__main__":
    main()
