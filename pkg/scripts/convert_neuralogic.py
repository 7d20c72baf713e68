"""Regenerate the bundled Trains and Mutagenesis-188 CSV databases.

Both benchmarks ship as ground logic facts inside the ``neuralogic`` wheel
(PyNeuraLogic, MIT licensed). This script turns them into one CSV per table
plus a JSON schema descriptor, in the layout ``nrelaggs.load_database``
expects.

    python scripts/convert_neuralogic.py [--wheel path/to/neuralogic.whl]

Without ``--wheel`` the wheel is fetched with ``pip download``.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "nrelaggs" / "datasets"
PREFIX = "neuralogic/utils/data/datasets/"
FACT = re.compile(r"(\w+)\(([^)]*)\)")
ELEMENTS = {"c", "h", "o", "n", "cl", "f", "br", "i", "s", "p", "na", "k", "ca", "zn", "cu"}


def fetch_wheel() -> Path:
    tmp = Path(tempfile.mkdtemp())
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", str(tmp), "neuralogic==0.9.2"],
        check=True,
    )
    return next(tmp.glob("neuralogic-*.whl"))


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def convert_trains(examples: str, queries: str, out: Path) -> None:
    cars: dict[tuple[int, int], dict[str, str]] = {}
    for pred, args in FACT.findall(examples):
        train, pos, value = (a.strip() for a in args.split(","))
        cars.setdefault((int(train), int(pos)), {})[pred] = value

    labels = {}
    for line in queries.splitlines():
        if not line.strip():
            continue
        value, atom = line.split()
        train = int(FACT.match(atom).group(2))
        # positive queries are the eastbound trains
        labels[train] = "east" if float(value) > 0 else "west"

    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trains.csv", ["id", "direction"], [[t, labels[t]] for t in sorted(labels)])
    rows = []
    for car_id, (train, pos) in enumerate(sorted(cars), start=1):
        c = cars[(train, pos)]
        rows.append([car_id, train, pos, c["shape"], c["length"], c["sides"], c["roof"],
                     c["wheels"], c["loadshape"], c["loadnum"]])
    write_csv(out / "cars.csv",
              ["car_id", "train_id", "position", "shape", "len", "sides", "roof",
               "wheels", "load_shape", "load_num"], rows)

    schema = {
        "tables": [
            {"name": "trains", "file": "trains.csv", "columns": [
                {"name": "id", "kind": "key"},
                {"name": "direction", "kind": "categorical"},
            ]},
            {"name": "cars", "file": "cars.csv", "columns": [
                {"name": "car_id", "kind": "key"},
                {"name": "train_id", "kind": "foreign_key", "references": "trains"},
                {"name": "position", "kind": "numeric"},
                {"name": "shape", "kind": "categorical"},
                {"name": "len", "kind": "categorical"},
                {"name": "sides", "kind": "categorical"},
                {"name": "roof", "kind": "categorical"},
                {"name": "wheels", "kind": "numeric"},
                {"name": "load_shape", "kind": "categorical"},
                {"name": "load_num", "kind": "numeric"},
            ]},
        ],
        "target_table": "trains",
        "target_attribute": "direction",
    }
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")


def convert_mutagenesis(examples: str, queries: str, out: Path) -> None:
    labels = [line.split()[0] for line in queries.splitlines() if line.strip()]
    molecules = [line for line in examples.splitlines() if line.strip()]
    assert len(labels) == len(molecules)

    drugs, atoms, bonds = [], [], []
    for line, label in zip(molecules, labels):
        facts = FACT.findall(line)
        element: dict[str, str] = {}
        bond_atoms: dict[str, tuple[str, str]] = {}
        bond_type: dict[str, str] = {}
        for pred, args in facts:
            parts = [a.strip() for a in args.split(",")]
            if pred == "bond":
                bond_atoms.setdefault(parts[2], (parts[0], parts[1]))
            elif pred.startswith("b_"):
                bond_type[parts[0]] = pred[2:]
            elif pred in ELEMENTS:
                element[parts[0]] = pred
            else:
                raise ValueError(f"unexpected predicate {pred}")
        drug = next(iter(element)).split("_")[0]
        drugs.append([drug, "1" if float(label) > 0 else "0"])
        for atom in sorted(element, key=lambda a: int(a.split("_")[1])):
            atoms.append([atom, drug, element[atom]])
        for b in sorted(bond_atoms, key=int):
            a1, _ = bond_atoms[b]
            bonds.append([f"{drug}_b{b}", a1, bond_type[b]])

    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "drugs.csv", ["drug_id", "active"], drugs)
    write_csv(out / "atoms.csv", ["atom_id", "drug_id", "element"], atoms)
    write_csv(out / "bonds.csv", ["bond_id", "atom1_id", "type"], bonds)

    schema = {
        "tables": [
            {"name": "drugs", "file": "drugs.csv", "columns": [
                {"name": "drug_id", "kind": "key"},
                {"name": "active", "kind": "categorical"},
            ]},
            {"name": "atoms", "file": "atoms.csv", "columns": [
                {"name": "atom_id", "kind": "key"},
                {"name": "drug_id", "kind": "foreign_key", "references": "drugs"},
                {"name": "element", "kind": "categorical"},
            ]},
            {"name": "bonds", "file": "bonds.csv", "columns": [
                {"name": "bond_id", "kind": "key"},
                {"name": "atom1_id", "kind": "foreign_key", "references": "atoms"},
                {"name": "type", "kind": "categorical"},
            ]},
        ],
        "target_table": "drugs",
        "target_attribute": "active",
    }
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wheel", type=Path)
    parser.add_argument("--out", type=Path, default=OUT)
    args = parser.parse_args()
    wheel = args.wheel or fetch_wheel()
    with zipfile.ZipFile(wheel) as z:
        def read(name: str) -> str:
            return z.read(PREFIX + name).decode("utf-8")

        convert_trains(read("simple/trains/examples.txt"), read("simple/trains/queries.txt"),
                       args.out / "trains")
        convert_mutagenesis(read("molecules/mutagenesis/examples.txt"),
                            read("molecules/mutagenesis/queries.txt"), args.out / "mutagenesis188")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
