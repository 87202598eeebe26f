#!/usr/bin/env python3
"""Regenerates crates/core/data/space_groups.tsv from spglib's space-group database.

One canonical setting per number: the first Hall setting spglib lists
(unique axis b / cell choice 1 for monoclinic, hexagonal axes for R groups).
Order is the number of operations of the conventional cell, including
centering translations.
"""
import hashlib
import pathlib

import spglib

LAUE = {
    "1": "-1", "-1": "-1",
    "2": "2/m", "m": "2/m", "2/m": "2/m",
    "222": "mmm", "mm2": "mmm", "mmm": "mmm",
    "4": "4/m", "-4": "4/m", "4/m": "4/m",
    "422": "4/mmm", "4mm": "4/mmm", "-42m": "4/mmm", "4/mmm": "4/mmm",
    "3": "-3", "-3": "-3",
    "32": "-3m", "3m": "-3m", "-3m": "-3m",
    "6": "6/m", "-6": "6/m", "6/m": "6/m",
    "622": "6/mmm", "6mm": "6/mmm", "-6m2": "6/mmm", "6/mmm": "6/mmm",
    "23": "m-3", "m-3": "m-3",
    "432": "m-3m", "-43m": "m-3m", "m-3m": "m-3m",
}
POLAR = {"1", "2", "m", "mm2", "4", "4mm", "3", "3m", "6", "6mm"}


def crystal_system(n):
    for hi, name in [(2, "triclinic"), (15, "monoclinic"), (74, "orthorhombic"),
                     (142, "tetragonal"), (167, "trigonal"), (194, "hexagonal"),
                     (230, "cubic")]:
        if n <= hi:
            return name


def main():
    first_hall = {}
    for hall in range(1, 531):
        t = spglib.get_spacegroup_type(hall)
        first_hall.setdefault(t.number, hall)
    lines = ["# full_symbol|number|order|point_group|crystal_system|laue_class|symmetry|polarity|centering|dir0|dir1|dir2"]
    for n in range(1, 231):
        hall = first_hall[n]
        t = spglib.get_spacegroup_type(hall)
        ops = spglib.get_symmetry_from_database(hall)
        order = len(ops["rotations"])
        full = t.international_full
        parts = full.split()
        centering, dirs = parts[0], parts[1:]
        dirs = dirs + [""] * (3 - len(dirs))
        pg = t.pointgroup_international
        laue = LAUE[pg]
        sym = "Centrosymmetric" if laue == pg else "Non-centrosymmetric"
        pol = "polar" if pg in POLAR else "non-polar"
        lines.append("|".join([full, str(n), str(order), pg, crystal_system(n), laue, sym, pol,
                               centering] + dirs))
    out = pathlib.Path(__file__).resolve().parents[1] / "crates/core/data/space_groups.tsv"
    text = "\n".join(lines) + "\n"
    out.write_text(text)
    digest = hashlib.sha256(text.encode()).hexdigest()
    out.with_suffix(".tsv.sha256").write_text(f"{digest}  space_groups.tsv\n")


if __name__ == "__main__":
    main()
