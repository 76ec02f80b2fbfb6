"""Molecule file ingestion and writing.

Format: whitespace-delimited text, one atom per line with six fields
(element symbol, x, y, z in Angstrom, partial charge, van der Waals
radius); '#' starts a comment and blank lines are skipped.  Parsing yields
two marked point sets sharing coordinates: the charge channel and the
steric (radius) channel.
"""

from __future__ import annotations

import numpy as np

from .geometry import MarkedPointSet


class MoleculeParseError(ValueError):
    """Malformed molecule file; the message names the offending line."""


def parse_molecule_text(text: str, name: str = "<text>") -> tuple[MarkedPointSet, MarkedPointSet]:
    labels = []
    coords = []
    charges = []
    radii = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise MoleculeParseError(
                f"{name}:{lineno}: expected 6 fields "
                f"(element x y z charge radius), got {len(parts)}"
            )
        labels.append(parts[0])
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError as err:
            raise MoleculeParseError(f"{name}:{lineno}: {err}") from None
        if not all(np.isfinite(values)):
            raise MoleculeParseError(f"{name}:{lineno}: non-finite value")
        coords.append(values[0:3])
        charges.append(values[3])
        radii.append(values[4])
    if not coords:
        raise MoleculeParseError(f"{name}: no atom records found")
    coords = np.array(coords)
    charge_set = MarkedPointSet(coords, np.array(charges), labels=tuple(labels))
    steric_set = MarkedPointSet(coords, np.array(radii), labels=tuple(labels))
    return charge_set, steric_set


def parse_molecule_file(path) -> tuple[MarkedPointSet, MarkedPointSet]:
    """Read a molecule file into (charge channel, steric channel)."""
    with open(path) as fh:
        text = fh.read()
    return parse_molecule_text(text, name=str(path))


def write_molecule_file(path, charge_set: MarkedPointSet, steric_set: MarkedPointSet):
    """Write a molecule in the text format; round-trips bit-exactly."""
    if not np.array_equal(charge_set.coords, steric_set.coords):
        raise ValueError("charge and steric channels must share coordinates")
    labels = charge_set.labels or tuple("X" for _ in range(charge_set.k))
    with open(path, "w") as fh:
        for label, xyz, q, r in zip(
            labels, charge_set.coords, charge_set.marks, steric_set.marks
        ):
            fields = " ".join(repr(float(v)) for v in (*xyz, q, r))
            fh.write(f"{label} {fields}\n")
