"""Columnar text output with reproducibility headers.

Every emitted data file carries '#'-prefixed header lines: tool version,
a hash of the generating configuration, unit declarations (from the column
names), and the standing assumption ledger. Tab-separated, UTF-8.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import __version__

ASSUMPTIONS = (
    "extent_z: rails continue straight beyond the last transition zone to "
    "+-extent_z (default gamma + delta + 1600 um); a termination assumption",
    "dc tiling: 20 um compensation rail per gap channel plus 40 um cells, "
    "meander triplets outside transition zones, 5 independents per zone, "
    "DCOR/DCOL outside the outer rails; labels are a documented convention",
    "rf pickup: summed in phase with the main drive (worst case)",
)


def config_hash(config) -> str:
    """Stable short hash of any JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_lines(config=None, extra=None):
    lines = [f"curvtrap {__version__}"]
    if config is not None:
        lines.append(f"config_hash: {config_hash(config)}")
    lines.append("units: encoded in column names (um, mev, rad_s, j_m, ...)")
    for a in ASSUMPTIONS:
        lines.append(f"assumption: {a}")
    if extra:
        for key, val in extra.items():
            lines.append(f"{key}: {val}")
    return lines


def write_columns(dest, columns: dict, config=None, extra=None):
    """Write named columns as tab-separated text with a commented header."""
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    n_rows = len(data[0])
    if any(len(c) != n_rows for c in data):
        raise ValueError("all columns must have equal length")
    with open(dest, "w", encoding="utf-8") as fh:
        for line in header_lines(config, extra):
            fh.write(f"# {line}\n")
        fh.write("# " + "\t".join(names) + "\n")
        for i in range(n_rows):
            fh.write("\t".join(f"{c[i]:.9g}" for c in data) + "\n")
    return dest
