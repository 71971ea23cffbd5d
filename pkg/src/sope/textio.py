"""Flat text tables for occupancies, ratios and q-values.

A table is comma-separated text: one header line naming the index columns
followed by ``value``, then one row per entry. ``(s, a)`` tables use the
header ``s,a,value``; time-indexed tables use ``t,s,a,value`` with 1-based
``t``. Values use Python's shortest round-trip float repr. Masked ratio
entries are written as ``masked``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np


def format_sa_table(table: np.ndarray, mask: Optional[np.ndarray] = None) -> str:
    table = np.asarray(table, dtype=float)
    lines = ["s,a,value"]
    for s in range(table.shape[0]):
        for a in range(table.shape[1]):
            value = "masked" if mask is not None and not mask[s, a] else repr(float(table[s, a]))
            lines.append(f"{s},{a},{value}")
    return "\n".join(lines) + "\n"


def format_tsa_table(table: np.ndarray) -> str:
    table = np.asarray(table, dtype=float)
    lines = ["t,s,a,value"]
    for t in range(table.shape[0]):
        for s in range(table.shape[1]):
            for a in range(table.shape[2]):
                lines.append(f"{t + 1},{s},{a},{float(table[t, s, a])!r}")
    return "\n".join(lines) + "\n"


def format_s_table(values: np.ndarray) -> str:
    lines = ["s,value"] + [f"{s},{float(v)!r}" for s, v in enumerate(np.asarray(values, dtype=float))]
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> np.ndarray:
    """Inverse of the ``format_*`` functions; masked entries come back as NaN."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header[-1] != "value":
        raise ValueError(f"last column must be 'value', got {header[-1]!r}")
    rows = [ln.split(",") for ln in lines[1:]]
    idx = np.array([[int(x) for x in r[:-1]] for r in rows], dtype=int).reshape(len(rows), len(header) - 1)
    vals = np.array([np.nan if r[-1] == "masked" else float(r[-1]) for r in rows])
    if header[0] == "t":
        idx[:, 0] -= 1
    shape = tuple(idx.max(axis=0) + 1) if len(rows) else (0,) * (len(header) - 1)
    out = np.full(shape, np.nan)
    out[tuple(idx.T)] = vals
    return out
