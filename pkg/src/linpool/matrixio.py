"""Plain-text CSV matrices, with complex values stored as ``_re``/``_im`` column pairs."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DataError


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_matrix_csv(path: str | Path) -> np.ndarray:
    """Read an ``n x p`` numeric CSV.

    A non-numeric first row is taken as a header. If every header name ends
    in ``_re``/``_im`` in alternating pairs the columns are combined into a
    complex matrix.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = None
    if not all(_is_number(t) for t in rows[0]):
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    try:
        X = np.array([[float(t) for t in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite values")
    if header is not None:
        if len(header) != width:
            raise DataError(f"{path}: header has {len(header)} names for {width} columns")
        re = [h.endswith("_re") for h in header[0::2]]
        im = [h.endswith("_im") for h in header[1::2]]
        if width % 2 == 0 and all(re) and all(im):
            stems_re = [h[:-3] for h in header[0::2]]
            stems_im = [h[:-3] for h in header[1::2]]
            if stems_re != stems_im:
                raise DataError(f"{path}: mismatched _re/_im column pairs")
            return X[:, 0::2] + 1j * X[:, 1::2]
    return X


def write_matrix_csv(path: str | Path, M: np.ndarray, names: list[str] | None = None) -> None:
    """Write a matrix with a header row; complex values become ``_re``/``_im`` pairs."""
    M = np.atleast_2d(np.asarray(M))
    p = M.shape[1]
    names = names or [f"X{j + 1}" for j in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if np.iscomplexobj(M):
            w.writerow([f"{nm}{sfx}" for nm in names for sfx in ("_re", "_im")])
            for row in M:
                w.writerow([format(float(v), ".17g") for z in row for v in (z.real, z.imag)])
        else:
            w.writerow(names)
            for row in M:
                w.writerow([format(float(v), ".17g") for v in row])
