"""CSV dataset ingestion and split-file round trips.

Dataset CSVs are numeric with an optional single header row; the last d_Y
columns are responses.  Rows with non-numeric cells are rejected with the
file and line in the message.  All output CSVs use '.' decimals, ','
separators, and LF line endings.
"""

from __future__ import annotations

import csv
import os
from typing import Optional, Tuple

import numpy as np

from .preprocess import SplitSet


def _parse_row(row):
    try:
        return [float(c) for c in row]
    except ValueError:
        return None


def read_dataset(path: str, d_y: int) -> Tuple[np.ndarray, np.ndarray]:
    """Read a dataset CSV into (predictors, responses)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(c.strip() == "" for c in row):
                continue
            values = _parse_row(row)
            if values is None:
                if lineno == 1 and not rows:
                    continue  # header row
                raise ValueError(f"{path}:{lineno}: non-numeric cell in row {row!r}")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent column counts {sorted(widths)}")
    data = np.asarray(rows, dtype=float)
    if d_y < 1 or d_y >= data.shape[1]:
        raise ValueError(
            f"{path}: d_y={d_y} incompatible with {data.shape[1]} columns"
        )
    return data[:, :-d_y], data[:, -d_y:]


def read_matrix(path: str) -> np.ndarray:
    """Read a plain numeric CSV (optional header) as one matrix."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(c.strip() == "" for c in row):
                continue
            values = _parse_row(row)
            if values is None:
                if lineno == 1 and not rows:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric cell in row {row!r}")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent column counts {sorted(widths)}")
    return np.asarray(rows, dtype=float)


def write_predictions(path: str, predictions: np.ndarray):
    """Write predictions mirroring the input row order."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"y{j}" for j in range(pred.shape[1])])
        for row in pred:
            w.writerow([repr(v) for v in row])


def split_filename(kind: str, index: int) -> str:
    return f"{kind}_split_{index:02d}.txt"


def write_split_files(out_dir: str, splits: SplitSet) -> list:
    """One text file per split: a 'train' header line, the zero-based train
    indices one per line, then a 'test' line and the test indices."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, (train, test) in enumerate(splits.splits):
        path = os.path.join(out_dir, split_filename(splits.kind, i))
        with open(path, "w") as fh:
            fh.write("train\n")
            fh.writelines(f"{int(j)}\n" for j in train)
            fh.write("test\n")
            fh.writelines(f"{int(j)}\n" for j in test)
        paths.append(path)
    return paths


def read_split_file(path: str) -> Tuple[np.ndarray, np.ndarray]:
    sections = {"train": [], "test": []}
    current: Optional[str] = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if not token:
                continue
            if token in sections:
                current = token
            elif current is None:
                raise ValueError(f"{path}:{lineno}: expected 'train' or 'test' header")
            else:
                try:
                    sections[current].append(int(token))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad index {token!r}") from None
    if not sections["train"] or not sections["test"]:
        raise ValueError(f"{path}: missing train or test section")
    return (
        np.asarray(sections["train"], dtype=int),
        np.asarray(sections["test"], dtype=int),
    )
