"""File formats: MovieLens ratings, binary PGM images, CSV results, key=value configs.

CSV outputs have a header row and write floats with 17 significant digits so
they round-trip exactly through ``float()``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DatasetMissing",
    "RatingsDataset",
    "read_movielens",
    "read_pgm",
    "write_pgm",
    "scale_to_bytes",
    "format_float",
    "write_csv",
    "read_csv",
    "read_config",
    "write_config",
    "read_triplets",
    "read_problem",
    "read_vector",
]


class DatasetMissing(FileNotFoundError):
    pass


# --------------------------------------------------------------------------
# ratings


@dataclass
class RatingsDataset:
    """Ratings ``(user, item, rating)`` with the raw MovieLens identifiers."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        self.items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        self.ratings = np.asarray(self.ratings, dtype=np.float64).reshape(-1)
        if not (self.users.size == self.items.size == self.ratings.size):
            raise ValueError("users, items and ratings must have equal length")
        if self.ratings.size and (self.ratings.min() < 1 or self.ratings.max() > 5):
            raise ValueError("ratings must lie in [1, 5]")
        pairs = np.unique(np.stack([self.users, self.items], axis=1), axis=0)
        if pairs.shape[0] != self.users.size:
            raise ValueError("(user, item) pairs must be unique")

    def __len__(self) -> int:
        return int(self.ratings.size)

    @property
    def records(self) -> list[tuple[int, int, float]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    @property
    def user_ids(self) -> np.ndarray:
        return np.unique(self.users)

    @property
    def item_ids(self) -> np.ndarray:
        return np.unique(self.items)

    @property
    def n_users(self) -> int:
        return int(self.user_ids.size)

    @property
    def n_items(self) -> int:
        return int(self.item_ids.size)

    def subset(self, index) -> "RatingsDataset":
        return RatingsDataset(self.users[index], self.items[index], self.ratings[index])


def read_movielens(path: str | os.PathLike) -> RatingsDataset:
    """Parse ``u.data`` (tab-separated) or ``ratings.dat`` (``::``-separated).

    Timestamps are ignored.  The separator is detected from the first line.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetMissing(f"ratings file not found: {path}")
    users, items, ratings = [], [], []
    with path.open("r", encoding="latin-1") as fh:
        sep = None
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if sep is None:
                sep = "::" if "::" in line else "\t"
            parts = line.split(sep)
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected user, item, rating")
            users.append(int(parts[0]))
            items.append(int(parts[1]))
            ratings.append(float(parts[2]))
    return RatingsDataset(np.array(users), np.array(items), np.array(ratings))


# --------------------------------------------------------------------------
# PGM


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` header tokens of a PGM file, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Binary (P5) 8-bit PGM as a float array in [0, 1]."""
    data = Path(path).read_bytes()
    (magic, width, height, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise ValueError("only binary PGM (P5) is supported")
    width, height, maxval = int(width), int(height), int(maxval)
    if not 0 < maxval < 256:
        raise ValueError("only 8-bit PGM is supported")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return raster.reshape(height, width).astype(np.float64) / maxval


def scale_to_bytes(a) -> np.ndarray:
    """Linear map of ``a`` onto [0, 255]; a constant array maps to 0."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path: str | os.PathLike, image, *, rescale: bool = False) -> None:
    """Write a binary PGM.

    Floats in [0, 1] are mapped to 0..255; ``rescale=True`` stretches the
    value range linearly onto 0..255 instead (difference maps).
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if rescale:
        raster = scale_to_bytes(image)
    elif image.dtype == np.uint8:
        raster = image
    else:
        raster = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster).tobytes())


# --------------------------------------------------------------------------
# CSV


def format_float(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


# --------------------------------------------------------------------------
# config files


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key.replace("-", "_")] = value
    return out


def write_config(path: str | os.PathLike, values: Mapping[str, object]) -> None:
    with open(path, "w") as fh:
        for key, value in values.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(format_float(v) for v in value)
            else:
                value = format_float(value)
            fh.write(f"{key} = {value}\n")


# --------------------------------------------------------------------------
# numeric inputs for the one-shot commands


def _numeric_rows(path) -> list[list[str]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            row = [c.strip() for c in row]
            if not row or not row[0] or row[0].startswith("#"):
                continue
            rows.append(row)
    return rows


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_triplets(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``row,col,value`` lines (0-based indices); a non-numeric first line is a header."""
    rows = _numeric_rows(path)
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if any(len(r) != 3 for r in rows):
        raise ValueError(f"{path}: every line needs row,col,value")
    arr = np.array([[float(c) for c in r] for r in rows]).reshape(-1, 3)
    r, c = arr[:, 0], arr[:, 1]
    if np.any(r != np.round(r)) or np.any(c != np.round(c)):
        raise ValueError(f"{path}: row and col must be integers")
    return r.astype(np.int64), c.astype(np.int64), arr[:, 2]


def read_vector(path: str | os.PathLike) -> np.ndarray:
    """Numbers separated by commas or newlines."""
    values = [float(c) for row in _numeric_rows(path) for c in row if c]
    return np.array(values)


def read_problem(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Sensing matrix and signal from lines tagged ``A,...`` (one per row) and ``x,...``."""
    A_rows, x = [], None
    for row in _numeric_rows(path):
        tag, values = row[0], [float(c) for c in row[1:]]
        if tag == "A":
            A_rows.append(values)
        elif tag == "x":
            if x is not None:
                raise ValueError(f"{path}: more than one x line")
            x = values
        else:
            raise ValueError(f"{path}: unknown line tag {tag!r}")
    if not A_rows or x is None:
        raise ValueError(f"{path}: need at least one A line and one x line")
    if len({len(r) for r in A_rows}) != 1 or len(A_rows[0]) != len(x):
        raise ValueError(f"{path}: A rows and x must all have N entries")
    return np.array(A_rows), np.array(x)
