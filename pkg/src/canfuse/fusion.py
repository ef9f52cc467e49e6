"""Cascade fused feature matrix: raw (11) + temporal (2) + spatial (8).

The canonical column order is fixed so feature masks and serialized
matrices stay comparable across runs:

    Timestamp, CAN ID, DLC, Data1..Data8, SE, RATIO, PE1..PE8
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import AlignmentError, ConfigError
from .ingest import RAW_FIELDS

CANONICAL_COLUMNS: tuple[str, ...] = (
    RAW_FIELDS + ("SE", "RATIO") + tuple(f"PE{i}" for i in range(1, 9))
)

N_FEATURES = len(CANONICAL_COLUMNS)  # 21

_FUSED_MAGIC = b"CANFUSE\0"


class FusedMatrix:
    """A fused feature matrix plus labels and column provenance."""

    def __init__(self, values, labels, columns=CANONICAL_COLUMNS, filter_size=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.columns = tuple(columns)
        self.filter_size = filter_size
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise AlignmentError(
                f"matrix has {self.values.shape[1]} columns for {len(self.columns)} names"
            )
        if len(self.values) != len(self.labels):
            raise AlignmentError("labels and matrix rows disagree")

    def __len__(self) -> int:
        return len(self.values)

    def save(self, path: str | Path) -> None:
        meta = {"columns": list(self.columns), "filter_size": self.filter_size}
        write_container(
            path, _FUSED_MAGIC, {"values": self.values, "labels": self.labels}, meta
        )

    @classmethod
    def load(cls, path: str | Path) -> "FusedMatrix":
        _, arrays, meta = read_container(path, _FUSED_MAGIC)
        return cls(
            arrays["values"], arrays["labels"],
            tuple(meta["columns"]), meta.get("filter_size"),
        )

    def to_csv(self, path: str | Path) -> None:
        header = ",".join(list(self.columns) + ["label"])
        body = np.column_stack([self.values, self.labels.astype(np.float64)])
        np.savetxt(path, body, delimiter=",", header=header, comments="", fmt="%.17g")


def assemble(
    raw: np.ndarray,
    se: np.ndarray,
    ratio: np.ndarray,
    pe: np.ndarray,
    labels: np.ndarray,
    filter_size: int | None = None,
) -> FusedMatrix:
    """Concatenate raw (n,11), SE, RATIO and PE (n,8) in canonical order."""
    raw = np.asarray(raw, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64).reshape(-1)
    ratio = np.asarray(ratio, dtype=np.float64).reshape(-1)
    pe = np.asarray(pe, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(raw)
    if not (len(se) == len(ratio) == len(pe) == len(labels) == n):
        raise AlignmentError(
            "assemble inputs disagree on row count: "
            f"raw={len(raw)} se={len(se)} ratio={len(ratio)} pe={len(pe)} labels={len(labels)}"
        )
    if raw.shape[1] != 11 or pe.shape[1] != 8:
        raise AlignmentError("raw must have 11 columns and pe 8")
    values = np.column_stack([raw, se, ratio, pe])
    return FusedMatrix(values, labels, CANONICAL_COLUMNS, filter_size)


def mask_from_names(names, columns=CANONICAL_COLUMNS) -> np.ndarray:
    """Boolean mask over ``columns`` with the named features set."""
    columns = tuple(columns)
    mask = np.zeros(len(columns), dtype=bool)
    for name in names:
        try:
            mask[columns.index(name)] = True
        except ValueError:
            raise ConfigError(f"unknown feature name {name!r}") from None
    return mask


def mask_to_names(mask, columns=CANONICAL_COLUMNS) -> tuple[str, ...]:
    mask = np.asarray(mask, dtype=bool)
    return tuple(c for c, m in zip(columns, mask) if m)


def parse_mask(text: str, columns=CANONICAL_COLUMNS) -> np.ndarray:
    """Parse a mask given as a 0/1 bitstring or comma-separated names."""
    text = text.strip()
    if set(text) <= {"0", "1"} and len(text) == len(columns):
        return np.array([c == "1" for c in text], dtype=bool)
    return mask_from_names([t.strip() for t in text.split(",") if t.strip()], columns)


def apply_mask(matrix: FusedMatrix, mask) -> FusedMatrix:
    """Keep columns with set bits, order preserved; provenance follows."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(matrix.columns),):
        raise ConfigError(
            f"mask has {mask.size} bits for {len(matrix.columns)} columns"
        )
    if not mask.any():
        raise ConfigError("feature mask selects no columns")
    return FusedMatrix(
        matrix.values[:, mask],
        matrix.labels,
        mask_to_names(mask, matrix.columns),
        matrix.filter_size,
    )
