"""CAN log parsing, preprocessing, splits and min-max normalization.

The on-disk log format is one frame per line:

    timestamp,can_id_hex,dlc,byte1,...,byteN[,flag]

with ``flag`` being ``R`` (normal) or ``T`` (injected). Lines starting
with ``#`` are comments. Missing or empty byte fields are zero, and every
frame carries exactly 8 data bytes after parsing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import ConfigError, OrderingError, ParseError

LABEL_NORMAL = 0
LABEL_ANOMALOUS = 1

FLAG_NORMAL = "R"
FLAG_ANOMALOUS = "T"

MAX_CAN_ID = 0x1FFFFFFF  # 29-bit extended identifier

#: Names of the 11 raw per-frame fields, in canonical order.
RAW_FIELDS = ("Timestamp", "CAN ID", "DLC") + tuple(f"Data{i}" for i in range(1, 9))

_TABLE_MAGIC = b"CANFTBL\0"
_SPLIT_MAGIC = b"CANSPLT\0"
_NORM_MAGIC = b"CANNORM\0"


@dataclass(frozen=True)
class CanFrame:
    """One parsed bus message."""

    timestamp: float
    can_id: int
    dlc: int
    data: tuple[int, ...]
    label: int = LABEL_NORMAL

    def __post_init__(self):
        if len(self.data) != 8:
            raise ValueError("frame data must have exactly 8 bytes")


class FrameTable:
    """Columnar store for an ordered frame stream.

    Columns: timestamp (f8), can_id (u4), dlc (u1), data (n, 8) u1,
    label (u1). Immutable by convention once built.
    """

    def __init__(self, timestamp, can_id, dlc, data, label):
        self.timestamp = np.asarray(timestamp, dtype=np.float64)
        self.can_id = np.asarray(can_id, dtype=np.uint32)
        self.dlc = np.asarray(dlc, dtype=np.uint8)
        self.data = np.asarray(data, dtype=np.uint8).reshape(-1, 8)
        self.label = np.asarray(label, dtype=np.uint8)
        n = len(self.timestamp)
        if not (len(self.can_id) == len(self.dlc) == len(self.data) == len(self.label) == n):
            raise ValueError("frame table columns must have equal length")

    def __len__(self) -> int:
        return len(self.timestamp)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameTable):
            return NotImplemented
        return (
            np.array_equal(self.timestamp, other.timestamp)
            and np.array_equal(self.can_id, other.can_id)
            and np.array_equal(self.dlc, other.dlc)
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.label, other.label)
        )

    def frame(self, i: int) -> CanFrame:
        return CanFrame(
            timestamp=float(self.timestamp[i]),
            can_id=int(self.can_id[i]),
            dlc=int(self.dlc[i]),
            data=tuple(int(b) for b in self.data[i]),
            label=int(self.label[i]),
        )

    def frames(self) -> list[CanFrame]:
        return [self.frame(i) for i in range(len(self))]

    @classmethod
    def from_frames(cls, frames) -> "FrameTable":
        frames = list(frames)
        return cls(
            [f.timestamp for f in frames],
            [f.can_id for f in frames],
            [f.dlc for f in frames],
            [f.data for f in frames] if frames else np.zeros((0, 8), dtype=np.uint8),
            [f.label for f in frames],
        )

    def raw_matrix(self) -> np.ndarray:
        """The 11 raw feature columns (Timestamp, CAN ID, DLC, Data1..8) as f8."""
        out = np.empty((len(self), 11), dtype=np.float64)
        out[:, 0] = self.timestamp
        out[:, 1] = self.can_id
        out[:, 2] = self.dlc
        out[:, 3:] = self.data
        return out

    def save(self, path: str | Path) -> None:
        write_container(
            path,
            _TABLE_MAGIC,
            {
                "timestamp": self.timestamp,
                "can_id": self.can_id,
                "dlc": self.dlc,
                "data": self.data,
                "label": self.label,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "FrameTable":
        _, arrays, _ = read_container(path, _TABLE_MAGIC)
        return cls(
            arrays["timestamp"], arrays["can_id"], arrays["dlc"],
            arrays["data"], arrays["label"],
        )


def _parse_hex(token: str, lineno: int, what: str) -> int:
    token = token.strip()
    if token.lower().startswith("0x"):
        token = token[2:]
    if not token:
        raise ParseError(lineno, f"empty {what}")
    try:
        return int(token, 16)
    except ValueError:
        raise ParseError(lineno, f"non-hex {what} {token!r}") from None


def parse_log(
    path: str | Path,
    format: str = "hcrl_csv",
    default_label: int = LABEL_NORMAL,
    header_rows: int = 0,
) -> FrameTable:
    """Parse a CAN log into a FrameTable.

    ``default_label`` applies to rows without a trailing R/T flag (the
    attack-free captures carry no flags). ``header_rows`` skips that many
    leading non-comment lines, for files that ship with a header.
    """
    if format != "hcrl_csv":
        raise ConfigError(f"unknown log format {format!r}")
    timestamps: list[float] = []
    ids: list[int] = []
    dlcs: list[int] = []
    payload: list[list[int]] = []
    labels: list[int] = []
    prev_ts = -np.inf
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if skipped < header_rows:
                skipped += 1
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) < 3:
                raise ParseError(lineno, f"expected at least 3 fields, got {len(fields)}")
            try:
                ts = float(fields[0])
            except ValueError:
                raise ParseError(lineno, f"unparsable timestamp {fields[0]!r}") from None
            if not np.isfinite(ts) or ts < 0:
                raise ParseError(lineno, f"invalid timestamp {fields[0]!r}")
            if ts < prev_ts:
                raise OrderingError(lineno, f"timestamp {ts!r} decreases (previous {prev_ts!r})")
            prev_ts = ts
            can_id = _parse_hex(fields[1], lineno, "CAN ID")
            if can_id > MAX_CAN_ID:
                raise ParseError(lineno, f"CAN ID 0x{can_id:X} exceeds 29 bits")
            try:
                dlc = int(fields[2])
            except ValueError:
                raise ParseError(lineno, f"unparsable DLC {fields[2]!r}") from None
            if not 0 <= dlc <= 8:
                raise ParseError(lineno, f"DLC {dlc} outside 0-8")
            rest = fields[3:]
            label = default_label
            if rest and rest[-1].upper() in (FLAG_NORMAL, FLAG_ANOMALOUS):
                label = LABEL_NORMAL if rest[-1].upper() == FLAG_NORMAL else LABEL_ANOMALOUS
                rest = rest[:-1]
            if len(rest) > 8:
                raise ParseError(lineno, f"{len(rest)} data byte fields (max 8)")
            row = [0] * 8
            for i, tok in enumerate(rest):
                if tok == "" or i >= dlc:
                    continue  # NaN/empty fields and bytes beyond the DLC are 0
                val = _parse_hex(tok, lineno, f"data byte {i + 1}")
                if val > 0xFF:
                    raise ParseError(lineno, f"data byte {i + 1} value 0x{val:X} exceeds one byte")
                row[i] = val
            timestamps.append(ts)
            ids.append(can_id)
            dlcs.append(dlc)
            payload.append(row)
            labels.append(label)
    return FrameTable(
        timestamps, ids, dlcs,
        np.asarray(payload, dtype=np.uint8).reshape(-1, 8),
        labels,
    )


def write_log(table: FrameTable, path: str | Path) -> None:
    """Serialize a FrameTable back to the text log format.

    Reparsing the written file yields a table equal to ``table``
    (timestamps use shortest round-trip float formatting).
    """
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(table)):
            flag = FLAG_ANOMALOUS if table.label[i] else FLAG_NORMAL
            bytes_txt = ",".join(f"{b:02X}" for b in table.data[i])
            fh.write(
                f"{float(table.timestamp[i])!r},{table.can_id[i]:03X},"
                f"{table.dlc[i]},{bytes_txt},{flag}\n"
            )


@dataclass(frozen=True)
class SplitSpec:
    """Fractions for the train/validation/test row split."""

    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 7

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ConfigError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions sum to {sum(fracs)!r}, not 1")


def split(n_rows: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded uniform shuffle split of ``n_rows`` row indices.

    Returns (train, val, test) index arrays; disjoint, covering, with
    sizes within 1 of the requested fractions. Deterministic per seed.
    """
    if hasattr(n_rows, "__len__"):
        n_rows = len(n_rows)
    n_rows = int(n_rows)
    if n_rows == 0:
        raise ConfigError("cannot split an empty input")
    if n_rows < 10:
        raise ConfigError(f"need at least 10 rows to split, got {n_rows}")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n_rows)
    n_train = int(round(n_rows * spec.train_fraction))
    n_val = int(round(n_rows * spec.val_fraction))
    n_val = min(n_val, n_rows - n_train)
    return (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )


@dataclass
class Normalizer:
    """Per-column min-max affine map learned from training rows only."""

    min_: np.ndarray
    max_: np.ndarray

    def __post_init__(self):
        self.min_ = np.asarray(self.min_, dtype=np.float64)
        self.max_ = np.asarray(self.max_, dtype=np.float64)
        if np.any(self.max_ < self.min_):
            raise ValueError("normalizer max < min")

    def save(self, path: str | Path) -> None:
        write_container(path, _NORM_MAGIC, {"min": self.min_, "max": self.max_})

    @classmethod
    def load(cls, path: str | Path) -> "Normalizer":
        _, arrays, _ = read_container(path, _NORM_MAGIC)
        return cls(arrays["min"], arrays["max"])


def fit_normalizer(rows: np.ndarray, train_idx: np.ndarray) -> Normalizer:
    rows = np.asarray(rows, dtype=np.float64)
    train_idx = np.asarray(train_idx)
    if train_idx.size == 0:
        raise ConfigError("cannot fit a normalizer on an empty training set")
    sub = rows[train_idx]
    return Normalizer(sub.min(axis=0), sub.max(axis=0))


def apply_normalizer(norm: Normalizer, rows: np.ndarray) -> np.ndarray:
    """Affine map x -> (x - min) / (max - min), not clamped.

    Columns that were constant on the training rows map to 0 everywhere.
    """
    rows = np.asarray(rows, dtype=np.float64)
    span = norm.max_ - norm.min_
    safe = np.where(span > 0, span, 1.0)
    out = (rows - norm.min_) / safe
    out[..., span == 0] = 0.0
    return out


def save_splits(
    path: str | Path,
    train: np.ndarray,
    val: np.ndarray,
    test: np.ndarray,
    spec: SplitSpec,
) -> None:
    write_container(
        path,
        _SPLIT_MAGIC,
        {
            "train": np.asarray(train, dtype=np.int64),
            "val": np.asarray(val, dtype=np.int64),
            "test": np.asarray(test, dtype=np.int64),
        },
        meta={
            "seed": spec.seed,
            "fractions": [spec.train_fraction, spec.val_fraction, spec.test_fraction],
        },
    )


def load_splits(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    _, arrays, meta = read_container(path, _SPLIT_MAGIC)
    return arrays["train"], arrays["val"], arrays["test"], meta
