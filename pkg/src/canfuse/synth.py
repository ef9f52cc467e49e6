"""Synthetic CAN traffic with injected DoS, fuzzy and spoofing attacks.

Background traffic is periodic per CAN ID with optional jitter and
per-byte payload generators. Attacks are overlaid on the background
timeline and every injected frame is labeled anomalous:

* ``dos``   - a contiguous train of highest-priority 0x000 frames at
  ``inter_frame`` spacing, placed at a seeded random offset.
* ``fuzzy`` - frames with uniformly random IDs and payloads at uniformly
  random times.
* ``spoof`` - runs of ``target_id`` frames at ``inter_frame`` spacing
  squeezed into the gaps after seeded-chosen genuine target frames; each
  run replays its anchor's payload with ``byte_overrides`` applied, so
  every spoofed frame trails the previous same-ID frame by less than the
  nominal period.

The number of injected frames is sized so the realized injected fraction
matches the request exactly (up to rounding).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import MAX_CAN_ID, FrameTable

PAYLOAD_PATTERNS = ("constant", "counter", "random")

ATTACK_KINDS = ("dos", "fuzzy", "spoof")

DOS_ID = 0x000
FUZZY_ID_SPACE = 0x800  # fuzzy injections draw from the 11-bit base ID space


@dataclass(frozen=True)
class IdSpec:
    """One background message source: ID, period, per-byte payload pattern."""

    can_id: int
    period: float
    pattern: tuple[str, ...] = ("constant",) * 8

    def __post_init__(self):
        if not 0 <= self.can_id <= MAX_CAN_ID:
            raise ConfigError(f"can_id 0x{self.can_id:X} out of range")
        if self.period <= 0:
            raise ConfigError("period must be positive")
        if len(self.pattern) != 8:
            raise ConfigError("payload pattern needs one token per data byte (8)")
        for tok in self.pattern:
            if tok not in PAYLOAD_PATTERNS:
                raise ConfigError(f"unknown payload pattern {tok!r}")


@dataclass(frozen=True)
class TrafficProfile:
    """Background traffic model: ID set, jitter fraction, duration, seed."""

    ids: tuple[IdSpec, ...]
    duration: float
    jitter: float = 0.0
    seed: int = 7

    def __post_init__(self):
        if not self.ids:
            raise ConfigError("profile needs at least one ID")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if not 0 <= self.jitter < 0.5:
            raise ConfigError("jitter must be in [0, 0.5)")

    def expected_frame_count(self) -> float:
        """Arithmetic frame-count oracle: duration times the summed rates."""
        return self.duration * sum(1.0 / s.period for s in self.ids)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    injected_fraction: float
    inter_frame: float = 2e-5
    target_id: int | None = None
    byte_overrides: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not 0 < self.injected_fraction < 1:
            raise ConfigError("injected_fraction must be in (0, 1)")
        if self.kind == "spoof" and self.target_id is None:
            raise ConfigError("spoof attack requires a target_id")
        if self.kind in ("dos", "spoof") and self.inter_frame <= 0:
            raise ConfigError("inter_frame must be positive")
        for idx, val in self.byte_overrides.items():
            if not 0 <= idx <= 7:
                raise ConfigError(f"byte override index {idx} outside 0-7")
            if not 0 <= val <= 0xFF:
                raise ConfigError(f"byte override value {val} outside 0-255")


def _background(profile: TrafficProfile, rng: np.random.Generator):
    """Per-ID periodic emissions; returns concatenated time-sorted arrays."""
    times_all, ids_all, data_all = [], [], []
    for spec in profile.ids:
        phase = rng.uniform(0.0, spec.period)
        n = int(np.ceil((profile.duration - phase) / spec.period))
        if n <= 0:
            continue
        times = phase + np.arange(n) * spec.period
        if profile.jitter > 0:
            times = times + rng.uniform(-profile.jitter, profile.jitter, n) * spec.period
            times = np.clip(times, 0.0, None)
            times.sort()
        keep = times < profile.duration
        times = times[keep]
        n = len(times)
        data = np.zeros((n, 8), dtype=np.uint8)
        for b, tok in enumerate(spec.pattern):
            if tok == "constant":
                data[:, b] = rng.integers(0, 256)
            elif tok == "counter":
                start = int(rng.integers(0, 256))
                data[:, b] = (start + np.arange(n)) % 256
            else:  # random
                data[:, b] = rng.integers(0, 256, n)
        times_all.append(times)
        ids_all.append(np.full(n, spec.can_id, dtype=np.uint32))
        data_all.append(data)
    times = np.concatenate(times_all)
    ids = np.concatenate(ids_all)
    data = np.vstack(data_all)
    order = np.argsort(times, kind="stable")
    return times[order], ids[order], data[order]


def _injected_count(n_background: int, fraction: float) -> int:
    n = int(round(n_background * fraction / (1.0 - fraction)))
    if n < 1:
        raise ConfigError("injected_fraction too small for this profile")
    return n


def generate(profile: TrafficProfile, attack: AttackSpec | None = None) -> FrameTable:
    """Generate a labeled, time-ordered frame stream.

    Deterministic for a fixed (profile, attack) pair: identical inputs
    produce identical frame lists.
    """
    rng = np.random.default_rng(profile.seed)
    bg_times, bg_ids, bg_data = _background(profile, rng)
    n_bg = len(bg_times)

    if attack is None:
        dlc = np.full(n_bg, 8, dtype=np.uint8)
        labels = np.zeros(n_bg, dtype=np.uint8)
        return FrameTable(bg_times, bg_ids, dlc, bg_data, labels)

    n_inj = _injected_count(n_bg, attack.injected_fraction)

    if attack.kind == "dos":
        span = (n_inj - 1) * attack.inter_frame
        if span >= profile.duration:
            raise ConfigError("dos injection train does not fit in the duration")
        start = rng.uniform(0.0, profile.duration - span)
        inj_times = start + np.arange(n_inj) * attack.inter_frame
        inj_ids = np.full(n_inj, DOS_ID, dtype=np.uint32)
        inj_data = np.zeros((n_inj, 8), dtype=np.uint8)
    elif attack.kind == "fuzzy":
        inj_times = np.sort(rng.uniform(0.0, profile.duration, n_inj))
        inj_ids = rng.integers(0, FUZZY_ID_SPACE, n_inj).astype(np.uint32)
        inj_data = rng.integers(0, 256, (n_inj, 8)).astype(np.uint8)
    else:  # spoof
        target = int(attack.target_id)
        periods = [s.period for s in profile.ids if s.can_id == target]
        if not periods:
            raise ConfigError(f"spoof target 0x{target:X} not present in the profile")
        if attack.inter_frame >= min(periods):
            raise ConfigError("spoof inter_frame must be below the target's period")
        target_mask = bg_ids == target
        target_times = bg_times[target_mask]
        target_data = bg_data[target_mask]
        # Each genuine target frame can anchor a run of replayed frames at
        # inter_frame spacing inside the gap before the next genuine
        # emission, so every injected frame trails its predecessor of the
        # same ID by exactly inter_frame.
        gaps = np.diff(np.append(target_times, profile.duration))
        capacity = np.maximum(
            np.floor(gaps / attack.inter_frame - 1e-9).astype(np.int64), 0
        )
        if int(capacity.sum()) < n_inj:
            raise ConfigError(
                "spoof injection does not fit; lower injected_fraction or inter_frame"
            )
        anchor_order = rng.permutation(len(target_times))
        time_parts: list[np.ndarray] = []
        data_parts: list[np.ndarray] = []
        remaining = n_inj
        for i in anchor_order:
            if remaining <= 0:
                break
            fit = min(int(capacity[i]), remaining)
            if fit == 0:
                continue
            offsets = attack.inter_frame * np.arange(1, fit + 1)
            time_parts.append(target_times[i] + offsets)
            data_parts.append(np.tile(target_data[i], (fit, 1)))
            remaining -= fit
        inj_times = np.concatenate(time_parts)
        inj_ids = np.full(n_inj, target, dtype=np.uint32)
        inj_data = np.vstack(data_parts)
        for idx, val in attack.byte_overrides.items():
            inj_data[:, idx] = val

    times = np.concatenate([bg_times, inj_times])
    ids = np.concatenate([bg_ids, inj_ids])
    data = np.vstack([bg_data, inj_data])
    labels = np.concatenate(
        [np.zeros(n_bg, dtype=np.uint8), np.ones(n_inj, dtype=np.uint8)]
    )
    order = np.argsort(times, kind="stable")
    n = n_bg + n_inj
    return FrameTable(times[order], ids[order], np.full(n, 8, np.uint8), data[order], labels[order])


def _coerce_id(value) -> int:
    # String IDs are hexadecimal (with or without an 0x prefix); ints are taken as-is.
    if isinstance(value, str):
        return int(value, 16)
    return int(value)


def profile_from_dict(cfg: dict) -> TrafficProfile:
    try:
        ids = tuple(
            IdSpec(
                can_id=_coerce_id(entry["id"]),
                period=float(entry["period"]),
                pattern=tuple(entry.get("pattern", ["constant"] * 8)),
            )
            for entry in cfg["ids"]
        )
        return TrafficProfile(
            ids=ids,
            duration=float(cfg["duration"]),
            jitter=float(cfg.get("jitter", 0.0)),
            seed=int(cfg.get("seed", 7)),
        )
    except KeyError as exc:
        raise ConfigError(f"profile config missing key {exc}") from None


def attack_from_dict(cfg: dict | None) -> AttackSpec | None:
    if cfg is None:
        return None
    try:
        return AttackSpec(
            kind=cfg["kind"],
            injected_fraction=float(cfg["injected_fraction"]),
            inter_frame=float(cfg.get("inter_frame", 2e-5)),
            target_id=_coerce_id(cfg["target_id"]) if "target_id" in cfg else None,
            byte_overrides={int(k): int(v) for k, v in cfg.get("byte_overrides", {}).items()},
        )
    except KeyError as exc:
        raise ConfigError(f"attack config missing key {exc}") from None


def load_config(path: str | Path) -> tuple[TrafficProfile, AttackSpec | None]:
    """Read a declarative {"profile": ..., "attack": ...} JSON config."""
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if "profile" not in cfg:
        raise ConfigError("traffic config needs a 'profile' section")
    return profile_from_dict(cfg["profile"]), attack_from_dict(cfg.get("attack"))
