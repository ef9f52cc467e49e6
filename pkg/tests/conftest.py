"""Shared fixtures: small traffic profiles and prepared pipelines."""

from __future__ import annotations

import numpy as np
import pytest

from canfuse import ingest, spatial, synth


def three_id_profile(duration: float = 2.0, seed: int = 7, jitter: float = 0.05) -> synth.TrafficProfile:
    """Round-robin 3-ID profile with counter bytes; target 0x490."""
    return synth.TrafficProfile(
        ids=(
            synth.IdSpec(0x110, 5e-4, ("counter",) + ("constant",) * 7),
            synth.IdSpec(0x220, 5e-4, ("constant",) * 3 + ("counter",) + ("constant",) * 4),
            synth.IdSpec(
                0x490, 5e-4,
                ("counter",) + ("constant",) * 4 + ("counter",) + ("constant",) + ("counter",),
            ),
        ),
        duration=duration,
        jitter=jitter,
        seed=seed,
    )


def spoof_attack(fraction: float = 0.08, inter_frame: float = 2e-5, overrides=None) -> synth.AttackSpec:
    return synth.AttackSpec(
        "spoof", fraction, inter_frame, target_id=0x490,
        byte_overrides=overrides or {},
    )


@pytest.fixture(scope="session")
def small_spoof_pipeline():
    """Attack-free predictor + spoofed stream with PE features, ~12k frames."""
    profile = three_id_profile(duration=2.0)
    attack = spoof_attack()
    clean = synth.generate(profile)
    attacked = synth.generate(profile, attack)
    raw_clean = clean.raw_matrix()
    norm_clean = ingest.fit_normalizer(raw_clean, np.arange(len(clean)))
    model = spatial.train(ingest.apply_normalizer(norm_clean, raw_clean), epochs=6)
    train_idx, val_idx, test_idx = ingest.split(len(attacked), ingest.SplitSpec(seed=7))
    raw = attacked.raw_matrix()
    norm = ingest.fit_normalizer(raw, train_idx)
    fields = ingest.apply_normalizer(norm, raw)
    pe = spatial.extract_pe(model, fields)
    return {
        "profile": profile,
        "attack": attack,
        "clean": clean,
        "attacked": attacked,
        "model": model,
        "fields": fields,
        "pe": pe,
        "train_idx": train_idx,
        "val_idx": val_idx,
        "test_idx": test_idx,
    }
