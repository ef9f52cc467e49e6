import numpy as np
import pytest

from canfuse.errors import AlignmentError, ConfigError
from canfuse.fusion import (
    CANONICAL_COLUMNS,
    FusedMatrix,
    apply_mask,
    assemble,
    mask_from_names,
    mask_to_names,
    parse_mask,
)

OPTIMAL_SUBSPACE_NAMES = [
    "Timestamp", "CAN ID", "Data3", "Data4", "Data5", "Data6",
    "Data7", "Data8", "SE", "RATIO", "PE4", "PE6",
]


def build_fused(n=100, seed=0):
    rng = np.random.default_rng(seed)
    return assemble(
        rng.random((n, 11)),
        rng.random(n),
        rng.random(n),
        rng.random((n, 8)),
        rng.integers(0, 2, n),
        filter_size=500,
    )


class TestAssemble:
    def test_shape_and_labels(self):
        fused = build_fused(100)
        assert fused.values.shape == (100, 21)
        assert len(fused.labels) == 100
        assert fused.columns == CANONICAL_COLUMNS

    def test_canonical_layout(self):
        n = 10
        raw = np.arange(n * 11, dtype=float).reshape(n, 11)
        se = np.full(n, 0.25)
        ratio = np.full(n, 0.5)
        pe = np.arange(n * 8, dtype=float).reshape(n, 8)
        fused = assemble(raw, se, ratio, pe, np.zeros(n))
        assert np.array_equal(fused.values[:, :11], raw)
        assert np.all(fused.values[:, 11] == 0.25)
        assert np.all(fused.values[:, 12] == 0.5)
        assert np.array_equal(fused.values[:, 13:], pe)

    def test_row_permutation_purity(self):
        rng = np.random.default_rng(5)
        raw, se, ratio = rng.random((30, 11)), rng.random(30), rng.random(30)
        pe, labels = rng.random((30, 8)), rng.integers(0, 2, 30)
        perm = rng.permutation(30)
        a = assemble(raw, se, ratio, pe, labels)
        b = assemble(raw[perm], se[perm], ratio[perm], pe[perm], labels[perm])
        assert np.array_equal(a.values[perm], b.values)
        assert np.array_equal(a.labels[perm], b.labels)

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(AlignmentError):
            assemble(rng.random((5, 11)), rng.random(4), rng.random(5),
                     rng.random((5, 8)), np.zeros(5))


class TestMask:
    def test_canonical_column_count(self):
        assert len(CANONICAL_COLUMNS) == 21

    def test_optimal_subspace_mask_has_twelve_bits(self):
        mask = mask_from_names(OPTIMAL_SUBSPACE_NAMES)
        assert int(mask.sum()) == 12
        reduced = apply_mask(build_fused(), mask)
        assert reduced.values.shape[1] == 12
        assert reduced.columns == tuple(OPTIMAL_SUBSPACE_NAMES)

    def test_all_ones_is_identity(self):
        fused = build_fused()
        out = apply_mask(fused, np.ones(21, dtype=bool))
        assert np.array_equal(out.values, fused.values)
        assert out.columns == fused.columns

    def test_single_column(self):
        out = apply_mask(build_fused(), mask_from_names(["Timestamp"]))
        assert out.values.shape[1] == 1
        assert out.columns == ("Timestamp",)

    def test_zero_mask_rejected(self):
        with pytest.raises(ConfigError):
            apply_mask(build_fused(), np.zeros(21, dtype=bool))

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            mask_from_names(["NotAColumn"])

    def test_provenance_round_trip(self):
        mask = mask_from_names(["DLC", "SE", "PE1"])
        assert mask_to_names(mask) == ("DLC", "SE", "PE1")

    def test_parse_bitstring_and_names(self):
        bits = "1" + "0" * 20
        assert mask_to_names(parse_mask(bits)) == ("Timestamp",)
        assert np.array_equal(parse_mask("SE, RATIO"), mask_from_names(["SE", "RATIO"]))


class TestPersistence:
    def test_container_round_trip(self, tmp_path):
        fused = build_fused(50, seed=3)
        path = tmp_path / "fused.bin"
        fused.save(path)
        back = FusedMatrix.load(path)
        assert np.array_equal(back.values, fused.values)
        assert np.array_equal(back.labels, fused.labels)
        assert back.columns == fused.columns
        assert back.filter_size == 500

    def test_csv_export_header(self, tmp_path):
        fused = build_fused(5)
        path = tmp_path / "fused.csv"
        fused.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header.split(",") == list(CANONICAL_COLUMNS) + ["label"]
        body = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.allclose(body[:, :21], fused.values)
