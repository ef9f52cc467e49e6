import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canfuse import ingest
from canfuse.errors import ConfigError, OrderingError, ParseError
from canfuse.ingest import (
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    FrameTable,
    SplitSpec,
    apply_normalizer,
    fit_normalizer,
    parse_log,
    split,
    write_log,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


class TestParseLog:
    def test_full_row(self, tmp_path):
        path = write_lines(tmp_path / "log.csv",
                           ["120.78377,490,8,00,00,08,21,00,00,3C,7C"])
        table = parse_log(path)
        frame = table.frame(0)
        assert frame.timestamp == 120.78377
        assert frame.can_id == 0x490 == 1168
        assert frame.dlc == 8
        assert frame.data == (0, 0, 8, 33, 0, 0, 60, 124)
        assert frame.label == LABEL_NORMAL

    def test_zero_dlc_row_padded(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,0,0"])
        table = parse_log(path)
        assert table.frame(0).data == (0,) * 8

    def test_hex_byte_decoding(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,1A,1,3C"])
        assert table_bytes(parse_log(path))[0][0] == 60

    def test_short_rows_zero_padded(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,3,AA,BB,CC"])
        assert parse_log(path).frame(0).data == (0xAA, 0xBB, 0xCC, 0, 0, 0, 0, 0)

    def test_empty_byte_fields_become_zero(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,8,AA,,CC,,,,,"])
        assert parse_log(path).frame(0).data == (0xAA, 0, 0xCC, 0, 0, 0, 0, 0)

    def test_bytes_beyond_dlc_are_zeroed(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,2,AA,BB,CC,DD"])
        assert parse_log(path).frame(0).data == (0xAA, 0xBB, 0, 0, 0, 0, 0, 0)

    def test_label_flags(self, tmp_path):
        path = write_lines(tmp_path / "log.csv",
                           ["1.0,123,2,AA,BB,R", "2.0,123,2,AA,BB,T", "3.0,123,2,AA,BB"])
        table = parse_log(path)
        assert list(table.label) == [LABEL_NORMAL, LABEL_ANOMALOUS, LABEL_NORMAL]

    def test_default_label_override(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,1,AA"])
        table = parse_log(path, default_label=LABEL_ANOMALOUS)
        assert table.label[0] == LABEL_ANOMALOUS

    def test_comment_and_blank_lines_skipped(self, tmp_path):
        path = write_lines(tmp_path / "log.csv",
                           ["# header comment", "", "1.0,123,1,AA", "# trailing"])
        assert len(parse_log(path)) == 1

    def test_header_rows_skipped(self, tmp_path):
        path = write_lines(tmp_path / "log.csv",
                           ["Timestamp,ID,DLC,D1", "1.0,123,1,AA"])
        assert len(parse_log(path, header_rows=1)) == 1

    def test_non_hex_id_reports_line(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,1,AA", "2.0,XYZ,1,AA"])
        with pytest.raises(ParseError) as exc:
            parse_log(path)
        assert exc.value.line_number == 2

    def test_dlc_out_of_range(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,9,AA"])
        with pytest.raises(ParseError):
            parse_log(path)

    def test_bad_timestamp(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["abc,123,1,AA"])
        with pytest.raises(ParseError):
            parse_log(path)

    def test_decreasing_timestamp_is_ordering_error(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["2.0,123,1,AA", "1.5,123,1,AA"])
        with pytest.raises(OrderingError) as exc:
            parse_log(path)
        assert exc.value.line_number == 2

    def test_equal_timestamps_allowed(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,1,AA", "1.0,124,1,AA"])
        assert len(parse_log(path)) == 2

    def test_oversized_id_rejected(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,FFFFFFFF,1,AA"])
        with pytest.raises(ParseError):
            parse_log(path)

    def test_too_many_byte_fields(self, tmp_path):
        path = write_lines(tmp_path / "log.csv", ["1.0,123,8,1,2,3,4,5,6,7,8,9"])
        with pytest.raises(ParseError):
            parse_log(path)


def table_bytes(table):
    return [tuple(row) for row in table.data]


class TestRoundTrip:
    def _random_table(self, n, seed):
        rng = np.random.default_rng(seed)
        ts = np.sort(rng.uniform(0, 100, n))
        dlc = rng.integers(0, 9, n)
        data = rng.integers(0, 256, (n, 8)).astype(np.uint8)
        data[np.arange(8) >= dlc[:, None]] = 0  # bytes beyond the DLC are 0
        return FrameTable(ts, rng.integers(0, 0x800, n), dlc, data, rng.integers(0, 2, n))

    def test_write_then_parse_identical(self, tmp_path):
        table = self._random_table(200, seed=3)
        path = tmp_path / "round.csv"
        write_log(table, path)
        assert parse_log(path) == table

    def test_float_precision_survives(self, tmp_path):
        table = FrameTable([0.1 + 0.2], [1], [8], np.zeros((1, 8)), [0])
        path = tmp_path / "round.csv"
        write_log(table, path)
        assert parse_log(path).timestamp[0] == table.timestamp[0]

    def test_binary_container_round_trip(self, tmp_path):
        table = self._random_table(150, seed=5)
        path = tmp_path / "frames.bin"
        table.save(path)
        assert FrameTable.load(path) == table


class TestSplit:
    def test_exact_fraction_sizes(self):
        train, val, test = split(100, SplitSpec(0.7, 0.15, 0.15, seed=7))
        assert (len(train), len(val), len(test)) == (70, 15, 15)

    def test_deterministic(self):
        a = split(1000, SplitSpec(seed=42))
        b = split(1000, SplitSpec(seed=42))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_different_seeds_differ(self):
        a = split(1000, SplitSpec(seed=1))
        b = split(1000, SplitSpec(seed=2))
        assert not np.array_equal(a[0], b[0])

    def test_bad_fractions_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.5, 0.5, 0.1)

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigError):
            split(0, SplitSpec())

    def test_too_few_rows_rejected(self):
        with pytest.raises(ConfigError):
            split(9, SplitSpec())

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(10, 2000), seed=st.integers(0, 2**32 - 1))
    def test_disjoint_and_covering(self, n, seed):
        train, val, test = split(n, SplitSpec(seed=seed))
        merged = np.concatenate([train, val, test])
        assert len(merged) == n
        assert len(np.unique(merged)) == n
        for part, frac in ((train, 0.7), (val, 0.15), (test, 0.15)):
            assert abs(len(part) - n * frac) <= 1


class TestNormalizer:
    def test_basic_scaling(self):
        rows = np.array([[0.0], [50.0], [100.0]])
        norm = fit_normalizer(rows, np.arange(3))
        assert norm.min_[0] == 0 and norm.max_[0] == 100
        assert apply_normalizer(norm, np.array([[50.0]]))[0, 0] == 0.5

    def test_no_clamping_outside_range(self):
        rows = np.array([[0.0], [100.0]])
        norm = fit_normalizer(rows, np.arange(2))
        assert apply_normalizer(norm, np.array([[150.0]]))[0, 0] == 1.5
        assert apply_normalizer(norm, np.array([[-50.0]]))[0, 0] == -0.5

    def test_constant_column_maps_to_zero(self):
        rows = np.array([[7.0], [7.0], [7.0]])
        norm = fit_normalizer(rows, np.arange(3))
        out = apply_normalizer(norm, np.array([[7.0], [9.0]]))
        assert np.all(out == 0.0)

    def test_fit_uses_training_rows_only(self):
        rows = np.array([[0.0], [10.0], [1000.0]])
        norm = fit_normalizer(rows, np.array([0, 1]))
        assert norm.max_[0] == 10.0

    def test_training_rows_land_in_unit_interval(self):
        rng = np.random.default_rng(11)
        rows = rng.normal(0, 50, (300, 5))
        train_idx = np.arange(0, 300, 2)
        norm = fit_normalizer(rows, train_idx)
        out = apply_normalizer(norm, rows)[train_idx]
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_save_load(self, tmp_path):
        rows = np.random.default_rng(0).random((20, 11))
        norm = fit_normalizer(rows, np.arange(20))
        path = tmp_path / "norm.bin"
        norm.save(path)
        back = ingest.Normalizer.load(path)
        assert np.array_equal(back.min_, norm.min_)
        assert np.array_equal(back.max_, norm.max_)
