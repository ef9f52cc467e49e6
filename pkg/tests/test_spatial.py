import numpy as np
import pytest

from canfuse import ingest, spatial, synth
from canfuse.errors import DivergenceError
from canfuse.spatial import PredictorModel, extract_pe, forward, mae_gradients, mae_loss, train


def zero_model():
    return PredictorModel(
        np.zeros((64, 3, 11)), np.zeros(64), np.zeros((8, 64)), np.zeros(8)
    )


class TestForward:
    def test_parameter_count(self):
        assert PredictorModel.initialize(seed=0).parameter_count == 2696

    def test_zero_model_outputs_zero(self):
        out = forward(zero_model(), np.random.default_rng(0).random(11))
        assert np.array_equal(out, np.zeros(8))

    def test_dense_bias_passthrough(self):
        model = zero_model()
        model.dense_b[:] = np.arange(8, dtype=float)
        for x in (np.zeros(11), np.ones(11), np.random.default_rng(1).random(11)):
            assert np.array_equal(forward(model, x), np.arange(8, dtype=float))

    def test_batch_matches_single(self):
        model = PredictorModel.initialize(seed=3)
        rng = np.random.default_rng(4)
        batch = rng.random((5, 11))
        stacked = np.stack([forward(model, row) for row in batch])
        assert np.allclose(forward(model, batch), stacked)

    def test_outer_kernel_taps_are_inert(self):
        # same zero-padding over a length-1 sequence: only the center tap matters
        model = PredictorModel.initialize(seed=5)
        x = np.random.default_rng(6).random(11)
        before = forward(model, x)
        model.conv_w[:, 0, :] = 123.0
        model.conv_w[:, 2, :] = -55.0
        assert np.array_equal(forward(model, x), before)

    def test_wrong_arity_rejected(self):
        with pytest.raises(ValueError):
            forward(zero_model(), np.zeros(10))
        with pytest.raises(ValueError):
            forward(zero_model(), np.zeros((3, 12)))


class TestGradients:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(42)
        model = PredictorModel.initialize(seed=42)
        x = rng.random((32, 11))
        # keep residuals away from the MAE kink at zero
        y = forward(model, x) + rng.choice([-1.0, 1.0], (32, 8)) * rng.uniform(0.2, 0.8, (32, 8))
        analytic = mae_gradients(model, x, y)
        params = model.get_params()
        step = 1e-5
        coords = rng.choice(model.parameter_count, 50, replace=False)
        for c in coords:
            probe = params.copy()
            probe[c] = params[c] + step
            model.set_params(probe)
            up = mae_loss(model, x, y)
            probe[c] = params[c] - step
            model.set_params(probe)
            down = mae_loss(model, x, y)
            model.set_params(params)
            numeric = (up - down) / (2 * step)
            denom = max(abs(analytic[c]), abs(numeric), 1e-8)
            assert abs(analytic[c] - numeric) / denom < 1e-4

    def test_dead_kernel_taps_have_zero_gradient(self):
        rng = np.random.default_rng(1)
        model = PredictorModel.initialize(seed=1)
        x, y = rng.random((16, 11)), rng.random((16, 8))
        grads = mae_gradients(model, x, y).reshape(-1)
        conv_grad = grads[: 64 * 3 * 11].reshape(64, 3, 11)
        assert np.all(conv_grad[:, 0, :] == 0)
        assert np.all(conv_grad[:, 2, :] == 0)
        assert np.any(conv_grad[:, 1, :] != 0)


class TestTrain:
    def test_constant_traffic_reaches_tiny_mae(self):
        fields = np.tile(np.random.default_rng(0).random(11), (4000, 1))
        fields[:, 3:11] = np.array([0.1, 0.9, 0.4, 0.3, 0.7, 0.2, 0.5, 0.6])
        model = train(fields, epochs=20, lr_decay=0.7)
        assert model.final_mae < 1e-3

    def test_counter_traffic_beats_mean_predictor(self):
        profile = synth.TrafficProfile(
            ids=(synth.IdSpec(0x10, 1e-4, ("counter", "counter") + ("constant",) * 6),),
            duration=1.0, seed=2,
        )
        table = synth.generate(profile)
        raw = table.raw_matrix()
        norm = ingest.fit_normalizer(raw, np.arange(len(table)))
        fields = ingest.apply_normalizer(norm, raw)
        model = train(fields, epochs=10)
        # independent baseline: always predict the mean target
        _, targets = spatial.training_pairs(fields)
        baseline = float(np.abs(targets - targets.mean(axis=0)).mean())
        assert model.final_mae < baseline

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        fields = rng.random((600, 11))
        a = train(fields, epochs=2, seed=9)
        b = train(fields, epochs=2, seed=9)
        assert np.array_equal(a.get_params(), b.get_params())
        assert a.final_mae == b.final_mae

    def test_divergence_names_epoch(self):
        fields = np.random.default_rng(4).random((500, 11))
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as exc:
            train(fields, epochs=5, lr=1e300)
        assert exc.value.epoch >= 1

    def test_validates_hyperparameters(self):
        fields = np.random.default_rng(5).random((10, 11))
        with pytest.raises(ValueError):
            train(fields, epochs=0)
        with pytest.raises(ValueError):
            train(fields[:1])


class TestExtractPe:
    def test_exact_prediction_gives_zero(self):
        model = zero_model()
        fields = np.zeros((5, 11))
        assert np.all(extract_pe(model, fields) == 0)

    def test_absolute_difference(self):
        model = zero_model()
        model.dense_b[:] = 0.5
        fields = np.zeros((2, 11))
        fields[1, 3:11] = 0.25
        pe = extract_pe(model, fields)
        assert np.all(pe[0] == 0)  # first frame has no predecessor
        assert np.allclose(pe[1], 0.25)

    def test_output_aligned_with_input(self):
        model = PredictorModel.initialize(seed=6)
        fields = np.random.default_rng(7).random((37, 11))
        assert extract_pe(model, fields).shape == (37, 8)

    def test_pure_function(self):
        model = PredictorModel.initialize(seed=8)
        fields = np.random.default_rng(9).random((20, 11))
        assert np.array_equal(extract_pe(model, fields), extract_pe(model, fields))

    def test_spoofed_byte_raises_pe_above_normal_median(self, small_spoof_pipeline):
        p = small_spoof_pipeline
        attacked, pe = p["attacked"], p["pe"]
        target_rows = attacked.can_id == 0x490
        injected = attacked.label.astype(bool)
        normal_target = target_rows & ~injected
        median_normal_pe1 = np.median(pe[normal_target, 0])
        median_injected_pe1 = np.median(pe[injected, 0])
        assert median_injected_pe1 > median_normal_pe1


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        model = PredictorModel.initialize(seed=10)
        model.epochs = 3
        model.final_mae = 0.125
        path = tmp_path / "predictor.bin"
        model.save(path)
        back = PredictorModel.load(path)
        assert np.array_equal(back.get_params(), model.get_params())
        assert back.epochs == 3 and back.final_mae == 0.125

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "other.bin"
        ingest.FrameTable([0.0], [1], [8], np.zeros((1, 8)), [0]).save(path)
        with pytest.raises(Exception):
            PredictorModel.load(path)
