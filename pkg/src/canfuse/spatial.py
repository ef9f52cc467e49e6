"""Next-message payload predictor and prediction-error features.

A tiny convolutional network maps the previous frame's 11 normalized
fields to the current frame's 8 data bytes. The input is treated as a
length-1 sequence of 11 channels convolved with kernel size 3 under
same zero-padding (so the two outer kernel taps see only padding),
followed by ReLU and a dense 64 -> 8 head. That layout carries exactly

    64 * (3 * 11 + 1) + 8 * (64 + 1) = 2,696

trainable parameters. Training minimizes mean absolute error with
mini-batch gradient descent plus momentum; gradients are computed
analytically. At inference, the per-byte absolute differences between
prediction and the actually received payload become the PE1..PE8
features.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import DivergenceError

N_INPUT_FIELDS = 11
N_OUTPUT_BYTES = 8
N_FILTERS = 64
KERNEL_SIZE = 3

_MODEL_MAGIC = b"CANPRED\0"


class PredictorModel:
    """Weights of the payload predictor plus training metadata."""

    def __init__(self, conv_w, conv_b, dense_w, dense_b, epochs=0, final_mae=math.nan):
        self.conv_w = np.asarray(conv_w, dtype=np.float64)
        self.conv_b = np.asarray(conv_b, dtype=np.float64)
        self.dense_w = np.asarray(dense_w, dtype=np.float64)
        self.dense_b = np.asarray(dense_b, dtype=np.float64)
        self.epochs = int(epochs)
        self.final_mae = float(final_mae)
        expected = {
            "conv_w": (N_FILTERS, KERNEL_SIZE, N_INPUT_FIELDS),
            "conv_b": (N_FILTERS,),
            "dense_w": (N_OUTPUT_BYTES, N_FILTERS),
            "dense_b": (N_OUTPUT_BYTES,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @classmethod
    def initialize(cls, seed: int = 7) -> "PredictorModel":
        rng = np.random.default_rng(seed)
        fan_conv = KERNEL_SIZE * N_INPUT_FIELDS
        conv_w = rng.normal(0.0, math.sqrt(2.0 / fan_conv), (N_FILTERS, KERNEL_SIZE, N_INPUT_FIELDS))
        dense_w = rng.normal(0.0, math.sqrt(1.0 / N_FILTERS), (N_OUTPUT_BYTES, N_FILTERS))
        return cls(conv_w, np.zeros(N_FILTERS), dense_w, np.zeros(N_OUTPUT_BYTES))

    @property
    def parameter_count(self) -> int:
        return self.conv_w.size + self.conv_b.size + self.dense_w.size + self.dense_b.size

    def _arrays(self):
        return (self.conv_w, self.conv_b, self.dense_w, self.dense_b)

    def get_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def set_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.parameter_count:
            raise ValueError(f"expected {self.parameter_count} parameters, got {vec.size}")
        offset = 0
        for arr in self._arrays():
            arr[...] = vec[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size

    def save(self, path: str | Path) -> None:
        write_container(
            path,
            _MODEL_MAGIC,
            {
                "conv_w": self.conv_w,
                "conv_b": self.conv_b,
                "dense_w": self.dense_w,
                "dense_b": self.dense_b,
            },
            meta={"epochs": self.epochs, "final_mae": self.final_mae},
        )

    @classmethod
    def load(cls, path: str | Path) -> "PredictorModel":
        _, arrays, meta = read_container(path, _MODEL_MAGIC)
        return cls(
            arrays["conv_w"], arrays["conv_b"], arrays["dense_w"], arrays["dense_b"],
            epochs=meta.get("epochs", 0), final_mae=meta.get("final_mae", math.nan),
        )


def _hidden(model: PredictorModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Over a length-1 sequence only the center kernel tap sees real input;
    # the outer taps convolve zero padding and contribute nothing.
    z = x @ model.conv_w[:, 1, :].T + model.conv_b
    return np.maximum(z, 0.0), z


def forward(model: PredictorModel, prev: np.ndarray) -> np.ndarray:
    """Predict the next frame's 8 data bytes from 11 normalized fields."""
    prev = np.asarray(prev, dtype=np.float64)
    single = prev.ndim == 1
    x = prev.reshape(1, -1) if single else prev
    if x.ndim != 2 or x.shape[1] != N_INPUT_FIELDS:
        raise ValueError(f"expected {N_INPUT_FIELDS} input fields, got shape {prev.shape}")
    h, _ = _hidden(model, x)
    out = h @ model.dense_w.T + model.dense_b
    return out[0] if single else out


def mae_loss(model: PredictorModel, x: np.ndarray, y: np.ndarray) -> float:
    """Mean absolute error of forward(x) against targets y."""
    pred = forward(model, x)
    return float(np.mean(np.abs(pred - y)))


def mae_gradients(model: PredictorModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic MAE gradient, flattened in get_params() order."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, z = _hidden(model, x)
    pred = h @ model.dense_w.T + model.dense_b
    g = np.sign(pred - y) / pred.size
    d_dense_w = g.T @ h
    d_dense_b = g.sum(axis=0)
    dh = g @ model.dense_w
    dz = dh * (z > 0)
    d_conv_w = np.zeros_like(model.conv_w)
    d_conv_w[:, 1, :] = dz.T @ x
    d_conv_b = dz.sum(axis=0)
    return np.concatenate(
        [d_conv_w.ravel(), d_conv_b.ravel(), d_dense_w.ravel(), d_dense_b.ravel()]
    )


def training_pairs(fields: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive (previous fields, current data bytes) pairs."""
    fields = np.asarray(fields, dtype=np.float64)
    if fields.ndim != 2 or fields.shape[1] != N_INPUT_FIELDS:
        raise ValueError(f"expected an (n, {N_INPUT_FIELDS}) field matrix")
    if len(fields) < 2:
        raise ValueError("need at least 2 frames to form training pairs")
    return fields[:-1], fields[1:, 3:11]


def train(
    fields: np.ndarray,
    epochs: int = 10,
    batch_size: int = 256,
    lr: float = 1e-2,
    momentum: float = 0.9,
    lr_decay: float = 1.0,
    seed: int = 7,
) -> PredictorModel:
    """Fit the predictor on an attack-free normalized field sequence.

    ``lr_decay`` multiplies the learning rate once per epoch; 1.0 keeps
    it fixed. The MAE gradient has constant magnitude, so a decayed step
    is what lets the loss settle arbitrarily close to its floor.
    Deterministic for a fixed seed. Raises DivergenceError (naming the
    epoch) if the loss goes non-finite.
    """
    if epochs <= 0 or batch_size <= 0 or lr <= 0:
        raise ValueError("epochs, batch size and learning rate must be positive")
    if not 0 < lr_decay <= 1:
        raise ValueError("lr_decay must be in (0, 1]")
    x_all, y_all = training_pairs(fields)
    n = len(x_all)
    rng = np.random.default_rng(seed)
    model = PredictorModel.initialize(seed)
    velocity = np.zeros(model.parameter_count)
    for epoch in range(1, epochs + 1):
        epoch_lr = lr * lr_decay ** (epoch - 1)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            loss = mae_loss(model, xb, yb)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            grad = mae_gradients(model, xb, yb)
            velocity = momentum * velocity - epoch_lr * grad
            model.set_params(model.get_params() + velocity)
    model.epochs = epochs
    model.final_mae = mae_loss(model, x_all, y_all)
    if not math.isfinite(model.final_mae):
        raise DivergenceError(epochs)
    return model


def extract_pe(model: PredictorModel, fields: np.ndarray) -> np.ndarray:
    """Per-frame PE1..PE8: |prediction from frame t-1 - bytes of frame t|.

    Frame 0 has no predecessor and gets all-zero PE, keeping row
    alignment with the raw and temporal features.
    """
    fields = np.asarray(fields, dtype=np.float64)
    if fields.ndim != 2 or fields.shape[1] != N_INPUT_FIELDS:
        raise ValueError(f"expected an (n, {N_INPUT_FIELDS}) field matrix")
    if len(fields) == 0:
        raise ValueError("empty frame sequence")
    pe = np.zeros((len(fields), N_OUTPUT_BYTES), dtype=np.float64)
    if len(fields) > 1:
        preds = forward(model, fields[:-1])
        pe[1:] = np.abs(preds - fields[1:, 3:11])
    return pe
