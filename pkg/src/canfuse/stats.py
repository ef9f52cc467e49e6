"""5x2 cross-validated paired t-test for comparing two classifiers.

Five seeded random halvings of the rows; per round each half trains and
the other tests, for both models on their respective feature matrices.
With per-fold score differences p_i^(1), p_i^(2), round mean pbar_i and
round variance s_i^2 = (p_i^(1) - pbar_i)^2 + (p_i^(2) - pbar_i)^2, the
statistic is

    t = p_1^(1) / sqrt(mean_i s_i^2)

with 5 degrees of freedom. The two-sided p-value comes from a Student-t
CDF evaluated through a continued-fraction regularized incomplete beta.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ml import accuracy_score, f1_score

DEGREES_OF_FREEDOM = 5

METRICS = {"accuracy": accuracy_score, "f1": f1_score}


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: int) -> float:
    """Cumulative distribution of Student's t with df degrees of freedom."""
    if df < 1:
        raise ConfigError("degrees of freedom must be >= 1")
    if t == 0.0:
        return 0.5
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = df / (df + t * t)
    tail = 0.5 * betainc_regularized(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


@dataclass
class FiveByTwoResult:
    scores_a: np.ndarray  # (5, 2) per-round per-fold scores, model A
    scores_b: np.ndarray
    differences: np.ndarray  # (5, 2) score differences A - B
    variances: np.ndarray  # (5,) per-round s_i^2
    t_statistic: float
    p_value: float
    degenerate: bool
    metric: str
    degrees_of_freedom: int = DEGREES_OF_FREEDOM

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "scores_a": self.scores_a.tolist(),
            "scores_b": self.scores_b.tolist(),
            "differences": self.differences.tolist(),
            "variances": self.variances.tolist(),
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "degrees_of_freedom": self.degrees_of_freedom,
            "degenerate": self.degenerate,
            "significant_at_0.05": self.significant(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"5x2cv paired t-test on {self.metric}"]
        for i in range(len(self.differences)):
            lines.append(
                f"round {i + 1}: a=({self.scores_a[i, 0]:.6f}, {self.scores_a[i, 1]:.6f}) "
                f"b=({self.scores_b[i, 0]:.6f}, {self.scores_b[i, 1]:.6f}) "
                f"diff=({self.differences[i, 0]:+.6f}, {self.differences[i, 1]:+.6f}) "
                f"s2={self.variances[i]:.3e}"
            )
        lines.append(f"t = {self.t_statistic:.6g}  (df = {self.degrees_of_freedom})")
        lines.append(f"p = {self.p_value:.6g}")
        if self.degenerate:
            lines.append("degenerate: zero variance across all rounds")
        verdict = "significant" if self.significant() else "not significant"
        lines.append(f"verdict at alpha=0.05: {verdict}")
        return "\n".join(lines)


def paired_t_from_differences(differences: np.ndarray) -> tuple[float, float, np.ndarray, bool]:
    """Dietterich aggregation: (t, two-sided p, per-round variances, degenerate)."""
    diffs = np.asarray(differences, dtype=np.float64)
    if diffs.shape != (5, 2):
        raise ConfigError(f"expected a (5, 2) difference table, got {diffs.shape}")
    round_mean = diffs.mean(axis=1, keepdims=True)
    variances = ((diffs - round_mean) ** 2).sum(axis=1)
    denom_sq = variances.mean()
    if denom_sq == 0.0:
        return math.inf, 0.0, variances, True
    t = float(diffs[0, 0] / math.sqrt(denom_sq))
    p = 2.0 * (1.0 - t_cdf(abs(t), DEGREES_OF_FREEDOM))
    return t, p, variances, False


def five_by_two_cv(
    matrix_a: np.ndarray,
    matrix_b: np.ndarray,
    labels: np.ndarray,
    trainer_a,
    trainer_b,
    metric: str = "accuracy",
    seed: int = 7,
) -> FiveByTwoResult:
    """Compare two classifier configurations over 5 two-fold rounds.

    ``trainer_*`` are callables (rows, labels) -> model exposing
    ``predict(rows)``. Both models see identical row halvings per round
    so the differences are paired.
    """
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {sorted(METRICS)}, got {metric!r}")
    score = METRICS[metric]
    matrix_a = np.asarray(matrix_a, dtype=np.float64)
    matrix_b = np.asarray(matrix_b, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.uint8)
    n = len(labels)
    if len(matrix_a) != n or len(matrix_b) != n:
        raise ConfigError("matrices and labels must be row-aligned")
    if n < 4:
        raise ConfigError("need at least 4 rows for two-fold halving")

    rng = np.random.default_rng(seed)
    scores_a = np.zeros((5, 2))
    scores_b = np.zeros((5, 2))
    for rnd in range(5):
        perm = rng.permutation(n)
        half = n // 2
        folds = (perm[:half], perm[half:])
        for j, (train_rows, test_rows) in enumerate(((folds[0], folds[1]), (folds[1], folds[0]))):
            model_a = trainer_a(matrix_a[train_rows], labels[train_rows])
            model_b = trainer_b(matrix_b[train_rows], labels[train_rows])
            scores_a[rnd, j] = score(labels[test_rows], model_a.predict(matrix_a[test_rows]))
            scores_b[rnd, j] = score(labels[test_rows], model_b.predict(matrix_b[test_rows]))
    differences = scores_a - scores_b
    t, p, variances, degenerate = paired_t_from_differences(differences)
    return FiveByTwoResult(
        scores_a=scores_a,
        scores_b=scores_b,
        differences=differences,
        variances=variances,
        t_statistic=t,
        p_value=p,
        degenerate=degenerate,
        metric=metric,
    )
