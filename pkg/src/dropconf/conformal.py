"""Conformal calculus: exponential-normalized nonconformity scores,
percentile calibration, interval construction, and the two end-to-end
pipelines (dropout ICP and random-forest cross-conformal).

The score for an instance is |y - y_hat| / e^sigma, where sigma is the
ensemble standard deviation of that instance's own passes. Since e^sigma >= 1
every score is bounded by the raw residual, so the largest calibration score
never exceeds the largest calibration residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .ensemble import EnsemblePrediction, mc_dropout_predict
from .forest import ForestConfig, fit_forest, forest_predict, oof_calibration
from .net import MLPModel
from .seeds import derive_seed


@dataclass(frozen=True)
class CalibrationModel:
    """Ascending-sorted nonconformity scores from the calibration partition."""

    alphas: np.ndarray
    source: str  # "dropout" | "rf_crossconformal"

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        if alphas.size < 1:
            raise ValueError("calibration requires at least one score")
        if not np.all(np.isfinite(alphas)) or np.any(alphas < 0):
            raise ValueError("nonconformity scores must be finite and >= 0")
        if np.any(np.diff(alphas) < 0):
            raise ValueError("alphas must be sorted ascending")
        object.__setattr__(self, "alphas", alphas)
        self.alphas.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    half_width: float
    lower: float
    upper: float
    cl: float

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.half_width)

    def covers(self, y: float) -> bool:
        # closed-interval convention; the relative slack absorbs the rounding
        # of the e^sigma round trip so a calibration point sitting exactly on
        # its own bound still counts as covered
        if self.unbounded:
            return True
        slack = 1e-12 * max(1.0, abs(y), abs(self.center), self.half_width)
        return abs(y - self.center) <= self.half_width + slack


@dataclass(frozen=True)
class CalibrationDetail:
    """Per-instance calibration triples in original row order (for dumps)."""

    ids: tuple
    y: np.ndarray
    y_hat: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray


@dataclass
class ConformalResult:
    """Intervals per confidence level plus the calibration artifacts."""

    intervals: dict  # cl -> list[PredictionInterval], one per test instance
    calibration: CalibrationModel
    calibration_detail: CalibrationDetail
    test_prediction: EnsemblePrediction


def _check_cl(cl: float) -> float:
    if not 0.0 < cl < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {cl}")
    return float(cl)


def nonconformity(y: float, y_hat: float, sigma: float) -> float:
    """alpha = |y - y_hat| / e^sigma."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not (math.isfinite(y) and math.isfinite(y_hat) and math.isfinite(sigma)):
        raise ValueError("nonconformity inputs must be finite")
    # exp(-sigma) underflows to 0 for huge sigma, giving alpha ~ 0 without
    # overflow; equivalent to clamping the exponent.
    return abs(y - y_hat) * math.exp(-min(sigma, 745.0))


def build_calibration(y, preds: EnsemblePrediction, source: str, ids=None):
    """Sorted nonconformity scores over all calibration instances."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) != len(preds.means):
        raise ValueError("labels and predictions must have the same length")
    alphas = np.array(
        [nonconformity(yi, mi, si) for yi, mi, si in zip(y, preds.means, preds.stds)]
    )
    if ids is None:
        ids = tuple(range(len(y)))
    detail = CalibrationDetail(
        ids=tuple(ids), y=y, y_hat=preds.means, sigma=preds.stds, alpha=alphas
    )
    return CalibrationModel(alphas=np.sort(alphas, kind="stable"), source=source), detail


def alpha_at_level(cal: CalibrationModel, cl: float) -> float:
    """The k-th smallest score for k = ceil(cl*(n+1)), or +inf if k > n.

    The +inf case yields an unbounded interval, preserving validity when the
    calibration set is too small for the requested confidence level.
    """
    cl = _check_cl(cl)
    k = math.ceil(cl * (cal.n + 1) - 1e-9)
    if k > cal.n:
        return math.inf
    return float(cal.alphas[k - 1])


def predict_interval(y_hat: float, sigma: float, alpha_cl: float, cl: float) -> PredictionInterval:
    """Interval y_hat +/- e^sigma * alpha_cl; +inf alpha gives the whole line."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not math.isfinite(y_hat):
        raise ValueError("y_hat must be finite")
    cl = _check_cl(cl)
    half = math.exp(min(sigma, 700.0)) * alpha_cl if not math.isinf(alpha_cl) else math.inf
    return PredictionInterval(
        center=y_hat,
        half_width=half,
        lower=y_hat - half,
        upper=y_hat + half,
        cl=cl,
    )


def intervals_for(preds: EnsemblePrediction, cal: CalibrationModel, cl_list) -> dict:
    """Per-instance intervals for every requested confidence level."""
    out = {}
    for cl in cl_list:
        a = alpha_at_level(cal, cl)
        out[float(cl)] = [
            predict_interval(m, s, a, cl) for m, s in zip(preds.means, preds.stds)
        ]
    return out


def dropout_icp(
    model: MLPModel,
    val: Dataset,
    test: Dataset,
    n_passes: int,
    cl_list,
    seed: int,
) -> ConformalResult:
    """Inductive conformal prediction from test-time dropout ensembles.

    Calibrates on the validation set's dropout passes, then builds intervals
    for the test set from an independent pass stream. Point predictions are
    the test-pass means.
    """
    val_pred = mc_dropout_predict(model, val.features, n_passes, derive_seed(seed, "cal"))
    cal, detail = build_calibration(val.labels, val_pred, "dropout", ids=val.ids)
    test_pred = mc_dropout_predict(model, test.features, n_passes, derive_seed(seed, "test"))
    return ConformalResult(
        intervals=intervals_for(test_pred, cal, cl_list),
        calibration=cal,
        calibration_detail=detail,
        test_prediction=test_pred,
    )


def rf_ccp(
    train: Dataset,
    test: Dataset,
    config: ForestConfig,
    k: int,
    cl_list,
    seed: int,
) -> ConformalResult:
    """Random-forest cross-conformal prediction.

    Calibration scores come from k-fold out-of-fold residuals and per-tree
    spread; test predictions come from a single forest fit on all the
    training data.
    """
    oof = oof_calibration(train, config, k, derive_seed(seed, "oof"))
    alphas = np.array(
        [nonconformity(yi, mi, si) for yi, mi, si in zip(oof.y, oof.y_hat, oof.sigma)]
    )
    detail = CalibrationDetail(
        ids=tuple(train.ids), y=oof.y, y_hat=oof.y_hat, sigma=oof.sigma, alpha=alphas
    )
    cal = CalibrationModel(alphas=np.sort(alphas, kind="stable"), source="rf_crossconformal")
    final = fit_forest(train, config, derive_seed(seed, "final"))
    test_pred = forest_predict(final, test.features)
    return ConformalResult(
        intervals=intervals_for(test_pred, cal, cl_list),
        calibration=cal,
        calibration_detail=detail,
        test_prediction=test_pred,
    )
