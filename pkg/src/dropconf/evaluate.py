"""Validity, efficiency, accuracy, and virtual-screening retrieval metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conformal import PredictionInterval
from .ensemble import EnsemblePrediction


@dataclass(frozen=True)
class CalibrationCurve:
    """(confidence level, empirical coverage) points and their Pearson R^2.

    r_squared is None when undefined (fewer than 2 points, or zero variance
    in coverage across the grid).
    """

    cls: tuple
    coverages: tuple
    r_squared: float | None


@dataclass(frozen=True)
class WidthStats:
    mean: float
    median: float
    q1: float
    q3: float
    min: float
    max: float
    fraction_unbounded: float
    n_finite: int


@dataclass(frozen=True)
class RetrievalCounts:
    """Interval-vs-cutoff classification tallies for one potency cutoff.

    tp_percent_of_test uses all test instances as the denominator;
    tp_percent_of_calls uses only positive calls (tp + fp).
    """

    cutoff: float
    uncertain: int
    true_positive: int
    false_positive: int
    false_negative: int
    true_negative: int

    @property
    def n_total(self) -> int:
        return (
            self.uncertain
            + self.true_positive
            + self.false_positive
            + self.false_negative
            + self.true_negative
        )

    @property
    def tp_percent_of_test(self) -> float:
        return 100.0 * self.true_positive / self.n_total if self.n_total else 0.0

    @property
    def tp_percent_of_calls(self) -> float:
        calls = self.true_positive + self.false_positive
        return 100.0 * self.true_positive / calls if calls else 0.0


@dataclass
class EvaluationReport:
    model: str
    rmse: float
    curve: CalibrationCurve
    width_stats: dict  # cl -> WidthStats
    retrieval: list  # RetrievalCounts per cutoff, at the default cl
    default_cl: float
    sigma: np.ndarray  # per test instance
    abs_error: np.ndarray
    sigma_error_correlation: float | None


def rmse(y_true, y_hat) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_true.shape != y_hat.shape or y_true.size == 0:
        raise ValueError("rmse requires equal non-empty sequences")
    return float(np.sqrt(np.mean((y_true - y_hat) ** 2)))


def coverage(intervals, y_true) -> float:
    """Fraction of instances with lower <= y <= upper (closed intervals)."""
    y_true = np.asarray(y_true, dtype=np.float64)
    if len(intervals) != len(y_true):
        raise ValueError("intervals and labels must have the same length")
    hits = sum(1 for iv, y in zip(intervals, y_true) if iv.covers(y))
    return hits / len(y_true)


def calibration_curve(intervals_by_cl: dict, y_true, cl_grid) -> CalibrationCurve:
    """Empirical coverage per grid cl and the squared Pearson correlation
    between cl and coverage across the grid."""
    cls = tuple(float(c) for c in cl_grid)
    covs = tuple(coverage(intervals_by_cl[c], y_true) for c in cls)
    r2 = None
    if len(cls) >= 2:
        cov_arr = np.asarray(covs)
        cl_arr = np.asarray(cls)
        if np.ptp(cov_arr) > 0 and np.ptp(cl_arr) > 0:
            r = np.corrcoef(cl_arr, cov_arr)[0, 1]
            r2 = float(r * r)
    return CalibrationCurve(cls=cls, coverages=covs, r_squared=r2)


def width_stats(intervals) -> WidthStats:
    """Summary of interval widths; unbounded intervals counted separately."""
    if not intervals:
        raise ValueError("width_stats requires at least one interval")
    widths = np.array([iv.upper - iv.lower for iv in intervals])
    finite = widths[np.isfinite(widths)]
    frac_unbounded = 1.0 - len(finite) / len(widths)
    if len(finite) == 0:
        nan = float("nan")
        return WidthStats(nan, nan, nan, nan, nan, nan, frac_unbounded, 0)
    return WidthStats(
        mean=float(finite.mean()),
        median=float(np.median(finite)),
        q1=float(np.percentile(finite, 25)),
        q3=float(np.percentile(finite, 75)),
        min=float(finite.min()),
        max=float(finite.max()),
        fraction_unbounded=frac_unbounded,
        n_finite=len(finite),
    )


CATEGORIES = ("true_positive", "false_positive", "false_negative", "true_negative", "uncertain")


def screen_classify(interval: PredictionInterval, y_true: float, cutoff: float) -> str:
    """Classify one instance against a potency cutoff.

    Strict inequalities throughout: an interval whose lower bound exceeds the
    cutoff is a positive call, one whose upper bound is below it is a
    negative call, anything spanning the cutoff is uncertain.
    """
    if not math.isfinite(y_true):
        raise ValueError("y_true must be finite")
    if interval.lower > cutoff:
        return "true_positive" if y_true > cutoff else "false_positive"
    if interval.upper < cutoff:
        return "false_negative" if y_true > cutoff else "true_negative"
    return "uncertain"


def screen_counts(intervals, y_true, cutoffs=(5, 6, 7, 8, 9)) -> list:
    """RetrievalCounts per cutoff over the whole test set."""
    y_true = np.asarray(y_true, dtype=np.float64)
    if len(intervals) != len(y_true) or len(y_true) == 0:
        raise ValueError("intervals and labels must be equal-length and non-empty")
    out = []
    for cutoff in cutoffs:
        tally = dict.fromkeys(CATEGORIES, 0)
        for iv, y in zip(intervals, y_true):
            tally[screen_classify(iv, y, cutoff)] += 1
        out.append(
            RetrievalCounts(
                cutoff=float(cutoff),
                uncertain=tally["uncertain"],
                true_positive=tally["true_positive"],
                false_positive=tally["false_positive"],
                false_negative=tally["false_negative"],
                true_negative=tally["true_negative"],
            )
        )
    return out


def sigma_error_pairs(preds: EnsemblePrediction, y_true):
    """Raw (sigma, |error|) pairs plus their Pearson correlation (or None)."""
    y_true = np.asarray(y_true, dtype=np.float64)
    abs_err = np.abs(preds.means - y_true)
    corr = None
    if len(y_true) >= 2 and np.ptp(preds.stds) > 0 and np.ptp(abs_err) > 0:
        corr = float(np.corrcoef(preds.stds, abs_err)[0, 1])
    return preds.stds, abs_err, corr


def evaluate_model(
    model_name: str,
    result,
    y_test,
    cl_grid,
    default_cl: float = 0.80,
    cutoffs=(5, 6, 7, 8, 9),
) -> EvaluationReport:
    """Full per-run report from a ConformalResult and the test labels."""
    y_test = np.asarray(y_test, dtype=np.float64)
    cls = [float(c) for c in cl_grid]
    if float(default_cl) not in result.intervals:
        raise ValueError("result does not contain intervals at the default cl")
    sigmas, abs_err, corr = sigma_error_pairs(result.test_prediction, y_test)
    return EvaluationReport(
        model=model_name,
        rmse=rmse(y_test, result.test_prediction.means),
        curve=calibration_curve(result.intervals, y_test, cls),
        width_stats={c: width_stats(result.intervals[c]) for c in cls},
        retrieval=screen_counts(result.intervals[float(default_cl)], y_test, cutoffs),
        default_cl=float(default_cl),
        sigma=sigmas,
        abs_error=abs_err,
        sigma_error_correlation=corr,
    )


def report_to_dict(report: EvaluationReport) -> dict:
    """JSON-serializable form, exact enough to re-aggregate from disk."""
    return {
        "model": report.model,
        "rmse": report.rmse,
        "default_cl": report.default_cl,
        "curve": {
            "cl": list(report.curve.cls),
            "coverage": list(report.curve.coverages),
            "r_squared": report.curve.r_squared,
        },
        "width_stats": {
            repr(cl): {
                "mean": ws.mean,
                "median": ws.median,
                "q1": ws.q1,
                "q3": ws.q3,
                "min": ws.min,
                "max": ws.max,
                "fraction_unbounded": ws.fraction_unbounded,
                "n_finite": ws.n_finite,
            }
            for cl, ws in report.width_stats.items()
        },
        "retrieval": [
            {
                "cutoff": rc.cutoff,
                "uncertain": rc.uncertain,
                "true_positive": rc.true_positive,
                "false_positive": rc.false_positive,
                "false_negative": rc.false_negative,
                "true_negative": rc.true_negative,
                "tp_percent_of_test": rc.tp_percent_of_test,
                "tp_percent_of_calls": rc.tp_percent_of_calls,
            }
            for rc in report.retrieval
        ],
        "sigma": [float(s) for s in report.sigma],
        "abs_error": [float(e) for e in report.abs_error],
        "sigma_error_correlation": report.sigma_error_correlation,
    }


def report_from_dict(d: dict) -> EvaluationReport:
    curve = CalibrationCurve(
        cls=tuple(d["curve"]["cl"]),
        coverages=tuple(d["curve"]["coverage"]),
        r_squared=d["curve"]["r_squared"],
    )
    widths = {
        float(cl): WidthStats(
            mean=ws["mean"],
            median=ws["median"],
            q1=ws["q1"],
            q3=ws["q3"],
            min=ws["min"],
            max=ws["max"],
            fraction_unbounded=ws["fraction_unbounded"],
            n_finite=ws["n_finite"],
        )
        for cl, ws in d["width_stats"].items()
    }
    retrieval = [
        RetrievalCounts(
            cutoff=rc["cutoff"],
            uncertain=rc["uncertain"],
            true_positive=rc["true_positive"],
            false_positive=rc["false_positive"],
            false_negative=rc["false_negative"],
            true_negative=rc["true_negative"],
        )
        for rc in d["retrieval"]
    ]
    return EvaluationReport(
        model=d["model"],
        rmse=d["rmse"],
        curve=curve,
        width_stats=widths,
        retrieval=retrieval,
        default_cl=d["default_cl"],
        sigma=np.asarray(d["sigma"]),
        abs_error=np.asarray(d["abs_error"]),
        sigma_error_correlation=d["sigma_error_correlation"],
    )


def _mean_std(values) -> dict:
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def aggregate_runs(reports: list) -> dict:
    """Mean and standard deviation of every metric across repeated runs.

    All reports must share the same cl grid and cutoffs. Retrieval counts are
    averaged across runs.
    """
    if not reports:
        raise ValueError("aggregate_runs requires at least one report")
    grid = reports[0].curve.cls
    cutoffs = tuple(rc.cutoff for rc in reports[0].retrieval)
    for r in reports[1:]:
        if r.curve.cls != grid:
            raise ValueError("reports have mismatched cl grids")
        if tuple(rc.cutoff for rc in r.retrieval) != cutoffs:
            raise ValueError("reports have mismatched cutoffs")
    agg = {
        "n_runs": len(reports),
        "rmse": _mean_std([r.rmse for r in reports]),
        "r_squared": _mean_std([r.curve.r_squared for r in reports]),
        "sigma_error_correlation": _mean_std(
            [r.sigma_error_correlation for r in reports]
        ),
        "coverage": {},
        "mean_width": {},
        "fraction_unbounded": {},
        "retrieval": {},
    }
    for i, cl in enumerate(grid):
        agg["coverage"][repr(float(cl))] = _mean_std([r.curve.coverages[i] for r in reports])
    for cl in reports[0].width_stats:
        key = repr(float(cl))
        agg["mean_width"][key] = _mean_std([r.width_stats[cl].mean for r in reports])
        agg["fraction_unbounded"][key] = _mean_std(
            [r.width_stats[cl].fraction_unbounded for r in reports]
        )
    for j, cutoff in enumerate(cutoffs):
        agg["retrieval"][repr(float(cutoff))] = {
            cat: _mean_std([getattr(r.retrieval[j], cat) for r in reports])
            for cat in CATEGORIES
        }
    return agg
