"""Correlation metrics for quality prediction and their cross-split aggregation.

Both coefficients treat the two score vectors symmetrically and are computed
on the raw values: predictions are not monotonically remapped before PLCC.
A zero-variance input makes the denominator vanish, so instead of silently
returning NaN the functions raise :class:`UndefinedCorrelationError`; callers
that loop over many evaluation splits record the split as failed and keep
going.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedCorrelationError

# Results are clamped to [-1, 1]; anything farther out than this is a bug.
_UNIT_TOL = 1e-12


def _as_score_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if v.size < 2:
        raise ValueError(f"{name} needs at least 2 entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = _as_score_vector(a, "a")
    b = _as_score_vector(b, "b")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def plcc(a, b) -> float:
    """Pearson linear correlation coefficient between two score vectors.

    Raises
    ------
    UndefinedCorrelationError
        If either vector is constant (zero variance).
    """
    a, b = _check_pair(a, b)
    da = a - a.mean()
    db = b - b.mean()
    ss_a = float(da @ da)
    ss_b = float(db @ db)
    if ss_a == 0.0 or ss_b == 0.0:
        raise UndefinedCorrelationError(
            "correlation undefined: input has zero variance"
        )
    r = float(da @ db) / np.sqrt(ss_a * ss_b)
    if abs(r) > 1.0 + _UNIT_TOL:
        raise ArithmeticError(f"correlation {r!r} outside [-1, 1] beyond tolerance")
    return float(min(1.0, max(-1.0, r)))


def mid_ranks(v) -> np.ndarray:
    """Ranks 1..m with ties assigned the mean of the tied positions.

    E.g. ``(5, 5, 7) -> (1.5, 1.5, 3.0)``.
    """
    v = _as_score_vector(v, "v")
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i..j (0-based) share the mean of ranks i+1..j+1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srocc(a, b) -> float:
    """Spearman rank-order correlation: Pearson correlation of mid-ranks."""
    a, b = _check_pair(a, b)
    return plcc(mid_ranks(a), mid_ranks(b))


@dataclass
class SplitResultSummary:
    """Per-split correlation lists plus their cross-split aggregates.

    ``std_defined`` is False when only one split contributed; the std fields
    are then reported as 0.0 by convention.
    """

    plcc_values: list[float] = field(default_factory=list)
    srocc_values: list[float] = field(default_factory=list)
    plcc_mean: float = float("nan")
    plcc_median: float = float("nan")
    plcc_std: float = float("nan")
    srocc_mean: float = float("nan")
    srocc_median: float = float("nan")
    srocc_std: float = float("nan")
    std_defined: bool = True


def _mean_median_std(values: np.ndarray) -> tuple[float, float, float, bool]:
    mean = float(values.mean())
    median = float(np.median(values))
    if values.size < 2:
        return mean, median, 0.0, False
    if values.min() == values.max():
        # identical values: exactly zero, not mean-rounding noise
        return mean, median, 0.0, True
    return mean, median, float(values.std(ddof=1)), True


def aggregate(results: list[tuple[float, float]]) -> SplitResultSummary:
    """Aggregate (PLCC, SROCC) pairs from repeated splits.

    Mean, median (even count: mean of the middle two), and sample std (n-1).
    """
    if not results:
        raise ValueError("no results to aggregate")
    p = np.asarray([r[0] for r in results], dtype=np.float64)
    s = np.asarray([r[1] for r in results], dtype=np.float64)
    pm, pmed, pstd, defined = _mean_median_std(p)
    sm, smed, sstd, _ = _mean_median_std(s)
    return SplitResultSummary(
        plcc_values=[float(x) for x in p],
        srocc_values=[float(x) for x in s],
        plcc_mean=pm,
        plcc_median=pmed,
        plcc_std=pstd,
        srocc_mean=sm,
        srocc_median=smed,
        srocc_std=sstd,
        std_defined=defined,
    )
