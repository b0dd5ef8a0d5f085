"""Cohort-level statistics: summaries, volume regression, paired t-tests.

The t-distribution tail is evaluated through the regularized incomplete beta
function, computed by the standard continued-fraction expansion (modified
Lentz) to 1e-12; the test suite cross-checks it against direct quadrature
of the t density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .segmetrics import CASE_METRIC_FIELDS, CaseMetrics
from .volbounds import avpe_bound


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float  # sample std, n-1 denominator (0 for n = 1)
    median: float
    n: int


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r2: float
    n: int


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


def summarize(values) -> MetricSummary:
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot summarize an empty list")
    if not np.isfinite(values).all():
        raise ValueError("values must be finite")
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return MetricSummary(
        mean=float(values.mean()), std=std, median=float(np.median(values)), n=values.size
    )


def linear_fit(x, y) -> RegressionFit:
    """Least-squares line with r2 = (Pearson r)^2.

    Constant x (no regression possible) and constant y (Pearson r undefined)
    are both rejected, as distinct errors.
    """
    x = np.asarray(list(x), dtype=np.float64)
    y = np.asarray(list(y), dtype=np.float64)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two points")
    sxx = float(((x - x.mean()) ** 2).sum())
    syy = float(((y - y.mean()) ** 2).sum())
    if sxx == 0.0:
        raise ValueError("x is constant: slope undefined")
    if syy == 0.0:
        raise ValueError("y is constant: Pearson correlation undefined")
    sxy = float(((x - x.mean()) * (y - y.mean())).sum())
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    r2 = sxy * sxy / (sxx * syy)
    return RegressionFit(slope=slope, intercept=intercept, r2=r2, n=x.size)


# --- regularized incomplete beta via continued fraction -----------------

_BETAINC_TOL = 1e-12
_BETAINC_MAX_ITER = 500
_TINY = 1e-300


def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETAINC_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETAINC_TOL:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_regularized(x: float, a: float, b: float) -> float:
    """I_x(a, b), the regularized incomplete beta function."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # Use the expansion on the side where it converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided p-value of a t statistic: I_x(df/2, 1/2), x = df/(df + t^2)."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / (df + t * t), df / 2.0, 0.5)


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on matched samples.

    Zero-variance differences are a degenerate case: p = 1 when the
    differences are all zero, an infinite-t outcome otherwise.
    """
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    df = d.size - 1
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, df=df, p=1.0)
        return TTestResult(t=math.copysign(math.inf, mean), df=df, p=0.0)
    t = mean / (sd / math.sqrt(d.size))
    return TTestResult(t=t, df=df, p=t_two_sided_p(t, df))


# --- cohort report ------------------------------------------------------


def _summary_dict(s: MetricSummary) -> dict:
    return {"mean": s.mean, "std": s.std, "median": s.median, "n": s.n}


def cohort_report(
    cases: list[CaseMetrics],
    groups: list[str],
    case_ids: Optional[list[str]] = None,
) -> dict:
    """Per-group metric summaries, avpe bound audit, and pairwise deltas.

    Groups are reported in lexicographic order. Pairwise Dice deltas get a
    paired t-test when ``case_ids`` lets cases be matched one-to-one across
    the two groups; otherwise only the summary delta is reported.
    """
    if len(cases) != len(groups):
        raise ValueError(f"{len(cases)} cases but {len(groups)} group labels")
    if case_ids is not None and len(case_ids) != len(cases):
        raise ValueError(f"{len(cases)} cases but {len(case_ids)} case ids")

    by_group: dict[str, list[int]] = {}
    for i, g in enumerate(groups):
        by_group.setdefault(g, []).append(i)

    report: dict = {"groups": {}, "comparisons": []}
    for g in sorted(by_group):
        idx = by_group[g]
        metrics = {}
        for field_name in CASE_METRIC_FIELDS:
            vals = [getattr(cases[i], field_name) for i in idx]
            defined = [v for v in vals if v is not None]
            metrics[field_name] = _summary_dict(summarize(defined)) if defined else None
        entry = {"n_cases": len(idx), "metrics": metrics}

        dices = [cases[i].dice for i in idx]
        abs_vpes = [abs(cases[i].vpe) for i in idx if cases[i].vpe is not None]
        mean_dice = float(np.mean(dices))
        if abs_vpes and mean_dice > 0:
            bound = avpe_bound(mean_dice)
            mean_abs_vpe = float(np.mean(abs_vpes))
            entry["avpe"] = {
                "mean_dice": mean_dice,
                "mean_abs_vpe": mean_abs_vpe,
                "bound": bound,
                "violated": bool(mean_abs_vpe > bound + 1e-12),
            }
        else:
            entry["avpe"] = None
        report["groups"][g] = entry

    group_names = sorted(by_group)
    for i, ga in enumerate(group_names):
        for gb in group_names[i + 1 :]:
            ia, ib = by_group[ga], by_group[gb]
            comp = {
                "group_a": ga,
                "group_b": gb,
                "dice_mean_delta": float(
                    np.mean([cases[i].dice for i in ia]) - np.mean([cases[i].dice for i in ib])
                ),
                "paired_t": None,
            }
            if case_ids is not None:
                ids_a = {case_ids[i]: i for i in ia}
                ids_b = {case_ids[i]: i for i in ib}
                shared = sorted(set(ids_a) & set(ids_b))
                if len(shared) >= 2:
                    res = paired_t_test(
                        [cases[ids_a[c]].dice for c in shared],
                        [cases[ids_b[c]].dice for c in shared],
                    )
                    comp["paired_t"] = {
                        "t": res.t,
                        "df": res.df,
                        "p": res.p,
                        "n_pairs": len(shared),
                    }
            report["comparisons"].append(comp)
    return report
