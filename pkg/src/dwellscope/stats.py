"""Length-of-stay analytics: rank correlation, boxplots, survival curves,
entry-hour profiles, node occupancy and the dwell-versus-occupancy curve with
its characteristic points W, X, Y, Z.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats as _sps
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DayGroup, day_groups_of, local_day_index, local_hour
from .exceptions import (DegenerateInput, EmptyInput, FlatCurve, InsufficientData,
                         LengthMismatch)
from .validation import (check_fraction, check_intervals_frame, check_positive,
                         check_visits_frame)

DEFAULT_BIN_WIDTH = 60
DEFAULT_OCCUPANCY_BINS = 20
DEFAULT_SMOOTH_WINDOW = 3
DEFAULT_PLATEAU_FRACTION = 0.85


def _finite_list(values):
    return [None if (v is None or (isinstance(v, float) and math.isnan(v))) else v
            for v in values]


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p_value: float
    n: int

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BoxplotSummary:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    outliers: Tuple[float, ...]

    def to_dict(self):
        d = asdict(self)
        d["outliers"] = list(self.outliers)
        return d


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    fraction_remaining: np.ndarray
    median_exit: float
    step: float

    def area(self) -> float:
        """Left Riemann sum of the step curve; approximates the mean duration."""
        return float(self.fraction_remaining.sum() * self.step)

    def to_dict(self):
        return {"times": self.times.tolist(),
                "fraction_remaining": self.fraction_remaining.tolist(),
                "median_exit": self.median_exit, "step": self.step}


@dataclass(frozen=True)
class HourlyStay:
    hour: int
    mean_stay: Optional[float]
    median_stay: Optional[float]
    n: int

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OccupancySeries:
    node: Optional[str]
    bin_width: int
    origin: int
    counts: np.ndarray
    normalized: np.ndarray

    def bin_index(self, t):
        return (np.asarray(t, dtype=np.int64) - self.origin) // self.bin_width

    @property
    def max_count(self) -> int:
        return int(self.counts.max()) if len(self.counts) else 0

    def to_dict(self):
        return {"node": self.node, "bin_width": self.bin_width, "origin": self.origin,
                "counts": self.counts.tolist(), "normalized": self.normalized.tolist()}


@dataclass(frozen=True)
class ThresholdPoint:
    occupancy: float
    dwell: float


@dataclass(frozen=True)
class ThresholdPoints:
    W: ThresholdPoint
    X: ThresholdPoint
    Y: ThresholdPoint
    Z: ThresholdPoint

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DwellOccupancyCurve:
    occupancy_bins: np.ndarray
    mean_dwell: np.ndarray
    sample_counts: np.ndarray
    points: Optional[ThresholdPoints] = None

    @property
    def bin_width(self) -> float:
        return 1.0 / len(self.occupancy_bins)

    def to_dict(self):
        return {"occupancy_bins": self.occupancy_bins.tolist(),
                "mean_dwell": _finite_list(self.mean_dwell.tolist()),
                "sample_counts": self.sample_counts.tolist(),
                "points": None if self.points is None else self.points.to_dict()}


# -- rank correlation ------------------------------------------------------

def midranks(values) -> np.ndarray:
    """1-based ranks, tied values sharing the average of their positions."""
    a = np.asarray(values, dtype=float)
    n = len(a)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    first = np.empty(n, dtype=bool)
    first[:1] = True
    first[1:] = sorted_a[1:] != sorted_a[:-1]
    group = np.cumsum(first) - 1
    bounds = np.append(np.flatnonzero(first), n)
    avg = (bounds[:-1] + bounds[1:] - 1) / 2.0 + 1.0
    ranks = np.empty(n, dtype=float)
    ranks[order] = avg[group]
    return ranks


def spearman_rho(x, y) -> SpearmanResult:
    """Spearman's rank correlation with a two-sided t-approximation p-value.

    Ties get mid-ranks; rho is the Pearson correlation of the ranks.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise LengthMismatch(f"x has {len(x)} values, y has {len(y)}")
    n = len(x)
    if n < 2:
        raise DegenerateInput(f"need at least 2 pairs, got {n}")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("inputs contain NaN")
    rx = midranks(x)
    ry = midranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("rank correlation is undefined for a constant input")
    rho = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))

    dof = n - 2
    if dof == 0:
        p = 1.0
    elif abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt(dof / (1.0 - rho * rho))
        p = float(min(1.0, 2.0 * _sps.t.sf(abs(t), dof)))
    return SpearmanResult(rho, p, n)


# -- distributions -----------------------------------------------------------

def _median_sorted(v):
    m = len(v)
    mid = m // 2
    return float(v[mid]) if m % 2 else (float(v[mid - 1]) + float(v[mid])) / 2.0


def boxplot_summary(values) -> BoxplotSummary:
    """Five-number summary with Tukey hinges and 1.5 x IQR outliers.

    Quartiles are medians of the lower and upper halves; for odd sizes the
    median belongs to both halves.  ``min``/``max`` are the whisker ends.
    """
    v = np.sort(np.asarray(values, dtype=float).ravel())
    n = len(v)
    if n == 0:
        raise EmptyInput("boxplot of an empty sample")
    median = _median_sorted(v)
    q1 = _median_sorted(v[:(n + 1) // 2])
    q3 = _median_sorted(v[n // 2:])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = tuple(float(x) for x in v[(v < lo_fence) | (v > hi_fence)])
    return BoxplotSummary(min(float(inside[0]), q1), q1, median, q3,
                          max(float(inside[-1]), q3), outliers)


def survival_fraction(durations, t) -> float:
    """Share of durations still running at elapsed time ``t``.

    Everyone is present at t = 0; afterwards a duration d counts while t < d.
    """
    d = np.asarray(durations, dtype=float)
    if len(d) == 0:
        raise EmptyInput("no durations")
    if t <= 0:
        return 1.0
    return float(np.count_nonzero(d > t)) / len(d)


def survival_curve(durations, step: float = 10) -> SurvivalCurve:
    """Fraction of visitors remaining on the grid 0, step, 2*step, ...

    The grid runs until the fraction reaches 0.
    """
    check_positive("step", step)
    d = np.sort(np.asarray(durations, dtype=float).ravel())
    n = len(d)
    if n == 0:
        raise EmptyInput("survival curve of an empty sample")
    if d[0] < 0 or np.isnan(d).any():
        raise ValueError("durations must be non-negative")
    n_steps = max(int(math.ceil(d[-1] / step)), 1)
    times = np.arange(n_steps + 1, dtype=float) * step
    remaining = n - np.searchsorted(d, times, side="right")
    frac = remaining / n
    frac[0] = 1.0
    median_exit = float(times[np.argmax(frac < 0.5)])
    return SurvivalCurve(times, frac, median_exit, float(step))


def node_stays(intervals, pool: bool = False, tz: str = "UTC") -> Dict[str, np.ndarray]:
    """Durations per node; ``pool=True`` sums each device-day's intervals at a node."""
    df = check_intervals_frame(intervals)
    if pool and not df.empty:
        days = local_day_index(df["check_in_s"].to_numpy(), tz)
        df = (df.assign(_day=days)
                .groupby(["device_id", "_day", "node_id"], sort=False)["duration_s"]
                .sum().reset_index())
    return {node: grp["duration_s"].to_numpy()
            for node, grp in df.groupby("node_id", sort=True)}


def stay_by_entry_hour(visits, group: Optional[DayGroup], tz: str = "UTC",
                       hours: Sequence[int] = range(24)) -> List[HourlyStay]:
    """Mean and median total stay of visits bucketed by local entry hour.

    Only visits on days of ``group`` are used (all open days when ``None``).
    """
    df = check_visits_frame(visits)
    entry = df["entry_s"].to_numpy()
    stay = df["total_stay_s"].to_numpy().astype(float)
    if len(df):
        day_idx = local_day_index(entry, tz)
        uniq, inv = np.unique(day_idx, return_inverse=True)
        groups = np.array(day_groups_of(uniq), dtype=object)[inv]
        if group is None:
            keep = np.array([g is not None for g in groups], dtype=bool)
        else:
            group = DayGroup.parse(group)
            keep = np.array([g is group for g in groups], dtype=bool)
        hour = local_hour(entry, tz)
    else:
        keep = np.zeros(0, dtype=bool)
        hour = np.zeros(0, dtype=np.int64)
    out = []
    for h in hours:
        sel = stay[keep & (hour == h)]
        if len(sel):
            out.append(HourlyStay(int(h), float(sel.mean()), float(np.median(sel)), len(sel)))
        else:
            out.append(HourlyStay(int(h), None, None, 0))
    return out


# -- occupancy ----------------------------------------------------------------

def _single_node(df, node):
    if node is not None:
        df = df[df["node_id"] == node]
    labels = df["node_id"].unique()
    if len(labels) > 1:
        raise ValueError(f"expected intervals of one node, got {sorted(labels)}")
    return df, (node if node is not None else (labels[0] if len(labels) else None))


def occupancy_series(intervals, bin_width: int = DEFAULT_BIN_WIDTH, node: Optional[str] = None,
                     origin: Optional[int] = None, end: Optional[int] = None) -> OccupancySeries:
    """Per-bin count of intervals overlapping ``[b_start, b_end)``.

    Intervals are closed, so a zero-length interval counts in the bin holding
    its instant.  Bins start at ``origin`` (default: the first check-in
    rounded down to a bin edge).
    """
    check_positive("bin_width", bin_width)
    bin_width = int(bin_width)
    df, node = _single_node(check_intervals_frame(intervals), node)
    ci = df["check_in_s"].to_numpy()
    co = df["check_out_s"].to_numpy()
    if len(ci) == 0:
        start = 0 if origin is None else int(origin)
        n_bins = 0 if end is None else max((int(end) - start) // bin_width + 1, 0)
        zeros = np.zeros(n_bins, dtype=np.int64)
        return OccupancySeries(node, bin_width, start, zeros, zeros.astype(float))
    start = int(ci.min() // bin_width * bin_width) if origin is None else int(origin)
    if ci.min() < start:
        raise ValueError("origin lies after the first check-in")
    stop = int(co.max()) if end is None else max(int(end), int(co.max()))
    n_bins = (stop - start) // bin_width + 1
    first = (ci - start) // bin_width
    last = (co - start) // bin_width
    diff = (np.bincount(first, minlength=n_bins + 1)
            - np.bincount(last + 1, minlength=n_bins + 1))
    counts = np.cumsum(diff)[:n_bins].astype(np.int64)
    peak = counts.max()
    normalized = counts / peak if peak > 0 else np.zeros(n_bins)
    return OccupancySeries(node, bin_width, start, counts, normalized)


def dwell_occupancy_curve(intervals, occupancy: OccupancySeries,
                          n_bins: int = DEFAULT_OCCUPANCY_BINS,
                          min_duration: int = 0) -> DwellOccupancyCurve:
    """Mean dwell grouped by the normalized occupancy found at check-in.

    The occupancy axis [0, 1] is cut into ``n_bins`` equal-width bins; the
    top edge belongs to the last bin.
    """
    if n_bins < 5:
        raise ValueError(f"n_bins must be >= 5, got {n_bins}")
    df = check_intervals_frame(intervals)
    if occupancy.node is not None:
        df = df[df["node_id"] == occupancy.node]
    df = df[df["duration_s"] >= min_duration]
    centers = (np.arange(n_bins) + 0.5) / n_bins
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    peak = occupancy.max_count
    if len(df) and peak > 0:
        idx = occupancy.bin_index(df["check_in_s"].to_numpy())
        if idx.min() < 0 or idx.max() >= len(occupancy.counts):
            raise ValueError("interval check-ins fall outside the occupancy series")
        occ_counts = occupancy.counts[idx]
        # integer arithmetic keeps bin edges exact
        j = np.minimum(occ_counts * n_bins // peak, n_bins - 1)
        sums = np.bincount(j, weights=df["duration_s"].to_numpy(dtype=float), minlength=n_bins)
        counts = np.bincount(j, minlength=n_bins).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return DwellOccupancyCurve(centers, mean, counts)


def moving_average(values, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks at the ends."""
    v = np.asarray(values, dtype=float)
    if window <= 1:
        return v.copy()
    half_lo = (window - 1) // 2
    half_hi = window // 2
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(len(v))
    lo = np.maximum(idx - half_lo, 0)
    hi = np.minimum(idx + half_hi + 1, len(v))
    return (csum[hi] - csum[lo]) / (hi - lo)


def _hinge_knee(occupancy, dwell, weights, step) -> Optional[float]:
    """Breakpoint of the best weighted fit of ``level - slope * max(0, occ - knee)``.

    Candidate knees lie on a grid of spacing ``step``.  Returns None when no
    candidate yields a declining fit.
    """
    w = np.sqrt(weights)
    best, best_sse = None, math.inf
    for knee in np.arange(occupancy[0], occupancy[-1] + step / 2, step):
        hinge = np.maximum(occupancy - knee, 0.0)
        design = np.column_stack([np.ones_like(occupancy), -hinge])
        coef, *_ = np.linalg.lstsq(design * w[:, None], dwell * w, rcond=None)
        if coef[1] <= 0:
            continue
        sse = float(np.sum(weights * (dwell - design @ coef) ** 2))
        if sse < best_sse:
            best, best_sse = float(knee), sse
    return best


def extract_thresholds(curve: DwellOccupancyCurve, smooth_window: int = DEFAULT_SMOOTH_WINDOW,
                       plateau_fraction: float = DEFAULT_PLATEAU_FRACTION,
                       min_samples: int = 1, knee: str = "hinge") -> ThresholdPoints:
    """Locate W (onset), X (plateau start), Y (peak) and Z (decline onset).

    W is the lowest usable bin, Y the maximum of the moving-average curve and
    X the first bin at or below Y whose smoothed dwell reaches
    ``plateau_fraction`` of Y's.  Z is found at or above Y by one of two
    rules:

    ``"hinge"``
        the bin nearest the breakpoint of a count-weighted plateau-then-linear
        decline fit to the raw bin means;
    ``"suffix"``
        the start of the longest strictly decreasing tail of the smoothed
        curve.  Sensitive to noise on a flat plateau.

    Reported dwell values are the unsmoothed bin means.
    """
    check_fraction("plateau_fraction", plateau_fraction)
    if knee not in ("hinge", "suffix"):
        raise ValueError(f"knee must be 'hinge' or 'suffix', got {knee!r}")
    usable = np.flatnonzero((curve.sample_counts >= max(min_samples, 1))
                            & ~np.isnan(curve.mean_dwell))
    if len(usable) < 5:
        raise InsufficientData(f"need at least 5 non-empty occupancy bins, got {len(usable)}")
    raw = curve.mean_dwell[usable]
    occ = curve.occupancy_bins[usable]
    smooth = moving_average(raw, smooth_window)
    if smooth.max() - smooth.min() < 1.0:
        raise FlatCurve("dwell varies by less than 1 s across occupancy bins")

    y = int(np.argmax(smooth))
    x = int(np.flatnonzero(smooth[:y + 1] >= plateau_fraction * smooth[y])[0])
    z = len(smooth) - 1
    if knee == "suffix":
        while z > 0 and smooth[z - 1] > smooth[z]:
            z -= 1
    elif y < z:
        weights = curve.sample_counts[usable][y:].astype(float)
        brk = _hinge_knee(occ[y:], raw[y:], weights, curve.bin_width / 5)
        if brk is not None:
            z = y + int(np.argmin(np.abs(occ[y:] - brk)))

    def point(k):
        return ThresholdPoint(float(occ[k]), float(raw[k]))

    return ThresholdPoints(point(0), point(x), point(y), point(z))


class DensityThresholdEstimator(BaseEstimator):
    """Fit the dwell-versus-occupancy curve of one node and its W/X/Y/Z points.

    Parameters
    ----------
    bin_width : int, default=60
        Time-bin width in seconds for the occupancy series.
    n_bins : int, default=20
        Number of equal-width bins on the normalized-occupancy axis.
    smooth_window : int, default=3
    plateau_fraction : float, default=0.85
        X is the first bin whose smoothed dwell reaches this share of Y's.
    min_samples : int, default=1
        Bins with fewer intervals are ignored when locating the points.
    min_duration : int, default=0
        Intervals shorter than this (pass-throughs) are ignored.
    knee : {"hinge", "suffix"}, default="hinge"
        Rule used to place Z; see :func:`extract_thresholds`.
    """

    def __init__(self, bin_width=DEFAULT_BIN_WIDTH, n_bins=DEFAULT_OCCUPANCY_BINS,
                 smooth_window=DEFAULT_SMOOTH_WINDOW, plateau_fraction=DEFAULT_PLATEAU_FRACTION,
                 min_samples=1, min_duration=0, knee="hinge"):
        self.knee = knee
        self.bin_width = bin_width
        self.n_bins = n_bins
        self.smooth_window = smooth_window
        self.plateau_fraction = plateau_fraction
        self.min_samples = min_samples
        self.min_duration = min_duration

    def fit(self, X, y=None, node=None):
        df = check_intervals_frame(X)
        occupancy = occupancy_series(df, self.bin_width, node=node)
        curve = dwell_occupancy_curve(df, occupancy, self.n_bins, self.min_duration)
        points = extract_thresholds(curve, self.smooth_window, self.plateau_fraction,
                                    self.min_samples, self.knee)
        self.occupancy_ = occupancy
        self.curve_ = replace(curve, points=points)
        self.points_ = points
        return self

    def predict(self, X):
        """Mean dwell of the occupancy bin holding each level in ``X`` (NaN if empty)."""
        check_is_fitted(self)
        levels = np.asarray(X, dtype=float)
        j = np.clip((levels * self.n_bins).astype(int), 0, self.n_bins - 1)
        return self.curve_.mean_dwell[j]
