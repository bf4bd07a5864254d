"""Assemble the full analysis report from interval and visit tables."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import pandas as pd

from .core import DEFAULT_NODES, DayGroup
from .exceptions import DwellscopeError
from .stats import (DEFAULT_BIN_WIDTH, DEFAULT_OCCUPANCY_BINS, DEFAULT_PLATEAU_FRACTION,
                    DEFAULT_SMOOTH_WINDOW, DwellOccupancyCurve, SurvivalCurve, boxplot_summary,
                    dwell_occupancy_curve, extract_thresholds, node_stays, occupancy_series,
                    spearman_rho, stay_by_entry_hour, survival_curve)
from .trajectory import TransitionMatrix, transition_counts_frame
from .validation import check_intervals_frame, check_visits_frame

REPORT_KEYS = ("spearman_unique", "spearman_total", "stay_by_hour", "boxplots", "survival",
               "dwell_occupancy")


@dataclass
class AnalyzeOptions:
    exclude_nodes: Tuple[str, ...] = ("E", "S")
    occupancy_bins: int = DEFAULT_OCCUPANCY_BINS
    bin_width: int = DEFAULT_BIN_WIDTH
    plateau_fraction: float = DEFAULT_PLATEAU_FRACTION
    smooth_window: int = DEFAULT_SMOOTH_WINDOW
    min_samples: int = 1
    knee: str = "hinge"
    survival_step: float = 10.0
    day_group: Optional[str] = None  # None reports both groups
    tz: str = "UTC"
    pool_node_stays: bool = False
    min_duration: int = 0


@dataclass
class AnalysisResult:
    report: dict
    dwell_curves: Dict[str, DwellOccupancyCurve] = field(default_factory=dict)
    survival_curves: Dict[str, SurvivalCurve] = field(default_factory=dict)
    transitions: Optional[TransitionMatrix] = None


def error_object(exc: Exception) -> dict:
    return {"error": type(exc).__name__, "message": str(exc)}


def ordered_nodes(labels) -> list:
    labels = set(labels)
    known = [n for n in DEFAULT_NODES if n in labels]
    return known + sorted(labels - set(DEFAULT_NODES))


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs).to_dict()
    except DwellscopeError as exc:
        return error_object(exc)


def analyze(intervals, visits, options: Optional[AnalyzeOptions] = None) -> AnalysisResult:
    """Run every statistic; failures of individual statistics become error objects."""
    opts = options or AnalyzeOptions()
    iv = check_intervals_frame(intervals)
    vs = check_visits_frame(visits)
    excluded = set(opts.exclude_nodes)
    per_node = [n for n in ordered_nodes(iv["node_id"].unique()) if n not in excluded]

    report = {
        "spearman_unique": _guarded(spearman_rho, vs["unique_nodes"], vs["total_stay_s"]),
        "spearman_total": _guarded(spearman_rho, vs["total_node_visits"], vs["total_stay_s"]),
    }

    groups = [DayGroup.parse(opts.day_group)] if opts.day_group else list(DayGroup)
    report["stay_by_hour"] = {
        g.value: [h.to_dict() for h in stay_by_entry_hour(vs, g, tz=opts.tz)] for g in groups}

    stays = node_stays(iv, pool=opts.pool_node_stays, tz=opts.tz)
    boxplots, survival, survival_curves = {}, {}, {}
    for node in per_node:
        durations = stays.get(node)
        boxplots[node] = _guarded(boxplot_summary, durations)
        try:
            curve = survival_curve(durations, opts.survival_step)
        except DwellscopeError as exc:
            survival[node] = error_object(exc)
        else:
            survival[node] = curve.to_dict()
            survival_curves[node] = curve
    report["boxplots"] = boxplots
    report["survival"] = survival

    density, dwell_curves = {}, {}
    for node in per_node:
        node_iv = iv[iv["node_id"] == node]
        occ = occupancy_series(node_iv, opts.bin_width, node=node)
        curve = dwell_occupancy_curve(node_iv, occ, opts.occupancy_bins, opts.min_duration)
        try:
            points = extract_thresholds(curve, opts.smooth_window, opts.plateau_fraction,
                                        opts.min_samples, opts.knee)
        except DwellscopeError as exc:
            entry = curve.to_dict()
            entry["points"] = error_object(exc)
        else:
            curve = dataclasses.replace(curve, points=points)
            entry = curve.to_dict()
        entry["max_count"] = occ.max_count
        density[node] = entry
        dwell_curves[node] = curve
    report["dwell_occupancy"] = density

    tm = transition_counts_frame(iv, ordered_nodes(iv["node_id"].unique()) or None, tz=opts.tz)
    report["transitions"] = {
        "nodes": list(tm.nodes),
        "counts": tm.counts.tolist(),
        "probabilities": tm.probabilities.tolist(),
        "self_transitions": tm.self_transitions,
    }
    report["summary"] = {
        "n_intervals": int(len(iv)),
        "n_visits": int(len(vs)),
        "n_devices": int(vs["device_id"].nunique()),
        "excluded_nodes": sorted(excluded),
    }
    report["parameters"] = dataclasses.asdict(opts)
    report["parameters"]["exclude_nodes"] = list(opts.exclude_nodes)
    return AnalysisResult(report, dwell_curves, survival_curves, tm)
