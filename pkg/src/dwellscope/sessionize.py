"""Turn sightings into presence intervals and presence intervals into visits.

A device is checked in at a node on its first sighting there and checked out
on the last sighting before a silence longer than ``gap_threshold`` seconds.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .core import SightingEvent, local_datetimes, local_day_index
from .exceptions import EmptyVisit, UnsortedInput
from .validation import (INTERVAL_COLUMNS, VISIT_COLUMNS, check_events_frame,
                         check_intervals_frame, check_positive)

DEFAULT_GAP = 300


@dataclass(frozen=True, slots=True)
class PresenceInterval:
    device: str
    node: str
    check_in: int
    check_out: int

    def __post_init__(self):
        if self.check_out < self.check_in:
            raise ValueError(f"check_out {self.check_out} precedes check_in {self.check_in}")

    @property
    def duration(self) -> int:
        return self.check_out - self.check_in


@dataclass(frozen=True)
class VisitRecord:
    """All presence intervals of one device during one museum day."""

    device: str
    entry_time: int
    exit_time: int
    total_stay: int
    intervals: Tuple[PresenceInterval, ...]
    unique_nodes: int
    total_node_visits: int


def sessionize(events: Sequence[SightingEvent], gap_threshold: float = DEFAULT_GAP
               ) -> List[PresenceInterval]:
    """Merge time-sorted sightings of one device at one node into intervals.

    A silence strictly longer than ``gap_threshold`` closes the open interval;
    a lone sighting gives a zero-length interval.
    """
    check_positive("gap_threshold", gap_threshold)
    events = list(events)
    if not events:
        return []
    device, node = events[0].device, events[0].node
    for prev, cur in zip(events, events[1:]):
        if cur.timestamp < prev.timestamp:
            raise UnsortedInput(
                f"sighting at t={cur.timestamp} follows t={prev.timestamp}")
        if cur.device != device or cur.node != node:
            raise ValueError("sessionize expects the sightings of a single (device, node) pair")

    out = []
    start = last = events[0].timestamp
    for ev in events[1:]:
        if ev.timestamp - last > gap_threshold:
            out.append(PresenceInterval(device, node, start, last))
            start = ev.timestamp
        last = ev.timestamp
    out.append(PresenceInterval(device, node, start, last))
    return out


def build_visits(intervals: Sequence[PresenceInterval]) -> VisitRecord:
    """Aggregate the intervals of one device-day into a VisitRecord."""
    intervals = list(intervals)
    if not intervals:
        raise EmptyVisit("cannot build a visit from zero intervals")
    devices = {iv.device for iv in intervals}
    if len(devices) != 1:
        raise ValueError(f"intervals span {len(devices)} devices; expected one")
    ordered = tuple(sorted(intervals, key=lambda iv: (iv.check_in, iv.node, iv.check_out)))
    entry = min(iv.check_in for iv in ordered)
    exit_ = max(iv.check_out for iv in ordered)
    return VisitRecord(
        device=ordered[0].device,
        entry_time=entry,
        exit_time=exit_,
        total_stay=exit_ - entry,
        intervals=ordered,
        unique_nodes=len({iv.node for iv in ordered}),
        total_node_visits=len(ordered),
    )


def split_days(intervals: Sequence[PresenceInterval], tz: str = "UTC"
               ) -> Dict[Tuple[str, dt.date], List[PresenceInterval]]:
    """Group intervals by (device, local calendar day of check-in).

    An interval that straddles midnight belongs to the day it started.
    """
    intervals = list(intervals)
    if not intervals:
        return {}
    days = local_datetimes([iv.check_in for iv in intervals], tz).date
    groups: Dict[Tuple[str, dt.date], List[PresenceInterval]] = {}
    for iv, day in zip(intervals, days):
        groups.setdefault((iv.device, day), []).append(iv)
    return dict(sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])))


def visits_from_intervals(intervals: Sequence[PresenceInterval], tz: str = "UTC"
                          ) -> List[VisitRecord]:
    return [build_visits(group) for group in split_days(intervals, tz).values()]


# -- vectorized table path -------------------------------------------------

def sessionize_frame(events, gap_threshold: float = DEFAULT_GAP) -> pd.DataFrame:
    """Table version of :func:`sessionize` over many devices and nodes at once.

    Returns a frame with ``INTERVAL_COLUMNS`` sorted by device, check-in, node.
    """
    check_positive("gap_threshold", gap_threshold)
    df = check_events_frame(events)
    if df.empty:
        return pd.DataFrame({c: pd.Series(dtype=np.int64 if c.endswith("_s") else object)
                             for c in INTERVAL_COLUMNS})
    dev_codes, dev_labels = pd.factorize(df["device_id"], sort=True)
    node_codes, node_labels = pd.factorize(df["node_id"], sort=True)
    ts = df["timestamp_s"].to_numpy()
    order = np.lexsort((ts, node_codes, dev_codes))
    dev = dev_codes[order]
    node = node_codes[order]
    ts = ts[order]

    new_stream = np.empty(len(ts), dtype=bool)
    new_stream[0] = True
    new_stream[1:] = (dev[1:] != dev[:-1]) | (node[1:] != node[:-1])
    opens = new_stream.copy()
    opens[1:] |= (ts[1:] - ts[:-1]) > gap_threshold

    starts = np.flatnonzero(opens)
    ends = np.append(starts[1:], len(ts)) - 1
    check_in = ts[starts]
    check_out = ts[ends]
    out = pd.DataFrame({
        "device_id": np.asarray(dev_labels)[dev[starts]],
        "node_id": np.asarray(node_labels)[node[starts]],
        "check_in_s": check_in.astype(np.int64),
        "check_out_s": check_out.astype(np.int64),
        "duration_s": (check_out - check_in).astype(np.int64),
    })
    # dev codes follow sorted device labels, so a lexsort on codes is a string sort
    final = np.lexsort((node[starts], check_in, dev[starts]))
    return out.iloc[final].reset_index(drop=True)


def visit_keys(intervals: pd.DataFrame, tz: str = "UTC") -> pd.Series:
    """Label each interval row with its visit: ``device_id`` + local check-in day."""
    days = local_day_index(intervals["check_in_s"].to_numpy(), tz)
    return intervals["device_id"].astype(str) + "@" + pd.Series(days, index=intervals.index).astype(str)


def visits_frame(intervals, tz: str = "UTC") -> pd.DataFrame:
    """Table version of :func:`build_visits` applied to every device-day."""
    df = check_intervals_frame(intervals)
    if df.empty:
        return pd.DataFrame({c: pd.Series(dtype=object if c == "device_id" else np.int64)
                             for c in VISIT_COLUMNS})
    df = df.assign(_day=local_day_index(df["check_in_s"].to_numpy(), tz))
    grouped = df.groupby(["device_id", "_day"], sort=True)
    agg = grouped.agg(entry_s=("check_in_s", "min"), exit_s=("check_out_s", "max"),
                      unique_nodes=("node_id", "nunique"), total_node_visits=("node_id", "size"))
    agg = agg.reset_index()
    agg["total_stay_s"] = agg["exit_s"] - agg["entry_s"]
    agg = agg.sort_values(["entry_s", "device_id"], kind="mergesort").reset_index(drop=True)
    return agg[VISIT_COLUMNS].astype({c: np.int64 for c in VISIT_COLUMNS[1:]})


class Sessionizer(TransformerMixin, BaseEstimator):
    """Transform a sighting table into a presence-interval table.

    Parameters
    ----------
    gap_threshold : float, default=300
        Longest silence, in seconds, that still counts as continuous presence.
    min_duration : int, default=0
        Intervals shorter than this are dropped from the output.
    """

    def __init__(self, gap_threshold=DEFAULT_GAP, min_duration=0):
        self.gap_threshold = gap_threshold
        self.min_duration = min_duration

    def fit(self, X, y=None):
        check_positive("gap_threshold", self.gap_threshold)
        check_positive("min_duration", self.min_duration, allow_zero=True)
        self.is_fitted_ = True
        return self

    def transform(self, X):
        out = sessionize_frame(X, self.gap_threshold)
        if self.min_duration:
            out = out[out["duration_s"] >= self.min_duration].reset_index(drop=True)
        return out

    def __sklearn_is_fitted__(self):
        return getattr(self, "is_fitted_", False)


class VisitBuilder(TransformerMixin, BaseEstimator):
    """Transform a presence-interval table into one row per device-day visit."""

    def __init__(self, tz="UTC"):
        self.tz = tz

    def fit(self, X, y=None):
        self.is_fitted_ = True
        return self

    def transform(self, X):
        return visits_frame(X, self.tz)
