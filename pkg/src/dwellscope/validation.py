"""Input validation helpers.

The estimators accept either domain objects (lists of dataclasses) or
column-oriented ``pandas.DataFrame`` tables.  These helpers coerce both to a
canonical frame with fixed column names and dtypes.
"""

from __future__ import annotations

import numbers

import numpy as np
import pandas as pd

EVENT_COLUMNS = ["timestamp_s", "device_id", "node_id", "rssi"]
INTERVAL_COLUMNS = ["device_id", "node_id", "check_in_s", "check_out_s", "duration_s"]
VISIT_COLUMNS = ["device_id", "entry_s", "exit_s", "total_stay_s", "unique_nodes",
                 "total_node_visits"]


def check_positive(name, value, allow_zero=False):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or np.isnan(value):
        raise ValueError(f"{name} must be a real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return value


def check_fraction(name, value, closed=False):
    lo_ok = value >= 0 if closed else value > 0
    hi_ok = value <= 1 if closed else value < 1
    if not (lo_ok and hi_ok):
        interval = "[0, 1]" if closed else "(0, 1)"
        raise ValueError(f"{name} must lie in {interval}, got {value!r}")
    return value


def _require_columns(df, columns, what):
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ValueError(f"{what} table is missing columns {missing}")


def check_events_frame(events) -> pd.DataFrame:
    """Coerce sightings to a frame with columns ``EVENT_COLUMNS``."""
    if isinstance(events, pd.DataFrame):
        df = events
        if "rssi" not in df.columns:
            df = df.assign(rssi=pd.array([pd.NA] * len(df), dtype="Int64"))
        _require_columns(df, EVENT_COLUMNS, "events")
    else:
        rows = [(e.timestamp, e.device, e.node, e.rssi) for e in events]
        df = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    df = df[EVENT_COLUMNS].copy()
    df["timestamp_s"] = df["timestamp_s"].astype(np.int64)
    df["device_id"] = df["device_id"].astype(str)
    df["node_id"] = df["node_id"].astype(str)
    df["rssi"] = df["rssi"].astype("Int64")
    if len(df) and df["timestamp_s"].min() < 0:
        raise ValueError("timestamps must be non-negative")
    return df


def check_intervals_frame(intervals) -> pd.DataFrame:
    """Coerce presence intervals to a frame with columns ``INTERVAL_COLUMNS``."""
    if isinstance(intervals, pd.DataFrame):
        df = intervals
        if "duration_s" not in df.columns and {"check_in_s", "check_out_s"} <= set(df.columns):
            df = df.assign(duration_s=df["check_out_s"] - df["check_in_s"])
        _require_columns(df, INTERVAL_COLUMNS, "intervals")
        df = df[INTERVAL_COLUMNS].copy()
    else:
        rows = [(iv.device, iv.node, iv.check_in, iv.check_out, iv.duration) for iv in intervals]
        df = pd.DataFrame(rows, columns=INTERVAL_COLUMNS)
    for col in ("check_in_s", "check_out_s", "duration_s"):
        df[col] = df[col].astype(np.int64)
    df["device_id"] = df["device_id"].astype(str)
    df["node_id"] = df["node_id"].astype(str)
    if len(df):
        if (df["check_out_s"] < df["check_in_s"]).any():
            raise ValueError("every interval needs check_in <= check_out")
        if (df["duration_s"] != df["check_out_s"] - df["check_in_s"]).any():
            raise ValueError("duration_s must equal check_out_s - check_in_s")
    return df


def check_visits_frame(visits) -> pd.DataFrame:
    """Coerce visit records to a frame with columns ``VISIT_COLUMNS``."""
    if isinstance(visits, pd.DataFrame):
        _require_columns(visits, VISIT_COLUMNS, "visits")
        df = visits[VISIT_COLUMNS].copy()
    else:
        rows = [(v.device, v.entry_time, v.exit_time, v.total_stay, v.unique_nodes,
                 v.total_node_visits) for v in visits]
        df = pd.DataFrame(rows, columns=VISIT_COLUMNS)
    for col in VISIT_COLUMNS[1:]:
        df[col] = df[col].astype(np.int64)
    df["device_id"] = df["device_id"].astype(str)
    return df
