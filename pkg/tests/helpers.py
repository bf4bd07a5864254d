"""Small table builders shared by the tests."""

import numpy as np
import pandas as pd


def intervals_df(rows):
    """rows of (device, node, check_in, check_out) -> interval table."""
    df = pd.DataFrame(rows, columns=["device_id", "node_id", "check_in_s", "check_out_s"])
    df["duration_s"] = df["check_out_s"] - df["check_in_s"]
    return df.astype({"check_in_s": np.int64, "check_out_s": np.int64, "duration_s": np.int64})


def events_df(rows):
    """rows of (timestamp, device, node) -> sighting table."""
    df = pd.DataFrame(rows, columns=["timestamp_s", "device_id", "node_id"])
    df["rssi"] = pd.array([pd.NA] * len(df), dtype="Int64")
    return df.astype({"timestamp_s": np.int64})


# 2010-04-05 is a Monday
MONDAY = 1270425600
