"""Readers and writers for the on-disk table formats.

All files are UTF-8 with Unix newlines.  Event files are CSV with header
``timestamp_s,device_id,node_id,rssi`` or JSONL with the same keys.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pacsv

from .stats import DwellOccupancyCurve, SurvivalCurve
from .trajectory import TransitionMatrix
from .validation import EVENT_COLUMNS, INTERVAL_COLUMNS, VISIT_COLUMNS

logger = logging.getLogger(__name__)

TRUTH_COLUMNS = ["visitor_id", "node_id", "true_in_s", "true_out_s", "activated", "forced_exit"]
_JSONL_SUFFIXES = {".jsonl", ".ndjson"}


@dataclass(frozen=True)
class ReadStats:
    n_records: int
    n_malformed: int

    @property
    def malformed_fraction(self) -> float:
        return self.n_malformed / self.n_records if self.n_records else 0.0


def _arrow_friendly(df: pd.DataFrame) -> bool:
    return all(pd.api.types.is_integer_dtype(t) or pd.api.types.is_object_dtype(t)
               or pd.api.types.is_string_dtype(t) for t in df.dtypes)


def _to_csv(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if len(df) and _arrow_friendly(df):
        # arrow writes large integer/string tables ~10x faster than pandas
        try:
            table = pa.Table.from_pandas(df, preserve_index=False)
            with open(path, "wb") as fh:
                fh.write((",".join(df.columns) + "\n").encode("utf-8"))
                pacsv.write_csv(table, fh, pacsv.WriteOptions(include_header=False,
                                                              quoting_style="none"))
            return path
        except (pa.ArrowInvalid, pa.ArrowTypeError):
            pass  # a value needs quoting, or mixed object column
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


def _empty_events() -> pd.DataFrame:
    return pd.DataFrame({
        "timestamp_s": pd.Series(dtype=np.int64),
        "device_id": pd.Series(dtype=object),
        "node_id": pd.Series(dtype=object),
        "rssi": pd.Series(dtype="Int64"),
    })


# -- events ------------------------------------------------------------------

def write_events(events: pd.DataFrame, path) -> Path:
    path = Path(path)
    df = events[EVENT_COLUMNS]
    if path.suffix in _JSONL_SUFFIXES:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ts, dev, node, rssi in df.itertuples(index=False):
                rec = {"timestamp_s": int(ts), "device_id": dev, "node_id": node,
                       "rssi": None if pd.isna(rssi) else int(rssi)}
                fh.write(json.dumps(rec) + "\n")
        return path
    return _to_csv(df, path)


def _validate_raw_events(raw: pd.DataFrame):
    """Split string columns into a typed frame plus a per-row validity mask."""
    ts_text = raw["timestamp_s"].fillna("").astype(str).str.strip()
    ts = pd.to_numeric(ts_text, errors="coerce")
    rssi_text = raw["rssi"].fillna("").astype(str).str.strip()
    rssi = pd.to_numeric(rssi_text, errors="coerce")
    dev = raw["device_id"].fillna("").astype(str).str.strip()
    node = raw["node_id"].fillna("").astype(str).str.strip()
    valid = (ts.notna() & (ts >= 0) & (ts == np.floor(ts))
             & (dev != "") & (node != "")
             & ((rssi_text == "") | (rssi.notna() & (rssi == np.floor(rssi)))))
    df = pd.DataFrame({
        "timestamp_s": ts[valid].astype(np.int64),
        "device_id": dev[valid],
        "node_id": node[valid],
        "rssi": rssi[valid].astype("Int64"),
    }).reset_index(drop=True)
    return df, valid


def _is_blank(path: Path) -> bool:
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 16):
            if chunk.strip():
                return False
    return True


def _read_arrow(path: Path, typed: bool):
    """Parse with arrow; rows with the wrong field count are skipped and counted."""
    bad = []

    def on_invalid(row):
        bad.append(row.number)
        return "skip"

    if typed:
        types = {"timestamp_s": pa.int64(), "device_id": pa.string(), "node_id": pa.string(),
                 "rssi": pa.int64()}
    else:
        types = {c: pa.string() for c in EVENT_COLUMNS}
    table = pacsv.read_csv(
        path,
        parse_options=pacsv.ParseOptions(invalid_row_handler=on_invalid),
        convert_options=pacsv.ConvertOptions(column_types=types, strings_can_be_null=False,
                                             null_values=[""] if typed else []))
    return table, len(bad)


def _typed_events(table: pa.Table):
    """Typed fast path; ``None`` when any row would need the lenient validator."""
    if table.column_names != EVENT_COLUMNS:
        return None
    ts = table["timestamp_s"]
    if ts.null_count or pc.any(pc.less(ts, 0)).as_py():
        return None
    for col in ("device_id", "node_id"):
        v = table[col]
        trimmed = pc.utf8_length(pc.utf8_trim_whitespace(v))
        if pc.any(pc.not_equal(trimmed, pc.utf8_length(v))).as_py() or \
                pc.any(pc.equal(trimmed, 0)).as_py():
            return None
    df = table.to_pandas()
    df["rssi"] = df["rssi"].astype("Int64")
    return df


def read_events(path):
    """Read an event file, skipping malformed records.

    Returns ``(events, ReadStats)``.  A missing header or unreadable file
    raises ``ValueError``/``OSError``.
    """
    path = Path(path)
    if path.suffix in _JSONL_SUFFIXES:
        return _read_events_jsonl(path)
    if _is_blank(path):
        return _empty_events(), ReadStats(0, 0)
    df = None
    try:
        table, skipped = _read_arrow(path, typed=True)
        df = _typed_events(table)
    except pa.ArrowInvalid:
        pass
    if df is not None:
        n_records = len(df) + skipped
        valid_count = len(df)
    else:
        try:
            table, skipped = _read_arrow(path, typed=False)
        except pa.ArrowInvalid as exc:
            raise ValueError(f"{path}: {exc}") from None
        raw = table.to_pandas()
        raw.columns = [c.strip() for c in raw.columns]
        missing = [c for c in EVENT_COLUMNS[:3] if c not in raw.columns]
        if missing:
            raise ValueError(f"{path}: header lacks columns {missing}")
        if "rssi" not in raw.columns:
            raw["rssi"] = ""
        n_records = len(raw) + skipped
        df, valid = _validate_raw_events(raw)
        valid_count = int(valid.sum())
    n_bad = n_records - valid_count
    if n_bad:
        logger.warning("%s: %d of %d records malformed", path, n_bad, n_records)
    return df, ReadStats(n_records, n_bad)


def _read_events_jsonl(path: Path):
    rows, n_records, n_bad = [], 0, 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            n_records += 1
            try:
                rec = json.loads(line)
                rows.append((rec["timestamp_s"], rec["device_id"], rec["node_id"], rec.get("rssi")))
            except (json.JSONDecodeError, KeyError, TypeError):
                n_bad += 1
    if not rows:
        return _empty_events(), ReadStats(n_records, n_bad)
    raw = pd.DataFrame(rows, columns=EVENT_COLUMNS).astype(object)
    raw = raw.where(raw.notna(), "")
    df, valid = _validate_raw_events(raw.astype(str))
    n_bad += int((~valid).sum())
    return df, ReadStats(n_records, n_bad)


# -- intervals, visits, truth --------------------------------------------------

def write_intervals(intervals: pd.DataFrame, path) -> Path:
    return _to_csv(intervals[INTERVAL_COLUMNS], path)


def read_intervals(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"device_id": str, "node_id": str, "check_in_s": np.int64,
                                    "check_out_s": np.int64, "duration_s": np.int64},
                       keep_default_na=False)[INTERVAL_COLUMNS]


def write_visits(visits: pd.DataFrame, path) -> Path:
    return _to_csv(visits[VISIT_COLUMNS], path)


def read_visits(path) -> pd.DataFrame:
    dtypes = {c: np.int64 for c in VISIT_COLUMNS[1:]}
    dtypes["device_id"] = str
    return pd.read_csv(path, dtype=dtypes, keep_default_na=False)[VISIT_COLUMNS]


def write_truth(truth_frame: pd.DataFrame, path) -> Path:
    return _to_csv(truth_frame[TRUTH_COLUMNS], path)


def read_truth(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"visitor_id": np.int64, "node_id": str,
                                    "true_in_s": np.int64, "true_out_s": np.int64,
                                    "activated": np.int64, "forced_exit": np.int64},
                       keep_default_na=False)[TRUTH_COLUMNS]


# -- transition matrices ---------------------------------------------------------

def _counts_path(path: Path) -> Path:
    return path.with_name(path.stem + "_counts" + path.suffix)


def write_transition_matrix(tm: TransitionMatrix, path) -> tuple:
    """Write probabilities (6 decimals) to ``path`` and integer counts next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(tm.nodes)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in tm.probabilities:
            fh.write(",".join(f"{p:.6f}" for p in row) + "\n")
    cpath = _counts_path(path)
    with open(cpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in tm.counts:
            fh.write(",".join(str(int(c)) for c in row) + "\n")
    return path, cpath


def read_transition_matrix(path) -> TransitionMatrix:
    """Rebuild a matrix from the counts file that accompanies ``path``."""
    path = Path(path)
    cpath = _counts_path(path)
    df = pd.read_csv(cpath if cpath.exists() else path, dtype=str, keep_default_na=False)
    nodes = tuple(df.columns)
    if cpath.exists():
        return TransitionMatrix.from_counts(nodes, df.to_numpy(dtype=np.int64))
    probs = df.to_numpy(dtype=float)
    return TransitionMatrix(nodes, np.zeros(probs.shape, dtype=np.int64), probs)


# -- curves ----------------------------------------------------------------------

def write_dwell_curve(curve: DwellOccupancyCurve, path) -> Path:
    df = pd.DataFrame({"occupancy_bin": curve.occupancy_bins, "mean_dwell_s": curve.mean_dwell,
                       "sample_count": curve.sample_counts})
    return _to_csv(df, path)


def read_dwell_curve(path) -> DwellOccupancyCurve:
    df = pd.read_csv(path, float_precision="round_trip")
    return DwellOccupancyCurve(df["occupancy_bin"].to_numpy(float), df["mean_dwell_s"].to_numpy(float),
                               df["sample_count"].to_numpy(np.int64))


def write_survival_curve(curve: SurvivalCurve, path) -> Path:
    df = pd.DataFrame({"time_s": curve.times, "fraction_remaining": curve.fraction_remaining})
    return _to_csv(df, path)


def read_survival_curve(path) -> SurvivalCurve:
    df = pd.read_csv(path, float_precision="round_trip")
    times = df["time_s"].to_numpy(float)
    frac = df["fraction_remaining"].to_numpy(float)
    step = float(times[1] - times[0]) if len(times) > 1 else 0.0
    median_exit = float(times[np.argmax(frac < 0.5)])
    return SurvivalCurve(times, frac, median_exit, step)
