"""Seeded discrete-event simulator of museum visitors and their Bluetooth sightings.

Visitors enter at the entrance node following a piecewise-constant Poisson
arrival profile, move between sensed nodes along a Markov routing chain, and
linger at each node for a log-normal time scaled by how crowded the node is
on arrival.  The museum closes at a fixed local time and everybody still
inside leaves at once.  Activated devices are polled at a fixed interval.
"""

from __future__ import annotations

import bisect
import dataclasses
import datetime as dt
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from .core import DEFAULT_NODES, anonymize_device, day_group
from .exceptions import ClosedDay, ConfigError

EXIT = "EXIT"

# Median stays per node in seconds: the entrance hall and the Samothrace
# staircase are long (queues, resting); V/C/B around 3 min, D/P/G under 1 min.
_DEFAULT_DWELL = {
    "E": (989.0, 0.6), "S": (1143.0, 0.6),
    "V": (182.0, 0.7), "C": (182.0, 0.7), "B": (182.0, 0.7),
    "D": (44.0, 0.7), "G": (44.0, 0.7), "P": (46.0, 0.38),
}

_DEFAULT_CROWD = {
    "D": (0.235, 0.636, 0.4), "V": (0.235, 0.781, 0.4), "C": (0.221, 0.753, 0.4),
    "P": (0.214, 0.764, 0.4), "B": (0.238, 0.772, 0.4), "G": (0.267, 0.657, 0.4),
    "E": (0.25, 0.75, 0.4), "S": (0.25, 0.75, 0.4),
}

_DEFAULT_ROUTING = {
    "E": {"D": 0.30, "P": 0.30, "S": 0.20, "B": 0.15, EXIT: 0.05},
    "D": {"S": 0.40, "V": 0.25, "B": 0.20, "E": 0.10, EXIT: 0.05},
    "V": {"C": 0.35, "G": 0.25, "D": 0.20, "P": 0.10, EXIT: 0.10},
    "C": {"V": 0.30, "G": 0.30, "P": 0.25, EXIT: 0.15},
    "P": {"V": 0.40, "D": 0.30, "E": 0.20, EXIT: 0.10},
    "B": {"S": 0.45, "D": 0.30, "E": 0.15, EXIT: 0.10},
    "S": {"B": 0.40, "D": 0.30, "V": 0.20, EXIT: 0.10},
    "G": {"C": 0.40, "V": 0.35, "E": 0.15, EXIT: 0.10},
}

_DEFAULT_EARLY_RATES = {h: 60.0 for h in range(9, 18)}
# LateClose days: morning maximizers plus an evening wave.
_DEFAULT_LATE_RATES = {9: 80.0, 10: 80.0, 11: 60.0, 12: 40.0, 13: 40.0, 14: 40.0, 15: 50.0,
                       16: 60.0, 17: 80.0, 18: 80.0, 19: 60.0, 20: 30.0}


def _copy(d):
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()}


@dataclass
class SimConfig:
    """Simulator parameters.  Field names double as the JSON config keys."""

    nodes: Tuple[str, ...] = DEFAULT_NODES
    entry_node: str = "E"
    start_date: str = "2010-04-05"
    n_days: int = 1
    timezone: str = "UTC"
    opening: str = "09:00"
    closing: Optional[str] = None
    hourly_arrival_rates: Dict[int, float] = field(default_factory=lambda: dict(_DEFAULT_EARLY_RATES))
    late_arrival_rates: Optional[Dict[int, float]] = field(
        default_factory=lambda: dict(_DEFAULT_LATE_RATES))
    routing: Dict[str, Dict[str, float]] = field(default_factory=lambda: _copy(_DEFAULT_ROUTING))
    dwell_params: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(_DEFAULT_DWELL))
    crowd_response: Dict[str, Tuple[float, float, float]] = field(
        default_factory=lambda: dict(_DEFAULT_CROWD))
    capacity: Dict[str, int] = field(default_factory=lambda: {n: 20 for n in DEFAULT_NODES})
    visit_budget: Optional[Tuple[float, float]] = (7200.0, 0.5)
    admission_control: bool = False
    activation_prob: float = 0.082
    poll_interval: int = 10
    detection_prob: float = 1.0
    travel_time: Dict[str, Dict[str, float]] = field(default_factory=dict)
    default_travel_time: float = 300.0
    salt: str = "dwellscope"
    seed: int = 0

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        try:
            for key in ("hourly_arrival_rates", "late_arrival_rates"):
                if kw.get(key) is not None:
                    kw[key] = {int(h): float(r) for h, r in kw[key].items()}
            if "nodes" in kw:
                kw["nodes"] = tuple(kw["nodes"])
            for key in ("dwell_params", "crowd_response"):
                if key in kw:
                    kw[key] = {n: tuple(float(x) for x in v) for n, v in kw[key].items()}
            if kw.get("visit_budget") is not None:
                kw["visit_budget"] = tuple(float(x) for x in kw["visit_budget"])
            if isinstance(kw.get("capacity"), (int, float)):
                nodes = kw.get("nodes", DEFAULT_NODES)
                kw["capacity"] = {n: kw["capacity"] for n in nodes}
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"malformed config value: {exc}") from exc
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["nodes"] = list(self.nodes)
        for key in ("hourly_arrival_rates", "late_arrival_rates"):
            if d[key] is not None:
                d[key] = {str(h): r for h, r in sorted(d[key].items())}
        d["dwell_params"] = {n: list(v) for n, v in d["dwell_params"].items()}
        d["crowd_response"] = {n: list(v) for n, v in d["crowd_response"].items()}
        if d["visit_budget"] is not None:
            d["visit_budget"] = list(d["visit_budget"])
        return d

    def with_overrides(self, **changes) -> "SimConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        def fail(msg):
            raise ConfigError(msg)

        nodes = tuple(self.nodes)
        if not nodes or len(set(nodes)) != len(nodes) or any(not n for n in nodes):
            fail("nodes must be non-empty, unique labels")
        if EXIT in nodes:
            fail(f"{EXIT!r} is reserved for the absorbing exit state")
        if self.entry_node not in nodes:
            fail(f"entry_node {self.entry_node!r} is not a deployment node")
        if not isinstance(self.n_days, int) or self.n_days < 1:
            fail("n_days must be a positive integer")
        try:
            dt.date.fromisoformat(self.start_date)
            ZoneInfo(self.timezone)
            open_t = _parse_clock(self.opening)
            if self.closing is not None:
                close_t = _parse_clock(self.closing)
                if close_t <= open_t:
                    fail("closing must be after opening")
        except ConfigError:
            raise
        except Exception as exc:
            fail(f"bad date/time setting: {exc}")
        for key in ("hourly_arrival_rates", "late_arrival_rates"):
            rates = getattr(self, key)
            if rates is None:
                continue
            for h, r in rates.items():
                if not 0 <= int(h) <= 23:
                    fail(f"{key}: hour {h} outside 0..23")
                if not r >= 0:
                    fail(f"{key}: rate for hour {h} must be >= 0")
        if not 0 <= self.activation_prob <= 1:
            fail("activation_prob must lie in [0, 1]")
        if not 0 < self.detection_prob <= 1:
            fail("detection_prob must lie in (0, 1]")
        if not self.poll_interval > 0:
            fail("poll_interval must be > 0")
        if not self.default_travel_time >= 0:
            fail("default_travel_time must be >= 0")
        for n in nodes:
            row = self.routing.get(n)
            if row is None:
                fail(f"routing has no row for node {n!r}")
            for target, p in row.items():
                if target != EXIT and target not in nodes:
                    fail(f"routing {n}->{target}: unknown node")
                if p < 0:
                    fail(f"routing {n}->{target}: negative probability")
            if abs(sum(row.values()) - 1.0) > 1e-9:
                fail(f"routing row {n!r} sums to {sum(row.values())}, not 1")
            if n not in self.dwell_params:
                fail(f"dwell_params missing node {n!r}")
            median, sigma = self.dwell_params[n]
            if not median > 0 or not sigma >= 0:
                fail(f"dwell_params {n!r}: need median > 0 and dispersion >= 0")
            if n not in self.crowd_response:
                fail(f"crowd_response missing node {n!r}")
            x_rise, z_fall, floor = self.crowd_response[n]
            if not 0 < x_rise <= z_fall <= 1:
                fail(f"crowd_response {n!r}: need 0 < x_rise <= z_fall <= 1")
            if not 0 <= floor <= 1:
                fail(f"crowd_response {n!r}: floor must lie in [0, 1]")
            if not self.capacity.get(n, 0) > 0:
                fail(f"capacity for node {n!r} must be > 0")
        for src, row in self.travel_time.items():
            for dst, t in row.items():
                if src not in nodes or dst not in nodes:
                    fail(f"travel_time {src}->{dst}: unknown node")
                if not t >= 0:
                    fail(f"travel_time {src}->{dst} must be >= 0")
        if self.visit_budget is not None:
            median, sigma = self.visit_budget
            if not median > 0 or not sigma >= 0:
                fail("visit_budget needs median > 0 and dispersion >= 0")
        if not self.salt:
            fail("salt must be non-empty")


def _parse_clock(text: str) -> dt.time:
    return dt.time.fromisoformat(text)


def crowd_multiplier(occupancy: float, x_rise: float, z_fall: float, floor: float) -> float:
    """Trapezoid dwell multiplier: ramps floor->1 on [0, x_rise], holds 1 up to
    z_fall, then falls linearly back to floor at occupancy 1."""
    if occupancy <= x_rise:
        return floor + (1.0 - floor) * occupancy / x_rise
    if occupancy <= z_fall or z_fall >= 1.0:
        return 1.0
    return 1.0 - (1.0 - floor) * (occupancy - z_fall) / (1.0 - z_fall)


class SimState:
    """Mutable crowd state of a running simulation."""

    def __init__(self, nodes, capacity):
        self.nodes = tuple(nodes)
        self.capacity = {n: capacity[n] for n in self.nodes}
        self.counts = {n: 0 for n in self.nodes}
        self.present: Dict[int, Tuple[str, int]] = {}

    def enter(self, visitor, node, t):
        self.counts[node] += 1
        self.present[visitor] = (node, t)

    def leave(self, visitor):
        node, t_in = self.present.pop(visitor)
        self.counts[node] -= 1
        return node, t_in

    def occupancy_now(self, node) -> float:
        return min(self.counts[node] / self.capacity[node], 1.0)


def occupancy_now(state: SimState, node: str) -> float:
    """Visitors currently at ``node`` over its capacity, clamped to [0, 1]."""
    return state.occupancy_now(node)


@dataclass
class GroundTruth:
    """What really happened in a simulation run.

    ``visitors`` has one row per visitor; ``intervals`` one row per true stay
    at a node, ordered by visitor then check-in.
    """

    visitors: pd.DataFrame
    intervals: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        """Rows for the truth CSV: one per true interval."""
        flags = self.visitors.set_index("visitor_id")[["activated", "forced_exit"]]
        df = self.intervals.join(flags, on="visitor_id")
        df = df.astype({"activated": int, "forced_exit": int})
        return df[["visitor_id", "node_id", "true_in_s", "true_out_s", "activated", "forced_exit"]]

    def activated_intervals(self) -> pd.DataFrame:
        act = self.visitors.loc[self.visitors["activated"], "visitor_id"]
        return self.intervals[self.intervals["visitor_id"].isin(act)]


_DEPART, _ARRIVE = 0, 1


def _open_days(cfg: SimConfig) -> List[dt.date]:
    days, d = [], dt.date.fromisoformat(cfg.start_date)
    while len(days) < cfg.n_days:
        try:
            day_group(d)
        except ClosedDay:
            pass
        else:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def _epoch(day: dt.date, clock: dt.time, tz: ZoneInfo) -> int:
    return int(dt.datetime.combine(day, clock, tzinfo=tz).timestamp())


def _device_ids(n_visitors: int, salt: str) -> List[str]:
    salt_b = salt.encode("utf-8")
    out = []
    for v in range(n_visitors):
        raw = (0x02 << 40) | v  # locally administered unicast prefix
        mac = ":".join(f"{(raw >> s) & 0xFF:02X}" for s in range(40, -1, -8))
        out.append(anonymize_device(mac, salt_b))
    return out


class _Day:
    """Event loop of one museum day."""

    def __init__(self, cfg, py_rng, node_tables):
        self.cfg = cfg
        self.rng = py_rng
        self.tables = node_tables
        self.state = SimState(cfg.nodes, cfg.capacity)

    def run(self, arrivals, budgets, first_id, close_at, sink):
        """Play one day; appends (visitor, node, in, out) to ``sink`` and
        returns the set of visitors still inside at closing."""
        cfg, rng, state, tables = self.cfg, self.rng, self.state, self.tables
        forced = set()
        heap = [(int(t), k, _ARRIVE, first_id + k, cfg.entry_node)
                for k, t in enumerate(arrivals)]
        heapq.heapify(heap)
        seq = len(heap)
        entry_time = {first_id + k: int(t) for k, t in enumerate(arrivals)}

        while heap and heap[0][0] < close_at:
            t, _, kind, v, node = heapq.heappop(heap)
            mu, sigma, x_rise, z_fall, floor, cum, targets, travel = tables[node]
            if kind == _ARRIVE:
                full = cfg.admission_control and state.counts[node] >= state.capacity[node]
                if not full:
                    state.enter(v, node, t)
                    mult = crowd_multiplier(state.occupancy_now(node), x_rise, z_fall, floor)
                    dwell = int(round(math.exp(mu + sigma * rng.gauss(0.0, 1.0)) * mult))
                    heapq.heappush(heap, (t + dwell, seq, _DEPART, v, node))
                    seq += 1
                    continue
                # a full node is walked past without stopping
            else:
                _, t_in = state.leave(v)
                sink.append((v, node, t_in, t))

            nxt = targets[bisect.bisect_right(cum, rng.random() * cum[-1])]
            budget = budgets[v - first_id]
            if nxt == EXIT or (budget is not None and t - entry_time[v] >= budget):
                continue
            arrive = t + travel[nxt]
            if budget is not None and arrive - entry_time[v] >= budget:
                continue
            if arrive >= close_at:
                forced.add(v)
                continue
            heapq.heappush(heap, (arrive, seq, _ARRIVE, v, nxt))
            seq += 1

        for v in sorted(state.present):
            node, t_in = state.leave(v)
            sink.append((v, node, t_in, close_at))
            forced.add(v)
        return forced


def _node_tables(cfg: SimConfig):
    tables = {}
    for n in cfg.nodes:
        median, sigma = cfg.dwell_params[n]
        x_rise, z_fall, floor = cfg.crowd_response[n]
        targets = [t for t, p in cfg.routing[n].items() if p > 0]
        cum = list(np.cumsum([cfg.routing[n][t] for t in targets]))
        travel = {m: int(round(cfg.travel_time.get(n, {}).get(m, cfg.default_travel_time)))
                  for m in cfg.nodes}
        tables[n] = (math.log(median), sigma, x_rise, z_fall, floor, cum, targets, travel)
    return tables


def _arrival_times(np_rng, rates, open_at, close_at, midnight):
    """Piecewise-constant Poisson arrivals, integer seconds, sorted."""
    chunks = []
    for hour in sorted(rates):
        lo = max(midnight + hour * 3600, open_at)
        hi = min(midnight + (hour + 1) * 3600, close_at)
        if hi <= lo or rates[hour] <= 0:
            continue
        n = np_rng.poisson(rates[hour] * (hi - lo) / 3600.0)
        chunks.append(np.floor(np_rng.uniform(lo, hi, size=n)).astype(np.int64))
    if not chunks:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(chunks))


def simulate(config: SimConfig) -> Tuple[pd.DataFrame, GroundTruth]:
    """Run the simulator.

    Returns the sighting table (``timestamp_s, device_id, node_id, rssi``,
    sorted by time) and the ground truth.  The same config, seed included,
    always yields identical outputs.
    """
    config.validate()
    cfg = config
    tz = ZoneInfo(cfg.timezone)
    py_rng = random.Random(cfg.seed)
    np_rng = np.random.default_rng(cfg.seed)
    tables = _node_tables(cfg)
    open_clock = _parse_clock(cfg.opening)

    sink: List[tuple] = []
    arrival_all, forced_all, budget_all = [], set(), []
    next_id = 0
    for day in _open_days(cfg):
        group = day_group(day)
        close_clock = _parse_clock(cfg.closing) if cfg.closing else group.closing
        midnight = _epoch(day, dt.time(0, 0), tz)
        open_at = _epoch(day, open_clock, tz)
        close_at = _epoch(day, close_clock, tz)
        rates = cfg.hourly_arrival_rates
        if group.value == "LateClose" and cfg.late_arrival_rates is not None:
            rates = cfg.late_arrival_rates
        arrivals = _arrival_times(np_rng, rates, open_at, close_at, midnight)
        if cfg.visit_budget is None:
            budgets = [None] * len(arrivals)
        else:
            mu, sigma = math.log(cfg.visit_budget[0]), cfg.visit_budget[1]
            budgets = [math.exp(mu + sigma * py_rng.gauss(0.0, 1.0)) for _ in arrivals]
        forced_all |= _Day(cfg, py_rng, tables).run(arrivals, budgets, next_id, close_at, sink)
        arrival_all.append(arrivals)
        budget_all.extend(budgets)
        next_id += len(arrivals)

    n_visitors = next_id
    arrival = np.concatenate(arrival_all) if arrival_all else np.zeros(0, dtype=np.int64)
    activated = np_rng.random(n_visitors) < cfg.activation_prob
    devices = np.array(_device_ids(n_visitors, cfg.salt), dtype=object)
    forced = np.zeros(n_visitors, dtype=bool)
    forced[list(forced_all)] = True
    visitors = pd.DataFrame({
        "visitor_id": np.arange(n_visitors, dtype=np.int64),
        "device_id": devices,
        "arrival_s": arrival,
        "budget_s": np.array([np.nan if b is None else b for b in budget_all], dtype=float),
        "activated": activated,
        "forced_exit": forced,
    })

    if sink:
        vis, node, t_in, t_out = zip(*sink)
    else:
        vis, node, t_in, t_out = (), (), (), ()
    iv = pd.DataFrame({
        "visitor_id": np.asarray(vis, dtype=np.int64),
        "node_id": np.asarray(node, dtype=object),
        "true_in_s": np.asarray(t_in, dtype=np.int64),
        "true_out_s": np.asarray(t_out, dtype=np.int64),
    })
    iv = iv.sort_values(["visitor_id", "true_in_s"], kind="mergesort").reset_index(drop=True)
    iv.insert(1, "device_id", devices[iv["visitor_id"].to_numpy()] if len(iv) else
              np.zeros(0, dtype=object))
    truth = GroundTruth(visitors, iv)
    return _emit_sightings(cfg, np_rng, truth, devices), truth


def _emit_sightings(cfg, np_rng, truth, devices) -> pd.DataFrame:
    iv = truth.intervals
    act = truth.visitors["activated"].to_numpy()
    iv = iv[act[iv["visitor_id"].to_numpy()]] if len(iv) else iv
    t_in = iv["true_in_s"].to_numpy()
    t_out = iv["true_out_s"].to_numpy()
    n_polls = (t_out - t_in) // cfg.poll_interval + 1
    rows = np.repeat(np.arange(len(iv)), n_polls)
    starts = np.repeat(np.cumsum(n_polls) - n_polls, n_polls)
    k = np.arange(len(rows)) - starts
    ts = t_in[rows] + k * cfg.poll_interval
    if cfg.detection_prob < 1.0:
        keep = np_rng.random(len(rows)) < cfg.detection_prob
        rows, ts = rows[keep], ts[keep]
    visitor = iv["visitor_id"].to_numpy()[rows]
    node_codes, node_labels = pd.factorize(iv["node_id"].to_numpy()[rows], sort=True)
    order = np.lexsort((node_codes, visitor, ts))
    return pd.DataFrame({
        "timestamp_s": ts[order].astype(np.int64),
        "device_id": devices[visitor[order]],
        "node_id": np.asarray(node_labels, dtype=object)[node_codes[order]],
        "rssi": pd.array([pd.NA] * len(order), dtype="Int64"),
    })
