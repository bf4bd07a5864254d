"""Node sequences, travel times and node-to-node transition estimates."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DEFAULT_NODES
from .exceptions import NoSamples
from .sessionize import VisitRecord, visit_keys
from .validation import check_intervals_frame


class Step(NamedTuple):
    node: str
    check_in: int
    check_out: int


@dataclass(frozen=True)
class Trajectory:
    """Ordered node steps of one visit.

    ``travel_times[i]`` is the time from leaving step ``i`` to checking in at
    step ``i + 1``; it is negative when the two detections overlap, in which
    case ``overlaps[i]`` is set.
    """

    device: str
    steps: Tuple[Step, ...]
    travel_times: Tuple[int, ...]
    overlaps: Tuple[bool, ...]

    @property
    def nodes(self) -> Tuple[str, ...]:
        return tuple(s.node for s in self.steps)


@dataclass(frozen=True)
class TravelTimeSummary:
    min: float
    median: float
    mean: float
    max: float
    n: int
    n_excluded: int


@dataclass
class TransitionMatrix:
    nodes: Tuple[str, ...]
    counts: np.ndarray
    probabilities: np.ndarray

    @classmethod
    def from_counts(cls, nodes, counts) -> "TransitionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        row = counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = np.where(row > 0, counts / np.where(row > 0, row, 1), 0.0)
        return cls(tuple(nodes), counts, probs)

    def merge(self, other: "TransitionMatrix") -> "TransitionMatrix":
        """Elementwise sum of counts; node orders must agree."""
        if tuple(other.nodes) != tuple(self.nodes):
            raise ValueError("cannot merge matrices over different node orders")
        return TransitionMatrix.from_counts(self.nodes, self.counts + other.counts)

    @property
    def self_transitions(self) -> dict:
        return {n: int(c) for n, c in zip(self.nodes, np.diag(self.counts))}

    def without_self_transitions(self) -> "TransitionMatrix":
        counts = self.counts.copy()
        np.fill_diagonal(counts, 0)
        return TransitionMatrix.from_counts(self.nodes, counts)

    def probability(self, source: str, target: str) -> float:
        i, j = self.nodes.index(source), self.nodes.index(target)
        return float(self.probabilities[i, j])


def build_trajectory(visit: VisitRecord) -> Trajectory:
    """Order a visit's intervals by check-in (ties by node label)."""
    if not visit.intervals:
        raise ValueError("visit has no intervals")
    steps = tuple(sorted((Step(iv.node, iv.check_in, iv.check_out) for iv in visit.intervals),
                         key=lambda s: (s.check_in, s.node, s.check_out)))
    travel = tuple(b.check_in - a.check_out for a, b in zip(steps, steps[1:]))
    return Trajectory(visit.device, steps, travel, tuple(t < 0 for t in travel))


def _resolve_nodes(seen: Iterable[str], nodes: Optional[Sequence[str]]) -> Tuple[str, ...]:
    if nodes is not None:
        return tuple(nodes)
    seen = set(seen)
    if seen <= set(DEFAULT_NODES):
        return DEFAULT_NODES
    return tuple(sorted(seen))


def transition_matrix(trajectories: Iterable[Trajectory],
                      nodes: Optional[Sequence[str]] = None) -> TransitionMatrix:
    """Count consecutive node pairs over all trajectories and row-normalize.

    Self-transitions are counted; rows without any outgoing step stay zero.
    """
    pairs = []
    seen = set()
    for traj in trajectories:
        seq = traj.nodes
        seen.update(seq)
        pairs.extend(zip(seq, seq[1:]))
    order = _resolve_nodes(seen, nodes)
    index = {n: i for i, n in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    for a, b in pairs:
        counts[index[a], index[b]] += 1
    return TransitionMatrix.from_counts(order, counts)


def transition_counts_frame(intervals, nodes: Optional[Sequence[str]] = None,
                            tz: str = "UTC") -> TransitionMatrix:
    """Transition matrix straight from an interval table, one trajectory per device-day."""
    df = check_intervals_frame(intervals)
    order = _resolve_nodes(df["node_id"].unique(), nodes)
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    if df.empty:
        return TransitionMatrix.from_counts(order, counts)
    key_codes, _ = pd.factorize(visit_keys(df, tz))
    node_codes = pd.Categorical(df["node_id"], categories=list(order)).codes
    if (node_codes < 0).any():
        raise ValueError("intervals reference nodes outside the requested node order")
    srt = np.lexsort((df["check_out_s"].to_numpy(), node_codes,
                      df["check_in_s"].to_numpy(), key_codes))
    k = key_codes[srt]
    n = node_codes[srt]
    same = k[1:] == k[:-1]
    np.add.at(counts, (n[:-1][same], n[1:][same]), 1)
    return TransitionMatrix.from_counts(order, counts)


def travel_time_stats(trajectories: Iterable[Trajectory], source: str, target: str
                      ) -> TravelTimeSummary:
    """Summary of travel times for consecutive ``source -> target`` steps.

    Negative (overlapping) samples are excluded and counted.
    """
    samples, excluded = [], 0
    for traj in trajectories:
        for a, b, t in zip(traj.steps, traj.steps[1:], traj.travel_times):
            if a.node == source and b.node == target:
                if t < 0:
                    excluded += 1
                else:
                    samples.append(t)
    if not samples:
        raise NoSamples(f"no non-negative travel times for {source}->{target} "
                        f"({excluded} overlapping samples excluded)", excluded=excluded)
    return TravelTimeSummary(min(samples), statistics.median(samples),
                             statistics.fmean(samples), max(samples), len(samples), excluded)


class TransitionMatrixEstimator(BaseEstimator):
    """Estimate node-to-node flow from trajectories or an interval table.

    Parameters
    ----------
    nodes : sequence of str, optional
        Row/column order. Defaults to the standard eight-node deployment when
        every observed node belongs to it.
    include_self : bool, default=True
        Whether consecutive repeats of a node count as transitions.
    tz : str, default="UTC"
        Time zone used to split interval tables into museum days.
    """

    def __init__(self, nodes=None, include_self=True, tz="UTC"):
        self.nodes = nodes
        self.include_self = include_self
        self.tz = tz

    def fit(self, X, y=None):
        if isinstance(X, pd.DataFrame):
            tm = transition_counts_frame(X, self.nodes, self.tz)
        else:
            tm = transition_matrix(X, self.nodes)
        self.self_transitions_ = tm.self_transitions
        if not self.include_self:
            tm = tm.without_self_transitions()
        self.transition_matrix_ = tm
        self.nodes_ = tm.nodes
        self.counts_ = tm.counts
        self.probabilities_ = tm.probabilities
        return self

    def predict(self, X):
        """Most likely next node for each current node in ``X`` (None for dead ends)."""
        check_is_fitted(self)
        out = []
        for node in X:
            i = self.nodes_.index(node)
            row = self.probabilities_[i]
            out.append(self.nodes_[int(np.argmax(row))] if row.sum() > 0 else None)
        return np.array(out, dtype=object)
