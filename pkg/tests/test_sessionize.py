import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from dwellscope import (EmptyVisit, PresenceInterval, Sessionizer, SightingEvent, UnsortedInput,
                        VisitBuilder, build_visits, sessionize, sessionize_frame, split_days,
                        visits_frame)
from dwellscope.sessionize import visits_from_intervals

from helpers import MONDAY, events_df, intervals_df
from oracles import sessionize_stream


def _ev(*ts, device="d", node="E"):
    return [SightingEvent(device, node, t) for t in ts]


def test_close_sightings_merge():
    out = sessionize(_ev(0, 10, 20), 300)
    assert out == [PresenceInterval("d", "E", 0, 20)]
    assert out[0].duration == 20


def test_long_silence_splits():
    assert sessionize(_ev(0, 400), 300) == [PresenceInterval("d", "E", 0, 0),
                                           PresenceInterval("d", "E", 400, 400)]


def test_gap_equal_to_threshold_stays_open():
    assert len(sessionize(_ev(0, 300), 300)) == 1
    assert len(sessionize(_ev(0, 301), 300)) == 2


def test_empty_stream():
    assert sessionize([], 300) == []


def test_unsorted_stream_raises():
    with pytest.raises(UnsortedInput):
        sessionize(_ev(10, 5), 300)


def test_mixed_stream_rejected():
    with pytest.raises(ValueError):
        sessionize(_ev(0) + _ev(5, node="D"), 300)


@pytest.mark.parametrize("gap", [0, -5])
def test_gap_must_be_positive(gap):
    with pytest.raises(ValueError):
        sessionize(_ev(0), gap)


@given(st.lists(st.integers(0, 5000), max_size=60), st.integers(1, 600))
def test_no_sighting_lost_or_duplicated(raw, gap):
    ts = sorted(raw)
    out = sessionize(_ev(*ts), gap)
    assert [(iv.check_in, iv.check_out) for iv in out] == sessionize_stream(ts, gap)
    covered = [t for iv in out for t in ts if iv.check_in <= t <= iv.check_out]
    assert sorted(covered) == ts
    # internal gaps <= threshold, boundary gaps > threshold
    for a, b in zip(out, out[1:]):
        assert b.check_in - a.check_out > gap
    for iv in out:
        inside = [t for t in ts if iv.check_in <= t <= iv.check_out]
        assert all(y - x <= gap for x, y in zip(inside, inside[1:]))


def test_visit_arithmetic():
    v = build_visits([PresenceInterval("d", "E", 0, 100), PresenceInterval("d", "D", 150, 200)])
    assert (v.entry_time, v.exit_time, v.total_stay) == (0, 200, 200)
    assert (v.unique_nodes, v.total_node_visits) == (2, 2)


def test_single_instant_visit():
    v = build_visits([PresenceInterval("d", "E", 7, 7)])
    assert (v.total_stay, v.unique_nodes, v.total_node_visits) == (0, 1, 1)


def test_unique_vs_total_nodes():
    v = build_visits([PresenceInterval("d", "D", 0, 50), PresenceInterval("d", "V", 100, 150),
                      PresenceInterval("d", "D", 200, 250)])
    assert (v.unique_nodes, v.total_node_visits) == (2, 3)


def test_empty_visit_raises():
    with pytest.raises(EmptyVisit):
        build_visits([])


def test_split_days_two_dates():
    ivs = [PresenceInterval("d", "E", MONDAY + 36000, MONDAY + 36100),
           PresenceInterval("d", "E", MONDAY + 86400 + 36000, MONDAY + 86400 + 36100)]
    groups = split_days(ivs)
    assert list(groups) == [("d", dt.date(2010, 4, 5)), ("d", dt.date(2010, 4, 6))]


def test_split_days_one_date():
    ivs = [PresenceInterval("d", "E", MONDAY + 36000, MONDAY + 36100),
           PresenceInterval("d", "D", MONDAY + 40000, MONDAY + 40100)]
    assert len(split_days(ivs)) == 1


def test_midnight_straddle_goes_to_check_in_day():
    iv = PresenceInterval("d", "E", MONDAY + 86400 - 60, MONDAY + 86400 + 60)
    assert list(split_days([iv])) == [("d", dt.date(2010, 4, 5))]


def test_split_days_respects_time_zone():
    # 23:30 UTC on Monday is already Tuesday in Paris (UTC+2 in April)
    iv = PresenceInterval("d", "E", MONDAY + 84600, MONDAY + 84700)
    assert list(split_days([iv], tz="Europe/Paris")) == [("d", dt.date(2010, 4, 6))]


def _random_events(rng, n):
    return events_df([(int(rng.integers(0, 20_000)), f"dev{rng.integers(0, 6)}",
                       "EDV"[rng.integers(0, 3)]) for _ in range(n)])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 200), st.integers(1, 900))
def test_frame_path_matches_object_path(seed, n, gap):
    df = _random_events(np.random.default_rng(seed), n).drop_duplicates()
    expected = []
    for (dev, node), grp in df.groupby(["device_id", "node_id"]):
        ev = [SightingEvent(dev, node, int(t)) for t in sorted(grp["timestamp_s"])]
        expected += [(iv.device, iv.node, iv.check_in, iv.check_out) for iv in sessionize(ev, gap)]
    got = sessionize_frame(df, gap)
    assert sorted(expected) == sorted(got[["device_id", "node_id", "check_in_s",
                                           "check_out_s"]].itertuples(index=False, name=None))
    assert (got["duration_s"] == got["check_out_s"] - got["check_in_s"]).all()


def test_frame_path_empty():
    out = sessionize_frame(events_df([]), 300)
    assert out.empty
    assert list(out.columns) == ["device_id", "node_id", "check_in_s", "check_out_s",
                                 "duration_s"]


def test_visits_frame_matches_records():
    rng = np.random.default_rng(4)
    iv = sessionize_frame(_random_events(rng, 300).assign(
        timestamp_s=lambda d: d["timestamp_s"] * 20 + MONDAY), 300)
    frame = visits_frame(iv)
    objs = [PresenceInterval(*row) for row in iv[["device_id", "node_id", "check_in_s",
                                                  "check_out_s"]].itertuples(index=False)]
    records = visits_from_intervals(objs)
    assert len(frame) == len(records)
    got = {tuple(r) for r in frame.itertuples(index=False)}
    want = {(v.device, v.entry_time, v.exit_time, v.total_stay, v.unique_nodes,
             v.total_node_visits) for v in records}
    assert got == want


def test_sessionizer_estimator():
    ev = events_df([(0, "a", "E"), (10, "a", "E"), (500, "a", "E"), (3, "b", "D")])
    est = Sessionizer(gap_threshold=300)
    out = est.fit_transform(ev)
    assert len(out) == 3
    assert est.get_params() == {"gap_threshold": 300, "min_duration": 0}
    assert clone(est).get_params() == est.get_params()
    trimmed = Sessionizer(min_duration=5).fit_transform(ev)
    assert trimmed["duration_s"].tolist() == [10]


def test_sessionizer_rejects_bad_gap():
    with pytest.raises(ValueError):
        Sessionizer(gap_threshold=0).fit(events_df([]))


def test_visit_builder():
    iv = intervals_df([("a", "E", MONDAY, MONDAY + 100), ("a", "D", MONDAY + 150, MONDAY + 200)])
    out = VisitBuilder().fit_transform(iv)
    assert out[["total_stay_s", "unique_nodes", "total_node_visits"]].values.tolist() == [[200, 2, 2]]
    assert isinstance(out, pd.DataFrame)
