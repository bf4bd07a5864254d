"""Acceptance criteria.  Each test prints one ``criterion N: PASS|FAIL`` line;
the lines are repeated in the terminal summary."""

import hashlib
import json
import subprocess
import sys
import time

import numpy as np
import pandas as pd
import pytest

from dwellscope import (SimConfig, extract_thresholds, occupancy_series, sessionize_frame,
                        simulate, spearman_rho, stay_by_entry_hour, survival_curve, visits_frame,
                        dwell_occupancy_curve)
from dwellscope.simulator import _DEFAULT_DWELL, _DEFAULT_ROUTING, EXIT
from dwellscope.stats import node_stays

import oracles

RESULTS = {}


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def cli(*args):
    proc = subprocess.run([sys.executable, "-m", "dwellscope.cli", *map(str, args)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


# 1 ----------------------------------------------------------------------------

def test_spearman_matches_rank_oracle():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    worst, n_done = 0.0, 0
    while n_done < 1000:
        n = int(rng.integers(2, 51))
        if n_done % 2:
            # few distinct values guarantees ties
            x = rng.integers(0, max(2, n // 3), n)
            y = rng.integers(0, max(2, n // 3), n)
        else:
            x, y = rng.normal(size=n), rng.normal(size=n)
        if len(set(x.tolist())) < 2 or len(set(y.tolist())) < 2:
            continue
        got = spearman_rho(x, y).rho
        want = oracles.spearman(x.tolist(), y.tolist())
        worst = max(worst, abs(got - want))
        n_done += 1
    elapsed = time.perf_counter() - started
    verdict(1, worst <= 1e-12 and elapsed < 5,
            f"max |rho - oracle| = {worst:.1e} over 1000 pairs in {elapsed:.2f} s")


# 2 ----------------------------------------------------------------------------

def test_sessionization_is_exact():
    cfg = SimConfig(hourly_arrival_rates={h: 1111.0 for h in range(9, 18)},
                    late_arrival_rates=None, activation_prob=1.0, detection_prob=1.0,
                    poll_interval=5, seed=21)
    ev, truth = simulate(cfg)
    rec = sessionize_frame(ev, 300).sort_values(["device_id", "node_id", "check_in_s"])
    true = truth.activated_intervals().sort_values(["device_id", "node_id", "true_in_s"])
    n_visitors = len(truth.visitors)
    same_count = len(rec) == len(true)
    err = 0
    if same_count:
        same_keys = (rec["device_id"].to_numpy() == true["device_id"].to_numpy()).all() and \
                    (rec["node_id"].to_numpy() == true["node_id"].to_numpy()).all()
        err = max(np.abs(rec["check_in_s"].to_numpy() - true["true_in_s"].to_numpy()).max(),
                  np.abs(rec["check_out_s"].to_numpy() - true["true_out_s"].to_numpy()).max())
        same_count = same_count and same_keys
    verdict(2, n_visitors >= 9_500 and same_count and err <= 5,
            f"{n_visitors} visitors, {len(rec)} intervals vs {len(true)} true, "
            f"max boundary error {err} s")


# 3 ----------------------------------------------------------------------------

def _crowd_scenario(seed):
    """One sensed room behind an entrance, planted trapezoid response 0.24 / 0.77."""
    rates = [100, 160, 220, 280, 400, 600, 900, 1600, 4000]
    return SimConfig(nodes=("E", "B"), routing={"E": {"B": 1.0}, "B": {EXIT: 1.0}},
                     dwell_params={"E": (5.0, 0.0), "B": (300.0, 0.3)},
                     crowd_response={"E": (0.5, 0.5, 1.0), "B": (0.24, 0.77, 0.3)},
                     capacity={"E": 10**6, "B": 100}, admission_control=True,
                     visit_budget=None, activation_prob=1.0, poll_interval=5,
                     default_travel_time=30, hourly_arrival_rates=dict(zip(range(9, 18), rates)),
                     late_arrival_rates=None, closing="18:00", n_days=2, seed=seed)


def test_threshold_recovery():
    found = []
    for seed in range(5):
        ev, _ = simulate(_crowd_scenario(seed))
        iv = sessionize_frame(ev, 300)
        room = iv[iv["node_id"] == "B"]
        curve = dwell_occupancy_curve(room, occupancy_series(room, bin_width=1), 20)
        pts = extract_thresholds(curve)
        found.append((pts.X.occupancy, pts.Z.occupancy))
    ok = all(abs(x - 0.24) <= 0.05 and abs(z - 0.77) <= 0.05 for x, z in found)
    verdict(3, ok, "(X, Z) per seed: " + ", ".join(f"({x:.3f}, {z:.3f})" for x, z in found))


# 4 ----------------------------------------------------------------------------

def test_stay_decreases_toward_closing():
    # nobody leaves on their own; only the 2 h visit budget or closing ends a visit
    routing = {n: {k: p / (1 - row.get(EXIT, 0.0)) for k, p in row.items() if k != EXIT}
               for n, row in _DEFAULT_ROUTING.items()}
    cfg = SimConfig(start_date="2010-04-05", routing=routing, visit_budget=(7200.0, 1.0),
                    hourly_arrival_rates={h: 1250.0 for h in range(9, 17)},
                    late_arrival_rates=None, activation_prob=1.0, seed=0)
    ev, _ = simulate(cfg)
    visits = visits_frame(sessionize_frame(ev, 300))
    hours = list(range(9, 17))
    means = [h.mean_stay for h in stay_by_entry_hour(visits, "EarlyClose", hours=hours)]
    tail = means[hours.index(14):]
    decreasing = all(a > b for a, b in zip(tail, tail[1:]))
    rho = spearman_rho(hours, means).rho
    verdict(4, decreasing and rho <= -0.8,
            f"hourly means {[round(m) for m in means]}, rho = {rho:.3f}")


# 5 ----------------------------------------------------------------------------

def test_median_calibration(tmp_path):
    target = {"V": 182.0, "C": 182.0, "B": 182.0, "D": 44.0, "P": 44.0, "G": 44.0}
    medians = dict(target, E=60.0, S=60.0)
    cfg = SimConfig(dwell_params={n: (m, _DEFAULT_DWELL[n][1]) for n, m in medians.items()},
                    crowd_response={n: (0.25, 0.75, 1.0) for n in medians},
                    visit_budget=(1800.0, 0.3), activation_prob=1.0, poll_interval=1,
                    hourly_arrival_rates={h: 1250.0 for h in range(9, 17)},
                    late_arrival_rates=None, seed=5)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg.to_dict()))
    cli("simulate", "--config", tmp_path / "cfg.json", "--out", tmp_path / "sim")
    cli("sessionize", "--events", tmp_path / "sim" / "events.csv", "--out", tmp_path / "ses")
    cli("analyze", "--intervals", tmp_path / "ses" / "intervals.csv",
        "--visits", tmp_path / "ses" / "visits.csv", "--out", tmp_path / "ana")
    report = json.loads((tmp_path / "ana" / "report.json").read_text())
    n_visits = report["summary"]["n_visits"]
    got = {n: report["boxplots"][n]["median"] for n in target}
    rel = {n: got[n] / target[n] - 1 for n in target}
    verdict(5, n_visits >= 9_500 and all(abs(r) <= 0.10 for r in rel.values()),
            f"{n_visits} visitors; median error " +
            ", ".join(f"{n} {r:+.1%}" for n, r in rel.items()))


# 6 ----------------------------------------------------------------------------

def test_survival_invariants():
    samples = []
    for seed in range(3):
        cfg = SimConfig(activation_prob=1.0, seed=seed, hourly_arrival_rates={10: 200.0},
                        late_arrival_rates=None)
        ev, _ = simulate(cfg)
        samples += list(node_stays(sessionize_frame(ev, 300)).values())
    rng = np.random.default_rng(6)
    samples += [rng.integers(0, 5000, int(rng.integers(1, 300))) for _ in range(50)]
    samples += [np.round(rng.lognormal(5, 1, 500), 1)]
    bad, worst = 0, 0.0
    for d in samples:
        for step in (1, 10, 60):
            f = survival_curve(d, step).fraction_remaining
            bad += not (f[0] == 1 and f[-1] == 0 and np.all(np.diff(f) <= 0))
        mean = float(np.mean(d))
        if mean > 0:
            worst = max(worst, abs(survival_curve(d, 1).area() - mean) / mean)
    verdict(6, bad == 0 and worst <= 0.01,
            f"{len(samples)} datasets, {bad} shape violations, "
            f"worst step-sum error {worst:.2%}")


# 7 ----------------------------------------------------------------------------

def _naive_scan(ci, co, origin, width, n_bins):
    counts = []
    for b in range(n_bins):
        lo = origin + b * width
        counts.append(int(np.count_nonzero((ci < lo + width) & (co >= lo))))
    return counts


def test_occupancy_matches_naive_scan():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 1001))
        ci = rng.integers(0, 20_000, n)
        co = ci + rng.integers(0, 1500, n)
        width = int(rng.integers(1, 300))
        df = pd.DataFrame({"device_id": "d", "node_id": "B", "check_in_s": ci,
                           "check_out_s": co, "duration_s": co - ci})
        occ = occupancy_series(df, width)
        mismatches += occ.counts.tolist() != _naive_scan(ci, co, occ.origin, width,
                                                         len(occ.counts))
    verdict(7, mismatches == 0, f"{mismatches} of 200 instances differ from the naive scan")


# 8 ----------------------------------------------------------------------------

def _digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.iterdir()) if p.name != "manifest.json"}


def _pipeline(cfg_path, out):
    cli("simulate", "--config", cfg_path, "--out", out / "sim")
    cli("sessionize", "--events", out / "sim" / "events.csv", "--out", out / "ses")
    cli("analyze", "--intervals", out / "ses" / "intervals.csv",
        "--visits", out / "ses" / "visits.csv", "--out", out / "ana")
    return {f"{d}/{k}": v for d in ("sim", "ses", "ana") for k, v in _digests(out / d).items()}


@pytest.mark.slow
def test_determinism_and_throughput(tmp_path):
    small = tmp_path / "small.json"
    small.write_text(json.dumps({"seed": 3, "activation_prob": 0.5}))
    same = _pipeline(small, tmp_path / "a") == _pipeline(small, tmp_path / "b")

    big = tmp_path / "big.json"
    big.write_text(json.dumps({"n_days": 10, "poll_interval": 3, "seed": 7,
                               "hourly_arrival_rates": {str(h): 1111 for h in range(9, 18)},
                               "late_arrival_rates": None}))
    started = time.perf_counter()
    _pipeline(big, tmp_path / "big")
    elapsed = time.perf_counter() - started
    manifest = json.loads((tmp_path / "big" / "ses" / "manifest.json").read_text())
    n_sightings = manifest["parameters"]["n_records"]
    truth = pd.read_csv(tmp_path / "big" / "sim" / "truth.csv", usecols=["visitor_id"])
    n_visitors = truth["visitor_id"].nunique()
    verdict(8, same and elapsed < 60 and n_visitors >= 95_000 and n_sightings >= 4_000_000,
            f"checksums identical: {same}; {n_visitors} visitors, {n_sightings} sightings "
            f"end to end in {elapsed:.1f} s")
