"""Command-line interface: ``dwellscope simulate | sessionize | analyze``.

Exit codes: 0 success, 1 finished with data-quality warnings, 2 unusable
input or configuration.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from . import __version__
from . import io as dio
from .core import DEFAULT_NODES
from .exceptions import ConfigError
from .report import AnalyzeOptions, analyze
from .sessionize import DEFAULT_GAP, sessionize_frame, visits_frame
from .simulator import SimConfig, simulate

logger = logging.getLogger("dwellscope")

OUT_ENV = "DWELLSCOPE_OUT"
MALFORMED_LIMIT = 0.10


def _write_manifest(out_dir: Path, command, inputs, params, seed, outputs, started):
    manifest = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "parameters": params,
        "seed": seed,
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _fail(message, code=2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _split_nodes(text):
    return tuple(n.strip() for n in text.split(",") if n.strip()) if text else ()


@click.group()
@click.version_option(__version__, prog_name="dwellscope")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Bluetooth dwell-time analytics and visitor simulation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="JSON file with SimConfig fields.")
@click.option("--out", "out_dir", envvar=OUT_ENV, required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def simulate_cmd(config_path, out_dir, seed):
    """Generate synthetic sightings plus their ground truth."""
    started = time.perf_counter()
    if not Path(config_path).is_file():
        _fail(f"config file not found: {config_path}")
    try:
        cfg = SimConfig.from_json(config_path)
        if seed is not None:
            cfg = cfg.with_overrides(seed=seed)
    except (ConfigError, OSError, UnicodeDecodeError) as exc:
        _fail(f"bad config {config_path}: {exc}")

    events, truth = simulate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev_path = dio.write_events(events, out / "events.csv")
    truth_path = dio.write_truth(truth.to_frame(), out / "truth.csv")
    _write_manifest(out, "simulate", {"config": config_path}, cfg.to_dict(), cfg.seed,
                    [ev_path, truth_path], started)
    click.echo(f"{len(truth.visitors)} visitors, {len(events)} sightings -> {out}")


@main.command("sessionize")
@click.option("--events", "events_path", required=True, type=click.Path(dir_okay=False))
@click.option("--gap", type=float, default=DEFAULT_GAP, show_default=True,
              help="Longest silence (s) still counted as continuous presence.")
@click.option("--out", "out_dir", envvar=OUT_ENV, required=True, type=click.Path(file_okay=False))
@click.option("--nodes", default=",".join(DEFAULT_NODES), show_default=True,
              help="Comma-separated deployment node labels.")
@click.option("--tz", default="UTC", show_default=True, help="Time zone of museum days.")
def sessionize_cmd(events_path, gap, out_dir, nodes, tz):
    """Turn sightings into presence intervals and daily visits."""
    started = time.perf_counter()
    if gap <= 0:
        _fail("--gap must be > 0")
    try:
        events, stats = dio.read_events(events_path)
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        _fail(f"cannot read {events_path}: {exc}")

    deployment = set(_split_nodes(nodes))
    known = events["node_id"].isin(deployment)
    n_unknown = int((~known).sum())
    if n_unknown:
        logger.warning("dropped %d sightings at unknown nodes", n_unknown)
    events = events[known].drop_duplicates()

    intervals = sessionize_frame(events, gap)
    visits = visits_frame(intervals, tz)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    iv_path = dio.write_intervals(intervals, out / "intervals.csv")
    vs_path = dio.write_visits(visits, out / "visits.csv")
    params = {"gap": gap, "nodes": sorted(deployment), "tz": tz,
              "n_records": stats.n_records, "n_malformed": stats.n_malformed,
              "n_unknown_node": n_unknown}
    _write_manifest(out, "sessionize", {"events": events_path}, params, None,
                    [iv_path, vs_path], started)
    if stats.n_malformed:
        click.echo(f"warning: {stats.n_malformed} malformed record(s) skipped", err=True)
    click.echo(f"{len(intervals)} intervals, {len(visits)} visits -> {out}")
    if stats.malformed_fraction > MALFORMED_LIMIT:
        click.echo(f"error: {stats.malformed_fraction:.1%} of records malformed "
                   f"(limit {MALFORMED_LIMIT:.0%}); partial output kept", err=True)
        sys.exit(1)


@main.command("analyze")
@click.option("--intervals", "intervals_path", type=click.Path(dir_okay=False))
@click.option("--visits", "visits_path", type=click.Path(dir_okay=False))
@click.option("--events", "events_path", type=click.Path(dir_okay=False),
              help="Analyze raw sightings instead, sessionizing them with --gap.")
@click.option("--gap", type=float, default=DEFAULT_GAP, show_default=True)
@click.option("--out", "out_dir", envvar=OUT_ENV, required=True, type=click.Path(file_okay=False))
@click.option("--exclude-nodes", default="E,S", show_default=True,
              help="Nodes left out of the per-node sections; pass '' to keep all.")
@click.option("--occupancy-bins", type=int, default=20, show_default=True)
@click.option("--bin-width", type=int, default=60, show_default=True,
              help="Occupancy time-bin width (s).")
@click.option("--plateau-fraction", type=float, default=0.85, show_default=True)
@click.option("--knee", type=click.Choice(["hinge", "suffix"]), default="hinge", show_default=True)
@click.option("--survival-step", type=float, default=10.0, show_default=True)
@click.option("--day-group", type=click.Choice(["EarlyClose", "LateClose", "all"],
                                               case_sensitive=False), default="all",
              show_default=True)
@click.option("--pool-node-stays", is_flag=True,
              help="Sum a device's intervals at a node within a day before per-node stats.")
@click.option("--tz", default="UTC", show_default=True)
def analyze_cmd(intervals_path, visits_path, events_path, gap, out_dir, exclude_nodes,
                occupancy_bins, bin_width, plateau_fraction, knee, survival_step, day_group,
                pool_node_stays, tz):
    """Compute the length-of-stay report and per-node curve files."""
    started = time.perf_counter()
    if occupancy_bins < 5:
        _fail("--occupancy-bins must be >= 5")
    if not 0 < plateau_fraction < 1:
        _fail("--plateau-fraction must lie in (0, 1)")
    if bin_width <= 0 or survival_step <= 0 or gap <= 0:
        _fail("--bin-width, --survival-step and --gap must be > 0")
    inputs = {}
    try:
        if events_path:
            events, _ = dio.read_events(events_path)
            intervals = sessionize_frame(events, gap)
            visits = visits_frame(intervals, tz)
            inputs["events"] = events_path
        elif intervals_path:
            intervals = dio.read_intervals(intervals_path)
            inputs["intervals"] = intervals_path
            if visits_path:
                visits = dio.read_visits(visits_path)
                inputs["visits"] = visits_path
            else:
                visits = visits_frame(intervals, tz)
        else:
            _fail("give --intervals [--visits] or --events")
    except (OSError, ValueError, UnicodeDecodeError, KeyError) as exc:
        _fail(f"cannot read input: {exc}")

    opts = AnalyzeOptions(
        exclude_nodes=_split_nodes(exclude_nodes), occupancy_bins=occupancy_bins,
        bin_width=bin_width, plateau_fraction=plateau_fraction, knee=knee,
        survival_step=survival_step,
        day_group=None if day_group.lower() == "all" else day_group, tz=tz,
        pool_node_stays=pool_node_stays)
    result = analyze(intervals, visits, opts)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "report.json"]
    outputs[0].write_text(json.dumps(result.report, indent=1, allow_nan=False) + "\n",
                          encoding="utf-8")
    for node, curve in result.dwell_curves.items():
        outputs.append(dio.write_dwell_curve(curve, out / f"dwell_occupancy_{node}.csv"))
    for node, curve in result.survival_curves.items():
        outputs.append(dio.write_survival_curve(curve, out / f"survival_{node}.csv"))
    outputs.extend(dio.write_transition_matrix(result.transitions, out / "transitions.csv"))
    params = result.report["parameters"] | {"gap": gap}
    _write_manifest(out, "analyze", inputs, params, None, outputs, started)
    click.echo(f"report -> {outputs[0]}")


if __name__ == "__main__":
    main()
