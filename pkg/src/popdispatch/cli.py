"""Command-line front end: validate inputs, run scenarios, plot results.

Exit codes: 0 success (all steps converged), 1 usage error, 2 validation or
parse error, 3 non-convergence. POPDISPATCH_LOG={error|info|debug} controls
logging.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import click

from . import __version__, dynamics, formats, grid, scenario
from .svgplot import LineChart

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NONCONVERGED = 3


@dataclass
class RunManifest:
    config: dict
    input_digests: dict
    artifacts: list
    tool_version: str
    duration_s: float


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()[:16]


@click.group()
def cli():
    """Population-dynamics dispatch of distributed generators."""


@cli.command("validate")
@click.option("--feeder", required=True, help="Feeder topology CSV.")
@click.option("--buses", "buses_path", required=True, help="Bus CSV.")
@click.option("--generators", "generators_path", default=None, help="Generator CSV.")
@click.option("--root", default=None, help="Root bus id (default: first bus row).")
def cmd_validate(feeder, buses_path, generators_path, root):
    """Parse inputs, check the radial model, and report the reduction."""
    lines = formats.load_feeder_csv(feeder)
    buses = formats.load_bus_csv(buses_path)
    net = grid.RadialNetwork.build(buses, lines, root=root or buses[0].id)
    if generators_path:
        fleet = formats.load_generator_csv(generators_path)
        net = net.with_generators({g.bus: g.bus for g in fleet})
    grid.validate_radial(net)
    reduced = grid.reduce_to_key_nodes(net)
    click.echo(
        f"valid radial, {len(net.buses)} -> {len(reduced.buses)} key nodes, "
        f"{len(net.lines)} -> {len(reduced.lines)} lines"
    )
    return EXIT_OK


@cli.command("run")
@click.option("--config", "config_path", required=True, help="Scenario config file.")
@click.option(
    "--dynamics", "dynamics_name",
    type=click.Choice(["replicator", "local-replicator", "smith", "distributed-smith"]),
    default=None, help="Override the configured dynamics.",
)
@click.option("--graph", default=None, help="'complete' or an edge-list CSV.")
@click.option("--limit", "limit_specs", multiple=True, help="Line limit override FROM-TO=KW.")
@click.option("--step", "step_t", type=int, default=None, help="Run a single minute.")
@click.option("--warm-start", type=click.Choice(["on", "off"]), default=None)
@click.option("--init", type=click.Choice(["uniform", "nearest"]), default=None)
@click.option("--out", "out_dir", default="results", help="Output directory.")
@click.option("--engine", type=click.Choice(["auto", "reference"]), default=None)
@click.option("--seed", type=int, default=None,
              help="Reserved; runs are deterministic and ignore it.")
def cmd_run(config_path, dynamics_name, graph, limit_specs, step_t, warm_start,
            init, out_dir, engine, seed):
    """Run the configured scenario and write result artifacts."""
    t0 = time.perf_counter()
    if seed is not None:
        logger.debug("--seed %d accepted but unused; runs are deterministic", seed)
    raw = formats.load_config(config_path)
    if dynamics_name:
        raw["dynamics"] = dynamics_name
    if graph:
        raw["graph"] = graph
    if warm_start:
        raw["warm_start"] = warm_start
    if init:
        raw["init"] = init
    if engine:
        raw["engine"] = engine
    if step_t is not None:
        raw["t_start"] = str(step_t)
        raw["t_end"] = str(step_t)
    if limit_specs:
        existing = raw.get("limits", "")
        joined = ",".join(s for s in ([existing] if existing else []) + list(limit_specs))
        raw["limits"] = joined

    base_dir = Path(config_path).resolve().parent
    cfg = formats.build_scenario(raw, base_dir)
    cfg.validate()
    result = scenario.run_day(cfg)
    metrics = scenario.compare_to_oracle(result)
    metrics["line_limits"] = {
        f"{a}-{b}": lim
        for (a, b), lim in zip(result.line_keys, result.limits_kw)
        if math.isfinite(lim)
    }

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []

    def emit(name, writer, *args):
        p = out / name
        writer(p, *args)
        artifacts.append(str(p))

    emit("setpoints.csv", formats.write_setpoints_csv, result)
    emit("flows.csv", formats.write_flows_csv, result)
    emit("events.csv", formats.write_events_csv, result)
    emit("metrics.json", formats.write_metrics_json, metrics)
    only = result.steps[0] if len(result.steps) == 1 else None
    if only is not None and only.trajectory_kw is not None:
        emit(
            "iterations.csv", formats.write_iterations_csv,
            result, only.trajectory_kw, only.trajectory_flows,
        )

    manifest = RunManifest(
        config=dict(raw),
        input_digests={
            key: _digest(Path(p) if Path(p).is_absolute() else base_dir / p)
            for key, p in raw.items()
            if key in ("feeder", "buses", "generators", "profile")
        },
        artifacts=artifacts,
        tool_version=__version__,
        duration_s=round(time.perf_counter() - t0, 3),
    )
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")

    n_steps = len(result.steps)
    n_conv = sum(1 for r in result.steps if r.converged_at is not None)
    click.echo(
        f"{n_conv}/{n_steps} steps converged, max |error| vs oracle "
        f"{metrics['max_abs_error_kw']:.4f} kW, results in {out}"
    )
    return EXIT_OK if result.all_converged else EXIT_NONCONVERGED


def _read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise formats.ParseError(f"{path}: missing result file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise formats.ParseError(f"{path}: empty result file")
    return rows[0], rows[1:]


@cli.command("plot")
@click.argument("result_dir")
@click.option("--out", "out_dir", default=None, help="Where to put SVGs (default: result dir).")
def cmd_plot(result_dir, out_dir):
    """Render SVG charts from a result directory."""
    rdir = Path(result_dir)
    out = Path(out_dir) if out_dir else rdir
    out.mkdir(parents=True, exist_ok=True)
    metrics = {}
    mpath = rdir / "metrics.json"
    if mpath.exists():
        metrics = json.loads(mpath.read_text(encoding="utf-8"))
    limits = metrics.get("line_limits", {})

    events = []
    epath = rdir / "events.csv"
    if epath.exists():
        ehead, erows = _read_table(epath)
        events = [dict(zip(ehead, r)) for r in erows]

    written = []
    ipath = rdir / "iterations.csv"
    if ipath.exists():
        head, rows = _read_table(ipath)
        data = {h: [float(r[i]) for r in rows] for i, h in enumerate(head)}
        iters = data["iteration"]
        shead, srows = _read_table(rdir / "setpoints.csv")
        oracle = {
            h[len("oracle_"):]: float(srows[0][i])
            for i, h in enumerate(shead)
            if h.startswith("oracle_")
        }
        for h in head:
            if h.startswith("gen_"):
                bus = h[len("gen_"):]
                ch = LineChart(f"Generator {bus} set point", "iteration", "kW")
                ch.add_series("population game", iters, data[h])
                ch.add_hline(oracle.get(bus, float("nan")), "oracle")
                for ev in events:
                    ch.add_vline(float(ev["iteration"]), f"overflow {ev['line']}")
                p = out / f"gen_{bus}.svg"
                ch.write(p)
                written.append(p)
        for h in head:
            if h.startswith("flow_"):
                key = h[len("flow_"):]
                ch = LineChart(f"Flow {key}", "iteration", "kW")
                ch.add_series("flow", iters, data[h])
                if key in limits:
                    ch.add_hline(limits[key], "limit")
                    ch.add_hline(-limits[key], "-limit")
                for ev in events:
                    if ev["line"] == key:
                        ch.add_vline(float(ev["iteration"]), "detected")
                p = out / f"flow_{key}.svg"
                ch.write(p)
                written.append(p)
    else:
        shead, srows = _read_table(rdir / "setpoints.csv")
        cols = {h: [float(r[i]) for r in srows] for i, h in enumerate(shead)
                if h not in ("converged_at",)}
        minutes = cols["minute"]
        for h in shead:
            if h.startswith("gen_"):
                bus = h[len("gen_"):]
                ch = LineChart(f"Generator {bus} set point", "minute", "kW")
                ch.add_series("population game", minutes, cols[h])
                ch.add_series("oracle", minutes, cols[f"oracle_{bus}"], dashed=True)
                p = out / f"gen_{bus}.svg"
                ch.write(p)
                written.append(p)
        fhead, frows = _read_table(rdir / "flows.csv")
        fcols = {h: [float(r[i]) for r in frows] for i, h in enumerate(fhead)}
        for h in fhead[1:]:
            if h in limits:
                ch = LineChart(f"Flow {h}", "minute", "kW")
                ch.add_series("flow", fcols["minute"], fcols[h])
                ch.add_hline(limits[h], "limit")
                ch.add_hline(-limits[h], "-limit")
                p = out / f"flow_{h}.svg"
                ch.write(p)
                written.append(p)

    click.echo(f"wrote {len(written)} SVG files to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("POPDISPATCH_LOG", "error").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
            level, logging.ERROR
        ),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        rc = cli.main(args=argv, standalone_mode=False)
        return int(rc) if rc is not None else EXIT_OK
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except (formats.ParseError, grid.InvalidNetwork, dynamics.DimensionMismatch,
            ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
