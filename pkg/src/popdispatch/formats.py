"""File formats: feeder/bus/generator/profile CSVs, communication graphs,
flat key=value scenario configs, and the result artifacts written by runs.

All CSVs are UTF-8 with a required header row; lines starting with # are
ignored. Numeric outputs use fixed 6 decimal places (kW scale).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dynamics, game, grid, scenario


class ParseError(ValueError):
    pass


def _read_rows(path: str | Path, expect_header: Sequence[str], optional: int = 0):
    """Yield (lineno, row) after checking the header; '#' lines skipped."""
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or (raw[0].lstrip().startswith("#")):
                continue
            cells = [c.strip() for c in raw]
            if header is None:
                header = [c.lower() for c in cells]
                required = list(expect_header[: len(expect_header) - optional])
                full = list(expect_header)
                if header != required and header != full:
                    raise ParseError(
                        f"{path}:{lineno}: expected header {','.join(full)}"
                        + (f" (last {optional} optional)" if optional else "")
                        + f", got {','.join(cells)}"
                    )
                continue
            rows.append((lineno, cells))
    if header is None:
        raise ParseError(f"{path}: empty file, header required")
    return rows


def _num(path, lineno, name, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: bad {name} value {text!r}") from None


def load_feeder_csv(path: str | Path) -> list[grid.Line]:
    header = ("from_id", "to_id", "resistance_ohm", "reactance_ohm", "limit_kw")
    lines = []
    for lineno, row in _read_rows(path, header):
        if len(row) != 5:
            raise ParseError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
        lines.append(
            grid.Line(
                from_bus=row[0],
                to_bus=row[1],
                resistance_ohm=_num(path, lineno, "resistance_ohm", row[2]),
                reactance_ohm=_num(path, lineno, "reactance_ohm", row[3]),
                limit_kw=_num(path, lineno, "limit_kw", row[4]),
            )
        )
    return lines


def write_feeder_csv(path: str | Path, lines: Iterable[grid.Line]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["from_id", "to_id", "resistance_ohm", "reactance_ohm", "limit_kw"])
        for ln in lines:
            lim = "inf" if math.isinf(ln.limit_kw) else f"{ln.limit_kw:.6f}"
            w.writerow(
                [ln.from_bus, ln.to_bus, f"{ln.resistance_ohm:.6f}", f"{ln.reactance_ohm:.6f}", lim]
            )


def load_bus_csv(path: str | Path) -> list[grid.Bus]:
    header = ("bus_id", "load_kw", "generator_id")
    buses = []
    for lineno, row in _read_rows(path, header, optional=1):
        if len(row) not in (2, 3):
            raise ParseError(f"{path}:{lineno}: expected 2 or 3 fields, got {len(row)}")
        gen = row[2] if len(row) == 3 and row[2] else None
        buses.append(
            grid.Bus(id=row[0], load_kw=_num(path, lineno, "load_kw", row[1]), generator=gen)
        )
    return buses


def write_bus_csv(path: str | Path, buses: Iterable[grid.Bus]) -> None:
    buses = list(buses)
    with_gen = any(b.generator for b in buses)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bus_id", "load_kw", "generator_id"] if with_gen else ["bus_id", "load_kw"])
        for b in buses:
            row = [b.id, f"{b.load_kw:.6f}"]
            if with_gen:
                row.append(b.generator or "")
            w.writerow(row)


def load_generator_csv(path: str | Path) -> game.Fleet:
    header = ("bus_id", "a", "b", "c", "pmin_kw", "pmax_kw")
    gens = []
    for lineno, row in _read_rows(path, header):
        if len(row) != 6:
            raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
        gens.append(
            game.GeneratorParams(
                bus=row[0],
                a=_num(path, lineno, "a", row[1]),
                b=_num(path, lineno, "b", row[2]),
                c=_num(path, lineno, "c", row[3]),
                pmin_kw=_num(path, lineno, "pmin_kw", row[4]),
                pmax_kw=_num(path, lineno, "pmax_kw", row[5]),
            )
        )
    return game.Fleet(gens)


def write_generator_csv(path: str | Path, fleet: game.Fleet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bus_id", "a", "b", "c", "pmin_kw", "pmax_kw"])
        for g in fleet:
            w.writerow(
                [g.bus, f"{g.a:.6f}", f"{g.b:.6f}", f"{g.c:.6f}",
                 f"{g.pmin_kw:.6f}", f"{g.pmax_kw:.6f}"]
            )


def load_profile_csv(path: str | Path) -> scenario.LoadProfile:
    """Load the long form (minute,bus_id,load_kw) or wide form (minute,<bus>,...)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = None
        body = []
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw or raw[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in raw]
            if header is None:
                header = cells
                if not header or header[0].lower() != "minute":
                    raise ParseError(f"{path}:{lineno}: first column must be 'minute'")
                continue
            body.append((lineno, cells))
    if header is None:
        raise ParseError(f"{path}: empty file, header required")

    lowered = [h.lower() for h in header]
    if lowered == ["minute", "bus_id", "load_kw"]:
        per_minute: dict[int, dict[str, float]] = {}
        buses: list[str] = []
        for lineno, row in body:
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields")
            t = int(_num(path, lineno, "minute", row[0]))
            if row[1] not in buses:
                buses.append(row[1])
            per_minute.setdefault(t, {})[row[1]] = _num(path, lineno, "load_kw", row[2])
        steps = sorted(per_minute)
        if steps != list(range(len(steps))):
            raise ParseError(f"{path}: minutes must run 0..{len(steps) - 1} without gaps")
        loads = np.zeros((len(steps), len(buses)))
        for t in steps:
            for j, b in enumerate(buses):
                loads[t, j] = per_minute[t].get(b, 0.0)
        return scenario.LoadProfile(buses=tuple(buses), loads_kw=loads)

    buses = tuple(header[1:])
    if not buses:
        raise ParseError(f"{path}: wide form needs at least one bus column")
    loads = []
    for idx, (lineno, row) in enumerate(body):
        if len(row) != 1 + len(buses):
            raise ParseError(f"{path}:{lineno}: expected {1 + len(buses)} fields")
        t = int(_num(path, lineno, "minute", row[0]))
        if t != idx:
            raise ParseError(f"{path}:{lineno}: minutes must run 0..n-1, got {t}")
        loads.append([_num(path, lineno, "load_kw", v) for v in row[1:]])
    return scenario.LoadProfile(buses=buses, loads_kw=np.array(loads))


def write_profile_csv(path: str | Path, profile: scenario.LoadProfile) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", *profile.buses])
        for t in range(len(profile)):
            w.writerow([t, *(f"{v:.6f}" for v in profile.loads_kw[t])])


def load_comm_graph(source: str | Path, n: int) -> dynamics.CommGraph:
    """'complete' or a CSV edge list i,j over strategy indices 0..n-1."""
    if str(source).strip().lower() == "complete":
        return dynamics.CommGraph.complete(n)
    edges = []
    for lineno, row in _read_rows(source, ("i", "j")):
        if len(row) != 2:
            raise ParseError(f"{source}:{lineno}: expected 2 fields")
        edges.append((int(_num(source, lineno, "i", row[0])), int(_num(source, lineno, "j", row[1]))))
    try:
        return dynamics.CommGraph.from_edges(n, edges)
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from exc


def write_comm_graph_csv(path: str | Path, g: dynamics.CommGraph) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j"])
        for i in range(g.n):
            for j in range(i + 1, g.n):
                if g.adjacency[i, j] == 1.0:
                    w.writerow([i, j])


def parse_limit_spec(text: str) -> tuple[tuple[str, str], float]:
    """'FROM-TO=KW' -> ((from, to), kw)."""
    try:
        line_part, kw_part = text.rsplit("=", 1)
        a, b = line_part.split("-", 1)
        kw = float(kw_part)
    except ValueError:
        raise ParseError(f"bad limit spec {text!r}, expected FROM-TO=KW") from None
    if kw <= 0:
        raise ParseError(f"limit must be > 0 in {text!r}")
    return (a.strip(), b.strip()), kw


def load_config(path: str | Path) -> dict[str, str]:
    """Flat key = value file; '#' comments and blank lines ignored."""
    path = Path(path)
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key = value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


_CONFIG_KEYS = {
    "feeder", "buses", "generators", "profile", "root", "dynamics", "graph",
    "B", "m", "C", "h", "tol_kw", "window", "max_iter", "warm_start",
    "init", "t_start", "t_end", "limits", "engine",
}


def build_scenario(cfg: dict[str, str], base_dir: str | Path) -> scenario.ScenarioConfig:
    """Resolve a raw config mapping into a ScenarioConfig.

    Relative paths resolve against base_dir (the config file's directory).
    """
    base = Path(base_dir)
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ParseError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for req in ("feeder", "buses", "generators", "profile"):
        if req not in cfg:
            raise ParseError(f"config missing required key {req!r}")

    def path_of(key):
        p = Path(cfg[key])
        return p if p.is_absolute() else base / p

    lines = load_feeder_csv(path_of("feeder"))
    buses = load_bus_csv(path_of("buses"))
    fleet = load_generator_csv(path_of("generators"))
    profile = load_profile_csv(path_of("profile"))
    root = cfg.get("root", buses[0].id)
    net = grid.RadialNetwork.build(buses, lines, root=root)
    net = net.with_generators({g.bus: g.bus for g in fleet if g.bus in net.buses})

    kind_name = cfg.get("dynamics", "smith")
    graph_src = cfg.get("graph", "complete")
    if kind_name in ("local-replicator", "distributed-smith"):
        if str(graph_src).lower() == "complete":
            graph = dynamics.CommGraph.complete(len(fleet))
        else:
            gp = Path(graph_src)
            graph = load_comm_graph(gp if gp.is_absolute() else base / gp, len(fleet))
        kind = dynamics.DynamicsKind(kind_name, graph)
    else:
        kind = dynamics.DynamicsKind(kind_name)

    overrides = {}
    if cfg.get("limits"):
        for part in cfg["limits"].split(","):
            key, kw = parse_limit_spec(part.strip())
            overrides[key] = kw

    fitness = game.FitnessConfig(
        B=float(cfg.get("B", 1000.0)),
        m=float(cfg.get("m", 400.0)),
        C=float(cfg.get("C", 1000.0)),
    )
    t_end = int(cfg["t_end"]) if "t_end" in cfg else None
    return scenario.ScenarioConfig(
        net=net,
        fleet=fleet,
        profile=profile,
        fitness=fitness,
        dynamics_kind=kind,
        limit_overrides=overrides,
        t_start=int(cfg.get("t_start", 0)),
        t_end=t_end,
        warm_start=cfg.get("warm_start", "on").lower() not in ("off", "false", "0", "no"),
        h=float(cfg.get("h", 0.01)),
        tol_kw=float(cfg.get("tol_kw", 0.01)),
        window=int(cfg.get("window", 20)),
        max_iter=int(cfg.get("max_iter", 100_000)),
        init=cfg.get("init", "uniform"),
        engine=cfg.get("engine", "auto"),
    )


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_setpoints_csv(path: str | Path, result: scenario.DispatchResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["minute", "demand_kw"]
        head += [f"gen_{b}" for b in result.gen_buses]
        head += [f"oracle_{b}" for b in result.gen_buses]
        head += ["iterations", "converged_at", "cost", "oracle_cost"]
        w.writerow(head)
        for r in result.steps:
            row = [r.t, _fmt(r.demand_kw)]
            row += [_fmt(v) for v in r.setpoints_kw]
            row += [_fmt(v) for v in r.oracle_setpoints_kw]
            row += [
                r.iterations,
                "" if r.converged_at is None else r.converged_at,
                f"{r.cost:.9f}",
                f"{r.oracle_cost:.9f}",
            ]
            w.writerow(row)


def write_flows_csv(path: str | Path, result: scenario.DispatchResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["minute"] + [f"{a}-{b}" for a, b in result.line_keys])
        for r in result.steps:
            w.writerow([r.t] + [_fmt(v) for v in r.flows_kw])


def write_events_csv(path: str | Path, result: scenario.DispatchResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "iteration", "line", "flow_kw", "overflow_kw", "final_flow_kw"])
        key_index = {k: i for i, k in enumerate(result.line_keys)}
        for r in result.steps:
            for ev in r.overflow_events:
                final = r.flows_kw[key_index[ev.line]]
                w.writerow(
                    [r.t, ev.iteration, f"{ev.line[0]}-{ev.line[1]}",
                     _fmt(ev.flow_kw), _fmt(ev.overflow_kw), _fmt(final)]
                )


def write_iterations_csv(
    path: str | Path,
    result: scenario.DispatchResult,
    states_kw: np.ndarray,
    flows: np.ndarray,
) -> None:
    """Per-iteration detail for a single-step run."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["iteration"] + [f"gen_{b}" for b in result.gen_buses]
        head += [f"flow_{a}-{b}" for a, b in result.line_keys]
        w.writerow(head)
        for k in range(states_kw.shape[0]):
            w.writerow([k] + [_fmt(v) for v in states_kw[k]] + [_fmt(v) for v in flows[k]])


def write_metrics_json(path: str | Path, metrics: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
