import json

import numpy as np
import pytest

from popdispatch import cli


def run_cli(*args):
    return cli.main(list(args))


@pytest.fixture(scope="module")
def data_paths(data_dir):
    return {
        "feeder": str(data_dir / "feeder.csv"),
        "buses": str(data_dir / "buses.csv"),
        "generators": str(data_dir / "generators.csv"),
        "baseline": str(data_dir / "baseline.cfg"),
        "congestion": str(data_dir / "congestion.cfg"),
    }


class TestValidate:
    def test_bundled_feeder(self, data_paths, capsys):
        rc = run_cli(
            "validate", "--feeder", data_paths["feeder"],
            "--buses", data_paths["buses"],
            "--generators", data_paths["generators"],
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "valid radial, 12 -> 12 key nodes, 11 -> 11 lines" in out

    def test_chain_is_reduced(self, tmp_path, capsys):
        (tmp_path / "feeder.csv").write_text(
            "from_id,to_id,resistance_ohm,reactance_ohm,limit_kw\n"
            "a,b,0.1,0.08,50\nb,c,0.1,0.08,30\nc,d,0.1,0.08,inf\n"
        )
        (tmp_path / "buses.csv").write_text("bus_id,load_kw\na,0\nb,0\nc,0\nd,10\n")
        rc = run_cli(
            "validate", "--feeder", str(tmp_path / "feeder.csv"),
            "--buses", str(tmp_path / "buses.csv"),
        )
        assert rc == 0
        assert "4 -> 2 key nodes, 3 -> 1 lines" in capsys.readouterr().out

    def test_cycle_rejected(self, tmp_path, capsys):
        (tmp_path / "feeder.csv").write_text(
            "from_id,to_id,resistance_ohm,reactance_ohm,limit_kw\n"
            "a,b,0.1,0.08,inf\nb,c,0.1,0.08,inf\nc,a,0.1,0.08,inf\n"
        )
        (tmp_path / "buses.csv").write_text("bus_id,load_kw\na,0\nb,5\nc,5\n")
        rc = run_cli(
            "validate", "--feeder", str(tmp_path / "feeder.csv"),
            "--buses", str(tmp_path / "buses.csv"),
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        rc = run_cli(
            "validate", "--feeder", str(tmp_path / "nope.csv"),
            "--buses", str(tmp_path / "nope.csv"),
        )
        assert rc == 2

    def test_missing_required_option(self):
        assert run_cli("validate") == 1

    def test_unknown_option(self, data_paths):
        assert run_cli("run", "--config", data_paths["baseline"], "--bogus") == 1


class TestRun:
    def test_single_step_artifacts(self, data_paths, tmp_path, capsys):
        out = tmp_path / "res"
        rc = run_cli(
            "run", "--config", data_paths["baseline"], "--step", "566",
            "--out", str(out), "--seed", "7",
        )
        assert rc == 0
        assert "1/1 steps converged" in capsys.readouterr().out
        for name in ("setpoints.csv", "flows.csv", "events.csv",
                     "metrics.json", "manifest.json", "iterations.csv"):
            assert (out / name).exists(), name
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["max_abs_error_kw"] <= 0.5
        assert metrics["total_steps"] == 1
        assert metrics["line_limits"] == {"1-201": 60.0, "201-505": 60.0,
                                          "505-666": 60.0}

    def test_manifest_contents(self, data_paths, tmp_path):
        out = tmp_path / "res"
        rc = run_cli(
            "run", "--config", data_paths["baseline"], "--step", "566",
            "--out", str(out),
        )
        assert rc == 0
        man = json.loads((out / "manifest.json").read_text())
        assert set(man) == {"config", "input_digests", "artifacts",
                            "tool_version", "duration_s"}
        assert set(man["input_digests"]) == {"feeder", "buses", "generators",
                                             "profile"}
        for d in man["input_digests"].values():
            assert len(d) == 16 and int(d, 16) >= 0
        assert any(a.endswith("setpoints.csv") for a in man["artifacts"])
        assert man["config"]["t_start"] == "566"

    def test_congestion_config(self, data_paths, tmp_path):
        out = tmp_path / "res"
        rc = run_cli("run", "--config", data_paths["congestion"], "--out", str(out))
        assert rc == 0
        events = (out / "events.csv").read_text().strip().splitlines()
        assert len(events) >= 2, "overflow detection row expected"
        cells = events[1].split(",")
        assert cells[2] == "505-666"
        assert abs(float(cells[4])) > 0  # overflow seen mid-run
        assert abs(float(cells[5])) <= 28.0 + 0.1  # final flow pulled back
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["steps_with_residual_overflow"] == 0
        assert metrics["line_limits"]["505-666"] == 28.0

    def test_limit_flag_equivalent_to_config(self, data_paths, tmp_path):
        out = tmp_path / "res"
        rc = run_cli(
            "run", "--config", data_paths["baseline"], "--step", "566",
            "--limit", "505-666=28", "--out", str(out),
        )
        assert rc == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["config"]["limits"] == "505-666=28"
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["line_limits"]["505-666"] == 28.0
        assert metrics["overflow_events"] >= 1

    def test_nonconvergence_exit_code(self, data_paths, data_dir, tmp_path):
        cfg = tmp_path / "short.cfg"
        cfg.write_text(
            f"feeder = {data_dir / 'feeder.csv'}\n"
            f"buses = {data_dir / 'buses.csv'}\n"
            f"generators = {data_dir / 'generators.csv'}\n"
            f"profile = {data_dir / 'profile.csv'}\n"
            "root = 1\n"
            "t_start = 566\nt_end = 566\n"
            "max_iter = 10\n"  # below the convergence window, cannot converge
        )
        rc = run_cli("run", "--config", str(cfg), "--out", str(tmp_path / "res"))
        assert rc == 3

    def test_replicator_nearest_misses_oracle(self, data_paths, tmp_path):
        out = tmp_path / "res"
        rc = run_cli(
            "run", "--config", data_paths["baseline"], "--step", "566",
            "--dynamics", "replicator", "--init", "nearest", "--out", str(out),
        )
        assert rc in (0, 3)
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["max_abs_error_kw"] > 5.0

    def test_reference_engine(self, data_paths, tmp_path, capsys):
        rc = run_cli(
            "run", "--config", data_paths["baseline"], "--step", "566",
            "--engine", "reference", "--out", str(tmp_path / "res"),
        )
        assert rc == 0
        assert "1/1 steps converged" in capsys.readouterr().out

    def test_bad_limit_spec(self, data_paths, tmp_path):
        rc = run_cli(
            "run", "--config", data_paths["baseline"], "--step", "566",
            "--limit", "garbage", "--out", str(tmp_path / "res"),
        )
        assert rc == 2


@pytest.fixture(scope="module")
def day_run_dir(data_paths, data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("day")
    cfg = out / "day.cfg"
    cfg.write_text(
        f"feeder = {data_dir / 'feeder.csv'}\n"
        f"buses = {data_dir / 'buses.csv'}\n"
        f"generators = {data_dir / 'generators.csv'}\n"
        f"profile = {data_dir / 'profile.csv'}\n"
        "root = 1\n"
        "t_start = 560\nt_end = 570\n"
    )
    res = out / "res"
    assert cli.main(["run", "--config", str(cfg), "--out", str(res)]) == 0
    return res


@pytest.fixture(scope="module")
def congestion_run_dir(data_paths, tmp_path_factory):
    out = tmp_path_factory.mktemp("cong") / "res"
    assert cli.main(["run", "--config", data_paths["congestion"],
                     "--out", str(out)]) == 0
    return out


class TestPlot:
    def test_day_mode(self, day_run_dir, capsys):
        rc = run_cli("plot", str(day_run_dir))
        assert rc == 0
        # six generator charts plus one per limited line
        assert "wrote 9 SVG files" in capsys.readouterr().out
        svg = (day_run_dir / "gen_114.svg").read_text()
        assert "oracle" in svg and "<svg" in svg

    def test_iteration_mode_with_events(self, congestion_run_dir, tmp_path, capsys):
        rc = run_cli("plot", str(congestion_run_dir), "--out", str(tmp_path))
        assert rc == 0
        assert "wrote 17 SVG files" in capsys.readouterr().out
        svg = (tmp_path / "flow_505-666.svg").read_text()
        assert "detected" in svg
        assert "limit" in svg
        gen = (tmp_path / "gen_1.svg").read_text()
        assert "overflow 505-666" in gen

    def test_missing_results(self, tmp_path):
        assert run_cli("plot", str(tmp_path / "empty")) == 2
