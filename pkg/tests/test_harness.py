import csv
import io
import json
from importlib import resources
from pathlib import Path

import jsonschema
import pytest

from lipi_sim.errors import ConfigError
from lipi_sim.harness import (
    ExperimentConfig,
    cmd_compare,
    compare_rows,
    execute,
    failure_order,
    main,
    result_record,
    sweep_rows,
)
from lipi_sim.stnet import random_geometric, ring

ROOT = Path(__file__).resolve().parent.parent


def schema():
    return json.loads(resources.files("lipi_sim").joinpath("result_schema.json").read_text())


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def records(text):
    return [json.loads(line) for line in text.splitlines()]


class TestRun:
    def test_sum_of_ids(self, capsys):
        code, out, _ = run_cli(capsys, "run", "--protocol", "lipi", "--topology", "complete:24", "--secrets", "ids",
                               "--rounds", "3")
        assert code == 0
        assert [r["aggregate"] for r in records(out)] == [300, 300, 300]

    def test_ring_list(self, capsys):
        code, out, _ = run_cli(capsys, "run", "--protocol", "lipi", "--topology", "ring:4", "--secrets",
                               "list:1,2,3,4")
        assert code == 0 and records(out)[0]["aggregate"] == 10

    def test_sss_small_field(self, capsys):
        code, out, _ = run_cli(capsys, "run", "--protocol", "sss", "--topology", "complete:3", "--field", "97",
                               "--secrets", "list:2,3,4")
        assert code == 0 and records(out)[0]["aggregate"] == 9

    def test_initiator_reported_apart(self, capsys):
        _, out, _ = run_cli(capsys, "run", "--topology", "complete:5")
        rec = records(out)[0]
        assert rec["initiator"]["node"] == 1
        assert 1 not in [n["node"] for n in rec["nodes"]]

    def test_csv_rows(self, capsys):
        _, out, _ = run_cli(capsys, "run", "--topology", "complete:4", "--format", "csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [r["role"] for r in rows] == ["initiator", "other", "other", "other"]
        assert {r["aggregate"] for r in rows} == {"10"}

    def test_failure_flag(self, capsys):
        _, out, _ = run_cli(capsys, "run", "--topology", "complete:5", "--failure", "3:silent")
        rec = records(out)[0]
        assert rec["aggregate"] == 12 and rec["recovery_used"] and rec["comm_rounds"] == 2

    @pytest.mark.parametrize("argv", [
        ["run", "--topology", "file:/nonexistent/topo.txt"],
        ["run", "--topology", "blob:4"],
        ["run", "--secrets", "list:1,2"],
        ["run", "--ntx", "zero"],
    ])
    def test_usage_errors(self, capsys, argv):
        code, _, err = run_cli(capsys, *argv)
        assert code == 2 and "error" in err

    def test_unknown_protocol(self, capsys):
        with pytest.raises(SystemExit):
            main(["run", "--protocol", "magic"])
        with pytest.raises(ConfigError):
            ExperimentConfig(protocol="magic")

    def test_malformed_topology_file(self, tmp_path, capsys):
        bad = tmp_path / "topo.txt"
        bad.write_text("not a topology\n")
        code, _, err = run_cli(capsys, "run", "--topology", f"file:{bad}")
        assert code == 2 and err

    def test_topology_file_round_trip(self, tmp_path, capsys):
        topo = random_geometric(9, 200, seed=2)
        path = tmp_path / "net.txt"
        path.write_text(topo.to_text())
        code, out, _ = run_cli(capsys, "run", "--topology", f"file:{path}")
        assert code == 0 and records(out)[0]["aggregate"] == 45


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig(protocol="nsss", topology="rgg:12:250", ntx=5, secrets="random:0:9",
                               failures=["4:before_dfke"], rounds=2, seed=7, degree=3)
        assert ExperimentConfig.from_dict(json.loads(cfg.to_json())) == cfg
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        assert ExperimentConfig.load(str(path)) == cfg

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="colour"):
            ExperimentConfig.from_dict({"colour": "red"})

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(ExperimentConfig(topology="complete:6", secrets="list:1,1,1,1,1,1").to_json())
        _, out, _ = run_cli(capsys, "run", "--config", str(path))
        assert records(out)[0]["aggregate"] == 6
        _, out, _ = run_cli(capsys, "run", "--config", str(path), "--secrets", "ids")
        assert records(out)[0]["aggregate"] == 21

    def test_random_secrets_are_seeded(self):
        topo = random_geometric(6, 150, seed=0)
        cfg = ExperimentConfig(secrets="random:0:1000", seed=3)
        assert cfg.secrets_for(topo, 0) == cfg.secrets_for(topo, 0)
        assert cfg.secrets_for(topo, 0) != cfg.secrets_for(topo, 1)

    def test_n_mismatch(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(topology="complete:5", n=6).build_topology()

    def test_auto_ntx(self):
        cfg = ExperimentConfig(topology="line:5")
        assert cfg.sim_config(cfg.build_topology()).ntx == 8


class TestSchema:
    def test_copies_identical(self):
        assert (ROOT / "docs" / "result_schema.json").read_text() == \
            resources.files("lipi_sim").joinpath("result_schema.json").read_text()

    @pytest.mark.parametrize("cfg", [
        ExperimentConfig(topology="complete:6", rounds=2),
        ExperimentConfig(topology="complete:6", failures=["2:silent", "3:mid_share:1"]),
        ExperimentConfig(topology="line:4", failures=["1:silent"]),
        ExperimentConfig(protocol="ppmp", topology="ring:5"),
        ExperimentConfig(protocol="sss", topology="complete:4"),
        ExperimentConfig(protocol="nsss", topology="ring:8", degree=3),
        ExperimentConfig(topology="complete:4", aggregation="gm"),
        ExperimentConfig(topology="complete:4", aggregation="am", rounds=3, refresh_threshold=1),
    ])
    def test_records_validate(self, cfg):
        validator = jsonschema.Draft202012Validator(schema())
        for rnd, res in enumerate(execute(cfg)):
            validator.validate(json.loads(json.dumps(result_record(res, rnd))))


class TestDeterminism:
    def test_byte_identical(self, capsys):
        argv = ["run", "--topology", "rgg:15:250", "--secrets", "random:0:100", "--rounds", "3", "--seed", "5",
                "--failure", "4:silent@1"]
        first = run_cli(capsys, *argv)[1]
        assert first == run_cli(capsys, *argv)[1]

    def test_output_dir(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("LIPI_OUTPUT_DIR", str(tmp_path))
        _, out, _ = run_cli(capsys, "run", "--topology", "complete:3")
        assert (tmp_path / "run-lipi.jsonl").read_text() == out
        run_cli(capsys, "run", "--topology", "complete:3", "--output", "mine.jsonl")
        assert (tmp_path / "mine.jsonl").exists()


class TestCompare:
    def test_lipi_cheaper_than_ppmp(self):
        base = ExperimentConfig(topology="complete:8")
        rows = {r["protocol"]: r for r in compare_rows([base, ExperimentConfig(protocol="ppmp", topology="complete:8")])}
        assert rows["lipi"]["mean_radio_on"] < rows["ppmp"]["mean_radio_on"]
        assert rows["ppmp"]["lipi_radio_on_savings_pct"] > 0
        assert rows["lipi"]["lipi_radio_on_savings_pct"] == 0

    def test_duplicate_protocol_zero_savings(self):
        cfg = ExperimentConfig(protocol="sss", topology="complete:5")
        rows = compare_rows([cfg, cfg])
        assert all(r["lipi_latency_savings_pct"] is None for r in rows)
        rows = compare_rows([ExperimentConfig(topology="complete:5")] * 2)
        assert [r["lipi_radio_on_savings_pct"] for r in rows] == [0, 0]

    def test_single_protocol(self, capsys):
        with pytest.raises(ConfigError):
            compare_rows([ExperimentConfig()])
        code, _, _ = run_cli(capsys, "compare", "--protocols", "lipi")
        assert code == 2

    def test_mismatched_topologies(self):
        with pytest.raises(ConfigError):
            compare_rows([ExperimentConfig(topology="complete:5"), ExperimentConfig(protocol="ppmp", topology="ring:5")])

    def test_cli_csv(self, capsys):
        code, out, _ = run_cli(capsys, "compare", "--protocols", "lipi,ppmp,nsss,sss", "--topology", "rgg:24:300",
                               "--seeds", "2")
        rows = {r["protocol"]: r for r in csv.DictReader(io.StringIO(out))}
        assert code == 0
        radio = [float(rows[p]["mean_radio_on"]) for p in ("lipi", "ppmp", "nsss", "sss")]
        assert radio == sorted(radio) and len(set(radio)) == 4
        assert cmd_compare([ExperimentConfig(), ExperimentConfig(protocol="ppmp")]).startswith("protocol,")


class TestSweep:
    @staticmethod
    def others(rows):
        return [r for r in rows if r["node_class"] == "other"]

    def test_failure_ratio_and_trend(self):
        rows = self.others(sweep_rows(ExperimentConfig(topology="rgg:24:300"), "failures", [0, 1, 2, 3, 4]))
        lat = [r["mean_latency"] for r in rows]
        assert 1.8 <= lat[1] / lat[0] <= 2.2
        assert all(a >= b for a, b in zip(lat[1:], lat[2:]))
        assert [r["aggregate"] for r in rows][0] == 300

    def test_n_axis_grows(self):
        rows = self.others(sweep_rows(ExperimentConfig(topology="rgg:10:250"), "n", [10, 30, 50, 70]))
        lat = [r["mean_latency"] for r in rows]
        assert lat == sorted(lat)
        assert [r["aggregate"] for r in rows] == [55, 465, 1275, 2485]

    def test_ntx_and_area_axes(self):
        rows = self.others(sweep_rows(ExperimentConfig(topology="complete:6"), "ntx", [1, 2, 3]))
        assert [r["value"] for r in rows] == [1, 2, 3]
        rows = self.others(sweep_rows(ExperimentConfig(topology="rgg:12:150"), "area", [150, 200]))
        assert [r["aggregate"] for r in rows] == [78, 78]

    def test_baseline_failures_sweep(self):
        rows = self.others(sweep_rows(ExperimentConfig(protocol="ppmp", topology="complete:6"), "failures", [0, 2]))
        assert all(r["status"] == "ok" for r in rows)

    def test_errors(self, capsys):
        with pytest.raises(ConfigError):
            sweep_rows(ExperimentConfig(), "n", [])
        with pytest.raises(ConfigError):
            sweep_rows(ExperimentConfig(), "colour", [1])
        with pytest.raises(ConfigError):
            sweep_rows(ExperimentConfig(topology="complete:6"), "area", [100])
        code, _, _ = run_cli(capsys, "sweep", "--axis", "n", "--values", ",")
        assert code == 2

    def test_failure_order_keeps_connectivity(self):
        topo = random_geometric(20, 300, seed=3)
        order = failure_order(topo, 6, seed=1)
        assert 1 not in order and len(set(order)) == 6
        for k in range(len(order) + 1):
            assert topo.is_connected(set(topo.nodes) - set(order[:k]))
            assert topo.diameter(set(topo.nodes) - set(order[:k])) <= topo.diameter()

    def test_failure_order_falls_back_when_stretch_is_unavoidable(self):
        # every removal from a ring stretches it; the picker still returns connected choices
        topo = ring(8)
        order = failure_order(topo, 3, seed=0)
        for k in range(4):
            assert topo.is_connected(set(topo.nodes) - set(order[:k]))
        with pytest.raises(ConfigError):
            failure_order(topo, 8, seed=0)
