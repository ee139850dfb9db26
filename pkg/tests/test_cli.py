import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from spherepeft.checks import FAMILIES, run_checks
from spherepeft.cli import main

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, **changes):
    data = json.loads((CONFIG_DIR / "toy.json").read_text())
    data.update(changes)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def strip_clock(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "wall_clock_seconds"}


class TestCheck:
    def test_all_pass(self, capsys, validate):
        code, out = run(["check"], capsys)
        payload = json.loads(out)
        validate(payload, "check-report")
        assert code == 0 and payload["passed"]
        assert {p["family"] for p in payload["properties"]} == set(FAMILIES)
        assert all(p["observed"] is not None for p in payload["properties"])

    def test_filter_family(self, capsys):
        code, out = run(["check", "--filter", "tproduct"], capsys)
        assert code == 0
        assert {p["family"] for p in json.loads(out)["properties"]} == {"tproduct"}

    def test_filter_property(self, capsys):
        code, out = run(["check", "--filter", "cayley_orthogonality"], capsys)
        assert code == 0 and len(json.loads(out)["properties"]) == 1

    def test_filter_no_match(self, capsys):
        code, _ = run(["check", "--filter", "nothing"], capsys)
        assert code == 2

    def test_injected_fault_fails(self, capsys):
        code, out = run(["check", "--inject-fault", "cayley"], capsys)
        payload = json.loads(out)
        failed = {p["name"] for p in payload["properties"] if not p["passed"]}
        assert code == 1
        assert "cayley_orthogonality" in failed
        # the fault only touches the Cayley map
        assert all(p["family"] in ("hyperspherical", "ortho_param") for p in payload["properties"] if not p["passed"])

    def test_unknown_fault_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["check", "--inject-fault", "nope"])
        assert exc.value.code == 2

    def test_run_checks_api(self):
        assert all(r.passed for r in run_checks("dcrc"))
        with pytest.raises(ValueError):
            run_checks(faults=("nope",))


class TestTrainCommand:
    def test_writes_valid_report(self, tmp_path, capsys, validate):
        cfg = write_config(tmp_path, iterations=200)
        code, out = run(["train", cfg, "--out", tmp_path / "run"], capsys)
        assert code == 0
        summary = json.loads(out)
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        validate(report, "train-report")
        assert len(report["losses"]) == 200
        assert summary["trainable_to_frozen_ratio"] == report["parameters"]["trainable_to_frozen_ratio"] == 116 / 320
        assert (tmp_path / "run" / "checkpoint.bin").exists()

    def test_rerun_identical(self, tmp_path, capsys):
        cfg = write_config(tmp_path, iterations=30)
        run(["train", cfg, "--out", tmp_path / "a"], capsys)
        run(["train", cfg, "--out", tmp_path / "b"], capsys)
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        assert json.dumps(strip_clock(a), sort_keys=True) == json.dumps(strip_clock(b), sort_keys=True)

    def test_resume_junction(self, tmp_path, capsys):
        run(["train", write_config(tmp_path, iterations=40), "--out", tmp_path / "full"], capsys)
        run(["train", write_config(tmp_path, iterations=20), "--out", tmp_path / "first"], capsys)
        code, _ = run(["train", tmp_path / "cfg.json", "--out", tmp_path / "second",
                       "--resume", tmp_path / "first" / "checkpoint.bin"], capsys)
        assert code == 0
        full = json.loads((tmp_path / "full" / "report.json").read_text())["losses"]
        first = json.loads((tmp_path / "first" / "report.json").read_text())["losses"]
        second = json.loads((tmp_path / "second" / "report.json").read_text())
        assert second["start_iteration"] == 20
        assert abs(second["losses"][0] - full[20]) <= 1e-10
        assert max(abs(x - y) for x, y in zip(first + second["losses"], full)) <= 1e-10

    def test_seed_override(self, tmp_path, capsys, monkeypatch):
        cfg = write_config(tmp_path, iterations=2)
        monkeypatch.setenv("SEED_OVERRIDE", "7")
        run(["train", cfg, "--out", tmp_path / "s"], capsys)
        assert json.loads((tmp_path / "s" / "report.json").read_text())["seed"] == 7
        monkeypatch.setenv("SEED_OVERRIDE", "x")
        code, _ = run(["train", cfg, "--out", tmp_path / "s"], capsys)
        assert code == 2

    def test_unknown_key(self, tmp_path, capsys):
        code, _ = run(["train", write_config(tmp_path, learning_rate=1.0), "--out", tmp_path], capsys)
        assert code == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exits_one(self, tmp_path, capsys):
        code, _ = run(["train", write_config(tmp_path, iterations=5, lr=1e300), "--out", tmp_path / "d"], capsys)
        assert code == 1


class TestEnergyReportCommand:
    def test_zero_init(self, tmp_path, capsys, validate):
        code, out = run(["energy-report", write_config(tmp_path)], capsys)
        payload = json.loads(out)
        validate(payload, "energy-report")
        assert code == 0
        assert all(e["gap_pre_dcrc"] <= 1e-12 and e["gap_adjusted"] <= 1e-12 for e in payload["layers"])

    def test_trained_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, iterations=50)
        run(["train", cfg, "--out", tmp_path / "run"], capsys)
        code, out = run(["energy-report", cfg, tmp_path / "run" / "checkpoint.bin", "--out", tmp_path / "e.json"],
                        capsys)
        assert code == 0
        payload = json.loads((tmp_path / "e.json").read_text())
        assert payload == json.loads(out)
        assert all(e["rel_gap_pre_dcrc"] <= 1e-8 for e in payload["layers"] if e["tower"] == "text")

    def test_tampered_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, iterations=3)
        run(["train", cfg, "--out", tmp_path / "run"], capsys)
        ck = tmp_path / "run" / "checkpoint.bin"
        raw = bytearray(ck.read_bytes())
        raw[-3] ^= 0xFF
        ck.write_bytes(bytes(raw))
        code, _ = run(["energy-report", cfg, ck], capsys)
        assert code == 2


class TestParamCountCommand:
    def test_toy(self, tmp_path, capsys, validate):
        code, out = run(["param-count", write_config(tmp_path)], capsys)
        payload = json.loads(out)
        validate(payload, "param-count")
        assert code == 0
        assert payload["counts"]["trainable_total"] == 116

    def test_clip_like(self, capsys):
        code, out = run(["param-count", CONFIG_DIR / "clip_like.json"], capsys)
        payload = json.loads(out)
        assert code == 0
        assert payload["reference_fraction"] == 0.04 and payload["note"]


class TestSelftest:
    def test_tprod_selftest(self, capsys, validate):
        code, out = run(["tprod-selftest"], capsys)
        payload = json.loads(out)
        validate(payload, "check-report")
        assert code == 0 and {p["family"] for p in payload["properties"]} == {"tproduct"}

    def test_console_entry_point(self):
        env = dict(os.environ)
        env.pop("SEED_OVERRIDE", None)
        proc = subprocess.run([sys.executable, "-m", "spherepeft.cli", "check", "--filter", "tensor_core"],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["passed"]

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
