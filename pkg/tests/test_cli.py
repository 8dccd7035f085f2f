import json
import subprocess
import sys

import numpy as np
import pytest

from combqfi.cli import main

PHI = float(np.pi / 2)


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def base_config(**over):
    doc = {
        "schema_version": 1,
        "process": {
            "kind": "composed",
            "parts": [{"kind": "rz"}, {"kind": "amplitude_damping", "p": 0.4}],
        },
        "N": 2,
        "phi": PHI,
        "strategies": ["par", "seq"],
        "validate_oracle": False,
    }
    doc.update(over)
    return doc


class TestRun:
    def test_run_writes_values(self, tmp_path):
        cfg = write(tmp_path, "c.json", base_config())
        out = tmp_path / "out.json"
        assert main(["run", cfg, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert abs(doc["results"]["par"]["value"] - 2.25) < 1e-6
        assert doc["results"]["seq"]["value"] > doc["results"]["par"]["value"]

    def test_benchmark_values_with_oracle(self, tmp_path):
        cfg = write(
            tmp_path,
            "c.json",
            base_config(
                process={
                    "kind": "composed",
                    "parts": [{"kind": "phase_flip", "p": 0.5}, {"kind": "rx"}],
                },
                strategies=["seq", "swi"],
                validate_oracle=True,
            ),
        )
        out = tmp_path / "out.json"
        assert main(["run", cfg, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert abs(doc["results"]["seq"]["value"] - 4.0) < 1e-3
        assert abs(doc["results"]["swi"]["value"] - 1.5) < 1e-3
        assert doc["results"]["seq"]["oracle_gap"] < 1e-4

    def test_malformed_json_exit_3(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"schema_version": 1')
        assert main(["run", str(p)]) == 3

    def test_unknown_set_exit_3(self, tmp_path):
        cfg = write(tmp_path, "c.json", base_config(strategies=["teleport"]))
        assert main(["run", cfg]) == 3

    def test_wrong_schema_exit_3(self, tmp_path):
        cfg = write(tmp_path, "c.json", base_config(schema_version=99))
        assert main(["run", cfg]) == 3

    def test_n_guard_exit_3(self, tmp_path):
        cfg = write(tmp_path, "c.json", base_config(N=4, strategies=["sup"]))
        assert main(["run", cfg]) == 3

    def test_console_script_entry(self, tmp_path):
        cfg = write(tmp_path, "c.json", base_config(strategies=["par"]))
        proc = subprocess.run(
            [sys.executable, "-m", "combqfi.cli", "run", cfg],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["results"]["par"]["value"] > 0


class TestSweep:
    def test_empty_grid_exit_3(self, tmp_path):
        cfg = write(
            tmp_path, "c.json", base_config(sweep={"parameter": "p", "grid": []})
        )
        assert main(["sweep", cfg]) == 3

    def test_missing_sweep_section_exit_3(self, tmp_path):
        cfg = write(tmp_path, "c.json", base_config())
        assert main(["sweep", cfg]) == 3

    def test_sweep_monotone_and_deterministic(self, tmp_path):
        doc = base_config(
            process={"kind": "nonidentical_ad_pair", "p1": 0.4, "p2": 0.2},
            strategies=["par", "seq"],
            sweep={"parameter": "p2", "grid": [0.1, 0.2]},
        )
        cfg = write(tmp_path, "c.json", doc)
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        assert main(["sweep", cfg, "--out", str(out1)]) == 0
        assert main(["sweep", cfg, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        lines = out1.read_text().strip().splitlines()
        assert lines[0].split(",")[0] == "grid_value"
        for row in lines[1:]:
            cells = row.split(",")
            assert cells[-1] == "ok"
            assert float(cells[1]) <= float(cells[2]) + 1e-6  # par <= seq

    def test_phi_sweep(self, tmp_path):
        doc = base_config(
            strategies=["par"], sweep={"parameter": "phi", "grid": [0.5, 1.0]}
        )
        cfg = write(tmp_path, "c.json", doc)
        out = tmp_path / "a.csv"
        assert main(["sweep", cfg, "--out", str(out)]) == 0
        rows = out.read_text().strip().splitlines()
        assert len(rows) == 3


class TestValidate:
    def test_roundtrip_strategy_export(self, tmp_path):
        from combqfi.cli import export_strategy, load_strategy
        from combqfi.metrology_zoo import ad_phase_channel
        from combqfi.strategy_spaces import StrategySetSpec
        from combqfi.strategy_synthesis import optimal_strategy, purify_strategy
        from combqfi.task_qfi import product_comb, task_qfi

        fc = product_comb(ad_phase_channel(0.4, PHI), 2)
        spec = StrategySetSpec.qubits("seq", 2)
        res = task_qfi(fc, spec)
        s = purify_strategy(optimal_strategy(fc, spec, res))
        path = tmp_path / "strategy.json"
        export_strategy(s, str(path))
        loaded = load_strategy(str(path))
        assert np.allclose(loaded.marginal.entries, s.marginal.entries, atol=1e-12)
        assert np.allclose(loaded.purification, s.purification, atol=1e-12)

        cfg = write(tmp_path, "c.json", base_config(strategies=["seq"]))
        rc = main(["validate", str(path), cfg])
        assert rc == 0
