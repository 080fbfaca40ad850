# SPDX-License-Identifier: MIT

import csv
import io
import json

import pytest

from rezone.__main__ import bundled_scenarios, main


BROKEN = "config:\n  deployment: fast\n"


class TestList:
    def test_list(self, capsys):
        """
        list prints every bundled scenario.
        """
        assert 0 == main(["rezone-sim", "list"])

        out = capsys.readouterr().out.split()

        assert bundled_scenarios() == out
        assert "sync-1" in out
        assert "attack-a5" in out


class TestRun:
    def test_bundled_with_outputs(self, tmp_path, capsys):
        """
        Running a bundled scenario writes the report, trace, and cost table
        and exits 0.
        """
        report, trace, cost = (
            tmp_path / "r.json",
            tmp_path / "t.jsonl",
            tmp_path / "c.csv",
        )

        rv = main(
            [
                "rezone-sim",
                "run",
                "cost-batched",
                "--report",
                str(report),
                "--trace",
                str(trace),
                "--cost",
                str(cost),
            ]
        )

        assert 0 == rv
        assert "cost-batched: ok (fair)" in capsys.readouterr().out
        assert json.loads(report.read_text())["ok"]
        assert trace.read_text().count("\n") > 0
        assert 3 == len(list(csv.DictReader(io.StringIO(cost.read_text()))))

    def test_config_override(self, tmp_path):
        """
        --config replaces the deployment.
        """
        report = tmp_path / "r.json"

        main(
            [
                "rezone-sim",
                "run",
                "sync-1",
                "--config",
                "norz",
                "--seed",
                "9",
                "--report",
                str(report),
            ]
        )

        rec = json.loads(report.read_text())
        assert "norz" == rec["deployment"]
        assert 9 == rec["seed"]

    def test_attack(self, capsys):
        """
        Attack outcomes are printed.
        """
        assert 0 == main(["rezone-sim", "run", "attack-a5"])

        assert "A5_TCB_TAMPER: blocked" in capsys.readouterr().out

    def test_invalid_scenario(self, tmp_path, capsys):
        """
        Invalid scenarios exit 2 and name the field.
        """
        p = tmp_path / "broken.yaml"
        p.write_text(BROKEN)

        assert 2 == main(["rezone-sim", "run", str(p)])
        assert (
            "invalid scenario: config.deployment" in capsys.readouterr().err
        )

    def test_missing_file(self, tmp_path, capsys):
        """
        Unreadable files exit 2.
        """
        assert 2 == main(["rezone-sim", "run", str(tmp_path / "nope.yaml")])
        assert "nope.yaml" in capsys.readouterr().err

    def test_budget(self, monkeypatch, capsys):
        """
        Running out of exploration budget exits 1.
        """
        monkeypatch.setenv("REZONE_SIM_BUDGET", "5")

        assert 1 == main(["rezone-sim", "run", "sync-2", "--explore"])
        assert "exceeded 5 states" in capsys.readouterr().err

    def test_usage(self):
        """
        A command is required.
        """
        with pytest.raises(SystemExit) as ei:
            main(["rezone-sim"])

        assert 2 == ei.value.code
