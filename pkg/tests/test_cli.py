"""End-to-end pipeline through the command-line interface."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from frontforge.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def pipeline_dir(tmp_path, runner):
    res = runner.invoke(main, ["fixtures", "--out-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    return tmp_path


def _mine(runner, d: Path, history="fixtures.jsonl", out="attacks.jsonl", *extra):
    return runner.invoke(
        main, ["mine", str(d / history), "-o", str(d / out), *extra]
    )


class TestFixturesCommand:
    def test_writes_all_histories(self, pipeline_dir):
        names = {p.name for p in pipeline_dir.glob("*.jsonl")}
        assert {"relayguard.jsonl", "miniswap.jsonl", "gasgrief.jsonl", "fixtures.jsonl"} <= names

    def test_history_files_parse(self, pipeline_dir):
        from frontforge.chain import History

        with (pipeline_dir / "fixtures.jsonl").open() as fp:
            hist = History.load(fp)
        assert hist.tx_count() == 5


class TestMine:
    def test_fixture_history_yields_two_attacks(self, pipeline_dir, runner):
        res = _mine(runner, pipeline_dir)
        assert res.exit_code == 0, res.output
        lines = (pipeline_dir / "attacks.jsonl").read_text().splitlines()
        summary = json.loads(lines[0])
        assert summary["attack_count"] == 2
        assert len(lines) == 3

    def test_empty_history_exits_zero(self, tmp_path, runner):
        empty = tmp_path / "empty.jsonl"
        empty.write_text('{"balances": {}, "nonces": {}, "contracts": [], "storage": []}\n')
        res = runner.invoke(main, ["mine", str(empty), "-o", str(tmp_path / "a.jsonl")])
        assert res.exit_code == 0
        summary = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
        assert summary["attack_count"] == 0

    def test_malformed_history_exits_nonzero(self, tmp_path, runner):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("this is not json\n")
        res = runner.invoke(main, ["mine", str(bad), "-o", str(tmp_path / "a.jsonl")])
        assert res.exit_code != 0

    def test_timeout_warns_but_exits_zero(self, pipeline_dir, runner):
        res = _mine(runner, pipeline_dir, "fixtures.jsonl", "t.jsonl", "--timeout-secs", "1e-9")
        assert res.exit_code == 0
        assert "timed out" in res.output

    def test_env_parallelism_override(self, pipeline_dir, runner, monkeypatch):
        monkeypatch.setenv("FORGE_PARALLELISM", "2")
        res = _mine(runner, pipeline_dir, out="p.jsonl")
        assert res.exit_code == 0
        manifest = json.loads((pipeline_dir / "p.jsonl.manifest.json").read_text())
        assert manifest["config"]["parallelism"] == 2

    def test_bad_env_parallelism_rejected(self, pipeline_dir, runner, monkeypatch):
        monkeypatch.setenv("FORGE_PARALLELISM", "many")
        res = _mine(runner, pipeline_dir, out="q.jsonl")
        assert res.exit_code != 0

    def test_manifest_written(self, pipeline_dir, runner):
        res = _mine(runner, pipeline_dir, out="m.jsonl")
        assert res.exit_code == 0
        manifest = json.loads((pipeline_dir / "m.jsonl.manifest.json").read_text())
        assert manifest["command"] == "mine"
        assert manifest["config"]["window_size_blocks"] == 3
        assert list(manifest["inputs"])[0].endswith("fixtures.jsonl")


class TestLocalize:
    def test_pipeline_and_digest_chain(self, pipeline_dir, runner):
        assert _mine(runner, pipeline_dir).exit_code == 0
        res = runner.invoke(
            main,
            [
                "localize",
                str(pipeline_dir / "fixtures.jsonl"),
                str(pipeline_dir / "attacks.jsonl"),
                "-o",
                str(pipeline_dir / "localized.jsonl"),
            ],
        )
        assert res.exit_code == 0, res.output
        lines = (pipeline_dir / "localized.jsonl").read_text().splitlines()
        records = [json.loads(l) for l in lines[1:]]
        kinds = sorted(r["pattern"]["kind"] for r in records)
        assert kinds == ["computation_alteration", "path_condition_alteration"]
        for r in records:
            assert len(r["influence_traces"]) == 1
            trace = r["influence_traces"][0]["trace"]
            assert set(trace) == {"source", "sink", "steps", "identity"}

    def test_refuses_mismatched_history(self, pipeline_dir, runner):
        assert _mine(runner, pipeline_dir).exit_code == 0
        res = runner.invoke(
            main,
            [
                "localize",
                str(pipeline_dir / "miniswap.jsonl"),  # wrong history
                str(pipeline_dir / "attacks.jsonl"),
                "-o",
                str(pipeline_dir / "nope.jsonl"),
            ],
        )
        assert res.exit_code != 0
        assert "different history" in res.output

    def test_griefing_marked_skipped(self, pipeline_dir, runner):
        assert _mine(runner, pipeline_dir, history="gasgrief.jsonl", out="ga.jsonl").exit_code == 0
        res = runner.invoke(
            main,
            [
                "localize",
                str(pipeline_dir / "gasgrief.jsonl"),
                str(pipeline_dir / "ga.jsonl"),
                "-o",
                str(pipeline_dir / "gl.jsonl"),
            ],
        )
        assert res.exit_code == 0, res.output
        record = json.loads((pipeline_dir / "gl.jsonl").read_text().splitlines()[1])
        assert record["skipped"] is True
        assert record["pattern"]["kind"] == "gas_estimation_griefing"
        assert record["influence_traces"] == []


@pytest.fixture()
def full_pipeline(pipeline_dir, runner):
    d = pipeline_dir
    assert _mine(runner, d).exit_code == 0
    assert runner.invoke(
        main,
        ["localize", str(d / "fixtures.jsonl"), str(d / "attacks.jsonl"),
         "-o", str(d / "localized.jsonl")],
    ).exit_code == 0
    assert runner.invoke(
        main,
        ["bench", str(d / "localized.jsonl"), "-o", str(d / "benchmark.jsonl"),
         "--saturation-out", str(d / "saturation.json")],
    ).exit_code == 0
    return d


class TestBenchAndEval:
    def test_benchmark_entries(self, full_pipeline):
        lines = (full_pipeline / "benchmark.jsonl").read_text().splitlines()
        assert len(lines) == 2
        curve = json.loads((full_pipeline / "saturation.json").read_text())
        assert curve["points"][-1] == {"percent": 100, "functions": 4}

    def _eval(self, runner, d, flagged):
        report = d / "report.json"
        report.write_text(json.dumps({"tool": "demo", "flagged": flagged}))
        return runner.invoke(main, ["eval", str(d / "benchmark.jsonl"), str(report)])

    def test_eval_full_report(self, full_pipeline, runner):
        entries = [json.loads(l) for l in (full_pipeline / "benchmark.jsonl").read_text().splitlines()]
        flagged = [
            {"contract": l["contract"], "selector": l["selector"]}
            for e in entries
            for l in e["labels"]
        ]
        res = self._eval(runner, full_pipeline, flagged)
        assert res.exit_code == 0
        payload = json.loads(res.stdout)
        assert payload["recall"]["value"] == 1.0

    def test_eval_empty_report(self, full_pipeline, runner):
        res = self._eval(runner, full_pipeline, [])
        payload = json.loads(res.stdout)
        assert payload["tp"] == 0 and payload["fn"] == 2

    def test_eval_malformed_report(self, full_pipeline, runner):
        report = full_pipeline / "broken.json"
        report.write_text("{}")
        res = runner.invoke(main, ["eval", str(full_pipeline / "benchmark.jsonl"), str(report)])
        assert res.exit_code != 0


class TestReproducibility:
    def test_identical_inputs_identical_outputs(self, pipeline_dir, runner):
        d = pipeline_dir
        for out in ("r1.jsonl", "r2.jsonl"):
            assert _mine(runner, d, out=out).exit_code == 0
        assert (d / "r1.jsonl").read_bytes() == (d / "r2.jsonl").read_bytes()
        for out in ("l1.jsonl", "l2.jsonl"):
            assert runner.invoke(
                main,
                ["localize", str(d / "fixtures.jsonl"), str(d / "r1.jsonl"),
                 "-o", str(d / out)],
            ).exit_code == 0
        assert (d / "l1.jsonl").read_bytes() == (d / "l2.jsonl").read_bytes()


class TestBenchOnSkippedOnly:
    def test_griefing_only_dataset_builds_empty_benchmark(self, pipeline_dir, runner):
        d = pipeline_dir
        assert _mine(runner, d, "gasgrief.jsonl", "ga.jsonl").exit_code == 0
        assert runner.invoke(
            main,
            ["localize", str(d / "gasgrief.jsonl"), str(d / "ga.jsonl"),
             "-o", str(d / "gl.jsonl")],
        ).exit_code == 0
        res = runner.invoke(
            main, ["bench", str(d / "gl.jsonl"), "-o", str(d / "gb.jsonl")]
        )
        assert res.exit_code == 0, res.output
        assert json.loads(res.output.splitlines()[-1])["entries"] == 0
        assert (d / "gb.jsonl").read_text() == ""
