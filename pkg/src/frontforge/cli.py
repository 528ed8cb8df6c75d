"""Command-line pipeline: fixtures -> mine -> localize -> bench -> eval.

Stages communicate through JSON-lines files and are digest-chained: each
output records the SHA-256 of the inputs it was derived from, and the next
stage refuses mismatched artifacts. Outputs are deterministic for identical
inputs and flags; run manifests (written next to each output) are the only
files carrying timing information.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import time
from pathlib import Path

import click

from . import benchcraft, fixtures
from .chain import History
from .miner import AttackDataset, MinerConfig, mine_history
from .taint import (
    AttackPattern,
    InfluenceTrace,
    LocalizedAttack,
    NoDivergence,
    PatternKind,
    localize_attack,
)
from .primitives import Address, loc_from_json


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(content)
    os.replace(tmp, path)


def _write_manifest(
    out_path: Path,
    command: str,
    config: dict,
    inputs: dict[str, str],
    outputs: list[str],
    started: float,
    notes: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "started_unix": round(started, 3),
        "finished_unix": round(time.time(), 3),
        "duration_s": round(time.time() - started, 3),
        "notes": notes or {},
    }
    _atomic_write(
        out_path.with_name(out_path.name + ".manifest.json"),
        json.dumps(manifest, indent=2) + "\n",
    )


def _load_history(path: Path) -> History:
    try:
        with path.open() as fp:
            return History.load(fp)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"malformed history file {path}: {exc}") from exc


@click.group()
def main() -> None:
    """Front-running attack mining and vulnerability localization toolkit."""


@main.command("fixtures")
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("."), show_default=True)
def cmd_fixtures(out_dir: Path) -> None:
    """Write the built-in attack scenario histories as JSON-lines files."""
    started = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, history in fixtures.all_fixtures().items():
        path = out_dir / f"{name}.jsonl"
        _atomic_write(path, history.dumps())
        outputs.append(str(path))
        click.echo(f"wrote {path}")
    _write_manifest(out_dir / "fixtures", "fixtures", {}, {}, outputs, started)


@main.command("mine")
@click.argument("history_path", type=click.Path(exists=True, path_type=Path))
@click.option("-o", "--out", type=click.Path(path_type=Path), default=Path("attacks.jsonl"), show_default=True)
@click.option("--window-blocks", default=3, show_default=True)
@click.option("--offset-blocks", default=1, show_default=True)
@click.option("--timeout-secs", default=60.0, show_default=True)
@click.option("--parallelism", default=16, show_default=True, help="overridden by FORGE_PARALLELISM")
def cmd_mine(
    history_path: Path,
    out: Path,
    window_blocks: int,
    offset_blocks: int,
    timeout_secs: float,
    parallelism: int,
) -> None:
    """Mine front-running attacks from a transaction history."""
    started = time.time()
    env_par = os.environ.get("FORGE_PARALLELISM")
    if env_par:
        try:
            parallelism = int(env_par)
        except ValueError as exc:
            raise click.ClickException(f"bad FORGE_PARALLELISM: {env_par!r}") from exc
    config = MinerConfig(
        window_size_blocks=window_blocks,
        window_offset_blocks=offset_blocks,
        per_window_timeout=timeout_secs,
        parallelism=parallelism,
    )
    history = _load_history(history_path)
    dataset = mine_history(history, config)
    # Chain on the raw input file, not the parsed form.
    dataset = dataclasses.replace(dataset, history_digest=_file_digest(history_path))
    buf = io.StringIO()
    dataset.dump(buf)
    _atomic_write(out, buf.getvalue())
    for wid in dataset.timed_out_windows:
        click.echo(f"warning: window {wid} timed out; partial results kept", err=True)
    click.echo(f"found {len(dataset.attacks)} attacks -> {out}")
    _write_manifest(
        out,
        "mine",
        config.to_json(),
        {str(history_path): dataset.history_digest},
        [str(out)],
        started,
        notes={"timed_out_windows": list(dataset.timed_out_windows)},
    )


def _localized_to_json(loc: LocalizedAttack) -> dict:
    return {
        "attack": loc.attack.to_json(),
        "pattern": None if loc.pattern is None else loc.pattern.to_json(),
        "skipped": loc.skipped,
        "influence_traces": [
            {"trace": t.to_json(), "step_indices": list(t.step_indices)}
            for t in (loc.influence_traces or ())
        ],
        "public_functions": [
            {"contract": c.hex0x(), "selector": f"{s:#010x}", "name": n}
            for c, s, n in loc.public_functions
        ],
    }


def _localized_from_json(obj: dict) -> LocalizedAttack:
    from .miner import AttackTuple

    pattern = obj["pattern"]
    traces = None
    if not obj["skipped"]:
        traces = tuple(
            InfluenceTrace.from_json(t["trace"], tuple(t["step_indices"]))
            for t in obj["influence_traces"]
        )
    return LocalizedAttack(
        attack=AttackTuple.from_json(obj["attack"]),
        pattern=None
        if pattern is None
        else AttackPattern(
            kind=PatternKind(pattern["kind"]),
            sink_step=pattern["sink_step"],
            sink_location=None if pattern["sink"] is None else loc_from_json(pattern["sink"]),
        ),
        influence_traces=traces,
        public_functions=tuple(
            (Address(f["contract"]), int(f["selector"], 16), f["name"])
            for f in obj["public_functions"]
        ),
    )


def load_localized(path: Path) -> tuple[dict, list[LocalizedAttack]]:
    lines = [line for line in path.read_text().splitlines() if line.strip()]
    if not lines:
        raise click.ClickException(f"empty localized file {path}")
    summary = json.loads(lines[0])
    if summary.get("type") != "summary":
        raise click.ClickException(f"{path} does not start with a summary record")
    return summary, [_localized_from_json(json.loads(line)) for line in lines[1:]]


@main.command("localize")
@click.argument("history_path", type=click.Path(exists=True, path_type=Path))
@click.argument("attacks_path", type=click.Path(exists=True, path_type=Path))
@click.option("-o", "--out", type=click.Path(path_type=Path), default=Path("localized.jsonl"), show_default=True)
def cmd_localize(history_path: Path, attacks_path: Path, out: Path) -> None:
    """Classify mined attacks and extract their influence traces."""
    started = time.time()
    history_digest = _file_digest(history_path)
    with attacks_path.open() as fp:
        try:
            dataset = AttackDataset.load(fp)
        except ValueError as exc:
            raise click.ClickException(f"malformed attack dataset {attacks_path}: {exc}") from exc
    if dataset.history_digest != history_digest:
        raise click.ClickException(
            f"attack dataset was mined from a different history "
            f"(expected digest {dataset.history_digest[:16]}..., "
            f"got {history_digest[:16]}...)"
        )
    history = _load_history(history_path)
    lines = [
        json.dumps(
            {
                "type": "summary",
                "history_digest": history_digest,
                "attacks_digest": _file_digest(attacks_path),
                "attack_count": len(dataset.attacks),
            }
        )
    ]
    skipped = 0
    for attack in dataset.attacks:
        try:
            loc = localize_attack(attack, history)
        except NoDivergence:
            # The victim ran identically in both scenarios; nothing to mark.
            loc = LocalizedAttack(attack, None, None, ())
        skipped += loc.skipped
        lines.append(json.dumps(_localized_to_json(loc)))
    _atomic_write(out, "\n".join(lines) + "\n")
    click.echo(f"localized {len(dataset.attacks)} attacks ({skipped} griefing, skipped) -> {out}")
    _write_manifest(
        out,
        "localize",
        {},
        {str(history_path): history_digest, str(attacks_path): _file_digest(attacks_path)},
        [str(out)],
        started,
    )


@main.command("bench")
@click.argument("localized_path", type=click.Path(exists=True, path_type=Path))
@click.option("-o", "--out", type=click.Path(path_type=Path), default=Path("benchmark.jsonl"), show_default=True)
@click.option("--top-n", default=1200, show_default=True, help="popularly attacked contracts to keep")
@click.option("--saturation-out", type=click.Path(path_type=Path), default=None,
              help="also write the label-saturation curve JSON here")
@click.option("--seed", default=0, show_default=True, help="shuffle seed for the saturation curve")
def cmd_bench(localized_path: Path, out: Path, top_n: int, saturation_out: Path | None, seed: int) -> None:
    """Build the deduplicated vulnerability benchmark from localized attacks."""
    started = time.time()
    _summary, localized = load_localized(localized_path)
    top, pool = benchcraft.select_top_and_filter(localized, top_n)
    benchmark = benchcraft.dedupe_and_build(pool)
    buf = io.StringIO()
    benchmark.dump(buf)
    _atomic_write(out, buf.getvalue())
    outputs = [str(out)]
    if saturation_out is not None:
        curve = benchcraft.saturation_curve(pool, seed=seed)
        _atomic_write(
            saturation_out,
            json.dumps({"seed": seed, "points": [{"percent": p, "functions": c} for p, c in curve]}, indent=2) + "\n",
        )
        outputs.append(str(saturation_out))
    click.echo(
        json.dumps(
            {
                "entries": len(benchmark.entries),
                "top_contracts": len(top),
                "pool_attacks": len(pool),
                "out": str(out),
            }
        )
    )
    _write_manifest(
        out,
        "bench",
        {"top_n": top_n, "seed": seed},
        {str(localized_path): _file_digest(localized_path)},
        outputs,
        started,
    )


@main.command("eval")
@click.argument("benchmark_path", type=click.Path(exists=True, path_type=Path))
@click.argument("report_path", type=click.Path(exists=True, path_type=Path))
def cmd_eval(benchmark_path: Path, report_path: Path) -> None:
    """Score a detector report against the benchmark (recall only)."""
    with benchmark_path.open() as fp:
        benchmark = benchcraft.Benchmark.load(fp)
    try:
        report = benchcraft.DetectorReport.from_json(json.loads(report_path.read_text()))
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"malformed detector report {report_path}: {exc}") from exc
    result = benchcraft.evaluate_detector(benchmark, report)
    click.echo(result.table(), err=True)
    click.echo(json.dumps(result.to_json(), indent=2))


if __name__ == "__main__":
    main()
