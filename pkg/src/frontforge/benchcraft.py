"""Benchmark construction from localized attacks, and detector evaluation.

The benchmark keeps one representative per distinct influence trace,
restricted to the most popularly attacked contracts, and labels the public
functions executed along each trace as vulnerable. Detector reports are
scored at the function level: an attack counts as detected when the tool
flags any of its labeled functions, and only recall is computed since
unlabeled functions cannot be called false alarms.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable

from .miner import AttackTuple
from .primitives import Address
from .taint import AttackPattern, InfluenceTrace, LocalizedAttack, PatternKind


@dataclass(frozen=True, slots=True)
class VulnLabel:
    contract: Address
    selector: int
    name: str
    attack_id: str

    @property
    def function(self) -> tuple[Address, int]:
        return (self.contract, self.selector)

    def to_json(self) -> dict:
        return {
            "contract": self.contract.hex0x(),
            "selector": f"{self.selector:#010x}",
            "name": self.name,
            "attack_id": self.attack_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VulnLabel":
        return cls(
            contract=Address(obj["contract"]),
            selector=int(obj["selector"], 16),
            name=obj["name"],
            attack_id=obj["attack_id"],
        )


@dataclass(frozen=True, slots=True)
class BenchmarkEntry:
    attack: AttackTuple
    pattern: AttackPattern
    influence_trace: InfluenceTrace
    labels: frozenset[VulnLabel]

    def to_json(self) -> dict:
        return {
            "attack": self.attack.to_json(),
            "pattern": self.pattern.to_json(),
            "influence_trace": self.influence_trace.to_json(),
            "labels": sorted(
                (l.to_json() for l in self.labels),
                key=lambda x: (x["contract"], x["selector"]),
            ),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BenchmarkEntry":
        from .primitives import loc_from_json

        pattern = obj["pattern"]
        return cls(
            attack=AttackTuple.from_json(obj["attack"]),
            pattern=AttackPattern(
                kind=PatternKind(pattern["kind"]),
                sink_step=pattern["sink_step"],
                sink_location=None if pattern["sink"] is None else loc_from_json(pattern["sink"]),
            ),
            influence_trace=InfluenceTrace.from_json(obj["influence_trace"]),
            labels=frozenset(VulnLabel.from_json(l) for l in obj["labels"]),
        )


@dataclass(frozen=True, slots=True)
class Benchmark:
    entries: tuple[BenchmarkEntry, ...]

    def dump(self, fp: IO[str]) -> None:
        for e in self.entries:
            fp.write(json.dumps(e.to_json()) + "\n")

    @classmethod
    def load(cls, fp: IO[str]) -> "Benchmark":
        return cls(
            entries=tuple(
                BenchmarkEntry.from_json(json.loads(line))
                for line in fp.read().splitlines()
                if line.strip()
            )
        )


def _trace_contracts(attack: LocalizedAttack) -> set[Address]:
    out: set[Address] = set()
    for trace in attack.influence_traces or ():
        out.update(loc[0] for loc in trace.locations)
    return out


def contract_popularity(attacks: Iterable[LocalizedAttack]) -> dict[Address, int]:
    """How many distinct attacks touch each contract in their influence traces."""
    counts: dict[Address, int] = {}
    for attack in attacks:
        for contract in _trace_contracts(attack):
            counts[contract] = counts.get(contract, 0) + 1
    return counts


def select_top_and_filter(
    attacks: list[LocalizedAttack], n: int
) -> tuple[list[Address], list[LocalizedAttack]]:
    """Top-n contracts by popularity, and the attacks confined to them.

    Ties at the popularity boundary break by address order so builds are
    reproducible. The filtered set keeps attacks whose influence traces
    involve only selected contracts.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = contract_popularity(attacks)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    top = [addr for addr, _count in ranked[:n]]
    top_set = set(top)
    filtered = [
        a
        for a in attacks
        if a.influence_traces and _trace_contracts(a) <= top_set
    ]
    return top, filtered


def attack_labels(attack: LocalizedAttack) -> frozenset[VulnLabel]:
    return frozenset(
        VulnLabel(contract, sel, name, attack.attack.attack_id)
        for contract, sel, name in attack.public_functions
    )


def saturation_curve(
    pool: list[LocalizedAttack], seed: int, steps: Iterable[int] = range(1, 101)
) -> list[tuple[int, int]]:
    """Distinct vulnerable-function counts over growing samples of the pool.

    One seeded shuffle, then each percentage takes a prefix, so the curve is
    monotone non-decreasing by construction and reproducible per seed.
    A plateau suggests the exploited functions are already covered.
    """
    order = list(pool)
    random.Random(seed).shuffle(order)
    out = []
    for n in steps:
        if not 1 <= n <= 100:
            raise ValueError("sampling percentages must be within 1..100")
        prefix = order[: len(order) * n // 100]
        functions = {
            label.function for a in prefix for label in attack_labels(a)
        }
        out.append((n, len(functions)))
    return out


def dedupe_and_build(pool: list[LocalizedAttack]) -> Benchmark:
    """Build the benchmark: one entry per distinct influence trace.

    Attacks with multiple influence traces are ambiguous localization
    targets and are excluded; duplicates (same trace identity) keep the
    earliest attack in history order. Entries must label at least one
    public function.
    """
    singles = [a for a in pool if a.influence_traces and len(a.influence_traces) == 1]
    singles.sort(key=lambda a: (a.attack.i_a, a.attack.i_v, a.attack.i_p or -1))
    by_identity: dict[str, LocalizedAttack] = {}
    for a in singles:
        by_identity.setdefault(a.influence_traces[0].identity, a)
    entries = []
    for identity in sorted(by_identity):
        a = by_identity[identity]
        labels = attack_labels(a)
        if not labels:
            continue
        entries.append(
            BenchmarkEntry(
                attack=a.attack,
                pattern=a.pattern,
                influence_trace=a.influence_traces[0],
                labels=labels,
            )
        )
    return Benchmark(entries=tuple(entries))


# --- detector evaluation ------------------------------------------------------


@dataclass(frozen=True, slots=True)
class DetectorReport:
    tool: str
    flagged: frozenset[tuple[Address, int]]  # (contract, selector)

    def to_json(self) -> dict:
        return {
            "tool": self.tool,
            "flagged": [
                {"contract": c.hex0x(), "selector": f"{s:#010x}"}
                for c, s in sorted(self.flagged)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DetectorReport":
        return cls(
            tool=obj["tool"],
            flagged=frozenset(
                (Address(f["contract"]), int(f["selector"], 16)) for f in obj["flagged"]
            ),
        )


@dataclass(frozen=True, slots=True)
class EvalResult:
    tool: str
    tp: int
    fn: int
    recall: Fraction
    per_attack: dict[str, str]  # attack_id -> "TP" | "FN"

    def to_json(self) -> dict:
        return {
            "tool": self.tool,
            "tp": self.tp,
            "fn": self.fn,
            "recall": {
                "numerator": self.recall.numerator,
                "denominator": self.recall.denominator,
                "value": float(self.recall) if self.fn or self.tp else 0.0,
            },
            "per_attack": dict(sorted(self.per_attack.items())),
        }

    def table(self) -> str:
        rows = [
            ("tool", self.tool),
            ("attacks", str(self.tp + self.fn)),
            ("true positives", str(self.tp)),
            ("false negatives", str(self.fn)),
            ("recall", f"{self.recall} ({float(self.recall):.4f})" if self.tp + self.fn else "n/a"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def evaluate_detector(benchmark: Benchmark, report: DetectorReport) -> EvalResult:
    """Function-level recall: an attack is detected when any label is flagged."""
    tp = 0
    per_attack: dict[str, str] = {}
    for entry in benchmark.entries:
        hit = any(label.function in report.flagged for label in entry.labels)
        per_attack[entry.attack.attack_id] = "TP" if hit else "FN"
        tp += hit
    total = len(benchmark.entries)
    recall = Fraction(tp, total) if total else Fraction(0)
    return EvalResult(
        tool=report.tool, tp=tp, fn=total - tp, recall=recall, per_attack=per_attack
    )
