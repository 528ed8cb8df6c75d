"""Benchmark construction and detector evaluation semantics."""

from __future__ import annotations

import io
import random
from fractions import Fraction

from frontforge import fixtures
from frontforge.assets import ActorSet, ProfitVector
from frontforge.benchcraft import (
    Benchmark,
    DetectorReport,
    VulnLabel,
    contract_popularity,
    dedupe_and_build,
    evaluate_detector,
    saturation_curve,
    select_top_and_filter,
)
from frontforge.miner import AttackTuple, Evidence
from frontforge.primitives import Address
from frontforge.taint import (
    AttackPattern,
    InfluenceTrace,
    LocalizedAttack,
    PatternKind,
    localize_attack,
    trace_identity,
)

_EMPTY = ProfitVector.of({})


def mk_attack(n: int) -> AttackTuple:
    return AttackTuple(
        t_a=f"a{n:02d}",
        t_v=f"v{n:02d}",
        t_ap=None,
        i_a=2 * n,
        i_v=2 * n + 1,
        i_p=None,
        window_id=0,
        actors=ActorSet(
            frozenset({Address.from_int(0xA000 + n)}),
            frozenset({Address.from_int(0xB000 + n)}),
        ),
        evidence=Evidence(_EMPTY, _EMPTY, _EMPTY, _EMPTY),
    )


def mk_localized(
    n: int,
    contracts: list[int],
    functions: list[tuple[int, int, str]],
    n_traces: int = 1,
    path_salt: int | None = None,
) -> LocalizedAttack:
    """Synthetic localized attack touching the given contracts/functions."""
    locs = tuple(
        (Address.from_int(c), (path_salt if path_salt is not None else n) * 10 + k)
        for k, c in enumerate(contracts)
    )
    traces = tuple(
        InfluenceTrace(
            source_location=locs[0],
            source_key=("storage", Address.from_int(contracts[0]), t),
            sink_location=locs[-1],
            locations=locs,
            step_indices=tuple(range(len(locs))),
            identity=trace_identity(locs) + (f"#{t}" if t else ""),
        )
        for t in range(n_traces)
    )
    return LocalizedAttack(
        attack=mk_attack(n),
        pattern=AttackPattern(PatternKind.COMPUTATION_ALTERATION, len(locs) - 1, locs[-1]),
        influence_traces=traces if n_traces else None,
        public_functions=tuple(
            (Address.from_int(c), sel, name) for c, sel, name in functions
        ),
    )


class TestPopularity:
    def test_no_attacks(self):
        assert contract_popularity([]) == {}

    def test_one_attack_two_contracts(self):
        a = mk_localized(1, [0x10, 0x20], [(0x10, 1, "f")])
        counts = contract_popularity([a])
        assert counts == {Address.from_int(0x10): 1, Address.from_int(0x20): 1}

    def test_counts_distinct_attacks(self):
        attacks = [mk_localized(i, [0x10] if i < 3 else [0x20], [(0x10, 1, "f")]) for i in range(5)]
        counts = contract_popularity(attacks)
        assert counts[Address.from_int(0x10)] == 3
        assert counts[Address.from_int(0x20)] == 2


class TestTopNFilter:
    def test_n_at_least_total_keeps_single_trace_attacks(self):
        attacks = [mk_localized(i, [0x10 + i], [(0x10 + i, 1, "f")]) for i in range(4)]
        top, pool = select_top_and_filter(attacks, 100)
        assert len(top) == 4 and len(pool) == 4

    def test_tie_break_by_address_order(self):
        a1 = mk_localized(1, [0x30], [(0x30, 1, "f")])
        a2 = mk_localized(2, [0x10], [(0x10, 1, "f")])
        a3 = mk_localized(3, [0x20], [(0x20, 1, "f")])
        top, pool = select_top_and_filter([a1, a2, a3], 1)
        assert top == [Address.from_int(0x10)]
        assert pool == [a2]

    def test_filter_requires_all_contracts_selected(self):
        spanning = mk_localized(1, [0x10, 0x20], [(0x10, 1, "f")])
        local = mk_localized(2, [0x10], [(0x10, 1, "f")])
        _top, pool = select_top_and_filter([spanning, local, local], 1)
        assert spanning not in pool

    def test_paper_scale_top_n_accepted(self):
        attacks = [mk_localized(i, [0x10], [(0x10, 1, "f")]) for i in range(3)]
        top, pool = select_top_and_filter(attacks, 1200)
        assert pool == attacks


class TestSaturation:
    def _pool(self):
        # 50 attacks over 5 functions, each function heavily duplicated
        return [
            mk_localized(i, [0x10], [(0x10, i % 5, f"f{i % 5}")], path_salt=i)
            for i in range(50)
        ]

    def test_full_sample_counts_all_labels(self):
        curve = saturation_curve(self._pool(), seed=0)
        assert curve[-1] == (100, 5)

    def test_monotone_for_any_seed(self):
        pool = self._pool()
        for seed in range(10):
            curve = saturation_curve(pool, seed=seed)
            counts = [c for _n, c in curve]
            assert counts == sorted(counts)

    def test_plateau_on_duplicate_heavy_pool(self):
        curve = saturation_curve(self._pool(), seed=0)
        tail = [c for n, c in curve if n > 70]
        assert len(set(tail)) == 1  # constant over the last 30 points

    def test_empty_prefixes_count_zero(self):
        pool = [mk_localized(1, [0x10], [(0x10, 1, "f")])]
        curve = saturation_curve(pool, seed=3)
        assert curve[0] == (1, 0)  # 1% of one attack rounds down to nothing


class TestDedupeAndBuild:
    def test_duplicate_identity_keeps_earliest(self):
        a = mk_localized(1, [0x10], [(0x10, 1, "f")], path_salt=7)
        b = mk_localized(2, [0x10], [(0x10, 1, "f")], path_salt=7)
        assert a.influence_traces[0].identity == b.influence_traces[0].identity
        bench = dedupe_and_build([b, a])
        assert len(bench.entries) == 1
        assert bench.entries[0].attack.t_a == "a01"

    def test_multi_trace_attacks_excluded(self):
        multi = mk_localized(1, [0x10], [(0x10, 1, "f")], n_traces=2)
        single = mk_localized(2, [0x20], [(0x20, 1, "g")])
        bench = dedupe_and_build([multi, single])
        assert [e.attack.t_a for e in bench.entries] == ["a02"]

    def test_skipped_griefing_excluded(self):
        skipped = LocalizedAttack(
            attack=mk_attack(3),
            pattern=AttackPattern(PatternKind.GAS_ESTIMATION_GRIEFING, None, None),
            influence_traces=None,
            public_functions=(),
        )
        assert dedupe_and_build([skipped]).entries == ()

    def test_idempotent(self):
        pool = [
            mk_localized(i, [0x10 + i % 3], [(0x10 + i % 3, i % 4, "f")], path_salt=i % 6)
            for i in range(12)
        ]
        bench1 = dedupe_and_build(pool)
        # feed the surviving entries back through as localized attacks
        survivors = [
            LocalizedAttack(
                attack=e.attack,
                pattern=e.pattern,
                influence_traces=(e.influence_trace,),
                public_functions=tuple(
                    (l.contract, l.selector, l.name) for l in e.labels
                ),
            )
            for e in bench1.entries
        ]
        bench2 = dedupe_and_build(survivors)
        assert {e.influence_trace.identity for e in bench2.entries} == {
            e.influence_trace.identity for e in bench1.entries
        }
        assert len(bench2.entries) == len(bench1.entries)

    def test_fixture_pipeline_labels_come_from_trace_frames(
        self, combined_attacks, combined_history
    ):
        localized = [localize_attack(a, combined_history) for a in combined_attacks]
        _top, pool = select_top_and_filter(localized, 1200)
        bench = dedupe_and_build(pool)
        assert len(bench.entries) == 2
        by_pattern = {e.pattern.kind: e for e in bench.entries}
        relay_labels = {
            (l.contract, l.name)
            for l in by_pattern[PatternKind.PATH_CONDITION_ALTERATION].labels
        }
        assert relay_labels == {(fixtures.RG_RELAY, "relay")}
        swap_labels = {
            (l.contract, l.name)
            for l in by_pattern[PatternKind.COMPUTATION_ALTERATION].labels
        }
        assert swap_labels == {
            (fixtures.MS_SWAP, "swap"),
            (fixtures.MS_PAIR, "getReserves"),
            (fixtures.MS_PAIR, "doSwap"),
        }
        # every label's function is executed by a frame on the trace
        for entry in bench.entries:
            trace_v = combined_history.trace_at(entry.attack.i_v)
            frame_functions = {
                (f.contract, f.selector)
                for i in entry.influence_trace.step_indices
                for f in (trace_v.frame_of(i),)
                if f.public
            }
            assert {l.function for l in entry.labels} == frame_functions

    def test_benchmark_file_roundtrip(self, combined_attacks, combined_history):
        localized = [localize_attack(a, combined_history) for a in combined_attacks]
        bench = dedupe_and_build(localized)
        buf = io.StringIO()
        bench.dump(buf)
        assert Benchmark.load(io.StringIO(buf.getvalue())) == bench


def _bench(n_entries: int = 4, labels_per_entry: int = 2) -> Benchmark:
    pool = [
        mk_localized(
            i,
            [0x10 + i],
            [(0x10 + i, 100 * i + k, f"f{k}") for k in range(labels_per_entry)],
        )
        for i in range(n_entries)
    ]
    return dedupe_and_build(pool)


class TestEvaluateDetector:
    def test_full_report_recall_one(self):
        bench = _bench()
        report = DetectorReport(
            "all", frozenset(l.function for e in bench.entries for l in e.labels)
        )
        result = evaluate_detector(bench, report)
        assert result.recall == 1 and result.fn == 0

    def test_empty_report_recall_zero(self):
        bench = _bench()
        result = evaluate_detector(bench, DetectorReport("none", frozenset()))
        assert result.recall == 0 and result.tp == 0
        assert set(result.per_attack.values()) == {"FN"}

    def test_one_of_two_labels_on_one_of_four(self):
        bench = _bench(n_entries=4, labels_per_entry=2)
        one_label = next(iter(sorted(bench.entries[0].labels, key=lambda l: l.selector)))
        result = evaluate_detector(bench, DetectorReport("one", frozenset({one_label.function})))
        assert result.recall == Fraction(1, 4)
        assert result.tp == 1 and result.fn == 3

    def test_recall_monotone_in_flagged_set(self):
        bench = _bench(n_entries=6, labels_per_entry=2)
        universe = sorted({l.function for e in bench.entries for l in e.labels})
        rng = random.Random(99)
        for _ in range(50):
            small = frozenset(f for f in universe if rng.random() < 0.4)
            extra = frozenset(f for f in universe if rng.random() < 0.4)
            r_small = evaluate_detector(bench, DetectorReport("s", small))
            r_big = evaluate_detector(bench, DetectorReport("b", small | extra))
            assert r_big.recall >= r_small.recall

    def test_result_json_and_table(self):
        bench = _bench(n_entries=2, labels_per_entry=1)
        result = evaluate_detector(bench, DetectorReport("t", frozenset()))
        obj = result.to_json()
        assert obj["recall"]["numerator"] == 0
        assert "recall" in result.table()

    def test_report_roundtrip(self):
        report = DetectorReport(
            "x", frozenset({(Address.from_int(5), 0xAB), (Address.from_int(6), 1)})
        )
        assert DetectorReport.from_json(report.to_json()) == report

    def test_vuln_label_roundtrip(self):
        label = VulnLabel(Address.from_int(9), 0x1234, "withdraw", "deadbeef")
        assert VulnLabel.from_json(label.to_json()) == label
