"""Attack mining: enumerate transaction tuples per window, prune, validate.

For every ordered pair (T_a, T_v) in a window the miner checks whether the
historical execution (attack scenario) versus the victim-first replay
(attack-free scenario) shows the attacker gaining and the victim losing.
A pair that already satisfies both properties is recorded as a 2-tuple and
the profit-collection search is skipped for it; otherwise later
transactions are tried as T_a_p and the first success ends the search for
that pair.

Pruning never drops a reportable attack on conflict-free histories: a pair
is skipped only when the senders coincide, when either historical trace is
a protocol violation, or when T_a wrote nothing that T_v def-clear reads,
in which case the ordering cannot have changed the victim's execution.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO

from .assets import ActorSet, ProfitVector, satisfies_properties
from .chain import (
    FreeScenarioLab,
    History,
    Infeasible,
    Window,
    attack_free_scenario_profits,
    attack_scenario_profits,
    attacker_actor_set,
    windows,
)
from .primitives import Address, digest_hex
from .vm import ExecutionTrace, TxStatus, shared_access_sets

BRUTE_FORCE_TX_BOUND = 20


@dataclass(frozen=True, slots=True)
class MinerConfig:
    window_size_blocks: int = 3
    window_offset_blocks: int = 1
    per_window_timeout: float = 60.0
    parallelism: int = 16

    def __post_init__(self) -> None:
        if min(self.window_size_blocks, self.window_offset_blocks, self.parallelism) < 1:
            raise ValueError("window size, offset, and parallelism must be >= 1")
        if self.per_window_timeout <= 0:
            raise ValueError("per-window timeout must be positive")

    def to_json(self) -> dict:
        return {
            "window_size_blocks": self.window_size_blocks,
            "window_offset_blocks": self.window_offset_blocks,
            "per_window_timeout": self.per_window_timeout,
            "parallelism": self.parallelism,
        }


@dataclass(frozen=True, slots=True)
class Evidence:
    """Profit vectors for both sides in both scenarios."""

    attacker_attack: ProfitVector
    attacker_free: ProfitVector
    victim_attack: ProfitVector
    victim_free: ProfitVector

    def to_json(self) -> dict:
        return {
            "attacker": {
                "attack": self.attacker_attack.to_json(),
                "free": self.attacker_free.to_json(),
            },
            "victim": {
                "attack": self.victim_attack.to_json(),
                "free": self.victim_free.to_json(),
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Evidence":
        return cls(
            attacker_attack=ProfitVector.from_json(obj["attacker"]["attack"]),
            attacker_free=ProfitVector.from_json(obj["attacker"]["free"]),
            victim_attack=ProfitVector.from_json(obj["victim"]["attack"]),
            victim_free=ProfitVector.from_json(obj["victim"]["free"]),
        )


@dataclass(frozen=True, slots=True)
class AttackTuple:
    t_a: str
    t_v: str
    t_ap: str | None
    i_a: int
    i_v: int
    i_p: int | None
    window_id: int
    actors: ActorSet
    evidence: Evidence

    @property
    def id_triple(self) -> tuple[str, str, str]:
        return (self.t_a, self.t_v, self.t_ap or "")

    @property
    def attack_id(self) -> str:
        return digest_hex(self.t_a.encode(), self.t_v.encode(), (self.t_ap or "").encode())

    def to_json(self) -> dict:
        return {
            "attack_id": self.attack_id,
            "t_a": self.t_a,
            "t_v": self.t_v,
            "t_ap": self.t_ap,
            "i_a": self.i_a,
            "i_v": self.i_v,
            "i_p": self.i_p,
            "window_id": self.window_id,
            "attacker_accounts": sorted(a.hex0x() for a in self.actors.attacker_accounts),
            "victim_accounts": sorted(a.hex0x() for a in self.actors.victim_accounts),
            "evidence": self.evidence.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttackTuple":
        return cls(
            t_a=obj["t_a"],
            t_v=obj["t_v"],
            t_ap=obj["t_ap"],
            i_a=obj["i_a"],
            i_v=obj["i_v"],
            i_p=obj["i_p"],
            window_id=obj["window_id"],
            actors=ActorSet(
                attacker_accounts=frozenset(Address(a) for a in obj["attacker_accounts"]),
                victim_accounts=frozenset(Address(a) for a in obj["victim_accounts"]),
            ),
            evidence=Evidence.from_json(obj["evidence"]),
        )


@dataclass(frozen=True, slots=True)
class WindowResult:
    window_id: int
    attacks: tuple[AttackTuple, ...]
    timed_out: bool


@dataclass(frozen=True, slots=True)
class AttackDataset:
    attacks: tuple[AttackTuple, ...]
    timed_out_windows: tuple[int, ...]
    config: MinerConfig
    history_digest: str = ""

    def dump(self, fp: IO[str]) -> None:
        summary = {
            "type": "summary",
            "history_digest": self.history_digest,
            "config": self.config.to_json(),
            "attack_count": len(self.attacks),
            "timed_out_windows": list(self.timed_out_windows),
        }
        fp.write(json.dumps(summary) + "\n")
        for a in self.attacks:
            fp.write(json.dumps(a.to_json()) + "\n")

    @classmethod
    def load(cls, fp: IO[str]) -> "AttackDataset":
        lines = [line for line in fp.read().splitlines() if line.strip()]
        if not lines:
            raise ValueError("empty attack dataset file")
        summary = json.loads(lines[0])
        if summary.get("type") != "summary":
            raise ValueError("attack dataset file must start with a summary record")
        cfg = summary["config"]
        return cls(
            attacks=tuple(AttackTuple.from_json(json.loads(line)) for line in lines[1:]),
            timed_out_windows=tuple(summary["timed_out_windows"]),
            config=MinerConfig(
                window_size_blocks=cfg["window_size_blocks"],
                window_offset_blocks=cfg["window_offset_blocks"],
                per_window_timeout=cfg["per_window_timeout"],
                parallelism=cfg["parallelism"],
            ),
            history_digest=summary["history_digest"],
        )


@dataclass(frozen=True, slots=True)
class PruneMeta:
    sender_a: Address
    sender_v: Address
    attacker_accounts: frozenset[Address]
    victim_accounts: frozenset[Address]
    sender_p: Address | None = None


def should_prune(trace_a: ExecutionTrace, trace_v: ExecutionTrace, meta: PruneMeta) -> bool:
    """Skip tuples that cannot satisfy the attack properties.

    The conflict test is the necessary condition: the attacker transaction
    must have committed a write to some shared key the victim reads without
    a preceding same-transaction write, otherwise swapping their order
    leaves the victim's execution untouched.
    """
    if meta.sender_a == meta.sender_v:
        return True
    if meta.attacker_accounts & meta.victim_accounts:
        return True  # no distinct victim; properties are unsatisfiable
    if meta.sender_p is not None and meta.sender_p not in meta.attacker_accounts:
        return True
    if (
        trace_a.status is TxStatus.PROTOCOL_VIOLATION
        or trace_v.status is TxStatus.PROTOCOL_VIOLATION
    ):
        return True
    v_reads, _ = shared_access_sets(trace_v)
    _, a_writes = shared_access_sets(trace_a)
    return not (a_writes & v_reads)


class _WindowMiner:
    """Shared machinery for the pruned miner and the brute-force oracle."""

    def __init__(self, window: Window) -> None:
        self.window = window
        self.history = window.history
        self.lab = FreeScenarioLab(self.history)
        self._access: dict[int, tuple[set, set]] = {}

    def actor_sets(self, i_a: int, i_v: int) -> ActorSet:
        return ActorSet(
            attacker_accounts=attacker_actor_set(self.history, i_a),
            victim_accounts=frozenset({self.history.tx_at(i_v).sender}),
        )

    def check(self, i_a: int, i_v: int, i_p: int | None) -> AttackTuple | None:
        """Validate the two properties for one tuple; None if unsatisfied."""
        actors = self.actor_sets(i_a, i_v)
        attack = attack_scenario_profits(
            self.history, i_a, i_v, i_p, actors.attacker_accounts, actors.victim_accounts
        )
        if i_p is None:
            free = self.lab.pair(
                i_a, i_v, actors.attacker_accounts, actors.victim_accounts
            )
        else:
            free = self.lab.triple(
                i_a, i_v, i_p, actors.attacker_accounts, actors.victim_accounts
            )
        if isinstance(free, Infeasible):
            return None
        if not satisfies_properties(
            attack.attacker_pv,
            free.attacker_pv,
            attack.victim_pv,
            free.victim_pv,
            actors,
        ):
            return None
        ta = self.history.tx_at(i_a)
        tv = self.history.tx_at(i_v)
        return AttackTuple(
            t_a=ta.id,
            t_v=tv.id,
            t_ap=None if i_p is None else self.history.tx_at(i_p).id,
            i_a=i_a,
            i_v=i_v,
            i_p=i_p,
            window_id=self.window.index,
            actors=actors,
            evidence=Evidence(
                attacker_attack=attack.attacker_pv,
                attacker_free=free.attacker_pv,
                victim_attack=attack.victim_pv,
                victim_free=free.victim_pv,
            ),
        )

    def _sets(self, i: int) -> tuple[set, set] | None:
        """Memoized (def-clear reads, committed writes) of the historical trace."""
        if i not in self._access:
            trace = self.history.trace_at(i)
            if trace.status is TxStatus.PROTOCOL_VIOLATION:
                self._access[i] = None
            else:
                self._access[i] = shared_access_sets(trace)
        return self._access[i]

    def prune(self, i_a: int, i_v: int, i_p: int | None) -> bool:
        # Same conditions as should_prune, with the per-trace access sets
        # memoized across the O(n^2) pair loop.
        sender_a = self.history.tx_at(i_a).sender
        sender_v = self.history.tx_at(i_v).sender
        if sender_a == sender_v:
            return True
        attacker_accounts = attacker_actor_set(self.history, i_a)
        if sender_v in attacker_accounts:
            return True
        if i_p is not None and self.history.tx_at(i_p).sender not in attacker_accounts:
            return True
        sets_a = self._sets(i_a)
        sets_v = self._sets(i_v)
        if sets_a is None or sets_v is None:
            return True  # protocol violation on either side
        return not (sets_a[1] & sets_v[0])

    def prune_same_sender_only(self, i_a: int, i_v: int, i_p: int | None) -> bool:
        return self.history.tx_at(i_a).sender == self.history.tx_at(i_v).sender

    def run(self, prune, deadline: float | None) -> WindowResult:
        attacks: list[AttackTuple] = []
        idxs = [i for i, _tx in self.window.entries]
        n = len(idxs)
        for a_pos in range(n):
            i_a = idxs[a_pos]
            for v_pos in range(a_pos + 1, n):
                if deadline is not None and time.monotonic() > deadline:
                    return WindowResult(self.window.index, tuple(attacks), True)
                i_v = idxs[v_pos]
                if prune(i_a, i_v, None):
                    continue
                found = self.check(i_a, i_v, None)
                if found is not None:
                    attacks.append(found)
                    continue  # 2-tuple wins; never extend this pair
                for p_pos in range(v_pos + 1, n):
                    if deadline is not None and time.monotonic() > deadline:
                        return WindowResult(self.window.index, tuple(attacks), True)
                    i_p = idxs[p_pos]
                    if prune(i_a, i_v, i_p):
                        continue
                    found = self.check(i_a, i_v, i_p)
                    if found is not None:
                        attacks.append(found)
                        break  # stop extending this (i_a, i_v)
        return WindowResult(self.window.index, tuple(attacks), False)


def mine_window(window: Window, config: MinerConfig) -> WindowResult:
    """Mine one window with pruning; partial results carry a timeout flag."""
    miner = _WindowMiner(window)
    deadline = time.monotonic() + config.per_window_timeout
    return miner.run(miner.prune, deadline)


def brute_force_mine(window: Window) -> WindowResult:
    """Oracle twin of mine_window with only the same-sender prune.

    Bounded to small windows; used by tests to show pruning loses nothing.
    """
    if len(window.entries) > BRUTE_FORCE_TX_BOUND:
        raise ValueError(
            f"brute force limited to {BRUTE_FORCE_TX_BOUND} transactions per window"
        )
    miner = _WindowMiner(window)
    return miner.run(miner.prune_same_sender_only, None)


def mine_history(history: History, config: MinerConfig) -> AttackDataset:
    """Mine every window, in parallel, and merge results deterministically.

    The same attack surfaces in up to size/offset overlapping windows;
    duplicates are collapsed on the transaction-id triple, keeping the
    earliest window's instance, and the output is canonically sorted.
    """
    wins = windows(history, config.window_size_blocks, config.window_offset_blocks)
    if config.parallelism > 1 and len(wins) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(lambda w: mine_window(w, config), wins))
    else:
        results = [mine_window(w, config) for w in wins]

    seen: dict[tuple[str, str, str], AttackTuple] = {}
    timed_out = []
    for res in sorted(results, key=lambda r: r.window_id):
        if res.timed_out:
            timed_out.append(res.window_id)
        for attack in res.attacks:
            seen.setdefault(attack.id_triple, attack)
    attacks = tuple(sorted(seen.values(), key=lambda a: a.id_triple))
    return AttackDataset(
        attacks=attacks,
        timed_out_windows=tuple(timed_out),
        config=config,
        history_digest=history.digest(),
    )


def revalidate(attack: AttackTuple, history: History) -> Evidence | None:
    """Recompute both scenarios from history; None if properties fail now."""
    actors = attack.actors
    scen = attack_scenario_profits(
        history,
        attack.i_a,
        attack.i_v,
        attack.i_p,
        actors.attacker_accounts,
        actors.victim_accounts,
    )
    free = attack_free_scenario_profits(
        history,
        attack.i_a,
        attack.i_v,
        attack.i_p,
        actors.attacker_accounts,
        actors.victim_accounts,
    )
    if isinstance(free, Infeasible):
        return None
    if not satisfies_properties(
        scen.attacker_pv, free.attacker_pv, scen.victim_pv, free.victim_pv, actors
    ):
        return None
    return Evidence(
        attacker_attack=scen.attacker_pv,
        attacker_free=free.attacker_pv,
        victim_attack=scen.victim_pv,
        victim_free=free.victim_pv,
    )
