"""Transaction history storage, sliding windows, and scenario replays.

A history is a genesis snapshot plus blocks of transactions. Per-index
pre-states and traces are derived lazily by replaying from genesis and
cached under a lock, so window workers can read concurrently.

The two scenario replays implement the core comparison: the attack
scenario is the history exactly as executed; the attack-free scenario
re-simulates the victim transaction first, from the state just before the
front-running transaction, then runs the attacker transactions after it.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import IO, Iterable

from .assets import ProfitVector, profits_of
from .primitives import Address, digest_hex
from .vm import ExecutionTrace, TransactionMsg, TxStatus, WorldState
from .vm.engine import continue_sequence, fork_overlay, kernel, simulate_sequence


@dataclass(frozen=True, slots=True)
class Block:
    number: int
    txs: tuple[TransactionMsg, ...]

    def __post_init__(self) -> None:
        ids = [tx.id for tx in self.txs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate transaction ids in block {self.number}")

    def to_json(self) -> dict:
        return {"number": self.number, "txs": [tx.to_json() for tx in self.txs]}

    @classmethod
    def from_json(cls, obj: dict) -> "Block":
        return cls(obj["number"], tuple(TransactionMsg.from_json(t) for t in obj["txs"]))


class History:
    """Immutable transaction history with a lazily built replay cache."""

    def __init__(self, genesis: WorldState, blocks: Iterable[Block]) -> None:
        self.genesis = genesis
        self.blocks = tuple(blocks)
        for i, b in enumerate(self.blocks):
            if b.number != i:
                raise ValueError("block numbers must increase from 0 by 1")
        self._txs: list[tuple[int, TransactionMsg]] = [
            (b.number, tx) for b in self.blocks for tx in b.txs
        ]
        self._block_start: list[int] = []
        n = 0
        for b in self.blocks:
            self._block_start.append(n)
            n += len(b.txs)
        self._lock = threading.Lock()
        self._post_states: list[WorldState] = []
        self._traces: list[ExecutionTrace] = []

    # --- indexing ---------------------------------------------------------

    def tx_count(self) -> int:
        return len(self._txs)

    def tx_at(self, i: int) -> TransactionMsg:
        return self._txs[i][1]

    def block_of_tx(self, i: int) -> int:
        return self._txs[i][0]

    def block_tx_range(self, first_block: int, last_block: int) -> range:
        """Global indices of transactions in blocks [first_block, last_block]."""
        if first_block >= len(self.blocks):
            return range(0, 0)
        start = self._block_start[first_block]
        if last_block + 1 < len(self.blocks):
            end = self._block_start[last_block + 1]
        else:
            end = len(self._txs)
        return range(start, end)

    # --- replay cache -----------------------------------------------------

    def _ensure(self, upto: int) -> None:
        with self._lock:
            state = self._post_states[-1] if self._post_states else self.genesis
            while len(self._post_states) <= upto:
                i = len(self._post_states)
                state, trace = kernel.execute_transaction(state, self.tx_at(i))
                self._post_states.append(state)
                self._traces.append(trace)

    def pre_state(self, i: int) -> WorldState:
        """World state immediately before transaction i executed."""
        if i == 0:
            return self.genesis
        self._ensure(i - 1)
        return self._post_states[i - 1]

    def trace_at(self, i: int) -> ExecutionTrace:
        self._ensure(i)
        return self._traces[i]

    def final_state(self) -> WorldState:
        if not self._txs:
            return self.genesis
        self._ensure(len(self._txs) - 1)
        return self._post_states[-1]

    # --- serialization ----------------------------------------------------

    def dump(self, fp: IO[str]) -> None:
        fp.write(json.dumps(self.genesis.to_json()) + "\n")
        for b in self.blocks:
            fp.write(json.dumps(b.to_json()) + "\n")

    def dumps(self) -> str:
        import io

        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, fp: IO[str]) -> "History":
        lines = [line for line in fp.read().splitlines() if line.strip()]
        if not lines:
            raise ValueError("empty history file")
        genesis = WorldState.from_json(json.loads(lines[0]))
        blocks = [Block.from_json(json.loads(line)) for line in lines[1:]]
        return cls(genesis, blocks)

    def digest(self) -> str:
        return digest_hex(self.dumps().encode())


@dataclass(frozen=True)
class Window:
    """One contiguous slice of blocks with globally indexed transactions."""

    index: int
    first_block: int
    last_block: int  # inclusive
    entries: tuple[tuple[int, TransactionMsg], ...]
    history: History = field(repr=False)

    def pre_state(self, i: int) -> WorldState:
        return self.history.pre_state(i)


def windows(history: History, size_blocks: int, offset_blocks: int) -> list[Window]:
    """Sliding windows of ``size_blocks`` blocks every ``offset_blocks``.

    A trailing short window is emitted only when it reaches past every
    earlier window's end, so offset-1 sliding yields exactly the classic
    n-size+1 full windows while nothing at the end of history is lost for
    larger offsets or histories shorter than one window.
    """
    if size_blocks < 1 or offset_blocks < 1:
        raise ValueError("window size and offset must be >= 1")
    n = len(history.blocks)
    out: list[Window] = []
    prev_end = -1
    k = 0
    while k * offset_blocks < n:
        first = k * offset_blocks
        last = min(first + size_blocks, n) - 1
        if last > prev_end:
            entries = tuple(
                (i, history.tx_at(i)) for i in history.block_tx_range(first, last)
            )
            out.append(Window(len(out), first, last, entries, history))
            prev_end = last
        k += 1
    return out


@dataclass(frozen=True, slots=True)
class ScenarioProfits:
    attacker_pv: ProfitVector
    victim_pv: ProfitVector
    traces: tuple[ExecutionTrace, ...]


@dataclass(frozen=True, slots=True)
class Infeasible:
    """Attack-free replay hit a protocol violation; the tuple is unreportable."""

    reason: str


def attacker_actor_set(history: History, i_a: int) -> frozenset[Address]:
    """Sender of the front transaction plus the first contract it invokes."""
    tx = history.tx_at(i_a)
    actors = {tx.sender}
    if tx.target in history.genesis.contracts:
        actors.add(tx.target)
    return frozenset(actors)


def attack_scenario_profits(
    history: History,
    i_a: int,
    i_v: int,
    i_p: int | None = None,
    attacker_accounts: frozenset[Address] | None = None,
    victim_accounts: frozenset[Address] | None = None,
) -> ScenarioProfits:
    """Profits exactly as the attack executed in history.

    Effects of unrelated transactions between the tuple members are part of
    the historical pre-states, so only the tuple's own traces are summed.
    Actor sets default to the attack model's: the front sender plus its
    first invoked contract versus the victim sender.
    """
    if attacker_accounts is None:
        attacker_accounts = attacker_actor_set(history, i_a)
    if victim_accounts is None:
        victim_accounts = frozenset({history.tx_at(i_v).sender})
    idxs = [i_a, i_v] + ([i_p] if i_p is not None else [])
    traces = tuple(history.trace_at(i) for i in idxs)
    return ScenarioProfits(
        attacker_pv=profits_of(traces, attacker_accounts),
        victim_pv=profits_of(traces, victim_accounts),
        traces=traces,
    )


def attack_free_scenario_profits(
    history: History,
    i_a: int,
    i_v: int,
    i_p: int | None = None,
    attacker_accounts: frozenset[Address] | None = None,
    victim_accounts: frozenset[Address] | None = None,
) -> ScenarioProfits | Infeasible:
    """Simulate the victim-first ordering from the state before the attack.

    Runs T_v, then T_a, then T_a_p on the snapshot preceding T_a. A
    protocol violation in any simulated trace makes the scenario
    infeasible (the reordering cannot be replayed), which callers treat
    as "properties unsatisfied".
    """
    if attacker_accounts is None:
        attacker_accounts = attacker_actor_set(history, i_a)
    if victim_accounts is None:
        victim_accounts = frozenset({history.tx_at(i_v).sender})
    txs = [history.tx_at(i_v), history.tx_at(i_a)]
    if i_p is not None:
        txs.append(history.tx_at(i_p))
    traces, _overlay = simulate_sequence(history.pre_state(i_a), txs)
    return _scenario_from_traces(traces, attacker_accounts, victim_accounts)


def _scenario_from_traces(
    traces: list[ExecutionTrace],
    attacker_accounts: frozenset[Address],
    victim_accounts: frozenset[Address],
) -> ScenarioProfits | Infeasible:
    for t in traces:
        if t.status is TxStatus.PROTOCOL_VIOLATION:
            return Infeasible(f"protocol violation replaying {t.tx_id}")
    traces_t = tuple(traces)
    return ScenarioProfits(
        attacker_pv=profits_of(traces_t, attacker_accounts),
        victim_pv=profits_of(traces_t, victim_accounts),
        traces=traces_t,
    )


class FreeScenarioLab:
    """Caches the shared [T_v, T_a] prefix of attack-free replays.

    Algorithm extension over i_p re-simulates the same two transactions
    for every candidate; forking the scratch overlay after the prefix
    keeps results identical while skipping the repeated work.
    """

    def __init__(self, history: History) -> None:
        self.history = history
        self._prefix: dict[tuple[int, int], tuple[list[ExecutionTrace], object]] = {}

    def pair(
        self,
        i_a: int,
        i_v: int,
        attacker_accounts: frozenset[Address],
        victim_accounts: frozenset[Address],
    ) -> ScenarioProfits | Infeasible:
        traces, _ = self._base(i_a, i_v)
        return _scenario_from_traces(list(traces), attacker_accounts, victim_accounts)

    def triple(
        self,
        i_a: int,
        i_v: int,
        i_p: int,
        attacker_accounts: frozenset[Address],
        victim_accounts: frozenset[Address],
    ) -> ScenarioProfits | Infeasible:
        traces, overlay = self._base(i_a, i_v)
        fork = fork_overlay(overlay)
        tail = continue_sequence(fork, [self.history.tx_at(i_p)])
        return _scenario_from_traces(
            list(traces) + tail, attacker_accounts, victim_accounts
        )

    def _base(self, i_a: int, i_v: int):
        key = (i_a, i_v)
        hit = self._prefix.get(key)
        if hit is None:
            txs = [self.history.tx_at(i_v), self.history.tx_at(i_a)]
            traces, overlay = simulate_sequence(self.history.pre_state(i_a), txs)
            hit = (traces, overlay)
            self._prefix[key] = hit
        return hit
