"""Vulnerability localization: attack-altered data, pattern classification,
dynamic taint propagation, and influence-trace extraction.

All analyses run over the victim transaction's attack-scenario trace. Taint
moves through data flow only: stack operands per opcode, storage writes to
later reads inside the trace, call arguments into callee frames, and return
words back out. Copies (DUP/SWAP) are transparent, so pure stack plumbing
never shows up in a slice. Control dependence enters exactly once, when a
path-condition attack picks the diverging branch as the sink.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .chain import History
from .miner import AttackTuple
from .primitives import (
    SharedKey,
    canonical_json,
    digest_hex,
    key_from_json,
    key_to_json,
    loc_from_json,
    loc_to_json,
)
from .vm import ExecutionTrace, TxStatus
from .vm.trace import (
    committed_write_occurrences,
    def_clear_read_occurrences,
    transfer_location_sequence,
    transfer_write_keys,
)


class LocalizationError(ValueError):
    pass


class NoDivergence(LocalizationError):
    """The victim executed identically in both scenarios; nothing to localize."""


@dataclass(frozen=True, slots=True)
class AttackAlteredKey:
    """Shared data written by the attacker and def-clear read by the victim."""

    key: SharedKey
    written_at: tuple[tuple, ...]  # locations in the attacker's trace
    read_at: tuple[int, ...]  # step indices in the victim's attack trace


def attack_altered_data(attack: AttackTuple, history: History) -> list[AttackAlteredKey]:
    """Intersect the attacker's committed writes with the victim's def-clear reads.

    Pruning already guaranteed a conflict for every validated attack, so an
    empty result means the dataset and history disagree.
    """
    trace_a = history.trace_at(attack.i_a)
    trace_v = history.trace_at(attack.i_v)
    writes: dict[SharedKey, list[tuple]] = {}
    for key, loc, _idx in committed_write_occurrences(trace_a):
        writes.setdefault(key, []).append(loc)
    reads: dict[SharedKey, list[int]] = {}
    for key, idx in def_clear_read_occurrences(trace_v):
        reads.setdefault(key, []).append(idx)
    out = [
        AttackAlteredKey(key, tuple(writes[key]), tuple(reads[key]))
        for key in sorted(writes.keys() & reads.keys())
    ]
    if not out:
        raise LocalizationError(
            f"validated attack {attack.attack_id} has no altered data; "
            "dataset and history are inconsistent"
        )
    return out


# --- attack patterns ---------------------------------------------------------


class PatternKind(enum.Enum):
    PATH_CONDITION_ALTERATION = "path_condition_alteration"
    COMPUTATION_ALTERATION = "computation_alteration"
    GAS_ESTIMATION_GRIEFING = "gas_estimation_griefing"


@dataclass(frozen=True, slots=True)
class AttackPattern:
    kind: PatternKind
    sink_step: int | None  # step index in the victim's attack trace
    sink_location: tuple | None

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "sink": None if self.sink_location is None else loc_to_json(self.sink_location),
            "sink_step": self.sink_step,
        }


def classify_pattern(trace_attack: ExecutionTrace, trace_free: ExecutionTrace) -> AttackPattern:
    """Classify how the attack changed the victim's execution and pick the sink.

    Out-of-gas only under attack is griefing (no sink). Otherwise compare the
    committed transfer-location sequences of the two runs: a positional
    difference means the execution path changed (sink = the last branch both
    runs reached at the same location but took differently); identical
    locations with a differing amount mean the profit computation itself was
    skewed (sink = the first transfer whose amount changed).
    """
    if trace_attack.status is TxStatus.OUT_OF_GAS and trace_free.status is not TxStatus.OUT_OF_GAS:
        return AttackPattern(PatternKind.GAS_ESTIMATION_GRIEFING, None, None)

    seq_a = transfer_location_sequence(trace_attack)
    seq_f = transfer_location_sequence(trace_free)
    if seq_a != seq_f:
        sink = _divergence_branch(trace_attack, trace_free)
        return AttackPattern(
            PatternKind.PATH_CONDITION_ALTERATION, sink, trace_attack.steps[sink].location
        )

    for j, (ta, tf) in enumerate(zip(trace_attack.transfers, trace_free.transfers)):
        if ta.amount != tf.amount or (ta.asset, ta.frm, ta.to) != (tf.asset, tf.frm, tf.to):
            sink = _committed_transfer_steps(trace_attack)[j]
            return AttackPattern(
                PatternKind.COMPUTATION_ALTERATION, sink, trace_attack.steps[sink].location
            )
    raise NoDivergence("victim transfers are identical in both scenarios")


def _committed_transfer_steps(trace: ExecutionTrace) -> list[int]:
    return [
        s.index
        for s in trace.steps
        if s.transfer is not None and trace.step_committed(s.index)
    ]


def _divergence_branch(trace_attack: ExecutionTrace, trace_free: ExecutionTrace) -> int:
    """Walk both traces in lockstep; return the diverging branch step index.

    The sink is the last branch step the two runs executed at the same
    location but resolved differently, before their step sequences separate.
    If the separation was not driven by a recorded branch (computed jumps,
    frame failures), the last step common to both runs is used.
    """
    candidate = None
    last_common = 0
    for k in range(min(len(trace_attack.steps), len(trace_free.steps))):
        sa = trace_attack.steps[k]
        sf = trace_free.steps[k]
        if sa.location != sf.location or sa.opcode != sf.opcode:
            break
        last_common = k
        if sa.branch is not None and sf.branch is not None and sa.branch != sf.branch:
            candidate = k
    return candidate if candidate is not None else last_common


# --- dynamic dependence replay ----------------------------------------------


@dataclass(frozen=True, slots=True)
class StepDeps:
    """Immediate dependence producers of one step.

    ``operands`` aligns with the step's popped values (top first); entries
    are producing step indices, or None for transaction-level inputs and
    constants that predate the trace. ``state`` holds non-operand producers:
    in-trace storage/balance writers and the call step feeding a frame.
    """

    operands: tuple
    state: tuple

    def all(self) -> set[int]:
        return {p for p in self.operands if p is not None} | set(self.state)


class _FrameCtx:
    __slots__ = ("frame_idx", "call_step", "prov")

    def __init__(self, frame_idx: int, call_step: int | None) -> None:
        self.frame_idx = frame_idx
        self.call_step = call_step
        self.prov: list = []


def dynamic_dependencies(trace: ExecutionTrace) -> list[StepDeps]:
    """Replay stack/storage provenance over a trace, one StepDeps per step.

    Copies are transparent: a DUP'd slot keeps its original producer and the
    DUP step itself depends on nothing, so slices skip stack plumbing.
    """
    deps: list[StepDeps] = []
    if not trace.steps:
        return deps
    storage_writer: dict = {}
    balance_writer: dict = {}
    frame_stack = [_FrameCtx(trace.step_frames[0], None)]

    for step in trace.steps:
        frame_idx = trace.step_frames[step.index]
        ctx = frame_stack[-1]
        if frame_idx != ctx.frame_idx:
            if trace.frames[frame_idx].parent == ctx.frame_idx:
                # Entering a callee; the preceding step is its CALL.
                frame_stack.append(_FrameCtx(frame_idx, step.index - 1))
                ctx = frame_stack[-1]
            else:
                while frame_stack and frame_stack[-1].frame_idx != frame_idx:
                    closed = frame_stack.pop()
                    if not frame_stack:
                        raise LocalizationError("malformed frame tree in trace")
                    _deliver_call_result(trace, closed, frame_stack[-1])
                ctx = frame_stack[-1]

        name = step.opcode
        prov = ctx.prov

        if name.startswith("DUP"):
            prov.append(prov[-int(name[3:])])
            deps.append(StepDeps((), ()))
            continue
        if name.startswith("SWAP"):
            k = int(name[4:])
            prov[-1], prov[-k - 1] = prov[-k - 1], prov[-1]
            deps.append(StepDeps((), ()))
            continue

        npop = len(step.stack_in)
        operands: tuple = ()
        if npop:
            operands = tuple(prov[-1 - i] for i in range(npop))
            del prov[len(prov) - npop :]

        state: list = []
        if name == "SLOAD" and step.shared_read is not None:
            w = storage_writer.get(step.shared_read.key)
            if w is not None:
                state.append(w)
        elif name == "SSTORE" and step.shared_write is not None:
            storage_writer[step.shared_write.key] = step.index
        elif name == "BALANCE" and step.shared_read is not None:
            w = balance_writer.get(step.shared_read.key)
            if w is not None:
                state.append(w)
        elif name in ("CALLDATALOAD", "CALLVALUE") and ctx.call_step is not None:
            state.append(ctx.call_step)

        if step.transfer is not None:
            for key in transfer_write_keys(step.transfer):
                if key[0] == "balance":
                    balance_writer[key] = step.index
                else:
                    storage_writer[key] = step.index

        for _ in step.stack_out:
            prov.append(step.index)
        deps.append(StepDeps(operands, tuple(state)))

        if name == "CALL" and not step.stack_out and _zero_step_callee(trace, frame_idx, step.index):
            # The callee failed before recording a single step, so no frame
            # transition will ever deliver its result: push the status word
            # here, with no producer.
            prov.append(None)

    return deps


def _zero_step_callee(trace: ExecutionTrace, caller_frame: int, call_step: int) -> bool:
    return any(
        f.parent == caller_frame and f.start_step == call_step + 1 and f.end_step < f.start_step
        for f in trace.frames
    )


def _deliver_call_result(trace: ExecutionTrace, closed: _FrameCtx, parent: _FrameCtx) -> None:
    """Push the callee's result words onto the caller's provenance stack."""
    frame = trace.frames[closed.frame_idx]
    terminator = frame.end_step if frame.end_step >= frame.start_step else None
    if not frame.reverted and terminator is not None:
        t = trace.steps[terminator]
        if t.opcode == "RETURN" and t.stack_in:
            for _ in range(t.stack_in[0]):
                parent.prov.append(terminator)
    parent.prov.append(terminator)  # status word


def _consumers_of(deps: list[StepDeps]) -> dict[int, list[int]]:
    consumers: dict[int, list[int]] = {}
    for i, d in enumerate(deps):
        for p in d.all():
            consumers.setdefault(p, []).append(i)
    return consumers


def _forward_closure(consumers: dict[int, list[int]], sources: set[int]) -> set[int]:
    tainted = set(sources)
    work = list(sources)
    while work:
        cur = work.pop()
        for nxt in consumers.get(cur, ()):
            if nxt not in tainted:
                tainted.add(nxt)
                work.append(nxt)
    return tainted


def propagate_taint(trace: ExecutionTrace, sources: set[int]) -> set[int]:
    """Forward data-flow closure over the dynamic trace from source steps.

    A step is tainted when any of its operand or state producers is tainted;
    branch steps get tainted through their condition operand like any other
    consumer. Sources taint themselves.
    """
    return _forward_closure(_consumers_of(dynamic_dependencies(trace)), sources)


def _backward_slice(
    trace: ExecutionTrace, deps: list[StepDeps], pattern: AttackPattern
) -> set[int]:
    """Steps with a dependence path into the sink.

    For a path-condition sink the slice is rooted at the branch condition
    (the jump-target operand is addressing, not data); for a computation
    sink it is rooted at the whole transfer step.
    """
    sink = pattern.sink_step
    assert sink is not None
    roots: set[int] = set()
    if pattern.kind is PatternKind.PATH_CONDITION_ALTERATION and trace.steps[
        sink
    ].opcode == "JUMPI":
        cond_producer = deps[sink].operands[1] if len(deps[sink].operands) > 1 else None
        if cond_producer is not None:
            roots.add(cond_producer)
        roots.update(deps[sink].state)
    else:
        roots.update(deps[sink].all())
    sliced = {sink} | roots
    work = list(roots)
    while work:
        cur = work.pop()
        for p in deps[cur].all():
            if p not in sliced:
                sliced.add(p)
                work.append(p)
    return sliced


# --- influence traces ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class InfluenceTrace:
    """The taint-flow slice from an altered-data read to the profit sink.

    ``step_indices`` is in-memory working data (used for frame attribution)
    and not part of the trace's value: serialization and equality go by the
    location sequence, so two attacks through the same code path compare and
    deduplicate equal.
    """

    source_location: tuple
    source_key: SharedKey
    sink_location: tuple
    locations: tuple[tuple, ...]
    step_indices: tuple[int, ...] = field(compare=False)
    identity: str

    def to_json(self) -> dict:
        return {
            "source": {"loc": loc_to_json(self.source_location), "key": key_to_json(self.source_key)},
            "sink": loc_to_json(self.sink_location),
            "steps": [loc_to_json(loc) for loc in self.locations],
            "identity": self.identity,
        }

    @classmethod
    def from_json(cls, obj: dict, step_indices: tuple[int, ...] = ()) -> "InfluenceTrace":
        return cls(
            source_location=loc_from_json(obj["source"]["loc"]),
            source_key=key_from_json(obj["source"]["key"]),
            sink_location=loc_from_json(obj["sink"]),
            locations=tuple(loc_from_json(l) for l in obj["steps"]),
            step_indices=step_indices,
            identity=obj["identity"],
        )


def trace_identity(locations: tuple[tuple, ...]) -> str:
    """Canonical digest of a location sequence; operand values never enter."""
    return digest_hex(canonical_json([loc_to_json(loc) for loc in locations]).encode())


def _build_influence_trace(
    trace: ExecutionTrace, sources: list[tuple[int, SharedKey]], steps: set[int], sink: int
) -> InfluenceTrace:
    ordered = tuple(sorted(steps))
    first_idx, first_key = min(sources)
    locations = tuple(trace.steps[i].location for i in ordered)
    return InfluenceTrace(
        source_location=trace.steps[first_idx].location,
        source_key=first_key,
        sink_location=trace.steps[sink].location,
        locations=locations,
        step_indices=ordered,
        identity=trace_identity(locations),
    )


def extract_influence_traces(
    attack: AttackTuple, history: History
) -> tuple[AttackPattern, list[InfluenceTrace] | None]:
    """Localize one validated attack; griefing returns (pattern, None).

    Every altered-data read with a dependence path into the sink contributes;
    reads whose paths coincide except for the read itself are one exploit
    flow and merge into a single influence trace, while genuinely separate
    flows (distinct intermediate steps into the same sink) stay apart.
    """
    trace_attack = history.trace_at(attack.i_v)
    trace_free = _victim_free_trace(attack, history)
    pattern = classify_pattern(trace_attack, trace_free)
    if pattern.kind is PatternKind.GAS_ESTIMATION_GRIEFING:
        return pattern, None

    altered = attack_altered_data(attack, history)
    deps = dynamic_dependencies(trace_attack)
    consumers = _consumers_of(deps)
    sliced = _backward_slice(trace_attack, deps, pattern)

    # Per-source path steps: forward taint from that single read intersected
    # with the backward slice from the sink.
    sources: list[tuple[int, SharedKey]] = []
    paths: list[set[int]] = []
    for key in altered:
        for read_idx in key.read_at:
            fwd = _forward_closure(consumers, {read_idx})
            if pattern.sink_step not in fwd:
                continue  # this read does not influence the sink
            sources.append((read_idx, key.key))
            paths.append(fwd & sliced)

    # Sources whose paths overlap anywhere besides the sink itself are one
    # exploit flow; paths that only meet at the sink stay separate traces.
    parent = list(range(len(sources)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(sources)):
        for j in range(i + 1, len(sources)):
            shared = (paths[i] & paths[j]) - {pattern.sink_step}
            if shared - {sources[i][0], sources[j][0]}:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(len(sources)):
        groups.setdefault(find(i), []).append(i)
    traces = [
        _build_influence_trace(
            trace_attack,
            [sources[i] for i in members],
            set().union(*(paths[i] for i in members)),
            pattern.sink_step,
        )
        for members in sorted(groups.values(), key=lambda ms: min(sources[i][0] for i in ms))
    ]
    return pattern, traces


def _victim_free_trace(attack: AttackTuple, history: History) -> ExecutionTrace:
    """The victim's execution when it runs first, before the attacker."""
    from .vm.engine import simulate_sequence

    traces, _ = simulate_sequence(
        history.pre_state(attack.i_a), [history.tx_at(attack.i_v)]
    )
    return traces[0]


@dataclass(frozen=True, slots=True)
class LocalizedAttack:
    """One attack with its pattern, influence traces, and function labels.

    ``influence_traces`` is None for skipped attacks: griefing by design,
    or the no-divergence corner where the victim ran identically.
    """

    attack: AttackTuple
    pattern: AttackPattern | None
    influence_traces: tuple[InfluenceTrace, ...] | None
    public_functions: tuple[tuple, ...]  # (contract, selector, name) per trace union

    @property
    def skipped(self) -> bool:
        return self.influence_traces is None


def localize_attack(attack: AttackTuple, history: History) -> LocalizedAttack:
    pattern, traces = extract_influence_traces(attack, history)
    if traces is None:
        return LocalizedAttack(attack, pattern, None, ())
    trace_v = history.trace_at(attack.i_v)
    functions: list[tuple] = []
    seen = set()
    for inf in traces:
        for idx in inf.step_indices:
            frame = trace_v.frame_of(idx)
            if frame.public and frame.selector is not None:
                label = (frame.contract, frame.selector, frame.fn_name)
                if label not in seen:
                    seen.add(label)
                    functions.append(label)
    return LocalizedAttack(attack, pattern, tuple(traces), tuple(functions))
