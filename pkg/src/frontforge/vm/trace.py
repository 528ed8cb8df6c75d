"""Execution traces: per-step records, transfers, call frames.

The step list is flat and in execution order; the frame list encodes the
call tree via parent indices, and ``step_frames`` maps every step to its
innermost frame. Serialization of steps is bit-exact JSON lines with a
fixed field order.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from ..assets import AssetKey
from ..primitives import (
    Address,
    SharedKey,
    balance_key,
    digest_word,
    key_from_json,
    key_to_json,
    loc_from_json,
    loc_to_json,
    storage_key,
)
from .isa import STANDARD_TAGS


class TxStatus(enum.Enum):
    SUCCESS = "success"
    REVERTED = "reverted"
    OUT_OF_GAS = "out_of_gas"
    PROTOCOL_VIOLATION = "protocol_violation"


@dataclass(frozen=True, slots=True)
class SharedAccess:
    """One read or write of blockchain-shared data at a step."""

    key: SharedKey
    def_clear: bool | None = None  # reads only; None on writes

    def to_json(self) -> dict:
        out = key_to_json(self.key)
        if self.def_clear is not None:
            out["def_clear"] = self.def_clear
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SharedAccess":
        payload = {k: v for k, v in obj.items() if k != "def_clear"}
        return cls(key_from_json(payload), obj.get("def_clear"))


@dataclass(frozen=True, slots=True)
class TransferRecord:
    asset: AssetKey
    frm: Address
    to: Address
    amount: int
    location: tuple  # (contract, offset) of the emitting step

    def to_json(self) -> dict:
        return {
            "asset": self.asset.to_json(),
            "from": self.frm.hex0x(),
            "to": self.to.hex0x(),
            "amount": self.amount,
            "location": loc_to_json(self.location),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TransferRecord":
        return cls(
            asset=AssetKey.from_json(obj["asset"]),
            frm=Address(obj["from"]),
            to=Address(obj["to"]),
            amount=obj["amount"],
            location=loc_from_json(obj["location"]),
        )


_LEDGER_SLOTS: dict = {}


def token_ledger_slot(standard_tag: int, token_id: int | None, holder: Address) -> int:
    """Reserved storage slot holding one account's token balance.

    Token ledgers live in the token contract's own storage so that token
    movements are ordinary storage effects for conflict detection.
    """
    key = (standard_tag, token_id, holder)
    slot = _LEDGER_SLOTS.get(key)
    if slot is None:
        slot = _LEDGER_SLOTS[key] = digest_word(
            b"token-ledger",
            standard_tag.to_bytes(4, "big"),
            b"" if token_id is None else token_id.to_bytes(32, "big"),
            bytes.fromhex(holder),
        )
    return slot


_TAG_BY_STANDARD = {name: tag for tag, name in STANDARD_TAGS.items()}


def transfer_write_keys(t: TransferRecord) -> tuple[SharedKey, SharedKey]:
    """Shared keys a committed transfer mutates (both endpoints)."""
    if t.asset.kind == "ether":
        return (balance_key(t.frm), balance_key(t.to))
    tag = _TAG_BY_STANDARD[t.asset.standard]
    token = t.asset.contract
    return (
        storage_key(token, token_ledger_slot(tag, t.asset.token_id, t.frm)),
        storage_key(token, token_ledger_slot(tag, t.asset.token_id, t.to)),
    )


@dataclass(frozen=True, slots=True)
class StepRecord:
    """One executed instruction with its operands and shared-data effects.

    ``stack_in`` holds popped values top-first and ``stack_out`` pushed
    values bottom-first, which is enough to replay stack dataflow without
    re-running the program. At most one explicit shared read and one
    explicit shared write occur per step; transfer steps carry their
    balance/ledger effects in ``transfer`` instead.
    """

    index: int
    location: tuple
    opcode: str
    stack_in: tuple[int, ...]
    stack_out: tuple[int, ...]
    shared_read: SharedAccess | None
    shared_write: SharedAccess | None
    branch: bool | None
    call_edge: tuple | None  # (callee address, args digest hex)
    transfer: TransferRecord | None
    gas_cost: int

    def to_json(self) -> dict:
        # Field order is fixed; do not reorder keys.
        return {
            "index": self.index,
            "location": loc_to_json(self.location),
            "opcode": self.opcode,
            "stack_in": [hex(v) for v in self.stack_in],
            "stack_out": [hex(v) for v in self.stack_out],
            "shared_read": self.shared_read.to_json() if self.shared_read else None,
            "shared_write": self.shared_write.to_json() if self.shared_write else None,
            "branch": None if self.branch is None else {"taken": self.branch},
            "call_edge": (
                None
                if self.call_edge is None
                else {"callee": Address(self.call_edge[0]).hex0x(), "args_digest": self.call_edge[1]}
            ),
            "transfer": self.transfer.to_json() if self.transfer else None,
            "gas_cost": self.gas_cost,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StepRecord":
        call_edge = obj["call_edge"]
        return cls(
            index=obj["index"],
            location=loc_from_json(obj["location"]),
            opcode=obj["opcode"],
            stack_in=tuple(int(v, 16) for v in obj["stack_in"]),
            stack_out=tuple(int(v, 16) for v in obj["stack_out"]),
            shared_read=SharedAccess.from_json(obj["shared_read"]) if obj["shared_read"] else None,
            shared_write=SharedAccess.from_json(obj["shared_write"]) if obj["shared_write"] else None,
            branch=None if obj["branch"] is None else obj["branch"]["taken"],
            call_edge=None if call_edge is None else (Address(call_edge["callee"]), call_edge["args_digest"]),
            transfer=TransferRecord.from_json(obj["transfer"]) if obj["transfer"] else None,
            gas_cost=obj["gas_cost"],
        )


@dataclass(frozen=True, slots=True)
class CallFrame:
    contract: Address
    selector: int | None
    fn_name: str | None
    public: bool
    depth: int
    parent: int | None
    start_step: int
    end_step: int  # inclusive; -1 while open, final on sealed traces
    reverted: bool

    def to_json(self) -> dict:
        return {
            "contract": self.contract.hex0x(),
            "selector": None if self.selector is None else f"{self.selector:#010x}",
            "name": self.fn_name,
            "public": self.public,
            "depth": self.depth,
            "parent": self.parent,
            "start_step": self.start_step,
            "end_step": self.end_step,
            "reverted": self.reverted,
        }


@dataclass(frozen=True, slots=True)
class ExecutionTrace:
    """Full record of one transaction execution.

    ``transfers`` holds committed transfers only: a reverted or out-of-gas
    trace commits nothing even though its steps may carry transfer records.
    """

    tx_id: str
    status: TxStatus
    gas_used: int
    steps: tuple[StepRecord, ...]
    transfers: tuple[TransferRecord, ...]
    frames: tuple[CallFrame, ...]
    step_frames: tuple[int, ...]

    def frame_of(self, step_index: int) -> CallFrame:
        return self.frames[self.step_frames[step_index]]

    def frame_committed(self, frame_index: int) -> bool:
        """Whether a frame's effects survived (no reverted ancestor)."""
        if self.status is not TxStatus.SUCCESS:
            return False
        i: int | None = frame_index
        while i is not None:
            frame = self.frames[i]
            if frame.reverted:
                return False
            i = frame.parent
        return True

    def step_committed(self, step_index: int) -> bool:
        return self.frame_committed(self.step_frames[step_index])

    def steps_jsonl(self) -> str:
        return "\n".join(json.dumps(s.to_json()) for s in self.steps)


class TraceAnalysisError(ValueError):
    pass


def shared_access_sets(trace: ExecutionTrace) -> tuple[set[SharedKey], set[SharedKey]]:
    """Def-clear read keys and committed write keys of one trace.

    Reads count regardless of frame fate (a read that led to a revert still
    observed shared data); writes count only when committed, and include the
    balance/ledger effects implied by committed transfers.
    """
    if trace.status is TxStatus.PROTOCOL_VIOLATION:
        raise TraceAnalysisError("protocol-violation traces have no steps to analyze")
    reads = {
        s.shared_read.key
        for s in trace.steps
        if s.shared_read is not None and s.shared_read.def_clear
    }
    writes: set[SharedKey] = set()
    for s in trace.steps:
        if s.shared_write is not None and trace.step_committed(s.index):
            writes.add(s.shared_write.key)
    for t in trace.transfers:
        writes.update(transfer_write_keys(t))
    return reads, writes


def committed_write_occurrences(trace: ExecutionTrace) -> list[tuple[SharedKey, tuple, int]]:
    """(key, location, step index) for every committed write, transfers included."""
    out = []
    for s in trace.steps:
        if not trace.step_committed(s.index):
            continue
        if s.shared_write is not None:
            out.append((s.shared_write.key, s.location, s.index))
        if s.transfer is not None:
            for key in transfer_write_keys(s.transfer):
                out.append((key, s.location, s.index))
    return out


def def_clear_read_occurrences(trace: ExecutionTrace) -> list[tuple[SharedKey, int]]:
    return [
        (s.shared_read.key, s.index)
        for s in trace.steps
        if s.shared_read is not None and s.shared_read.def_clear
    ]


def transfer_location_sequence(trace: ExecutionTrace) -> list[tuple]:
    """Locations of committed transfers in execution order."""
    return [t.location for t in trace.transfers]
