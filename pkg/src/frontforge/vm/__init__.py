"""Deterministic stack-based contract VM with shared-data access tracing."""

from .engine import (
    apply_block,
    available_kernels,
    continue_sequence,
    execute_transaction,
    fork_overlay,
    kernel_name,
    simulate_sequence,
)
from .state import Contract, FunctionDef, TransactionMsg, WorldState
from .trace import (
    CallFrame,
    ExecutionTrace,
    SharedAccess,
    StepRecord,
    TransferRecord,
    TxStatus,
    def_clear_read_occurrences,
    committed_write_occurrences,
    shared_access_sets,
    token_ledger_slot,
    transfer_location_sequence,
    transfer_write_keys,
)
from . import isa

__all__ = [
    "Contract",
    "FunctionDef",
    "TransactionMsg",
    "WorldState",
    "CallFrame",
    "ExecutionTrace",
    "SharedAccess",
    "StepRecord",
    "TransferRecord",
    "TxStatus",
    "apply_block",
    "available_kernels",
    "continue_sequence",
    "committed_write_occurrences",
    "def_clear_read_occurrences",
    "execute_transaction",
    "fork_overlay",
    "isa",
    "kernel_name",
    "shared_access_sets",
    "simulate_sequence",
    "token_ledger_slot",
    "transfer_location_sequence",
    "transfer_write_keys",
]
