"""Public VM entry points and kernel backend selection.

Two interchangeable kernels exist: the pure-Python module ``_kernel`` and
its Cython-compiled twin ``_kernel_cy`` (built from the same source file,
so their behavior is identical down to the bit level). The compiled one
is preferred when present; set ``FRONTFORGE_KERNEL=pure`` or ``compiled``
to force a choice.
"""

from __future__ import annotations

import os
from types import ModuleType

from .state import TransactionMsg, WorldState
from .trace import ExecutionTrace
from . import _kernel as _pure_kernel

try:
    from . import _kernel_cy as _compiled_kernel  # type: ignore[attr-defined]
except ImportError:
    _compiled_kernel = None


def _select_kernel() -> ModuleType:
    choice = os.environ.get("FRONTFORGE_KERNEL", "").lower()
    if choice == "pure":
        return _pure_kernel
    if choice == "compiled":
        if _compiled_kernel is None:
            raise RuntimeError(
                "FRONTFORGE_KERNEL=compiled but the extension is not built; "
                "run `python setup.py build_ext --inplace`"
            )
        return _compiled_kernel
    return _compiled_kernel if _compiled_kernel is not None else _pure_kernel


kernel = _select_kernel()


def kernel_name() -> str:
    return "compiled" if kernel is _compiled_kernel and kernel is not None else "pure"


def available_kernels() -> dict[str, ModuleType]:
    out = {"pure": _pure_kernel}
    if _compiled_kernel is not None:
        out["compiled"] = _compiled_kernel
    return out


def execute_transaction(
    state: WorldState, tx: TransactionMsg
) -> tuple[WorldState, ExecutionTrace]:
    """Deterministically run one transaction; failures land in the trace status."""
    return kernel.execute_transaction(state, tx)


def apply_block(
    state: WorldState, txs: list[TransactionMsg] | tuple[TransactionMsg, ...]
) -> tuple[WorldState, list[ExecutionTrace]]:
    """Run transactions sequentially; trace i sees the state left by txs[:i]."""
    traces = []
    for tx in txs:
        state, trace = kernel.execute_transaction(state, tx)
        traces.append(trace)
    return state, traces


def simulate_sequence(
    state: WorldState, txs: list[TransactionMsg] | tuple[TransactionMsg, ...]
) -> tuple[list[ExecutionTrace], "kernel.Overlay"]:
    """Run a sequence on one scratch overlay without snapshotting per tx.

    This is the miner's fast path: scenario replays only need traces.
    The returned overlay can be snapshotted or extended by the caller.
    """
    overlay = kernel.Overlay(state)
    traces = [kernel.execute_on_overlay(overlay, tx) for tx in txs]
    return traces, overlay


def continue_sequence(
    overlay: "kernel.Overlay", txs: list[TransactionMsg] | tuple[TransactionMsg, ...]
) -> list[ExecutionTrace]:
    """Extend a previous simulation in place."""
    return [kernel.execute_on_overlay(overlay, tx) for tx in txs]


def fork_overlay(overlay: "kernel.Overlay") -> "kernel.Overlay":
    """Cheap copy of a scratch overlay for trying alternative continuations."""
    fork = kernel.Overlay(overlay.base)
    fork.balances = dict(overlay.balances)
    fork.nonces = dict(overlay.nonces)
    fork.storage = dict(overlay.storage)
    return fork
