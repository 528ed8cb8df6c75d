"""Interpreter kernel: the per-instruction execution loop.

This module is the hot path of the whole toolkit (attack mining replays
transactions constantly), so it is written as one flat dispatch loop over
plain ints, lists, and dicts. The same source file is also compiled as a
C extension (``_kernel_cy``) when Cython is available; the build copies
this file verbatim, so both backends share semantics by construction.

Failure modes are data, not exceptions: protocol violations, reverts, and
out-of-gas all come back as trace statuses because the mining algorithm
must observe them.
"""

from __future__ import annotations

from ..assets import ETHER, token_asset
from ..primitives import (
    WORD_MASK,
    Address,
    balance_key,
    digest_hex,
    digest_words,
    storage_key,
)
from .isa import (
    ADD,
    AND,
    BALANCE,
    CALL,
    CALLDATALOAD,
    CALLER,
    CALLVALUE,
    DIV,
    DUP,
    EQ,
    GASLEFT,
    GT,
    HASH,
    INTRINSIC_GAS,
    ISZERO,
    JUMP,
    JUMPI,
    LOG,
    LT,
    MAX_CALL_DEPTH,
    MAX_HASH_WORDS,
    MOD,
    MUL,
    NOT,
    OP_NAMES,
    OR,
    ORIGIN,
    PER_ID_TAGS,
    POP,
    PUSH,
    RETURN,
    REVERT,
    SLOAD,
    SSTORE,
    STANDARD_TAGS,
    STOP,
    SUB,
    SWAP,
    TRANSFER,
    TTRANSFER,
    gas_cost,
)
from .state import TransactionMsg, WorldState
from .trace import (
    CallFrame,
    ExecutionTrace,
    SharedAccess,
    StepRecord,
    TransferRecord,
    TxStatus,
    token_ledger_slot,
    transfer_write_keys,
)

IS_COMPILED = not __file__.endswith(".py")

_ABSENT = object()
_MAX_CALL_ARGS = 32
_MAX_RETURN_WORDS = 32
_GAS = tuple(gas_cost(op) for op in range(len(OP_NAMES)))


class Overlay:
    """Mutable scratch state over an immutable base snapshot.

    Reads fall through to the base; writes land in overlay dicts and are
    journaled so a call frame can roll back exactly its own effects.
    The journal is reset per transaction.
    """

    __slots__ = ("base", "balances", "nonces", "storage", "journal")

    def __init__(self, base: WorldState) -> None:
        self.base = base
        self.balances: dict = {}
        self.nonces: dict = {}
        self.storage: dict = {}
        self.journal: list = []

    def balance(self, addr) -> int:
        b = self.balances
        if addr in b:
            return b[addr]
        return self.base.balances.get(addr, 0)

    def nonce(self, addr) -> int:
        n = self.nonces
        if addr in n:
            return n[addr]
        return self.base.nonces.get(addr, 0)

    def storage_at(self, addr, slot: int) -> int:
        key = (addr, slot)
        s = self.storage
        if key in s:
            return s[key]
        return self.base.storage.get(key, 0)

    def contract(self, addr):
        return self.base.contracts.get(addr)

    def set_balance(self, addr, value: int) -> None:
        b = self.balances
        self.journal.append((b, addr, b.get(addr, _ABSENT)))
        b[addr] = value

    def set_nonce(self, addr, value: int) -> None:
        n = self.nonces
        self.journal.append((n, addr, n.get(addr, _ABSENT)))
        n[addr] = value

    def set_storage(self, addr, slot: int, value: int) -> None:
        key = (addr, slot)
        s = self.storage
        self.journal.append((s, key, s.get(key, _ABSENT)))
        s[key] = value

    def checkpoint(self) -> int:
        return len(self.journal)

    def rollback(self, mark: int) -> None:
        j = self.journal
        while len(j) > mark:
            d, key, old = j.pop()
            if old is _ABSENT:
                del d[key]
            else:
                d[key] = old

    def reset_journal(self) -> None:
        self.journal.clear()

    def snapshot(self) -> WorldState:
        """Freeze the overlay into a new immutable snapshot."""
        balances = dict(self.base.balances)
        balances.update(self.balances)
        nonces = dict(self.base.nonces)
        nonces.update(self.nonces)
        storage = dict(self.base.storage)
        storage.update(self.storage)
        return WorldState(
            balances=balances,
            nonces=nonces,
            contracts=self.base.contracts,
            storage=storage,
        )


class _OutOfGas(Exception):
    pass


class _Ctx:
    """Per-transaction execution bookkeeping shared across frames."""

    __slots__ = (
        "overlay",
        "origin",
        "steps",
        "step_frames",
        "frames",
        "transfers",
        "written",
        "gas_spent",
        "step_budget",
    )

    def __init__(self, overlay: Overlay, origin, step_budget: int) -> None:
        self.overlay = overlay
        self.origin = origin
        self.steps: list = []
        self.step_frames: list = []
        self.frames: list = []  # mutable rows, sealed into CallFrame at the end
        self.transfers: list = []
        # Keys written so far in this transaction, transfers included and
        # rolled-back frames included: def-clear is a property of the literal
        # step sequence, matching a plain linear rescan of the trace.
        self.written: set = set()
        self.gas_spent = 0
        self.step_budget = step_budget


def execute_transaction(state: WorldState, tx: TransactionMsg):
    """Run one transaction against a snapshot; return (post state, trace)."""
    overlay = Overlay(state)
    trace = execute_on_overlay(overlay, tx)
    return overlay.snapshot(), trace


def execute_on_overlay(overlay: Overlay, tx: TransactionMsg) -> ExecutionTrace:
    """Run one transaction mutating the overlay in place.

    On a protocol violation the overlay is untouched; on revert or
    out-of-gas only the nonce bump and the fee debit survive.
    """
    sender = tx.sender
    if tx.nonce != overlay.nonce(sender):
        return _violation_trace(tx)
    if tx.gas_limit < INTRINSIC_GAS:
        return _violation_trace(tx)
    max_cost = tx.value + tx.gas_limit * tx.gas_price
    if overlay.balance(sender) < max_cost:
        return _violation_trace(tx)

    overlay.reset_journal()
    overlay.set_nonce(sender, tx.nonce + 1)
    base_mark = overlay.checkpoint()

    ctx = _Ctx(overlay, sender, tx.gas_limit - INTRINSIC_GAS)
    status = TxStatus.SUCCESS
    contract = overlay.contract(tx.target)
    if contract is None:
        # Plain value transfer to an account without code.
        overlay.set_balance(sender, overlay.balance(sender) - tx.value)
        overlay.set_balance(tx.target, overlay.balance(tx.target) + tx.value)
    else:
        fn = contract.functions.get(tx.selector)
        if fn is None or not fn.public:
            status = TxStatus.REVERTED
        else:
            if tx.value:
                overlay.set_balance(sender, overlay.balance(sender) - tx.value)
                overlay.set_balance(tx.target, overlay.balance(tx.target) + tx.value)
            try:
                ok, _rets = _run_frame(
                    ctx, contract, tx.selector, fn, sender, tx.value, tx.args, 0, None
                )
                if not ok:
                    status = TxStatus.REVERTED
            except _OutOfGas:
                status = TxStatus.OUT_OF_GAS

    if status is TxStatus.OUT_OF_GAS:
        gas_used = tx.gas_limit
    else:
        gas_used = INTRINSIC_GAS + ctx.gas_spent
    if status is not TxStatus.SUCCESS:
        overlay.rollback(base_mark)
        committed = ()
    else:
        committed = tuple(ctx.transfers)
    overlay.set_balance(sender, overlay.balance(sender) - gas_used * tx.gas_price)

    frames = tuple(
        CallFrame(
            contract=row[0],
            selector=row[1],
            fn_name=row[2],
            public=row[3],
            depth=row[4],
            parent=row[5],
            start_step=row[6],
            end_step=row[7] if row[7] >= 0 else len(ctx.steps) - 1,
            reverted=bool(row[8]) or status is not TxStatus.SUCCESS,
        )
        for row in ctx.frames
    )
    return ExecutionTrace(
        tx_id=tx.id,
        status=status,
        gas_used=gas_used,
        steps=tuple(ctx.steps),
        transfers=committed,
        frames=frames,
        step_frames=tuple(ctx.step_frames),
    )


def _violation_trace(tx: TransactionMsg) -> ExecutionTrace:
    return ExecutionTrace(
        tx_id=tx.id,
        status=TxStatus.PROTOCOL_VIOLATION,
        gas_used=0,
        steps=(),
        transfers=(),
        frames=(),
        step_frames=(),
    )


def _run_frame(ctx, contract, selector, fn, caller, value, args, depth, parent_idx):
    """Execute one call frame; returns (ok, return words top-last).

    A failed frame (REVERT, bad jump, stack underflow, failed transfer)
    rolls back its own state effects and uncommits its transfers; the
    recorded steps stay, since the trace is the literal execution history.
    """
    overlay = ctx.overlay
    frame_idx = len(ctx.frames)
    # row: contract, selector, name, public, depth, parent, start, end, reverted
    row = [
        contract.address,
        selector,
        fn.name,
        fn.public,
        depth,
        parent_idx,
        len(ctx.steps),
        -1,
        False,
    ]
    ctx.frames.append(row)
    mark = overlay.checkpoint()
    tmark = len(ctx.transfers)

    code = contract.code
    code_len = len(code)
    self_addr = contract.address
    stack: list = []
    pc = fn.offset
    steps = ctx.steps
    ok = False
    rets: list = []

    while True:
        if pc < 0 or pc >= code_len:
            break  # fell off the code: frame failure
        op, arg = code[pc]
        cost = _GAS[op]
        if ctx.gas_spent + cost > ctx.step_budget:
            raise _OutOfGas()
        ctx.gas_spent += cost

        loc = (self_addr, pc)
        # DUP/SWAP/LOG carry their depth in the recorded opcode name
        # (DUP3, SWAP1, LOG2) so traces replay without the code.
        op_name = OP_NAMES[op] if op not in (DUP, SWAP, LOG) else f"{OP_NAMES[op]}{arg}"
        stack_in: tuple = ()
        stack_out: tuple = ()
        shared_read = None
        shared_write = None
        branch = None
        call_edge = None
        transfer = None
        next_pc = pc + 1
        failed = False
        done = False

        try:
            if op == PUSH:
                v = arg & WORD_MASK
                stack.append(v)
                stack_out = (v,)
            elif op == POP:
                stack_in = (stack.pop(),)
            elif op == DUP:
                v = stack[-arg]
                stack.append(v)
                stack_out = (v,)
            elif op == SWAP:
                if len(stack) < arg + 1:
                    raise IndexError
                stack[-1], stack[-arg - 1] = stack[-arg - 1], stack[-1]
            elif (ADD <= op <= MOD) or (LT <= op <= OR and op != ISZERO):
                a = stack.pop()
                b = stack.pop()
                stack_in = (a, b)
                if op == ADD:
                    v = (a + b) & WORD_MASK
                elif op == SUB:
                    v = (a - b) & WORD_MASK
                elif op == MUL:
                    v = (a * b) & WORD_MASK
                elif op == DIV:
                    v = a // b if b else 0
                elif op == MOD:
                    v = a % b if b else 0
                elif op == LT:
                    v = 1 if a < b else 0
                elif op == GT:
                    v = 1 if a > b else 0
                elif op == EQ:
                    v = 1 if a == b else 0
                elif op == AND:
                    v = a & b
                else:  # OR
                    v = a | b
                stack.append(v)
                stack_out = (v,)
            elif op == ISZERO:
                a = stack.pop()
                stack_in = (a,)
                v = 1 if a == 0 else 0
                stack.append(v)
                stack_out = (v,)
            elif op == NOT:
                a = stack.pop()
                stack_in = (a,)
                v = a ^ WORD_MASK
                stack.append(v)
                stack_out = (v,)
            elif op == JUMP:
                dest = stack.pop()
                stack_in = (dest,)
                if dest >= code_len:
                    failed = True
                else:
                    next_pc = dest
            elif op == JUMPI:
                dest = stack.pop()
                cond = stack.pop()
                stack_in = (dest, cond)
                taken = cond != 0
                branch = taken
                if taken:
                    if dest >= code_len:
                        failed = True
                    else:
                        next_pc = dest
            elif op == SLOAD:
                slot = stack.pop()
                stack_in = (slot,)
                key = storage_key(self_addr, slot)
                v = overlay.storage_at(self_addr, slot)
                shared_read = SharedAccess(key, key not in ctx.written)
                stack.append(v)
                stack_out = (v,)
            elif op == SSTORE:
                slot = stack.pop()
                v = stack.pop()
                stack_in = (slot, v)
                key = storage_key(self_addr, slot)
                overlay.set_storage(self_addr, slot, v & WORD_MASK)
                ctx.written.add(key)
                shared_write = SharedAccess(key)
            elif op == BALANCE:
                a = stack.pop()
                stack_in = (a,)
                addr = Address.from_int(a)
                key = balance_key(addr)
                v = overlay.balance(addr)
                shared_read = SharedAccess(key, key not in ctx.written)
                stack.append(v)
                stack_out = (v,)
            elif op == CALLER:
                v = int(caller, 16)
                stack.append(v)
                stack_out = (v,)
            elif op == ORIGIN:
                v = int(ctx.origin, 16)
                stack.append(v)
                stack_out = (v,)
            elif op == CALLVALUE:
                v = value & WORD_MASK
                stack.append(v)
                stack_out = (v,)
            elif op == CALLDATALOAD:
                i = stack.pop()
                stack_in = (i,)
                v = args[i] if i < len(args) else 0
                stack.append(v)
                stack_out = (v,)
            elif op == TRANSFER:
                to_w = stack.pop()
                amount = stack.pop()
                stack_in = (to_w, amount)
                to = Address.from_int(to_w)
                if overlay.balance(self_addr) < amount:
                    failed = True
                elif amount > 0:
                    overlay.set_balance(self_addr, overlay.balance(self_addr) - amount)
                    overlay.set_balance(to, overlay.balance(to) + amount)
                    transfer = TransferRecord(ETHER, self_addr, to, amount, loc)
                    ctx.transfers.append(transfer)
                    ctx.written.update(transfer_write_keys(transfer))
            elif op == TTRANSFER:
                std = stack.pop()
                token_w = stack.pop()
                if std in PER_ID_TAGS:
                    token_id = stack.pop()
                    stack_in = (std, token_w, token_id)
                else:
                    token_id = None
                    stack_in = (std, token_w)
                frm_w = stack.pop()
                to_w = stack.pop()
                amount = stack.pop()
                stack_in = stack_in + (frm_w, to_w, amount)
                if std not in STANDARD_TAGS:
                    failed = True
                else:
                    token = Address.from_int(token_w)
                    frm = Address.from_int(frm_w)
                    to = Address.from_int(to_w)
                    slot_frm = token_ledger_slot(std, token_id, frm)
                    held = overlay.storage_at(token, slot_frm)
                    if held < amount:
                        failed = True
                    elif amount > 0:
                        slot_to = token_ledger_slot(std, token_id, to)
                        overlay.set_storage(token, slot_frm, held - amount)
                        overlay.set_storage(
                            token, slot_to, overlay.storage_at(token, slot_to) + amount
                        )
                        asset = token_asset(STANDARD_TAGS[std], token, token_id)
                        transfer = TransferRecord(asset, frm, to, amount, loc)
                        ctx.transfers.append(transfer)
                        ctx.written.update(transfer_write_keys(transfer))
            elif op == CALL:
                target_w = stack.pop()
                sel = stack.pop()
                call_value = stack.pop()
                argc = stack.pop()
                stack_in = (target_w, sel, call_value, argc)
                if argc > _MAX_CALL_ARGS or argc > len(stack):
                    failed = True
                else:
                    call_args = tuple(stack.pop() for _ in range(argc))
                    stack_in = stack_in + call_args
                    target = Address.from_int(target_w)
                    callee = overlay.contract(target)
                    callee_fn = callee.functions.get(sel) if callee else None
                    call_edge = (target, digest_hex(*(w.to_bytes(32, "big") for w in call_args)))
                    callable_ = (
                        callee is not None
                        and callee_fn is not None
                        and callee_fn.public
                        and depth + 1 <= MAX_CALL_DEPTH
                        and overlay.balance(self_addr) >= call_value
                    )
                    if not callable_:
                        stack.append(0)
                        stack_out = (0,)
                    else:
                        if call_value > 0:
                            transfer = TransferRecord(
                                ETHER, self_addr, target, call_value, loc
                            )
                        # Record the call step before the callee's steps so
                        # indices stay in execution order; result words are
                        # pushed when the callee finishes.
                        steps.append(
                            StepRecord(
                                len(steps), loc, op_name, stack_in, (),
                                None, None, None, call_edge, transfer, cost,
                            )
                        )
                        ctx.step_frames.append(frame_idx)
                        cmark = overlay.checkpoint()
                        ctmark = len(ctx.transfers)
                        if call_value > 0:
                            overlay.set_balance(
                                self_addr, overlay.balance(self_addr) - call_value
                            )
                            overlay.set_balance(
                                target, overlay.balance(target) + call_value
                            )
                            ctx.transfers.append(transfer)
                            ctx.written.update(transfer_write_keys(transfer))
                        c_ok, c_rets = _run_frame(
                            ctx,
                            callee,
                            sel,
                            callee_fn,
                            self_addr,
                            call_value,
                            call_args,
                            depth + 1,
                            frame_idx,
                        )
                        if not c_ok:
                            overlay.rollback(cmark)
                            del ctx.transfers[ctmark:]
                            stack.append(0)
                        else:
                            for w in reversed(c_rets):
                                stack.append(w)
                            stack.append(1)
                        pc = next_pc
                        continue  # step already recorded
            elif op == RETURN:
                retc = stack.pop()
                if retc > _MAX_RETURN_WORDS or retc > len(stack):
                    stack_in = (retc,)
                    failed = True
                else:
                    rets = [stack.pop() for _ in range(retc)]
                    stack_in = (retc, *rets)
                    ok = True
                    done = True
            elif op == REVERT:
                failed = True
            elif op == STOP:
                ok = True
                done = True
            elif op == HASH:
                k = stack.pop()
                if k > MAX_HASH_WORDS or k > len(stack):
                    stack_in = (k,)
                    failed = True
                else:
                    words = [stack.pop() for _ in range(k)]
                    stack_in = (k, *words)
                    v = digest_words(words)
                    stack.append(v)
                    stack_out = (v,)
            elif op == GASLEFT:
                v = ctx.step_budget - ctx.gas_spent
                stack.append(v)
                stack_out = (v,)
            elif op == LOG:
                if arg > len(stack):
                    raise IndexError
                stack_in = tuple(stack.pop() for _ in range(arg))
            else:
                failed = True  # unknown opcode
        except IndexError:
            # Stack underflow: no coherent operand record for this step.
            row[7] = len(steps) - 1
            row[8] = True
            overlay.rollback(mark)
            del ctx.transfers[tmark:]
            return False, []

        steps.append(
            StepRecord(
                len(steps), loc, op_name, stack_in, stack_out,
                shared_read, shared_write, branch, call_edge, transfer, cost,
            )
        )
        ctx.step_frames.append(frame_idx)

        if failed:
            break
        if done:
            row[7] = len(steps) - 1
            return ok, rets
        pc = next_pc

    # Frame failure path.
    row[7] = len(steps) - 1
    row[8] = True
    overlay.rollback(mark)
    del ctx.transfers[tmark:]
    return False, []
