"""Instruction set, gas schedule, and the line-oriented assembly format.

The set is the smallest one that can express the fixture contracts:
guarded relays (opaque signature checks via HASH), constant-product swaps
(cross-contract CALL with word return data), and gas-griefing loops.
Code is a sequence of (opcode, arg) pairs; jump targets are instruction
offsets, not byte offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

# Opcode numbers are stable: they appear in serialized contract containers
# only via their names, but the kernel dispatches on the ints.
STOP = 0
PUSH = 1
POP = 2
DUP = 3
SWAP = 4
ADD = 5
SUB = 6
MUL = 7
DIV = 8
MOD = 9
LT = 10
GT = 11
EQ = 12
ISZERO = 13
AND = 14
OR = 15
NOT = 16
JUMP = 17
JUMPI = 18
SLOAD = 19
SSTORE = 20
BALANCE = 21
CALLER = 22
ORIGIN = 23
CALLVALUE = 24
CALLDATALOAD = 25
TRANSFER = 26
TTRANSFER = 27
CALL = 28
RETURN = 29
REVERT = 30
HASH = 31
GASLEFT = 32
LOG = 33

OP_NAMES = {
    STOP: "STOP", PUSH: "PUSH", POP: "POP", DUP: "DUP", SWAP: "SWAP",
    ADD: "ADD", SUB: "SUB", MUL: "MUL", DIV: "DIV", MOD: "MOD",
    LT: "LT", GT: "GT", EQ: "EQ", ISZERO: "ISZERO", AND: "AND", OR: "OR",
    NOT: "NOT", JUMP: "JUMP", JUMPI: "JUMPI", SLOAD: "SLOAD",
    SSTORE: "SSTORE", BALANCE: "BALANCE", CALLER: "CALLER",
    ORIGIN: "ORIGIN", CALLVALUE: "CALLVALUE", CALLDATALOAD: "CALLDATALOAD",
    TRANSFER: "TRANSFER", TTRANSFER: "TTRANSFER", CALL: "CALL",
    RETURN: "RETURN", REVERT: "REVERT", HASH: "HASH", GASLEFT: "GASLEFT",
    LOG: "LOG",
}
OP_BY_NAME = {name: op for op, name in OP_NAMES.items()}

# Opcodes that take an immediate argument in the assembly text.
ARG_OPS = {PUSH, DUP, SWAP, LOG}

# Flat gas schedule; relative ordering mimics a real chain closely enough
# to construct out-of-gas divergence. Values are fixture parameters.
GAS_DEFAULT = 1
GAS_SCHEDULE = {
    SSTORE: 20,
    SLOAD: 5,
    CALL: 40,
    TRANSFER: 10,
    TTRANSFER: 10,
    HASH: 30,
}
INTRINSIC_GAS = 21

MAX_CALL_DEPTH = 64
MAX_HASH_WORDS = 64

# Token standard tags as pushed on the stack by TTRANSFER callers.
STD_ERC20 = 20
STD_ERC721 = 721
STD_ERC777 = 777
STD_ERC1155 = 1155
STANDARD_TAGS = {
    STD_ERC20: "ERC20",
    STD_ERC721: "ERC721",
    STD_ERC777: "ERC777",
    STD_ERC1155: "ERC1155",
}
PER_ID_TAGS = frozenset({STD_ERC721, STD_ERC1155})

Instruction = tuple  # (opcode: int, arg: int | None)


def gas_cost(op: int) -> int:
    return GAS_SCHEDULE.get(op, GAS_DEFAULT)


class AsmError(ValueError):
    pass


@dataclass(frozen=True)
class Assembled:
    code: tuple[Instruction, ...]
    labels: dict[str, int]


def assemble(text: str) -> Assembled:
    """Assemble one-instruction-per-line text into code.

    Syntax: ``OP [arg]``, ``label:`` on its own line, ``; comment`` anywhere.
    PUSH accepts decimal, 0x-hex, or ``@label`` (resolved to an offset).
    """
    lines = text.splitlines()
    pending: list[tuple[str, str | None, int]] = []
    labels: dict[str, int] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.endswith(":"):
            name = line[:-1].strip()
            if not name or name in labels:
                raise AsmError(f"line {lineno}: bad or duplicate label {name!r}")
            labels[name] = len(pending)
            continue
        parts = line.split()
        pending.append((parts[0].upper(), parts[1] if len(parts) > 1 else None, lineno))
        if len(parts) > 2:
            raise AsmError(f"line {lineno}: too many operands")

    code: list[Instruction] = []
    for name, argtext, lineno in pending:
        op = OP_BY_NAME.get(name)
        if op is None:
            raise AsmError(f"line {lineno}: unknown instruction {name!r}")
        if op in ARG_OPS:
            if argtext is None and op != LOG:
                raise AsmError(f"line {lineno}: {name} needs an argument")
            arg = _parse_arg(argtext, labels, lineno, allow_label=(op == PUSH))
            if op in (DUP, SWAP) and arg < 1:
                raise AsmError(f"line {lineno}: {name} depth must be >= 1")
            if op == LOG and arg < 0:
                raise AsmError(f"line {lineno}: LOG arity must be >= 0")
        else:
            if argtext is not None:
                raise AsmError(f"line {lineno}: {name} takes no argument")
            arg = None
        code.append((op, arg))
    return Assembled(tuple(code), labels)


def _parse_arg(text: str | None, labels: dict[str, int], lineno: int, allow_label: bool) -> int:
    if text is None:
        return 0  # bare LOG
    if text.startswith("@"):
        if not allow_label:
            raise AsmError(f"line {lineno}: label operand not allowed here")
        target = text[1:]
        if target not in labels:
            raise AsmError(f"line {lineno}: undefined label {target!r}")
        return labels[target]
    try:
        return int(text, 0)
    except ValueError:
        raise AsmError(f"line {lineno}: bad operand {text!r}") from None


def disassemble(code: tuple[Instruction, ...]) -> list[str]:
    out = []
    for op, arg in code:
        name = OP_NAMES[op]
        if op in ARG_OPS:
            out.append(f"{name} {hex(arg) if op == PUSH and arg > 9 else arg}")
        else:
            out.append(name)
    return out


def parse_lines(lines: list[str]) -> tuple[Instruction, ...]:
    """Parse disassembled lines back into code (no labels)."""
    return assemble("\n".join(lines)).code
