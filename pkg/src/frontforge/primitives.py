"""Low-level value types shared across the toolkit: addresses, words, digests.

Machine words are unsigned 256-bit integers held as plain Python ints.
Addresses are 160-bit identifiers rendered as 40 lowercase hex digits;
string comparison of that rendering equals byte-order comparison.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

WORD_BITS = 256
WORD_MASK = (1 << WORD_BITS) - 1
ADDRESS_BITS = 160
ADDRESS_MASK = (1 << ADDRESS_BITS) - 1
SELECTOR_MASK = 0xFFFFFFFF

_HEX_DIGITS = set("0123456789abcdef")
_ADDR_CACHE: dict = {}  # int -> Address; addresses recur heavily in the VM loop


class Address(str):
    """A 20-byte account identifier, stored as 40 lowercase hex chars."""

    __slots__ = ()

    def __new__(cls, value: str) -> "Address":
        v = value[2:] if value.startswith("0x") else value
        v = v.lower()
        if len(v) != 40 or not set(v) <= _HEX_DIGITS:
            raise ValueError(f"not a 20-byte hex address: {value!r}")
        return super().__new__(cls, v)

    @classmethod
    def from_int(cls, n: int) -> "Address":
        n &= ADDRESS_MASK
        cached = _ADDR_CACHE.get(n)
        if cached is None:
            cached = _ADDR_CACHE[n] = cls(format(n, "040x"))
        return cached

    def as_int(self) -> int:
        return int(self, 16)

    def hex0x(self) -> str:
        return "0x" + str(self)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Address({self.hex0x()!r})"


def word(n: int) -> int:
    """Clamp an int into the unsigned 256-bit word range."""
    return n & WORD_MASK


def digest_bytes(*parts: bytes) -> bytes:
    """Opaque deterministic 32-byte digest (SHA-256 over length-framed parts).

    This is the single hash used everywhere: the VM HASH instruction,
    transaction ids, influence-trace identities, and file digests.
    """
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(8, "big"))
        h.update(p)
    return h.digest()


def digest_hex(*parts: bytes) -> str:
    return digest_bytes(*parts).hex()


def digest_word(*parts: bytes) -> int:
    return int.from_bytes(digest_bytes(*parts), "big")


def digest_words(values: tuple[int, ...] | list[int]) -> int:
    """Digest of a word sequence, used by the HASH instruction."""
    return digest_word(*(word(v).to_bytes(32, "big") for v in values))


def canonical_json(obj: Any) -> str:
    """Deterministic JSON rendering used for content-addressed ids."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest_json(obj: Any) -> str:
    return digest_hex(canonical_json(obj).encode())


# --- shared-data keys ------------------------------------------------------
#
# A key names one unit of blockchain-shared state that transactions can
# race on. Keys are plain tuples so they hash fast and sort deterministically:
#   ("balance", Address)
#   ("storage", Address, slot_int)
#   ("code",    Address)           # representable, never written (no CREATE)

SharedKey = tuple

def balance_key(addr: Address) -> SharedKey:
    return ("balance", addr)


def storage_key(addr: Address, slot: int) -> SharedKey:
    return ("storage", addr, word(slot))


def code_key(addr: Address) -> SharedKey:
    return ("code", addr)


def key_to_json(key: SharedKey) -> dict:
    if key[0] == "storage":
        return {"kind": "storage", "address": Address(key[1]).hex0x(), "key": hex(key[2])}
    return {"kind": key[0], "address": Address(key[1]).hex0x()}


def key_from_json(obj: dict) -> SharedKey:
    kind = obj["kind"]
    addr = Address(obj["address"])
    if kind == "storage":
        return storage_key(addr, int(obj["key"], 16))
    if kind == "balance":
        return balance_key(addr)
    if kind == "code":
        return code_key(addr)
    raise ValueError(f"unknown shared-key kind: {kind!r}")


# --- code locations --------------------------------------------------------

Location = tuple  # (Address, instruction offset)


def loc_to_json(loc: Location) -> dict:
    return {"contract": Address(loc[0]).hex0x(), "offset": loc[1]}


def loc_from_json(obj: dict) -> Location:
    return (Address(obj["contract"]), int(obj["offset"]))
