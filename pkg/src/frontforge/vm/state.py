"""World state, contracts, and transaction messages.

Snapshots are immutable values: execution never mutates a WorldState, it
produces a fresh one. That makes snapshots safe to share across threads
and lets the history cache hand out states without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..primitives import (
    Address,
    SELECTOR_MASK,
    canonical_json,
    digest_hex,
    word,
)
from . import isa


@dataclass(frozen=True, slots=True)
class FunctionDef:
    offset: int
    public: bool
    name: str


@dataclass(frozen=True, slots=True)
class Contract:
    """Deployed code plus its selector dispatch table."""

    address: Address
    code: tuple[isa.Instruction, ...]
    functions: dict[int, FunctionDef] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for sel, fn in self.functions.items():
            if not 0 <= sel <= SELECTOR_MASK:
                raise ValueError(f"selector out of range: {sel:#x}")
            if not 0 <= fn.offset < len(self.code):
                raise ValueError(f"entry offset {fn.offset} outside code bounds")

    def function_named(self, name: str) -> tuple[int, FunctionDef]:
        for sel, fn in self.functions.items():
            if fn.name == name:
                return sel, fn
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "address": self.address.hex0x(),
            "functions": {
                f"{sel:#010x}": {
                    "offset": fn.offset,
                    "visibility": "public" if fn.public else "internal",
                    "name": fn.name,
                }
                for sel, fn in sorted(self.functions.items())
            },
            "code": isa.disassemble(self.code),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Contract":
        functions = {
            int(sel, 16): FunctionDef(
                offset=f["offset"],
                public=f["visibility"] == "public",
                name=f["name"],
            )
            for sel, f in obj["functions"].items()
        }
        return cls(
            address=Address(obj["address"]),
            code=isa.parse_lines(obj["code"]),
            functions=functions,
        )


@dataclass(frozen=True, slots=True)
class WorldState:
    """Balances, nonces, contract code, and per-contract key-value storage.

    ``storage`` is a flat mapping (contract address, slot) -> word; absent
    entries read as zero. Treat instances as immutable; helpers below build
    modified copies.
    """

    balances: dict[Address, int] = field(default_factory=dict)
    nonces: dict[Address, int] = field(default_factory=dict)
    contracts: dict[Address, Contract] = field(default_factory=dict)
    storage: dict[tuple[Address, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(v < 0 for v in self.balances.values()):
            raise ValueError("negative balance in world state")
        if any(v < 0 for v in self.nonces.values()):
            raise ValueError("negative nonce in world state")

    def balance(self, addr: Address) -> int:
        return self.balances.get(addr, 0)

    def nonce(self, addr: Address) -> int:
        return self.nonces.get(addr, 0)

    def storage_at(self, addr: Address, slot: int) -> int:
        return self.storage.get((addr, word(slot)), 0)

    def total_ether(self) -> int:
        return sum(self.balances.values())

    def replaced(
        self,
        balances: dict[Address, int] | None = None,
        nonces: dict[Address, int] | None = None,
        storage: dict[tuple[Address, int], int] | None = None,
    ) -> "WorldState":
        return WorldState(
            balances=dict(balances if balances is not None else self.balances),
            nonces=dict(nonces if nonces is not None else self.nonces),
            contracts=self.contracts,
            storage=dict(storage if storage is not None else self.storage),
        )

    def to_json(self) -> dict:
        return {
            "balances": {a.hex0x(): v for a, v in sorted(self.balances.items())},
            "nonces": {a.hex0x(): v for a, v in sorted(self.nonces.items())},
            "contracts": [c.to_json() for _, c in sorted(self.contracts.items())],
            "storage": [
                {"address": a.hex0x(), "key": hex(slot), "value": hex(v)}
                for (a, slot), v in sorted(self.storage.items())
                if v != 0
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WorldState":
        contracts = {}
        for c in obj.get("contracts", []):
            contract = Contract.from_json(c)
            contracts[contract.address] = contract
        return cls(
            balances={Address(a): v for a, v in obj.get("balances", {}).items()},
            nonces={Address(a): v for a, v in obj.get("nonces", {}).items()},
            contracts=contracts,
            storage={
                (Address(e["address"]), int(e["key"], 16)): int(e["value"], 16)
                for e in obj.get("storage", [])
            },
        )


@dataclass(frozen=True, slots=True)
class TransactionMsg:
    """One signed message: sender, target function, args, value, gas budget.

    The id is a content hash over every other field, so identical payloads
    collide by construction and ids are stable across serialization.
    """

    sender: Address
    nonce: int
    target: Address
    selector: int
    args: tuple[int, ...] = ()
    value: int = 0
    gas_limit: int = 100_000
    gas_price: int = 1
    id: str = field(init=False, compare=False, repr=False, default="")

    def __post_init__(self) -> None:
        if self.nonce < 0 or self.value < 0:
            raise ValueError("nonce and value must be non-negative")
        if self.gas_limit < isa.INTRINSIC_GAS:
            raise ValueError(f"gas_limit below intrinsic cost {isa.INTRINSIC_GAS}")
        if self.gas_price <= 0:
            raise ValueError("gas_price must be positive")
        object.__setattr__(
            self, "id", digest_hex(canonical_json(self._body()).encode())
        )

    def _body(self) -> dict:
        return {
            "sender": self.sender.hex0x(),
            "nonce": self.nonce,
            "target": self.target.hex0x(),
            "selector": self.selector,
            "args": [hex(a) for a in self.args],
            "value": self.value,
            "gas_limit": self.gas_limit,
            "gas_price": self.gas_price,
        }

    def to_json(self) -> dict:
        body = self._body()
        body["id"] = self.id
        return body

    @classmethod
    def from_json(cls, obj: dict) -> "TransactionMsg":
        tx = cls(
            sender=Address(obj["sender"]),
            nonce=obj["nonce"],
            target=Address(obj["target"]),
            selector=obj["selector"],
            args=tuple(int(a, 16) for a in obj["args"]),
            value=obj["value"],
            gas_limit=obj["gas_limit"],
            gas_price=obj["gas_price"],
        )
        if "id" in obj and obj["id"] != tx.id:
            raise ValueError(f"transaction id mismatch for {obj['id']}")
        return tx
