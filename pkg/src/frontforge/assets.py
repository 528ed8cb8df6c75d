"""Profit accounting over Ether and token assets.

Profits are signed per-actor, per-asset balance deltas accumulated from
committed transfer records. Scenario comparison is Pareto-style: a side
only counts as gaining (losing) if no asset moves the other way, so a
mixed outcome such as +1 NFT / -50 ERC20 is deliberately inconclusive.
Gas fees never enter profit vectors; fee asymmetry between scenarios
would manufacture spurious gains from gas-price differences alone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping

from .primitives import Address

if TYPE_CHECKING:  # pragma: no cover
    from .vm.trace import ExecutionTrace

TOKEN_STANDARDS = ("ERC20", "ERC721", "ERC777", "ERC1155")
_PER_ID_STANDARDS = frozenset({"ERC721", "ERC1155"})


@dataclass(frozen=True, slots=True)
class AssetKey:
    """Identity of one transferable asset: Ether or a token position.

    ``token_id`` is required for ERC721/ERC1155 and must be absent for
    ERC20/ERC777; Ether carries neither standard nor contract.
    """

    kind: str  # "ether" | "token"
    standard: str | None = None
    contract: Address | None = None
    token_id: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "ether":
            if self.standard or self.contract or self.token_id is not None:
                raise ValueError("ether asset carries no token fields")
        elif self.kind == "token":
            if self.standard not in TOKEN_STANDARDS:
                raise ValueError(f"unknown token standard: {self.standard!r}")
            if self.contract is None:
                raise ValueError("token asset needs a contract address")
            if (self.token_id is not None) != (self.standard in _PER_ID_STANDARDS):
                raise ValueError(
                    f"{self.standard} token_id presence mismatch (got {self.token_id!r})"
                )
        else:
            raise ValueError(f"unknown asset kind: {self.kind!r}")

    def to_json(self) -> dict:
        if self.kind == "ether":
            return {"kind": "ether"}
        out = {
            "kind": "token",
            "standard": self.standard,
            "contract": self.contract.hex0x(),
        }
        if self.token_id is not None:
            out["token_id"] = hex(self.token_id)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AssetKey":
        if obj["kind"] == "ether":
            return ETHER
        token_id = int(obj["token_id"], 16) if "token_id" in obj else None
        return cls("token", obj["standard"], Address(obj["contract"]), token_id)


ETHER = AssetKey("ether")


def token_asset(standard: str, contract: Address, token_id: int | None = None) -> AssetKey:
    return AssetKey("token", standard, contract, token_id)


class Comparison(enum.Enum):
    GAIN = "gain"
    LOSS = "loss"
    NEUTRAL = "neutral"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True, slots=True)
class ProfitVector:
    """Signed per-(actor, asset) deltas; missing entries mean zero."""

    entries: Mapping[tuple[Address, AssetKey], int] = field(default_factory=dict)

    @classmethod
    def of(cls, entries: Mapping[tuple[Address, AssetKey], int]) -> "ProfitVector":
        return cls({k: v for k, v in entries.items() if v != 0})

    def __add__(self, other: "ProfitVector") -> "ProfitVector":
        merged = dict(self.entries)
        for k, v in other.entries.items():
            merged[k] = merged.get(k, 0) + v
        return ProfitVector.of(merged)

    def get(self, actor: Address, asset: AssetKey) -> int:
        return self.entries.get((actor, asset), 0)

    def restrict(self, actors: Iterable[Address]) -> "ProfitVector":
        keep = set(actors)
        return ProfitVector.of(
            {k: v for k, v in self.entries.items() if k[0] in keep}
        )

    def asset_totals(self, actors: Iterable[Address] | None = None) -> dict[AssetKey, int]:
        """Per-asset sums over the given actors (all actors if None)."""
        keep = None if actors is None else set(actors)
        totals: dict[AssetKey, int] = {}
        for (actor, asset), delta in self.entries.items():
            if keep is not None and actor not in keep:
                continue
            totals[asset] = totals.get(asset, 0) + delta
        return {a: d for a, d in totals.items() if d != 0}

    def to_json(self) -> list[dict]:
        rows = [
            {"actor": actor.hex0x(), "asset": asset.to_json(), "delta": delta}
            for (actor, asset), delta in self.entries.items()
        ]
        rows.sort(key=lambda r: (r["actor"], sorted(r["asset"].items())))
        return rows

    @classmethod
    def from_json(cls, rows: list[dict]) -> "ProfitVector":
        entries: dict[tuple[Address, AssetKey], int] = {}
        for r in rows:
            k = (Address(r["actor"]), AssetKey.from_json(r["asset"]))
            entries[k] = entries.get(k, 0) + int(r["delta"])
        return cls.of(entries)


@dataclass(frozen=True, slots=True)
class ActorSet:
    """Attacker and victim account sets for one candidate attack tuple.

    The attacker side is the sender of the front transaction plus the first
    contract it invokes (bots route profits through their own contracts);
    the victim side is the victim transaction's sender.
    """

    attacker_accounts: frozenset[Address]
    victim_accounts: frozenset[Address]

    def __post_init__(self) -> None:
        if not self.attacker_accounts or not self.victim_accounts:
            raise ValueError("actor sets must be non-empty")

    @property
    def disjoint(self) -> bool:
        return not (self.attacker_accounts & self.victim_accounts)


def profits_of(traces: Iterable["ExecutionTrace"], actors: Iterable[Address]) -> ProfitVector:
    """Sum committed transfers over the given traces, restricted to actors.

    Reverted and out-of-gas traces contribute nothing because they commit
    no transfers. Gas fees are not part of the vector.
    """
    keep = set(actors)
    entries: dict[tuple[Address, AssetKey], int] = {}
    for trace in traces:
        for t in trace.transfers:
            if t.to in keep:
                k = (t.to, t.asset)
                entries[k] = entries.get(k, 0) + t.amount
            if t.frm in keep:
                k = (t.frm, t.asset)
                entries[k] = entries.get(k, 0) - t.amount
    return ProfitVector.of(entries)


def compare(
    pv_scenario: ProfitVector, pv_free: ProfitVector, actor_set: Iterable[Address]
) -> Comparison:
    """Pareto-compare one side's profits between the two scenarios.

    Per asset, d = scenario total - attack-free total over the actor set.
    GAIN requires every d >= 0 with at least one d > 0; LOSS is the mirror;
    mixed signs are INCOMPARABLE.
    """
    actors = set(actor_set)
    scen = pv_scenario.asset_totals(actors)
    free = pv_free.asset_totals(actors)
    deltas = [scen.get(a, 0) - free.get(a, 0) for a in set(scen) | set(free)]
    any_pos = any(d > 0 for d in deltas)
    any_neg = any(d < 0 for d in deltas)
    if any_pos and not any_neg:
        return Comparison.GAIN
    if any_neg and not any_pos:
        return Comparison.LOSS
    if not any_pos and not any_neg:
        return Comparison.NEUTRAL
    return Comparison.INCOMPARABLE


def satisfies_properties(
    attacker_attack: ProfitVector,
    attacker_free: ProfitVector,
    victim_attack: ProfitVector,
    victim_free: ProfitVector,
    actors: ActorSet,
) -> bool:
    """Check the two attack properties: attacker gains and victim loses.

    Overlapping actor sets never satisfy the properties; an attack needs a
    victim distinct from the attacker.
    """
    if not actors.disjoint:
        return False
    return (
        compare(attacker_attack, attacker_free, actors.attacker_accounts)
        is Comparison.GAIN
        and compare(victim_attack, victim_free, actors.victim_accounts)
        is Comparison.LOSS
    )
