"""Canned attack scenarios exercising the whole pipeline.

Three self-contained histories:

* relay_guard  — a guarded relay service; the attacker copies the victim's
  call data and takes the relay fee, the victim's transaction then fails
  the uniqueness check (path condition alteration, 2-tuple attack).
* mini_swap    — a constant-product token exchange; the attacker buys
  before the victim (with a tight slippage guard so the buy only succeeds
  when front-running) and sells afterwards (computation alteration,
  3-tuple attack).
* gas_grief    — a reward harvest whose loop length is attacker-controlled;
  the victim's gas estimate stops covering the loop, and the attacker
  harvests the reward afterwards (gas estimation griefing, 3-tuple).

``combined`` concatenates relay_guard and mini_swap into one history and
is the default mining demo: it contains exactly those two attacks.
"""

from __future__ import annotations

from .chain import Block, History
from .primitives import Address, digest_word, digest_words
from .vm import Contract, FunctionDef, TransactionMsg, WorldState
from .vm.isa import STD_ERC20, assemble
from .vm.trace import token_ledger_slot


def selector(name: str) -> int:
    """4-byte function selector derived from the function name."""
    return digest_word(name.encode()) & 0xFFFFFFFF


def fund_erc20(
    storage: dict, token: Address, holder: Address, amount: int
) -> None:
    storage[(token, token_ledger_slot(STD_ERC20, None, holder))] = amount


# --- relay_guard ------------------------------------------------------------

RG_RELAYER = Address.from_int(0x101)
RG_ATTACKER = Address.from_int(0x102)
RG_USER = Address.from_int(0x103)
RG_RELAY = Address.from_int(0x1C0)
RG_FEE_TOKEN = Address.from_int(0x1F0)
RG_FEE = 250
RG_OPERATION = 0xABCD
RG_SIGNATURE = digest_words([RG_USER.as_int(), RG_OPERATION])

_RELAY_ASM = f"""
; relay(user, operation, signature): execute a user's signed operation and
; collect the relay fee. Anyone with a valid (user, operation, signature)
; triple may submit it, but each signature is accepted only once.
relay:
    PUSH 1
    CALLDATALOAD        ; operation
    PUSH 0
    CALLDATALOAD        ; user
    PUSH 2
    HASH                ; digest(user, operation)
    PUSH 2
    CALLDATALOAD        ; signature
    EQ
    ISZERO
    PUSH @bad_signature
    JUMPI
check_uniqueness:
    PUSH 2
    CALLDATALOAD        ; signature doubles as the used-marker slot
    SLOAD
    PUSH @duplicate
    JUMPI               ; marker set: someone already relayed this request
    PUSH 1
    PUSH 2
    CALLDATALOAD
    SSTORE              ; mark used
    PUSH 1
    CALLDATALOAD
    LOG 1               ; stand-in for executing the operation
    PUSH {RG_FEE}
    CALLER              ; fee goes to whoever relayed
    PUSH 0
    CALLDATALOAD        ; fee comes from the user
    PUSH 0x{RG_FEE_TOKEN}
    PUSH 20
    TTRANSFER
    STOP
bad_signature:
    REVERT
duplicate:
    REVERT
"""


def relay_guard() -> History:
    asm = assemble(_RELAY_ASM)
    relay = Contract(
        address=RG_RELAY,
        code=asm.code,
        functions={
            selector("relay"): FunctionDef(asm.labels["relay"], True, "relay"),
            selector("checkUniqueness"): FunctionDef(
                asm.labels["check_uniqueness"], False, "checkUniqueness"
            ),
        },
    )
    storage: dict = {}
    fund_erc20(storage, RG_FEE_TOKEN, RG_USER, 10_000)
    genesis = WorldState(
        balances={RG_RELAYER: 10**12, RG_ATTACKER: 10**12, RG_USER: 10**12},
        nonces={},
        contracts={RG_RELAY: relay},
        storage=storage,
    )
    args = (RG_USER.as_int(), RG_OPERATION, RG_SIGNATURE)
    t_attack = TransactionMsg(
        sender=RG_ATTACKER, nonce=0, target=RG_RELAY, selector=selector("relay"),
        args=args, gas_limit=5_000, gas_price=1,
    )
    t_victim = TransactionMsg(
        sender=RG_RELAYER, nonce=0, target=RG_RELAY, selector=selector("relay"),
        args=args, gas_limit=5_000, gas_price=1,
    )
    return History(genesis, [Block(0, (t_attack, t_victim))])


# --- mini_swap --------------------------------------------------------------

MS_VICTIM = Address.from_int(0x201)
MS_ATTACKER = Address.from_int(0x202)
MS_SWAP = Address.from_int(0x2C0)
MS_PAIR = Address.from_int(0x2C1)
MS_TOKEN0 = Address.from_int(0x2F0)
MS_TOKEN1 = Address.from_int(0x2F1)
MS_FEE = 100
MS_RESERVE0 = 10_000
MS_RESERVE1 = 10_000
MS_SWAP_AMOUNT = 1_000


def _amm_quote(reserve_in: int, reserve_out: int, amount_in: int) -> int:
    return reserve_out - (reserve_in * reserve_out) // (reserve_in + amount_in)


# Constant-product outputs net of the fee; tests freeze these as literals
# computed by hand and by an independent oracle (826 and 700).
MS_ATTACKER_OUT = _amm_quote(MS_RESERVE0, MS_RESERVE1, MS_SWAP_AMOUNT - MS_FEE)
MS_VICTIM_OUT_ATTACKED = _amm_quote(
    MS_RESERVE0 + MS_SWAP_AMOUNT - MS_FEE,
    MS_RESERVE1 - MS_ATTACKER_OUT,
    MS_SWAP_AMOUNT - MS_FEE,
)


_PAIR_ASM = f"""
get_reserves:
    PUSH 0
    SLOAD
    PUSH 1
    SLOAD
    PUSH 2
    RETURN
; do_swap(amount0_in, amount1_out): book reserves, then move both legs.
do_swap:
    PUSH 0
    SLOAD
    PUSH 0
    CALLDATALOAD
    ADD
    PUSH 0
    SSTORE              ; reserve0 += amount0_in
    PUSH 1
    CALLDATALOAD
    PUSH 1
    SLOAD
    SUB
    PUSH 1
    SSTORE              ; reserve1 -= amount1_out
    PUSH 0
    CALLDATALOAD
    PUSH 0x{MS_PAIR}
    ORIGIN
    PUSH 0x{MS_TOKEN0}
    PUSH 20
    TTRANSFER           ; token0: trader -> pair
    PUSH 1
    CALLDATALOAD
    ORIGIN
    PUSH 0x{MS_PAIR}
    PUSH 0x{MS_TOKEN1}
    PUSH 20
    TTRANSFER           ; token1: pair -> trader (the victim's profit leg)
    STOP
; do_swap_rev(amount1_in, amount0_out): the reverse trade.
do_swap_rev:
    PUSH 1
    SLOAD
    PUSH 0
    CALLDATALOAD
    ADD
    PUSH 1
    SSTORE              ; reserve1 += amount1_in
    PUSH 1
    CALLDATALOAD
    PUSH 0
    SLOAD
    SUB
    PUSH 0
    SSTORE              ; reserve0 -= amount0_out
    PUSH 0
    CALLDATALOAD
    PUSH 0x{MS_PAIR}
    ORIGIN
    PUSH 0x{MS_TOKEN1}
    PUSH 20
    TTRANSFER           ; token1: trader -> pair
    PUSH 1
    CALLDATALOAD
    ORIGIN
    PUSH 0x{MS_PAIR}
    PUSH 0x{MS_TOKEN0}
    PUSH 20
    TTRANSFER           ; token0: pair -> trader
    STOP
"""

_SWAP_ASM = f"""
; swap(amount0, min_out): swap token0 for token1 at the pair's spot rate.
swap:
    PUSH {MS_FEE}
    PUSH 0x{MS_SWAP}
    CALLER
    PUSH 0x{MS_TOKEN0}
    PUSH 20
    TTRANSFER           ; constant service fee, token0: caller -> swap house
    PUSH {MS_FEE}
    PUSH 0
    CALLDATALOAD
    SUB                 ; net input a0 = amount0 - fee
    PUSH 0
    PUSH 0
    PUSH {selector("getReserves"):#x}
    PUSH 0x{MS_PAIR}
    CALL                ; -> r0, r1, status
    ISZERO
    PUSH @swap_fail
    JUMPI
    DUP 1
    DUP 3
    MUL                 ; r0 * r1
    DUP 4
    DUP 4
    ADD                 ; r0 + a0
    SWAP 1
    DIV
    DUP 2
    SUB                 ; amount1 = r1 - r0*r1/(r0 + a0)
    DUP 1
    PUSH 1
    CALLDATALOAD
    GT
    PUSH @swap_fail
    JUMPI               ; slippage guard: min_out > amount1 reverts
    DUP 1
    PUSH 0
    CALLDATALOAD
    CALLER
    LOG 3               ; swap event: caller, gross input, output
    DUP 4
    PUSH 2
    PUSH 0
    PUSH {selector("doSwap"):#x}
    PUSH 0x{MS_PAIR}
    CALL
    ISZERO
    PUSH @swap_fail
    JUMPI
    STOP
; swap_rev(amount1, min_out): swap token1 back to token0.
swap_rev:
    PUSH 0
    CALLDATALOAD
    PUSH 0
    PUSH 0
    PUSH {selector("getReserves"):#x}
    PUSH 0x{MS_PAIR}
    CALL
    ISZERO
    PUSH @swap_fail
    JUMPI
    DUP 2
    DUP 2
    MUL                 ; r0 * r1
    DUP 4
    DUP 3
    ADD                 ; r1 + a1
    SWAP 1
    DIV
    DUP 3
    SUB                 ; amount0 = r0 - r0*r1/(r1 + a1)
    DUP 1
    PUSH 1
    CALLDATALOAD
    GT
    PUSH @swap_fail
    JUMPI
    DUP 4
    PUSH 2
    PUSH 0
    PUSH {selector("doSwapRev"):#x}
    PUSH 0x{MS_PAIR}
    CALL
    ISZERO
    PUSH @swap_fail
    JUMPI
    STOP
swap_fail:
    REVERT
"""


def mini_swap() -> History:
    pair_asm = assemble(_PAIR_ASM)
    swap_asm = assemble(_SWAP_ASM)
    pair = Contract(
        address=MS_PAIR,
        code=pair_asm.code,
        functions={
            selector("getReserves"): FunctionDef(pair_asm.labels["get_reserves"], True, "getReserves"),
            selector("doSwap"): FunctionDef(pair_asm.labels["do_swap"], True, "doSwap"),
            selector("doSwapRev"): FunctionDef(pair_asm.labels["do_swap_rev"], True, "doSwapRev"),
        },
    )
    swap = Contract(
        address=MS_SWAP,
        code=swap_asm.code,
        functions={
            selector("swap"): FunctionDef(swap_asm.labels["swap"], True, "swap"),
            selector("swapRev"): FunctionDef(swap_asm.labels["swap_rev"], True, "swapRev"),
        },
    )
    storage: dict = {
        (MS_PAIR, 0): MS_RESERVE0,
        (MS_PAIR, 1): MS_RESERVE1,
    }
    fund_erc20(storage, MS_TOKEN0, MS_PAIR, MS_RESERVE0)
    fund_erc20(storage, MS_TOKEN1, MS_PAIR, MS_RESERVE1)
    fund_erc20(storage, MS_TOKEN0, MS_VICTIM, 50_000)
    fund_erc20(storage, MS_TOKEN0, MS_ATTACKER, 50_000)
    genesis = WorldState(
        balances={MS_VICTIM: 10**12, MS_ATTACKER: 10**12},
        nonces={},
        contracts={MS_PAIR: pair, MS_SWAP: swap},
        storage=storage,
    )
    # The attacker's slippage guard demands the un-attacked rate, so the buy
    # reverts in the attack-free ordering: the 2-tuple stays incomparable and
    # the attack only validates once the sell-back leg is included.
    t_front = TransactionMsg(
        sender=MS_ATTACKER, nonce=0, target=MS_SWAP, selector=selector("swap"),
        args=(MS_SWAP_AMOUNT, MS_ATTACKER_OUT), gas_limit=10_000, gas_price=1,
    )
    t_victim = TransactionMsg(
        sender=MS_VICTIM, nonce=0, target=MS_SWAP, selector=selector("swap"),
        args=(MS_SWAP_AMOUNT, 1), gas_limit=10_000, gas_price=1,
    )
    t_collect = TransactionMsg(
        sender=MS_ATTACKER, nonce=1, target=MS_SWAP, selector=selector("swapRev"),
        args=(MS_ATTACKER_OUT, 1), gas_limit=10_000, gas_price=1,
    )
    return History(genesis, [Block(0, (t_front, t_victim, t_collect))])


# --- gas_grief --------------------------------------------------------------

GG_VICTIM = Address.from_int(0x301)
GG_ATTACKER = Address.from_int(0x302)
GG_HOARD = Address.from_int(0x3C0)
GG_REWARD_TOKEN = Address.from_int(0x3F0)
GG_REWARD = 5_000
GG_SHORT_LOOP = 3
GG_LONG_LOOP = 100
GG_VICTIM_GAS = 300

_HOARD_ASM = f"""
; pump(n): retune the bookkeeping loop length.
pump:
    PUSH 0
    CALLDATALOAD
    PUSH 0
    SSTORE
    STOP
; harvest(): run the bookkeeping loop, then claim the reward once.
harvest:
    PUSH 0
    SLOAD               ; loop counter comes from shared storage
loop:
    DUP 1
    ISZERO
    PUSH @claim
    JUMPI
    PUSH 1
    SWAP 1
    SUB
    PUSH @loop
    JUMP
claim:
    POP
    PUSH 1
    SLOAD
    PUSH @done
    JUMPI               ; already claimed
    PUSH 1
    PUSH 1
    SSTORE
    PUSH {GG_REWARD}
    ORIGIN
    PUSH 0x{GG_HOARD}
    PUSH 0x{GG_REWARD_TOKEN}
    PUSH 20
    TTRANSFER
done:
    STOP
"""


def gas_grief() -> History:
    asm = assemble(_HOARD_ASM)
    hoard = Contract(
        address=GG_HOARD,
        code=asm.code,
        functions={
            selector("pump"): FunctionDef(asm.labels["pump"], True, "pump"),
            selector("harvest"): FunctionDef(asm.labels["harvest"], True, "harvest"),
        },
    )
    storage: dict = {(GG_HOARD, 0): GG_SHORT_LOOP}
    fund_erc20(storage, GG_REWARD_TOKEN, GG_HOARD, GG_REWARD)
    genesis = WorldState(
        balances={GG_VICTIM: 10**12, GG_ATTACKER: 10**12},
        nonces={},
        contracts={GG_HOARD: hoard},
        storage=storage,
    )
    t_pump = TransactionMsg(
        sender=GG_ATTACKER, nonce=0, target=GG_HOARD, selector=selector("pump"),
        args=(GG_LONG_LOOP,), gas_limit=5_000, gas_price=1,
    )
    t_victim = TransactionMsg(
        sender=GG_VICTIM, nonce=0, target=GG_HOARD, selector=selector("harvest"),
        gas_limit=GG_VICTIM_GAS, gas_price=1,
    )
    t_collect = TransactionMsg(
        sender=GG_ATTACKER, nonce=1, target=GG_HOARD, selector=selector("harvest"),
        gas_limit=5_000, gas_price=1,
    )
    return History(genesis, [Block(0, (t_pump, t_victim, t_collect))])


# --- combined ---------------------------------------------------------------


def combined() -> History:
    """Relay-guard and mini-swap scenarios in consecutive blocks.

    The two scenarios share no accounts, contracts, or storage, so mining
    the combined history yields exactly their two attacks.
    """
    rg = relay_guard()
    ms = mini_swap()
    genesis = WorldState(
        balances={**rg.genesis.balances, **ms.genesis.balances},
        nonces={},
        contracts={**rg.genesis.contracts, **ms.genesis.contracts},
        storage={**rg.genesis.storage, **ms.genesis.storage},
    )
    return History(
        genesis,
        [Block(0, rg.blocks[0].txs), Block(1, ms.blocks[0].txs)],
    )


def all_fixtures() -> dict[str, History]:
    return {
        "relayguard": relay_guard(),
        "miniswap": mini_swap(),
        "gasgrief": gas_grief(),
        "fixtures": combined(),
    }
