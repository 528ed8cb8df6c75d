"""Localization: altered data, pattern classification, taint, influence traces."""

from __future__ import annotations

import pytest

from frontforge import fixtures
from frontforge.chain import Block, History
from frontforge.miner import MinerConfig, mine_history
from frontforge.primitives import Address, storage_key
from frontforge.taint import (
    NoDivergence,
    PatternKind,
    attack_altered_data,
    classify_pattern,
    dynamic_dependencies,
    extract_influence_traces,
    localize_attack,
    propagate_taint,
    trace_identity,
)
from frontforge.vm import (
    Contract,
    FunctionDef,
    TransactionMsg,
    WorldState,
    execute_transaction,
)
from frontforge.vm.isa import assemble

from oracles import TagFlow


class TestAttackAlteredData:
    def test_relayguard_marker_key_only(self, relay_attack, combined_history):
        altered = attack_altered_data(relay_attack, combined_history)
        assert [a.key for a in altered] == [
            storage_key(fixtures.RG_RELAY, fixtures.RG_SIGNATURE)
        ]
        (marker,) = altered
        assert len(marker.read_at) == 1
        assert all(loc[0] == fixtures.RG_RELAY for loc in marker.written_at)

    def test_miniswap_reserve_keys_exactly(self, miniswap_attack, combined_history):
        altered = attack_altered_data(miniswap_attack, combined_history)
        assert {a.key for a in altered} == {
            storage_key(fixtures.MS_PAIR, 0),
            storage_key(fixtures.MS_PAIR, 1),
        }
        for a in altered:
            # read twice: once in getReserves, once while doSwap rebooks
            assert len(a.read_at) == 2

    def test_single_balance_key_synthetic(self):
        # till-style race: the attacker's claim writes the claimed flag and
        # moves the pot; the victim's read of the flag is the altered datum
        from genhist import till_race, _Alloc
        import random

        strand = till_race(random.Random(7), _Alloc(0))
        hist = History(
            WorldState(
                balances=strand.balances,
                contracts=strand.contracts,
                storage=strand.storage,
            ),
            [Block(0, tuple(strand.txs))],
        )
        dataset = mine_history(hist, MinerConfig())
        assert len(dataset.attacks) == 1
        altered = attack_altered_data(dataset.attacks[0], hist)
        till = strand.txs[0].target
        assert [a.key for a in altered] == [storage_key(till, 0)]


class TestClassifyPattern:
    def test_relayguard_path_condition(self, relay_attack, combined_history):
        loc = localize_attack(relay_attack, combined_history)
        assert loc.pattern.kind is PatternKind.PATH_CONDITION_ALTERATION
        relay = combined_history.genesis.contracts[fixtures.RG_RELAY]
        opcode = relay.code[loc.pattern.sink_location[1]][0]
        from frontforge.vm.isa import JUMPI, OP_NAMES

        assert OP_NAMES[opcode] == "JUMPI"
        # the uniqueness branch, not the signature branch: it follows the SLOAD
        marker_read = attack_altered_data(relay_attack, combined_history)[0].read_at[0]
        assert loc.pattern.sink_step == marker_read + 2

    def test_miniswap_computation_alteration(self, miniswap_attack, combined_history):
        loc = localize_attack(miniswap_attack, combined_history)
        assert loc.pattern.kind is PatternKind.COMPUTATION_ALTERATION
        trace_v = combined_history.trace_at(miniswap_attack.i_v)
        sink_step = trace_v.steps[loc.pattern.sink_step]
        assert sink_step.opcode == "TTRANSFER"
        assert sink_step.transfer.asset.contract == fixtures.MS_TOKEN1
        assert sink_step.transfer.frm == fixtures.MS_PAIR

    def test_gasgrief_classification_and_skip(self, gasgrief_history):
        dataset = mine_history(gasgrief_history, MinerConfig())
        (attack,) = dataset.attacks
        loc = localize_attack(attack, gasgrief_history)
        assert loc.pattern.kind is PatternKind.GAS_ESTIMATION_GRIEFING
        assert loc.pattern.sink_step is None
        assert loc.skipped and loc.influence_traces is None

    def test_no_divergence_raises(self, relay_history):
        trace = relay_history.trace_at(0)
        with pytest.raises(NoDivergence):
            classify_pattern(trace, trace)


class TestPropagateTaint:
    def _trace(self, src: str):
        c = Contract(Address.from_int(0xC1), assemble(src).code,
                     {1: FunctionDef(0, True, "f")})
        state = WorldState(
            balances={Address.from_int(0xA1): 10**9},
            contracts={c.address: c},
            storage={(c.address, 5): 99},
        )
        t = TransactionMsg(sender=Address.from_int(0xA1), nonce=0, target=c.address,
                           selector=1, gas_limit=10_000, gas_price=1)
        _, trace = execute_transaction(state, t)
        return trace

    def test_chain_through_arithmetic_storage_and_reload(self):
        src = """
        PUSH 5
        SLOAD       ; source
        PUSH 1
        ADD
        PUSH 0
        SSTORE
        PUSH 0
        SLOAD       ; reload of the stored value
        POP
        STOP
        """
        trace = self._trace(src)
        source = next(s.index for s in trace.steps if s.opcode == "SLOAD")
        tainted = propagate_taint(trace, {source})
        names = {trace.steps[i].opcode for i in tainted}
        # source, arithmetic, store, reload; plus the POP consuming the reload
        assert names == {"SLOAD", "ADD", "SSTORE", "POP"}
        assert len([i for i in tainted if trace.steps[i].opcode == "SLOAD"]) == 2

    def test_parallel_computation_untainted(self):
        src = """
        PUSH 5
        SLOAD       ; source
        PUSH 2
        PUSH 3
        MUL         ; independent arithmetic
        PUSH 1
        SSTORE
        POP
        STOP
        """
        trace = self._trace(src)
        source = next(s.index for s in trace.steps if s.opcode == "SLOAD")
        tainted = propagate_taint(trace, {source})
        untainted_ops = {trace.steps[i].opcode for i in range(len(trace.steps))} - {
            trace.steps[i].opcode for i in tainted
        }
        assert {"MUL", "SSTORE"} <= untainted_ops

    def test_branch_tainted_via_condition(self):
        src = """
        PUSH 5
        SLOAD
        PUSH 8
        JUMPI
        STOP
        target:
        STOP
        """
        trace = self._trace(src)
        source = next(s.index for s in trace.steps if s.opcode == "SLOAD")
        tainted = propagate_taint(trace, {source})
        assert any(trace.steps[i].opcode == "JUMPI" for i in tainted)

    def test_miniswap_taint_reaches_token_out_via_call(self, miniswap_attack, combined_history):
        trace = combined_history.trace_at(miniswap_attack.i_v)
        sources = {
            idx
            for a in attack_altered_data(miniswap_attack, combined_history)
            for idx in a.read_at
        }
        tainted = propagate_taint(trace, sources)
        ops = [trace.steps[i].opcode for i in sorted(tainted)]
        assert "CALL" in ops and "TTRANSFER" in ops
        xfer_assets = {
            trace.steps[i].transfer.asset.contract
            for i in tainted
            if trace.steps[i].opcode == "TTRANSFER"
        }
        # the token1 payout is reached; the pre-call fee transfer is not
        assert fixtures.MS_TOKEN1 in xfer_assets
        fee_steps = {
            s.index
            for s in trace.steps
            if s.transfer is not None and s.transfer.amount == fixtures.MS_FEE
        }
        assert not fee_steps & tainted


class TestInfluenceTraces:
    def test_relayguard_ends_at_branch(self, relay_attack, combined_history):
        loc = localize_attack(relay_attack, combined_history)
        (trace,) = loc.influence_traces
        trace_v = combined_history.trace_at(relay_attack.i_v)
        assert trace.step_indices[0] == min(
            idx
            for a in attack_altered_data(relay_attack, combined_history)
            for idx in a.read_at
        )
        assert trace_v.steps[trace.step_indices[-1]].opcode == "JUMPI"
        assert trace.locations[-1] == trace.sink_location
        assert [trace_v.steps[i].opcode for i in trace.step_indices] == ["SLOAD", "JUMPI"]

    def test_miniswap_single_merged_trace(self, miniswap_attack, combined_history):
        loc = localize_attack(miniswap_attack, combined_history)
        assert len(loc.influence_traces) == 1
        (trace,) = loc.influence_traces
        trace_v = combined_history.trace_at(miniswap_attack.i_v)
        ops = [trace_v.steps[i].opcode for i in trace.step_indices]
        # both reserve reads merged into one flow
        assert ops.count("SLOAD") == 2
        assert ops[-1] == "TTRANSFER"
        assert "CALL" in ops and "RETURN" in ops

    def test_miniswap_excludes_fee_and_log_steps(self, miniswap_attack, combined_history):
        loc = localize_attack(miniswap_attack, combined_history)
        (inf,) = loc.influence_traces
        trace_v = combined_history.trace_at(miniswap_attack.i_v)
        included = set(inf.step_indices)
        fee_steps = {
            s.index
            for s in trace_v.steps
            if s.transfer is not None and s.transfer.amount == fixtures.MS_FEE
        }
        log_steps = {s.index for s in trace_v.steps if s.opcode.startswith("LOG")}
        token0_in = {
            s.index
            for s in trace_v.steps
            if s.transfer is not None and s.transfer.asset.contract == fixtures.MS_TOKEN0
        }
        assert fee_steps and log_steps and token0_in
        assert not included & (fee_steps | log_steps | token0_in)

    def test_miniswap_reduction(self, miniswap_attack, combined_history):
        loc = localize_attack(miniswap_attack, combined_history)
        (inf,) = loc.influence_traces
        total = len(combined_history.trace_at(miniswap_attack.i_v).steps)
        assert len(inf.step_indices) < total
        assert len(inf.step_indices) / total < 0.5

    def test_identity_depends_on_locations_only(self, combined_history, relay_attack):
        # a second relay-guard race through different data hits the same code
        rg = fixtures.relay_guard()
        sig2 = fixtures.digest_words([fixtures.RG_USER.as_int(), 0xBEEF])
        args2 = (fixtures.RG_USER.as_int(), 0xBEEF, sig2)
        mk = lambda sender, nonce: TransactionMsg(
            sender=sender, nonce=nonce, target=fixtures.RG_RELAY,
            selector=fixtures.selector("relay"), args=args2,
            gas_limit=5_000, gas_price=1,
        )
        hist = History(
            rg.genesis,
            [
                Block(0, rg.blocks[0].txs),
                Block(1, (mk(fixtures.RG_ATTACKER, 1), mk(fixtures.RG_RELAYER, 1))),
            ],
        )
        dataset = mine_history(hist, MinerConfig())
        assert len(dataset.attacks) == 2
        locs = [localize_attack(a, hist) for a in dataset.attacks]
        identities = {l.influence_traces[0].identity for l in locs}
        assert len(identities) == 1  # same code path collides by design

    def test_two_disjoint_flows_stay_separate(self):
        # amount and recipient of the payout come from two altered slots via
        # disjoint paths that only meet at the transfer itself
        owner = Address.from_int(0x51)
        rival = Address.from_int(0x52)
        splitter = Address.from_int(0x5C)
        setter_src = """
        set:
            PUSH 0
            CALLDATALOAD
            PUSH 0
            SSTORE
            PUSH 1
            CALLDATALOAD
            PUSH 1
            SSTORE
            STOP
        grab:
            PUSH 1
            SLOAD       ; recipient word
            PUSH 0
            SLOAD       ; amount word
            SWAP 1
            TRANSFER
            STOP
        """
        asm = assemble(setter_src)
        contract = Contract(
            splitter, asm.code,
            {
                1: FunctionDef(asm.labels["set"], True, "set"),
                2: FunctionDef(asm.labels["grab"], True, "grab"),
            },
        )
        genesis = WorldState(
            balances={owner: 10**9, rival: 10**9, splitter: 10**6},
            contracts={splitter: contract},
            storage={(splitter, 0): 100, (splitter, 1): owner.as_int()},
        )
        txs = (
            TransactionMsg(sender=rival, nonce=0, target=splitter, selector=1,
                           args=(40, rival.as_int()), gas_limit=5_000, gas_price=1),
            TransactionMsg(sender=owner, nonce=0, target=splitter, selector=2,
                           gas_limit=5_000, gas_price=1),
        )
        hist = History(genesis, [Block(0, txs)])
        dataset = mine_history(hist, MinerConfig())
        assert len(dataset.attacks) == 1
        pattern, traces = extract_influence_traces(dataset.attacks[0], hist)
        assert pattern.kind is PatternKind.COMPUTATION_ALTERATION
        assert len(traces) == 2
        assert {len(t.step_indices) for t in traces} == {2}


class TestSliceSoundness:
    def _assert_sound(self, attack, history):
        loc = localize_attack(attack, history)
        if loc.skipped:
            return
        trace_v = history.trace_at(attack.i_v)
        flow = TagFlow(trace_v)
        sink = loc.pattern.sink_step
        for inf in loc.influence_traces:
            sources = set(inf.step_indices) & {
                idx
                for a in attack_altered_data(attack, history)
                for idx in a.read_at
            }
            assert sources
            for step in inf.step_indices:
                assert flow.on_path(step, sources, sink), (
                    f"step {step} ({trace_v.steps[step].opcode}) off the "
                    f"source->sink dependence paths"
                )

    def test_fixture_attacks_sound(self, combined_attacks, combined_history):
        for attack in combined_attacks:
            self._assert_sound(attack, combined_history)

    def test_dynamic_dependencies_agree_with_tagflow(self, combined_history):
        # edge-level cross-check on every fixture trace: i depends on j
        # (graph reachability) iff j influences i (tag accumulation)
        for i in range(combined_history.tx_count()):
            trace = combined_history.trace_at(i)
            deps = dynamic_dependencies(trace)
            flow = TagFlow(trace)
            reach: list[set[int]] = [set() for _ in trace.steps]
            for idx, d in enumerate(deps):
                direct = d.all()
                closure = set(direct)
                for p in direct:
                    closure |= reach[p]
                reach[idx] = closure
            for idx in range(len(trace.steps)):
                assert reach[idx] == set(flow.influencers[idx])


class TestTraceIdentity:
    def test_identity_is_location_digest(self):
        locs = ((Address.from_int(1), 4), (Address.from_int(1), 9))
        assert trace_identity(locs) == trace_identity(tuple(locs))
        assert trace_identity(locs) != trace_identity(locs[:1])


class TestHashTaint:
    def test_digest_output_tainted_when_any_input_tainted(self):
        src = """
        PUSH 5
        SLOAD       ; source
        PUSH 1234   ; untainted word
        PUSH 2
        HASH
        PUSH 9
        JUMPI
        STOP
        out:
        STOP
        """
        c = Contract(Address.from_int(0xC2), assemble(src).code,
                     {1: FunctionDef(0, True, "f")})
        state = WorldState(
            balances={Address.from_int(0xA2): 10**9},
            contracts={c.address: c},
            storage={(c.address, 5): 3},
        )
        t = TransactionMsg(sender=Address.from_int(0xA2), nonce=0, target=c.address,
                           selector=1, gas_limit=10_000, gas_price=1)
        _, trace = execute_transaction(state, t)
        source = next(s.index for s in trace.steps if s.opcode == "SLOAD")
        tainted = propagate_taint(trace, {source})
        ops = {trace.steps[i].opcode for i in tainted}
        assert "HASH" in ops, "opaque digest must stay conservative"
        assert "JUMPI" in ops


class TestZeroStepCallee:
    def test_provenance_survives_immediately_failing_callee(self):
        # a callee that underflows before recording any step still pushes a
        # status word onto the caller's stack; provenance must account for it
        a = Address.from_int(0xA1)
        c = Address.from_int(0xC1)
        d = Address.from_int(0xD1)
        callee = Contract(d, assemble("ADD\nSTOP").code,
                          {9: FunctionDef(0, True, "boom")})
        caller_src = f"""
        PUSH 7
        PUSH 0
        PUSH 0
        PUSH 9
        PUSH 0x{d}
        CALL
        PUSH 0
        SSTORE
        PUSH 1
        SSTORE
        STOP
        """
        caller = Contract(c, assemble(caller_src).code, {1: FunctionDef(0, True, "go")})
        state = WorldState(balances={a: 10**9}, contracts={c: caller, d: callee})
        t = TransactionMsg(sender=a, nonce=0, target=c, selector=1,
                           gas_limit=10_000, gas_price=1)
        post, trace = execute_transaction(state, t)
        assert post.storage_at(c, 1) == 7
        deps = dynamic_dependencies(trace)
        sstores = [s.index for s in trace.steps if s.opcode == "SSTORE"]
        # first store consumed the failed call's status (no producer)
        assert deps[sstores[0]].operands[1] is None
        # second store's value is the marker pushed before the call
        assert deps[sstores[1]].operands[1] == 0
        flow = TagFlow(trace)
        assert flow.influencers[sstores[1]] == {0, sstores[1] - 1}
