from __future__ import annotations

import pytest

from frontforge import fixtures
from frontforge.miner import MinerConfig, mine_history


@pytest.fixture(scope="session")
def relay_history():
    return fixtures.relay_guard()


@pytest.fixture(scope="session")
def miniswap_history():
    return fixtures.mini_swap()


@pytest.fixture(scope="session")
def gasgrief_history():
    return fixtures.gas_grief()


@pytest.fixture(scope="session")
def combined_history():
    return fixtures.combined()


@pytest.fixture(scope="session")
def combined_attacks(combined_history):
    return mine_history(combined_history, MinerConfig()).attacks


@pytest.fixture(scope="session")
def relay_attack(combined_attacks):
    attack = combined_attacks[0] if combined_attacks[0].i_a == 0 else combined_attacks[1]
    assert (attack.i_a, attack.i_v, attack.i_p) == (0, 1, None)
    return attack


@pytest.fixture(scope="session")
def miniswap_attack(combined_attacks):
    attack = combined_attacks[0] if combined_attacks[0].i_a == 2 else combined_attacks[1]
    assert (attack.i_a, attack.i_v, attack.i_p) == (2, 3, 4)
    return attack
