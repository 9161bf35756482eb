from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fosgsolve.cfr import CfrConfig, run_cfr
from fosgsolve.fosg import CHANCE, NOOP, GameModel, Observation, Outcome, enumerate_game
from fosgsolve.games import make_game
from fosgsolve.policy import (
    BehaviorPolicy, PolicyProfile, StrategyFormatError, average_policies, expected_return,
    history_reach, infostate_reach, profile_from_text, range_at, reach, support,
)


class Chain(GameModel):
    """Player 1 says go/stop up to three times; player 2 never decides."""

    def initial_state(self):
        return ()

    def legal_actions(self, state, player):
        if len(state) == 3 or (state and state[-1] == "stop"):
            return ()
        return ("go", "stop") if player == 0 else (NOOP,)

    def transition(self, state, joint):
        a = joint[0]
        r = float(len(state) + (a == "go"))
        done = a == "stop" or len(state) == 2
        return [Outcome(1.0, state + (a,), Observation(a), (r, -r) if done else (0.0, 0.0))]


def random_policy(index, player, rng):
    pol = BehaviorPolicy(index, player)
    for s in index.decision_infostates(player):
        pol[s] = rng.dirichlet(np.ones(len(index.info_actions[player][s])))
    return pol


def random_profile(index, rng):
    return PolicyProfile((random_policy(index, 0, rng), random_policy(index, 1, rng)))


def pure_policy(index, player, rng):
    pol = BehaviorPolicy(index, player)
    for s in index.decision_infostates(player):
        row = np.zeros(len(index.info_actions[player][s]))
        row[rng.integers(len(row))] = 1.0
        pol[s] = row
    return pol


def brute_force_return(index, profile):
    """Sum over terminals of the product of edge probabilities along the path."""
    total = np.zeros(2)
    for z in index.terminals():
        prob = 1.0
        path = index.history_path(int(z))
        for g, h in zip(path[:-1], path[1:]):
            who = index.actor[g]
            if who == CHANCE:
                prob *= index.edge_prob[h]
            else:
                s = index.infostate[who, g]
                prob *= profile[who][s][index.branch[h]]
        total += prob * index.returns[z]
    return total


@pytest.fixture(scope="module")
def chain():
    return enumerate_game(Chain())


def _chain_policy(ix, go):
    pol = BehaviorPolicy(ix, 0)
    for s in ix.decision_infostates(0):
        depth = ix.info_labels[0][s].count("go")
        pol[s] = [go, 1 - go] if depth < 2 else [1.0, 0.0] if go > 0.5 else [0.0, 1.0]
    return pol


def test_fig_reach_and_average(chain):
    a, b = _chain_policy(chain, 0.8), _chain_policy(chain, 0.2)
    third = chain.find_history(["go", "go"])
    s = chain.infostate[0, third]
    assert np.isclose(infostate_reach(chain, a)[s], 0.64)
    assert np.isclose(infostate_reach(chain, b)[s], 0.04)
    avg = average_policies([a, b], [0.5, 0.5])
    assert np.isclose(infostate_reach(chain, avg)[s], 0.34)
    # per-state averaging would give 0.5 * 0.5
    naive = BehaviorPolicy(chain, 0, 0.5 * (a.probs + b.probs))
    assert np.isclose(infostate_reach(chain, naive)[s], 0.25)
    # the reach-weighted average leans toward the policy that actually gets there
    assert np.allclose(avg[s], [0.64 / 0.68, 0.04 / 0.68])


def test_rps_expected_value(rps):
    prof = PolicyProfile.from_rows(rps, ({"[|]": [0.2, 0.2, 0.6]}, {"[||]": [0.4, 0.2, 0.4]}))
    v = expected_return(rps, prof)
    assert abs(v[0] - 0.08) <= 1e-12
    assert abs(v[0] + v[1]) <= 1e-12


def test_uniform_rps_zero(rps):
    assert np.allclose(expected_return(rps, PolicyProfile.uniform(rps)), 0.0)


def test_kuhn_uniform_matches_brute_force(kuhn):
    prof = PolicyProfile.uniform(kuhn)
    assert np.allclose(expected_return(kuhn, prof), brute_force_return(kuhn, prof), atol=1e-12)


def test_reach_root_and_deterministic(kuhn):
    prof = PolicyProfile.uniform(kuhn)
    assert reach(kuhn, prof, 0) == (1.0, (1.0, 1.0))
    rng = np.random.default_rng(3)
    det = PolicyProfile((pure_policy(kuhn, 0, rng), pure_policy(kuhn, 1, rng)))
    r = history_reach(kuhn, det)
    assert set(np.unique(r[:, 1:])) <= {0.0, 1.0}


def test_reach_factorization(leduc):
    prof = random_profile(leduc, np.random.default_rng(0))
    table = history_reach(leduc, prof)
    rng = np.random.default_rng(1)
    for h in rng.choice(leduc.num_histories, 300, replace=False):
        c, (f1, f2) = reach(leduc, prof, int(h))
        assert np.isclose(c * f1 * f2, table[h].prod(), rtol=0, atol=1e-12)
        assert np.isclose(f1, table[h, 1], atol=1e-12) and np.isclose(f2, table[h, 2], atol=1e-12)


def test_average_single_policy_is_identity(kuhn):
    pol = random_policy(kuhn, 1, np.random.default_rng(2))
    avg = average_policies([pol], [1.0])
    assert np.allclose(avg.probs, pol.probs)


def test_average_of_pure_policies_is_linear(kuhn):
    rng = np.random.default_rng(4)
    a, b = pure_policy(kuhn, 0, rng), pure_policy(kuhn, 0, rng)
    avg = average_policies([a, b], [0.3, 0.7])
    for _ in range(20):
        opp = random_policy(kuhn, 1, rng)
        mix = 0.3 * expected_return(kuhn, PolicyProfile((a, opp)))[0] \
            + 0.7 * expected_return(kuhn, PolicyProfile((b, opp)))[0]
        assert np.isclose(expected_return(kuhn, PolicyProfile((avg, opp)))[0], mix, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_average_linearity_property(seed, w):
    ix = _mini()
    rng = np.random.default_rng(seed)
    a, b = random_policy(ix, 1, rng), random_policy(ix, 1, rng)
    opp = random_policy(ix, 0, rng)
    if w in (0.0, 1.0):
        w = 0.5
    avg = average_policies([a, b], [w, 1 - w])
    mix = w * expected_return(ix, PolicyProfile((opp, a)))[1] \
        + (1 - w) * expected_return(ix, PolicyProfile((opp, b)))[1]
    assert abs(expected_return(ix, PolicyProfile((opp, avg)))[1] - mix) <= 1e-9


@lru_cache(maxsize=1)
def _mini():
    # hypothesis does not mix with function-scoped fixtures
    return enumerate_game(make_game("mini_poker_asym"))


def test_average_rejects_mixed_players(kuhn):
    with pytest.raises(ValueError):
        average_policies([BehaviorPolicy(kuhn, 0), BehaviorPolicy(kuhn, 1)], [1, 1])
    with pytest.raises(ValueError):
        average_policies([BehaviorPolicy(kuhn, 0)], [0.0])


def test_unreached_infostates_fall_back_to_uniform(chain):
    stop_first = BehaviorPolicy(chain, 0)
    root = chain.infostate[0, 0]
    stop_first[root] = [0.0, 1.0]
    avg = average_policies([stop_first], [1.0])
    deep = chain.infostate[0, chain.find_history(["go"])]
    assert np.allclose(avg[deep], [0.5, 0.5])


def test_support(rps, kuhn):
    assert support(BehaviorPolicy(rps, 1), "[||]") == {"R", "P", "S"}
    pol = BehaviorPolicy(rps, 0)
    pol["[|]"] = [0.0, 1.0, 0.0]
    assert support(pol, "[|]") == {"P"}
    prof = run_cfr(None, kuhn, CfrConfig.plus(), 3000, checkpoints=[]).profile
    sizes = [len(support(prof[p], int(s))) for p in (0, 1) for s in kuhn.decision_infostates(p)]
    assert max(sizes) >= 2


def test_range_at_rps(rps):
    prof = PolicyProfile.uniform(rps)
    second = int(rps.public[rps.find_history(["R"])])
    r = range_at(rps, prof, second, 0)
    assert np.allclose(r.weights, 1 / 3)
    root = range_at(rps, prof, int(rps.public[0]), 0)
    assert np.allclose(root.weights, [1.0])


def test_range_at_matches_history_factors(leduc):
    prof = run_cfr(None, leduc, CfrConfig.vanilla(), 20, checkpoints=[]).profile
    table = history_reach(leduc, prof)
    for u in range(leduc.num_public_states):
        for p in (0, 1):
            r = range_at(leduc, prof, u, p)
            for s, w in zip(r.infostates, r.weights):
                for h in leduc.info_histories[p][s]:
                    assert abs(table[h, p + 1] - w) <= 1e-12


def test_range_normalize(rps):
    prof = PolicyProfile.from_rows(rps, ({"[|]": [0.2, 0.2, 0.6]}, {}))
    second = int(rps.public[rps.find_history(["R"])])
    r = range_at(rps, prof, second, 0, normalize=True)
    assert r.normalized and np.isclose(r.weights.sum(), 1.0)


def test_strategy_text_round_trip(kuhn):
    prof = random_profile(kuhn, np.random.default_rng(5))
    text = prof.to_text()
    lines = text.splitlines()
    assert lines == sorted(lines)
    back = profile_from_text(kuhn, text)
    for p in (0, 1):
        assert np.allclose(back[p].probs, prof[p].probs, rtol=1e-11, atol=0)
    assert back.to_text() == text


def test_strategy_text_missing_rows(kuhn):
    text = PolicyProfile.uniform(kuhn).to_text().splitlines()
    with pytest.raises(StrategyFormatError, match="misses"):
        profile_from_text(kuhn, "\n".join(text[1:]))
    with pytest.raises(StrategyFormatError, match="unknown infostate"):
        profile_from_text(kuhn, "[zz|Q] p=1")


def test_validate(kuhn):
    pol = BehaviorPolicy(kuhn, 0)
    pol.validate()
    pol.probs[0] = 2.0
    with pytest.raises(ValueError):
        pol.validate()
