import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fosgsolve.fosg import (
    NOOP, TERMINAL, EnumerationError, GameModel, Observation, Outcome, TreeIndex,
    check_structure, common_info_closure, consistent_states, enumerate_game, infostate_key,
    is_prefix,
)
from fosgsolve.games import GAME_NAMES, MatrixGameSpec, make_game, matrix_to_fosg


class _Over(GameModel):
    name = "over"

    def initial_state(self):
        return 0

    def legal_actions(self, state, player):
        return ()

    def transition(self, state, joint):
        raise AssertionError("terminal at the root")


class _Forever(GameModel):
    """Player 1 keeps choosing; the game never ends."""

    def initial_state(self):
        return 0

    def legal_actions(self, state, player):
        return ("go",) if player == 0 else (NOOP,)

    def transition(self, state, joint):
        return [Outcome(1.0, state + 1, Observation("g"))]


def _label_set(index, pairs):
    return {index.info_labels[p][s] for p, s in pairs}


def test_rps_has_thirteen_world_states(rps):
    assert rps.num_histories == 13
    assert len(rps.terminals()) == 9


def test_terminal_root():
    ix = enumerate_game(_Over())
    assert ix.num_histories == 1
    assert ix.counts()["decision_infostates"] == 0


def test_depth_limit_names_length():
    with pytest.raises(EnumerationError, match="history length 6"):
        enumerate_game(_Forever(), max_depth=5)


def test_kuhn_counts(kuhn):
    c = kuhn.counts()
    # every tree node counted, including the two deal nodes and terminals
    assert c == {"histories": 58, "terminals": 30, "infostates": 60,
                 "decision_infostates": 12, "public_states": 11}


def test_kuhn_key_hides_opponent_card(kuhn):
    s = kuhn.label_id(0, "[b|Q]")
    hs = kuhn.info_histories[0][s]
    assert len(hs) == 2  # opponent holds J or K
    keys = {infostate_key(kuhn, int(h), 0) for h in hs}
    assert len(keys) == 1
    assert {kuhn.info_labels[1][kuhn.infostate[1, h]] for h in hs} == {"[b||J]", "[b||K]"}


def test_empty_history_key(kuhn):
    for p in (0, 1):
        assert len(infostate_key(kuhn, 0, p).seq) == 1


def test_rps_second_mover_single_key(rps):
    before = [rps.find_history([a]) for a in "RPS"]
    assert len({infostate_key(rps, h, 1) for h in before}) == 1


def test_consistent_states_mini_poker(mini):
    s = mini.label_id(0, "[d|Q]")
    assert _label_set(mini, [(1, x) for x in consistent_states(mini, 0, s)]) == {"[d||Q]"}
    s = mini.label_id(1, "[d||A]")
    assert _label_set(mini, [(0, x) for x in consistent_states(mini, 1, s)]) == {"[d|A]", "[d|K]"}


def test_closure_mini_poker(mini):
    s = mini.label_id(0, "[d|A]")
    assert _label_set(mini, common_info_closure(mini, 0, s)) == {"[d|A]", "[d||A]", "[d|K]", "[d||K]"}
    s = mini.label_id(0, "[d|Q]")
    cl = common_info_closure(mini, 0, s)
    assert _label_set(mini, cl) == {"[d|Q]", "[d||Q]"}
    pub = mini.info_public[0][s]
    members = sum(len(mini.pub_infostates[pub][p]) for p in (0, 1))
    assert len(cl) < members


def test_closure_rps_second_public_state(rps):
    s = rps.label_id(0, "[|R]")
    pub = rps.info_public[0][s]
    cl = common_info_closure(rps, 0, s)
    assert len(cl) == 4
    assert cl == {(p, int(x)) for p in (0, 1) for x in rps.pub_infostates[pub][p]}


def test_perfect_information_singleton():
    # player 2 sees player 1's move publicly
    class Seen(GameModel):
        def initial_state(self):
            return ()

        def legal_actions(self, state, player):
            if len(state) == 2:
                return ()
            return ("a", "b") if player == len(state) else (NOOP,)

        def transition(self, state, joint):
            a = joint[len(state)]
            r = 1.0 if len(state) == 1 and a == "a" else 0.0
            return [Outcome(1.0, state + (a,), Observation(a), (r, -r))]

    ix = enumerate_game(Seen())
    for s in ix.decision_infostates(1):
        assert len(consistent_states(ix, 1, int(s))) == 1


@pytest.mark.parametrize("name", [g for g in GAME_NAMES if not g.startswith("matrix")] + ["matrix:2,-1;0,3"])
def test_structure_all_games(name):
    ix = enumerate_game(make_game(name))
    assert check_structure(ix) == []
    # two traversal orders agree on counts
    assert sum(len(h) for h in ix.pub_histories) == ix.num_histories


def test_prefix_monotonicity(kuhn):
    for h in range(1, kuhn.num_histories):
        g = int(kuhn.parent[h])
        for p in (0, 1):
            assert is_prefix(infostate_key(kuhn, g, p), infostate_key(kuhn, h, p))


def test_legal_actions_shared_within_infostate(leduc):
    for p in (0, 1):
        for s in leduc.decision_infostates(p):
            hs = leduc.info_histories[p][s]
            acts = {tuple(leduc.edge_action[c] for c in leduc.child_ids(int(h))) for h in hs}
            assert len(acts) == 1


def test_serialization_is_deterministic(tmp_path):
    a = enumerate_game(make_game("kuhn")).to_bytes()
    b = enumerate_game(make_game("kuhn")).to_bytes()
    assert a == b
    path = tmp_path / "kuhn.idx"
    ix = TreeIndex.from_bytes(a)
    ix.save(path)
    assert TreeIndex.load(path).to_bytes() == a


def test_chance_reach_sums_to_one(leduc):
    z = leduc.terminals()
    # histories right after both private deals carry all of the chance mass
    deals = leduc.pub_histories[int(leduc.public[leduc.child_ids(leduc.child_ids(0)[0])[0]])]
    assert np.isclose(leduc.chance_reach[deals].sum(), 1.0)
    assert np.all(leduc.chance_reach[z] > 0)


def test_max_reward_delta(kuhn):
    assert kuhn.max_reward_delta == 4.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_matrix_games_are_well_formed(n, m, data):
    vals = data.draw(st.lists(st.integers(-5, 5), min_size=n * m, max_size=n * m))
    A = np.array(vals, dtype=float).reshape(n, m)
    ix = enumerate_game(matrix_to_fosg(MatrixGameSpec(A)))
    assert check_structure(ix) == []
    assert ix.num_histories == 1 + n + n * m
    z = ix.terminals()
    assert np.allclose(ix.returns[z].sum(axis=1), 0.0)
    assert ix.max_reward_delta == A.max() - A.min()
    assert np.all(ix.actor[z] == TERMINAL)
