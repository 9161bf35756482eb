import numpy as np
import pytest

from fosgsolve.bestresponse import nashconv
from fosgsolve.cfr import CfrConfig, run_cfr
from fosgsolve.fosg import CHANCE, enumerate_game
from fosgsolve.policy import BehaviorPolicy, PolicyProfile, expected_return, history_reach
from fosgsolve.resolve import PolicyAgent
from fosgsolve.evalkit import (
    METHODS, AnnotationError, MatchError, TwoStepTrap, estimate, estimate_value, exact_baseline,
    matching_pennies_demo, record_for_terminal, simulate_matches, stitch, two_step_trap_demo,
)

from test_policy import pure_policy, random_profile


def exhaustive(index, profile, player, method, baseline, correct_opponent=False):
    """Sum over terminals of P(z) times the estimator's value for a match ending in z."""
    table = history_reach(index, profile)
    total = 0.0
    for z in index.terminals():
        pz = table[z].prod()
        if pz > 0:
            rec = record_for_terminal(index, profile, int(z), player)
            total += pz * estimate_value(index, rec, method, baseline, correct_opponent)
    return total


@pytest.mark.parametrize("method", METHODS)
def test_exhaustive_unbiasedness_kuhn(kuhn, method):
    rng = np.random.default_rng(0)
    prof = random_profile(kuhn, rng)
    truth = expected_return(kuhn, prof)
    baselines = [None, exact_baseline(kuhn, prof), rng.normal(0, 2, kuhn.num_histories)]
    for b in baselines:
        for p in (0, 1):
            assert abs(exhaustive(kuhn, prof, p, method, b) - truth[p]) <= 1e-9


def test_opponent_corrections_stay_unbiased(kuhn):
    rng = np.random.default_rng(1)
    prof = random_profile(kuhn, rng)
    b = rng.normal(size=kuhn.num_histories)
    got = exhaustive(kuhn, prof, 0, "aivat", b, correct_opponent=True)
    assert abs(got - expected_return(kuhn, prof)[0]) <= 1e-9


def test_zero_baseline_collapses(kuhn):
    prof = random_profile(kuhn, np.random.default_rng(2))
    zero = np.zeros(kuhn.num_histories)
    for z in kuhn.terminals():
        rec = record_for_terminal(kuhn, prof, int(z), 0)
        assert estimate_value(kuhn, rec, "aivat", zero) == estimate_value(kuhn, rec, "imaginary", zero)
        assert estimate_value(kuhn, rec, "mivat", zero) == estimate_value(kuhn, rec, "mc")


def test_corrections_have_zero_mean(leduc):
    # the difference between a corrected and an uncorrected estimator averages to zero
    rng = np.random.default_rng(3)
    prof = random_profile(leduc, rng)
    b = rng.normal(0, 5, leduc.num_histories)
    table = history_reach(leduc, prof)
    diff_chance = diff_all = 0.0
    for z in leduc.terminals():
        pz = table[z].prod()
        rec = record_for_terminal(leduc, prof, int(z), 1)
        diff_chance += pz * (estimate_value(leduc, rec, "mivat", b) - rec.payoff)
        diff_all += pz * (estimate_value(leduc, rec, "aivat", b) - estimate_value(leduc, rec, "imaginary", b))
    assert abs(diff_chance) <= 1e-12 and abs(diff_all) <= 1e-12


def test_deterministic_game_all_estimators_agree(rps):
    rng = np.random.default_rng(4)
    prof = PolicyProfile((pure_policy(rps, 0, rng), pure_policy(rps, 1, rng)))
    b = rng.normal(size=rps.num_histories)
    for z in rps.terminals():
        if history_reach(rps, prof)[z].prod() == 0:
            continue
        rec = record_for_terminal(rps, prof, int(z), 0)
        vals = {m: estimate_value(rps, rec, m, b) for m in METHODS}
        assert len(set(vals.values())) == 1


def _agents(index, prof):
    return [PolicyAgent(index, p, prof[p]) for p in (0, 1)]


def test_uniform_rps_match_mean(rps):
    recs = simulate_matches(rps, _agents(rps, PolicyProfile.uniform(rps)), 10_000, seed=1)
    rep = estimate(rps, recs, "mc")
    assert rep.count == 10_000
    assert abs(rep.mean) <= 3 * rep.se
    assert np.isclose(rep.values.mean(), rep.mean)


def test_solved_against_rock(rps_std):
    solved = run_cfr(None, rps_std, CfrConfig.plus(), 500, checkpoints=[]).profile
    rock = BehaviorPolicy(rps_std, 1)
    rock["[||]"] = [1.0, 0.0, 0.0]
    prof = PolicyProfile((solved[0], rock))
    recs = simulate_matches(rps_std, _agents(rps_std, prof), 5000, seed=2)
    rep = estimate(rps_std, recs, "mc")
    assert abs(rep.mean - expected_return(rps_std, prof)[0]) <= 3 * rep.se


def test_seeded_matches_repeat(kuhn):
    prof = random_profile(kuhn, np.random.default_rng(5))
    a = simulate_matches(kuhn, _agents(kuhn, prof), 50, seed=9)
    b = simulate_matches(kuhn, _agents(kuhn, prof), 50, seed=9)
    assert [r.terminal for r in a] == [r.terminal for r in b]
    for r in a:
        assert r.payoff == kuhn.returns[r.terminal, 0]
        assert r.steps[0].actor == CHANCE


def test_duplicate_mode(kuhn):
    prof = random_profile(kuhn, np.random.default_rng(6))
    factories = [lambda seat: PolicyAgent(kuhn, seat, prof[seat])] * 2
    recs = simulate_matches(kuhn, factories, 40, seed=3, duplicate=True)
    assert [r.player for r in recs[:4]] == [0, 1, 0, 1]
    for first, second in zip(recs[::2], recs[1::2]):
        assert first.pair == second.pair
        deal = [st.branch for st in first.steps if st.actor == CHANCE]
        assert deal == [st.branch for st in second.steps if st.actor == CHANCE]
    assert estimate(kuhn, recs, "mc").count == 20
    with pytest.raises(ValueError):
        simulate_matches(kuhn, factories, 3, duplicate=True)
    with pytest.raises(MatchError, match="bound to seat"):
        simulate_matches(kuhn, _agents(kuhn, prof), 4, duplicate=True)


class Broken(PolicyAgent):
    def act(self, infostate):
        return None, {int(infostate): np.array([0.7, 0.7])}


def test_invalid_distribution_aborts(kuhn):
    agents = [Broken(kuhn, 0, BehaviorPolicy(kuhn, 0)), PolicyAgent(kuhn, 1, BehaviorPolicy(kuhn, 1))]
    with pytest.raises(MatchError, match="match 0 step 2"):
        simulate_matches(kuhn, agents, 1)


def test_missing_annotations(kuhn):
    prof = PolicyProfile.uniform(kuhn)
    z = int(kuhn.find_history([0, 1, "b", "p"]))
    rec = record_for_terminal(kuhn, prof, z, 0)
    for st in rec.steps:
        st.rows = None
    assert estimate_value(kuhn, rec, "mc") == rec.payoff
    with pytest.raises(AnnotationError):
        estimate_value(kuhn, rec, "aivat", np.zeros(kuhn.num_histories))
    bare = record_for_terminal(kuhn, prof, z, 0)
    for st in bare.steps:
        if st.actor == 1:
            st.row = None
    with pytest.raises(AnnotationError):
        estimate_value(kuhn, bare, "aivat", np.ones(kuhn.num_histories), correct_opponent=True)
    with pytest.raises(ValueError):
        estimate_value(kuhn, rec, "duplicate")


# consistency demos


def test_matching_pennies_stitching(cmp_index):
    rep = matching_pennies_demo(cmp_index)
    assert max(rep.solve_nashconv) < 0.05
    assert rep.stitched_nashconv >= 0.5


def test_stitching_one_solve_is_that_solve(cmp_index):
    rep = matching_pennies_demo(cmp_index)
    same = {key: 1 for key in rep.assignment}
    prof = stitch(cmp_index, rep.solves, same, default=1)
    assert nashconv(cmp_index, prof).nashconv == rep.solve_nashconv[1]


def test_two_step_trap():
    ix = enumerate_game(TwoStepTrap())
    rep = two_step_trap_demo(ix)
    assert max(rep.solve_nashconv) == 0.0
    assert rep.stitched_nashconv > 1.0
