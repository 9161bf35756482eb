import numpy as np
import pytest

from fosgsolve.cfr import CfrConfig, CfrSolver, compute_values, game_value_bounds, run_cfr
from fosgsolve.fosg import CHANCE, TERMINAL
from fosgsolve.policy import PolicyProfile, expected_return, history_reach, range_at
from fosgsolve.seqtree import full_tree

from test_policy import random_profile

KUHN_VALUE = -1.0 / 18.0  # frozen from the slow CFR+ oracle run below


class NaiveCfr:
    """Recursive history-walking CFR kept deliberately simple, as an oracle."""

    def __init__(self, index, config):
        self.ix = index
        self.cfg = config
        self.regrets = {}
        self.avg = {}
        for p in (0, 1):
            for s in index.decision_infostates(p):
                n = len(index.info_actions[p][s])
                self.regrets[p, int(s)] = np.zeros(n)
                self.avg[p, int(s)] = np.zeros(n)
        self.t = 0

    def policy(self, p, s):
        pos = np.maximum(self.regrets[p, s], 0.0)
        tot = pos.sum()
        return pos / tot if tot > 0 else np.full(len(pos), 1.0 / len(pos))

    def walk(self, h, p, own, opp, delta, w):
        ix = self.ix
        a = ix.actor[h]
        kids = ix.child_ids(h)
        if a == TERMINAL:
            return ix.returns[h, p]
        if a == CHANCE:
            return sum(ix.edge_prob[c] * self.walk(c, p, own, opp * ix.edge_prob[c], delta, w) for c in kids)
        s = int(ix.infostate[a, h])
        sigma = self.policy(a, s)
        if a == p:
            vals = np.array([self.walk(c, p, own * sigma[i], opp, delta, w) for i, c in enumerate(kids)])
            v = sigma @ vals
            delta.setdefault(s, np.zeros(len(kids)))
            delta[s] += opp * (vals - v)
            self.avg[p, s] += w * own * sigma
            return v
        return sum(sigma[i] * self.walk(c, p, own, opp * sigma[i], delta, w) for i, c in enumerate(kids))

    def _apply(self, p, delta):
        for s, d in delta.items():
            r = self.regrets[p, s] + d
            self.regrets[p, s] = np.maximum(r, 0.0) if self.cfg.minimizer == "rm_plus" else r

    def iterate(self):
        self.t += 1
        w = float(self.t) if self.cfg.averaging == "linear" else 1.0
        if self.cfg.update == "simultaneous":
            deltas = [{}, {}]
            for p in (0, 1):
                self.walk(0, p, 1.0, 1.0, deltas[p], w)
            for p in (0, 1):
                self._apply(p, deltas[p])
        else:
            for p in (0, 1):
                d = {}
                self.walk(0, p, 1.0, 1.0, d, w)
                self._apply(p, d)

    def average(self, p, s):
        m = self.avg[p, s]
        return m / m.sum() if m.sum() > 0 else np.full(len(m), 1.0 / len(m))


@pytest.mark.parametrize("config", [CfrConfig.vanilla(), CfrConfig.plus()], ids=["cfr", "cfr+"])
@pytest.mark.parametrize("game", ["kuhn", "mini"])
def test_matches_naive_oracle(config, game, request):
    ix = request.getfixturevalue(game)
    naive = NaiveCfr(ix, config)
    for _ in range(40):
        naive.iterate()
    prof = run_cfr(None, ix, config, 40, checkpoints=[]).profile
    for p in (0, 1):
        for s in ix.decision_infostates(p):
            assert np.allclose(prof[p][s], naive.average(p, int(s)), atol=1e-10)


def test_leduc_matches_naive_oracle_briefly(leduc):
    naive = NaiveCfr(leduc, CfrConfig.plus())
    for _ in range(3):
        naive.iterate()
    prof = run_cfr(None, leduc, CfrConfig.plus(), 3, checkpoints=[]).profile
    for p in (0, 1):
        for s in leduc.decision_infostates(p):
            assert np.allclose(prof[p][s], naive.average(p, int(s)), atol=1e-10)


def _second(ix):
    return int(ix.public[ix.find_history(["R"])])


def test_compute_values_rps_row(rps_std):
    prof = PolicyProfile.from_rows(rps_std, ({}, {"[||]": [1.0, 0.0, 0.0]}))
    res = compute_values(rps_std, _second(rps_std), [0.2, 0.2, 0.6], [1.0], prof)
    assert np.allclose(res.values[0], [0, 1, -1], atol=1e-12)
    assert np.allclose(res.values[1], [0.4], atol=1e-12)


def test_compute_values_zero_range(kuhn):
    u = int(kuhn.public[kuhn.find_history([0, 0])])
    n = [len(kuhn.pub_infostates[u][p]) for p in (0, 1)]
    res = compute_values(kuhn, u, np.zeros(n[0]), np.zeros(n[1]), PolicyProfile.uniform(kuhn))
    assert all(np.all(v == 0.0) for v in res.values)


def _history_cfv(ix, prof, u, p):
    """Counterfactual value of p's infostates at u by direct terminal sums."""
    table = history_reach(ix, prof)
    out = {}
    members = ix.pub_infostates[u][p]
    for s in members:
        total = 0.0
        for h in ix.info_histories[p][s]:
            own_h = table[h, p + 1]
            for z in ix.terminals():
                path = ix.history_path(int(z))
                if int(h) in path:
                    # everything but the owner's reach above h
                    total += table[z, 0] * table[z, 2 - p] * table[z, p + 1] / own_h * ix.returns[z, p]
        out[int(s)] = total
    return out


def test_compute_values_kuhn_brute_force(kuhn):
    prof = random_profile(kuhn, np.random.default_rng(0))
    u = int(kuhn.public[kuhn.find_history([0, 0])])  # after the deal
    ranges = [range_at(kuhn, prof, u, p).weights for p in (0, 1)]
    res = compute_values(kuhn, u, ranges[0], ranges[1], prof)
    for p in (0, 1):
        want = _history_cfv(kuhn, prof, u, p)
        for s, v in zip(res.infostates[p], res.values[p]):
            assert np.isclose(v, want[int(s)], atol=1e-12)


def test_values_balance_at_every_public_state(leduc):
    prof = random_profile(leduc, np.random.default_rng(1))
    for u in range(0, leduc.num_public_states, 7):
        ranges = [range_at(leduc, prof, u, p).weights for p in (0, 1)]
        res = compute_values(leduc, u, ranges[0], ranges[1], prof)
        assert abs(ranges[0] @ res.values[0] + ranges[1] @ res.values[1]) <= 1e-9


def test_rps_converges_to_uniform(rps):
    prof = run_cfr(None, rps, CfrConfig.vanilla(), 1000, checkpoints=[]).profile
    assert np.abs(prof[0]["[|]"] - 1 / 3).max() < 0.05
    assert np.abs(prof[1]["[||]"] - 1 / 3).max() < 0.05


def test_kuhn_value(kuhn):
    res = run_cfr(None, kuhn, CfrConfig.vanilla(), 10_000, checkpoints=[10_000])
    assert res.diagnostics[-1]["nashconv"] < 1e-2
    assert abs(expected_return(kuhn, res.profile)[0] - KUHN_VALUE) < 2e-3


@pytest.mark.slow
def test_kuhn_value_oracle(kuhn):
    lo, hi = game_value_bounds(kuhn, tol=1e-6, max_iter=3_000_000)
    assert lo - 1e-9 <= KUHN_VALUE <= hi + 1e-9
    assert hi - lo < 2e-6


@pytest.mark.parametrize("config", [CfrConfig.vanilla(), CfrConfig.plus()], ids=["cfr", "cfr+"])
def test_full_regret_bounded_by_local_regrets(kuhn, config):
    res = run_cfr(None, kuhn, config, 2000, track_full_regret=True)
    for rec in res.diagnostics:
        assert rec["full_regret_1"] <= rec["sum_pos_regret_1"] + 1e-9
        assert rec["full_regret_2"] <= rec["sum_pos_regret_2"] + 1e-9


def test_nashconv_bounded_by_regrets(kuhn):
    res = run_cfr(None, kuhn, CfrConfig.vanilla(), 3000)
    for rec in res.diagnostics:
        bound = (rec["sum_pos_regret_1"] + rec["sum_pos_regret_2"]) / rec["iter"]
        assert rec["nashconv"] <= bound + 1e-9


def test_single_decision_full_regret_is_local(rps):
    res = run_cfr(None, rps, CfrConfig.vanilla(), 57, checkpoints=[])
    s = res.solver
    assert np.isclose(s.full_regret(0), s.tables.true_regrets[0].max(), atol=1e-12)


def test_equilibrium_has_no_full_regret(rps):
    # regret matching from uniform never leaves uniform in RPS
    res = run_cfr(None, rps, CfrConfig.vanilla(), 100, checkpoints=[])
    assert res.solver.full_regret(0) <= 1e-9 and res.solver.full_regret(1) <= 1e-9


def test_linear_averaging_weights(kuhn):
    T = 25
    solver = CfrSolver(full_tree(kuhn), CfrConfig.plus(), horizon=T)
    seen = [[], []]
    solver.observers.append(lambda p, xs, fv, pi, w: seen[p].append((w, xs[p].copy())))
    solver.run(T)
    assert solver.weight_sum == T * (T + 1) / 2
    tree = solver.tree
    for p in (0, 1):
        assert [w for w, _ in seen[p]] == list(range(1, T + 1))
        mix = sum(w * x for w, x in seen[p])[tree.n_entry[p]:] * 2 / (T * (T + 1))
        assert np.allclose(solver.average(p), tree.normalize(p, mix))


def test_skip_fraction(kuhn):
    solver = CfrSolver(full_tree(kuhn), CfrConfig("rm_plus", "alternating", "linear", 0.5), horizon=10)
    solver.run(10)
    assert solver.weight_sum == sum(range(6, 11))


def test_rm_linear_is_permitted(kuhn):
    res = run_cfr(None, kuhn, CfrConfig("rm", "simultaneous", "linear"), 50, checkpoints=[])
    for p in (0, 1):
        res.profile[p].validate()


def test_config_validation():
    with pytest.raises(ValueError):
        CfrConfig("hedge")
    with pytest.raises(ValueError):
        CfrConfig(skip=1.0)
    with pytest.raises(ValueError):
        CfrConfig.named("dcfr")
    assert CfrConfig.named("cfr+") == CfrConfig("rm_plus", "alternating", "linear", 0.0)


def test_run_cfr_needs_iterations(kuhn):
    with pytest.raises(ValueError):
        run_cfr(None, kuhn, T=0)
