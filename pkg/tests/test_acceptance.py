"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict through the ``acceptance`` fixture;
the lines are printed in the terminal summary.  Runtimes are measured and
asserted against each criterion's budget.
"""
import contextlib
import itertools
import math
import time

import numpy as np
import pytest

from fosgsolve.bestresponse import best_response, nashconv
from fosgsolve.cfr import CfrConfig, run_cfr
from fosgsolve.evalkit import METHODS, estimate, exact_baseline, matching_pennies_demo, simulate_matches
from fosgsolve.fosg import check_structure, enumerate_game
from fosgsolve.games import CYCLING_2X2, GAME_NAMES, make_game, rps_spec
from fosgsolve.mccfr import OutcomeSampler, SampleScheme, probe_histories, run_mccfr, variance_probe
from fosgsolve.policy import BehaviorPolicy, PolicyProfile, expected_return
from fosgsolve.regret import matrix_selfplay
from fosgsolve.resolve import PolicyAgent, ValueFunctionHandle, continual_resolving_profile
from fosgsolve.subgame import (
    margins_bench, resolve, reward_range, subgame_value_bounds, subgames_after_chance, unsafe_resolve,
    value_function_exact,
)

from test_cfr import KUHN_VALUE
from test_mccfr import _check_unbiased, trained


@contextlib.contextmanager
def criterion(log, num, budget):
    """Time the block, enforce the budget (seconds) and log the verdict."""
    detail = {}
    start = time.perf_counter()
    try:
        yield detail
        took = time.perf_counter() - start
        assert took < budget, f"took {took:.1f}s, budget {budget}s"
    except BaseException:
        took = time.perf_counter() - start
        log.append((num, False, f"{detail.get('text', '')} ({took:.1f}s)".strip()))
        raise
    log.append((num, True, f"{detail.get('text', '')} ({took:.1f}s)".strip()))


def second(ix):
    return int(ix.public[ix.find_history(["R"])])


def test_c01_rps_expected_value(acceptance, rps):
    with criterion(acceptance, 1, 1.0) as d:
        p1, p2 = BehaviorPolicy(rps, 0), BehaviorPolicy(rps, 1)
        p1["[|]"] = [0.2, 0.2, 0.6]
        p2["[||]"] = [0.4, 0.2, 0.4]
        v = expected_return(rps, PolicyProfile((p1, p2)))[0]
        d["text"] = f"rps value {v:.15f}"
        assert abs(v - 0.08) <= 1e-12


def test_c02_rps_value_function_rows(acceptance, rps_std):
    with criterion(acceptance, 2, 1.0) as d:
        u = second(rps_std)
        worst = 0.0
        for r1, v1, v2 in [([0.2, 0.2, 0.6], [0, 1, -1], 0.4), ([0.4, 0.3, 0.3], [-1, 0, 1], 0.1)]:
            a, b = value_function_exact(rps_std, u, r1, [1.0], 10_000)
            worst = max(worst, np.abs(a.values - v1).max(), abs(b.values[0] - v2))
        uni = np.full(3, 1 / 3)
        a, b = value_function_exact(rps_std, u, uni, [1.0], 10_000)
        # balance row: player 2 gets zero and player 1's values average to zero
        worst = max(worst, abs(b.values[0]), abs(uni @ a.values + b.values[0]))
        d["text"] = f"max row error {worst:.2e}"
        assert worst <= 1e-3


def test_c03_folk_theorem_and_regret_bound(acceptance):
    T = 10_000
    with criterion(acceptance, 3, 5.0) as d:
        notes = []
        for name, A in [("rps", rps_spec().matrix), ("cycling2x2", CYCLING_2X2.matrix)]:
            res = matrix_selfplay(A, "rm", T, checkpoints=range(1, T + 1, 97))
            for rec in res.trace:
                assert rec["nashconv"] <= (rec["r1"] + rec["r2"]) / rec["iter"] + 1e-9
            # regret matching's bound scales with the payoff spread of each player's rewards
            spread = float(A.max() - A.min())
            for n, r in zip(A.shape, res.regrets):
                assert r <= spread * math.sqrt(n * T)
            notes.append(f"{name} regrets ({res.regrets[0]:.1f},{res.regrets[1]:.1f})")
        d["text"] = "; ".join(notes)


def test_c04_kuhn_cfr_convergence(acceptance, kuhn):
    with criterion(acceptance, 4, 30.0) as d:
        res = run_cfr(None, kuhn, CfrConfig.vanilla(), 10_000, checkpoints=[10_000])
        nc = res.diagnostics[-1]["nashconv"]
        v = expected_return(kuhn, res.profile)[0]
        d["text"] = f"nashconv {nc:.2e}, value {v:.5f} vs reference {KUHN_VALUE:.5f}"
        assert nc < 1e-2
        assert abs(v - KUHN_VALUE) < 2e-3


def test_c05_cfr_plus_beats_cfr_on_leduc(acceptance, leduc):
    with criterion(acceptance, 5, 300.0) as d:
        nc = {}
        for name, cfg in [("cfr", CfrConfig.vanilla()), ("cfr+", CfrConfig.plus())]:
            nc[name] = run_cfr(None, leduc, cfg, 1000, checkpoints=[1000]).diagnostics[-1]["nashconv"]
        d["text"] = f"cfr {nc['cfr']:.2e}, cfr+ {nc['cfr+']:.2e}"
        assert nc["cfr+"] < nc["cfr"]


def test_c06_mccfr_unbiasedness(acceptance, kuhn):
    with criterion(acceptance, 6, 60.0) as d:
        _check_unbiased(trained(kuhn, "os"))
        sampler = trained(kuhn, "vr")
        rng = np.random.default_rng(2024)
        for _ in range(10):
            _check_unbiased(sampler, rng.normal(0, 3, kuhn.num_histories).tolist())
        d["text"] = "os and vr under 10 random baselines match exact values to 1e-9"


def test_c07_vr_mccfr_speedup(acceptance, leduc):
    budget = 10_000_000
    with criterion(acceptance, 7, 900.0) as d:
        nc = {}
        for v in ("os", "vr"):
            res = run_mccfr(None, leduc, v, SampleScheme(seed=0), T=10**9, checkpoints=[], max_touches=budget)
            nc[v] = res.diagnostics[-1]["nashconv"]
        oracle = run_mccfr(None, leduc, "vr_oracle", SampleScheme(seed=0), T=2000, checkpoints=[]).sampler
        var = 0.0
        for p in (0, 1):
            oracle.set_oracle_baselines(p)
            var = max(var, variance_probe(oracle, p, probe_histories(oracle, p, count=20), 200))
        d["text"] = f"os {nc['os']:.3e}, vr {nc['vr']:.3e} at 1e7 touches; oracle variance {var:.1e}"
        assert nc["vr"] < nc["os"]
        assert var <= 1e-18  # zero up to float rounding


def test_c08_unsafe_vs_safe_resolving(acceptance, rps_std):
    with criterion(acceptance, 8, 10.0) as d:
        trunk = PolicyProfile.uniform(rps_std)
        u = second(rps_std)
        orig = best_response(rps_std, trunk[1]).value
        unsafe = unsafe_resolve(rps_std, u, trunk, 1, iters=1000, tie_break="adversarial")
        bad = best_response(rps_std, unsafe.policy).value
        safe = resolve("cfrd", rps_std, u, trunk, 1, iters=10_000)
        good = best_response(rps_std, safe.policy).value
        d["text"] = f"original {orig:.3f}, unsafe {bad:.3f}, cfrd {good:.4f}"
        assert bad >= 0.5
        assert good <= orig + 1e-2


def test_c09_margin_ordering(acceptance, leduc):
    with criterion(acceptance, 9, 1800.0) as d:
        pairs = subgames_after_chance(leduc)
        recs = []
        for trunk_iters in (20, 10):  # two weakened trunks give 2 x 150 sub-games
            trunk = run_cfr(None, leduc, CfrConfig.vanilla(), trunk_iters, checkpoints=[]).profile
            recs += margins_bench(leduc, trunk, pairs, 10_000)
        med = {t: float(np.median([r["margin"] for r in recs if r["technique"] == t]))
               for t in ("unsafe", "cfrd", "maxmargin")}
        n = len(recs) // 3
        violations = [r for r in recs if r["margin"] >= 0 and r["brv_combined"] > r["brv_original"] + 1e-6]
        d["text"] = (f"{n} sub-games; medians maxmargin {med['maxmargin']:.4f} cfrd {med['cfrd']:.4f} "
                     f"unsafe {med['unsafe']:.4f}; {len(violations)} non-negative-margin regressions")
        assert n >= 200
        assert med["maxmargin"] >= med["cfrd"] >= 0 >= med["unsafe"]
        assert not violations


def _sweep(index, runs):
    return [nashconv(index, continual_resolving_profile(index, T, vf, depth)).nashconv for T, vf, depth in runs]


def test_c10_continual_resolving_trend(acceptance, kuhn, leduc):
    exact = ValueFunctionHandle.exact_cfr
    with criterion(acceptance, 10, 1800.0) as d:
        curves = {
            "kuhn T": _sweep(kuhn, [(T, None, "full") for T in (100, 1000, 10_000)]),
            "kuhn inner": _sweep(kuhn, [(1000, exact(k), "steps(1)") for k in (10, 20, 40)]),
            "leduc T": _sweep(leduc, [(T, None, "full") for T in (100, 1000, 10_000)]),
            "leduc inner": _sweep(leduc, [(50, exact(k), "steps(1)") for k in (10, 20, 40)]),
        }
        d["text"] = "; ".join(f"{k} " + "/".join(f"{x:.2e}" for x in v) for k, v in curves.items())
        for v in curves.values():
            assert all(a > b for a, b in itertools.pairwise(v))
        assert curves["kuhn T"][-1] < 1e-2


def test_c11_stitching_breaks_consistency(acceptance, cmp_index):
    with criterion(acceptance, 11, 120.0) as d:
        rep = matching_pennies_demo(cmp_index)
        d["text"] = (f"solves {max(rep.solve_nashconv):.3f} at worst, "
                     f"stitched {rep.stitched_nashconv:.3f}")
        assert max(rep.solve_nashconv) < 0.05
        assert rep.stitched_nashconv >= 0.5


def test_c12_aivat_variance_reduction(acceptance, kuhn):
    with criterion(acceptance, 12, 300.0) as d:
        prof = run_cfr(None, kuhn, CfrConfig.plus(), 1000, checkpoints=[]).profile
        agents = [PolicyAgent(kuhn, p, prof[p]) for p in (0, 1)]
        recs = simulate_matches(kuhn, agents, 100_000, seed=7)
        base = exact_baseline(kuhn, prof)
        reps = {m: estimate(kuhn, recs, m, base) for m in METHODS}
        d["text"] = ", ".join(f"{m} sd {r.sd:.3f}" for m, r in reps.items())
        for a, b in itertools.combinations(reps.values(), 2):
            assert abs(a.mean - b.mean) <= 3 * math.hypot(a.se, b.se)
        assert reps["aivat"].sd <= 0.5 * reps["mc"].sd
        assert reps["aivat"].sd <= reps["mivat_imaginary"].sd <= reps["mc"].sd


def perturb_exact(d, eps, rng):
    """Mean-zero shift with sup-norm exactly ``eps``; ``d`` stays a distribution."""
    delta = rng.normal(size=len(d))
    delta -= delta.mean()
    return d + eps * delta / np.abs(delta).max()


def test_c13_value_lipschitz_in_ranges(acceptance, rps, kuhn, leduc, mini):
    eps = 0.01
    with criterion(acceptance, 13, 60.0) as d:
        worst_ratio = 0.0
        for ix in (rps, kuhn, leduc, mini):
            rng = np.random.default_rng(13)
            states = [u for u in range(ix.num_public_states)
                      if reward_range(ix, u) > 0 and max(len(m) for m in ix.pub_infostates[u]) > 1]
            for _ in range(50):
                u = states[rng.integers(len(states))]
                sizes = [len(ix.pub_infostates[u][p]) for p in (0, 1)]
                # mixing with uniform keeps every entry above eps, so the shift stays non-negative
                a = [0.5 * rng.dirichlet(np.ones(n)) + 0.5 / n for n in sizes]
                b = [perturb_exact(x, eps, rng) if len(x) > 1 else x for x in a]
                lo_a, hi_a = subgame_value_bounds(ix, u, *a, iters=2000, normalized=False)
                lo_b, hi_b = subgame_value_bounds(ix, u, *b, iters=2000, normalized=False)
                worst = max(hi_b - lo_a, hi_a - lo_b)  # largest change consistent with both intervals
                bound = eps * reward_range(ix, u)
                worst_ratio = max(worst_ratio, worst / bound)
                assert worst <= bound
        d["text"] = f"200 instances, worst change / bound = {worst_ratio:.3f}"


def test_c14_structural_suite(acceptance):
    with criterion(acceptance, 14, 120.0) as d:
        counts = {}
        for name in GAME_NAMES:
            if name.startswith("matrix:"):
                name = "matrix:1,-2;-2,4"
            ix = enumerate_game(make_game(name))
            assert check_structure(ix) == [], name
            counts[name] = ix.counts()
        d["text"] = "; ".join(
            f"{g} h={counts[g]['histories']} i={counts[g]['infostates']} p={counts[g]['public_states']}"
            for g in ("kuhn", "leduc", "glasses"))


@pytest.mark.parametrize("n", [2, 5])
def test_exact_perturbation_shape(n):
    rng = np.random.default_rng(n)
    d = 0.5 * rng.dirichlet(np.ones(n)) + 0.5 / n
    e = perturb_exact(d, 0.01, rng)
    assert np.isclose(np.abs(e - d).max(), 0.01) and np.isclose(e.sum(), 1.0) and e.min() >= 0
