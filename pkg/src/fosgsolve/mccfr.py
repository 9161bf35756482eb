"""Outcome-sampling MCCFR and its variance-reduced (baseline) variant.

One iteration makes one pass per player.  A pass samples a single terminal
history with the sampling policy (epsilon-mix of uniform and the current
policy at player nodes, on-policy at chance nodes), then walks the sampled
path bottom-up, building baseline-corrected value estimates and updating the
pass player's regrets and average policy along the path only.

Baselines are stored per history edge and per updating player.  A zero
baseline reproduces plain outcome sampling exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fosg import CHANCE, TERMINAL, TreeIndex
from .policy import BehaviorPolicy, PolicyProfile, _edge_tables

log = logging.getLogger(__name__)

VARIANTS = ("os", "vr", "vr_oracle")


@dataclass(frozen=True)
class SampleScheme:
    epsilon: float = 0.6  # weight of the uniform part of the sampling policy
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so that runs are reproducible across platforms."""
    return np.random.Generator(np.random.Philox(seed))


def history_values(index: TreeIndex, profile: PolicyProfile) -> np.ndarray:
    """Expected return of every history under ``profile``, shape (n, 2)."""
    who, slot, levels = _edge_tables(index)
    n = index.num_histories
    prob = index.edge_prob.astype(float).copy()
    for p in (0, 1):
        mask = who == p
        prob[mask] = profile[p].probs[slot[mask]]
    v = np.zeros((n, 2))
    term = index.actor == TERMINAL
    v[term] = index.returns[term]
    # deepest level first, so every child is complete before it is pushed up
    for hs in reversed(levels):
        np.add.at(v, index.parent[hs], prob[hs, None] * v[hs])
    return v


class OutcomeSampler:
    """Tables and per-pass logic for os / vr / vr_oracle."""

    def __init__(self, index: TreeIndex, variant: str = "os", scheme: SampleScheme = SampleScheme(),
                 alpha: float = 0.5, minimizer: str = "rm"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        if minimizer not in ("rm", "rm_plus"):
            raise ValueError(f"unknown minimizer {minimizer!r}")
        self.index = index
        self.variant = variant
        self.scheme = scheme
        self.alpha = alpha
        self.minimizer = minimizer
        self.rng = make_rng(scheme.seed)
        n = index.num_histories
        self.actor = index.actor.tolist()
        self.children = [index.child_ids(h).tolist() for h in range(n)]
        self.chance_probs = [
            [float(index.edge_prob[c]) for c in self.children[h]] if self.actor[h] == CHANCE else None
            for h in range(n)
        ]
        self.info = [index.infostate[0].tolist(), index.infostate[1].tolist()]
        self.returns = [index.returns[:, 0].tolist(), index.returns[:, 1].tolist()]
        self.regrets = [[None] * index.num_infostates(p) for p in (0, 1)]
        self.avg = [[None] * index.num_infostates(p) for p in (0, 1)]
        for p in (0, 1):
            for s in index.decision_infostates(p):
                k = len(index.info_actions[p][s])
                self.regrets[p][s] = [0.0] * k
                self.avg[p][s] = [0.0] * k
        # baseline of the edge into each child history, per updating player
        self.baseline = [[0.0] * n, [0.0] * n]
        self.iterations = 0
        self.touches = 0

    # --------------------------------------------------------------- policies
    def current_row(self, p: int, s: int) -> list:
        r = self.regrets[p][s]
        pos = [x if x > 0.0 else 0.0 for x in r]
        tot = sum(pos)
        if tot > 0.0:
            return [x / tot for x in pos]
        return [1.0 / len(r)] * len(r)

    def sampling_row(self, pi: list) -> list:
        eps = self.scheme.epsilon
        u = eps / len(pi)
        return [u + (1.0 - eps) * x for x in pi]

    def _slots(self, p: int, rows) -> np.ndarray:
        probs = np.zeros(self.index.num_slots(p))
        for s in self.index.decision_infostates(p):
            st = self.index.slot_start[p][s]
            row = rows(s)
            probs[st:st + len(row)] = row
        return probs

    def current_profile(self) -> PolicyProfile:
        return PolicyProfile(tuple(
            BehaviorPolicy(self.index, p, self._slots(p, lambda s, p=p: self.current_row(p, s)))
            for p in (0, 1)))

    def average_profile(self) -> PolicyProfile:
        def row(p, s):
            m = self.avg[p][s]
            tot = sum(m)
            return [x / tot for x in m] if tot > 0 else [1.0 / len(m)] * len(m)

        return PolicyProfile(tuple(
            BehaviorPolicy(self.index, p, self._slots(p, lambda s, p=p: row(p, s))) for p in (0, 1)))

    def set_oracle_baselines(self, player: int, profile: PolicyProfile | None = None) -> None:
        """Baseline of each edge = exact value of the child history under ``profile``."""
        profile = profile or self.current_profile()
        self.baseline[player] = history_values(self.index, profile)[:, player].tolist()

    # ----------------------------------------------------------------- passes
    def _node(self, h: int):
        """(policy row, sampling row) at a non-terminal history."""
        a = self.actor[h]
        if a == CHANCE:
            probs = self.chance_probs[h]
            return probs, probs
        pi = self.current_row(a, self.info[a][h])
        return pi, self.sampling_row(pi)

    def sample_path(self) -> list:
        """Sample one terminal; returns [(h, pi, xi, branch), ...] and the terminal."""
        rng = self.rng
        h = 0
        path = []
        while self.actor[h] != TERMINAL:
            pi, xi = self._node(h)
            u = rng.random()
            k = len(xi) - 1
            acc = 0.0
            for j, x in enumerate(xi):
                acc += x
                if u < acc:
                    k = j
                    break
            path.append((h, pi, xi, k))
            h = self.children[h][k]
        return path, h

    def path_to(self, z: int) -> list:
        """Path records for a given terminal, as if it had been sampled."""
        hist = self.index.history_path(z)
        return [(h, *self._node(h), int(self.index.branch[c])) for h, c in zip(hist[:-1], hist[1:])]

    def estimate(self, player: int, path: list, z: int, baseline=None):
        """Baseline-corrected estimates along a path.

        Returns records ``(h, pi, q_row, v, cf_weight, sample_reach)`` from the
        terminal upward, where ``q_row`` and ``v`` are history-level values and
        ``cf_weight`` = opponent-and-chance reach / sampling reach of ``h``.
        """
        base = self.baseline[player] if baseline is None else baseline
        # forward reaches
        reach_opp, reach_xi = 1.0, 1.0
        fwd = []
        for h, pi, xi, k in path:
            fwd.append((reach_opp, reach_xi))
            if self.actor[h] != player:
                reach_opp *= pi[k]
            reach_xi *= xi[k]
        v = self.returns[player][z]
        out = []
        for (h, pi, xi, k), (r_opp, r_xi) in zip(reversed(path), reversed(fwd)):
            ch = self.children[h]
            q = [base[c] for c in ch]
            q[k] += (v - q[k]) / xi[k]
            v = sum(p * x for p, x in zip(pi, q))
            out.append((h, pi, q, v, r_opp / r_xi, r_xi))
        return out

    def run_pass(self, player: int) -> None:
        if self.variant == "vr_oracle":
            self.set_oracle_baselines(player)
        path, z = self.sample_path()
        self.touches += len(path) + 1
        recs = self.estimate(player, path, z)
        base = self.baseline[player]
        alpha = self.alpha
        learn = self.variant == "vr"
        own = 1.0
        own_reach = []
        for h, pi, xi, k in path:
            own_reach.append(own)
            if self.actor[h] == player:
                own *= pi[k]
        prev_v = self.returns[player][z]
        for (h, pi, q, v, w, r_xi), (_, _, _, k), r_own in zip(recs, reversed(path), reversed(own_reach)):
            if self.actor[h] == player:
                s = self.info[player][h]
                reg = self.regrets[player][s]
                for j in range(len(reg)):
                    reg[j] += w * (q[j] - v)
                    if self.minimizer == "rm_plus" and reg[j] < 0.0:
                        reg[j] = 0.0
                acc = self.avg[player][s]
                scale = r_own / r_xi
                for j in range(len(acc)):
                    acc[j] += scale * pi[j]
            if learn:
                c = self.children[h][k]
                base[c] = (1.0 - alpha) * base[c] + alpha * prev_v
            prev_v = v

    def iteration(self) -> None:
        for p in (0, 1):
            self.run_pass(p)
        self.iterations += 1


# ------------------------------------------------------------ instrumentation


def exhaustive_expectation(sampler: OutcomeSampler, player: int, baseline=None) -> tuple:
    """Sum over all terminals of P_sample(z) times the sampled estimates.

    Returns ``(values, q)`` dicts keyed by infostate id, holding the expected
    counterfactual state value and per-action values of the estimator.
    """
    index = sampler.index
    values: dict = {}
    qs: dict = {}
    for z in index.terminals():
        z = int(z)
        path = sampler.path_to(z)
        pz = 1.0
        for _, _, xi, k in path:
            pz *= xi[k]
        for h, pi, q, v, w, _ in sampler.estimate(player, path, z, baseline):
            if sampler.actor[h] != player:
                continue
            s = sampler.info[player][h]
            values[s] = values.get(s, 0.0) + pz * w * v
            row = qs.setdefault(s, np.zeros(len(q)))
            row += pz * w * np.asarray(q)
    return values, qs


def variance_probe(sampler: OutcomeSampler, player: int, probes, n_trajectories: int = 1000,
                   baseline=None, seed: int = 12345) -> float:
    """Mean over probe histories of the variance of the history-value estimate.

    For each probe history ``h`` the continuation below ``h`` is sampled
    ``n_trajectories`` times and the baseline-corrected estimate of ``h``'s
    value is recorded.  The sampler's own RNG and tables are untouched.
    """
    if n_trajectories < 2:
        raise ValueError("need at least two trajectories")
    rng = make_rng(seed)
    variances = []
    for h0 in probes:
        h0 = int(h0)
        est = np.empty(n_trajectories)
        for t in range(n_trajectories):
            h = h0
            path = []
            while sampler.actor[h] != TERMINAL:
                pi, xi = sampler._node(h)
                k = int(np.searchsorted(np.cumsum(xi), rng.random(), side="right"))
                k = min(k, len(xi) - 1)
                path.append((h, pi, xi, k))
                h = sampler.children[h][k]
            recs = sampler.estimate(player, path, h, baseline)
            est[t] = recs[-1][3] if recs else sampler.returns[player][h]
        variances.append(float(est.var(ddof=1)))
    return float(np.mean(variances)) if variances else 0.0


def probe_histories(sampler: OutcomeSampler, player: int, count: int = 20, seed: int = 999) -> list:
    """Decision histories of ``player`` visited by ``count`` on-policy samples."""
    rng = make_rng(seed)
    old = sampler.rng
    sampler.rng = rng
    try:
        found = []
        for _ in range(count):
            path, _ = sampler.sample_path()
            for h, *_ in path:
                if sampler.actor[h] == player and h not in found:
                    found.append(h)
                    break
    finally:
        sampler.rng = old
    return found


@dataclass
class MccfrResult:
    profile: PolicyProfile
    diagnostics: list  # dicts: iter, node_touches, nashconv (+ probe_variance)
    sampler: OutcomeSampler


def run_mccfr(game, index: TreeIndex, variant: str = "os", scheme: SampleScheme = SampleScheme(),
              T: int = 1000, checkpoints=None, max_touches: int | None = None,
              alpha: float = 0.5, minimizer: str = "rm", probe: dict | None = None) -> MccfrResult:
    """Run sampled CFR for ``T`` iterations or until ``max_touches`` node visits.

    ``probe`` (keys ``histories``, ``n``) adds a probe_variance entry at
    every checkpoint.
    """
    from .bestresponse import nashconv
    from .regret import geometric_checkpoints

    sampler = OutcomeSampler(index, variant, scheme, alpha, minimizer)
    checks = set(geometric_checkpoints(T, 5) if checkpoints is None else checkpoints)
    diags = []
    for t in range(1, T + 1):
        sampler.iteration()
        done = max_touches is not None and sampler.touches >= max_touches
        if t in checks or done or t == T:
            rec = {"iter": t, "node_touches": sampler.touches,
                   "nashconv": nashconv(index, sampler.average_profile()).nashconv}
            if probe:
                hs = probe.get("histories") or probe_histories(sampler, 0)
                rec["probe_variance"] = variance_probe(sampler, 0, hs, probe.get("n", 100))
            diags.append(rec)
            log.info("mccfr %s iter=%d touches=%d nashconv=%.5g", variant, t, sampler.touches, rec["nashconv"])
        if done:
            break
    return MccfrResult(sampler.average_profile(), diags, sampler)
