"""Counterfactual regret minimization (vanilla CFR and CFR+) on sequence-form trees.

:class:`CfrSolver` runs on any :class:`SeqTree`, so the same loop solves the
full game, a sub-game rooted at a public state with fixed entry ranges, a
depth-limited lookahead whose frontier is valued by a callback, or a gadget
game whose opponent entry weights are chosen by a head object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fosg import TreeIndex
from .policy import BehaviorPolicy, PolicyProfile
from .seqtree import SeqTree, full_tree

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CfrConfig:
    minimizer: str = "rm"  # rm | rm_plus
    update: str = "simultaneous"  # simultaneous | alternating
    averaging: str = "uniform"  # uniform | linear
    skip: float = 0.0  # fraction of early iterations left out of the averages

    def __post_init__(self):
        if self.minimizer not in ("rm", "rm_plus"):
            raise ValueError(f"unknown minimizer {self.minimizer!r}")
        if self.update not in ("simultaneous", "alternating"):
            raise ValueError(f"unknown update mode {self.update!r}")
        if self.averaging not in ("uniform", "linear"):
            raise ValueError(f"unknown averaging {self.averaging!r}")
        if not 0.0 <= self.skip < 1.0:
            raise ValueError("skip fraction must lie in [0, 1)")

    @classmethod
    def vanilla(cls) -> "CfrConfig":
        return cls()

    @classmethod
    def plus(cls) -> "CfrConfig":
        return cls("rm_plus", "alternating", "linear", 0.0)

    @classmethod
    def named(cls, name: str) -> "CfrConfig":
        presets = {"cfr": cls.vanilla(), "cfr+": cls.plus(), "cfr_plus": cls.plus()}
        if name not in presets:
            raise ValueError(f"unknown solver {name!r}; choose from {sorted(presets)}")
        return presets[name]


class EntryHead:
    """Interface for objects that pick a player's entry weights each iteration."""

    player: int

    def weights(self) -> np.ndarray:
        raise NotImplementedError

    def observe(self, entry_values: np.ndarray) -> None:
        raise NotImplementedError


FrontierFn = Callable[[SeqTree, tuple], list]  # (tree, (x0, x1)) -> [(vals0, vals1) per frontier]


@dataclass
class CfrTables:
    regrets: list  # stored regrets per player (clamped under rm_plus)
    true_regrets: list  # unclamped cumulative regrets per player
    avg_mass: list
    current: list  # last current policy per player
    avg_entry_values: list = field(default_factory=lambda: [None, None])


class CfrSolver:
    """Iterates CFR on a tree.

    ``entry_weights[p]`` are player p's reaches of the tree's root infostates.
    A head for a player replaces its fixed weights with its own choice.
    """

    def __init__(self, tree: SeqTree, config: CfrConfig = CfrConfig(), entry_weights=None,
                 frontier_fn: FrontierFn | None = None, heads=(None, None),
                 horizon: int | None = None, initial_regrets=None):
        self.tree = tree
        self.config = config
        if entry_weights is None:
            entry_weights = (np.ones(tree.n_entry[0]), np.ones(tree.n_entry[1]))
        self.entry_weights = [np.asarray(w, dtype=float) for w in entry_weights]
        for p in (0, 1):
            if self.entry_weights[p].shape != (tree.n_entry[p],):
                raise ValueError(f"player {p + 1} needs {tree.n_entry[p]} entry weights")
        self.frontier_fn = frontier_fn
        self.heads = list(heads)
        self.horizon = horizon
        n = tree.n_seq
        regrets = [np.zeros(n[0]), np.zeros(n[1])]
        if initial_regrets is not None:
            regrets = [np.asarray(r, dtype=float).copy() for r in initial_regrets]
        self.tables = CfrTables(
            regrets=regrets,
            true_regrets=[r.copy() for r in regrets],
            avg_mass=[np.zeros(n[0]), np.zeros(n[1])],
            current=[tree.regret_matching(p, regrets[p]) for p in (0, 1)],
        )
        self.t = 0
        self.weight_sum = 0.0
        self._entry_value_sum = [np.zeros(tree.n_entry[0]), np.zeros(tree.n_entry[1])]
        self._opp_x_sum = [np.zeros(tree.n_ext[1]), np.zeros(tree.n_ext[0])]
        self._frontier_sum = [None, None]
        self.realized = [0.0, 0.0]
        # callables (player, xs, frontier values, current policy, averaging weight) run after
        # each player update; used to accumulate extra per-iteration statistics
        self.observers: list = []

    # ---------------------------------------------------------------- helpers
    def _weights(self, p: int) -> np.ndarray:
        head = self.heads[p]
        return head.weights() if head is not None else self.entry_weights[p]

    def _x(self, p: int, pi: np.ndarray) -> np.ndarray:
        return self.tree.realization(p, pi, self._weights(p))

    def _avg_weight(self) -> float:
        if self.horizon is not None and self.t <= int(self.config.skip * self.horizon):
            return 0.0
        return float(self.t) if self.config.averaging == "linear" else 1.0

    def _frontier(self, xs):
        if self.frontier_fn is None or not self.tree.frontier:
            return None
        return self.frontier_fn(self.tree, xs)

    def _update_player(self, p: int, xs: list, w_avg: float) -> None:
        tree, tab = self.tree, self.tables
        pi = tab.current[p]
        fv = None if self.frontier_fn is None else self._frontier(xs)
        g = tree.leaf_values(p, xs[1 - p], fv)
        if tree.n_seq[p]:
            v, q, v_info, _ = tree.backup(p, g, pi)
            delta = q - v_info[tree.seq_info[p]]
            tab.true_regrets[p] += delta
            tab.regrets[p] += delta
            if self.config.minimizer == "rm_plus":
                np.maximum(tab.regrets[p], 0.0, out=tab.regrets[p])
        else:  # no decisions below the root: values are the leaf contributions
            v = g
        E = tree.n_entry[p]
        entry_v = v[:E]
        self.realized[p] += float(np.dot(xs[p][:E], entry_v))
        self._opp_x_sum[p] += xs[1 - p]
        if w_avg > 0:
            if tree.n_seq[p]:
                tab.avg_mass[p] += w_avg * xs[p][E:]
            self._entry_value_sum[p] += w_avg * entry_v
        if self.heads[p] is not None:
            self.heads[p].observe(entry_v)
        for obs in self.observers:
            obs(p, xs, fv, pi, w_avg)

    # ------------------------------------------------------------------ loop
    def iterate(self) -> None:
        self.t += 1
        tab = self.tables
        w_avg = self._avg_weight()
        if w_avg > 0:
            self.weight_sum += w_avg
        if self.config.update == "simultaneous":
            xs = [self._x(p, tab.current[p]) for p in (0, 1)]
            for p in (0, 1):
                self._update_player(p, xs, w_avg)
            for p in (0, 1):
                if self.tree.n_seq[p]:
                    tab.current[p] = self.tree.regret_matching(p, tab.regrets[p])
        else:
            xs = [self._x(q, tab.current[q]) for q in (0, 1)]
            for p in (0, 1):
                self._update_player(p, xs, w_avg)
                if self.tree.n_seq[p]:
                    tab.current[p] = self.tree.regret_matching(p, tab.regrets[p])
                if p == 0 and (self.tree.n_seq[0] or self.heads[0] is not None):
                    # player 2 responds to player 1's fresh policy
                    xs = [self._x(0, tab.current[0]), xs[1]]

    def run(self, T: int, checkpoints=(), callback=None) -> None:
        checks = set(checkpoints)
        for _ in range(T):
            self.iterate()
            if callback is not None and self.t in checks:
                callback(self)

    # --------------------------------------------------------------- results
    def average(self, p: int) -> np.ndarray:
        mass = self.tables.avg_mass[p]
        if self.weight_sum == 0:
            mass = self.tree.realization(p, self.tables.current[p], self._weights(p))[self.tree.n_entry[p]:]
        return self.tree.normalize(p, mass)

    def average_entry_values(self, p: int) -> np.ndarray:
        if self.weight_sum == 0:
            return np.zeros(self.tree.n_entry[p])
        return self._entry_value_sum[p] / self.weight_sum

    def sum_positive_regret(self, p: int) -> float:
        """Sum over infostates of the positive part of the best action's true regret."""
        r = self.tables.true_regrets[p]
        if r.size == 0:
            return 0.0
        best = np.maximum.reduceat(r, self.tree.info_start[p])
        return float(np.maximum(best, 0.0).sum())

    def full_regret(self, p: int) -> float:
        """Regret against the best fixed policy in hindsight over all iterations so far."""
        g = self.tree.leaf_values(p, self._opp_x_sum[p])
        v, _, _, _ = self.tree.backup(p, g, None, best_response=True)
        E = self.tree.n_entry[p]
        return float(self._weights(p) @ v[:E]) - self.realized[p]

    def best_response_values(self, pis=None, entry_weights=None) -> tuple:
        """Best-response value of each player against the other's (average) policy."""
        tree = self.tree
        pis = pis or [self.average(0), self.average(1)]
        ew = entry_weights or [self._weights(0), self._weights(1)]
        xs = [tree.realization(p, pis[p], ew[p]) for p in (0, 1)]
        fv = None if self.frontier_fn is None else self._frontier(xs)
        out = []
        for p in (0, 1):
            g = tree.leaf_values(p, xs[1 - p], fv)
            v, _, _, _ = tree.backup(p, g, None, best_response=True)
            out.append(float(ew[p] @ v[:tree.n_entry[p]]))
        return tuple(out)

    def to_policy(self, p: int, seq_probs: np.ndarray, base: BehaviorPolicy | None = None) -> BehaviorPolicy:
        """Write tree-local sequence probabilities into a full-game policy."""
        pol = base.copy() if base is not None else BehaviorPolicy(self.tree.index, p)
        pol.probs[self.tree.seq_slot[p]] = seq_probs
        return pol

    def average_profile(self) -> PolicyProfile:
        return PolicyProfile(tuple(self.to_policy(p, self.average(p)) for p in (0, 1)))


# ---------------------------------------------------------------- full game


@dataclass
class CfrResult:
    profile: PolicyProfile
    diagnostics: list  # dicts: iter, nashconv, sum_pos_regret_1, sum_pos_regret_2 (+ full regrets)
    solver: CfrSolver


def run_cfr(game, index: TreeIndex, config: CfrConfig = CfrConfig(), T: int = 1000,
            checkpoints=None, track_full_regret: bool = False) -> CfrResult:
    """Solve the whole game with CFR and return the normalized average profile."""
    if T < 1:
        raise ValueError("T must be at least 1")
    from .regret import geometric_checkpoints

    tree = full_tree(index)
    solver = CfrSolver(tree, config, horizon=T)
    checks = set(geometric_checkpoints(T) if checkpoints is None else checkpoints)
    diags = []

    def record(s: CfrSolver):
        brv = s.best_response_values()
        rec = {
            "iter": s.t,
            "nashconv": brv[0] + brv[1],
            "sum_pos_regret_1": s.sum_positive_regret(0),
            "sum_pos_regret_2": s.sum_positive_regret(1),
        }
        if track_full_regret:
            rec["full_regret_1"] = s.full_regret(0)
            rec["full_regret_2"] = s.full_regret(1)
        diags.append(rec)
        log.info("cfr iter=%d nashconv=%.6g", s.t, rec["nashconv"])

    solver.run(T, checks, record)
    return CfrResult(solver.average_profile(), diags, solver)


def full_regret(result: CfrResult, player: int) -> float:
    return result.solver.full_regret(player)


# ------------------------------------------------------------------ values


@dataclass
class CfvResult:
    """Counterfactual values at the root infostates of a public state."""

    infostates: tuple  # per player, infostate ids
    values: tuple  # per player, value per infostate
    q: tuple  # per player, {infostate id: per-action values} inside the subtree


def compute_values(index: TreeIndex, s_pub: int, range1, range2, profile: PolicyProfile) -> CfvResult:
    """Counterfactual values of both players' infostates at ``s_pub``.

    ``range1`` and ``range2`` are unnormalized own-reach weights of each
    player's infostates at ``s_pub``.  Play below ``s_pub`` follows ``profile``.
    """
    tree = SeqTree(index, s_pub)
    ranges = (np.asarray(range1, dtype=float), np.asarray(range2, dtype=float))
    pis = [tree.from_slots(p, profile[p].probs) for p in (0, 1)]
    xs = [tree.realization(p, pis[p], ranges[p]) for p in (0, 1)]
    values, qs = [], []
    for p in (0, 1):
        v, q, _, _ = tree.backup(p, tree.leaf_values(p, xs[1 - p]), pis[p])
        values.append(v[:tree.n_entry[p]].copy())
        qs.append({int(s): q[tree.info_start[p][i]:tree.info_start[p][i] + tree.info_nact[p][i]].copy()
                   for i, s in enumerate(tree.info_ids[p])})
    return CfvResult(tuple(tree.entry_infostates), tuple(values), tuple(qs))


_GAME_VALUES: dict = {}


def game_value_bounds(index: TreeIndex, tol: float = 1e-6, max_iter: int = 400000) -> tuple:
    """Interval containing player 1's game value, from a CFR+ solve to ``tol`` nashconv."""
    key = id(index)
    hit = _GAME_VALUES.get(key)
    if hit is not None and hit[0] is index and hit[1] <= tol:
        return hit[2]
    solver = CfrSolver(full_tree(index), CfrConfig.plus())
    step = 50
    while True:
        solver.run(step)
        brv = solver.best_response_values()
        if brv[0] + brv[1] <= tol or solver.t >= max_iter:
            break
        step = min(2 * step, 2000)
    bounds = (-brv[1], brv[0])
    if brv[0] + brv[1] > tol:
        log.warning("game value of %s only bracketed to %.3g", index.game_name, brv[0] + brv[1])
    _GAME_VALUES[key] = (index, tol, bounds)
    return bounds


def game_value(index: TreeIndex, tol: float = 1e-6) -> float:
    lo, hi = game_value_bounds(index, tol)
    return 0.5 * (lo + hi)
