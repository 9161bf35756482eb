"""Behavioral policies, reach probabilities, ranges and reach-weighted averaging."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fosg import InfoStateKey, TreeIndex

log = logging.getLogger(__name__)

SUPPORT_EPS = 1e-9


def action_name(action) -> str:
    if isinstance(action, tuple):
        return "_".join(str(a) for a in action)
    return str(action)


class BehaviorPolicy:
    """Action distributions for every decision infostate of one player.

    Rows are stored in one flat array over the player's action slots, in the
    slot order of the tree index.
    """

    def __init__(self, index: TreeIndex, player: int, probs: np.ndarray | None = None):
        self.index = index
        self.player = player
        n = index.num_slots(player)
        if probs is None:
            probs = uniform_slots(index, player)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (n,):
            raise ValueError(f"policy needs {n} slot probabilities, got {probs.shape}")
        self.probs = probs

    @classmethod
    def uniform(cls, index: TreeIndex, player: int) -> "BehaviorPolicy":
        return cls(index, player)

    def _id(self, s) -> int:
        if isinstance(s, InfoStateKey):
            if s.player != self.player:
                raise KeyError("infostate belongs to the other player")
            return self.index.infostate_id(s)
        if isinstance(s, str):
            return self.index.label_id(self.player, s)
        return int(s)

    def _slice(self, s) -> slice:
        i = self._id(s)
        st = self.index.slot_start[self.player][i]
        if st < 0:
            raise KeyError(f"infostate {self.index.info_labels[self.player][i]} has no decision")
        return slice(st, st + len(self.index.info_actions[self.player][i]))

    def __getitem__(self, s) -> np.ndarray:
        return self.probs[self._slice(s)]

    def __setitem__(self, s, row) -> None:
        self.probs[self._slice(s)] = row

    def actions(self, s) -> tuple:
        return self.index.info_actions[self.player][self._id(s)]

    def infostates(self) -> np.ndarray:
        return self.index.decision_infostates(self.player)

    def copy(self) -> "BehaviorPolicy":
        return BehaviorPolicy(self.index, self.player, self.probs.copy())

    def validate(self, tol: float = 1e-9) -> None:
        if np.any(self.probs < -tol):
            raise ValueError("negative probability in policy")
        for s in self.infostates():
            total = self[s].sum()
            if abs(total - 1.0) > tol:
                raise ValueError(f"row {self.index.info_labels[self.player][s]} sums to {total}")

    def to_lines(self) -> list[str]:
        lines = []
        for s in self.infostates():
            acts = self.index.info_actions[self.player][s]
            row = self[s]
            body = " ".join(f"{action_name(a)}={p:.12g}" for a, p in zip(acts, row))
            lines.append(f"{self.index.info_labels[self.player][s]} {body}")
        return sorted(lines)


@dataclass
class PolicyProfile:
    policies: tuple

    def __getitem__(self, p: int) -> BehaviorPolicy:
        return self.policies[p]

    def __iter__(self):
        return iter(self.policies)

    @classmethod
    def uniform(cls, index: TreeIndex) -> "PolicyProfile":
        return cls((BehaviorPolicy(index, 0), BehaviorPolicy(index, 1)))

    @classmethod
    def from_rows(cls, index: TreeIndex, rows: tuple) -> "PolicyProfile":
        """Build from per-player ``{label: row}`` dicts; missing rows stay uniform."""
        pols = []
        for p in (0, 1):
            pol = BehaviorPolicy(index, p)
            for label, row in rows[p].items():
                pol[label] = np.asarray(row, dtype=float)
            pols.append(pol)
        return cls(tuple(pols))

    def copy(self) -> "PolicyProfile":
        return PolicyProfile(tuple(p.copy() for p in self.policies))

    def to_text(self) -> str:
        lines = sorted(self.policies[0].to_lines() + self.policies[1].to_lines())
        return "\n".join(lines) + "\n"


def uniform_slots(index: TreeIndex, player: int) -> np.ndarray:
    out = np.zeros(index.num_slots(player))
    for s in index.decision_infostates(player):
        k = len(index.info_actions[player][s])
        st = index.slot_start[player][s]
        out[st:st + k] = 1.0 / k
    return out


class StrategyFormatError(ValueError):
    pass


def profile_from_text(index: TreeIndex, text: str, missing_ok: bool = False) -> PolicyProfile:
    """Parse the strategy text format back into a profile."""
    prof = PolicyProfile.uniform(index)
    seen = [set(), set()]
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        label, *items = line.split()
        player = 1 if "||" in label else 0
        try:
            s = index.label_id(player, label)
        except KeyError:
            raise StrategyFormatError(f"line {ln}: unknown infostate {label}") from None
        acts = [action_name(a) for a in index.info_actions[player][s]]
        row = np.zeros(len(acts))
        for item in items:
            name, _, val = item.partition("=")
            if name not in acts:
                raise StrategyFormatError(f"line {ln}: unknown action {name} at {label}")
            row[acts.index(name)] = float(val)
        prof[player][s] = row
        seen[player].add(int(s))
    missing = [index.info_labels[p][s] for p in (0, 1)
               for s in index.decision_infostates(p) if int(s) not in seen[p]]
    if missing and not missing_ok:
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise StrategyFormatError("strategy misses infostates: " + ", ".join(missing[:10]) + more)
    return prof


# ------------------------------------------------------------------ reach


@lru_cache(maxsize=32)
def _edge_tables(index: TreeIndex):
    """Per history: which player chose the edge into it and the slot used."""
    n = index.num_histories
    who = np.full(n, -1, dtype=np.int64)
    slot = np.full(n, -1, dtype=np.int64)
    par = index.parent
    for h in range(1, n):
        g = par[h]
        a = index.actor[g]
        if a >= 0:
            who[h] = a
            slot[h] = index.slot_start[a][index.infostate[a, g]] + index.branch[h]
    levels = [np.flatnonzero(index.depth == d) for d in range(1, int(index.depth.max()) + 1)]
    return who, slot, levels


def history_reach(index: TreeIndex, profile: PolicyProfile) -> np.ndarray:
    """Array (n, 3): chance factor, player-1 factor, player-2 factor per history."""
    who, slot, levels = _edge_tables(index)
    n = index.num_histories
    out = np.ones((n, 3))
    out[:, 0] = index.chance_reach
    for p in (0, 1):
        f = np.ones(n)
        mask = who == p
        f[mask] = profile[p].probs[slot[mask]]
        r = out[:, p + 1]
        for hs in levels:
            r[hs] = r[index.parent[hs]] * f[hs]
    return out


def reach(index: TreeIndex, profile: PolicyProfile, history: int) -> tuple:
    """``(chance_factor, (player1_factor, player2_factor))`` for one history."""
    who, slot, _ = _edge_tables(index)
    factors = [1.0, 1.0]
    for h in index.history_path(history)[1:]:
        if who[h] >= 0:
            factors[who[h]] *= profile[who[h]].probs[slot[h]]
    return float(index.chance_reach[history]), tuple(factors)


def expected_return(index: TreeIndex, profile: PolicyProfile) -> np.ndarray:
    r = history_reach(index, profile)
    z = index.terminals()
    w = r[z].prod(axis=1)
    return w @ index.returns[z]


def infostate_reach(index: TreeIndex, policy: BehaviorPolicy) -> np.ndarray:
    """Own reach of every infostate of the policy's player."""
    p = policy.player
    who, slot, levels = _edge_tables(index)
    n = index.num_histories
    f = np.ones(n)
    mask = who == p
    f[mask] = policy.probs[slot[mask]]
    r = np.ones(n)
    for hs in levels:
        r[hs] = r[index.parent[hs]] * f[hs]
    out = np.zeros(index.num_infostates(p))
    out[index.infostate[p]] = r  # all histories of an infostate share the own factor
    return out


def average_policies(policies: list, weights) -> BehaviorPolicy:
    """Reach-weighted mixture: the policy whose realization is the weighted mix."""
    if not policies:
        raise ValueError("nothing to average")
    index, player = policies[0].index, policies[0].player
    for pol in policies:
        if pol.index is not index or pol.player != player:
            raise ValueError("policies belong to different games or players")
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be non-negative and not all zero")
    mass = np.zeros(index.num_slots(player))
    for pol, w in zip(policies, weights):
        own = infostate_reach(index, pol)
        for s in index.decision_infostates(player):
            st = index.slot_start[player][s]
            k = len(index.info_actions[player][s])
            mass[st:st + k] += w * own[s] * pol.probs[st:st + k]
    out = policies[-1].probs.copy()
    zero = 0
    for s in index.decision_infostates(player):
        st = index.slot_start[player][s]
        k = len(index.info_actions[player][s])
        tot = mass[st:st + k].sum()
        if tot > 0:
            out[st:st + k] = mass[st:st + k] / tot
        else:
            out[st:st + k] = 1.0 / k
            zero += 1
    if zero:
        log.debug("average_policies: %d unreached infostates set to uniform", zero)
    return BehaviorPolicy(index, player, out)


def support(policy: BehaviorPolicy, s, eps: float = SUPPORT_EPS) -> set:
    row = policy[s]
    acts = policy.actions(s)
    return {a for a, p in zip(acts, row) if p > eps}


@dataclass
class Range:
    public_state: int
    player: int
    infostates: np.ndarray
    weights: np.ndarray
    normalized: bool = False

    def normalize(self) -> "Range":
        tot = self.weights.sum()
        if tot <= 0:
            raise ValueError("cannot normalize an all-zero range")
        return Range(self.public_state, self.player, self.infostates, self.weights / tot, True)


def range_at(index: TreeIndex, profile: PolicyProfile, s_pub: int, player: int,
             normalize: bool = False) -> Range:
    own = infostate_reach(index, profile[player])
    members = index.pub_infostates[s_pub][player]
    r = Range(s_pub, player, members, own[members].copy())
    return r.normalize() if normalize else r
