"""Public sub-games, exact value functions and the three re-solving constructions.

Two routes exist for every construction.  The explicit route builds a derived
:class:`GameModel` (sub-game, CFR-D gadget, max-margin gadget) that can be
enumerated and solved like any other game.  The compiled route solves the
same problem directly on the original tree: the sub-game is a
:class:`SeqTree` rooted at the public state, and each gadget's extra
opponent decisions become an :class:`EntryHead` that picks the opponent's
entry weights.  Tests check that both routes agree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cfr import CfrConfig, CfrSolver, EntryHead
from .fosg import CHANCE, NOOP, NULL, TERMINAL, GameModel, Observation, Outcome, TreeIndex
from .policy import BehaviorPolicy, PolicyProfile, infostate_reach, range_at
from .seqtree import SeqTree

log = logging.getLogger(__name__)

NO_BOUND = math.inf  # removes the Terminate action of a CFR-D gadget entry


class SubgameError(ValueError):
    pass


@dataclass
class CfvVector:
    public_state: int
    player: int
    infostates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("counterfactual values must be finite")


# ------------------------------------------------------------------ helpers


def _tree(index: TreeIndex, s_pub: int, cache={}) -> SeqTree:  # noqa: B006 - deliberate memo
    key = (id(index), int(s_pub))
    hit = cache.get(key)
    if hit is None or hit.index is not index:
        if len(cache) > 512:
            cache.clear()
        hit = cache[key] = SeqTree(index, s_pub)
    return hit


def acting_player(index: TreeIndex, s_pub: int) -> int:
    acts = {int(index.actor[h]) for h in index.pub_histories[s_pub]} - {CHANCE, TERMINAL}
    if len(acts) != 1:
        raise SubgameError(f"public state {index.pub_labels[s_pub]!r} has no unique acting player")
    return acts.pop()


def opponent_mass(index: TreeIndex, s_pub: int, player: int, own_range) -> np.ndarray:
    """k(s') = sum over histories h in s' of own_range(s_player(h)) * chance reach(h)."""
    o = 1 - player
    members = [np.asarray(m) for m in index.pub_infostates[s_pub]]
    pos_i = {int(s): j for j, s in enumerate(members[player])}
    pos_o = {int(s): j for j, s in enumerate(members[o])}
    k = np.zeros(len(members[o]))
    own_range = np.asarray(own_range, dtype=float)
    for h in index.pub_histories[s_pub]:
        k[pos_o[int(index.infostate[o, h])]] += own_range[pos_i[int(index.infostate[player, h])]] * \
            index.chance_reach[h]
    return k


def opponent_cbrv(index: TreeIndex, s_pub: int, player: int, policy: BehaviorPolicy, own_range) -> np.ndarray:
    """Counterfactual best-response values of the opponent's root infostates at ``s_pub``."""
    tree = _tree(index, s_pub)
    o = 1 - player
    x = tree.realization(player, tree.from_slots(player, policy.probs), own_range)
    v, _, _, _ = tree.backup(o, tree.leaf_values(o, x), None, best_response=True)
    return v[:tree.n_entry[o]].copy()


def player_values(index: TreeIndex, s_pub: int, profile: PolicyProfile, ranges) -> tuple:
    """Counterfactual values of both players' root infostates when both follow ``profile``."""
    tree = _tree(index, s_pub)
    pis = [tree.from_slots(p, profile[p].probs) for p in (0, 1)]
    xs = [tree.realization(p, pis[p], ranges[p]) for p in (0, 1)]
    out = []
    for p in (0, 1):
        v, _, _, _ = tree.backup(p, tree.leaf_values(p, xs[1 - p]), pis[p])
        out.append(v[:tree.n_entry[p]].copy())
    return tuple(out)


def combine(base: BehaviorPolicy, tree: SeqTree, seq_probs: np.ndarray) -> BehaviorPolicy:
    """``base`` with the decision infostates inside ``tree`` replaced."""
    out = base.copy()
    out.probs[tree.seq_slot[base.player]] = seq_probs
    return out


# ------------------------------------------------------- explicit derived games


class _Replay(GameModel):
    """Replays the original tree below a public state, with scaled rewards.

    States are ``(history, scale)``; wrapper states of gadgets are tuples
    whose first element is a string.  Observations re-emit the original
    tokens, so infostates below the root map one-to-one onto the original.
    """

    def __init__(self, index: TreeIndex, s_pub: int):
        self.index = index
        self.s_pub = int(s_pub)
        self.roots = [int(h) for h in index.pub_histories[self.s_pub]]
        self.pub_token = f"<{index.pub_labels[self.s_pub]}>"

    def _obs(self, c: int) -> Observation:
        ix = self.index
        priv = []
        pub = NULL
        for p in (0, 1):
            pub_id, priv_id = ix.obs_pairs[ix.info_keys[p][ix.infostate[p, c]][-1]]
            priv.append(ix.tokens[priv_id])
            pub = ix.tokens[pub_id]
        return Observation(pub, tuple(priv))

    def _deal_obs(self, h: int, players=(0, 1)) -> Observation:
        ix = self.index
        priv = tuple(ix.info_labels[p][ix.infostate[p, h]] if p in players else NULL for p in (0, 1))
        return Observation(self.pub_token, priv)

    def _replay_legal(self, state, player: int) -> tuple:
        h, _ = state
        a = self.index.actor[h]
        if a == TERMINAL:
            return ()
        if a == player:
            return self.index.info_actions[player][self.index.infostate[player, h]]
        return (NOOP,)

    def _replay_transition(self, state, joint) -> list:
        h, scale = state
        ix = self.index
        a = ix.actor[h]
        kids = ix.child_ids(h)
        if a == CHANCE:
            chosen = [(float(ix.edge_prob[c]), int(c)) for c in kids]
        else:
            acts = ix.info_actions[a][ix.infostate[a, h]]
            b = acts.index(joint[a])
            chosen = [(1.0, int(c)) for c in kids if ix.branch[c] == b]
        out = []
        for prob, c in chosen:
            r = (ix.returns[c] - ix.returns[h]) * scale
            out.append(Outcome(prob, (c, scale), self._obs(c), (float(r[0]), float(r[1]))))
        return out

    def original_history(self, state) -> int | None:
        if isinstance(state, tuple) and len(state) == 2 and not isinstance(state[0], str):
            return int(state[0])
        return None


class SubgameModel(_Replay):
    """Chance deals the root histories, then the original game continues."""

    name = "subgame"

    def __init__(self, index: TreeIndex, s_pub: int, deal: np.ndarray):
        super().__init__(index, s_pub)
        self.deal = deal

    def initial_state(self):
        return ("deal",)

    def legal_actions(self, state, player):
        if state == ("deal",):
            return (NOOP,)
        return self._replay_legal(state, player)

    def transition(self, state, joint):
        if state == ("deal",):
            return [Outcome(float(p), (h, 1.0), self._deal_obs(h),
                            tuple(float(x) for x in self.index.returns[h]))
                    for h, p in zip(self.roots, self.deal) if p > 0]
        return self._replay_transition(state, joint)


@dataclass
class PublicSubgame:
    public_state: int
    ranges: tuple  # unnormalized reach weights over each player's member infostates
    model: SubgameModel
    normalizer: float  # sum over root histories of range1 * range2 * chance reach


def _history_mass(index: TreeIndex, s_pub: int, ranges) -> np.ndarray:
    members = index.pub_infostates[s_pub]
    pos = [{int(s): j for j, s in enumerate(members[p])} for p in (0, 1)]
    roots = index.pub_histories[s_pub]
    m = np.array([index.chance_reach[h] * ranges[0][pos[0][int(index.infostate[0, h])]]
                  * ranges[1][pos[1][int(index.infostate[1, h])]] for h in roots])
    return m


def build_subgame(index: TreeIndex, s_pub: int, range1, range2) -> PublicSubgame:
    ranges = (np.asarray(range1, dtype=float), np.asarray(range2, dtype=float))
    for p in (0, 1):
        if ranges[p].shape != (len(index.pub_infostates[s_pub][p]),):
            raise SubgameError(f"range of player {p + 1} has wrong length")
        if np.any(ranges[p] < 0):
            raise SubgameError("ranges must be non-negative")
    mass = _history_mass(index, s_pub, ranges)
    total = float(mass.sum())
    if total <= 0:
        raise SubgameError("ranges give the sub-game zero probability")
    return PublicSubgame(int(s_pub), ranges, SubgameModel(index, s_pub, mass / total), total)


# ------------------------------------------------------------ value functions


def solve_subgame(index: TreeIndex, s_pub: int, ranges, iters: int,
                  config: CfrConfig = CfrConfig.plus(), frontier_fn=None, tree: SeqTree | None = None) -> CfrSolver:
    tree = tree or _tree(index, s_pub)
    solver = CfrSolver(tree, config, entry_weights=ranges, frontier_fn=frontier_fn, horizon=iters)
    solver.run(iters)
    return solver


def value_function_exact(index: TreeIndex, s_pub: int, range1, range2, iters: int = 1000) -> tuple:
    """CFR+ solve of the sub-game; per-infostate best-response values of each player.

    Values are counterfactual under the supplied (unnormalized) ranges: each
    player's value against the other's average policy, with a best response
    taken at every infostate.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    ranges = (np.asarray(range1, dtype=float), np.asarray(range2, dtype=float))
    solver = solve_subgame(index, s_pub, ranges, iters)
    tree = solver.tree
    xs = [tree.realization(p, solver.average(p), ranges[p]) for p in (0, 1)]
    out = []
    for p in (0, 1):
        v, _, _, _ = tree.backup(p, tree.leaf_values(p, xs[1 - p]), None, best_response=True)
        out.append(CfvVector(int(s_pub), p, tree.entry_infostates[p], v[:tree.n_entry[p]].copy()))
    return tuple(out)


def subgame_value_bounds(index: TreeIndex, s_pub: int, d1, d2, iters: int = 2000,
                         normalized: bool = True) -> tuple:
    """Interval containing the value (to player 1) of the sub-game.

    With ``normalized=False`` the value is the range-weighted counterfactual
    value ``d1 . V1``, which is not divided by the joint root mass.
    """
    ranges = (np.asarray(d1, dtype=float), np.asarray(d2, dtype=float))
    total = float(_history_mass(index, s_pub, ranges).sum())
    if total <= 0:
        raise SubgameError("ranges give the sub-game zero probability")
    solver = solve_subgame(index, s_pub, ranges, iters)
    brv = solver.best_response_values()
    scale = total if normalized else 1.0
    return -brv[1] / scale, brv[0] / scale


def reward_range(index: TreeIndex, s_pub: int) -> float:
    """Spread of player 1's terminal returns below ``s_pub``."""
    tree = _tree(index, s_pub)
    r = tree.term_u[:, 0]
    return float(r.max() - r.min()) if r.size else 0.0


# ------------------------------------------------------------------- unsafe


@dataclass
class ResolveResult:
    policy: BehaviorPolicy  # combined full-game policy of the re-solving player
    solver: CfrSolver
    dropped: list = field(default_factory=list)  # opponent infostates left out (zero mass)


def unsafe_resolve(index: TreeIndex, s_pub: int, profile: PolicyProfile, player: int | None = None,
                   iters: int = 1000, tie_break: str | None = None) -> ResolveResult:
    """Solve the sub-game built from both players' trunk reaches.

    With ``tie_break="adversarial"`` the re-solving player's policy is
    replaced by a pure best response to the opponent's sub-game average,
    lowest action index among ties; every such policy is still optimal in
    the sub-game, which is exactly the failure this construction exhibits.
    """
    player = acting_player(index, s_pub) if player is None else player
    ranges = tuple(range_at(index, profile, s_pub, p).weights for p in (0, 1))
    solver = solve_subgame(index, s_pub, ranges, iters)
    tree = solver.tree
    seq = solver.average(player)
    if tie_break == "adversarial":
        o = 1 - player
        x_o = tree.realization(o, solver.average(o), ranges[o])
        _, _, _, choice = tree.backup(player, tree.leaf_values(player, x_o), None, best_response=True)
        seq = tree.choice_policy(player, choice)
    elif tie_break is not None:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    return ResolveResult(combine(profile[player], tree, seq), solver)


# ------------------------------------------------------------------ gadgets


class CfrdHead(EntryHead):
    """Terminate/Follow choice at every opponent root infostate."""

    def __init__(self, bounds: np.ndarray, active: np.ndarray, plus: bool = True):
        self.bounds = np.asarray(bounds, dtype=float)
        self.active = np.asarray(active, dtype=bool)
        self.can_stop = self.active & np.isfinite(self.bounds)
        n = len(self.bounds)
        self.regrets = np.zeros((n, 2))  # columns: Terminate, Follow
        self.plus = plus

    def follow(self) -> np.ndarray:
        pos = np.maximum(self.regrets, 0.0)
        tot = pos.sum(axis=1)
        f = np.where(tot > 0, pos[:, 1] / np.where(tot > 0, tot, 1.0), 0.5)
        f[~self.can_stop] = 1.0
        return f

    def weights(self) -> np.ndarray:
        return self.follow()

    def observe(self, entry_values: np.ndarray) -> None:
        f = self.follow()
        q_t = np.where(self.can_stop, self.bounds, 0.0)
        v = (1 - f) * q_t + f * entry_values
        self.regrets[:, 0] += np.where(self.can_stop, q_t - v, 0.0)
        self.regrets[:, 1] += np.where(self.can_stop, entry_values - v, 0.0)
        if self.plus:
            np.maximum(self.regrets, 0.0, out=self.regrets)


class MaxMarginHead(EntryHead):
    """Opponent's choice of starting root infostate, over shifted values."""

    def __init__(self, cbrv: np.ndarray, active: np.ndarray, plus: bool = True):
        self.cbrv = np.asarray(cbrv, dtype=float)
        self.active = np.asarray(active, dtype=bool)
        self.regrets = np.zeros(len(self.cbrv))
        self.plus = plus

    def choice(self) -> np.ndarray:
        pos = np.where(self.active, np.maximum(self.regrets, 0.0), 0.0)
        tot = pos.sum()
        if tot > 0:
            return pos / tot
        return self.active / self.active.sum()

    def weights(self) -> np.ndarray:
        return self.choice()

    def observe(self, entry_values: np.ndarray) -> None:
        mu = self.choice()
        q = np.where(self.active, entry_values - self.cbrv, 0.0)
        v = float(mu @ q)
        self.regrets += np.where(self.active, q - v, 0.0)
        if self.plus:
            np.maximum(self.regrets, 0.0, out=self.regrets)


class CfrdGadgetModel(_Replay):
    """Chance picks an opponent root infostate, the opponent may Terminate or Follow."""

    name = "cfrd_gadget"

    def __init__(self, index, s_pub, player, own_range, bounds, mass):
        super().__init__(index, s_pub)
        self.player, self.opp = player, 1 - player
        self.own_range = np.asarray(own_range, dtype=float)
        self.bounds = np.asarray(bounds, dtype=float)
        self.mass = mass
        self.total = float(mass.sum())
        members = index.pub_infostates[s_pub]
        self.opp_members = [int(s) for s in members[self.opp]]
        self.own_pos = {int(s): j for j, s in enumerate(members[player])}

    def initial_state(self):
        return ("root",)

    def _deal_follow(self, j: int, scale: float) -> list:
        ix = self.index
        s_o = self.opp_members[j]
        out = []
        for h in self.roots:
            if int(ix.infostate[self.opp, h]) != s_o:
                continue
            w = self.own_range[self.own_pos[int(ix.infostate[self.player, h])]] * ix.chance_reach[h]
            if w > 0:
                out.append((w / self.mass[j], h))
        return out

    def legal_actions(self, state, player):
        if state[0] == "root" or state[0] == "follow":
            return (NOOP,)
        if state[0] == "pick":
            if player != self.opp:
                return (NOOP,)
            return ("T", "F") if math.isfinite(self.bounds[state[1]]) else ("F",)
        if state[0] == "stop":
            return ()
        return self._replay_legal(state, player)

    def transition(self, state, joint):
        ix = self.index
        if state[0] == "root":
            priv = [NULL, NULL]
            out = []
            for j, k in enumerate(self.mass):
                if k <= 0:
                    continue
                priv[self.opp] = ix.info_labels[self.opp][self.opp_members[j]]
                out.append(Outcome(k / self.total, ("pick", j), Observation("g", tuple(priv))))
            return out
        if state[0] == "pick":
            j = state[1]
            if joint[self.opp] == "T":
                r = self.bounds[j] * self.total / self.mass[j]
                rew = [0.0, 0.0]
                rew[self.opp], rew[self.player] = r, -r
                return [Outcome(1.0, ("stop", j), Observation("T"), tuple(rew))]
            return [Outcome(1.0, ("follow", j), Observation("F"))]
        if state[0] == "follow":
            K = self.total
            return [Outcome(p, (h, K), self._deal_obs(h, (self.player,)),
                            tuple(float(x) * K for x in ix.returns[h]))
                    for p, h in self._deal_follow(state[1], K)]
        return self._replay_transition(state, joint)


class MaxMarginGadgetModel(CfrdGadgetModel):
    """The opponent picks the starting root infostate; values shifted by its CBRV.

    Utilities below choice s' are scaled by k(s')/K so that the gadget value
    of a choice equals the counterfactual margin of s' divided by K.
    """

    name = "maxmargin_gadget"

    def legal_actions(self, state, player):
        if state[0] == "root":
            if player != self.opp:
                return (NOOP,)
            return tuple(f"s{j}" for j, k in enumerate(self.mass) if k > 0)
        return super().legal_actions(state, player)

    def transition(self, state, joint):
        ix = self.index
        if state[0] == "root":
            j = int(joint[self.opp][1:])
            return [Outcome(1.0, ("follow", j), Observation("g"))]
        if state[0] == "follow":
            j = state[1]
            scale = self.mass[j] / self.total
            shift = self.bounds[j] / self.mass[j]  # bounds hold the CBRVs here
            out = []
            for p, h in self._deal_follow(j, scale):
                r = np.array(ix.returns[h], dtype=float)
                r[self.opp] -= shift
                r[self.player] += shift
                out.append(Outcome(p, (h, scale), self._deal_obs(h, (self.player,)),
                                   tuple(float(x) * scale for x in r)))
            return out
        return super().transition(state, joint)


@dataclass
class GadgetGame:
    kind: str  # cfrd | maxmargin
    public_state: int
    player: int
    own_range: np.ndarray
    opp_infostates: np.ndarray
    constraint: np.ndarray  # bounds (cfrd, may hold NO_BOUND) or original CBRVs (maxmargin)
    mass: np.ndarray  # opponent counterfactual reach mass k(s') per root infostate
    dropped: list  # opponent root infostates with zero mass
    model: GameModel
    shifts: np.ndarray | None = None  # per opponent root infostate, maxmargin only

    def head(self, plus: bool = True) -> EntryHead:
        active = self.mass > 0
        if self.kind == "cfrd":
            return CfrdHead(self.constraint, active, plus)
        return MaxMarginHead(self.constraint, active, plus)

    def solve(self, iters: int, config: CfrConfig = CfrConfig.plus(), index: TreeIndex | None = None,
              base: BehaviorPolicy | None = None, frontier_fn=None, tree: SeqTree | None = None) -> ResolveResult:
        """Compiled solve on the original tree; returns the combined policy."""
        index = index or self.model.index
        tree = tree or _tree(index, self.public_state)
        o = 1 - self.player
        heads = [None, None]
        heads[o] = self.head(config.minimizer == "rm_plus")
        ew = [None, None]
        ew[self.player] = self.own_range
        ew[o] = np.ones(tree.n_entry[o])
        solver = CfrSolver(tree, config, entry_weights=ew, heads=heads, frontier_fn=frontier_fn, horizon=iters)
        solver.run(iters)
        base = base or BehaviorPolicy(index, self.player)
        return ResolveResult(combine(base, tree, solver.average(self.player)), solver, self.dropped)


def _gadget_inputs(index, s_pub, own_range, values, player):
    player = acting_player(index, s_pub) if player is None else player
    own_range = np.asarray(own_range, dtype=float)
    vals = np.asarray(values.values if isinstance(values, CfvVector) else values, dtype=float)
    o = 1 - player
    members = index.pub_infostates[s_pub][o]
    if vals.shape != (len(members),):
        raise SubgameError("one opponent value per root infostate is required")
    mass = opponent_mass(index, s_pub, player, own_range)
    if mass.sum() <= 0:
        raise SubgameError("own range gives the sub-game zero probability")
    dropped = [int(members[j]) for j in np.flatnonzero(mass <= 0)]
    if dropped:
        log.info("gadget at %s drops %d unreachable opponent infostates",
                 index.pub_labels[s_pub], len(dropped))
    return player, own_range, vals, mass, dropped


def build_cfrd_gadget(index: TreeIndex, s_pub: int, own_range, opp_cfv_bound, player: int | None = None) -> GadgetGame:
    """CFR-D gadget; a bound of ``NO_BOUND`` removes that infostate's Terminate action."""
    player, own_range, bounds, mass, dropped = _gadget_inputs(index, s_pub, own_range, opp_cfv_bound, player)
    model = CfrdGadgetModel(index, s_pub, player, own_range, bounds, mass)
    members = index.pub_infostates[s_pub][1 - player]
    return GadgetGame("cfrd", int(s_pub), player, own_range, members, bounds, mass, dropped, model)


def build_maxmargin_gadget(index: TreeIndex, s_pub: int, own_range, opp_cbrv, player: int | None = None) -> GadgetGame:
    player, own_range, cbrv, mass, dropped = _gadget_inputs(index, s_pub, own_range, opp_cbrv, player)
    model = MaxMarginGadgetModel(index, s_pub, player, own_range, cbrv, mass)
    members = index.pub_infostates[s_pub][1 - player]
    shifts = np.where(mass > 0, -cbrv / np.where(mass > 0, mass, 1.0), 0.0)
    return GadgetGame("maxmargin", int(s_pub), player, own_range, members, cbrv, mass, dropped,
                      model, shifts)


# ------------------------------------------------------------------- margins


def subgame_margin(index: TreeIndex, s_pub: int, original: BehaviorPolicy, refined: BehaviorPolicy,
                   own_range=None) -> float:
    """Min over reachable opponent root infostates of CBRV(original) - CBRV(refined).

    ``own_range`` defaults to the original policy's own reach of the root
    infostates, which both policies share because they agree above ``s_pub``.
    """
    player = original.player
    if own_range is None:
        own_range = infostate_reach(index, original)[index.pub_infostates[s_pub][player]]
    mass = opponent_mass(index, s_pub, player, own_range)
    a = opponent_cbrv(index, s_pub, player, original, own_range)
    b = opponent_cbrv(index, s_pub, player, refined, own_range)
    live = mass > 0
    if not live.any():
        return 0.0
    return float(np.min((a - b)[live]))


def map_gadget_policy(gadget_index: TreeIndex, model: _Replay, player: int, policy: BehaviorPolicy,
                      base: BehaviorPolicy) -> tuple:
    """Transfer a policy of an enumerated derived game back onto the original game.

    Returns ``(combined policy, mapping)`` where mapping sends each derived
    decision infostate of ``player`` inside the replayed part to its
    original infostate.  Raises if the mapping is not one-to-one.
    """
    ix = model.index
    mapping: dict = {}
    for g, state in enumerate(gadget_index.states):
        h = model.original_history(state)
        if h is None or gadget_index.actor[g] != player:
            continue
        s_new = int(gadget_index.infostate[player, g])
        s_old = int(ix.infostate[player, h])
        if mapping.setdefault(s_new, s_old) != s_old:
            raise SubgameError("derived infostate maps to two original infostates")
    if len(set(mapping.values())) != len(mapping):
        raise SubgameError("two derived infostates map to one original infostate")
    out = base.copy()
    for s_new, s_old in mapping.items():
        out[s_old] = policy[s_new]
    return out, mapping


# --------------------------------------------------------------------- bench


def resolve(kind: str, index: TreeIndex, s_pub: int, trunk: PolicyProfile, player: int,
            iters: int = 10000) -> ResolveResult:
    """Refine ``player``'s trunk policy at ``s_pub`` with one of the three techniques."""
    if kind == "unsafe":
        return unsafe_resolve(index, s_pub, trunk, player, iters)
    own_range = range_at(index, trunk, s_pub, player).weights
    cbrv = opponent_cbrv(index, s_pub, player, trunk[player], own_range)
    if kind == "cfrd":
        gadget = build_cfrd_gadget(index, s_pub, own_range, cbrv, player)
    elif kind == "maxmargin":
        gadget = build_maxmargin_gadget(index, s_pub, own_range, cbrv, player)
    else:
        raise ValueError(f"unknown technique {kind!r}")
    return gadget.solve(iters, base=trunk[player])


def margins_bench(index: TreeIndex, trunk: PolicyProfile, subgames, iters: int = 10000,
                  techniques=("unsafe", "cfrd", "maxmargin"), on_record=None) -> list:
    """Refine every ``(public state, player)`` pair with each technique and measure margins.

    Records: subgame_id, public_state, player, technique, margin, solve_iters,
    brv_original, brv_combined (opponent best-response values in the full game).
    """
    from .bestresponse import best_response

    records = []
    for sid, (s_pub, player) in enumerate(subgames):
        own_range = range_at(index, trunk, s_pub, player).weights
        brv_orig = best_response(index, trunk[player]).value
        for tech in techniques:
            res = resolve(tech, index, s_pub, trunk, player, iters)
            rec = {
                "subgame_id": sid,
                "public_state": index.pub_labels[s_pub],
                "player": player + 1,
                "technique": tech,
                "margin": subgame_margin(index, s_pub, trunk[player], res.policy, own_range),
                "solve_iters": iters,
                "brv_original": brv_orig,
                "brv_combined": best_response(index, res.policy).value,
            }
            records.append(rec)
            if on_record is not None:
                on_record(rec)
    return records


def subgames_after_chance(index: TreeIndex) -> list:
    """``(public state, player)`` pairs for public states below a mid-game chance event.

    A pair is listed when a player acts at the public state and ``player``
    has at least one decision in its subtree.  In Leduc these are the
    second-round sub-games.
    """
    late = set()
    out = []
    for u in range(index.num_public_states):
        parent = int(index.pub_parent[u])
        if parent < 0:
            continue
        ancestors_moved = False
        v = parent
        while v >= 0:
            acts = {int(index.actor[h]) for h in index.pub_histories[v]}
            if acts & {0, 1}:
                ancestors_moved = True
                break
            v = int(index.pub_parent[v])
        chance_parent = CHANCE in {int(index.actor[h]) for h in index.pub_histories[parent]}
        if parent in late or (chance_parent and ancestors_moved):
            late.add(u)
    for u in sorted(late):
        if not ({int(index.actor[h]) for h in index.pub_histories[u]} & {0, 1}):
            continue
        tree = _tree(index, u)
        out.extend((u, p) for p in (0, 1) if tree.n_seq[p] > 0)
    return out
