"""Depth-limited CFR with value functions and the continual re-solving agent.

A lookahead is a :class:`SeqTree` rooted at a public state and cut at a set
of frontier public states.  During CFR the frontier is valued by a
:class:`ValueFunctionHandle` evaluated at the iteration's ranges.  Besides
the average policy, the solve keeps the averaged counterfactual values of
every infostate in the lookahead; the continual re-solver reads its next
own range and opponent value bounds from there.
"""

from __future__ import annotations

import logging
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from .cfr import CfrConfig, CfrSolver
from .fosg import CHANCE, TERMINAL, TreeIndex
from .policy import BehaviorPolicy, PolicyProfile
from .seqtree import SeqTree
from .subgame import CfvVector, GadgetGame, PublicSubgame, SubgameError, build_cfrd_gadget, \
    value_function_exact

log = logging.getLogger(__name__)


class ResolveError(RuntimeError):
    pass


class ValueFunctionError(RuntimeError):
    pass


class NondeterminismError(RuntimeError):
    pass


# ---------------------------------------------------------- value functions


@dataclass(frozen=True)
class ValueFunctionHandle:
    """Frontier evaluator: ``(s_pub, range1, range2) -> (CfvVector, CfvVector)``.

    ``exact_cfr`` solves the sub-game below the frontier with ``iters`` CFR+
    iterations and returns each player's counterfactual best-response values
    against the other's average policy.  ``terminal_only`` refuses every
    call and is meant for full lookaheads.
    """

    kind: str = "exact_cfr"
    iters: int = 1000

    def __post_init__(self):
        if self.kind not in ("exact_cfr", "terminal_only"):
            raise ValueError(f"unknown value function kind {self.kind!r}")
        if self.kind == "exact_cfr" and self.iters < 1:
            raise ValueError("exact_cfr needs at least one iteration")

    @classmethod
    def exact_cfr(cls, iters: int = 1000) -> "ValueFunctionHandle":
        return cls("exact_cfr", iters)

    @classmethod
    def terminal_only(cls) -> "ValueFunctionHandle":
        return cls("terminal_only", 0)

    def evaluate(self, index: TreeIndex, s_pub: int, range1, range2) -> tuple:
        if self.kind == "terminal_only":
            raise ValueFunctionError("terminal_only value function called at a frontier")
        return value_function_exact(index, s_pub, range1, range2, self.iters)


# ------------------------------------------------------------ depth policies


@dataclass(frozen=True)
class DepthPolicy:
    kind: str = "full"  # full | steps | until_public_event
    steps: int = 0

    @classmethod
    def parse(cls, text) -> "DepthPolicy":
        if isinstance(text, DepthPolicy):
            return text
        if text in ("full", "until_public_event"):
            return cls(text)
        m = re.fullmatch(r"steps[(:=]?(\d+)\)?", str(text))
        if m and int(m.group(1)) >= 1:
            return cls("steps", int(m.group(1)))
        raise ValueError(f"unknown depth policy {text!r}; use full, steps(n) or until_public_event")

    def __str__(self) -> str:
        return f"steps({self.steps})" if self.kind == "steps" else self.kind


def _public_mover(index: TreeIndex, s_pub: int) -> int:
    actors = {int(index.actor[h]) for h in index.pub_histories[s_pub]}
    players = actors - {CHANCE, TERMINAL}
    if players:
        return players.pop()
    return CHANCE if CHANCE in actors else TERMINAL


def lookahead_frontier(index: TreeIndex, root: int, depth) -> list:
    """Non-terminal public states where a lookahead rooted at ``root`` is cut.

    ``steps(n)`` cuts after n player moves; chance moves are not counted.
    ``until_public_event`` cuts at the first public state entered by a
    chance move once a player has moved inside the lookahead.
    """
    depth = DepthPolicy.parse(depth)
    if depth.kind == "full":
        return []
    out = []
    stack = [(int(root), 0)]
    while stack:
        u, moves = stack.pop()
        mover = _public_mover(index, u)
        for c in index.pub_children[u]:
            c = int(c)
            if _public_mover(index, c) == TERMINAL:
                continue
            m = moves + (mover >= 0)
            if depth.kind == "steps" and m >= depth.steps:
                out.append(c)
            elif depth.kind == "until_public_event" and mover == CHANCE and moves > 0:
                out.append(c)
            else:
                stack.append((c, m))
    return sorted(out)


_TREES: dict = {}


def _lookahead_tree(index: TreeIndex, root: int, frontier: list) -> SeqTree:
    key = (id(index), int(root), tuple(frontier))
    hit = _TREES.get(key)
    if hit is None or hit.index is not index:
        if len(_TREES) > 1024:
            _TREES.clear()
        hit = _TREES[key] = SeqTree(index, root, frontier)
    return hit


# ---------------------------------------------------------- value tracking


class _ValueTracker:
    """Accumulates per-history counterfactual values of one player.

    For history h the tracked quantity is the sum over terminals below h of
    chance reach times the other player's reach times the owner's reach
    from h onwards times the owner's return.  Summed over the histories of
    an infostate it is that infostate's counterfactual value.  Frontier
    values arrive per infostate and are booked on one member history,
    which is enough because only infostate sums are ever read.
    """

    def __init__(self, tree: SeqTree, owner: int):
        self.tree, self.owner = tree, owner
        ix = tree.index
        hist = tree.histories
        n = len(hist)
        parent = np.full(n, -1, dtype=np.int64)
        edge_seq = np.full(n, -1, dtype=np.int64)
        for i, h in enumerate(hist):
            g = int(ix.parent[h])
            if g in tree.local:
                parent[i] = tree.local[g]
                if ix.actor[g] == owner:
                    s = int(ix.infostate[owner, g])
                    edge_seq[i] = tree.info_start[owner][tree.local_info[owner][s]] + ix.branch[h]
        self.parent, self.edge_seq = parent, edge_seq
        depth = ix.depth[hist]
        self.levels = [np.flatnonzero((depth == d) & (parent >= 0))
                       for d in sorted(set(depth.tolist()), reverse=True)]
        self.reps = []
        for f, members, _ in tree.frontier:
            self.reps.append(np.asarray([self._rep(s) for s in members[owner]], dtype=np.int64))
        self.sum = np.zeros(n)

    def _rep(self, s: int) -> int:
        for h in self.tree.index.info_histories[self.owner][s]:
            if int(h) in self.tree.local:
                return self.tree.local[int(h)]
        return -1

    def __call__(self, p, xs, fv, pi, w_avg) -> None:
        if p != self.owner or w_avg <= 0:
            return
        tree, o = self.tree, 1 - p
        W = np.zeros(len(tree.histories))
        W[tree.term] = tree.term_wu[p] * xs[o][tree.term_x[o]]
        if fv is not None:
            for reps, vals in zip(self.reps, fv):
                ok = reps >= 0
                np.add.at(W, reps[ok], np.asarray(vals[p])[ok])
        for lv in self.levels:
            seq = self.edge_seq[lv]
            w = np.where(seq >= 0, pi[np.maximum(seq, 0)], 1.0) if len(pi) else np.ones(len(lv))
            np.add.at(W, self.parent[lv], W[lv] * w)
        self.sum += w_avg * W


# ---------------------------------------------------------------- lookahead


@dataclass
class LookaheadTree:
    root: int
    depth: DepthPolicy
    frontier: list
    tree: SeqTree
    solver: CfrSolver
    trackers: dict = field(default_factory=dict)  # player -> _ValueTracker

    def __post_init__(self):
        self.public_set = set(int(u) for u in self.tree.index.public[self.tree.histories])
        self.frontier_set = set(self.frontier)

    @property
    def index(self) -> TreeIndex:
        return self.tree.index

    def _members_in_tree(self, s_pub: int, p: int) -> list:
        ix, tree = self.index, self.tree
        if s_pub not in self.public_set:
            raise ResolveError(f"public state {ix.pub_labels[s_pub]!r} is not in the lookahead")
        out = []
        for s in ix.pub_infostates[s_pub][p]:
            hs = [tree.local[int(h)] for h in ix.info_histories[p][s] if int(h) in tree.local]
            out.append(hs)
        return out

    def range_at(self, s_pub: int, p: int) -> np.ndarray:
        """Own reach of each of ``p``'s infostates at ``s_pub`` under the average policy."""
        tree = self.tree
        x = tree.realization(p, self.solver.average(p), self.solver._weights(p))
        return np.array([x[tree.hx[p, hs[0]]] if hs else 0.0 for hs in self._members_in_tree(s_pub, p)])

    def cfv_at(self, s_pub: int, p: int) -> CfvVector:
        """Averaged counterfactual values of ``p``'s infostates at ``s_pub``."""
        tr = self.trackers.get(p)
        if tr is None:
            raise ResolveError(f"values of player {p + 1} were not tracked")
        ws = self.solver.weight_sum
        avg = tr.sum / ws if ws > 0 else tr.sum
        vals = [float(avg[hs].sum()) for hs in self._members_in_tree(s_pub, p)]
        return CfvVector(int(s_pub), p, self.index.pub_infostates[s_pub][p], np.array(vals))

    def rows_at(self, s_pub: int, p: int) -> dict:
        """Average policy rows of ``p``'s decision infostates at ``s_pub``."""
        avg = self.solver.average(p)
        tree = self.tree
        out = {}
        for s in self.index.pub_infostates[s_pub][p]:
            s = int(s)
            if s in tree.local_info[p]:
                out[s] = avg[tree.infostate_slice(p, s)].copy()
        return out

    def average_profile(self, base: PolicyProfile | None = None) -> PolicyProfile:
        base = base or PolicyProfile.uniform(self.index)
        return PolicyProfile(tuple(self.solver.to_policy(p, self.solver.average(p), base[p]) for p in (0, 1)))


def depth_limited_cfr(index: TreeIndex, root, value_fn: ValueFunctionHandle | None = None,
                      config: CfrConfig = CfrConfig.plus(), T: int = 1000, depth="full",
                      track=(0, 1)) -> LookaheadTree:
    """CFR on the lookahead below ``root`` with value-function leaves.

    ``root`` is a public state id (entry weights one), a :class:`PublicSubgame`
    (entry weights from its ranges) or a :class:`GadgetGame` (re-solving
    player's range fixed, opponent entries chosen by the gadget head).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    depth = DepthPolicy.parse(depth)
    heads = [None, None]
    if isinstance(root, GadgetGame):
        s_pub = root.public_state
        ew = [None, None]
        ew[root.player] = root.own_range
        ew[1 - root.player] = np.ones(len(index.pub_infostates[s_pub][1 - root.player]))
        heads[1 - root.player] = root.head(config.minimizer == "rm_plus")
    elif isinstance(root, PublicSubgame):
        s_pub, ew = root.public_state, list(root.ranges)
    else:
        s_pub = int(root)
        ew = [np.ones(len(index.pub_infostates[s_pub][p])) for p in (0, 1)]
    frontier = lookahead_frontier(index, s_pub, depth)
    tree = _lookahead_tree(index, s_pub, frontier)
    value_fn = value_fn or ValueFunctionHandle.terminal_only()

    def frontier_fn(tree: SeqTree, xs) -> list:
        out = []
        for f, members, ext in tree.frontier:
            ranges = [np.where(ext[p] >= 0, xs[p][np.maximum(ext[p], 0)], 0.0) for p in (0, 1)]
            if min(r.sum() for r in ranges) <= 0:
                out.append((np.zeros(len(members[0])), np.zeros(len(members[1]))))
                continue
            try:
                v1, v2 = value_fn.evaluate(index, f, ranges[0], ranges[1])
            except Exception as exc:
                raise ValueFunctionError(
                    f"value function failed at frontier public state {f} ({index.pub_labels[f]!r}): {exc}"
                ) from exc
            out.append((v1.values, v2.values))
        return out

    solver = CfrSolver(tree, config, entry_weights=ew, frontier_fn=frontier_fn, heads=heads, horizon=T)
    trackers = {p: _ValueTracker(tree, p) for p in track}
    solver.observers.extend(trackers.values())
    solver.run(T)
    return LookaheadTree(s_pub, depth, frontier, tree, solver, trackers)


# ---------------------------------------------------------- continual agent


def _query_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, zlib.crc32(label.encode())]))


@dataclass
class _AgentState:
    last: LookaheadTree | None
    off_range: bool = False  # own range vanished; uniform play from here on


class ContinualResolver:
    """Online agent for one seat that re-solves at every own decision.

    Each re-solve builds a CFR-D gadget from the own range and the opponent's
    averaged counterfactual values stored by the previous lookahead.  When
    the next decision lies beyond the previous frontier, the agent re-solves
    at each frontier public state on the way down.
    """

    def __init__(self, index: TreeIndex, player: int, value_fn: ValueFunctionHandle | None = None,
                 T: int = 1000, depth="full", config: CfrConfig | None = None, skip: float = 0.5,
                 seed: int = 0, cache_first: bool = True):
        self.index, self.player, self.opp = index, player, 1 - player
        self.value_fn = value_fn or ValueFunctionHandle.terminal_only()
        self.T = T
        self.depth = DepthPolicy.parse(depth)
        self.config = config or CfrConfig("rm_plus", "alternating", "linear", skip)
        self.seed = seed
        self.cache_first = cache_first
        self._root: LookaheadTree | None = None
        self._first: dict = {}
        self.state = _AgentState(None)
        self.records: list = []  # one dict per re-solve

    # ------------------------------------------------------------ lifecycle
    def new_game(self) -> None:
        if self._root is None or not self.cache_first:
            self._root = depth_limited_cfr(self.index, int(self.index.public[0]), self.value_fn,
                                           self.config, self.T, self.depth, track=(self.opp,))
        self.state = _AgentState(self._root)

    def snapshot(self) -> _AgentState:
        return _AgentState(self.state.last, self.state.off_range)

    def restore(self, state: _AgentState) -> None:
        self.state = _AgentState(state.last, state.off_range)

    # -------------------------------------------------------------- solving
    def _resolve_at(self, s_pub: int) -> None:
        last = self.state.last
        own = last.range_at(s_pub, self.player)
        if own.sum() <= 0:
            log.info("own range vanished at %s; playing uniformly", self.index.pub_labels[s_pub])
            self.state.off_range = True
            return
        bound = last.cfv_at(s_pub, self.opp)
        gadget = build_cfrd_gadget(self.index, s_pub, own, bound, self.player)
        la = depth_limited_cfr(self.index, gadget, self.value_fn, self.config, self.T, self.depth,
                               track=(self.opp,))
        rec = {"public_state": self.index.pub_labels[s_pub], "T": self.T,
               "safety_gap": self._safety_gap(la, gadget)}
        self.records.append(rec)
        self.state.last = la

    def _safety_gap(self, la: LookaheadTree, gadget: GadgetGame) -> float | None:
        """Largest excess of an opponent root CBRV over its bound (full lookaheads only)."""
        if la.frontier:
            return None
        tree, o = la.tree, self.opp
        x = tree.realization(self.player, la.solver.average(self.player), gadget.own_range)
        v, _, _, _ = tree.backup(o, tree.leaf_values(o, x), None, best_response=True)
        live = gadget.mass > 0
        return float(np.max((v[:tree.n_entry[o]] - gadget.constraint)[live]))

    def _public_path(self, s_pub: int) -> list:
        root = self.state.last.root
        path = [int(s_pub)]
        while path[-1] != root:
            parent = int(self.index.pub_parent[path[-1]])
            if parent < 0:
                raise ResolveError(f"public state {self.index.pub_labels[s_pub]!r} does not follow "
                                   f"{self.index.pub_labels[root]!r}")
            path.append(parent)
        return path[::-1]

    def policy_at(self, s_pub: int) -> dict:
        """Policy rows for all own decision infostates at ``s_pub``."""
        if self.state.last is None:
            raise ResolveError("call new_game first")
        if not self.state.off_range:
            path = self._public_path(s_pub)
            cached = self.cache_first and self.state.last is self._root
            key = tuple(path)
            if cached and key in self._first:
                self.state.last, self.state.off_range = self._first[key]
            else:
                for u in path[1:]:
                    if self.state.off_range:
                        break
                    if u not in self.state.last.public_set:
                        raise ResolveError(f"public state {self.index.pub_labels[u]!r} is absent "
                                           "from the previous lookahead")
                    if u == s_pub or u in self.state.last.frontier_set:
                        self._resolve_at(u)
                if cached:
                    self._first[key] = (self.state.last, self.state.off_range)
        if self.state.off_range:
            return {int(s): np.full(len(self.index.info_actions[self.player][s]),
                                    1.0 / len(self.index.info_actions[self.player][s]))
                    for s in self.index.pub_infostates[s_pub][self.player]
                    if self.index.is_decision(self.player, s)}
        return self.state.last.rows_at(s_pub, self.player)

    def act(self, infostate: int) -> tuple:
        """Sampled action at ``infostate`` and the policy for its whole public state."""
        s_pub = int(self.index.info_public[self.player][infostate])
        rows = self.policy_at(s_pub)
        row = rows[int(infostate)]
        label = self.index.info_labels[self.player][infostate]
        rng = _query_rng(self.seed, label)
        a = int(rng.choice(len(row), p=row / row.sum()))
        return self.index.info_actions[self.player][infostate][a], rows


class PolicyAgent:
    """Plays a fixed offline profile; the trivial stateless online agent."""

    def __init__(self, index: TreeIndex, player: int, policy: BehaviorPolicy, seed: int = 0):
        self.index, self.player, self.policy, self.seed = index, player, policy, seed

    def new_game(self) -> None:
        pass

    def snapshot(self):
        return None

    def restore(self, state) -> None:
        pass

    def act(self, infostate: int) -> tuple:
        s_pub = int(self.index.info_public[self.player][infostate])
        rows = {int(s): self.policy[int(s)].copy() for s in self.index.pub_infostates[s_pub][self.player]
                if self.index.is_decision(self.player, s)}
        row = rows[int(infostate)]
        rng = _query_rng(self.seed, self.index.info_labels[self.player][infostate])
        return self.index.info_actions[self.player][infostate][int(rng.choice(len(row), p=row))], rows


def tabularize(agent_factory, index: TreeIndex, seats=(0, 1), audit: bool = False) -> PolicyProfile:
    """Query a stateless online agent at every decision and assemble its offline profile.

    ``agent_factory(seat)`` returns an agent with ``new_game``, ``act``,
    ``snapshot`` and ``restore``.  The public tree is walked depth first and
    the agent state is restored along every line, so each public state is
    queried with the state produced by its own line of play.  With ``audit``
    every query is repeated and must agree within 1e-9.
    """
    base = PolicyProfile.uniform(index)
    policies = [base[0].copy(), base[1].copy()]
    for seat in seats:
        agent = agent_factory(seat)
        agent.new_game()
        stack = [(int(index.public[0]), agent.snapshot())]
        while stack:
            u, state = stack.pop()
            own = [int(s) for s in index.pub_infostates[u][seat] if index.is_decision(seat, s)]
            if own:
                agent.restore(state)
                _, rows = agent.act(own[0])
                if audit:
                    after = agent.snapshot()
                    agent.restore(state)
                    _, again = agent.act(own[0])
                    for s in own:
                        if np.max(np.abs(rows[s] - again[s])) > 1e-9:
                            raise NondeterminismError(
                                f"agent gave two policies at {index.info_labels[seat][s]!r}")
                    agent.restore(after)
                for s in own:
                    policies[seat][s] = rows[s]
                state = agent.snapshot()
            for c in index.pub_children[u]:
                stack.append((int(c), state))
    return PolicyProfile(tuple(policies))


def continual_resolving_profile(index: TreeIndex, T: int, value_fn: ValueFunctionHandle | None = None,
                                depth="full", skip: float = 0.5, seed: int = 0) -> PolicyProfile:
    """Tabularized profile of continual re-solving agents in both seats."""
    return tabularize(lambda seat: ContinualResolver(index, seat, value_fn, T, depth, skip=skip, seed=seed),
                      index)
