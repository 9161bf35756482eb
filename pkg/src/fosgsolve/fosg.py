"""Factored-observation stochastic games and their materialized trees.

A game is described by a :class:`GameModel`.  :func:`enumerate_game` walks
every history and builds a :class:`TreeIndex`, which holds the history tree
together with the per-player infostate trees and the public tree, all
cross-linked by integer ids.  Players are indexed 0 and 1 internally; the
labels print them as player 1 and player 2.
"""

from __future__ import annotations

import json
import struct
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

NOOP = "noop"
NULL = ""
CHANCE = -1
TERMINAL = -2

CACHE_MAGIC = b"FOSGIDX\0"
CACHE_VERSION = 1


class EnumerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Observation:
    """One public token plus one private token per player."""

    public: Hashable = NULL
    private: tuple = (NULL, NULL)


@dataclass(frozen=True)
class Outcome:
    prob: float
    state: Any
    obs: Observation = Observation()
    rewards: tuple = (0.0, 0.0)


class GameModel(ABC):
    """Two-player game with chance folded into the transition function.

    Non-acting players take the single action ``NOOP``.  Terminal states have
    no legal actions for anybody.  Only one player may have a non-trivial
    action set at a time.
    """

    name = "game"
    zero_sum = True

    @abstractmethod
    def initial_state(self) -> Any: ...

    def initial_observation(self) -> Observation:
        return Observation()

    @abstractmethod
    def legal_actions(self, state, player: int) -> tuple: ...

    @abstractmethod
    def transition(self, state, joint_action: tuple) -> list[Outcome]: ...

    def describe_action(self, action) -> str:
        return str(action)


@dataclass(frozen=True)
class InfoStateKey:
    """A player's alternating sequence of interned observations and actions."""

    player: int
    seq: tuple


def _jsonable(token):
    if isinstance(token, (str, int, float, bool)) or token is None:
        return token
    if isinstance(token, tuple):
        return [_jsonable(t) for t in token]
    return repr(token)


@dataclass(eq=False)
class TreeIndex:
    """Materialized history tree with infostate and public-state views."""

    game_name: str
    # per history
    parent: np.ndarray
    depth: np.ndarray
    actor: np.ndarray
    branch: np.ndarray  # index of the edge taken at the parent (action or outcome slot)
    edge_prob: np.ndarray
    chance_reach: np.ndarray
    returns: np.ndarray  # (n, 2) cumulative rewards
    child_start: np.ndarray
    child_count: np.ndarray
    children: np.ndarray
    infostate: np.ndarray  # (2, n) infostate id of each player
    public: np.ndarray
    edge_action: list  # action taken by the parent's actor on the edge into h (None for chance/root)
    # per player infostates
    info_keys: list  # [player] -> list of key tuples
    info_parent: list
    info_public: list
    info_actions: list  # [player] -> list of action tuples ((),) for non-decision
    info_histories: list
    info_labels: list
    slot_start: list  # [player] -> array, -1 for non-decision infostates
    # public states
    pub_keys: list
    pub_parent: np.ndarray
    pub_histories: list
    pub_infostates: list  # [pub] -> (array for player 0, array for player 1)
    pub_children: list
    pub_labels: list
    tokens: list = field(default_factory=list)
    obs_pairs: list = field(default_factory=list)  # interned (public token, private token) ids
    actions: list = field(default_factory=list)
    states: list | None = None  # world states, not serialized

    # ---------- sizes ----------
    @property
    def num_histories(self) -> int:
        return len(self.parent)

    @property
    def num_public_states(self) -> int:
        return len(self.pub_keys)

    def num_infostates(self, player: int) -> int:
        return len(self.info_keys[player])

    def num_slots(self, player: int) -> int:
        acts = self.info_actions[player]
        return int(sum(len(a) for a in acts))

    def decision_infostates(self, player: int) -> np.ndarray:
        return np.flatnonzero(self.slot_start[player] >= 0)

    def is_decision(self, player: int, s: int) -> bool:
        return self.slot_start[player][s] >= 0

    def terminals(self) -> np.ndarray:
        return np.flatnonzero(self.actor == TERMINAL)

    def child_ids(self, h: int) -> np.ndarray:
        a = self.child_start[h]
        return self.children[a:a + self.child_count[h]]

    @property
    def max_reward_delta(self) -> float:
        r = self.returns[self.terminals(), 0]
        return float(r.max() - r.min())

    # ---------- keys and lookups ----------
    def key(self, player: int, s: int) -> InfoStateKey:
        return InfoStateKey(player, self.info_keys[player][s])

    def infostate_id(self, key: InfoStateKey) -> int:
        lookup = self._key_lookup()
        return lookup[key.player][key.seq]

    def _key_lookup(self):
        if not hasattr(self, "_lookup_cache"):
            self._lookup_cache = [
                {k: i for i, k in enumerate(self.info_keys[p])} for p in (0, 1)
            ]
        return self._lookup_cache

    def label_id(self, player: int, label: str) -> int:
        if not hasattr(self, "_label_cache"):
            self._label_cache = [
                {lab: i for i, lab in enumerate(self.info_labels[p])} for p in (0, 1)
            ]
        return self._label_cache[player][label]

    def public_id_of_label(self, label: str) -> int:
        return self.pub_labels.index(label)

    def history_path(self, h: int) -> list[int]:
        path = []
        while h >= 0:
            path.append(int(h))
            h = self.parent[h]
        return path[::-1]

    def history_label(self, h: int) -> str:
        acts = []
        for g in self.history_path(h)[1:]:
            a = self.edge_action[g]
            acts.append(str(a) if a is not None else f"c{self.branch[g]}")
        return "/".join(acts)

    def find_history(self, actions: Sequence) -> int:
        """Follow a list of edges from the root; chance edges are given by branch index."""
        h = 0
        for a in actions:
            for c in self.child_ids(h):
                if self.actor[h] == CHANCE and self.branch[c] == a:
                    h = int(c)
                    break
                if self.actor[h] >= 0 and self.edge_action[c] == a:
                    h = int(c)
                    break
            else:
                raise KeyError(f"no edge {a!r} at history {h}")
        return h

    def counts(self) -> dict:
        decisions = [len(self.decision_infostates(p)) for p in (0, 1)]
        return {
            "histories": self.num_histories,
            "terminals": int((self.actor == TERMINAL).sum()),
            "infostates": self.num_infostates(0) + self.num_infostates(1),
            "decision_infostates": decisions[0] + decisions[1],
            "public_states": self.num_public_states,
        }

    # ---------- serialization ----------
    _ARRAYS = ("parent", "depth", "actor", "branch", "edge_prob", "chance_reach",
               "returns", "child_start", "child_count", "children", "infostate", "public",
               "pub_parent")

    def to_bytes(self) -> bytes:
        arrays = {name: np.ascontiguousarray(getattr(self, name)) for name in self._ARRAYS}
        for p in (0, 1):
            arrays[f"info_parent{p}"] = np.asarray(self.info_parent[p], dtype=np.int64)
            arrays[f"info_public{p}"] = np.asarray(self.info_public[p], dtype=np.int64)
            arrays[f"slot_start{p}"] = np.asarray(self.slot_start[p], dtype=np.int64)
        meta = {
            "game_name": self.game_name,
            "tokens": [_jsonable(t) for t in self.tokens],
            "obs_pairs": [list(o) for o in self.obs_pairs],
            "actions": [_jsonable(a) for a in self.actions],
            "edge_action": [None if a is None else self.actions.index(a) for a in self.edge_action],
            "info_keys": [[list(k) for k in self.info_keys[p]] for p in (0, 1)],
            "info_actions": [[[self.actions.index(a) for a in acts] for acts in self.info_actions[p]]
                             for p in (0, 1)],
            "info_labels": self.info_labels,
            "pub_keys": [list(k) for k in self.pub_keys],
            "pub_labels": self.pub_labels,
            "arrays": {k: [str(v.dtype), list(v.shape)] for k, v in sorted(arrays.items())},
        }
        header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        out = [CACHE_MAGIC, struct.pack("<II", CACHE_VERSION, len(header)), header]
        for k in sorted(arrays):
            out.append(arrays[k].tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TreeIndex":
        if data[:8] != CACHE_MAGIC:
            raise ValueError("not a tree index cache file")
        version, hlen = struct.unpack("<II", data[8:16])
        if version != CACHE_VERSION:
            raise ValueError(f"cache version {version} unsupported (expected {CACHE_VERSION})")
        meta = json.loads(data[16:16 + hlen])
        pos = 16 + hlen
        arrays = {}
        for k, (dtype, shape) in sorted(meta["arrays"].items()):
            n = int(np.prod(shape)) * np.dtype(dtype).itemsize
            arrays[k] = np.frombuffer(data[pos:pos + n], dtype=dtype).reshape(shape).copy()
            pos += n
        actions = [tuple(a) if isinstance(a, list) else a for a in meta["actions"]]
        tokens = [tuple(t) if isinstance(t, list) else t for t in meta["tokens"]]
        info_histories = [[[] for _ in meta["info_keys"][p]] for p in (0, 1)]
        n = len(arrays["parent"])
        for p in (0, 1):
            for h in range(n):
                info_histories[p][arrays["infostate"][p, h]].append(h)
        pub_histories = [[] for _ in meta["pub_keys"]]
        for h in range(n):
            pub_histories[arrays["public"][h]].append(h)
        pub_infostates = [[[] for _ in (0, 1)] for _ in meta["pub_keys"]]
        for p in (0, 1):
            for s, pub in enumerate(arrays[f"info_public{p}"]):
                pub_infostates[pub][p].append(s)
        pub_children = [[] for _ in meta["pub_keys"]]
        for u, par in enumerate(arrays["pub_parent"]):
            if par >= 0:
                pub_children[par].append(u)
        return cls(
            game_name=meta["game_name"],
            **{k: arrays[k] for k in cls._ARRAYS},
            edge_action=[None if a is None else actions[a] for a in meta["edge_action"]],
            info_keys=[[tuple(k) for k in meta["info_keys"][p]] for p in (0, 1)],
            info_parent=[arrays[f"info_parent{p}"] for p in (0, 1)],
            info_public=[arrays[f"info_public{p}"] for p in (0, 1)],
            info_actions=[[tuple(actions[a] for a in acts) for acts in meta["info_actions"][p]]
                          for p in (0, 1)],
            info_histories=[[np.asarray(x, dtype=np.int64) for x in info_histories[p]] for p in (0, 1)],
            info_labels=meta["info_labels"],
            slot_start=[arrays[f"slot_start{p}"] for p in (0, 1)],
            pub_keys=[tuple(k) for k in meta["pub_keys"]],
            pub_histories=[np.asarray(x, dtype=np.int64) for x in pub_histories],
            pub_infostates=[tuple(np.asarray(x, dtype=np.int64) for x in pi) for pi in pub_infostates],
            pub_children=pub_children,
            pub_labels=meta["pub_labels"],
            tokens=tokens,
            obs_pairs=[tuple(o) for o in meta["obs_pairs"]],
            actions=actions,
        )

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TreeIndex":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


class _Interner:
    def __init__(self):
        self.ids: dict = {}
        self.items: list = []

    def __call__(self, item) -> int:
        i = self.ids.get(item)
        if i is None:
            i = self.ids[item] = len(self.items)
            self.items.append(item)
        return i


def _actor_of(game: GameModel, state) -> tuple[int, tuple]:
    legal = [tuple(game.legal_actions(state, p)) for p in (0, 1)]
    if not legal[0] and not legal[1]:
        return TERMINAL, ()
    if not legal[0] or not legal[1]:
        raise EnumerationError("a player has no legal action at a non-terminal state")
    acting = [p for p in (0, 1) if legal[p] != (NOOP,)]
    if not acting:
        return CHANCE, ()
    if len(acting) == 2:
        raise EnumerationError("simultaneous moves are not supported; encode them sequentially")
    return acting[0], legal[acting[0]]


def enumerate_game(game: GameModel, max_depth: int = 10_000) -> TreeIndex:
    """Depth-first enumeration of every history of ``game``."""
    tokens = _Interner()
    actions = _Interner()
    actions(NOOP)
    obs_ids = _Interner()  # (public token id, private token id)

    parent, depth, actor, branch, edge_prob, reach, returns = [], [], [], [], [], [], []
    states, edge_action, children_of = [], [], []
    info_seq = [[], []]  # per history, per player key tuple
    pub_seq = []

    def obs_pair(obs: Observation, p: int) -> int:
        return obs_ids((tokens(obs.public), tokens(obs.private[p])))

    root = game.initial_state()
    obs0 = game.initial_observation()
    stack = [(root, -1, 0, -1, 1.0, 1.0, (0.0, 0.0), None,
              tuple((obs_pair(obs0, p),) for p in (0, 1)), (tokens(obs0.public),))]
    order = []
    while stack:
        (state, par, d, br, prob, cr, ret, act, keys, pkey) = stack.pop()
        h = len(parent)
        if d > max_depth:
            raise EnumerationError(f"depth limit {max_depth} exceeded at history length {d}")
        who, legal = _actor_of(game, state)
        parent.append(par)
        depth.append(d)
        actor.append(who)
        branch.append(br)
        edge_prob.append(prob)
        reach.append(cr)
        returns.append(ret)
        states.append(state)
        edge_action.append(act)
        info_seq[0].append(keys[0])
        info_seq[1].append(keys[1])
        pub_seq.append(pkey)
        children_of.append([])
        if par >= 0:
            children_of[par].append(h)
        order.append(h)
        if who == TERMINAL:
            continue
        succ = []
        if who == CHANCE:
            joints = [(NOOP, NOOP)]
        else:
            joints = [tuple(a if p == who else NOOP for p in (0, 1)) for a in legal]
        slot = 0
        for ai, joint in enumerate(joints):
            outcomes = game.transition(state, joint)
            total = 0.0
            for o in outcomes:
                if not 0.0 <= o.prob <= 1.0 + 1e-12:
                    raise EnumerationError(f"transition probability {o.prob} outside [0, 1]")
                total += o.prob
            if abs(total - 1.0) > 1e-9:
                raise EnumerationError(f"transition probabilities sum to {total}, not 1")
            for o in outcomes:
                if o.prob <= 0.0:
                    continue
                nkeys = tuple(
                    keys[p] + (actions(joint[p]), obs_pair(o.obs, p)) for p in (0, 1)
                )
                nret = (ret[0] + o.rewards[0], ret[1] + o.rewards[1])
                b = slot if who == CHANCE else ai
                succ.append((o.state, h, d + 1, b, o.prob, cr * o.prob, nret,
                             None if who == CHANCE else joint[who], nkeys,
                             pkey + (tokens(o.obs.public),)))
                slot += 1
        stack.extend(reversed(succ))

    n = len(parent)
    parent_a = np.asarray(parent, dtype=np.int64)
    actor_a = np.asarray(actor, dtype=np.int64)
    returns_a = np.asarray(returns, dtype=np.float64).reshape(n, 2)
    if game.zero_sum:
        term = actor_a == TERMINAL
        bad = np.abs(returns_a[term].sum(axis=1)) > 1e-12
        if bad.any():
            raise EnumerationError("terminal returns are not zero-sum")

    child_count = np.asarray([len(c) for c in children_of], dtype=np.int64)
    child_start = np.zeros(n, dtype=np.int64)
    child_start[1:] = np.cumsum(child_count)[:-1]
    children = np.asarray([c for cs in children_of for c in cs], dtype=np.int64)

    # public states
    pub_intern = _Interner()
    public = np.asarray([pub_intern(k) for k in pub_seq], dtype=np.int64)
    pub_keys = pub_intern.items
    pub_parent = np.full(len(pub_keys), -1, dtype=np.int64)
    for h in range(1, n):
        pub_parent[public[h]] = public[parent[h]]

    # infostates
    info_keys, info_parent, info_public, info_actions, info_histories, slot_start = [], [], [], [], [], []
    infostate = np.zeros((2, n), dtype=np.int64)
    for p in (0, 1):
        intern = _Interner()
        for h in range(n):
            infostate[p, h] = intern(info_seq[p][h])
        m = len(intern.items)
        par = np.full(m, -1, dtype=np.int64)
        pubs = np.full(m, -1, dtype=np.int64)
        acts: list = [None] * m
        hists = [[] for _ in range(m)]
        for h in range(n):
            s = infostate[p, h]
            hists[s].append(h)
            if parent[h] >= 0:
                ps = infostate[p, parent[h]]
                if ps != s:
                    if par[s] >= 0 and par[s] != ps:
                        raise EnumerationError("infostate tree is not a tree (imperfect recall)")
                    par[s] = ps
            if pubs[s] >= 0 and pubs[s] != public[h]:
                raise EnumerationError("infostate spans several public states")
            pubs[s] = public[h]
            a = _actor_of(game, states[h])[1] if actor[h] == p else ()
            if acts[s] is None:
                acts[s] = tuple(a)
            elif acts[s] != tuple(a):
                raise EnumerationError("histories of one infostate disagree on legal actions")
        starts = np.full(m, -1, dtype=np.int64)
        offset = 0
        for s in range(m):
            if acts[s]:
                starts[s] = offset
                offset += len(acts[s])
        info_keys.append(intern.items)
        info_parent.append(par)
        info_public.append(pubs)
        info_actions.append(acts)
        info_histories.append([np.asarray(x, dtype=np.int64) for x in hists])
        slot_start.append(starts)

    pub_histories = [[] for _ in pub_keys]
    for h in range(n):
        pub_histories[public[h]].append(h)
    pub_infostates = []
    for u in range(len(pub_keys)):
        hs = pub_histories[u]
        pub_infostates.append(tuple(
            np.asarray(sorted(set(int(infostate[p, h]) for h in hs)), dtype=np.int64) for p in (0, 1)))
    pub_children = [[] for _ in pub_keys]
    for u, par in enumerate(pub_parent):
        if par >= 0:
            pub_children[par].append(u)

    tok = tokens.items
    obs_items = obs_ids.items

    def label(p: int, seq: tuple) -> str:
        pub = "".join(str(tok[obs_items[o][0]]) for o in seq[0::2])
        priv = "".join(str(tok[obs_items[o][1]]) for o in seq[0::2])
        return f"[{pub}{'|' if p == 0 else '||'}{priv}]"

    # Labels drop null tokens, so they can collide; decision infostates get
    # the plain label and the rest are suffixed.
    info_labels = []
    for p in (0, 1):
        labels = [label(p, k) for k in info_keys[p]]
        seen: dict = {}
        order = sorted(range(len(labels)), key=lambda i: (slot_start[p][i] < 0, i))
        for i in order:
            lab = labels[i]
            if lab in seen:
                seen[lab] += 1
                labels[i] = f"{lab}#{seen[lab]}"
            else:
                seen[lab] = 0
        info_labels.append(labels)
    pub_labels = [" ".join(str(tok[t]) or "_" for t in k) for k in pub_keys]

    return TreeIndex(
        game_name=game.name,
        parent=parent_a,
        depth=np.asarray(depth, dtype=np.int64),
        actor=actor_a,
        branch=np.asarray(branch, dtype=np.int64),
        edge_prob=np.asarray(edge_prob, dtype=np.float64),
        chance_reach=np.asarray(reach, dtype=np.float64),
        returns=returns_a,
        child_start=child_start,
        child_count=child_count,
        children=children,
        infostate=infostate,
        public=public,
        edge_action=edge_action,
        info_keys=info_keys,
        info_parent=info_parent,
        info_public=info_public,
        info_actions=info_actions,
        info_histories=info_histories,
        info_labels=info_labels,
        slot_start=slot_start,
        pub_keys=pub_keys,
        pub_parent=pub_parent,
        pub_histories=[np.asarray(x, dtype=np.int64) for x in pub_histories],
        pub_infostates=pub_infostates,
        pub_children=pub_children,
        pub_labels=pub_labels,
        tokens=tok,
        obs_pairs=obs_items,
        actions=actions.items,
        states=states,
    )


def infostate_key(index: TreeIndex, history: int, player: int) -> InfoStateKey:
    return index.key(player, int(index.infostate[player, history]))


def is_prefix(a: InfoStateKey, b: InfoStateKey) -> bool:
    return a.player == b.player and b.seq[:len(a.seq)] == a.seq


def consistent_states(index: TreeIndex, player: int, s: int) -> set[int]:
    """Opponent infostates that share at least one history with ``s``."""
    hs = index.info_histories[player][s]
    return set(int(x) for x in index.infostate[1 - player, hs])


def common_info_closure(index: TreeIndex, player: int, s: int) -> set[tuple[int, int]]:
    """Fixed point of alternating consistency expansion, as (player, id) pairs."""
    seen = {(player, s)}
    queue = deque([(player, s)])
    while queue:
        p, x = queue.popleft()
        for y in consistent_states(index, p, x):
            if (1 - p, y) not in seen:
                seen.add((1 - p, y))
                queue.append((1 - p, y))
    return seen


def check_structure(index: TreeIndex) -> list[str]:
    """Return a list of violated structural invariants (empty when healthy)."""
    problems = []
    n = index.num_histories
    for p in (0, 1):
        total = sum(len(x) for x in index.info_histories[p])
        if total != n:
            problems.append(f"player {p} infostates cover {total} of {n} histories")
    for u in range(index.num_public_states):
        hs = index.pub_histories[u]
        for p in (0, 1):
            members = index.pub_infostates[u][p]
            if sum(len(index.info_histories[p][s]) for s in members) != len(hs):
                problems.append(f"public state {u}: player {p} partition mismatch")
            if np.any(index.info_public[p][members] != u):
                problems.append(f"public state {u}: infostate outside public state")
    # breadth-first over the public tree must reach every history exactly once
    seen = 0
    queue = deque([int(index.public[0])])
    while queue:
        u = queue.popleft()
        seen += len(index.pub_histories[u])
        queue.extend(index.pub_children[u])
    if seen != n:
        problems.append(f"public-tree traversal saw {seen} histories, expected {n}")
    # prefix monotonicity along every edge
    for h in range(1, n):
        g = index.parent[h]
        for p in (0, 1):
            kg = index.info_keys[p][index.infostate[p, g]]
            kh = index.info_keys[p][index.infostate[p, h]]
            if kh[:len(kg)] != kg:
                problems.append(f"history {h}: key of player {p} does not extend its parent's")
    # closure containment, on a sample of infostates for big games
    for p in (0, 1):
        m = index.num_infostates(p)
        step = max(1, m // 200)
        for s in range(0, m, step):
            pub = index.info_public[p][s]
            for q, x in common_info_closure(index, p, s):
                if index.info_public[q][x] != pub:
                    problems.append(f"closure of ({p},{s}) leaves its public state")
                    break
    term = index.terminals()
    if index.num_histories and np.any(np.abs(index.returns[term].sum(axis=1)) > 1e-12):
        problems.append("non-zero-sum terminal")
    return problems
