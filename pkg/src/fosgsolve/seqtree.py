"""Vectorized sequence-form view of a (sub)tree of a :class:`TreeIndex`.

Every solver in the package works on this view.  For each player the tree is
described by "extended sequences": one entry slot per root infostate of the
(sub)tree, whose weight is that infostate's reach from outside, followed by
one slot per (decision infostate, action) pair inside the tree.  Sequences
are ordered by depth so that reach propagation and value backup are a few
numpy calls per level.

All values are counterfactual: weighted by chance and the opponent's reach
but not by the owner's reach.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fosg import TERMINAL, TreeIndex


@dataclass
class _Level:
    info_lo: int
    info_hi: int
    seq_lo: int
    seq_hi: int


class SeqTree:
    """Sequence-form arrays for the subtree of ``root_pub``, cut at ``frontier``."""

    def __init__(self, index: TreeIndex, root_pub: int | None = None, frontier=()):
        self.index = index
        self.root_pub = int(index.public[0]) if root_pub is None else int(root_pub)
        self.frontier_pubs = sorted(set(int(f) for f in frontier) - {self.root_pub})
        frontier_set = set(self.frontier_pubs)

        roots = index.pub_histories[self.root_pub]
        root_set = set(roots.tolist())
        hist = []
        stack = list(reversed(roots.tolist()))
        is_frontier = []
        while stack:
            h = stack.pop()
            hist.append(h)
            cut = int(index.public[h]) in frontier_set
            is_frontier.append(cut)
            if not cut:
                stack.extend(reversed(index.child_ids(h).tolist()))
        hist = np.asarray(hist, dtype=np.int64)
        order = np.argsort(hist, kind="stable")
        hist = hist[order]
        is_frontier = np.asarray(is_frontier, dtype=bool)[order]
        self.histories = hist
        local = {int(h): i for i, h in enumerate(hist)}

        self.entry_infostates = [index.pub_infostates[self.root_pub][p] for p in (0, 1)]
        self.n_entry = [len(e) for e in self.entry_infostates]

        # decision infostates of each player inside the tree
        actor = index.actor[hist]
        self.info_ids, self.info_nact, self.info_start, self.info_parent_ext = [], [], [], []
        self.seq_slot, self.n_seq, self.levels, self.seq_info = [], [], [], []
        self.seq_parent_ext, self._uniform = [], []
        hx = np.zeros((2, len(hist)), dtype=np.int64)
        for p in (0, 1):
            dec = np.unique(index.infostate[p, hist[(actor == p) & ~is_frontier]])
            dec = dec[index.slot_start[p][dec] >= 0]
            entry_pos = {int(s): i for i, s in enumerate(self.entry_infostates[p])}
            # first pass: parent "ext" (entry or global slot) of every history
            parent_key = np.zeros(len(hist), dtype=np.int64)  # -(entry+1) or global slot
            for i, h in enumerate(hist):
                g = index.parent[h]
                if h in root_set:
                    parent_key[i] = -(entry_pos[int(index.infostate[p, h])] + 1)
                elif index.actor[g] == p:
                    parent_key[i] = index.slot_start[p][index.infostate[p, g]] + index.branch[h]
                else:
                    parent_key[i] = parent_key[local[int(g)]]
            # infostate level within the tree
            info_parent_key = {}
            for s in dec:
                h0 = index.info_histories[p][s]
                h0 = h0[np.isin(h0, hist)][0]
                info_parent_key[int(s)] = int(parent_key[local[int(h0)]])
            slot_owner = {}
            for s in dec:
                st = index.slot_start[p][s]
                for a in range(len(index.info_actions[p][s])):
                    slot_owner[int(st + a)] = int(s)
            level_of = {}
            for s in sorted(info_parent_key):  # ids grow with depth
                k = info_parent_key[s]
                level_of[s] = 0 if k < 0 else level_of[slot_owner[k]] + 1
            ordered = sorted(level_of, key=lambda s: (level_of[s], s))
            seq_slot, info_start, nact, levels = [], [], [], []
            slot_local = {}
            cur_level, lo_i, lo_s = None, 0, 0
            for i, s in enumerate(ordered):
                if level_of[s] != cur_level:
                    if cur_level is not None:
                        levels.append(_Level(lo_i, i, lo_s, len(seq_slot)))
                    cur_level, lo_i, lo_s = level_of[s], i, len(seq_slot)
                info_start.append(len(seq_slot))
                k = len(index.info_actions[p][s])
                nact.append(k)
                st = int(index.slot_start[p][s])
                for a in range(k):
                    slot_local[st + a] = len(seq_slot)
                    seq_slot.append(st + a)
            if ordered:
                levels.append(_Level(lo_i, len(ordered), lo_s, len(seq_slot)))
            E = self.n_entry[p]

            def to_ext(k):
                return -k - 1 if k < 0 else E + slot_local[k]

            self.info_ids.append(np.asarray(ordered, dtype=np.int64))
            self.info_nact.append(np.asarray(nact, dtype=np.int64))
            self.info_start.append(np.asarray(info_start, dtype=np.int64))
            self.info_parent_ext.append(np.asarray([to_ext(info_parent_key[s]) for s in ordered],
                                                   dtype=np.int64))
            self.seq_slot.append(np.asarray(seq_slot, dtype=np.int64))
            self.n_seq.append(len(seq_slot))
            self.levels.append(levels)
            self.seq_info.append(np.repeat(np.arange(len(ordered)), nact).astype(np.int64))
            self.seq_parent_ext.append(self.info_parent_ext[-1][self.seq_info[-1]])
            self._uniform.append(1.0 / self.info_nact[-1][self.seq_info[-1]].astype(float))
            hx[p] = [to_ext(int(k)) for k in parent_key]
        self.hx = hx
        # backward plan per level, deepest first: infostate slice, ext slice, sequence slice,
        # action offsets inside the sequence slice, parent ext slot of each infostate
        self._plan = [[(slice(lv.info_lo, lv.info_hi), slice(self.n_entry[p] + lv.seq_lo, self.n_entry[p] + lv.seq_hi),
                        slice(lv.seq_lo, lv.seq_hi), self.info_start[p][lv.info_lo:lv.info_hi] - lv.seq_lo,
                        self.info_parent_ext[p][lv.info_lo:lv.info_hi]) for lv in reversed(self.levels[p])]
                      for p in (0, 1)]
        self.local = local
        self.n_ext = [self.n_entry[p] + self.n_seq[p] for p in (0, 1)]
        # forward plan per level: ext slice, sequence slice, parent ext slot of each sequence
        self._fwd = [[(slice(self.n_entry[p] + lv.seq_lo, self.n_entry[p] + lv.seq_hi), slice(lv.seq_lo, lv.seq_hi),
                       self.seq_parent_ext[p][lv.seq_lo:lv.seq_hi]) for lv in self.levels[p]] for p in (0, 1)]

        term = (index.actor[hist] == TERMINAL) & ~is_frontier
        self.term = np.flatnonzero(term)
        self.term_hist = hist[self.term]
        self.term_x = hx[:, self.term]
        self.term_w = index.chance_reach[self.term_hist]
        self.term_u = index.returns[self.term_hist]
        self.term_wu = [self.term_w * self.term_u[:, p] for p in (0, 1)]

        # frontier public states: ext index of each member infostate
        self.frontier = []
        for f in self.frontier_pubs:
            members = index.pub_infostates[f]
            ext = []
            for p in (0, 1):
                e = []
                for s in members[p]:
                    h = int(index.info_histories[p][s][0])
                    e.append(hx[p, local[h]] if h in local else -1)
                ext.append(np.asarray(e, dtype=np.int64))
            self.frontier.append((f, members, ext))
        self.local_info = [{int(s): i for i, s in enumerate(self.info_ids[p])} for p in (0, 1)]

    # ------------------------------------------------------------------ policy
    def uniform(self, p: int) -> np.ndarray:
        return self._uniform[p].copy()

    def normalize(self, p: int, mass: np.ndarray) -> np.ndarray:
        """Per-infostate normalization; rows with zero mass become uniform."""
        if self.n_seq[p] == 0:
            return mass.copy()
        sums = np.add.reduceat(mass, self.info_start[p])
        rep = sums[self.seq_info[p]]
        return np.divide(mass, rep, out=self._uniform[p].copy(), where=rep > 0)

    def regret_matching(self, p: int, regrets: np.ndarray) -> np.ndarray:
        return self.normalize(p, np.maximum(regrets, 0.0))

    def from_slots(self, p: int, slot_probs: np.ndarray) -> np.ndarray:
        return slot_probs[self.seq_slot[p]]

    # ------------------------------------------------------------------- reach
    def realization(self, p: int, pi: np.ndarray, entry_weights) -> np.ndarray:
        x = np.empty(self.n_ext[p])
        E = self.n_entry[p]
        x[:E] = entry_weights
        for ext, seqs, par in self._fwd[p]:
            x[ext] = x[par] * pi[seqs]
        return x

    def info_reach(self, p: int, x: np.ndarray) -> np.ndarray:
        """Own reach of each decision infostate given the extended realization."""
        return x[self.info_parent_ext[p]]

    # ------------------------------------------------------------------ values
    def leaf_values(self, p: int, x_opp: np.ndarray, frontier_values=None) -> np.ndarray:
        """Counterfactual terminal (and frontier) contributions per ext slot."""
        g = np.bincount(self.term_x[p], weights=self.term_wu[p] * x_opp[self.term_x[1 - p]],
                        minlength=self.n_ext[p]).astype(float, copy=False)
        if frontier_values is not None:
            for (f, members, ext), vals in zip(self.frontier, frontier_values):
                np.add.at(g, ext[p], vals[p])
        return g

    def backup(self, p: int, g: np.ndarray, pi: np.ndarray | None, best_response: bool = False):
        """Propagate leaf contributions up.

        Returns ``(v_ext, q, v_info, br_choice)``.  With ``best_response`` the
        value of an infostate is the max over actions (lowest index on ties) at
        every infostate, reached or not, which is a counterfactual best
        response; ``br_choice`` then holds the chosen action per infostate.
        """
        v = g.copy()
        E = self.n_entry[p]
        if not best_response:
            return self._backup_policy(p, v, pi)
        q = np.zeros(self.n_seq[p])
        v_info = np.zeros(len(self.info_ids[p]))
        choice = np.zeros(len(self.info_ids[p]), dtype=np.int64) if best_response else None
        start, nact, par = self.info_start[p], self.info_nact[p], self.info_parent_ext[p]
        for lv in reversed(self.levels[p]):
            a, b, sa, sb = lv.info_lo, lv.info_hi, lv.seq_lo, lv.seq_hi
            qq = v[E + sa:E + sb]
            q[sa:sb] = qq
            offs = start[a:b] - sa
            if best_response:
                vi = np.maximum.reduceat(qq, offs)
                rep = np.repeat(vi, nact[a:b])
                pos = np.arange(sb - sa) - np.repeat(offs, nact[a:b])
                tol = 1e-12 * np.maximum(1.0, np.abs(rep))
                cand = np.where(qq >= rep - tol, pos, np.iinfo(np.int64).max)
                choice[a:b] = np.minimum.reduceat(cand, offs)
            else:
                vi = np.add.reduceat(pi[sa:sb] * qq, offs)
            v_info[a:b] = vi
            v += np.bincount(par[a:b], weights=vi, minlength=len(v))
        return v, q, v_info, choice

    def _backup_policy(self, p: int, v: np.ndarray, pi: np.ndarray):
        v_info = np.empty(len(self.info_ids[p]))
        n = len(v)
        for infos, ext, seqs, offs, par in self._plan[p]:
            vi = np.add.reduceat(pi[seqs] * v[ext], offs)
            v_info[infos] = vi
            v += np.bincount(par, weights=vi, minlength=n)
        # sequence slots are final once their own level is done
        return v, v[self.n_entry[p]:].copy(), v_info, None

    def choice_policy(self, p: int, choice: np.ndarray) -> np.ndarray:
        pi = np.zeros(self.n_seq[p])
        pi[self.info_start[p] + choice] = 1.0
        return pi

    # --------------------------------------------------------------- utilities
    def infostate_slice(self, p: int, s: int) -> slice:
        i = self.local_info[p][s]
        st = self.info_start[p][i]
        return slice(st, st + self.info_nact[p][i])

    def entry_histories(self):
        return self.index.pub_histories[self.root_pub]



_FULL: dict = {}


def full_tree(index: TreeIndex) -> SeqTree:
    """Cached sequence-form view of the whole game."""
    tree = _FULL.get(id(index))
    if tree is None or tree.index is not index:
        tree = SeqTree(index)
        if len(_FULL) > 16:
            _FULL.clear()
        _FULL[id(index)] = tree
    return tree
