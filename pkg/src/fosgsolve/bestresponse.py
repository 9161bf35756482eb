"""Best responses, counterfactual best responses and NashConv."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fosg import TreeIndex
from .policy import BehaviorPolicy, PolicyProfile
from .seqtree import SeqTree, full_tree


@dataclass
class BrResult:
    policy: BehaviorPolicy  # deterministic responder policy
    value: float  # best-response value to the responder
    cbrv: dict  # responder infostate id -> counterfactual best-response value


def _respond(tree: SeqTree, fixed: BehaviorPolicy, responder: int,
             tie_break: Callable | None = None):
    p, o = responder, 1 - responder
    pi_o = tree.from_slots(o, fixed.probs)
    x_o = tree.realization(o, pi_o, np.ones(tree.n_entry[o]))
    g = tree.leaf_values(p, x_o)
    v, q, v_info, choice = tree.backup(p, g, None, best_response=True)
    if tie_break is not None:
        for i in range(len(tree.info_ids[p])):
            st, k = tree.info_start[p][i], tree.info_nact[p][i]
            row = q[st:st + k]
            choice[i] = tie_break(int(tree.info_ids[p][i]), row)
        pi = tree.choice_policy(p, choice)
        v, q, v_info, _ = tree.backup(p, g, pi)
    return v, q, v_info, choice


def best_response(index: TreeIndex, fixed_policy: BehaviorPolicy, responder: int | None = None,
                  tie_break: Callable | None = None) -> BrResult:
    """Exact best response against ``fixed_policy``.

    A downward pass computes the fixed player's reach of every history, the
    upward pass takes the argmax at each responder infostate (lowest action
    index on ties unless ``tie_break(infostate, q_row)`` says otherwise).
    The argmax is taken at every infostate, so the response is also a
    counterfactual best response.
    """
    if responder is None:
        responder = 1 - fixed_policy.player
    if fixed_policy.player == responder:
        raise ValueError("responder must be the other player")
    tree = full_tree(index)
    v, q, v_info, choice = _respond(tree, fixed_policy, responder, tie_break)
    probs = np.zeros(index.num_slots(responder))
    slots = tree.seq_slot[responder][tree.info_start[responder] + choice]
    probs[slots] = 1.0
    value = float(v[:tree.n_entry[responder]].sum())
    cbrv = {int(s): float(x) for s, x in zip(tree.info_ids[responder], v_info)}
    return BrResult(BehaviorPolicy(index, responder, probs), value, cbrv)


cf_best_response = best_response


def counterfactual_values(index: TreeIndex, profile: PolicyProfile, player: int) -> dict:
    """Counterfactual value of every decision infostate of ``player`` under ``profile``."""
    tree = full_tree(index)
    o = 1 - player
    x_o = tree.realization(o, tree.from_slots(o, profile[o].probs), np.ones(tree.n_entry[o]))
    pi = tree.from_slots(player, profile[player].probs)
    _, q, v_info, _ = tree.backup(player, tree.leaf_values(player, x_o), pi)
    return {int(s): float(x) for s, x in zip(tree.info_ids[player], v_info)}


@dataclass
class NashConvResult:
    brv: tuple  # (BRV of player 1 against pi_2, BRV of player 2 against pi_1)
    nashconv: float
    index: TreeIndex

    @property
    def exploitability(self) -> float:
        return self.nashconv / 2.0

    @property
    def deltas(self) -> tuple:
        """Per-player exploitability of each policy relative to the game value."""
        from .cfr import game_value

        gv = game_value(self.index)
        return (self.brv[1] + gv, self.brv[0] - gv)


def nashconv(index: TreeIndex, profile: PolicyProfile) -> NashConvResult:
    """Sum over players of the best-response value against the other's policy.

    In a zero-sum game this equals the total gain both players can obtain by
    deviating, and it is zero exactly at a Nash equilibrium.
    """
    tree = full_tree(index)
    brv = []
    for p in (0, 1):
        v, _, _, _ = _respond(tree, profile[1 - p], p)
        brv.append(float(v[:tree.n_entry[p]].sum()))
    total = brv[0] + brv[1]
    if -1e-12 < total < 0.0:  # rounding at an exact equilibrium
        total = 0.0
    return NashConvResult(tuple(brv), total, index)
