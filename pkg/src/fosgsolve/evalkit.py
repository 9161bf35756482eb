"""Match simulation, variance-reduced value estimators and consistency demos.

Estimators see the evaluated player's recorded policy rows (for every own
infostate of each public state where it acted) and a per-history baseline
``b(h)``.  Each correction term has the form ``E_a[b(h a)] - b(h a_taken)``
under the distribution actually used at that step, so it has mean zero
whatever the baseline.  "Imaginary" estimators average over the evaluated
player's possible private states that are compatible with the public line
of play and the opponent's information, weighted by own range and chance.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cfr import CfrConfig, CfrSolver
from .fosg import CHANCE, NOOP, NULL, TERMINAL, GameModel, Observation, Outcome, TreeIndex
from .bestresponse import nashconv
from .mccfr import history_values
from .policy import BehaviorPolicy, PolicyProfile
from .seqtree import full_tree

log = logging.getLogger(__name__)

METHODS = ("mc", "imaginary", "mivat", "mivat_imaginary", "aivat")


class MatchError(RuntimeError):
    pass


class AnnotationError(ValueError):
    pass


# ------------------------------------------------------------------ matches


@dataclass
class Step:
    history: int  # history before the step
    actor: int  # player or CHANCE
    branch: int  # edge taken
    chance: np.ndarray | None = None  # chance distribution at chance steps
    row: np.ndarray | None = None  # acting row, annotated players only
    rows: dict | None = None  # evaluated player: rows of every own infostate at the public state
    own_range: dict | None = None  # evaluated player: pre-step own reach per infostate


@dataclass
class MatchRecord:
    seed: int
    match: int
    player: int  # evaluated seat
    terminal: int
    payoff: float  # evaluated player's return
    steps: list = field(default_factory=list)
    pair: int | None = None  # duplicate pair id

    def rows_by_public(self) -> dict:
        return {int(st.rows["public_state"]): st.rows["rows"] for st in self.steps if st.rows is not None}


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, _mix(key)]))


def _mix(key) -> int:
    out = 0
    for k in key:
        out = (out * 1_000_003 + int(k) + 1) & 0xFFFFFFFFFFFFFFFF
    return out


def _own_reach(index: TreeIndex, player: int, rows_by_pub: dict, h: int) -> float:
    r = 1.0
    path = index.history_path(h)
    for g, c in zip(path[:-1], path[1:]):
        if index.actor[g] == player:
            rows = rows_by_pub.get(int(index.public[g]))
            if rows is None:
                raise AnnotationError(f"no recorded policy at public state {index.pub_labels[index.public[g]]!r}")
            r *= rows[int(index.infostate[player, g])][index.branch[c]]
    return r


def _check_row(row, n: int, where: str) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.shape != (n,) or np.any(row < -1e-12) or abs(row.sum() - 1.0) > 1e-9:
        raise MatchError(f"{where}: invalid action distribution {row.tolist()}")
    return np.clip(row, 0.0, None) / row.sum()


def play_match(index: TreeIndex, agents, player: int, seed: int, match: int,
               chance_key: int | None = None, annotate_opponent: bool = False) -> MatchRecord:
    """One match; ``agents[p]`` plays seat p and ``player`` is the evaluated seat."""
    for a in agents:
        a.new_game()
    chance_rng = _rng(seed, 1, match if chance_key is None else chance_key)
    act_rng = _rng(seed, 2, match)
    h = 0
    steps = []
    rows_by_pub: dict = {}
    while index.actor[h] != TERMINAL:
        a = int(index.actor[h])
        kids = index.child_ids(h)
        if a == CHANCE:
            dist = index.edge_prob[kids].astype(float)
            b = int(chance_rng.choice(len(kids), p=dist / dist.sum()))
            steps.append(Step(h, CHANCE, b, chance=dist))
        else:
            s = int(index.infostate[a, h])
            _, rows = agents[a].act(s)
            where = f"match {match} step {len(steps)} ({index.info_labels[a][s]!r})"
            row = _check_row(rows.get(s) if rows is not None else None, len(kids), where)
            b = int(act_rng.choice(len(kids), p=row))
            st = Step(h, a, b)
            if a == player:
                u = int(index.public[h])
                clean = {int(k): _check_row(v, len(v), where) for k, v in rows.items()}
                rows_by_pub[u] = clean
                st.row = row
                st.rows = {"public_state": u, "rows": clean}
                st.own_range = {int(t): _own_reach(index, player, rows_by_pub, int(index.info_histories[player][t][0]))
                                for t in clean}
            elif annotate_opponent:
                st.row = row
            steps.append(st)
        h = int(kids[b])
    return MatchRecord(seed, match, player, h, float(index.returns[h, player]), steps)


def _seated(agent, seat: int):
    """``agent`` itself, or the agent a factory ``seat -> agent`` builds for ``seat``."""
    if callable(agent) and not hasattr(agent, "act"):
        return agent(seat)
    if getattr(agent, "player", seat) != seat:
        raise MatchError(f"agent is bound to seat {agent.player + 1}, not seat {seat + 1}; "
                         "pass a factory seat -> agent instead")
    return agent


def simulate_matches(index: TreeIndex, agents, k: int, seed: int = 0, player: int = 0,
                     duplicate: bool = False, annotate_opponent: bool = False) -> list:
    """``k`` matches between ``agents[0]`` (seat 1) and ``agents[1]`` (seat 2).

    Each entry is an agent or a factory ``seat -> agent``.  The evaluated
    agent is ``agents[player]``.  In duplicate mode matches come in pairs
    that share the chance stream, with the evaluated agent in seat 1 for the
    first match of the pair and in seat 2 for the second; seat-bound agents
    then have to be given as factories.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    records = []
    if not duplicate:
        seated = [_seated(agents[0], 0), _seated(agents[1], 1)]
        for m in range(k):
            records.append(play_match(index, seated, player, seed, m, annotate_opponent=annotate_opponent))
        return records
    if k % 2:
        raise ValueError("duplicate mode needs an even number of matches")
    ev, other = agents[player], agents[1 - player]
    lineups = [(_seated(ev, 0), _seated(other, 1)), (_seated(other, 0), _seated(ev, 1))]
    for pair in range(k // 2):
        for seat in (0, 1):
            rec = play_match(index, lineups[seat], seat, seed, 2 * pair + seat, chance_key=pair,
                             annotate_opponent=annotate_opponent)
            rec.pair = pair
            records.append(rec)
    return records


def record_for_terminal(index: TreeIndex, profile: PolicyProfile, z: int, player: int) -> MatchRecord:
    """The record a match ending in ``z`` would produce with agents playing ``profile``."""
    path = index.history_path(z)
    steps = []
    rows_by_pub: dict = {}
    for g, c in zip(path[:-1], path[1:]):
        a = int(index.actor[g])
        b = int(index.branch[c])
        if a == CHANCE:
            steps.append(Step(g, a, b, chance=index.edge_prob[index.child_ids(g)].astype(float)))
            continue
        st = Step(g, a, b, row=profile[a][int(index.infostate[a, g])].copy())
        if a == player:
            u = int(index.public[g])
            rows = {int(s): profile[a][int(s)].copy() for s in index.pub_infostates[u][a]
                    if index.is_decision(a, s)}
            rows_by_pub[u] = rows
            st.rows = {"public_state": u, "rows": rows}
        steps.append(st)
    return MatchRecord(0, -1, player, z, float(index.returns[z, player]), steps)


# --------------------------------------------------------------- estimators


@dataclass
class EstimatorReport:
    method: str
    values: np.ndarray  # per-match (or per duplicate pair) corrected value
    mean: float
    sd: float
    count: int

    @property
    def se(self) -> float:
        return self.sd / math.sqrt(self.count) if self.count > 1 else math.inf

    def record(self) -> dict:
        return {"method": self.method, "mean": self.mean, "sd": self.sd, "count": self.count, "se": self.se}


def exact_baseline(index: TreeIndex, profile: PolicyProfile) -> np.ndarray:
    """Expected return of every history under ``profile``, per player: shape (n, 2)."""
    return history_values(index, profile)


def _corrections(index: TreeIndex, player: int, h_path, rows_by_pub, baseline, opp_rows, kinds) -> float:
    """Sum of zero-mean correction terms along the history path."""
    total = 0.0
    for g, c in zip(h_path[:-1], h_path[1:]):
        a = int(index.actor[g])
        kids = index.child_ids(g)
        if a == CHANCE:
            if "chance" not in kinds:
                continue
            dist = index.edge_prob[kids]
        elif a == player:
            if "agent" not in kinds:
                continue
            dist = rows_by_pub[int(index.public[g])][int(index.infostate[a, g])]
        else:
            if "opponent" not in kinds:
                continue
            dist = opp_rows.get(int(index.infostate[a, g]))
            if dist is None:
                raise AnnotationError("opponent corrections need recorded opponent rows")
        b = baseline[kids]
        total += float(dist @ b) - float(baseline[c])
    return total


def _imaginary_set(index: TreeIndex, player: int, z: int) -> list:
    """Terminals that differ from ``z`` only in the evaluated player's private information."""
    g = int(index.parent[z])
    o = 1 - player
    s_o = int(index.infostate[o, g])
    b = int(index.branch[z])
    out = []
    for h in index.pub_histories[int(index.public[g])]:
        if int(index.infostate[o, h]) != s_o:
            continue
        for c in index.child_ids(h):
            if index.branch[c] == b:
                out.append(int(c))
    return out


def estimate_value(index: TreeIndex, record: MatchRecord, method: str, baseline=None,
                   correct_opponent: bool = False) -> float:
    """Corrected value of one match for the evaluated player."""
    if method not in METHODS:
        raise ValueError(f"unknown estimator {method!r}; choose from {METHODS}")
    i, z = record.player, record.terminal
    if method == "mc":
        return record.payoff
    rows_by_pub = record.rows_by_public()
    base = np.zeros(index.num_histories) if baseline is None else np.asarray(baseline)[:, i] \
        if np.ndim(baseline) == 2 else np.asarray(baseline)
    opp_rows = {}
    if correct_opponent:
        opp_rows = {int(index.infostate[1 - i, st.history]): st.row for st in record.steps
                    if st.actor == 1 - i and st.row is not None}
    kinds = {"chance"}
    if method == "aivat":
        kinds.add("agent")
        if correct_opponent:
            kinds.add("opponent")
    if method == "mivat":
        return record.payoff + _corrections(index, i, index.history_path(z), rows_by_pub, base, opp_rows, kinds)
    if index.parent[z] < 0 or index.actor[index.parent[z]] == CHANCE:
        terminals = [z]
    else:
        terminals = _imaginary_set(index, i, z)
    num = den = 0.0
    for t in terminals:
        w = _own_reach(index, i, rows_by_pub, t) * float(index.chance_reach[t])
        if w <= 0:
            continue
        x = float(index.returns[t, i])
        if method != "imaginary":
            x += _corrections(index, i, index.history_path(t), rows_by_pub, base, opp_rows, kinds)
        num += w * x
        den += w
    if den <= 0:
        raise AnnotationError("the realized terminal has zero recorded own reach")
    return num / den


def estimate(index: TreeIndex, records: list, method: str, baseline=None,
             correct_opponent: bool = False) -> EstimatorReport:
    """Fold a list of match records into one estimator report.

    Duplicate pairs are averaged into one datapoint each.
    """
    vals = np.array([estimate_value(index, r, method, baseline, correct_opponent) for r in records])
    pairs = [r.pair for r in records]
    if records and all(p is not None for p in pairs):
        order = {}
        for p, v in zip(pairs, vals):
            order.setdefault(p, []).append(v)
        vals = np.array([np.mean(v) for v in order.values()])
    n = len(vals)
    sd = float(np.std(vals, ddof=1)) if n > 1 else 0.0
    return EstimatorReport(method, vals, float(vals.mean()) if n else math.nan, sd, n)


# ------------------------------------------------------------ consistency


class TwoStepTrap(GameModel):
    """Player 1 picks L (ends, 0) or R; after R, player 1 picks X (0) or Y (-5).

    Both {L, Y} and {R, X} are optimal, yet stitching R from one with Y from
    the other loses 5.  Player 2 has no decisions.
    """

    name = "two_step_trap"

    def initial_state(self):
        return ()

    def legal_actions(self, state, player):
        if state in ((), ("R",)):
            return (("L", "R") if state == () else ("X", "Y")) if player == 0 else (NOOP,)
        return ()

    def transition(self, state, joint):
        a = joint[0]
        r = -5.0 if a == "Y" else 0.0
        return [Outcome(1.0, state + (a,), Observation(a), (r, -r))]


@dataclass
class ConsistencyReport:
    solve_nashconv: list  # nashconv of every individual solve
    stitched_nashconv: float
    assignment: dict  # (player, infostate label) -> solve index
    stitched: PolicyProfile
    solves: list = field(default_factory=list)


def _biased_cfr(index: TreeIndex, bias: dict, T: int, strength: float = 1.0) -> PolicyProfile:
    """Vanilla CFR started from regrets that favour the listed actions.

    ``bias`` maps (player, infostate label) to the favoured action index.
    """
    tree = full_tree(index)
    init = [np.zeros(tree.n_seq[0]), np.zeros(tree.n_seq[1])]
    for (p, label), a in bias.items():
        s = index.label_id(p, label)
        init[p][tree.infostate_slice(p, s).start + a] = strength
    solver = CfrSolver(tree, CfrConfig.vanilla(), initial_regrets=init)
    solver.run(T)
    return solver.average_profile()


def _biased_pure(index: TreeIndex, bias: dict) -> PolicyProfile:
    """First optimal pure policy of player 1 when actions are tried favoured-first.

    Meant for games where only player 1 decides.
    """
    infos = [int(s) for s in index.decision_infostates(0)]
    orders = []
    for s in infos:
        n = len(index.info_actions[0][s])
        first = bias.get((0, index.info_labels[0][s]), 0)
        orders.append([first] + [a for a in range(n) if a != first])
    best, best_val = None, -math.inf
    p2 = PolicyProfile.uniform(index)[1]
    for choice in itertools.product(*orders):
        pol = BehaviorPolicy(index, 0)
        for s, a in zip(infos, choice):
            row = np.zeros(len(index.info_actions[0][s]))
            row[a] = 1.0
            pol[s] = row
        val = -nashconv(index, PolicyProfile((pol, p2))).brv[1]
        if val > best_val + 1e-12:
            best, best_val = pol, val
    return PolicyProfile((best, p2))


def stitch(index: TreeIndex, profiles: list, assignment: dict, default: int = 0) -> PolicyProfile:
    """Profile whose row at each infostate comes from the assigned solve."""
    out = [profiles[default][p].copy() for p in (0, 1)]
    for (p, label), k in assignment.items():
        s = index.label_id(p, label)
        out[p][s] = profiles[k][p][s]
    return PolicyProfile(tuple(out))


def consistency_demo(index: TreeIndex, bias_configs: list, assignment: dict, T: int = 2000,
                     solver: str = "cfr") -> ConsistencyReport:
    """Solve once per bias config, then stitch rows from different solves.

    ``solver`` is ``cfr`` (initial-regret bias) or ``pure`` (tie-break order
    over pure policies of player 1).
    """
    if solver == "cfr":
        solves = [_biased_cfr(index, b, T) for b in bias_configs]
    elif solver == "pure":
        solves = [_biased_pure(index, b) for b in bias_configs]
    else:
        raise ValueError(f"unknown solver {solver!r}")
    each = [nashconv(index, prof).nashconv for prof in solves]
    stitched = stitch(index, solves, assignment)
    return ConsistencyReport(each, nashconv(index, stitched).nashconv, dict(assignment), stitched, solves)


def matching_pennies_demo(index: TreeIndex, T: int = 2000) -> ConsistencyReport:
    """Two solves steered to player 2 always-H and always-T, stitched across the chance side."""
    labels = [index.info_labels[1][s] for s in index.decision_infostates(1)]
    heads = {(1, lab): 0 for lab in labels}
    tails = {(1, lab): 1 for lab in labels}
    return consistency_demo(index, [heads, tails], {(1, labels[0]): 0, (1, labels[1]): 1}, T)


def two_step_trap_demo(index: TreeIndex) -> ConsistencyReport:
    s1, s2 = (index.info_labels[0][s] for s in index.decision_infostates(0))
    configs = [{(0, s1): 0, (0, s2): 1}, {(0, s1): 1, (0, s2): 0}]  # {L, Y} and {R, X}
    return consistency_demo(index, configs, {(0, s1): 1, (0, s2): 0}, solver="pure")
