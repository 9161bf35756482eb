"""Concrete games: matrix games, poker variants, coordinated matching pennies, glasses."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .fosg import NOOP, NULL, GameModel, Observation, Outcome

RPS_MATRIX = ((0, 1, -1), (-1, 0, 1), (1, -1, 0))


class GameSpecError(ValueError):
    pass


# ---------------------------------------------------------------- matrix games


@dataclass(frozen=True)
class MatrixGameSpec:
    payoff: tuple  # row player's payoff, rows x columns
    row_labels: tuple = ()
    col_labels: tuple = ()
    col_payoff: tuple | None = None  # only for general-sum demos

    def __post_init__(self):
        m = np.asarray(self.payoff, dtype=float)
        if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
            raise GameSpecError("payoff matrix needs at least one row and one column")
        if not np.all(np.isfinite(m)):
            raise GameSpecError("payoff entries must be finite")
        if not self.row_labels:
            object.__setattr__(self, "row_labels", tuple(f"r{i}" for i in range(m.shape[0])))
        if not self.col_labels:
            object.__setattr__(self, "col_labels", tuple(f"c{j}" for j in range(m.shape[1])))
        if len(self.row_labels) != m.shape[0] or len(self.col_labels) != m.shape[1]:
            raise GameSpecError("label count does not match matrix shape")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.payoff, dtype=float)


class MatrixGame(GameModel):
    """Row player acts privately, then the column player acts in one infostate."""

    def __init__(self, spec: MatrixGameSpec, name: str = "matrix"):
        self.spec = spec
        self.name = name
        self.zero_sum = spec.col_payoff is None

    def initial_state(self):
        return ()

    def legal_actions(self, state, player):
        if len(state) == 2:
            return ()
        if len(state) == player:
            return self.spec.row_labels if player == 0 else self.spec.col_labels
        return (NOOP,)

    def transition(self, state, joint):
        if len(state) == 0:
            a = self.spec.row_labels.index(joint[0])
            return [Outcome(1.0, (a,), Observation(NULL, (joint[0], NULL)))]
        b = self.spec.col_labels.index(joint[1])
        r = self.spec.payoff[state[0]][b]
        c = -r if self.spec.col_payoff is None else self.spec.col_payoff[state[0]][b]
        return [Outcome(1.0, (state[0], b), Observation(NULL, (NULL, joint[1])), (float(r), float(c)))]


def matrix_to_fosg(spec: MatrixGameSpec, name: str = "matrix", allow_general_sum: bool = False) -> MatrixGame:
    if spec.col_payoff is not None and not allow_general_sum:
        raise GameSpecError("general-sum matrix rejected; pass allow_general_sum=True for demos")
    return MatrixGame(spec, name)


def parse_matrix(text: str) -> MatrixGameSpec:
    """Parse ``"0,1,-1;-1,0,1;1,-1,0"`` (rows separated by ';')."""
    try:
        rows = [tuple(float(Fraction(x.strip())) for x in row.split(",")) for row in text.split(";")]
    except (ValueError, ZeroDivisionError) as exc:
        raise GameSpecError(f"malformed matrix {text!r}") from exc
    if len({len(r) for r in rows}) != 1:
        raise GameSpecError(f"ragged matrix {text!r}")
    return MatrixGameSpec(tuple(rows))


def rps_spec(orientation: str = "table") -> MatrixGameSpec:
    """Rock-paper-scissors.

    ``"table"`` uses the matrix 0,1,-1;-1,0,1;1,-1,0 with rows and columns in
    R,P,S order, so the row player's rock beats paper.  ``"standard"`` uses its transpose, where rock
    beats scissors for the row player.
    """
    m = np.asarray(RPS_MATRIX, dtype=float)
    if orientation == "standard":
        m = m.T
    elif orientation != "table":
        raise GameSpecError(f"unknown rps orientation {orientation!r}")
    return MatrixGameSpec(tuple(map(tuple, m)), ("R", "P", "S"), ("R", "P", "S"))


def rps_water_spec(orientation: str = "table") -> MatrixGameSpec:
    """Rock-paper-scissors plus a fourth action, water, that ties with everything."""
    m = np.zeros((4, 4))
    m[:3, :3] = rps_spec(orientation).matrix
    labels = ("R", "P", "S", "W")
    return MatrixGameSpec(tuple(map(tuple, m)), labels, labels)


CHICKEN = MatrixGameSpec(((0, 0), (1, -100)), ("S", "G"), ("S", "G"), col_payoff=((0, 1), (0, -100)))
CYCLING_2X2 = MatrixGameSpec(((1, -2), (-2, 4)), ("A", "B"), ("A", "B"))


# ---------------------------------------------------- coordinated matching pennies


class CoordinatedMatchingPennies(GameModel):
    """Player 1 picks H/T privately, chance reveals L/R, player 2 picks H/T.

    Player 2 wins by matching after L and by mismatching after R.
    """

    name = "matching_pennies_coordinated"

    def initial_state(self):
        return ()

    def legal_actions(self, state, player):
        if len(state) == 3:
            return ()
        if len(state) == 0:
            return ("H", "T") if player == 0 else (NOOP,)
        if len(state) == 1:
            return (NOOP,)
        return ("H", "T") if player == 1 else (NOOP,)

    def transition(self, state, joint):
        if len(state) == 0:
            return [Outcome(1.0, (joint[0],), Observation(NULL, (joint[0], NULL)))]
        if len(state) == 1:
            return [Outcome(0.5, state + (side,), Observation(side)) for side in ("L", "R")]
        p1, side = state
        match = joint[1] == p1
        p2_wins = match if side == "L" else not match
        r = -1.0 if p2_wins else 1.0
        return [Outcome(1.0, state + (joint[1],), Observation(NULL, (NULL, joint[1])), (r, -r))]


# ----------------------------------------------------------------- Kuhn-style poker


@dataclass(frozen=True)
class PokerSpec:
    ranks: tuple  # low to high
    first_deal: tuple  # ((rank, prob), ...) for player 1
    second_deal: dict  # player-1 rank -> ((rank, prob), ...) for player 2
    ante: int = 1
    bet: int = 1
    deal_token: str = NULL


def _showdown(spec: PokerSpec, c1, c2) -> int:
    r1, r2 = spec.ranks.index(c1), spec.ranks.index(c2)
    return (r1 > r2) - (r1 < r2)


@dataclass(frozen=True)
class _KState:
    cards: tuple = ()
    seq: str = ""


class KuhnStylePoker(GameModel):
    """One betting round with pass/bet actions and a single bet size.

    Cards are dealt one chance step per player.  Betting sequences are the
    classic ones: p, b, pp, pb, bp, bb, pbp, pbb.
    """

    TERMINAL_SEQS = ("pp", "bp", "bb", "pbp", "pbb")

    def __init__(self, spec: PokerSpec, name: str):
        self.spec = spec
        self.name = name

    def initial_state(self):
        return _KState()

    def _actor(self, st: _KState):
        if len(st.cards) < 2:
            return "chance"
        if st.seq in self.TERMINAL_SEQS:
            return None
        return len(st.seq) % 2

    def legal_actions(self, st, player):
        who = self._actor(st)
        if who is None:
            return ()
        if who == player:
            return ("p", "b")
        return (NOOP,)

    def transition(self, st, joint):
        spec = self.spec
        if len(st.cards) == 0:
            return [Outcome(p, _KState((c,)), Observation(NULL, (c, NULL))) for c, p in spec.first_deal]
        if len(st.cards) == 1:
            return [Outcome(p, _KState(st.cards + (c,)), Observation(spec.deal_token, (NULL, c)))
                    for c, p in spec.second_deal[st.cards[0]]]
        who = len(st.seq) % 2
        a = joint[who]
        seq = st.seq + a
        rewards = (0.0, 0.0)
        if seq in self.TERMINAL_SEQS:
            stake = spec.ante + (spec.bet if seq.endswith("bb") else 0)
            if seq == "bp":
                win = 1
                stake = spec.ante
            elif seq == "pbp":
                win = -1
                stake = spec.ante
            else:
                win = _showdown(spec, *st.cards)
            rewards = (float(win * stake), float(-win * stake))
        return [Outcome(1.0, _KState(st.cards, seq), Observation(a), rewards)]


def kuhn() -> KuhnStylePoker:
    third = 1.0 / 3.0
    spec = PokerSpec(
        ranks=("J", "Q", "K"),
        first_deal=(("J", third), ("Q", third), ("K", third)),
        second_deal={c: tuple((d, 0.5) for d in "JQK" if d != c) for c in "JQK"},
    )
    return KuhnStylePoker(spec, "kuhn")


def mini_poker_asym() -> KuhnStylePoker:
    """Kuhn betting over the deal set {(A,A), (K,A), (K,K), (Q,Q)}, each 1/4.

    Dealt per player: player 1 gets A/K/Q with 1/4, 1/2, 1/4, then player 2's
    card is drawn conditionally.  The second deal emits the public token "d".
    """
    spec = PokerSpec(
        ranks=("Q", "K", "A"),
        first_deal=(("A", 0.25), ("K", 0.5), ("Q", 0.25)),
        second_deal={"A": (("A", 1.0),), "K": (("A", 0.5), ("K", 0.5)), "Q": (("Q", 1.0),)},
        deal_token="d",
    )
    return KuhnStylePoker(spec, "mini_poker_asym")


# ---------------------------------------------------------------------- Leduc


@dataclass(frozen=True)
class _LState:
    cards: tuple = ()  # (p1, p2, board)
    round: int = 0
    seq: str = ""
    contrib: tuple = (1, 1)
    done: bool = False


class LeducPoker(GameModel):
    """Leduc hold'em over ranks J, Q, K with two cards each.

    Cards are dealt at the rank level with exact card-removal probabilities.
    Ante 1, bet 2 in the first round and 4 in the second, at most two bets or
    raises per round, player 1 first in both rounds.  Actions: f (fold),
    c (check/call), r (bet/raise).
    """

    name = "leduc"
    RANKS = ("J", "Q", "K")

    def __init__(self, ante: int = 1, bets: tuple = (2, 4), cap: int = 2, copies: int = 2):
        self.ante, self.bets, self.cap, self.copies = ante, bets, cap, copies

    def initial_state(self):
        return _LState(contrib=(self.ante, self.ante))

    def _deal_probs(self, used: tuple):
        total = self.copies * len(self.RANKS) - len(used)
        out = []
        for r in self.RANKS:
            left = self.copies - used.count(r)
            if left > 0:
                out.append((r, left / total))
        return out

    def _actor(self, st: _LState):
        if st.done:
            return None
        if len(st.cards) < 2 or (st.round == 1 and len(st.cards) < 3):
            return "chance"
        return len(st.seq) % 2

    def legal_actions(self, st, player):
        who = self._actor(st)
        if who is None:
            return ()
        if who != player:
            return (NOOP,)
        facing = st.contrib[0] != st.contrib[1]
        acts = ["f"] if facing else []
        acts.append("c")
        if st.seq.count("r") < self.cap:
            acts.append("r")
        return tuple(acts)

    def transition(self, st, joint):
        if len(st.cards) == 0:
            return [Outcome(p, replace(st, cards=(c,)), Observation(NULL, (c, NULL)))
                    for c, p in self._deal_probs(())]
        if len(st.cards) == 1:
            return [Outcome(p, replace(st, cards=st.cards + (c,)), Observation(NULL, (NULL, c)))
                    for c, p in self._deal_probs(st.cards)]
        if st.round == 1 and len(st.cards) == 2:
            return [Outcome(p, replace(st, cards=st.cards + (c,)), Observation("/" + c))
                    for c, p in self._deal_probs(st.cards)]
        who = len(st.seq) % 2
        a = joint[who]
        contrib = list(st.contrib)
        seq = st.seq + a
        obs = Observation(a)
        if a == "f":
            lost = contrib[who]
            r = (float(lost), float(-lost)) if who == 1 else (float(-lost), float(lost))
            return [Outcome(1.0, replace(st, seq=seq, done=True), obs, r)]
        if a == "r":
            contrib[who] = contrib[1 - who] + self.bets[st.round]
            return [Outcome(1.0, replace(st, seq=seq, contrib=tuple(contrib)), obs)]
        facing = contrib[0] != contrib[1]
        contrib[who] = contrib[1 - who]
        if not facing and len(seq) == 1:
            return [Outcome(1.0, replace(st, seq=seq), obs)]
        # round over
        if st.round == 0:
            return [Outcome(1.0, replace(st, round=1, seq="", contrib=tuple(contrib)), obs)]
        win = self._winner(st.cards)
        stake = contrib[0]
        return [Outcome(1.0, replace(st, seq=seq, contrib=tuple(contrib), done=True), obs,
                        (float(win * stake), float(-win * stake)))]

    def _winner(self, cards) -> int:
        c1, c2, board = cards
        if c1 == board:
            return 1
        if c2 == board:
            return -1
        r1, r2 = self.RANKS.index(c1), self.RANKS.index(c2)
        return (r1 > r2) - (r1 < r2)


# --------------------------------------------------------------------- glasses


@dataclass(frozen=True)
class GraphChaseSpec:
    nodes: int
    edges: tuple
    evader_start: int
    chaser_start: tuple
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise GameSpecError("horizon must be at least 1")
        for n in (self.evader_start,) + tuple(self.chaser_start):
            if not 0 <= n < self.nodes:
                raise GameSpecError(f"start node {n} not in graph")

    def neighbors(self, n: int) -> tuple:
        out = [b for a, b in self.edges if a == n] + [a for a, b in self.edges if b == n]
        return tuple(sorted(out))


def glasses_spec() -> GraphChaseSpec:
    """Two 4-cycles (0-3 and 7-10) joined through the path 4-5-6."""
    edges = ((0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (4, 5), (5, 6), (6, 7),
             (7, 8), (8, 9), (9, 10), (10, 7))
    return GraphChaseSpec(11, edges, evader_start=5, chaser_start=(2, 9), horizon=3)


@dataclass(frozen=True)
class _GState:
    evader: int
    stones: tuple
    turn: int = 0  # evader turns completed
    evader_to_move: bool = True
    outcome: int = 0  # +1 evader survived, -1 captured, 0 running


class Glasses(GameModel):
    """Pursuit on a graph: a hidden evader (player 1) against two chaser stones (player 2).

    The evader moves to an adjacent free node or stays; the move is private.
    The chaser then moves one stone to an adjacent node (or passes); the move
    is public.  Landing on the evader captures it.  The evader wins by
    surviving ``horizon`` chaser moves.
    """

    name = "glasses"

    def __init__(self, spec: GraphChaseSpec | None = None):
        self.spec = spec or glasses_spec()
        self._nbrs = [self.spec.neighbors(n) for n in range(self.spec.nodes)]

    def initial_state(self):
        return _GState(self.spec.evader_start, tuple(self.spec.chaser_start))

    def initial_observation(self):
        return Observation("start", (f"e{self.spec.evader_start}", NULL))

    def legal_actions(self, st, player):
        if st.outcome:
            return ()
        mover = 0 if st.evader_to_move else 1
        if player != mover:
            return (NOOP,)
        if mover == 0:
            return (st.evader,) + tuple(n for n in self._nbrs[st.evader] if n not in st.stones)
        acts = [("pass",)]
        for k, pos in enumerate(st.stones):
            for n in self._nbrs[pos]:
                if n not in st.stones:
                    acts.append((k, n))
        return tuple(acts)

    def describe_action(self, action) -> str:
        if isinstance(action, tuple):
            return "pass" if action == ("pass",) else f"s{action[0]}>{action[1]}"
        return f"e{action}"

    def transition(self, st, joint):
        if st.evader_to_move:
            to = joint[0]
            return [Outcome(1.0, replace(st, evader=to, evader_to_move=False),
                            Observation(NULL, (f"e{to}", NULL)))]
        a = joint[1]
        stones = list(st.stones)
        if a != ("pass",):
            stones[a[0]] = a[1]
        turn = st.turn + 1
        outcome = 0
        if st.evader in stones:
            outcome = -1
        elif turn >= self.spec.horizon:
            outcome = 1
        token = self.describe_action(a) + ("x" if outcome == -1 else "")
        r = (float(outcome), float(-outcome))
        return [Outcome(1.0, _GState(st.evader, tuple(stones), turn, True, outcome), Observation(token), r)]


# --------------------------------------------------------------------- registry

GAME_NAMES = ("rps", "rps_water", "matching_pennies_coordinated", "kuhn", "leduc",
              "mini_poker_asym", "glasses", "matrix:<inline>")


def make_game(name: str, params: dict | None = None) -> GameModel:
    """Build a game by name.  ``params`` holds optional per-game settings."""
    params = dict(params or {})
    if name.startswith("matrix:"):
        return matrix_to_fosg(parse_matrix(name[len("matrix:"):]), name)
    if name == "rps":
        return matrix_to_fosg(rps_spec(params.pop("orientation", "table")), "rps")
    if name == "rps_water":
        game = matrix_to_fosg(rps_water_spec(params.pop("orientation", "table")), "rps_water")
    elif name == "matching_pennies_coordinated":
        game = CoordinatedMatchingPennies()
    elif name == "kuhn":
        game = kuhn()
    elif name == "mini_poker_asym":
        game = mini_poker_asym()
    elif name == "leduc":
        try:
            game = LeducPoker(**params)
        except TypeError as exc:
            raise GameSpecError(f"bad leduc params {params}") from exc
        params = {}
    elif name == "glasses":
        spec = glasses_spec()
        if "horizon" in params:
            spec = replace(spec, horizon=int(params.pop("horizon")))
        game = Glasses(spec)
    else:
        raise GameSpecError(f"unknown game {name!r}; known: {', '.join(GAME_NAMES)}")
    if params:
        raise GameSpecError(f"unused parameters for {name}: {sorted(params)}")
    return game


def parse_game_arg(text: str) -> GameModel:
    """CLI form: ``name`` or ``name:key=value,key=value`` (``matrix:...`` is inline)."""
    if text.startswith("matrix:"):
        return make_game(text)
    name, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            k, eq, v = item.partition("=")
            if not eq:
                raise GameSpecError(f"malformed game parameter {item!r}")
            params[k] = int(v) if v.lstrip("-").isdigit() else v
    return make_game(name, params)
