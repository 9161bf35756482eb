"""Local regret minimizers and matrix-game self-play dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .games import MatrixGameSpec

KINDS = ("greedy", "rm", "rm_plus", "hedge")


class RegretState:
    """Cumulative regrets of one decision point under a chosen minimizer.

    ``hedge`` uses ``beta`` if given, else sqrt(2 ln|A| / horizon) when the
    horizon is known, else the same formula with the horizon replaced by the
    current power-of-two epoch length.
    """

    def __init__(self, n_actions: int, kind: str = "rm", beta: float | None = None,
                 horizon: int | None = None):
        if n_actions < 1:
            raise ValueError("need at least one action")
        if kind not in KINDS:
            raise ValueError(f"unknown minimizer {kind!r}")
        self.kind = kind
        self.regrets = np.zeros(n_actions)
        self.t = 0
        self.beta = beta
        self.horizon = horizon

    @property
    def n_actions(self) -> int:
        return len(self.regrets)

    def _beta(self) -> float:
        if self.beta is not None:
            return self.beta
        n = self.n_actions
        span = self.horizon if self.horizon else 2 ** max(0, math.ceil(math.log2(self.t + 1)))
        return math.sqrt(2.0 * math.log(n) / span) if n > 1 else 0.0

    def next_policy(self) -> np.ndarray:
        r = self.regrets
        n = len(r)
        if self.kind == "greedy":
            out = np.zeros(n)
            out[int(np.argmax(r))] = 1.0
            return out
        if self.kind == "hedge":
            z = self._beta() * (r - r.max())
            w = np.exp(z)
            return w / w.sum()
        pos = np.maximum(r, 0.0)
        total = pos.sum()
        if total <= 0.0:
            return np.full(n, 1.0 / n)
        return pos / total

    def observe(self, reward, played_policy) -> None:
        reward = np.asarray(reward, dtype=float)
        if reward.shape != self.regrets.shape:
            raise ValueError(f"reward vector has length {reward.size}, expected {self.n_actions}")
        self.regrets += reward - float(np.dot(played_policy, reward))
        if self.kind == "rm_plus":
            np.maximum(self.regrets, 0.0, out=self.regrets)
        self.t += 1


def matrix_nashconv(A: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Best-response gain of both players in the zero-sum game with row payoff ``A``."""
    return float(np.max(A @ y) - np.min(x @ A))


def geometric_checkpoints(T: int, per_decade: int = 10) -> list[int]:
    pts = {T}
    k = 0
    while True:
        t = int(round(10 ** (k / per_decade)))
        if t > T:
            break
        pts.add(t)
        k += 1
    return sorted(pts)


@dataclass
class SelfPlayResult:
    average: tuple  # (row policy, column policy)
    regrets: tuple  # external regret of each player after T steps
    trace: list = field(default_factory=list)  # dicts with iter, nashconv, r1, r2


def matrix_selfplay(A, minimizer: str = "rm", T: int = 1000, mode: str = "simultaneous",
                    checkpoints=None, init_regrets=None) -> SelfPlayResult:
    """Self-play regret minimization in a zero-sum matrix game.

    Row rewards are ``A @ y`` and column rewards ``-(x @ A)``.  The average
    profile is the uniform average of the played policies.  In simultaneous
    mode nashconv of the average equals (R1 + R2) / T.
    """
    if isinstance(A, MatrixGameSpec):
        A = A.matrix
    A = np.asarray(A, dtype=float)
    if mode not in ("simultaneous", "alternating"):
        raise ValueError(f"unknown mode {mode!r}")
    n, m = A.shape
    s1 = RegretState(n, minimizer, horizon=T)
    s2 = RegretState(m, minimizer, horizon=T)
    if init_regrets is not None:
        s1.regrets[:] = init_regrets[0]
        s2.regrets[:] = init_regrets[1]
    sx, sy = np.zeros(n), np.zeros(m)
    cum1, cum2 = np.zeros(n), np.zeros(m)
    real1 = real2 = 0.0
    checks = set(checkpoints if checkpoints is not None else geometric_checkpoints(T))
    trace = []
    for t in range(1, T + 1):
        x = s1.next_policy()
        y = s2.next_policy()
        r1 = A @ y
        if mode == "alternating":
            s1.observe(r1, x)
            x_next = s1.next_policy()
            r2 = -(x_next @ A)
            s2.observe(r2, y)
            played_x = x
        else:
            r2 = -(x @ A)
            s1.observe(r1, x)
            s2.observe(r2, y)
            played_x = x
        sx += played_x
        sy += y
        cum1 += r1
        cum2 += r2
        real1 += float(played_x @ r1)
        real2 += float(y @ r2)
        if t in checks:
            R1 = float(cum1.max() - real1)
            R2 = float(cum2.max() - real2)
            trace.append({"iter": t, "nashconv": matrix_nashconv(A, sx / t, sy / t), "r1": R1, "r2": R2})
    R1 = float(cum1.max() - real1)
    R2 = float(cum2.max() - real2)
    return SelfPlayResult((sx / T, sy / T), (R1, R2), trace)


def _argmax(values: np.ndarray, tie_break) -> int:
    if tie_break is None or tie_break == "first":
        best = values.max()
        return int(np.flatnonzero(values >= best - 1e-12)[0])
    return int(tie_break(values))


@dataclass
class BestResponseTrajectory:
    row: list
    col: list
    average: tuple
    current_converged: bool
    average_converged: bool


def best_respond_sequence(A, T: int, tie_break: str | Callable | None = "first",
                          start=(0, 0), mode: str = "simultaneous",
                          window: int = 10, tol: float = 1e-3) -> BestResponseTrajectory:
    """Pure best-response dynamics.

    Simultaneous: both players best respond to the other's previous action.
    Alternating: the row player responds to the previous column action and
    the column player to the current row action.
    """
    if isinstance(A, MatrixGameSpec):
        A = A.matrix
    A = np.asarray(A, dtype=float)
    i, j = start
    row, col = [i], [j]
    for _ in range(T - 1):
        ni = _argmax(A[:, j], tie_break)
        nj = _argmax(-A[ni if mode == "alternating" else i, :], tie_break)
        i, j = ni, nj
        row.append(i)
        col.append(j)
    n, m = A.shape
    avg = (np.bincount(row, minlength=n) / T, np.bincount(col, minlength=m) / T)
    tail = slice(max(0, T - window), T)
    current_converged = len(set(row[tail])) == 1 and len(set(col[tail])) == 1
    half = max(1, T - window)
    prev = (np.bincount(row[:half], minlength=n) / half, np.bincount(col[:half], minlength=m) / half)
    average_converged = bool(max(np.abs(prev[0] - avg[0]).max(), np.abs(prev[1] - avg[1]).max()) < tol
                             and matrix_nashconv(A, *avg) < tol)
    return BestResponseTrajectory(row, col, avg, current_converged, average_converged)


def fictitious_play(A, T: int, checkpoints=None) -> SelfPlayResult:
    """Each player best responds to the other's empirical average so far."""
    if isinstance(A, MatrixGameSpec):
        A = A.matrix
    A = np.asarray(A, dtype=float)
    n, m = A.shape
    cx, cy = np.zeros(n), np.zeros(m)
    cx[0] = cy[0] = 1.0  # first move: lowest-index actions
    checks = set(checkpoints if checkpoints is not None else geometric_checkpoints(T))
    trace = []
    # running payoffs of each action against the opponent's cumulative counts
    ay = A @ cy
    xa = cx @ A
    for t in range(2, T + 1):
        i = int(np.argmax(ay))
        j = int(np.argmin(xa))
        cx[i] += 1
        cy[j] += 1
        ay += A[:, j]
        xa += A[i, :]
        if t in checks:
            trace.append({"iter": t, "nashconv": matrix_nashconv(A, cx / t, cy / t)})
    if 1 in checks:
        trace.insert(0, {"iter": 1, "nashconv": matrix_nashconv(A, np.eye(n)[0], np.eye(m)[0])})
    return SelfPlayResult((cx / T, cy / T), (float("nan"), float("nan")), trace)


@dataclass
class DoubleOracleResult:
    row_actions: list
    col_actions: list
    profile: tuple
    nashconv: float
    rounds: int
    inner_nashconv: float


def double_oracle(A, inner_T: int = 20000, start=((0,), (0,)), tol: float = 1e-3,
                  max_rounds: int = 100) -> DoubleOracleResult:
    """Grow restricted action sets by full-game best responses until stable."""
    if isinstance(A, MatrixGameSpec):
        A = A.matrix
    A = np.asarray(A, dtype=float)
    n, m = A.shape
    rows, cols = sorted(start[0]), sorted(start[1])
    for rounds in range(1, max_rounds + 1):
        sub = A[np.ix_(rows, cols)]
        res = matrix_selfplay(sub, "rm_plus", inner_T, mode="alternating", checkpoints=[])
        xs, ys = res.average
        inner = matrix_nashconv(sub, xs, ys)
        x, y = np.zeros(n), np.zeros(m)
        x[rows] = xs
        y[cols] = ys
        value = float(x @ A @ y)
        br_row = _argmax(A @ y, "first")
        br_col = _argmax(-(x @ A), "first")
        grew = False
        if (A @ y)[br_row] > value + tol and br_row not in rows:
            rows = sorted(rows + [br_row])
            grew = True
        if (x @ A)[br_col] < value - tol and br_col not in cols:
            cols = sorted(cols + [br_col])
            grew = True
        if not grew:
            return DoubleOracleResult(rows, cols, (x, y), matrix_nashconv(A, x, y), rounds, inner)
    raise RuntimeError(f"double oracle did not stabilize in {max_rounds} rounds "
                       f"(residual nashconv {matrix_nashconv(A, x, y):.3g})")
