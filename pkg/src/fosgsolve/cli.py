"""Command-line interface.

Every command prints line records (space separated ``key=value`` pairs,
keys sorted) and ends with one summary record.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bestresponse import nashconv
from .cfr import CfrConfig, game_value_bounds, run_cfr
from .fosg import CHANCE, TERMINAL, TreeIndex, enumerate_game
from .games import GameSpecError, MatrixGame, parse_game_arg
from .mccfr import SampleScheme, run_mccfr
from .policy import PolicyProfile, StrategyFormatError, action_name, profile_from_text
from .regret import matrix_selfplay

SOLVERS = ("cfr", "cfr+", "mccfr_os", "mccfr_vr", "mccfr_vr_oracle", "rm_selfplay")


class CliError(Exception):
    pass


# ------------------------------------------------------------------ records


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "none"
    s = str(v)
    if not s or any(c.isspace() for c in s) or '"' in s or "=" in s:
        return json.dumps(s)
    return s


def format_record(rec: dict) -> str:
    return " ".join(f"{k}={_fmt(rec[k])}" for k in sorted(rec))


def parse_record(line: str) -> dict:
    """Inverse of :func:`format_record` (values come back as strings)."""
    out = {}
    i, n = 0, len(line)
    while i < n:
        if line[i] == " ":
            i += 1
            continue
        eq = line.index("=", i)
        key = line[i:eq]
        i = eq + 1
        if i < n and line[i] == '"':
            val, end = json.JSONDecoder().raw_decode(line, i)
            i = end
        else:
            end = line.find(" ", i)
            end = n if end < 0 else end
            val = line[i:end]
            i = end
        out[key] = val
    return out


def emit(rec: dict, stream=None) -> None:
    print(format_record(rec), file=stream or sys.stdout, flush=True)


@dataclass
class RunConfig:
    """Settings of one command run; round-trips through one record line."""

    command: str
    game: str
    solver: str = ""
    agent: str = ""
    iters: int = 0
    seed: int = 0
    out: str = ""
    checkpoints: str = ""
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        rec = {k: v for k, v in asdict(self).items() if k != "extra"}
        rec.update({f"x.{k}": v for k, v in self.extra.items()})
        return format_record(rec)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        rec = parse_record(text)
        kw, extra = {}, {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in rec.items():
            if k.startswith("x."):
                extra[k[2:]] = v
            elif types.get(k) == "int":
                kw[k] = int(v)
            else:
                kw[k] = v
        return cls(extra=extra, **kw)


def _index(game_arg: str) -> tuple:
    try:
        game = parse_game_arg(game_arg)
    except GameSpecError as exc:
        raise CliError(str(exc)) from None
    return game, enumerate_game(game)


def _checkpoints(text: str | None, T: int):
    if not text:
        return None
    pts = sorted({int(x) for x in text.split(",") if x})
    if any(p < 1 or p > T for p in pts):
        raise CliError(f"checkpoints must lie in [1, {T}]")
    return pts


def _load_profile(index: TreeIndex, paths: list) -> PolicyProfile:
    text = ""
    for p in paths:
        with open(p) as fh:
            text += fh.read() + "\n"
    try:
        return profile_from_text(index, text)
    except StrategyFormatError as exc:
        raise CliError(str(exc)) from None


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


# ------------------------------------------------------------------ commands


def cmd_solve(args) -> dict:
    if args.iters < 1:
        raise CliError("--iters must be at least 1")
    if args.solver not in SOLVERS:
        raise CliError(f"unknown solver {args.solver!r}; choose from {', '.join(SOLVERS)}")
    game, index = _index(args.game)
    checks = _checkpoints(args.checkpoints, args.iters)
    if args.solver == "rm_selfplay":
        if not isinstance(game, MatrixGame):
            raise CliError("rm_selfplay needs a matrix game")
        res = matrix_selfplay(game.spec.matrix, "rm", args.iters, checkpoints=checks)
        for rec in res.trace:
            emit({"iter": rec["iter"], "nashconv": rec["nashconv"], "r1": rec["r1"], "r2": rec["r2"]})
        rows = [{}, {}]
        for p in (0, 1):
            for s in index.decision_infostates(p):
                rows[p][index.info_labels[p][s]] = res.average[p]
        profile = PolicyProfile.from_rows(index, rows)
    elif args.solver in ("cfr", "cfr+"):
        res = run_cfr(game, index, CfrConfig.named(args.solver), args.iters, checks)
        for rec in res.diagnostics:
            emit(rec)
        profile = res.profile
    else:
        variant = args.solver[len("mccfr_"):]
        res = run_mccfr(game, index, variant, SampleScheme(seed=args.seed), args.iters, checks)
        for rec in res.diagnostics:
            emit(rec)
        profile = res.profile
    if args.out:
        _write(args.out, profile.to_text())
    return {"command": "solve", "game": args.game, "solver": args.solver, "iters": args.iters,
            "nashconv": nashconv(index, profile).nashconv, "out": args.out or None}


def cmd_evaluate(args) -> dict:
    _, index = _index(args.game)
    profile = _load_profile(index, args.strategy)
    nc = nashconv(index, profile)
    lo, hi = game_value_bounds(index, args.value_tol)
    value = 0.5 * (lo + hi)
    return {"command": "evaluate", "game": args.game, "delta1": nc.brv[1] + value,
            "delta2": nc.brv[0] - value, "nashconv": nc.nashconv, "exploitability": nc.exploitability,
            "game_value": value}


def _agent(kind: str, index: TreeIndex, seat: int, args):
    from .resolve import ContinualResolver, PolicyAgent, ValueFunctionHandle

    if kind == "uniform":
        return PolicyAgent(index, seat, PolicyProfile.uniform(index)[seat], args.seed)
    if kind == "continual":
        vf = ValueFunctionHandle.exact_cfr(args.vf_iters) if args.depth != "full" else None
        return ContinualResolver(index, seat, vf, args.iters, args.depth, seed=args.seed)
    if kind.startswith("file:"):
        return PolicyAgent(index, seat, _load_profile(index, [kind[5:]])[seat], args.seed)
    if kind in ("cfr", "cfr+"):
        prof = run_cfr(None, index, CfrConfig.named(kind), args.iters, checkpoints=[]).profile
        return PolicyAgent(index, seat, prof[seat], args.seed)
    raise CliError(f"unknown agent {kind!r}; use uniform, continual, cfr, cfr+ or file:PATH")


class HumanAgent:
    """Reads actions by label from a stream; shows the public state and a menu."""

    def __init__(self, index: TreeIndex, seat: int, infile, outfile):
        self.index, self.player = index, seat
        self.infile, self.outfile = infile, outfile

    def new_game(self):
        print("new match", file=self.outfile)

    def snapshot(self):
        return None

    def restore(self, state):
        pass

    def act(self, infostate: int):
        ix, p = self.index, self.player
        acts = [action_name(a) for a in ix.info_actions[p][infostate]]
        print(f"public: {ix.pub_labels[ix.info_public[p][infostate]]}", file=self.outfile)
        print(f"you: {ix.info_labels[p][infostate]}  actions: {' '.join(acts)}", file=self.outfile)
        while True:
            line = self.infile.readline()
            if not line:
                raise CliError("input ended during a human decision")
            choice = line.strip()
            if choice in acts:
                break
            print(f"unknown action {choice!r}", file=self.outfile)
        row = np.zeros(len(acts))
        row[acts.index(choice)] = 1.0
        return ix.info_actions[p][infostate][acts.index(choice)], {int(infostate): row}


def _run_matches(index, agents, args, evaluated: int) -> dict:
    from .evalkit import estimate, simulate_matches

    recs = simulate_matches(index, agents, args.matches, args.seed, player=evaluated,
                            duplicate=args.duplicate)
    for r in recs:
        emit({"match": r.match, "seat": r.player + 1, "terminal": index.history_label(r.terminal),
              "payoff": r.payoff})
    rep = estimate(index, recs, "mc")
    return {"mean": rep.mean, "sd": rep.sd, "count": rep.count, "se": rep.se}


def cmd_match(args) -> dict:
    _, index = _index(args.game)
    agents = [lambda seat: _agent(args.agent1, index, seat, args),
              lambda seat: _agent(args.agent2, index, seat, args)]
    if args.human:
        agents[1] = lambda seat: HumanAgent(index, seat, sys.stdin, sys.stdout)
    out = _run_matches(index, agents, args, 0)
    out.update({"command": "match", "game": args.game})
    return out


def cmd_resolve_play(args) -> dict:
    _, index = _index(args.game)
    seat = args.seat - 1
    agents = [None, None]
    agents[seat] = lambda s: _agent("continual", index, s, args)
    agents[1 - seat] = (lambda s: HumanAgent(index, s, sys.stdin, sys.stdout)) if args.human \
        else (lambda s: _agent(args.opponent, index, s, args))
    out = _run_matches(index, agents, args, seat)
    out.update({"command": "resolve-play", "game": args.game, "seat": args.seat})
    return out


def cmd_tabularize(args) -> dict:
    from .resolve import tabularize

    _, index = _index(args.game)
    profile = tabularize(lambda seat: _agent(args.agent, index, seat, args), index, audit=args.audit)
    if args.out:
        _write(args.out, profile.to_text())
    nc = nashconv(index, profile)
    return {"command": "tabularize", "game": args.game, "agent": args.agent, "iters": args.iters,
            "nashconv": nc.nashconv, "exploitability": nc.exploitability, "out": args.out or None}


def cmd_variance_bench(args) -> dict:
    from .evalkit import METHODS, estimate, exact_baseline, simulate_matches
    from .resolve import PolicyAgent

    _, index = _index(args.game)
    prof = run_cfr(None, index, CfrConfig.plus(), args.iters, checkpoints=[]).profile
    agents = [PolicyAgent(index, p, prof[p]) for p in (0, 1)]
    recs = simulate_matches(index, agents, args.matches, args.seed)
    base = exact_baseline(index, prof)
    sds = {}
    for m in METHODS:
        rep = estimate(index, recs, m, base)
        emit(rep.record())
        sds[m] = rep.sd
    return {"command": "variance-bench", "game": args.game, "matches": args.matches,
            "sd_ratio_aivat_mc": sds["aivat"] / sds["mc"] if sds["mc"] > 0 else None}


def cmd_margins_bench(args) -> dict:
    from .subgame import margins_bench, subgames_after_chance

    _, index = _index(args.game)
    techniques = [t for t in args.techniques.split(",") if t]
    pairs = subgames_after_chance(index)
    if args.subgames:
        pairs = pairs[:args.subgames]
    if not pairs:
        raise CliError("game has no sub-games below a mid-game chance event")
    trunk = run_cfr(None, index, CfrConfig.vanilla(), args.trunk_iters, checkpoints=[]).profile
    recs = margins_bench(index, trunk, pairs, args.iters, techniques, on_record=emit)
    out = {"command": "margins-bench", "game": args.game, "subgames": len(pairs)}
    for t in techniques:
        out[f"median_{t}"] = float(np.median([r["margin"] for r in recs if r["technique"] == t]))
    return out


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fosgsolve", description="Tabular imperfect-information game solving.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, iters=1000):
        p.add_argument("--game", required=True, help="game name, name:key=value,... or matrix:a,b;c,d")
        p.add_argument("--iters", type=int, default=iters)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="")
        return p

    p = common(sub.add_parser("solve", help="offline solve, writes a strategy file"))
    p.add_argument("--solver", default="cfr+")
    p.add_argument("--checkpoints", default="")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="nashconv of a strategy file")
    p.add_argument("--game", required=True)
    p.add_argument("--strategy", nargs="+", required=True)
    p.add_argument("--value-tol", type=float, default=1e-5, help="nashconv target of the game value solve")
    p.set_defaults(func=cmd_evaluate)

    def agent_opts(p):
        p.add_argument("--depth", default="full", help="full, steps(n) or until_public_event")
        p.add_argument("--vf-iters", type=int, default=100, help="inner iterations of the value function")

    def match_opts(p):
        p.add_argument("--matches", type=int, default=100)
        p.add_argument("--duplicate", action="store_true")
        p.add_argument("--human", action="store_true", help="play the other seat from the terminal")

    p = common(sub.add_parser("match", help="matches between two agents"), 1000)
    p.add_argument("--agent1", default="uniform")
    p.add_argument("--agent2", default="uniform")
    agent_opts(p)
    match_opts(p)
    p.set_defaults(func=cmd_match)

    p = common(sub.add_parser("resolve-play", help="continual re-solving agent in matches"))
    p.add_argument("--seat", type=int, choices=(1, 2), default=1)
    p.add_argument("--opponent", default="uniform")
    agent_opts(p)
    match_opts(p)
    p.set_defaults(func=cmd_resolve_play)

    p = common(sub.add_parser("tabularize", help="offline profile of an online agent"))
    p.add_argument("--agent", default="continual")
    p.add_argument("--audit", action="store_true", help="query every public state twice")
    agent_opts(p)
    p.set_defaults(func=cmd_tabularize)

    p = common(sub.add_parser("variance-bench", help="estimator spread on self-play of a solved profile"), 2000)
    p.add_argument("--matches", type=int, default=10000)
    p.set_defaults(func=cmd_variance_bench)

    p = common(sub.add_parser("margins-bench", help="re-solving margins on sub-games of a weak trunk"), 10000)
    p.add_argument("--techniques", default="unsafe,cfrd,maxmargin")
    p.add_argument("--trunk-iters", type=int, default=20)
    p.add_argument("--subgames", type=int, default=0, help="limit on the number of sub-games (0: all)")
    p.set_defaults(func=cmd_margins_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        summary = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary["status"] = "ok"
    emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
