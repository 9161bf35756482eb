"""Sampled CFR with baselines, then low-variance evaluation of matches.

Outcome sampling updates one trajectory per iteration.  Baselines act as
control variates: the estimates stay unbiased and their spread shrinks.
The same idea evaluates agents from played matches.

Run: python3 demos/sampling_and_evaluation.py
"""
import numpy as np

from fosgsolve.cfr import CfrConfig, run_cfr
from fosgsolve.evalkit import METHODS, estimate, exact_baseline, simulate_matches
from fosgsolve.fosg import enumerate_game
from fosgsolve.games import make_game
from fosgsolve.mccfr import SampleScheme, run_mccfr
from fosgsolve.resolve import PolicyAgent

kuhn = enumerate_game(make_game("kuhn"))

print("median nashconv over 3 seeds after 5000 sampled iterations:")
for variant in ("os", "vr", "vr_oracle"):
    runs = [run_mccfr(None, kuhn, variant, SampleScheme(seed=s), T=5000, checkpoints=[]) for s in range(3)]
    print(f"  {variant:9s} {np.median([r.diagnostics[-1]['nashconv'] for r in runs]):.4f}")

profile = run_cfr(None, kuhn, CfrConfig.plus(), 1000, checkpoints=[]).profile
agents = [PolicyAgent(kuhn, p, profile[p]) for p in (0, 1)]
records = simulate_matches(kuhn, agents, 20_000, seed=1)
baseline = exact_baseline(kuhn, profile)
print("\nself-play of a solved profile, 20000 matches (true value about -0.056):")
for method in METHODS:
    rep = estimate(kuhn, records, method, baseline)
    print(f"  {method:16s} mean {rep.mean:+.4f}  sd {rep.sd:.3f}  se {rep.se:.4f}")
