"""Solve Kuhn poker offline with vanilla CFR and CFR+ and compare them.

Run: python3 demos/solve_kuhn.py
"""
from fosgsolve.bestresponse import nashconv
from fosgsolve.cfr import CfrConfig, run_cfr
from fosgsolve.fosg import enumerate_game
from fosgsolve.games import make_game
from fosgsolve.policy import expected_return

index = enumerate_game(make_game("kuhn"))
print("kuhn:", index.counts())

checkpoints = [10, 100, 1000, 10_000]
for name, config in [("cfr", CfrConfig.vanilla()), ("cfr+", CfrConfig.plus())]:
    res = run_cfr(None, index, config, 10_000, checkpoints=checkpoints)
    curve = "  ".join(f"T={d['iter']}: {d['nashconv']:.2e}" for d in res.diagnostics)
    print(f"{name:5s} nashconv  {curve}")

# the CFR+ average is close to an equilibrium; its value is about -1/18 for the first player
profile = run_cfr(None, index, CfrConfig.plus(), 10_000, checkpoints=[]).profile
print(f"value to player 1: {expected_return(index, profile)[0]:.5f} (-1/18 = {-1 / 18:.5f})")
print(f"nashconv: {nashconv(index, profile).nashconv:.2e}")

print("\nplayer 1 policy (pass, bet):")
for s in index.decision_infostates(0):
    row = profile[0][s]
    print(f"  {index.info_labels[0][s]:12s} {row[0]:.3f} {row[1]:.3f}")
