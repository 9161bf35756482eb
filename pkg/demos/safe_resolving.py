"""Why sub-game re-solving needs a gadget.

Player 2 re-solves its turn in rock-paper-scissors after player 1 has
committed to the uniform policy.  Every player-2 policy is optimal inside
that sub-game, so an unsafe re-solve may pick a pure action and become
fully exploitable.  The CFR-D gadget keeps player 1's counterfactual
values at their trunk bounds and recovers the uniform policy.

Run: python3 demos/safe_resolving.py
"""
from fosgsolve.bestresponse import best_response
from fosgsolve.cfr import CfrConfig, run_cfr
from fosgsolve.fosg import enumerate_game
from fosgsolve.games import make_game
from fosgsolve.policy import PolicyProfile
from fosgsolve.subgame import margins_bench, resolve, subgames_after_chance, unsafe_resolve

rps = enumerate_game(make_game("rps", {"orientation": "standard"}))
trunk = PolicyProfile.uniform(rps)
u = int(rps.public[rps.find_history(["R"])])

print("exploitability of player 2 after re-solving:")
print(f"  trunk (uniform)  {best_response(rps, trunk[1]).value:.3f}")
res = unsafe_resolve(rps, u, trunk, 1, iters=1000, tie_break="adversarial")
print(f"  unsafe           {best_response(rps, res.policy).value:.3f}  policy {res.policy['[||]'].round(3)}")
res = resolve("cfrd", rps, u, trunk, 1, iters=10_000)
print(f"  cfr-d gadget     {best_response(rps, res.policy).value:.3f}  policy {res.policy['[||]'].round(3)}")

# on Leduc, margins measure how much a re-solve improves on a weak trunk
leduc = enumerate_game(make_game("leduc"))
weak = run_cfr(None, leduc, CfrConfig.vanilla(), 20, checkpoints=[]).profile
pairs = subgames_after_chance(leduc)[:6]
print(f"\nmargins on {len(pairs)} Leduc second-round sub-games (trunk: 20 CFR iterations)")
for rec in margins_bench(leduc, weak, pairs, iters=2000):
    print(f"  sub-game {rec['subgame_id']}  {rec['technique']:9s} margin {rec['margin']:+.4f}")
