"""Playing by re-solving at every decision.

A continual re-solving agent keeps only its range and the opponent's
counterfactual values between decisions.  Tabularizing it (asking it for
its policy everywhere) lets us measure its exploitability exactly.
Stitching independently solved pieces instead can fail badly, as the
coordinated matching pennies example shows.

Run: python3 demos/continual_resolving.py
"""
from fosgsolve.bestresponse import nashconv
from fosgsolve.evalkit import matching_pennies_demo
from fosgsolve.fosg import enumerate_game
from fosgsolve.games import make_game
from fosgsolve.resolve import ValueFunctionHandle, continual_resolving_profile

kuhn = enumerate_game(make_game("kuhn"))

print("kuhn, full lookahead, exploitability by per-resolve iterations:")
for T in (10, 100, 1000):
    prof = continual_resolving_profile(kuhn, T)
    print(f"  T={T:5d}  nashconv {nashconv(kuhn, prof).nashconv:.2e}")

print("\nkuhn, one-step lookahead with a CFR value function at the cut (T=100):")
for inner in (10, 40):
    prof = continual_resolving_profile(kuhn, 100, ValueFunctionHandle.exact_cfr(inner), depth="steps(1)")
    print(f"  inner={inner:3d}  nashconv {nashconv(kuhn, prof).nashconv:.2e}")

cmp_index = enumerate_game(make_game("matching_pennies_coordinated"))
rep = matching_pennies_demo(cmp_index)
print("\ncoordinated matching pennies:")
print(f"  each separate solve: nashconv {[round(x, 4) for x in rep.solve_nashconv]}")
print(f"  stitched per infostate: nashconv {rep.stitched_nashconv:.3f}")
