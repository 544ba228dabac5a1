"""Finite-difference verification of every primitive and block.

Run from the repo root:  python3 demos/04_gradient_checks.py
(Equivalent to the CLI: simba gradcheck)
"""

from simba.gradcheck import run_suites

print("central differences vs reverse-mode gradients, float64")
print(f"{'suite':>15s} {'check':<28s} {'rel err':>10s}  {'tol':>7s}")
worst = ("", "", 0.0)
for suite, check, err, tol in run_suites():
    flag = "ok" if err <= tol else "FAIL"
    print(f"{suite:>15s} {check:<28s} {err:>10.2e}  {tol:>7.0e}  {flag}")
    if err > worst[2]:
        worst = (suite, check, err)
print(f"\nworst case: {worst[0]}/{worst[1]} at {worst[2]:.2e}")
