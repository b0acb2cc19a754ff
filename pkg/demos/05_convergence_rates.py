"""
Convergence rates against manufactured solutions
================================================

Each discretization is run on a nested sequence of meshes against a
closed-form solution; the printed slopes are least-squares fits of
log(error) against log(h).  Expected orders: velocity 2 in H1 and 3 in
L2, deflection 2 in H2 and 4 in L2, in-plane displacement 1 in H1 (the
in-plane space is bilinear).
"""

from platefsi import solver

CASES = (
    ("stokes", (2, 4, 8)),
    ("plate", (4, 8, 16)),
    ("membrane", (4, 8, 16, 32)),
)

for case, levels in CASES:
    result = solver.convergence_study(case, levels)
    print(f"{case}: elements per axis {levels}")
    for name in sorted(result.errors):
        errs = ", ".join(f"{e:.2e}" for e in result.errors[name])
        print(f"  {name:6s} errors [{errs}]  slope {result.rates[name]:.2f}")
