"""
Permeability of an open unit cell
=================================

The sieve's through-flow behavior enters the coupled solver as a slip
matrix derived from the permeability tensor of one periodic cell of the
micro-geometry.  Two independent routes compute that tensor: periodic
Stokes cell problems, and a direct fit of Darcy's law from three
pressure-drop flow simulations.  They agree; drops and viscosity cancel
out of the fit by construction.
"""

import numpy as np

from platefsi import mesh, permeability as pm

# A straight square duct: solid block with a 4 x 4 voxel hole running
# through the full cell thickness.  Only the vertical axis percolates.
mask = np.ones((8, 8, 8), dtype=bool)
mask[2:6, 2:6, :] = False
duct = mesh.build_cell_mesh((8, 8, 8), mask)
print(f"duct cell percolates along   : {duct.fluid_spans}")

sols = pm.solve_all_darcy_cells(duct)
k_cells = pm.permeability_from_cells(*sols)
np.set_printoptions(precision=6, suppress=True)
print("permeability from cell problems:")
print(k_cells.matrix)

# The closed series solution for a square duct gives the exact k33.
ref = pm.duct_reference_permeability(side=0.5)
rel = abs(k_cells.matrix[2, 2] - ref) / ref
print(f"series-solution k33          : {ref:.6e}")
print(f"cell-problem k33 off by      : {rel:.2%}")

# Darcy fit: open one axis at a time, impose a pressure drop, read the
# averaged velocity.  Scaling the drop or the viscosity must not change
# the fitted tensor.
fit = pm.permeability_darcy_fit(duct, viscosity=1.0)
fit_scaled = pm.permeability_darcy_fit(duct, viscosity=3.0,
                                       pressure_drops=(10.0, 10.0, 10.0))
drift = np.abs(fit_scaled.matrix - fit.matrix).max() \
    / np.abs(fit.matrix).max()
print(f"fit vs cell k33              : "
      f"{abs(fit.matrix[2, 2] - k_cells.matrix[2, 2]) / k_cells.matrix[2, 2]:.2e}")
print(f"fit drift under rescaling    : {drift:.1e}")

# A fully open geometry (one cube obstacle) percolates along all axes
# and yields an SPD tensor; its slip matrix feeds the coupled solver.
mask = np.zeros((6, 6, 6), dtype=bool)
mask[2:4, 2:4, 2:4] = True
open_cell = mesh.build_cell_mesh((6, 6, 6), mask)
k_open = pm.permeability_from_cells(*pm.solve_all_darcy_cells(open_cell))
print(f"obstacle cell eigenvalues    : {np.linalg.eigvalsh(k_open.matrix)}")
print("slip matrix K/(mu*delta) for mu=1, delta=0.1:")
print(k_open.khat(mu=1.0, delta=0.1))
