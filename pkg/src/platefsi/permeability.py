"""Plate permeability from fluid unit-cell flow problems.

Solves Taylor-Hood (Q2 velocity, Q1 pressure) Stokes problems on the
fluid part of the voxel unit cell.  The canonical path solves the three
periodic body-force cell problems and divides the gradient Gram matrix
by the fluid volume.  The alternative path reproduces the engineering
procedure: three stationary solves with opposing normal-stress faces
along one axis, periodic lateral boundaries, and a linear fit of the
averaged velocities against the applied pressure drop.  Both paths use
intrinsic (fluid volume) averages, so they agree on resolvable
geometries.

Boundary handling: velocity nodes touched by any solid voxel are fixed
to zero; the pressure is pinned at one node per fluid component that no
normal-stress face vents; all-fluid cells get three mean-velocity
multipliers so the otherwise inconsistent constant mode is gauged away
and the result is a zero tensor flagged as unconstrained.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fe
from .errors import (
    ConstraintViolation,
    DofMismatch,
    NoFluidPhase,
    SingularFit,
    SingularMatrix,
    SingularPermeability,
)
from .mesh import CellMesh

_FULLY_PERIODIC = (True, True, True)


def _axis_dims(resolution, periodic, order):
    return tuple(order * m if per else order * m + 1
                 for m, per in zip(resolution, periodic))


def _grid_ids(vox, resolution, periodic, order):
    """Global node ids of the (order+1)^3 nodes of each voxel.

    Local node n = a + (order+1) * (b + (order+1) * c), first axis
    fastest; periodic axes wrap by the torus dimension.
    """
    dims = _axis_dims(resolution, periodic, order)
    s = order + 1
    n = np.arange(s ** 3)
    offs = np.stack([n % s, (n // s) % s, n // (s * s)], axis=1)
    idx = []
    for ax in range(3):
        g = order * vox[:, ax][:, None] + offs[None, :, ax]
        idx.append(np.mod(g, dims[ax]) if periodic[ax] else g)
    return idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])


def _fluid_components(mask, periodic):
    """Label face-connected fluid components, wrapping periodic axes."""
    fluid = ~mask
    comp = -np.ones(mask.shape, dtype=np.int64)
    dims = mask.shape
    n = 0
    for seed in np.argwhere(fluid):
        if comp[tuple(seed)] >= 0:
            continue
        queue = deque([tuple(seed)])
        comp[tuple(seed)] = n
        while queue:
            i, j, k = queue.popleft()
            for ax, step in ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)):
                nxt = [i, j, k]
                nxt[ax] += step
                if periodic[ax]:
                    nxt[ax] %= dims[ax]
                elif not 0 <= nxt[ax] < dims[ax]:
                    continue
                nxt = tuple(nxt)
                if fluid[nxt] and comp[nxt] < 0:
                    comp[nxt] = n
                    queue.append(nxt)
        n += 1
    return comp, n


class FluidCellOperator:
    """Assembled Stokes saddle operator on the fluid voxels.

    DOFs are the free velocity components followed by the kept pressure
    nodes (and, for all-fluid cells, three mean-velocity multipliers).
    The factorization is cached, so the solves for different forcing
    directions share it.  The assembled operator is immutable.
    """

    def __init__(self, cell: CellMesh, periodic=_FULLY_PERIODIC, viscosity=1.0):
        if not (viscosity > 0.0):
            raise ConstraintViolation("viscosity must be positive")
        self.cell = cell
        self.periodic = tuple(bool(p) for p in periodic)
        self.viscosity = float(viscosity)
        self._factor = None
        self._saddle = None
        self._assemble()

    # -- assembly ---------------------------------------------------------

    def _assemble(self):
        cell = self.cell
        mask = cell.solid_mask
        if mask.all():
            raise NoFluidPhase("cell has no fluid voxel")
        res = cell.resolution
        h = cell.voxel_size
        vox = np.argwhere(~mask)
        self._vox = vox

        vnodes = _grid_ids(vox, res, self.periodic, 2)
        pnodes = _grid_ids(vox, res, self.periodic, 1)
        solid_vox = np.argwhere(mask)
        if len(solid_vox):
            noslip = np.unique(_grid_ids(solid_vox, res, self.periodic, 2))
        else:
            noslip = np.zeros(0, dtype=np.int64)

        self._vel_nodes = np.unique(vnodes)
        self._prs_nodes = np.unique(pnodes)
        elem_v = np.searchsorted(self._vel_nodes, vnodes)
        elem_p = np.searchsorted(self._prs_nodes, pnodes)
        free_node = ~np.isin(self._vel_nodes, noslip)
        self._free_node = free_node

        nav = len(self._vel_nodes)
        nap = len(self._prs_nodes)

        pts, qw = fe.gauss_rule(3, 3)
        w = qw * (h[0] * h[1] * h[2])
        phi = fe.q_basis(2, pts)
        dphi = [fe.q_basis(2, pts, tuple(int(a == ax) for a in range(3))) / h[ax]
                for ax in range(3)]
        psi = fe.q_basis(1, pts)

        lap = sum(np.einsum("iq,jq,q->ij", d, d, w) for d in dphi)
        a_loc = self.viscosity * np.einsum("ij,cd->icjd", lap,
                                           np.eye(3)).reshape(81, 81)
        b_loc = np.stack([np.einsum("aq,iq,q->ai", psi, dphi[c], w)
                          for c in range(3)], axis=2).reshape(8, 81)
        self._phi_int = np.einsum("iq,q->i", phi, w)

        edof = (3 * elem_v[:, :, None] + np.arange(3)).reshape(-1, 81)
        self._elem_vdof = edof
        ne = len(vox)
        a_full = sp.coo_matrix(
            (np.broadcast_to(a_loc, (ne, 81, 81)).ravel(),
             (np.repeat(edof, 81, axis=1).ravel(),
              np.tile(edof, (1, 81)).ravel())),
            shape=(3 * nav, 3 * nav)).tocsr()
        b_full = sp.coo_matrix(
            (np.broadcast_to(b_loc, (ne, 8, 81)).ravel(),
             (np.repeat(elem_p, 81, axis=1).ravel(),
              np.tile(edof, (1, 8)).reshape(ne, 8, 81).ravel())),
            shape=(nap, 3 * nav)).tocsr()

        free_dof = np.repeat(free_node, 3)
        self._free_dof = free_dof
        self.n_velocity = int(free_dof.sum())

        comp, ncomp = _fluid_components(mask, self.periodic)
        vented = np.zeros(ncomp, dtype=bool)
        for ax in range(3):
            if self.periodic[ax]:
                continue
            for layer in (0, res[ax] - 1):
                sl = [slice(None)] * 3
                sl[ax] = layer
                ids = comp[tuple(sl)]
                vented[ids[ids >= 0]] = True
        pin_nodes = []
        for c in range(ncomp):
            if vented[c]:
                continue
            first = vox[comp[tuple(vox.T)] == c][0]
            gid = _grid_ids(first[None, :], res, self.periodic, 1)[0, 0]
            pin_nodes.append(np.searchsorted(self._prs_nodes, gid))
        keep_p = np.ones(nap, dtype=bool)
        keep_p[pin_nodes] = False
        self._keep_p = keep_p
        self.n_pressure = int(keep_p.sum())

        self._a = a_full[free_dof][:, free_dof]
        self._b = b_full[keep_p][:, free_dof]

        # all-fluid cells keep the constant velocity mode; gauge it away
        self.unconstrained = not mask.any()
        if self.unconstrained:
            rows = []
            for c in range(3):
                g = np.zeros(3 * nav)
                g[3 * np.arange(nav) + c] = self._volume_weights()[c::3]
                rows.append(g[free_dof])
            self._gauge = sp.csr_matrix(np.stack(rows))
        else:
            self._gauge = None

    def _volume_weights(self):
        """Integral of each velocity basis function over the fluid."""
        w = np.zeros(3 * len(self._vel_nodes))
        np.add.at(w, self._elem_vdof,
                  np.broadcast_to(np.repeat(self._phi_int, 3),
                                  self._elem_vdof.shape))
        return w

    # -- right-hand sides ---------------------------------------------------

    def body_force(self, axis):
        """Unit volume forcing along one axis (1-based)."""
        if axis not in (1, 2, 3):
            raise ValueError(f"axis must be 1, 2 or 3, got {axis!r}")
        rhs = np.zeros(3 * len(self._vel_nodes))
        rhs[3 * np.arange(len(self._vel_nodes)) + (axis - 1)] = \
            self._volume_weights()[(axis - 1)::3]
        return self._pad(rhs[self._free_dof])

    def face_traction(self, axis, drop):
        """Opposite normal-stress loads on the two faces of one axis.

        The face at coordinate 0 carries pressure `drop`, the opposite
        face zero, so a positive drop drives flow toward positive axis
        direction.  The axis must be non-periodic for the faces to exist.
        """
        ax = axis - 1
        if self.periodic[ax]:
            raise ConstraintViolation(
                f"axis {axis} is periodic; no traction faces available")
        h = self.cell.voxel_size
        t1, t2 = [a for a in range(3) if a != ax]
        pts2, w2 = fe.gauss_rule(3, 2)
        w2 = w2 * h[t1] * h[t2]
        pts3 = np.empty((len(pts2), 3))
        pts3[:, t1] = pts2[:, 0]
        pts3[:, t2] = pts2[:, 1]
        pts3[:, ax] = 0.0
        face_phi = np.einsum("iq,q->i", fe.q_basis(2, pts3), w2)
        rhs = np.zeros(3 * len(self._vel_nodes))
        sel = self._vox[:, ax] == 0
        if sel.any():
            dofs = self._elem_vdof[sel].reshape(-1, 27, 3)[:, :, ax]
            np.add.at(rhs, dofs.ravel(),
                      np.broadcast_to(float(drop) * face_phi, dofs.shape).ravel())
        return self._pad(rhs[self._free_dof])

    def _pad(self, vel_rhs):
        extra = 3 if self.unconstrained else 0
        return np.concatenate([vel_rhs, np.zeros(self.n_pressure + extra)])

    # -- solve --------------------------------------------------------------

    def saddle_matrix(self):
        if self._saddle is None:
            blocks = [[self._a, self._b.T], [self._b, None]]
            if self.unconstrained:
                blocks[0].append(self._gauge.T)
                blocks[1].append(None)
                blocks.append([self._gauge, None, None])
            self._saddle = sp.bmat(blocks, format="csc")
        return self._saddle

    def factor(self):
        if self._factor is None:
            try:
                self._factor = spla.splu(self.saddle_matrix())
            except RuntimeError as exc:
                raise SingularMatrix(f"fluid cell operator is singular: {exc}") from exc
        return self._factor

    def solve(self, rhs):
        z = self.factor().solve(rhs)
        if not np.isfinite(z).all():
            raise SingularMatrix("fluid cell solve produced non-finite values")
        res = np.linalg.norm(self.saddle_matrix() @ z - rhs)
        scale = np.linalg.norm(rhs)
        return z, float(res / scale) if scale > 0.0 else float(res)

    def mean_velocity(self, vel):
        """Intrinsic (fluid volume) average of a velocity solution."""
        full = np.zeros(3 * len(self._vel_nodes))
        full[self._free_dof] = vel
        w = self._volume_weights()
        out = np.array([full[c::3] @ w[c::3] for c in range(3)])
        return out / self.cell.fluid_volume

    def gradient_products(self, vels):
        """Gram matrix of viscosity-free velocity gradients."""
        cols = np.stack(vels, axis=1)
        return (cols.T @ (self._a @ cols)) / self.viscosity


@dataclass(frozen=True)
class DarcySolution:
    """One solved fluid cell loading."""

    axis: int
    velocity: np.ndarray
    pressure: np.ndarray
    mean_velocity: np.ndarray
    residual: float
    operator: FluidCellOperator = field(repr=False, compare=False)


@dataclass(frozen=True)
class PermeabilityTensor:
    """Symmetric second-order permeability with degeneracy flags.

    `matrix` holds the tensor in unit-cell coordinates; `scaled(period)`
    converts it to a physical cell of that edge length (quadratic
    scaling).  `axis_open` marks the axes along which the fluid phase
    percolates; on blocked axes near-zero eigenvalues are expected and
    the positivity check is skipped.  `unconstrained` marks all-fluid
    cells, where the Darcy description degenerates and the gauged cell
    problems return a zero tensor.
    """

    matrix: np.ndarray
    provenance: str = "user_input"
    axis_open: tuple = (True, True, True)
    unconstrained: bool = False

    def __post_init__(self):
        k = np.asarray(self.matrix, dtype=float)
        if k.shape != (3, 3):
            raise SingularPermeability(f"permeability must be 3x3, got {k.shape}")
        if not np.isfinite(k).all():
            raise SingularPermeability("permeability has non-finite entries")
        scale = max(np.abs(k).max(), 1e-300)
        if np.abs(k - k.T).max() > 1e-12 * scale:
            raise SingularPermeability("permeability is not symmetric")
        k = 0.5 * (k + k.T)
        object.__setattr__(self, "matrix", k)
        if self.provenance not in ("cell_problems", "darcy_fit", "user_input"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        evals = np.linalg.eigvalsh(k)
        if evals.min() < -1e-12 * scale and not self.unconstrained:
            raise SingularPermeability(
                f"permeability has a negative eigenvalue {evals.min():.3e}")
        if all(self.axis_open) and not self.unconstrained and evals.min() <= 0.0:
            raise SingularPermeability(
                "permeability is singular although every axis percolates")

    def khat(self, mu, delta):
        """Interface slip matrix: permeability over viscosity and thickness."""
        if not (mu > 0.0 and delta > 0.0):
            raise ConstraintViolation("viscosity and thickness must be positive")
        return self.matrix / (mu * delta)

    def scaled(self, period):
        """Tensor for a physical cell of edge length `period`."""
        if not (period > 0.0):
            raise ConstraintViolation("period must be positive")
        return PermeabilityTensor(matrix=self.matrix * period ** 2,
                                  provenance=self.provenance,
                                  axis_open=self.axis_open,
                                  unconstrained=self.unconstrained)


def assemble_fluid_cell(cell: CellMesh, periodic=_FULLY_PERIODIC,
                        viscosity=1.0) -> FluidCellOperator:
    """Assemble the Stokes saddle operator on the fluid voxels."""
    return FluidCellOperator(cell, periodic=periodic, viscosity=viscosity)


def solve_darcy_cell(cell: CellMesh, axis, operator=None) -> DarcySolution:
    """Solve the periodic body-force cell problem along one axis.

    Velocity vanishes on every node touching a solid voxel; the load is
    the unit force along `axis` (1-based).  Pass the same `operator` for
    several axes to share the factorization.
    """
    if operator is None:
        operator = FluidCellOperator(cell)
    elif operator.cell is not cell and (
            tuple(operator.cell.resolution) != tuple(cell.resolution)
            or not np.array_equal(operator.cell.solid_mask, cell.solid_mask)):
        raise DofMismatch("operator does not match the cell")
    if operator.periodic != _FULLY_PERIODIC:
        raise ConstraintViolation("cell problems need full periodicity")
    rhs = operator.body_force(axis)
    z, residual = operator.solve(rhs)
    nv = operator.n_velocity
    vel = z[:nv]
    pressure = -z[nv:nv + operator.n_pressure]
    return DarcySolution(axis=int(axis), velocity=vel, pressure=pressure,
                         mean_velocity=operator.mean_velocity(vel),
                         residual=residual, operator=operator)


def solve_all_darcy_cells(cell: CellMesh, operator=None):
    """The three cell solutions, sharing one factorization."""
    if operator is None:
        operator = FluidCellOperator(cell)
    return [solve_darcy_cell(cell, axis, operator) for axis in (1, 2, 3)]


def permeability_from_cells(sol1, sol2, sol3, fluid_volume=None,
                            method="gram") -> PermeabilityTensor:
    """Permeability from the three cell solutions.

    `method` "gram" divides the Gram matrix of velocity gradients by the
    fluid volume; "mean" uses the equivalent identity through the
    averaged velocity components.  Both agree to solver accuracy.  The
    tensor is geometric: the operator viscosity rescales the solved
    fields and is compensated here, so any positive viscosity yields the
    same permeability.
    """
    sols = (sol1, sol2, sol3)
    if [s.axis for s in sols] != [1, 2, 3]:
        raise ValueError("expected the three solutions in axis order 1, 2, 3")
    op = sol1.operator
    for s in sols[1:]:
        if s.operator is not op:
            raise DofMismatch("cell solutions come from different operators")
    vol = op.cell.fluid_volume if fluid_volume is None else float(fluid_volume)
    if vol <= 0.0:
        raise NoFluidPhase("fluid volume must be positive")
    if method == "gram":
        k = op.viscosity ** 2 * op.gradient_products(
            [s.velocity for s in sols]) / vol
    elif method == "mean":
        k = np.stack([s.mean_velocity for s in sols])
        k = 0.5 * (k + k.T) * op.viscosity * op.cell.fluid_volume / vol
    else:
        raise ValueError(f"unknown method {method!r}")
    return PermeabilityTensor(matrix=0.5 * (k + k.T),
                              provenance="cell_problems",
                              axis_open=tuple(op.cell.fluid_spans),
                              unconstrained=op.unconstrained)


def permeability_darcy_fit(cell: CellMesh, viscosity,
                           pressure_drops=(1.0, 1.0, 1.0),
                           lengths=(1.0, 1.0, 1.0)) -> PermeabilityTensor:
    """Permeability from three pressure-drop flow solves.

    For each axis the cell is opened along that axis, opposing normal
    stresses realize the pressure drop, the lateral boundaries stay
    periodic, and the column of the tensor is the intrinsic average
    velocity rescaled by length times viscosity over drop.  The result
    is independent of the drops and of the viscosity up to solver
    roundoff.  Raises SingularFit when the three averaged velocities are
    numerically dependent even though every axis percolates.
    """
    drops = np.asarray(pressure_drops, dtype=float)
    lens = np.asarray(lengths, dtype=float)
    if drops.shape != (3,) or lens.shape != (3,):
        raise ValueError("need one pressure drop and one length per axis")
    if not (drops != 0.0).all() or not (lens > 0.0).all():
        raise ConstraintViolation("pressure drops must be nonzero and lengths positive")
    cols = []
    unconstrained = True
    for axis in (1, 2, 3):
        periodic = tuple(ax != axis - 1 for ax in range(3))
        op = FluidCellOperator(cell, periodic=periodic, viscosity=viscosity)
        unconstrained = unconstrained and op.unconstrained
        rhs = op.face_traction(axis, drops[axis - 1])
        z, _ = op.solve(rhs)
        vhat = op.mean_velocity(z[:op.n_velocity])
        cols.append(vhat * lens[axis - 1] * viscosity / drops[axis - 1])
    vmat = np.stack(cols, axis=1)
    k = 0.5 * (vmat + vmat.T)
    axis_open = tuple(cell.fluid_spans)
    svals = np.linalg.svd(vmat, compute_uv=False)
    degenerate = unconstrained or not all(axis_open)
    if not degenerate and svals[-1] <= 1e-12 * max(svals[0], 1e-300):
        raise SingularFit("averaged velocities are linearly dependent")
    return PermeabilityTensor(matrix=k, provenance="darcy_fit",
                              axis_open=axis_open, unconstrained=unconstrained)


def duct_reference_permeability(side, terms=64):
    """Series mean velocity of a unit-forced square duct of given side.

    This is the through-flow permeability entry of a straight square
    channel under the intrinsic normalization: the mean over the cross
    section of the Poiseuille profile solving -lap(u) = 1 with no-slip
    walls.
    """
    if not (0.0 < side):
        raise ConstraintViolation("duct side must be positive")
    n = np.arange(1, 2 * terms, 2, dtype=float)
    series = np.sum(np.tanh(n * np.pi / 2.0) / n ** 5)
    return side ** 2 / 4.0 * (1.0 / 3.0 - 64.0 / np.pi ** 5 * series)
