"""Effective plate stiffness from elasticity solves on a periodic voxel cell.

The solid phase of the unit cell (0,1)^2 x (-1/2,1/2) is discretized with
trilinear vector elements on voxels.  Fields are broken across yarn
boundaries: degrees of freedom live on (grid node, yarn label) pairs, and
a Robin-type penalty couples the two traces on every yarn-to-yarn contact
facet.  Six canonical loadings (three in-plane stretches, three bending
curvatures) are imposed through smooth carrier fields; the remainder is
periodic in-plane, which becomes a master-slave constraint with affine
offsets, and one interior node is pinned for uniqueness.  Averaging the
resulting strain energies yields the membrane, coupling and bending
tensors of the effective plate.

Contacts are only generated between face-adjacent voxels inside the cell;
a yarn touching a different yarn across the periodic wrap is tied
continuously if the labels match and left uncoupled otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fe
from .assembly import StiffnessTriple, coercivity_constant, voigt_from_tensor4
from .errors import (
    ConstraintViolation,
    DisconnectedSolid,
    DofMismatch,
    EmptyPhase,
    SingularMatrix,
)
from .mesh import CellMesh, _solid_connected

# Loading index pairs in reduced (Voigt) order, one-based.
_LOAD_PAIRS = ((1, 1), (2, 2), (1, 2))


def isotropic_stiffness(lam, mu):
    """Fourth-order isotropic stiffness tensor from Lame parameters."""
    eye = np.eye(3)
    return (lam * np.einsum("ij,kl->ijkl", eye, eye)
            + mu * (np.einsum("ik,jl->ijkl", eye, eye)
                    + np.einsum("il,jk->ijkl", eye, eye)))


def _check_full_tensor(a):
    scale = max(np.abs(a).max(), 1e-300)
    for axes in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
        if np.abs(a - a.transpose(axes)).max() > 1e-12 * scale:
            raise ConstraintViolation("stiffness tensor lacks the required symmetries")
    # Eigenvalues of the action on symmetric matrices, via the weighted
    # 6x6 representation (sqrt(2) on the off-diagonal pairs).
    pairs = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
    w = np.array([1.0, 1.0, 1.0, np.sqrt(2.0), np.sqrt(2.0), np.sqrt(2.0)])
    mat = np.empty((6, 6))
    for p, ij in enumerate(pairs):
        for q, kl in enumerate(pairs):
            mat[p, q] = a[ij + kl] * w[p] * w[q]
    if np.linalg.eigvalsh(mat).min() <= 0.0:
        raise ConstraintViolation("stiffness tensor is not coercive on symmetric matrices")


@dataclass(frozen=True)
class CellMaterial:
    """Voxel elasticity and yarn-contact parameters.

    Elastic behavior is given either by Lame parameters `lam`/`mu`
    (scalars, or arrays over the voxel grid for graded cells) or by one
    full fourth-order `stiffness` tensor with minor and major symmetries.
    `contact_normal` and `contact_tangent` are the normal and tangential
    penalty moduli of the linearized contact law on yarn-to-yarn facets;
    the facet matrix is symmetric positive definite iff both are positive.
    """

    lam: object = None
    mu: object = None
    stiffness: np.ndarray = None
    contact_normal: float = 1.0
    contact_tangent: float = 1.0

    def __post_init__(self):
        if self.stiffness is not None:
            if self.lam is not None or self.mu is not None:
                raise ConstraintViolation("give either lam/mu or a full stiffness tensor")
            a = np.asarray(self.stiffness, dtype=float)
            if a.shape != (3, 3, 3, 3):
                raise ConstraintViolation("full stiffness tensor must have shape (3,3,3,3)")
            _check_full_tensor(a)
            object.__setattr__(self, "stiffness", a)
        else:
            if self.lam is None or self.mu is None:
                raise ConstraintViolation("Lame parameters lam and mu are required")
            lam = np.asarray(self.lam, dtype=float)
            mu = np.asarray(self.mu, dtype=float)
            if not (mu > 0.0).all() or not (lam + 2.0 * mu / 3.0 > 0.0).all():
                raise ConstraintViolation("Lame parameters are not coercive: need mu > 0 "
                                          "and lam + 2 mu / 3 > 0")
        if not (self.contact_normal > 0.0 and self.contact_tangent > 0.0):
            raise ConstraintViolation("contact penalties must be positive")

    @classmethod
    def isotropic(cls, young, poisson, contact_normal=1.0, contact_tangent=1.0):
        """Build from engineering constants E and nu."""
        if not (young > 0.0 and -1.0 < poisson < 0.5):
            raise ConstraintViolation("need E > 0 and -1 < nu < 1/2")
        lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        mu = young / (2.0 * (1.0 + poisson))
        return cls(lam=lam, mu=mu, contact_normal=contact_normal,
                   contact_tangent=contact_tangent)

    def contact_matrix(self, axis):
        """3x3 facet penalty matrix for a facet with normal along `axis`."""
        eta = np.zeros(3)
        eta[axis] = 1.0
        nn = np.outer(eta, eta)
        return self.contact_normal * nn + self.contact_tangent * (np.eye(3) - nn)


def perturbation_field(kind, i, j, y):
    """Carrier displacement of the canonical cell loading (kind, i, j).

    Kind "M" fields have the constant symmetric gradient that stretches
    the (i, j) in-plane directions; kind "B" fields have the symmetric
    gradient -y3 times that matrix, which bends the cell about the
    midplane.  Indices are one-based and symmetric in (i, j).  `y` is a
    point (3,) or an array (n, 3); the result matches the input shape.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    y1, y2, y3 = pts[:, 0], pts[:, 1], pts[:, 2]
    zero = np.zeros_like(y1)
    key = (str(kind).upper(), min(i, j), max(i, j))
    if key == ("M", 1, 1):
        out = np.stack([y1, zero, zero], axis=-1)
    elif key == ("M", 1, 2):
        out = 0.5 * np.stack([y2, y1, zero], axis=-1)
    elif key == ("M", 2, 2):
        out = np.stack([zero, y2, zero], axis=-1)
    elif key == ("B", 1, 1):
        out = 0.5 * np.stack([-2.0 * y1 * y3, zero, y1 * y1], axis=-1)
    elif key == ("B", 1, 2):
        out = 0.5 * np.stack([-y2 * y3, -y1 * y3, y1 * y2], axis=-1)
    elif key == ("B", 2, 2):
        out = 0.5 * np.stack([zero, -2.0 * y2 * y3, y2 * y2], axis=-1)
    else:
        raise ValueError(f"unknown cell loading {kind!r}, ({i}, {j})")
    return out[0] if single else out


@dataclass(frozen=True)
class CellSolution:
    """One solved cell loading: the full broken-space DOF vector."""

    kind: str
    index: tuple
    dofs: np.ndarray
    pinned_dofs: np.ndarray
    residual: float


@dataclass(frozen=True)
class _Reduction:
    basis: sp.csr_matrix        # maps reduced DOFs to the broken space
    slave_nodes: np.ndarray     # broken-node ids tied to a master
    master_nodes: np.ndarray    # their masters, same length
    pin_node: int               # broken-node id fixed for uniqueness, -1 if none


class CellStiffness:
    """Assembled broken-space elasticity operator of a voxel cell.

    `matrix` is the symmetric positive semidefinite stiffness (volume
    elasticity plus contact penalties) on DOFs indexed 3*node + comp,
    where `node` runs over (grid node, yarn label) pairs.  The periodic
    reduction and its factorization are built lazily and cached, so the
    six cell solves share a single factorization.  The factored operator
    is immutable; concurrent solves may read it freely.
    """

    def __init__(self, cell: CellMesh, material: CellMaterial):
        self.cell = cell
        self.material = material
        self._reduction = None
        self._factor = None
        self._assemble()

    # -- assembly ---------------------------------------------------------

    def _assemble(self):
        cell, mat = self.cell, self.material
        m1, m2, m3 = cell.resolution
        h1, h2, h3 = cell.voxel_size
        labels = cell.yarn_labels

        vox = np.argwhere(cell.solid_mask)
        vlab = labels[tuple(vox.T)]
        # corner n = a + 2b + 4c, first grid axis fastest
        offs = np.array([(n & 1, (n >> 1) & 1, (n >> 2) & 1) for n in range(8)])
        gx = vox[:, 0][:, None] + offs[None, :, 0]
        gy = vox[:, 1][:, None] + offs[None, :, 1]
        gz = vox[:, 2][:, None] + offs[None, :, 2]
        gids = gx + (m1 + 1) * (gy + (m2 + 1) * gz)

        lbase = int(labels.max()) + 1
        keys = gids.astype(np.int64) * lbase + vlab[:, None]
        ukeys, inv = np.unique(keys, return_inverse=True)
        self.elem_nodes = inv.reshape(gids.shape)
        self._keys = ukeys
        self.node_gid = ukeys // lbase
        self.node_label = ukeys % lbase
        self.node_xyz = self._grid_coords(self.node_gid)
        self.ndof = 3 * len(ukeys)

        pts, qw = fe.gauss_rule(2, 3)
        grads = np.stack(
            [fe.q_basis(1, pts, tuple(int(a == ax) for a in range(3))) / (h1, h2, h3)[ax]
             for ax in range(3)], axis=1)          # (8, 3, nq)
        self._grads = grads
        self._qw = qw * (h1 * h2 * h3)

        if mat.stiffness is not None:
            kloc = np.einsum("cadb,iaq,jbq,q->icjd", mat.stiffness, grads, grads, self._qw)
            kloc = 0.5 * (kloc + kloc.transpose(2, 3, 0, 1))
            data = np.broadcast_to(kloc.reshape(24, 24), (len(vox), 24, 24))
            self._elem_lam = self._elem_mu = None
        else:
            lam = np.asarray(mat.lam, dtype=float)
            mu = np.asarray(mat.mu, dtype=float)
            lam_e = lam[tuple(vox.T)] if lam.ndim else np.full(len(vox), float(lam))
            mu_e = mu[tuple(vox.T)] if mu.ndim else np.full(len(vox), float(mu))
            gram = np.einsum("iaq,jaq,q->ij", grads, grads, self._qw)
            kmu = (np.einsum("ij,cd->icjd", gram, np.eye(3))
                   + np.einsum("idq,jcq,q->icjd", grads, grads, self._qw))
            klam = np.einsum("icq,jdq,q->icjd", grads, grads, self._qw)
            data = (lam_e[:, None, None] * klam.reshape(24, 24)
                    + mu_e[:, None, None] * kmu.reshape(24, 24))
            self._elem_lam, self._elem_mu = lam_e, mu_e

        edofs = (3 * self.elem_nodes[:, :, None] + np.arange(3)).reshape(-1, 24)
        self.elem_dofs = edofs
        rows = [np.repeat(edofs, 24, axis=1).ravel()]
        cols = [np.tile(edofs, (1, 24)).ravel()]
        vals = [np.ascontiguousarray(data).ravel()]

        self._build_contacts(lbase)
        for axis, side_a, side_b, local in self._contact_groups:
            fd = np.concatenate(
                [(3 * side_a[:, :, None] + np.arange(3)).reshape(-1, 12),
                 (3 * side_b[:, :, None] + np.arange(3)).reshape(-1, 12)], axis=1)
            rows.append(np.repeat(fd, 24, axis=1).ravel())
            cols.append(np.tile(fd, (1, 24)).ravel())
            vals.append(np.tile(local.ravel(), len(fd)))

        self.matrix = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ndof, self.ndof)).tocsr()

    def _build_contacts(self, lbase):
        cell, mat = self.cell, self.material
        m1, m2, m3 = cell.resolution
        h = cell.voxel_size
        labels = cell.yarn_labels
        pts2, w2 = fe.gauss_rule(2, 2)
        psi2 = fe.q_basis(1, pts2)
        base_mass = np.einsum("fq,gq,q->fg", psi2, psi2, w2)
        self._facet_psi, self._facet_w = psi2, w2

        groups = []
        cf = cell.contact_facets
        for axis in range(3):
            sel = cf[:, 2] == axis if len(cf) else np.zeros(0, dtype=bool)
            if not sel.any():
                continue
            fa = cf[sel, 0]
            ia, ja, ka = fa // (m2 * m3), (fa // m3) % m2, fa % m3
            t1, t2 = [a for a in range(3) if a != axis]
            area = h[t1] * h[t2]
            # facet grid nodes, local n = p + 2r with p along t1
            corner = np.stack([ia, ja, ka], axis=1)
            corner[:, axis] += 1
            shifts = np.zeros((4, 3), dtype=np.int64)
            shifts[:, t1] = [0, 1, 0, 1]
            shifts[:, t2] = [0, 0, 1, 1]
            gnodes = corner[:, None, :] + shifts[None, :, :]
            gid = gnodes[:, :, 0] + (m1 + 1) * (gnodes[:, :, 1] + (m2 + 1) * gnodes[:, :, 2])
            lab_a = labels[ia, ja, ka]
            vox_b = np.stack([ia, ja, ka], axis=1)
            vox_b[:, axis] += 1
            lab_b = labels[vox_b[:, 0], vox_b[:, 1], vox_b[:, 2]]
            side_a = self._lookup(gid, lab_a[:, None], lbase)
            side_b = self._lookup(gid, lab_b[:, None], lbase)
            loc = np.einsum("fg,cd->fcgd", base_mass * area,
                            mat.contact_matrix(axis)).reshape(12, 12)
            local = np.block([[loc, -loc], [-loc, loc]])
            groups.append((axis, side_a, side_b, local))
        self._contact_groups = groups

    def _lookup(self, gid, label, lbase):
        keys = gid.astype(np.int64) * lbase + label
        pos = np.searchsorted(self._keys, keys)
        if (pos >= len(self._keys)).any() or not np.array_equal(self._keys[pos], keys):
            raise DofMismatch("contact facet refers to a missing broken DOF")
        return pos

    def _grid_coords(self, gids):
        m1, m2, _ = self.cell.resolution
        h1, h2, h3 = self.cell.voxel_size
        i = gids % (m1 + 1)
        rem = gids // (m1 + 1)
        j = rem % (m2 + 1)
        k = rem // (m2 + 1)
        return np.stack([i * h1, j * h2, -0.5 + k * h3], axis=-1)

    # -- constraints ------------------------------------------------------

    def reduction(self):
        if self._reduction is None:
            self._reduction = _build_reduction(self, include_pin=True)
        return self._reduction

    def factor(self):
        """Shared factorization of the reduced operator."""
        if self._factor is None:
            red = self.reduction()
            reduced = (red.basis.T @ self.matrix @ red.basis).tocsc()
            try:
                self._factor = spla.splu(reduced)
            except RuntimeError as exc:
                raise SingularMatrix(f"reduced cell operator is singular: {exc}") from exc
        return self._factor


def _build_reduction(stiff, include_pin=True):
    """Periodic master-slave reduction of the broken DOF space.

    Slave nodes on the in-plane wrap faces are tied to their master when
    the same yarn label exists there; otherwise the node is the unique
    representative of its torus position and stays free.  With the pin,
    the reduced operator loses the three translation kernel vectors.
    """
    cell = stiff.cell
    m1, m2, m3 = cell.resolution
    n_grid = (m1 + 1) * (m2 + 1) * (m3 + 1)
    node_master = np.arange(n_grid)
    if len(cell.periodic_pairs):
        node_master[cell.periodic_pairs[:, 0]] = cell.periodic_pairs[:, 1]

    lbase = int(cell.yarn_labels.max()) + 1
    root_gid = node_master[stiff.node_gid]
    moved = np.flatnonzero(root_gid != stiff.node_gid)
    target = root_gid[moved] * lbase + stiff.node_label[moved]
    pos = np.searchsorted(stiff._keys, target)
    pos_ok = (pos < len(stiff._keys))
    pos_clip = np.minimum(pos, len(stiff._keys) - 1)
    found = pos_ok & (stiff._keys[pos_clip] == target)
    slave_nodes = moved[found]
    master_nodes = pos_clip[found]

    pin_node = -1
    if include_pin:
        gi = stiff.node_gid % (m1 + 1)
        rem = stiff.node_gid // (m1 + 1)
        gj = rem % (m2 + 1)
        gk = rem // (m2 + 1)
        inner_plane = (gi > 0) & (gi < m1) & (gj > 0) & (gj < m2)
        interior = inner_plane & (gk > 0) & (gk < m3)
        for mask in (interior, inner_plane):
            idx = np.flatnonzero(mask)
            if len(idx):
                pin_node = int(idx[0])
                break
        if pin_node < 0:
            pin_node = 0

    ndof = stiff.ndof
    kept = np.ones(ndof, dtype=bool)
    comp = np.arange(3)
    slave_dofs = (3 * slave_nodes[:, None] + comp).ravel()
    kept[slave_dofs] = False
    if pin_node >= 0:
        kept[3 * pin_node + comp] = False
    col_of = np.full(ndof, -1)
    col_of[kept] = np.arange(kept.sum())
    master_dofs = (3 * master_nodes[:, None] + comp).ravel()
    rows = np.concatenate([np.flatnonzero(kept), slave_dofs])
    cols = np.concatenate([col_of[kept], col_of[master_dofs]])
    if (cols < 0).any():
        raise DofMismatch("periodic master DOF was eliminated; constraint chain broken")
    basis = sp.coo_matrix((np.ones(len(rows)), (rows, cols)),
                          shape=(ndof, int(kept.sum()))).tocsr()
    return _Reduction(basis=basis, slave_nodes=slave_nodes,
                      master_nodes=master_nodes, pin_node=pin_node)


def _constraint_offsets(stiff, red, kind, i, j):
    """Inhomogeneous part of the constraints for one loading."""
    g = np.zeros(stiff.ndof)
    comp = np.arange(3)
    if len(red.slave_nodes):
        off = (perturbation_field(kind, i, j, stiff.node_xyz[red.slave_nodes])
               - perturbation_field(kind, i, j, stiff.node_xyz[red.master_nodes]))
        g[(3 * red.slave_nodes[:, None] + comp).ravel()] = off.ravel()
    if red.pin_node >= 0:
        g[3 * red.pin_node + comp] = perturbation_field(
            kind, i, j, stiff.node_xyz[red.pin_node])
    return g


def assemble_cell_stiffness(cell: CellMesh, mat: CellMaterial) -> CellStiffness:
    """Assemble the broken-space operator for the cell problems.

    Returns an operator object exposing the sparse matrix as `.matrix`
    together with the DOF tables the solves need.  Assembly happens once;
    the periodic reduction and factorization are cached on the object.
    """
    if not cell.solid_mask.any():
        raise EmptyPhase("cell has no solid phase to homogenize")
    if not _solid_connected(cell.solid_mask):
        raise DisconnectedSolid("solid phase is not face-connected")
    return CellStiffness(cell, mat)


def solve_cell_problem(stiff: CellStiffness, cell: CellMesh, kind, i, j) -> CellSolution:
    """Solve one canonical cell loading on the assembled operator.

    The loading enters purely through the constraint offsets: periodic
    wrap DOFs differ by the carrier field increment and the pinned node
    holds the carrier value, so the volume equations are homogeneous.
    """
    if cell is not stiff.cell and (
            tuple(cell.resolution) != tuple(stiff.cell.resolution)
            or not np.array_equal(cell.solid_mask, stiff.cell.solid_mask)):
        raise DofMismatch("cell does not match the assembled operator")
    red = stiff.reduction()
    lu = stiff.factor()
    g = _constraint_offsets(stiff, red, kind, i, j)
    rhs = -(red.basis.T @ (stiff.matrix @ g))
    sol = lu.solve(rhs)
    if not np.isfinite(sol).all():
        raise SingularMatrix("cell solve produced non-finite values")
    m = red.basis @ sol + g
    res = np.linalg.norm(red.basis.T @ (stiff.matrix @ m))
    scale = np.linalg.norm(rhs)
    comp = np.arange(3)
    return CellSolution(kind=str(kind).upper(), index=(min(i, j), max(i, j)),
                        dofs=m, pinned_dofs=3 * red.pin_node + comp,
                        residual=float(res / scale) if scale > 0.0 else float(res))


def solve_all_cell_problems(stiff: CellStiffness):
    """All six cell solutions in reduced-index order (M then B)."""
    return [solve_cell_problem(stiff, stiff.cell, kind, i, j)
            for kind in ("M", "B") for (i, j) in _LOAD_PAIRS]


def homogenized_tensors(solutions, stiff: CellStiffness, solid_volume=None,
                        thickness=1.0, method="matrix") -> StiffnessTriple:
    """Average six cell solutions into the effective plate tensors.

    Entries are energy products of pairs of solutions divided by the
    solid volume; the coupling tensor takes its leading index pair from
    the bending loading and its trailing pair from the stretch loading.
    `thickness` converts the unit-cell values to the physical plate:
    membrane scales linearly, coupling quadratically, bending cubically.
    `method` selects the assembled matrix or an independent quadrature
    loop over elements and contact facets (both give the same numbers).
    """
    table = {}
    for s in solutions:
        if len(s.dofs) != stiff.ndof:
            raise DofMismatch("cell solution does not match the operator layout")
        table[(s.kind, tuple(s.index))] = s.dofs
    order = [(k, ij) for k in ("M", "B") for ij in _LOAD_PAIRS]
    missing = [key for key in order if key not in table]
    if missing:
        raise ValueError(f"missing cell solutions: {missing}")
    cols = np.stack([table[key] for key in order], axis=1)

    if method == "matrix":
        gram = cols.T @ (stiff.matrix @ cols)
    elif method == "quadrature":
        gram = _quadrature_gram(stiff, cols)
    else:
        raise ValueError(f"unknown method {method!r}")

    vol = stiff.cell.solid_volume if solid_volume is None else float(solid_volume)
    if vol <= 0.0:
        raise EmptyPhase("solid volume must be positive")
    vidx = {(0, 0): 0, (1, 1): 1, (0, 1): 2, (1, 0): 2}
    mem = np.empty((2, 2, 2, 2))
    cpl = np.empty((2, 2, 2, 2))
    ben = np.empty((2, 2, 2, 2))
    for ij, p in vidx.items():
        for kl, q in vidx.items():
            mem[ij + kl] = gram[q, p]
            cpl[ij + kl] = gram[q, 3 + p]
            ben[ij + kl] = gram[3 + q, 3 + p]
    t = float(thickness)
    return StiffnessTriple(membrane=mem * (t / vol),
                           coupling=cpl * (t ** 2 / vol),
                           bending=ben * (t ** 3 / vol))


def _quadrature_gram(stiff, cols):
    """Energy products evaluated by direct quadrature, bypassing the matrix."""
    nsol = cols.shape[1]
    uel = cols[stiff.elem_dofs].reshape(-1, 8, 3, nsol)
    grad = np.einsum("encs,naq->eqcas", uel, stiff._grads)
    strain = 0.5 * (grad + grad.transpose(0, 1, 3, 2, 4))
    qw = stiff._qw
    if stiff.material.stiffness is not None:
        gram = np.einsum("ijkl,eqijs,eqklt,q->st", stiff.material.stiffness,
                         strain, strain, qw)
    else:
        tr = np.einsum("eqccs->eqs", strain)
        pair = np.einsum("eqcas,eqcat->eqst", strain, strain)
        gram = (2.0 * np.einsum("e,eqst,q->st", stiff._elem_mu, pair, qw)
                + np.einsum("e,eqs,eqt,q->st", stiff._elem_lam, tr, tr, qw))
    psi2, w2 = stiff._facet_psi, stiff._facet_w
    h = stiff.cell.voxel_size
    for axis, side_a, side_b, _ in stiff._contact_groups:
        ua = cols[(3 * side_a[:, :, None] + np.arange(3)).reshape(-1, 12)]
        ub = cols[(3 * side_b[:, :, None] + np.arange(3)).reshape(-1, 12)]
        du = (ua - ub).reshape(-1, 4, 3, nsol)
        jump = np.einsum("fncs,nq->fqcs", du, psi2)
        rmat = stiff.material.contact_matrix(axis)
        t1, t2 = [a for a in range(3) if a != axis]
        gram += (h[t1] * h[t2]) * np.einsum("cd,fqds,fqct,q->st", rmat, jump, jump, w2)
    return gram


def orthotropic_plate_tensors(e1, e2, nu12, nu21, shear, thickness) -> StiffnessTriple:
    """Closed-form plate tensors of a homogeneous orthotropic layer.

    Requires the reciprocity constraint e2/e1 = nu21/nu12 (relative
    tolerance 1e-8) and 1 - nu12*nu21 > 0.  The returned membrane matrix
    carries the same 1/12 prefactor as the bending matrix; the cell
    solver instead reproduces the classical membrane stiffness without
    that factor, so the two paths differ by a factor of 12 on the
    membrane block.  The coupling tensor is zero.
    """
    if not (e1 > 0.0 and e2 > 0.0 and shear > 0.0 and thickness > 0.0):
        raise ConstraintViolation("moduli and thickness must be positive")
    nunu = nu12 * nu21
    if not nunu < 1.0:
        raise ConstraintViolation("need 1 - nu12*nu21 > 0")
    lhs = abs(e2 * nu12 - e1 * nu21)
    ref = max(abs(e2 * nu12), abs(e1 * nu21))
    if lhs > 1e-8 * max(ref, 1e-300):
        raise ConstraintViolation(
            f"reciprocity e2/e1 = nu21/nu12 violated: e2*nu12={e2 * nu12!r}, "
            f"e1*nu21={e1 * nu21!r}")
    block = np.array([[e1, nu21 * e1, 0.0],
                      [nu21 * e1, e2, 0.0],
                      [0.0, 0.0, 0.0]])
    va = block.copy()
    va[2, 2] = 12.0 * (1.0 - nunu) * shear
    va *= thickness / (12.0 * (1.0 - nunu))
    vc = block.copy()
    vc[2, 2] = (1.0 - nunu) * shear
    vc *= thickness ** 3 / (12.0 * (1.0 - nunu))
    return StiffnessTriple.from_voigt(va, np.zeros((3, 3)), vc)


def membrane_convention_ratio(computed: StiffnessTriple,
                              closed_form: StiffnessTriple) -> float:
    """Scale factor between the two membrane stiffness conventions.

    The cell solver produces the classical membrane stiffness while the
    closed-form tensors carry the same 1/12 prefactor as the bending
    block on the extensional entries (their shear entry is classical),
    so comparing the two paths on the same homogeneous layer yields a
    factor near 12.  Returns the ratio of the axis-1 extensional Voigt
    entries, computed/closed, so callers can report the discrepancy
    instead of absorbing it.
    """
    num = float(computed.membrane_voigt[0, 0])
    den = float(closed_form.membrane_voigt[0, 0])
    if den == 0.0:
        raise ConstraintViolation("closed-form membrane entry is zero")
    return num / den


def predict_vanishing_coupling(cell: CellMesh) -> bool:
    """Sufficient symmetry test for a zero coupling tensor.

    Checks, voxel-exactly, that the solid mask is invariant under the
    two in-plane mirrors of the full cell and, on the quarter cell with
    even square in-plane resolution, under the half-turn about the
    diagonal in-plane axis and the quarter-turn about the vertical axis
    through the quarter center.  A True result certifies (for symmetric
    material data) that the coupling tensor vanishes; False only means
    the certificate does not apply.
    """
    mask = cell.solid_mask
    m1, m2, m3 = mask.shape
    if not np.array_equal(mask, mask[::-1, :, :]):
        return False
    if not np.array_equal(mask, mask[:, ::-1, :]):
        return False
    if m1 != m2 or m1 % 2 or m2 % 2:
        return False
    q = m1 // 2
    quarter = mask[:q, :q, :]
    if not np.array_equal(quarter, quarter.transpose(1, 0, 2)[:, :, ::-1]):
        return False
    return np.array_equal(quarter, quarter[::-1, :, :].transpose(1, 0, 2))


@dataclass
class TensorValidation:
    """Structured result of the plate-tensor sanity checks."""

    failures: list = field(default_factory=list)
    membrane_coercivity: float = np.nan
    bending_coercivity: float = np.nan
    coupling_norm: float = np.nan
    coupling_ratio: float = np.nan

    @property
    def passed(self):
        return not self.failures


def validate_tensors(triple: StiffnessTriple, tol=1e-8) -> TensorValidation:
    """Check symmetries and coercivity of a plate tensor triple.

    Returns a report with a list of human-readable failures (empty when
    everything passes), the minimal eigenvalues of the membrane and
    bending quadratic forms, and the magnitude of the coupling tensor
    both absolutely and relative to the other two.  Never raises.
    """
    report = TensorValidation()
    tensors = {"membrane": np.asarray(triple.membrane, dtype=float),
               "coupling": np.asarray(triple.coupling, dtype=float),
               "bending": np.asarray(triple.bending, dtype=float)}
    for name, a in tensors.items():
        if a.shape != (2, 2, 2, 2):
            report.failures.append(f"{name}: wrong shape {a.shape}")
            return report
        if not np.isfinite(a).all():
            report.failures.append(f"{name}: non-finite entries")
            return report
        scale = max(np.abs(a).max(), 1e-300)
        for axes, label in (((1, 0, 2, 3), "first"), ((0, 1, 3, 2), "second")):
            if np.abs(a - a.transpose(axes)).max() > tol * scale:
                report.failures.append(f"{name}: {label} index pair not symmetric")
        if name != "coupling":
            if np.abs(a - a.transpose(2, 3, 0, 1)).max() > tol * scale:
                report.failures.append(f"{name}: quadratic form not symmetric")
    for name, attr in (("membrane", "membrane_coercivity"),
                       ("bending", "bending_coercivity")):
        low = coercivity_constant(voigt_from_tensor4(tensors[name]))
        setattr(report, attr, low)
        if not low > 0.0:
            report.failures.append(f"{name}: not coercive (min eigenvalue {low:.3e})")
    bnorm = float(np.linalg.norm(tensors["coupling"]))
    report.coupling_norm = bnorm
    denom = np.sqrt(np.linalg.norm(tensors["membrane"])
                    * np.linalg.norm(tensors["bending"]))
    report.coupling_ratio = bnorm / denom if denom > 0.0 else np.inf
    return report
