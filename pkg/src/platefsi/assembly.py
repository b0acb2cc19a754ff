"""Sparse block assembly for the coupled channel/plate problem.

All element matrices are computed once on the reference cell and reused
for every element (the meshes are uniform with diagonal Jacobians), then
scattered with vectorized COO triplets.

Plate stiffness input is a triple of fourth-order in-plane tensors: the
membrane tensor, the membrane/bending coupling tensor, and the bending
tensor.  A reduced 3x3 ("Voigt") view with the row/column order
(11, 22, 12) is used for storage and assembly; the contraction uses the
weighted strain vector (e11, e22, 2*e12), which reproduces the full
four-index double contraction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fe
from .errors import (
    DofMismatch,
    InconsistentOffsets,
    NonCoerciveTensor,
    ParseError,
    SingularPermeability,
)
from .mesh import ChannelMesh

_VOIGT_PAIRS = ((0, 0), (1, 1), (0, 1))


def tensor4_from_voigt(v):
    """Expand a 3x3 reduced matrix into a minor-symmetric 2x2x2x2 tensor."""
    v = np.asarray(v, dtype=float)
    t = np.zeros((2, 2, 2, 2))
    index = {(0, 0): 0, (1, 1): 1, (0, 1): 2, (1, 0): 2}
    for ij, p in index.items():
        for kl, q in index.items():
            t[ij + kl] = v[p, q]
    return t


def voigt_from_tensor4(t):
    t = np.asarray(t, dtype=float)
    v = np.empty((3, 3))
    for p, ij in enumerate(_VOIGT_PAIRS):
        for q, kl in enumerate(_VOIGT_PAIRS):
            v[p, q] = t[ij + kl]
    return v


def contract4(t, eps, kappa):
    """Full double contraction sum_ijkl t[ijkl] eps[ij] kappa[kl]."""
    return float(np.einsum("ijkl,ij,kl->", t, eps, kappa))


def strain_vector(eps):
    """Reduced strain vector (e11, e22, 2 e12) of a symmetric 2x2 matrix."""
    eps = np.asarray(eps, dtype=float)
    return np.array([eps[0, 0], eps[1, 1], eps[0, 1] + eps[1, 0]])


def coercivity_constant(v):
    """Smallest eigenvalue of the reduced form w.r.t. |eps|^2.

    The reduced vector weights the shear entry by 2, so the correct
    normalization is the diagonal metric diag(1, 1, 1/2).
    """
    v = np.asarray(v, dtype=float)
    if not np.allclose(v, v.T, atol=1e-12 * max(1.0, np.abs(v).max())):
        return -np.inf
    d = np.diag([1.0, 1.0, np.sqrt(2.0)])
    return float(np.linalg.eigvalsh(d @ v @ d).min())


@dataclass(frozen=True)
class StiffnessTriple:
    """Homogenized plate tensors: membrane, coupling, bending.

    Stored as fourth-order tensors with minor symmetries.  The coupling
    tensor contracts the argument field on its trailing index pair:
    applied to a curvature it adds to the membrane stress, applied to an
    in-plane strain it adds to the bending moment.  It carries no major
    symmetry in general.  Units follow the physical plate: membrane N/m,
    coupling N, bending N m.
    """

    membrane: np.ndarray
    coupling: np.ndarray
    bending: np.ndarray

    @classmethod
    def from_voigt(cls, va, vb, vc):
        return cls(tensor4_from_voigt(va), tensor4_from_voigt(vb),
                   tensor4_from_voigt(vc))

    @property
    def membrane_voigt(self):
        return voigt_from_tensor4(self.membrane)

    @property
    def coupling_voigt(self):
        return voigt_from_tensor4(self.coupling)

    @property
    def bending_voigt(self):
        return voigt_from_tensor4(self.bending)


class InterfaceData:
    """Per-facet interface coefficients on the plate plane.

    va/vb/vc are reduced 3x3 views of the plate tensors per facet
    (shape (nf, 3, 3)); khat_inv is the inverse of the slip matrix
    K/(mu*delta) per facet, or None for a transparent interface with no
    resistance blocks; rho_s_hat is the averaged surface density.
    """

    def __init__(self, va, vb, vc, khat_inv, rho_s_hat):
        self.va = np.asarray(va, dtype=float)
        self.vb = np.asarray(vb, dtype=float)
        self.vc = np.asarray(vc, dtype=float)
        self.khat_inv = None if khat_inv is None else np.asarray(khat_inv, float)
        self.rho_s_hat = float(rho_s_hat)

    @classmethod
    def from_tensors(cls, nf, triple: StiffnessTriple, khat=None,
                     rho_s_hat=1.0, khat_overrides=None,
                     triple_overrides=None):
        """Broadcast constant tensors to nf facets; apply overrides by index."""
        va = np.broadcast_to(triple.membrane_voigt, (nf, 3, 3)).copy()
        vb = np.broadcast_to(triple.coupling_voigt, (nf, 3, 3)).copy()
        vc = np.broadcast_to(triple.bending_voigt, (nf, 3, 3)).copy()
        if triple_overrides:
            for f, tr in triple_overrides.items():
                va[f], vb[f], vc[f] = tr.membrane_voigt, tr.coupling_voigt, tr.bending_voigt
        if khat is None:
            kinv = None
            if khat_overrides:
                raise SingularPermeability(
                    "facet overrides need a base slip matrix")
        else:
            khat = np.asarray(khat, dtype=float)
            kk = np.broadcast_to(khat, (nf, 3, 3)).copy()
            if khat_overrides:
                for f, m in khat_overrides.items():
                    kk[f] = m
            kinv = np.empty_like(kk)
            for f in range(nf):
                _check_spd(kk[f], f, "interface slip matrix")
                kinv[f] = np.linalg.inv(kk[f])
        return cls(va, vb, vc, kinv, rho_s_hat)


def _check_spd(m, facet, what):
    if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise SingularPermeability(f"{what} not symmetric on facet {facet}")
    eig = np.linalg.eigvalsh(0.5 * (m + m.T))
    if eig.min() <= 0.0:
        raise SingularPermeability(
            f"{what} not positive definite on facet {facet} "
            f"(min eigenvalue {eig.min():.3e})")


# ---------------------------------------------------------------------------
# fluid blocks


def _require(dm, kind):
    if dm.kind != kind:
        raise DofMismatch(f"expected a {kind} dof map, got {dm.kind}")


def _scatter(rows_tab, cols_tab, local, shape):
    """Scatter one shared local matrix over all entities."""
    ne = rows_tab.shape[0]
    rows = np.repeat(rows_tab, cols_tab.shape[1], axis=1)
    cols = np.tile(cols_tab, (1, rows_tab.shape[1]))
    data = np.tile(local.reshape(-1), ne)
    mat = sp.coo_matrix((data, (rows.reshape(-1), cols.reshape(-1))),
                        shape=shape)
    return mat.tocsr()


def _scatter_varying(rows_tab, cols_tab, locals_, shape):
    """Scatter per-entity local matrices (entity-major data layout)."""
    rows = np.repeat(rows_tab, cols_tab.shape[1], axis=1)
    cols = np.tile(cols_tab, (1, rows_tab.shape[1]))
    mat = sp.coo_matrix((locals_.reshape(-1),
                         (rows.reshape(-1), cols.reshape(-1))), shape=shape)
    return mat.tocsr()


def fluid_local_matrices(h, rho_f, mu):
    """Reference local matrices for the velocity/pressure pair.

    Returns (mass 81x81, viscous 81x81, div 8x81) for one box element of
    side lengths h with fluid density rho_f and dynamic viscosity mu.
    """
    pts, w = fe.gauss_rule(3, 3)
    jac = h[0] * h[1] * h[2]
    wj = w * jac
    phi = fe.q_basis(2, pts)                       # (27, N)
    dphi = np.stack([fe.q_basis(2, pts, deriv=tuple(np.eye(3, dtype=int)[a]))
                     / h[a] for a in range(3)])    # (3, 27, N)
    psi = fe.q_basis(1, pts)                       # (8, N)

    mass27 = np.einsum("in,jn,n->ij", phi, phi, wj)
    grams = np.einsum("ain,bjn,n->abij", dphi, dphi, wj)  # (3,3,27,27)
    lap = grams[0, 0] + grams[1, 1] + grams[2, 2]

    mass = np.zeros((81, 81))
    visc = np.zeros((81, 81))
    for c in range(3):
        mass[c::3, c::3] = rho_f * mass27
        for d in range(3):
            blk = mu * grams[d, c]
            if c == d:
                blk = blk + mu * lap
            visc[c::3, d::3] = blk

    div = np.zeros((8, 81))
    for d in range(3):
        div[:, d::3] = np.einsum("kn,jn,n->kj", psi, dphi[d], wj)
    return mass, visc, div


def fluid_blocks(mesh: ChannelMesh, dm_v, dm_p, rho_f, mu):
    """Assemble the velocity mass, viscous, and divergence blocks."""
    _require(dm_v, "Q2_vec3")
    _require(dm_p, "Q1_scalar_broken_sigma")
    h = mesh.spacing
    mass, visc, div = fluid_local_matrices(h, rho_f, mu)
    mvv = _scatter(dm_v.elem_dofs, dm_v.elem_dofs, mass,
                   (dm_v.ndof, dm_v.ndof))
    avis = _scatter(dm_v.elem_dofs, dm_v.elem_dofs, visc,
                    (dm_v.ndof, dm_v.ndof))
    bdiv = _scatter(dm_p.elem_dofs, dm_v.elem_dofs, div,
                    (dm_p.ndof, dm_v.ndof))
    return {"M_VV": mvv, "A": avis, "B": bdiv}


# ---------------------------------------------------------------------------
# interface and plate blocks (integrals over the midplane facets)


def _sigma_tabulation(mesh):
    """Shared facet tabulations at the 4x4 Gauss rule."""
    h1, h2, _ = mesh.spacing
    pts, w = fe.gauss_rule(4, 2)
    wj = w * h1 * h2
    phi9 = fe.q_basis(2, pts)                     # velocity trace
    psi_lex = fe.q_basis(1, pts)
    dpsi_lex = np.stack([fe.q_basis(1, pts, deriv=(1, 0)) / h1,
                         fe.q_basis(1, pts, deriv=(0, 1)) / h2])
    ccw = [0, 1, 3, 2]                            # lexicographic -> ccw corners
    psi4 = psi_lex[ccw]
    dpsi4 = dpsi_lex[:, ccw, :]
    bval = fe.bfs_tabulate(pts, (0, 0), (h1, h2))
    b11 = fe.bfs_tabulate(pts, (2, 0), (h1, h2))
    b22 = fe.bfs_tabulate(pts, (0, 2), (h1, h2))
    b12 = fe.bfs_tabulate(pts, (1, 1), (h1, h2))
    return {
        "wj": wj, "phi9": phi9, "psi4": psi4, "dpsi4": dpsi4,
        "bval": bval, "kappa": np.stack([b11, b22, 2.0 * b12]),
        "pts": pts, "h": (h1, h2),
    }


def _inplane_strain_table(tab):
    """Reduced strain rows of the bilinear in-plane basis: (3, 8, N)."""
    dpsi = tab["dpsi4"]
    npts = dpsi.shape[2]
    eps = np.zeros((3, 8, npts))
    for n in range(4):
        eps[0, 2 * n + 0] = dpsi[0, n]       # e11 of (psi, 0)
        eps[2, 2 * n + 0] = dpsi[1, n]       # 2 e12
        eps[1, 2 * n + 1] = dpsi[1, n]       # e22 of (0, psi)
        eps[2, 2 * n + 1] = dpsi[0, n]
    return eps


def interface_coupling_blocks(mesh: ChannelMesh, dm_v, dm_u3, weight):
    """Facet-weighted velocity/deflection coupling blocks.

    weight is a per-facet (or constant) 3x3 matrix W; the blocks realize
    the facet integrals of (W V) . V', (W V)_3 U3, and (W U3 e3)_3 U3'
    over the midplane, with the velocity trace and the C^1 deflection
    basis.  Used with the inverse slip matrix and, by the diagnostics,
    with projector weights.
    """
    _require(dm_v, "Q2_vec3")
    _require(dm_u3, "BFS_sigma")
    nf = mesh.sigma.quads.shape[0]
    weight = np.asarray(weight, dtype=float)
    wmats = np.broadcast_to(weight, (nf, 3, 3))

    tab = _sigma_tabulation(mesh)
    mass9 = np.einsum("in,jn,n->ij", tab["phi9"], tab["phi9"], tab["wj"])
    qb = np.einsum("in,mn,n->im", tab["phi9"], tab["bval"], tab["wj"])
    bb = np.einsum("in,jn,n->ij", tab["bval"], tab["bval"], tab["wj"])

    rvv_loc = np.einsum("fcd,ij->ficjd", wmats, mass9).reshape(nf, 27, 27)
    rvu_loc = np.einsum("fc,im->ficm", wmats[:, 2, :], qb).reshape(nf, 27, 16)
    ruu_loc = wmats[:, 2, 2][:, None, None] * bb

    vd = dm_v.sigma_trace_dofs
    ud = dm_u3.elem_dofs
    rvv = _scatter_varying(vd, vd, rvv_loc, (dm_v.ndof, dm_v.ndof))
    rvu = _scatter_varying(vd, ud, rvu_loc, (dm_v.ndof, dm_u3.ndof))
    ruu = _scatter_varying(ud, ud, ruu_loc, (dm_u3.ndof, dm_u3.ndof))
    return {"R_VV": rvv, "R_VU": rvu, "R_UU": ruu}


def plate_blocks(mesh: ChannelMesh, dm_u, dm_u3, interface: InterfaceData,
                 check_coercive=True):
    """Membrane, coupling, and bending stiffness blocks on the midplane."""
    _require(dm_u, "Q1_vec2_sigma")
    _require(dm_u3, "BFS_sigma")
    nf = mesh.sigma.quads.shape[0]
    if interface.va.shape not in ((3, 3), (nf, 3, 3)):
        raise DofMismatch("interface tensor arrays do not match facet count")
    va = np.broadcast_to(interface.va, (nf, 3, 3))
    vb = np.broadcast_to(interface.vb, (nf, 3, 3))
    vc = np.broadcast_to(interface.vc, (nf, 3, 3))
    if check_coercive:
        scale_a = max(np.abs(va).max(), 1e-300)
        scale_c = max(np.abs(vc).max(), 1e-300)
        for f in range(nf):
            if coercivity_constant(va[f]) <= 1e-12 * scale_a:
                raise NonCoerciveTensor(f"membrane tensor on facet {f}")
            if coercivity_constant(vc[f]) <= 1e-12 * scale_c:
                raise NonCoerciveTensor(f"bending tensor on facet {f}")

    tab = _sigma_tabulation(mesh)
    eps = _inplane_strain_table(tab)
    kappa = tab["kappa"]
    wj = tab["wj"]
    iee = np.einsum("ain,bjn,n->abij", eps, eps, wj)      # (3,3,8,8)
    ikk = np.einsum("ain,bjn,n->abij", kappa, kappa, wj)  # (3,3,16,16)
    iek = np.einsum("ain,bjn,n->abij", eps, kappa, wj)    # (3,3,8,16)

    pa_loc = np.einsum("fab,abij->fij", va, iee)
    pc_loc = np.einsum("fab,abij->fij", vc, ikk)
    # coupling: the tensor's first pair contracts the membrane-side factor
    pb1_loc = np.einsum("fab,abij->fij", vb, iek)              # (8,16)
    pb2_loc = np.einsum("fab,baij->fji", vb, iek)              # (16,8)

    ud = dm_u.elem_dofs
    u3d = dm_u3.elem_dofs
    pa = _scatter_varying(ud, ud, pa_loc, (dm_u.ndof, dm_u.ndof))
    pc = _scatter_varying(u3d, u3d, pc_loc, (dm_u3.ndof, dm_u3.ndof))
    pb1 = _scatter_varying(ud, u3d, pb1_loc, (dm_u.ndof, dm_u3.ndof))
    pb2 = _scatter_varying(u3d, ud, pb2_loc, (dm_u3.ndof, dm_u.ndof))
    return {"P_A": pa, "P_B1": pb1, "P_B2": pb2, "P_C": pc}


def plate_mass_blocks(mesh: ChannelMesh, dm_u3, dm_w3, rho_s_hat):
    """Surface mass blocks coupling deflection and its velocity."""
    _require(dm_u3, "BFS_sigma")
    _require(dm_w3, "BFS_sigma")
    tab = _sigma_tabulation(mesh)
    bb = rho_s_hat * np.einsum("in,jn,n->ij", tab["bval"], tab["bval"],
                               tab["wj"])
    muw = _scatter(dm_u3.elem_dofs, dm_w3.elem_dofs, bb,
                   (dm_u3.ndof, dm_w3.ndof))
    mww = _scatter(dm_w3.elem_dofs, dm_w3.elem_dofs, bb,
                   (dm_w3.ndof, dm_w3.ndof))
    return {"M_UW": muw, "M_WW": mww}


# ---------------------------------------------------------------------------
# loads


def volume_load(mesh: ChannelMesh, dm_v, f_sampler, t=0.0):
    """Body-force load vector over the channel at time t."""
    _require(dm_v, "Q2_vec3")
    h = np.array(mesh.spacing)
    pts, w = fe.gauss_rule(3, 3)
    wj = w * h.prod()
    phi = fe.q_basis(2, pts)
    origins = mesh.nodes[mesh.hexes[:, 0]]                 # (ne, 3)
    coords = origins[:, None, :] + pts[None, :, :] * h     # (ne, N, 3)
    ne, npts = coords.shape[0], coords.shape[1]
    fvals = np.asarray(f_sampler(t, coords.reshape(-1, 3)), dtype=float)
    fvals = fvals.reshape(ne, npts, 3)
    loc = np.einsum("enc,in,n->eic", fvals, phi, wj).reshape(ne, -1)
    out = np.zeros(dm_v.ndof)
    np.add.at(out, dm_v.elem_dofs.reshape(-1), loc.reshape(-1))
    return out


def inplane_load(mesh: ChannelMesh, dm_u, f_sampler, t=0.0):
    """In-plane surface load vector over the midplane at time t."""
    _require(dm_u, "Q1_vec2_sigma")
    tab = _sigma_tabulation(mesh)
    h1, h2 = tab["h"]
    pts = tab["pts"]
    quads = mesh.sigma.quads
    origins = mesh.sigma.nodes[quads[:, 0]]
    coords = origins[:, None, :] + pts[None, :, :] * np.array([h1, h2])
    nf, npts = coords.shape[0], coords.shape[1]
    fvals = np.asarray(f_sampler(t, coords.reshape(-1, 2)), dtype=float)
    fvals = fvals.reshape(nf, npts, 2)
    loc = np.einsum("fnc,in,n->fic", fvals, tab["psi4"], tab["wj"])
    out = np.zeros(dm_u.ndof)
    np.add.at(out, dm_u.elem_dofs.reshape(-1), loc.reshape(-1))
    return out


def plate_load(mesh: ChannelMesh, dm_u3, g3_sampler, t=0.0):
    """Transverse plate load vector over the midplane at time t."""
    _require(dm_u3, "BFS_sigma")
    tab = _sigma_tabulation(mesh)
    h1, h2 = tab["h"]
    pts = tab["pts"]
    quads = mesh.sigma.quads
    origins = mesh.sigma.nodes[quads[:, 0]]
    coords = origins[:, None, :] + pts[None, :, :] * np.array([h1, h2])
    nf, npts = coords.shape[0], coords.shape[1]
    gvals = np.asarray(g3_sampler(t, coords.reshape(-1, 2)), dtype=float)
    gvals = gvals.reshape(nf, npts)
    loc = np.einsum("fn,in,n->fi", gvals, tab["bval"], tab["wj"])
    out = np.zeros(dm_u3.ndof)
    np.add.at(out, dm_u3.elem_dofs.reshape(-1), loc.reshape(-1))
    return out


# ---------------------------------------------------------------------------
# composite system


FIELD_ORDER = ("v", "p", "u", "u3", "w3")

# block name -> (row field, column field, sign, membership)
_S1_LAYOUT = {
    "M_VV": ("v", "v", 1.0),
    "R_VU_s1": ("v", "u3", -1.0),
    "R_UU": ("u3", "u3", 1.0),
    "M_UW": ("u3", "w3", 1.0),
    "M_UW_T": ("w3", "u3", -1.0),
}
_S2_LAYOUT = {
    "A": ("v", "v", 1.0),
    "R_VV": ("v", "v", 1.0),
    "B_T": ("v", "p", -1.0),
    "B": ("p", "v", -1.0),
    "P_A": ("u", "u", 1.0),
    "P_B1": ("u", "u3", 1.0),
    "R_VU_T": ("u3", "v", -1.0),
    "P_B2": ("u3", "u", 1.0),
    "P_C": ("u3", "u3", 1.0),
    "M_WW": ("w3", "w3", 1.0),
}


class BlockSystem:
    """Composite two-matrix form of the fully discrete coupled system.

    The time stepper solves (S1/dt + S2) y_next = S1/dt y + load, with
    unknown ordering (v, p, u, u3, w3).
    """

    def __init__(self, blocks, sizes):
        self.sizes = dict(sizes)
        self.offsets = {}
        pos = 0
        for f in FIELD_ORDER:
            self.offsets[f] = pos
            pos += self.sizes[f]
        self.ndof = pos
        self.blocks = blocks
        self._check(blocks)
        self.S1 = self._place(_S1_LAYOUT)
        self.S2 = self._place(_S2_LAYOUT)

    def _check(self, blocks):
        shapes = {
            "M_VV": ("v", "v"), "A": ("v", "v"), "R_VV": ("v", "v"),
            "B": ("p", "v"), "R_VU": ("v", "u3"), "R_UU": ("u3", "u3"),
            "P_A": ("u", "u"), "P_B1": ("u", "u3"), "P_B2": ("u3", "u"),
            "P_C": ("u3", "u3"), "M_UW": ("u3", "w3"), "M_WW": ("w3", "w3"),
        }
        for name, (rf, cf) in shapes.items():
            blk = blocks[name]
            want = (self.sizes[rf], self.sizes[cf])
            if blk.shape != want:
                raise InconsistentOffsets(
                    f"block {name} has shape {blk.shape}, layout wants {want}")

    def _resolve(self, name):
        base = name.replace("_s1", "").replace("_T", "")
        blk = self.blocks[base]
        if name.endswith("_T"):
            blk = blk.T
        return blk

    def _place(self, layout):
        rows, cols, data = [], [], []
        for name, (rf, cf, sign) in layout.items():
            blk = self._resolve(name).tocoo()
            rows.append(blk.row + self.offsets[rf])
            cols.append(blk.col + self.offsets[cf])
            data.append(sign * blk.data)
        return sp.coo_matrix(
            (np.concatenate(data),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ndof, self.ndof)).tocsr()

    def compose(self, dt):
        return (self.S1 * (1.0 / dt) + self.S2).tocsr()

    def field_slice(self, name):
        off = self.offsets[name]
        return slice(off, off + self.sizes[name])

    def pack(self, **fields):
        y = np.zeros(self.ndof)
        for name, vec in fields.items():
            y[self.field_slice(name)] = vec
        return y

    def unpack(self, y):
        return {name: y[self.field_slice(name)].copy() for name in FIELD_ORDER}

    def load_vector(self, f_load=None, g3_load=None):
        l = np.zeros(self.ndof)
        if f_load is not None:
            l[self.field_slice("v")] = f_load
        if g3_load is not None:
            l[self.field_slice("u3")] = g3_load
        return l


def assemble_system(blocks, sizes) -> BlockSystem:
    return BlockSystem(blocks, sizes)


# ---------------------------------------------------------------------------
# tensor file format
#
# Plain text, sections started by a keyword line:
#   AHOM / BHOM / CHOM : 3 rows x 3 entries, reduced (11,22,12) view
#   KHAT               : 3 rows x 3 entries, slip matrix K/(mu*delta)
#   RHOS               : one scalar, surface density
#   FACET <index>      : subsequent tensor sections override that facet
# '#' starts a comment; blank lines are ignored.


def write_tensor_file(path, triple: StiffnessTriple | None, khat=None,
                      rho_s_hat=None, facet_overrides=None):
    lines = ["# plate interface tensors (reduced 3x3 views, order 11 22 12)"]

    def emit(name, m):
        lines.append(name)
        for r in range(3):
            lines.append(" ".join(f"{m[r, c]:.17g}" for c in range(3)))

    if triple is not None:
        emit("AHOM", triple.membrane_voigt)
        emit("BHOM", triple.coupling_voigt)
        emit("CHOM", triple.bending_voigt)
    if khat is not None:
        emit("KHAT", np.asarray(khat, dtype=float))
    if rho_s_hat is not None:
        lines.append("RHOS")
        lines.append(f"{float(rho_s_hat):.17g}")
    for f in sorted((facet_overrides or {}).keys()):
        lines.append(f"FACET {f}")
        entry = facet_overrides[f]
        for key in ("AHOM", "BHOM", "CHOM", "KHAT"):
            if key in entry:
                emit(key, np.asarray(entry[key], dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class TensorFileData:
    """Parsed tensor file; `triple` is None for slip-matrix-only files."""

    triple: StiffnessTriple | None
    khat: np.ndarray | None
    rho_s_hat: float | None
    facet_overrides: dict


def read_tensor_file(path) -> TensorFileData:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise ParseError(f"cannot read tensor file {path}: {exc}") from exc
    tokens = []
    for ln, line in enumerate(raw, start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            tokens.append((body, ln))

    sections = {}
    overrides = {}
    target = sections
    pos = 0

    def read_matrix(kw, start):
        rows = []
        idx = start
        for _ in range(3):
            if idx >= len(tokens):
                raise ParseError(f"{path}: truncated {kw} section")
            body, ln = tokens[idx]
            parts = body.split()
            if len(parts) != 3:
                raise ParseError(f"{path}:{ln}: expected 3 entries in {kw} row")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{ln}: bad number in {kw}") from exc
            idx += 1
        return np.array(rows), idx

    while pos < len(tokens):
        body, ln = tokens[pos]
        kw = body.split()[0].upper()
        if kw in ("AHOM", "BHOM", "CHOM", "KHAT"):
            mat, pos = read_matrix(kw, pos + 1)
            target[kw] = mat
        elif kw == "RHOS":
            pos += 1
            if pos >= len(tokens):
                raise ParseError(f"{path}: missing RHOS value")
            try:
                target["RHOS"] = float(tokens[pos][0].split()[0])
            except ValueError as exc:
                raise ParseError(f"{path}:{tokens[pos][1]}: bad RHOS") from exc
            pos += 1
        elif kw == "FACET":
            parts = body.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{ln}: FACET needs one index")
            try:
                fidx = int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{ln}: bad facet index") from exc
            overrides[fidx] = {}
            target = overrides[fidx]
            pos += 1
        else:
            raise ParseError(f"{path}:{ln}: unknown section {kw!r}")

    present = [key for key in ("AHOM", "BHOM", "CHOM") if key in sections]
    if present and len(present) < 3:
        missing = [k for k in ("AHOM", "BHOM", "CHOM") if k not in sections]
        raise ParseError(f"{path}: missing required section {missing[0]}")
    if present:
        triple = StiffnessTriple.from_voigt(sections["AHOM"],
                                            sections["BHOM"],
                                            sections["CHOM"])
    else:
        triple = None
    return TensorFileData(triple=triple, khat=sections.get("KHAT"),
                          rho_s_hat=sections.get("RHOS"),
                          facet_overrides=overrides)
