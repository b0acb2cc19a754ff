"""Linear solves and drivers for the coupled channel/plate problem.

Contains the sparse direct/GMRES front end, symmetric Dirichlet
elimination, the backward-Euler time loop, the stationary sequential
solve (fluid first, plate second), limiting-case diagnostics on the
midplane, and manufactured-solution convergence studies.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly, fe
from .errors import MaxIterations, SingularMatrix, SolverFailure
from .mesh import build_channel_mesh

log = logging.getLogger(__name__)


@dataclass
class LinearSolveReport:
    method: str
    iterations: int
    residual: float
    elapsed: float


def _block_preconditioner(a_csc, slices, n):
    """Block-diagonal LU preconditioner over the given index ranges."""
    factors = []
    for sl in slices:
        sub = a_csc[sl, sl].tocsc()
        try:
            factors.append((sl, spla.splu(sub)))
        except RuntimeError as exc:
            raise SingularMatrix(
                f"preconditioner block {sl} is singular: {exc}") from exc

    def matvec(r):
        out = r.copy()
        for sl, lu in factors:
            out[sl] = lu.solve(r[sl])
        return out

    return spla.LinearOperator((n, n), matvec=matvec)


def sparse_solve(a, b, method="direct", tol=1e-10, restart=200,
                 maxiter=500, pc_slices=None):
    """Solve a x = b and report how it went.

    method "direct" runs sparse LU with fill-reducing ordering; "gmres"
    runs restarted GMRES, optionally preconditioned block-diagonally
    over pc_slices (a list of index slices covering diagonal blocks).
    """
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape[0] != a.shape[1] or b.shape[0] != n:
        raise SolverFailure(
            f"shape mismatch: matrix {a.shape}, rhs {b.shape}")
    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if method == "direct":
        try:
            lu = spla.splu(a.tocsc())
            x = lu.solve(b)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise SingularMatrix("direct solve produced non-finite values")
        res = np.linalg.norm(a @ x - b) / max(bnorm, 1e-300)
        return x, LinearSolveReport("direct_lu", 1, res,
                                    time.perf_counter() - t0)
    if method != "gmres":
        raise SolverFailure(f"unknown solver method {method!r}")

    a_csr = a.tocsr()
    precond = None
    if pc_slices:
        precond = _block_preconditioner(a.tocsc(), pc_slices, n)
    count = {"it": 0}

    def cb(_):
        count["it"] += 1

    x, info = spla.gmres(a_csr, b, rtol=tol, atol=0.0, restart=restart,
                         maxiter=maxiter, M=precond, callback=cb,
                         callback_type="pr_norm")
    if info < 0:
        raise SolverFailure(f"gmres breakdown (info={info})")
    res = np.linalg.norm(a_csr @ x - b) / max(bnorm, 1e-300)
    if info > 0:
        raise MaxIterations(
            f"gmres did not reach {tol} in {count['it']} iterations "
            f"(residual {res:.3e})")
    return x, LinearSolveReport("gmres", count["it"], res,
                                time.perf_counter() - t0)


def apply_dirichlet(a, b, mask, values=None):
    """Eliminate constrained dofs symmetrically.

    Zeroes the constrained rows and columns, places 1 on their diagonal,
    moves the known column contribution to the right-hand side, and sets
    the constrained right-hand side entries to the prescribed values.
    """
    mask = np.asarray(mask, dtype=bool)
    n = a.shape[0]
    g = np.zeros(n)
    if values is not None:
        g[mask] = np.asarray(values, dtype=float)[mask]
    b2 = np.asarray(b, dtype=float) - a @ g
    keep = sp.diags((~mask).astype(float))
    a2 = (keep @ a @ keep + sp.diags(mask.astype(float))).tocsr()
    b2[mask] = g[mask]
    return a2, b2


# ---------------------------------------------------------------------------
# assembled coupled system


class FsiSystem:
    """Dof maps, blocks, and composite operators for one channel mesh."""

    def __init__(self, channel, interface: assembly.InterfaceData,
                 rho_f, mu):
        self.mesh = channel
        self.interface = interface
        self.rho_f = float(rho_f)
        self.mu = float(mu)
        self.spaces = {
            "v": fe.build_dofmap(channel, "Q2_vec3"),
            "p": fe.build_dofmap(channel, "Q1_scalar_broken_sigma"),
            "u": fe.build_dofmap(channel, "Q1_vec2_sigma"),
            "u3": fe.build_dofmap(channel, "BFS_sigma"),
            "w3": fe.build_dofmap(channel, "BFS_sigma"),
        }
        blocks = assembly.fluid_blocks(channel, self.spaces["v"],
                                       self.spaces["p"], rho_f, mu)
        nv, nu3 = self.spaces["v"].ndof, self.spaces["u3"].ndof
        if interface.khat_inv is None:
            blocks["R_VV"] = sp.csr_matrix((nv, nv))
            blocks["R_VU"] = sp.csr_matrix((nv, nu3))
            blocks["R_UU"] = sp.csr_matrix((nu3, nu3))
        else:
            blocks.update(assembly.interface_coupling_blocks(
                channel, self.spaces["v"], self.spaces["u3"],
                interface.khat_inv))
        blocks.update(assembly.plate_blocks(channel, self.spaces["u"],
                                            self.spaces["u3"], interface))
        blocks.update(assembly.plate_mass_blocks(
            channel, self.spaces["u3"], self.spaces["w3"],
            interface.rho_s_hat))
        self.blocks = blocks
        sizes = {k: self.spaces[k].ndof for k in assembly.FIELD_ORDER}
        self.system = assembly.assemble_system(blocks, sizes)

        self.dirichlet_mask = np.zeros(self.system.ndof, dtype=bool)
        for name in assembly.FIELD_ORDER:
            self.dirichlet_mask[self.system.field_slice(name)] = \
                self.spaces[name].dirichlet
        coords = self.spaces["v"].node_coords
        self._inflow_nodes = np.flatnonzero(coords[:, 2] == coords[:, 2].min())

    def preconditioner_slices(self):
        """Diagonal ranges: fluid saddle, plate pair, deflection velocity."""
        o, s = self.system.offsets, self.system.sizes
        return [slice(o["v"], o["p"] + s["p"]),
                slice(o["u"], o["u3"] + s["u3"]),
                slice(o["w3"], o["w3"] + s["w3"])]

    def dirichlet_values(self, t=0.0, inflow=None):
        """Composite vector of prescribed boundary values at time t."""
        g = np.zeros(self.system.ndof)
        if inflow is not None:
            nodes = self._inflow_nodes
            vals = np.asarray(inflow(t, self.spaces["v"].node_coords[nodes]),
                              dtype=float)
            off = self.system.offsets["v"]
            for c in range(3):
                g[off + 3 * nodes + c] = vals[:, c]
        return g

    def load_vector(self, t=0.0, f=None, g3=None):
        fv = None if f is None else assembly.volume_load(
            self.mesh, self.spaces["v"], f, t)
        g3v = None if g3 is None else assembly.plate_load(
            self.mesh, self.spaces["u3"], g3, t)
        return self.system.load_vector(fv, g3v)

    def energies(self, y):
        """Monitored energies of a composite state vector."""
        parts = self.system.unpack(y)
        b = self.blocks
        v, u, u3, w3 = parts["v"], parts["u"], parts["u3"], parts["w3"]
        e_el = 0.5 * (u @ (b["P_A"] @ u) + u @ (b["P_B1"] @ u3)
                      + u3 @ (b["P_B2"] @ u) + u3 @ (b["P_C"] @ u3))
        d_int = (v @ (b["R_VV"] @ v) - 2.0 * v @ (b["R_VU"] @ w3)
                 + w3 @ (b["R_UU"] @ w3))
        return {
            "E_kin_f": 0.5 * v @ (b["M_VV"] @ v),
            "E_el_p": e_el,
            "E_kin_p": 0.5 * w3 @ (b["M_WW"] @ w3),
            "D_interface": d_int,
        }


@dataclass
class SolutionState:
    """One snapshot of all unknown fields."""
    t: float
    v: np.ndarray
    p: np.ndarray
    u_bar: np.ndarray
    u3: np.ndarray
    w3: np.ndarray

    @classmethod
    def from_vector(cls, system, y, t):
        parts = system.unpack(y)
        return cls(t=t, v=parts["v"], p=parts["p"], u_bar=parts["u"],
                   u3=parts["u3"], w3=parts["w3"])

    def as_vector(self, system):
        return system.pack(v=self.v, p=self.p, u=self.u_bar, u3=self.u3,
                           w3=self.w3)

    @classmethod
    def zero(cls, system, t=0.0):
        return cls.from_vector(system, np.zeros(system.ndof), t)


# ---------------------------------------------------------------------------
# transient driver


@dataclass
class TransientResult:
    times: np.ndarray
    energies: dict
    final: SolutionState
    states: list | None
    report: LinearSolveReport
    max_kinematic_residual: float
    max_divergence_residual: float


def run_transient(fsi: FsiSystem, dt, nsteps, f=None, g3=None, inflow=None,
                  state0=None, method="direct", tol=1e-10,
                  record_states=False, progress=None):
    """March the composite system with backward Euler.

    Loads f (volume force sampler) and g3 (transverse plate load
    sampler) are evaluated at the end of each step; inflow prescribes
    velocity data on the bottom face.  `progress`, when given, is called
    after every step with (completed steps, total steps, current time).
    Returns the energy log, the final state, and worst-case residuals of
    the two built-in scheme checks: the deflection-velocity kinematic
    identity and the discrete divergence of the velocity.
    """
    if dt <= 0.0 or nsteps < 1:
        raise SolverFailure("need dt > 0 and nsteps >= 1")
    if inflow is not None:
        log.info("nonzero inflow data: outside the zero-inflow transient "
                 "theory, proceeding anyway")
    sysm = fsi.system
    m_full = sysm.compose(dt).tocsc()
    mask = fsi.dirichlet_mask
    cols = m_full[:, mask]
    keep = sp.diags((~mask).astype(float))
    m_mod = (keep @ m_full @ keep + sp.diags(mask.astype(float))).tocsc()
    lu = None
    if method == "direct":
        try:
            lu = spla.splu(m_mod)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc

    if state0 is None:
        y = np.zeros(sysm.ndof)
        t = 0.0
    else:
        y = state0.as_vector(sysm)
        t = state0.t

    times = [t]
    rows = [fsi.energies(y)]
    states = [SolutionState.from_vector(sysm, y, t)] if record_states else None
    report = LinearSolveReport(method, 0, 0.0, 0.0)
    max_kin = 0.0
    max_div = 0.0
    bmat = fsi.blocks["B"]
    sl_u3 = sysm.field_slice("u3")
    sl_w3 = sysm.field_slice("w3")
    sl_v = sysm.field_slice("v")

    for step in range(nsteps):
        t_next = t + dt
        b = sysm.S1 @ y / dt + fsi.load_vector(t_next, f, g3)
        g = fsi.dirichlet_values(t_next, inflow)
        b = b - cols @ g[mask]
        b[mask] = g[mask]
        if lu is not None:
            y_next = lu.solve(b)
            res = np.linalg.norm(m_mod @ y_next - b) / max(
                np.linalg.norm(b), 1e-300)
            report = LinearSolveReport("direct_lu", 1, res, 0.0)
        else:
            y_next, report = sparse_solve(
                m_mod, b, method=method, tol=tol,
                pc_slices=fsi.preconditioner_slices())

        w3 = y_next[sl_w3]
        du3 = (y_next[sl_u3] - y[sl_u3]) / dt
        max_kin = max(max_kin, np.linalg.norm(w3 - du3)
                      / max(np.linalg.norm(w3), 1e-300))
        v = y_next[sl_v]
        max_div = max(max_div, np.linalg.norm(bmat @ v)
                      / max(np.linalg.norm(v), 1e-300))

        y, t = y_next, t_next
        times.append(t)
        rows.append(fsi.energies(y))
        if record_states:
            states.append(SolutionState.from_vector(sysm, y, t))
        if progress is not None:
            progress(step + 1, nsteps, t)

    energies = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return TransientResult(
        times=np.array(times), energies=energies,
        final=SolutionState.from_vector(sysm, y, t), states=states,
        report=report, max_kinematic_residual=max_kin,
        max_divergence_residual=max_div)


def step_transient(state: SolutionState, dt, fsi: FsiSystem, f=None,
                   g3=None, inflow=None, method="direct", tol=1e-10):
    """Advance one backward-Euler step from the given state."""
    out = run_transient(fsi, dt, 1, f=f, g3=g3, inflow=inflow,
                        state0=state, method=method, tol=tol)
    return out.final


# ---------------------------------------------------------------------------
# stationary driver


@dataclass
class StationaryResult:
    v: np.ndarray
    p: np.ndarray
    u_bar: np.ndarray
    u3: np.ndarray
    fluid_report: LinearSolveReport
    plate_report: LinearSolveReport


def solve_stationary(fsi: FsiSystem, inflow=None, f=None, g3=None,
                     method="direct", tol=1e-10):
    """Sequential stationary solve: fluid saddle system, then plate.

    The fluid subsystem carries the interface resistance; its solution
    loads the plate right-hand side through the transposed coupling
    block.  There is no feedback to the fluid.
    """
    sysm = fsi.system
    sizes = sysm.sizes
    sl_v, sl_p = sysm.field_slice("v"), sysm.field_slice("p")
    s2 = sysm.S2
    sf = sp.bmat([[s2[sl_v, sl_v], s2[sl_v, sl_p]],
                  [s2[sl_p, sl_v], None]]).tocsr()
    nv, npr = sizes["v"], sizes["p"]
    bf = np.zeros(nv + npr)
    if f is not None:
        bf[:nv] = assembly.volume_load(fsi.mesh, fsi.spaces["v"], f)
    maskf = np.zeros(nv + npr, dtype=bool)
    maskf[:nv] = fsi.spaces["v"].dirichlet
    gf = np.zeros(nv + npr)
    gf[:nv] = fsi.dirichlet_values(0.0, inflow)[sysm.field_slice("v")]
    a2, b2 = apply_dirichlet(sf, bf, maskf, gf)
    xf, rep_f = sparse_solve(a2, b2, method=method, tol=tol,
                             pc_slices=[slice(0, nv + npr)])
    v, p = xf[:nv], xf[nv:]

    b = fsi.blocks
    sp_mat = sp.bmat([[b["P_A"], b["P_B1"]],
                      [b["P_B2"], b["P_C"]]]).tocsr()
    nu, nu3 = sizes["u"], sizes["u3"]
    bp = np.zeros(nu + nu3)
    if g3 is not None:
        bp[nu:] = assembly.plate_load(fsi.mesh, fsi.spaces["u3"], g3)
    bp[nu:] += b["R_VU"].T @ v
    maskp = np.concatenate([fsi.spaces["u"].dirichlet,
                            fsi.spaces["u3"].dirichlet])
    a2p, b2p = apply_dirichlet(sp_mat, bp, maskp)
    xp, rep_p = sparse_solve(a2p, b2p, method=method, tol=tol,
                             pc_slices=[slice(0, nu + nu3)])
    return StationaryResult(v=v, p=p, u_bar=xp[:nu], u3=xp[nu:],
                            fluid_report=rep_f, plate_report=rep_p)


# ---------------------------------------------------------------------------
# limiting-case diagnostics


def interface_diagnostics(fsi: FsiSystem, v, w3=None):
    """Midplane trace norms used by the limiting-case checks.

    Returns the tangential velocity trace norm, the normal slip norm
    (against the plate velocity when given, else the raw normal trace),
    and the resistive stress-jump proxy norm.
    """
    msh, dmv, dmu3 = fsi.mesh, fsi.spaces["v"], fsi.spaces["u3"]

    def qform(weight, use_w3):
        blocks = assembly.interface_coupling_blocks(msh, dmv, dmu3, weight)
        q = v @ (blocks["R_VV"] @ v)
        if use_w3 and w3 is not None:
            q += (-2.0 * v @ (blocks["R_VU"] @ w3)
                  + w3 @ (blocks["R_UU"] @ w3))
        return np.sqrt(max(q, 0.0))

    out = {
        "tangential_trace": qform(np.diag([1.0, 1.0, 0.0]), False),
        "normal_slip": qform(np.diag([0.0, 0.0, 1.0]), True),
    }
    if fsi.interface.khat_inv is None:
        out["stress_jump_proxy"] = 0.0
    else:
        kinv = fsi.interface.khat_inv
        out["stress_jump_proxy"] = qform(
            np.einsum("fab,fbc->fac", kinv, kinv), True)
    return out


def limiting_case_check(fsi: FsiSystem, state, mode):
    """Diagnostics for the impermeable / rigid-plate limit studies."""
    if mode not in ("K_to_zero", "C_to_inf"):
        raise SolverFailure(f"unknown limiting mode {mode!r}")
    w3 = getattr(state, "w3", None)
    out = interface_diagnostics(fsi, state.v, w3)
    out["mode"] = mode
    out["u3_sup"] = float(np.abs(state.u3[0::4]).max())
    return out


# ---------------------------------------------------------------------------
# manufactured solutions and convergence studies


def stokes_manufactured(mu=1.0):
    """Divergence-free polynomial flow with polynomial pressure.

    The velocity derives from the stream-type potential
    psi = x^3 y^2 + y^2 z^3 in the first two components; the third
    component is zero, so the field is solenoidal by construction.
    """

    def vel(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([3 * x1**3 * x2**2 + 3 * x2**2 * x3**3,
                         -3 * x1**2 * x2**3,
                         np.zeros_like(x1)], axis=1)

    def grad(x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        g = np.zeros((x.shape[0], 3, 3))
        g[:, 0, 0] = 9 * x1**2 * x2**2
        g[:, 0, 1] = 6 * x1**3 * x2 + 6 * x2 * x3**3
        g[:, 0, 2] = 9 * x2**2 * x3**2
        g[:, 1, 0] = -6 * x1 * x2**3
        g[:, 1, 1] = -9 * x1**2 * x2**2
        return g

    def pres(x):
        return x[:, 0]**3 + x[:, 1]**3 + x[:, 2]**3

    def force(t, x):
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        lap1 = 18 * x1 * x2**2 + 6 * x1**3 + 6 * x3**3 + 18 * x2**2 * x3
        lap2 = -6 * x2**3 - 18 * x1**2 * x2
        return np.stack([-mu * lap1 + 3 * x1**2,
                         -mu * lap2 + 3 * x2**2,
                         3 * x3**2], axis=1)

    return {"vel": vel, "grad": grad, "pres": pres, "force": force}


def duct_flow_profile(l1, l2, strength=1.0, terms=41):
    """Fully developed axial flow profile in a rectangular duct.

    Returns w(x1, x2) solving -lap w = strength with w = 0 on the duct
    walls, as a truncated double sine series (odd terms only).
    """

    modes = []
    for m in range(1, terms + 1, 2):
        for n in range(1, terms + 1, 2):
            lam = np.pi**2 * ((m / l1)**2 + (n / l2)**2)
            modes.append((m, n, 16.0 * strength / (np.pi**2 * m * n * lam)))

    def w(x1, x2):
        out = np.zeros(np.broadcast(x1, x2).shape)
        for m, n, coeff in modes:
            out += coeff * np.sin(m * np.pi * x1 / l1) \
                * np.sin(n * np.pi * x2 / l2)
        return out

    return w


def _poly_1d(length):
    """Value and derivatives of f(s) = (s (L - s))^2 up to order four."""
    ell = length

    def fun(s, order):
        if order == 0:
            return (s * (ell - s))**2
        if order == 1:
            return 2 * s * (ell - s) * (ell - 2 * s)
        if order == 2:
            return 2 * (ell**2 - 6 * ell * s + 6 * s**2)
        if order == 3:
            return 12 * (2 * s - ell)
        if order == 4:
            return np.full_like(s, 24.0)
        raise ValueError(order)

    return fun


def _cubic_1d():
    """Value and derivatives of f(s) = s^3 up to order four."""

    def fun(s, order):
        if order == 0:
            return s**3
        if order == 1:
            return 3 * s**2
        if order == 2:
            return 6 * s
        if order == 3:
            return np.full_like(s, 6.0)
        if order == 4:
            return np.zeros_like(s)
        raise ValueError(order)

    return fun


def _bending_load(vc, fx, gy):
    """Transverse load of the constant-coefficient bending operator
    applied to the separable deflection fx(x) * gy(y)."""
    c1111, c1122, c1112 = vc[0, 0], vc[0, 1], vc[0, 2]
    c2222, c1222, c1212 = vc[1, 1], vc[1, 2], vc[2, 2]

    def load(t, x):
        x1, x2 = x[:, 0], x[:, 1]
        return (c1111 * fx(x1, 4) * gy(x2, 0)
                + 4 * c1112 * fx(x1, 3) * gy(x2, 1)
                + (2 * c1122 + 4 * c1212) * fx(x1, 2) * gy(x2, 2)
                + 4 * c1222 * fx(x1, 1) * gy(x2, 3)
                + c2222 * fx(x1, 0) * gy(x2, 4))

    return load


@dataclass
class ConvergenceResult:
    case: str
    hs: np.ndarray
    errors: dict
    rates: dict = field(default_factory=dict)

    def __post_init__(self):
        logh = np.log(self.hs)
        for name, errs in self.errors.items():
            safe = np.maximum(errs, 1e-300)
            self.rates[name] = float(np.polyfit(logh, np.log(safe), 1)[0])


def _fluid_error_norms(channel, dm_v, dm_p, v, p, exact):
    pts, w = fe.gauss_rule(4, 3)
    h = np.array(channel.spacing)
    wj = w * h.prod()
    phi = fe.q_basis(2, pts)
    dphi = np.stack([fe.q_basis(2, pts, deriv=tuple(np.eye(3, dtype=int)[a]))
                     / h[a] for a in range(3)])
    psi = fe.q_basis(1, pts)
    origins = channel.nodes[channel.hexes[:, 0]]
    coords = (origins[:, None, :] + pts[None, :, :] * h).reshape(-1, 3)

    v_elem = v[dm_v.elem_dofs].reshape(len(channel.hexes), 27, 3)
    vh = np.einsum("eic,in->enc", v_elem, phi)
    gh = np.einsum("eic,ain->enca", v_elem, dphi)
    ph = np.einsum("ei,in->en", p[dm_p.elem_dofs], psi)

    ne = len(channel.hexes)
    ve = exact["vel"](coords).reshape(ne, -1, 3)
    ge = exact["grad"](coords).reshape(ne, -1, 3, 3)
    pe = exact["pres"](coords).reshape(ne, -1)
    # fix the free pressure constant by matching quadrature means
    vol = wj.sum() * ne
    shift = ((pe - ph) * wj).sum() / vol
    ph = ph + shift

    v_l2 = np.sqrt((((vh - ve)**2).sum(axis=2) * wj).sum())
    v_h1 = np.sqrt((((gh - ge)**2).sum(axis=(2, 3)) * wj).sum())
    p_l2 = np.sqrt((((ph - pe)**2) * wj).sum())
    return {"v_l2": v_l2, "v_h1": v_h1, "p_l2": p_l2}


def _stokes_level(n, mu, exact):
    channel = build_channel_mesh((1.0, 1.0, 1.0), (n, n, 2 * n))
    dm_v = fe.build_dofmap(channel, "Q2_vec3",
                           dirichlet=("inflow", "outflow", "no_slip"))
    dm_p = fe.build_dofmap(channel, "Q1_scalar_broken_sigma")
    blocks = assembly.fluid_blocks(channel, dm_v, dm_p, rho_f=1.0, mu=mu)
    nv, npr = dm_v.ndof, dm_p.ndof
    saddle = sp.bmat([[blocks["A"], -blocks["B"].T],
                      [-blocks["B"], None]]).tocsr()
    rhs = np.zeros(nv + npr)
    rhs[:nv] = assembly.volume_load(channel, dm_v, exact["force"])

    mask = np.zeros(nv + npr, dtype=bool)
    mask[:nv] = dm_v.dirichlet
    mask[nv] = True  # pin one pressure dof; constant fixed post hoc
    vals = np.zeros(nv + npr)
    vnodes = exact["vel"](dm_v.node_coords)
    for c in range(3):
        vals[c:nv:3] = vnodes[:, c]
    a2, b2 = apply_dirichlet(saddle, rhs, mask, vals)
    x, _ = sparse_solve(a2, b2)
    return _fluid_error_norms(channel, dm_v, dm_p, x[:nv], x[nv:], exact)


def _plate_error_norms(channel, dm_u3, u3, fx, gy):
    tab = assembly._sigma_tabulation(channel)
    pts, wj = tab["pts"], tab["wj"]
    h1, h2 = tab["h"]
    quads = channel.sigma.quads
    origins = channel.sigma.nodes[quads[:, 0]]
    coords = origins[:, None, :] + pts[None, :, :] * np.array([h1, h2])
    x1, x2 = coords[..., 0], coords[..., 1]

    u_elem = u3[dm_u3.elem_dofs]
    val = np.einsum("ei,in->en", u_elem, tab["bval"])
    d11 = np.einsum("ei,in->en", u_elem,
                    fe.bfs_tabulate(pts, (2, 0), (h1, h2)))
    d22 = np.einsum("ei,in->en", u_elem,
                    fe.bfs_tabulate(pts, (0, 2), (h1, h2)))
    d12 = np.einsum("ei,in->en", u_elem,
                    fe.bfs_tabulate(pts, (1, 1), (h1, h2)))

    e0 = val - fx(x1, 0) * gy(x2, 0)
    e11 = d11 - fx(x1, 2) * gy(x2, 0)
    e22 = d22 - fx(x1, 0) * gy(x2, 2)
    e12 = d12 - fx(x1, 1) * gy(x2, 1)
    l2 = np.sqrt((e0**2 * wj).sum())
    h2n = np.sqrt(((e11**2 + 2 * e12**2 + e22**2) * wj).sum())
    return {"u3_l2": l2, "u3_h2": h2n}


_PLATE_VC = np.array([[2.0, 0.3, 0.2], [0.3, 1.5, 0.1], [0.2, 0.1, 0.8]])
_MEMBRANE_VA = np.array([[2.0, 0.4, 0.1], [0.4, 1.2, 0.0], [0.1, 0.0, 0.7]])


def _plate_level(n, exact_in_space=False):
    channel = build_channel_mesh((1.0, 1.0, 0.5), (n, n, 2))
    nf = channel.sigma.quads.shape[0]
    triple = assembly.StiffnessTriple.from_voigt(np.eye(3), np.zeros((3, 3)),
                                                 _PLATE_VC)
    data = assembly.InterfaceData.from_tensors(nf, triple)
    if exact_in_space:
        dm_u3 = fe.build_dofmap(channel, "BFS_sigma", dirichlet=None)
        fx, gy = _cubic_1d(), _cubic_1d()
    else:
        dm_u3 = fe.build_dofmap(channel, "BFS_sigma")
        fx, gy = _poly_1d(1.0), _poly_1d(1.0)
    dm_u = fe.build_dofmap(channel, "Q1_vec2_sigma")
    blocks = assembly.plate_blocks(channel, dm_u, dm_u3, data)
    load = _bending_load(_PLATE_VC, fx, gy)
    rhs = assembly.plate_load(channel, dm_u3, load)

    if exact_in_space:
        mask = np.zeros(dm_u3.ndof, dtype=bool)
        for node in channel.sigma.boundary_nodes:
            mask[4 * node:4 * node + 4] = True
        vals = np.zeros(dm_u3.ndof)
        x1, x2 = channel.sigma.nodes[:, 0], channel.sigma.nodes[:, 1]
        vals[0::4] = fx(x1, 0) * gy(x2, 0)
        vals[1::4] = fx(x1, 1) * gy(x2, 0)
        vals[2::4] = fx(x1, 0) * gy(x2, 1)
        vals[3::4] = fx(x1, 1) * gy(x2, 1)
    else:
        mask = dm_u3.dirichlet
        vals = None
    a2, b2 = apply_dirichlet(blocks["P_C"], rhs, mask, vals)
    u3, _ = sparse_solve(a2, b2)
    return _plate_error_norms(channel, dm_u3, u3, fx, gy)


def _membrane_level(n):
    channel = build_channel_mesh((1.0, 1.0, 0.5), (n, n, 2))
    nf = channel.sigma.quads.shape[0]
    triple = assembly.StiffnessTriple.from_voigt(_MEMBRANE_VA,
                                                 np.zeros((3, 3)), np.eye(3))
    data = assembly.InterfaceData.from_tensors(nf, triple)
    dm_u = fe.build_dofmap(channel, "Q1_vec2_sigma")
    dm_u3 = fe.build_dofmap(channel, "BFS_sigma")
    blocks = assembly.plate_blocks(channel, dm_u, dm_u3, data)
    a4 = triple.membrane

    ell1 = ell2 = 1.0

    def gfun(x1, x2):
        return x1 * (ell1 - x1) * x2 * (ell2 - x2)

    def hess(x1, x2):
        gxx = -2 * x2 * (ell2 - x2)
        gyy = -2 * x1 * (ell1 - x1)
        gxy = (ell1 - 2 * x1) * (ell2 - 2 * x2)
        return gxx, gxy, gyy

    def force(t, x):
        x1, x2 = x[:, 0], x[:, 1]
        gxx, gxy, gyy = hess(x1, x2)
        hm = np.zeros((x.shape[0], 2, 2))
        hm[:, 0, 0], hm[:, 0, 1] = gxx, gxy
        hm[:, 1, 0], hm[:, 1, 1] = gxy, gyy
        # both displacement components equal gfun
        return -np.einsum("ijk,njk->ni", a4.sum(axis=3), hm)

    rhs = assembly.inplane_load(channel, dm_u, force)
    a2, b2 = apply_dirichlet(blocks["P_A"], rhs, dm_u.dirichlet)
    u, _ = sparse_solve(a2, b2)

    tab = assembly._sigma_tabulation(channel)
    pts, wj = tab["pts"], tab["wj"]
    h1, h2 = tab["h"]
    quads = channel.sigma.quads
    origins = channel.sigma.nodes[quads[:, 0]]
    coords = origins[:, None, :] + pts[None, :, :] * np.array([h1, h2])
    x1, x2 = coords[..., 0], coords[..., 1]

    u_elem = u[dm_u.elem_dofs].reshape(-1, 4, 2)
    uh = np.einsum("eic,in->enc", u_elem, tab["psi4"])
    guh = np.einsum("eic,ain->enca", u_elem, tab["dpsi4"])
    ue = gfun(x1, x2)
    g1 = (ell1 - 2 * x1) * x2 * (ell2 - x2)
    g2 = x1 * (ell1 - x1) * (ell2 - 2 * x2)
    err_v = (uh[..., 0] - ue)**2 + (uh[..., 1] - ue)**2
    err_g = ((guh[..., 0, 0] - g1)**2 + (guh[..., 0, 1] - g2)**2
             + (guh[..., 1, 0] - g1)**2 + (guh[..., 1, 1] - g2)**2)
    return {"u_l2": np.sqrt((err_v * wj).sum()),
            "u_h1": np.sqrt((err_g * wj).sum())}


def convergence_study(case, levels, mu=1.0):
    """Error decay study for a manufactured solution family.

    case is one of "stokes", "plate", "membrane", "plate_exact";
    levels is a sequence of per-axis element counts.
    """
    runs = []
    if case == "stokes":
        exact = stokes_manufactured(mu)
        runs = [_stokes_level(n, mu, exact) for n in levels]
        hs = np.array([1.0 / n for n in levels])
    elif case == "plate":
        runs = [_plate_level(n) for n in levels]
        hs = np.array([1.0 / n for n in levels])
    elif case == "plate_exact":
        runs = [_plate_level(n, exact_in_space=True) for n in levels]
        hs = np.array([1.0 / n for n in levels])
    elif case == "membrane":
        runs = [_membrane_level(n) for n in levels]
        hs = np.array([1.0 / n for n in levels])
    else:
        raise SolverFailure(f"unknown convergence case {case!r}")
    errors = {k: np.array([r[k] for r in runs]) for k in runs[0]}
    return ConvergenceResult(case=case, hs=hs, errors=errors)
