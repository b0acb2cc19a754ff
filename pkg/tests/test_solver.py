"""Solver-layer tests: linear algebra front end, time stepping,
stationary sequential solves, diagnostics, and convergence smoke runs.

Heavier rate studies and limit sweeps live in the acceptance suite;
here every solve runs on deliberately small meshes.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from platefsi import assembly, mesh, solver
from platefsi.errors import MaxIterations, SingularMatrix, SolverFailure

VC = np.diag([0.5, 0.5, 0.25])
VA = np.diag([2.0, 2.0, 1.0])


def make_fsi(counts=(2, 2, 2), khat=np.eye(3), c_scale=1.0, rho_s=1.0,
             mu=0.5):
    channel = mesh.build_channel_mesh((1.0, 1.0, 1.0), counts)
    nf = channel.sigma.quads.shape[0]
    triple = assembly.StiffnessTriple.from_voigt(VA, np.zeros((3, 3)),
                                                 c_scale * VC)
    data = assembly.InterfaceData.from_tensors(nf, triple, khat=khat,
                                               rho_s_hat=rho_s)
    return solver.FsiSystem(channel, data, rho_f=1.0, mu=mu)


def bump_inflow(t, x):
    prof = 16.0 * x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1])
    return np.stack([0 * prof, 0 * prof, prof], axis=1)


# ---------------------------------------------------------------------------
# sparse_solve


def test_solve_identity():
    b = np.array([3.0, -1.0, 2.0])
    x, rep = solver.sparse_solve(sp.identity(3, format="csr"), b)
    assert np.array_equal(x, b)
    assert rep.method == "direct_lu"


def test_solve_diagonal():
    a = sp.csr_matrix(np.diag([2.0, 4.0]))
    x, _ = solver.sparse_solve(a, np.array([2.0, 8.0]))
    assert np.allclose(x, [1.0, 2.0], atol=1e-15)


def test_solve_spd_both_paths():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((100, 100))
    a = sp.csr_matrix(m.T @ m + np.eye(100))
    b = rng.standard_normal(100)
    x1, r1 = solver.sparse_solve(a, b)
    assert r1.residual <= 1e-10
    x2, r2 = solver.sparse_solve(a, b, method="gmres", tol=1e-12)
    assert r2.residual <= 1e-10
    assert np.allclose(x1, x2, atol=1e-9)


def test_solve_singular_raises():
    with pytest.raises(SingularMatrix):
        solver.sparse_solve(sp.csr_matrix((3, 3)), np.ones(3))


def test_solve_unknown_method():
    with pytest.raises(SolverFailure):
        solver.sparse_solve(sp.identity(2, format="csr"), np.ones(2),
                            method="cg")


def test_solve_max_iterations():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((80, 80))
    a = sp.csr_matrix(m.T @ m + np.eye(80))
    with pytest.raises(MaxIterations):
        solver.sparse_solve(a, rng.standard_normal(80), method="gmres",
                            tol=1e-14, restart=2, maxiter=1)


def test_block_preconditioner_speeds_convergence():
    rng = np.random.default_rng(2)
    blocks = [rng.standard_normal((40, 40)) for _ in range(2)]
    dense = np.zeros((80, 80))
    dense[:40, :40] = blocks[0].T @ blocks[0] + 40 * np.eye(40)
    dense[40:, 40:] = blocks[1].T @ blocks[1] + 40 * np.eye(40)
    dense[:40, 40:] = 0.01 * rng.standard_normal((40, 40))
    a = sp.csr_matrix(dense)
    b = rng.standard_normal(80)
    x, rep = solver.sparse_solve(a, b, method="gmres", tol=1e-12,
                                 pc_slices=[slice(0, 40), slice(40, 80)])
    assert rep.iterations <= 5
    assert rep.residual <= 1e-10


# ---------------------------------------------------------------------------
# Dirichlet elimination


def test_apply_dirichlet_keeps_symmetry_and_values():
    a = sp.csr_matrix(np.array([[4.0, 1.0, 0.0],
                                [1.0, 3.0, 1.0],
                                [0.0, 1.0, 2.0]]))
    b = np.array([1.0, 2.0, 3.0])
    mask = np.array([True, False, False])
    vals = np.array([5.0, 0.0, 0.0])
    a2, b2 = solver.apply_dirichlet(a, b, mask, vals)
    x, _ = solver.sparse_solve(a2, b2)
    assert x[0] == 5.0
    # remaining 2x2 system solved with the constrained column moved over
    sub = np.array([[3.0, 1.0], [1.0, 2.0]])
    rhs = np.array([2.0 - 1.0 * 5.0, 3.0])
    assert np.allclose(x[1:], np.linalg.solve(sub, rhs), atol=1e-14)
    d = (a2 - a2.T)
    assert abs(d).max() == 0.0


# ---------------------------------------------------------------------------
# transient stepping


def test_transient_zero_forcing_stays_zero():
    fsi = make_fsi()
    res = solver.run_transient(fsi, dt=0.05, nsteps=4)
    for name, arr in res.energies.items():
        assert np.array_equal(arr, np.zeros_like(arr)), name
    assert np.abs(res.final.v).max() == 0.0


def test_transient_kinematic_identity():
    fsi = make_fsi()
    res = solver.run_transient(fsi, dt=0.01, nsteps=5,
                               g3=lambda t, x: np.full(x.shape[0], 5.0))
    assert res.max_kinematic_residual <= 1e-10
    assert res.max_divergence_residual <= 1e-9


def test_transient_energy_decays_after_forcing_stops():
    fsi = make_fsi()

    def pulse(t, x):
        return np.where(t <= 0.05, 10.0, 0.0) * np.ones(x.shape[0])

    res = solver.run_transient(fsi, dt=0.01, nsteps=25, g3=pulse)
    total = (res.energies["E_kin_f"] + res.energies["E_el_p"]
             + res.energies["E_kin_p"])
    tail = total[6:]
    assert ((np.diff(tail) <= 1e-12 * tail[0]).all())
    assert tail[0] > 0.0


def test_transient_deflection_sign_follows_load():
    fsi = make_fsi(khat=1e-3 * np.eye(3))
    up = solver.run_transient(fsi, dt=0.01, nsteps=3,
                              g3=lambda t, x: np.full(x.shape[0], 4.0))
    down = solver.run_transient(fsi, dt=0.01, nsteps=3,
                                g3=lambda t, x: np.full(x.shape[0], -4.0))
    assert up.final.u3[0::4].mean() > 0.0
    assert down.final.u3[0::4].mean() < 0.0


def test_transient_dissipation_drops_with_larger_slip():
    g3 = lambda t, x: np.full(x.shape[0], 5.0)
    base = solver.run_transient(make_fsi(khat=np.eye(3)), dt=0.01,
                                nsteps=4, g3=g3)
    loose = solver.run_transient(make_fsi(khat=10 * np.eye(3)), dt=0.01,
                                 nsteps=4, g3=g3)
    assert loose.energies["D_interface"][-1] < base.energies["D_interface"][-1]


def test_step_transient_matches_run():
    fsi = make_fsi()
    g3 = lambda t, x: np.full(x.shape[0], 2.0)
    full = solver.run_transient(fsi, dt=0.02, nsteps=2, g3=g3)
    s0 = solver.SolutionState.zero(fsi.system)
    s1 = solver.step_transient(s0, 0.02, fsi, g3=g3)
    s2 = solver.step_transient(s1, 0.02, fsi, g3=g3)
    assert s2.t == pytest.approx(full.final.t)
    assert np.allclose(s2.u3, full.final.u3, atol=1e-14)


def test_transient_gmres_matches_direct():
    fsi = make_fsi()
    g3 = lambda t, x: np.full(x.shape[0], 5.0)
    direct = solver.run_transient(fsi, dt=0.01, nsteps=3, g3=g3)
    iterative = solver.run_transient(fsi, dt=0.01, nsteps=3, g3=g3,
                                     method="gmres", tol=1e-12)
    assert np.allclose(direct.final.v, iterative.final.v, atol=1e-11)
    assert iterative.report.method == "gmres"


def test_transient_rejects_bad_step():
    fsi = make_fsi()
    with pytest.raises(SolverFailure):
        solver.run_transient(fsi, dt=0.0, nsteps=1)


def test_transient_records_states_when_asked():
    fsi = make_fsi()
    res = solver.run_transient(fsi, dt=0.01, nsteps=3, record_states=True,
                               g3=lambda t, x: np.full(x.shape[0], 1.0))
    assert len(res.states) == 4
    assert res.states[0].t == 0.0
    assert res.states[-1].t == pytest.approx(0.03)


# ---------------------------------------------------------------------------
# stationary solve


def test_stationary_zero_data_zero_solution():
    fsi = make_fsi()
    st = solver.solve_stationary(fsi)
    assert np.abs(st.v).max() == 0.0
    assert np.abs(st.p).max() == 0.0
    assert np.abs(st.u3).max() == 0.0


def test_stationary_linearity_in_inflow():
    fsi = make_fsi(counts=(2, 2, 2))
    one = solver.solve_stationary(fsi, inflow=bump_inflow)
    two = solver.solve_stationary(
        fsi, inflow=lambda t, x: 2.0 * bump_inflow(t, x))
    for a, b in ((one.v, two.v), (one.p, two.p), (one.u3, two.u3)):
        scale = max(np.abs(b).max(), 1e-300)
        assert np.abs(2.0 * a - b).max() <= 1e-10 * scale


def test_stationary_superposition():
    fsi = make_fsi(counts=(2, 2, 2))
    rng = np.random.default_rng(7)
    c1, c2 = rng.uniform(0.5, 2.0, size=2)
    g3a = lambda t, x: c1 * np.sin(3 * x[:, 0])
    g3b = lambda t, x: c2 * x[:, 1]**2
    fa = lambda t, x: np.stack([0 * x[:, 0], 0 * x[:, 0],
                                c1 * x[:, 2]], axis=1)
    ra = solver.solve_stationary(fsi, g3=g3a, f=fa)
    rb = solver.solve_stationary(fsi, g3=g3b, inflow=bump_inflow)
    rab = solver.solve_stationary(
        fsi, g3=lambda t, x: g3a(t, x) + g3b(t, x), f=fa,
        inflow=bump_inflow)
    for pair in (("v",), ("p",), ("u_bar",), ("u3",)):
        name = pair[0]
        a = getattr(ra, name) + getattr(rb, name)
        b = getattr(rab, name)
        scale = max(np.abs(b).max(), 1e-300)
        assert np.abs(a - b).max() <= 1e-10 * scale, name


def test_stationary_duct_oracle():
    # transparent interface, series duct profile prescribed at inflow:
    # the midplane velocity trace reproduces the profile to well under
    # a percent, the deflection stays zero without a plate load, and
    # the pressure is close to linear in the axial coordinate
    mu = 0.5
    fsi = make_fsi(counts=(5, 5, 6), khat=None, mu=mu)
    w = solver.duct_flow_profile(1.0, 1.0, strength=1.0)

    def inflow(t, x):
        prof = w(x[:, 0], x[:, 1])
        return np.stack([0 * prof, 0 * prof, prof], axis=1)

    st = solver.solve_stationary(fsi, inflow=inflow)
    coords = fsi.spaces["v"].node_coords
    on_mid = np.flatnonzero(coords[:, 2] == 0.0)
    v3 = st.v[3 * on_mid + 2]
    wex = w(coords[on_mid, 0], coords[on_mid, 1])
    assert np.linalg.norm(v3 - wex) <= 0.01 * np.linalg.norm(wex)
    assert np.abs(st.u3).max() == 0.0

    pz = fsi.spaces["p"].node_coords[:, 2]
    levels = np.unique(pz)
    means = np.array([st.p[pz == z].mean() for z in levels])
    coef = np.polyfit(levels, means, 1)
    # axial gradient close to -mu * strength, profile close to linear
    assert coef[0] == pytest.approx(-mu, rel=0.1)
    resid = np.abs(np.polyval(coef, levels) - means).max()
    assert resid <= 0.08 * (means.max() - means.min())


def test_stationary_reports_converged(capsys):
    fsi = make_fsi()
    st = solver.solve_stationary(fsi, inflow=bump_inflow)
    assert st.fluid_report.residual <= 1e-10
    assert st.plate_report.residual <= 1e-10


# ---------------------------------------------------------------------------
# diagnostics


def test_interface_diagnostics_matched_fields():
    fsi = make_fsi()
    v = np.zeros(fsi.spaces["v"].ndof)
    v[2::3] = 0.8
    w3 = np.zeros(fsi.spaces["w3"].ndof)
    w3[0::4] = 0.8
    d = solver.interface_diagnostics(fsi, v, w3)
    assert d["normal_slip"] <= 1e-12
    assert d["tangential_trace"] <= 1e-12
    assert d["stress_jump_proxy"] <= 1e-12


def test_interface_diagnostics_tangential():
    fsi = make_fsi()
    v = np.zeros(fsi.spaces["v"].ndof)
    v[0::3] = 1.0  # unit tangential trace over the unit-area midplane
    d = solver.interface_diagnostics(fsi, v)
    assert d["tangential_trace"] == pytest.approx(1.0, rel=1e-12)
    assert d["normal_slip"] == 0.0


def test_limiting_case_check_modes():
    fsi = make_fsi()
    st = solver.solve_stationary(fsi, inflow=bump_inflow)
    d = solver.limiting_case_check(fsi, st, "K_to_zero")
    assert d["mode"] == "K_to_zero"
    assert "u3_sup" in d and "normal_slip" in d
    with pytest.raises(SolverFailure):
        solver.limiting_case_check(fsi, st, "flat_earth")


# ---------------------------------------------------------------------------
# convergence smoke (full rate studies live in the acceptance suite)


def test_plate_exact_bicubic_reproduced():
    res = solver.convergence_study("plate_exact", (3, 5))
    for errs in res.errors.values():
        assert errs.max() <= 1e-9


def test_membrane_rates_smoke():
    res = solver.convergence_study("membrane", (4, 6, 8))
    assert res.rates["u_h1"] == pytest.approx(1.0, abs=0.3)
    assert res.rates["u_l2"] == pytest.approx(2.0, abs=0.5)


def test_unknown_case_rejected():
    with pytest.raises(SolverFailure):
        solver.convergence_study("navier", (2, 3))


def test_manufactured_stokes_is_divergence_free():
    exact = solver.stokes_manufactured()
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, size=(50, 3))
    eps = 1e-6
    div = np.zeros(50)
    for a in range(3):
        dx = np.zeros(3)
        dx[a] = eps
        div += (exact["vel"](x + dx)[:, a] - exact["vel"](x - dx)[:, a]) \
            / (2 * eps)
    assert np.abs(div).max() < 1e-8


def test_manufactured_stokes_force_consistent():
    # check force = -mu lap v + grad p by central differences
    mu = 0.7
    exact = solver.stokes_manufactured(mu)
    rng = np.random.default_rng(10)
    x = rng.uniform(0.1, 0.9, size=(20, 3))
    eps = 1e-5
    lap = np.zeros((20, 3))
    gradp = np.zeros((20, 3))
    for a in range(3):
        dx = np.zeros(3)
        dx[a] = eps
        lap += (exact["vel"](x + dx) - 2 * exact["vel"](x)
                + exact["vel"](x - dx)) / eps**2
        gradp[:, a] = (exact["pres"](x + dx) - exact["pres"](x - dx)) \
            / (2 * eps)
    want = -mu * lap + gradp
    got = exact["force"](0.0, x)
    assert np.abs(got - want).max() < 1e-4


def test_reproducible_bitwise():
    fsi = make_fsi()
    g3 = lambda t, x: np.full(x.shape[0], 3.0)
    a = solver.run_transient(fsi, dt=0.01, nsteps=4, g3=g3)
    b = solver.run_transient(fsi, dt=0.01, nsteps=4, g3=g3)
    assert np.array_equal(a.final.v, b.final.v)
    assert np.array_equal(a.final.u3, b.final.u3)
