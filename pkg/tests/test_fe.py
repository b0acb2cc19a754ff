"""Bases, quadrature, and dof maps."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platefsi import fe
from platefsi.errors import UnsupportedSpace
from platefsi.mesh import build_channel_mesh


# ---------------------------------------------------------------------------
# cubic Hermite pair


def test_hermite_kronecker_table_exact():
    # d^a H[alpha,beta] / dx^a at endpoint b equals delta(a,alpha)delta(b,beta)
    for alpha in (0, 1):
        for beta in (0, 1):
            for a in (0, 1):
                for b in (0, 1):
                    val = fe.hermite_shape(alpha, beta, float(b), deriv=a)
                    expect = 1.0 if (a == alpha and b == beta) else 0.0
                    assert float(val) == expect


def test_hermite_midpoint_value():
    assert float(fe.hermite_shape(0, 1, 0.5)) == pytest.approx(0.5, abs=1e-15)


@given(st.floats(0.0, 1.0, allow_nan=False))
@settings(max_examples=50, deadline=None)
def test_hermite_value_pair_partitions_unity(x):
    total = fe.hermite_shape(0, 0, x) + fe.hermite_shape(0, 1, x)
    assert abs(float(total) - 1.0) <= 1e-14


# ---------------------------------------------------------------------------
# Lagrange tensor bases


def test_q1_center_value():
    vals = fe.q_basis(1, np.array([[0.5, 0.5, 0.5]]))
    assert np.allclose(vals, 0.125)


def test_q2_nodal_kronecker():
    nodes1d = np.array([0.0, 0.5, 1.0])
    pts = np.array([[x, y, z] for z in nodes1d for y in nodes1d for x in nodes1d])
    vals = fe.q_basis(2, pts)
    assert np.allclose(vals, np.eye(27), atol=1e-14)


def test_q3_nodal_kronecker():
    nodes1d = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    pts = np.array([[x, y] for y in nodes1d for x in nodes1d])
    vals = fe.q_basis(3, pts)
    assert np.allclose(vals, np.eye(16), atol=1e-13)


@given(st.integers(1, 3),
       st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=2, max_size=2))
@settings(max_examples=60, deadline=None)
def test_q_partition_of_unity(order, xy):
    pts = np.array([xy])
    vals = fe.q_basis(order, pts)
    assert abs(vals.sum() - 1.0) <= 1e-12
    d1 = fe.q_basis(order, pts, deriv=(1, 0))
    assert abs(d1.sum()) <= 1e-11


def test_unsupported_order():
    with pytest.raises(UnsupportedSpace):
        fe.q_basis(4, np.array([[0.5]]))


# ---------------------------------------------------------------------------
# Gauss rules


def test_gauss_two_point_classic():
    pts, w = fe.gauss_rule(2, 1)
    ref = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))
    assert np.allclose(np.sort(pts[:, 0]), ref)
    assert np.allclose(w, 0.5)


@pytest.mark.parametrize("n,dim", [(1, 1), (2, 2), (3, 3), (4, 2), (5, 1)])
def test_gauss_weights_sum_to_unit_volume(n, dim):
    _, w = fe.gauss_rule(n, dim)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_gauss_three_point_integrates_quintic():
    pts, w = fe.gauss_rule(3, 1)
    val = (w * pts[:, 0] ** 5).sum()
    assert abs(val - 1.0 / 6.0) <= 1e-15


# ---------------------------------------------------------------------------
# C^1 quad element


def test_bfs_nodal_kronecker_exact():
    lengths = (1.0, 1.0)
    for c, (b1, b2) in enumerate(fe.BFS_CORNERS):
        pt = np.array([[float(b1), float(b2)]])
        for t, (a1, a2) in enumerate(fe.BFS_KINDS):
            vals = fe.bfs_tabulate(pt, deriv=(a1, a2), lengths=lengths)
            expect = np.zeros(16)
            expect[4 * c + t] = 1.0
            assert np.array_equal(vals[:, 0], expect)


def test_bfs_reproduces_bilinear_exactly():
    lengths = (0.4, 0.7)

    def w(x, y, d1, d2):
        # w = x*y on the physical element with origin (0.2, 0.1)
        f = [x, 1.0, 0.0][d1] if d1 <= 1 else 0.0
        g = [y, 1.0, 0.0][d2] if d2 <= 1 else 0.0
        return f * g

    dofs = fe.bfs_local_dofs(w, origin=(0.2, 0.1), lengths=lengths)
    ref = np.linspace(0.0, 1.0, 5)
    pts = np.array([[a, b] for a in ref for b in ref])
    vals = fe.bfs_interpolate(dofs, pts, lengths=lengths)
    phys = np.array([0.2, 0.1]) + pts * np.array(lengths)
    exact = phys[:, 0] * phys[:, 1]
    assert np.max(np.abs(vals - exact)) <= 1e-13


def test_bfs_reproduces_full_bicubic():
    rng = np.random.default_rng(3)
    coef = rng.normal(size=(4, 4))
    lengths = (0.9, 1.3)
    origin = (-0.3, 0.5)

    def w(x, y, d1, d2):
        total = 0.0
        for p in range(4):
            for q in range(4):
                cx = np.polyder(np.poly1d([0] * (3 - p) + [1] + [0] * p), d1)(x)
                cy = np.polyder(np.poly1d([0] * (3 - q) + [1] + [0] * q), d2)(y)
                total += coef[p, q] * cx * cy
        return total

    dofs = fe.bfs_local_dofs(w, origin=origin, lengths=lengths)
    ref = np.linspace(0.0, 1.0, 5)
    pts = np.array([[a, b] for a in ref for b in ref])
    for deriv in ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0)):
        vals = fe.bfs_interpolate(dofs, pts, lengths=lengths, deriv=deriv)
        phys = np.array(origin) + pts * np.array(lengths)
        exact = np.array([w(x, y, *deriv) for x, y in phys])
        scale = max(1.0, np.max(np.abs(exact)))
        assert np.max(np.abs(vals - exact)) <= 1e-11 * scale


def test_bfs_interpolation_fourth_order():
    # interpolate sin(pi x) sin(pi y) on a single element of shrinking size
    def make_fun(h):
        def w(x, y, d1, d2):
            fx = [np.sin, np.cos, lambda t: -np.sin(t)][d1](np.pi * x) * np.pi ** d1
            fy = [np.sin, np.cos, lambda t: -np.sin(t)][d2](np.pi * y) * np.pi ** d2
            return fx * fy
        return w

    ref = np.linspace(0.0, 1.0, 9)
    pts = np.array([[a, b] for a in ref for b in ref])
    errs = []
    for h in (0.2, 0.1):
        w = make_fun(h)
        dofs = fe.bfs_local_dofs(w, origin=(0.3, 0.3), lengths=(h, h))
        vals = fe.bfs_interpolate(dofs, pts, lengths=(h, h))
        phys = np.array([0.3, 0.3]) + pts * h
        exact = np.sin(np.pi * phys[:, 0]) * np.sin(np.pi * phys[:, 1])
        errs.append(np.max(np.abs(vals - exact)))
    ratio = errs[0] / errs[1]
    assert 8.0 <= ratio <= 32.0  # fourth-order: halving h gains ~16x


def test_bfs_c1_across_shared_edge():
    # two elements sharing the edge x = 0.5; same dofs on shared nodes
    rng = np.random.default_rng(11)
    lengths = (0.5, 0.5)
    node_dofs = {n: rng.normal(size=4) for n in
                 [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]}

    def local(elem):
        vals = np.empty(16)
        for c, (b1, b2) in enumerate(fe.BFS_CORNERS):
            vals[4 * c: 4 * c + 4] = node_dofs[(elem + b1, b2)]
        return vals

    ts = np.linspace(0.0, 1.0, 7)
    left = np.array([[1.0, t] for t in ts])
    right = np.array([[0.0, t] for t in ts])
    for deriv in ((0, 0), (1, 0), (0, 1), (1, 1), (0, 2)):
        vl = fe.bfs_interpolate(local(0), left, lengths=lengths, deriv=deriv)
        vr = fe.bfs_interpolate(local(1), right, lengths=lengths, deriv=deriv)
        assert np.max(np.abs(vl - vr)) <= 1e-12


# ---------------------------------------------------------------------------
# dof maps


def test_velocity_dofmap_counts_and_trace():
    mesh = build_channel_mesh((1.0, 1.0, 1.0), (1, 1, 2))
    dm = fe.build_dofmap(mesh, "Q2_vec3")
    assert dm.ndof == 3 * 3 * 3 * 5
    assert dm.elem_dofs.shape == (2, 81)
    assert dm.sigma_trace_dofs.shape == (1, 27)
    # trace nodes sit at the midplane
    znodes = dm.node_coords[dm.sigma_trace_dofs[0][::3] // 3, 2]
    assert np.all(znodes == 0.0)


def test_velocity_trace_continuity():
    mesh = build_channel_mesh((1.0, 1.0, 1.0), (2, 2, 2))
    dm = fe.build_dofmap(mesh, "Q2_vec3")
    rng = np.random.default_rng(5)
    v = rng.normal(size=dm.ndof)
    # evaluate the velocity from the element below and above a sigma facet
    pts2d = np.array([[0.3, 0.6], [0.9, 0.1]])
    below = fe.q_basis(2, np.column_stack([pts2d, np.ones(2)]))
    above = fe.q_basis(2, np.column_stack([pts2d, np.zeros(2)]))
    q = 1
    eminus = mesh.sigma_elem_minus[q]
    eplus = mesh.sigma_elem_plus[q]
    for comp in range(3):
        dm_minus = dm.elem_dofs[eminus][comp::3]
        dm_plus = dm.elem_dofs[eplus][comp::3]
        vals_minus = v[dm_minus] @ below
        vals_plus = v[dm_plus] @ above
        assert np.allclose(vals_minus, vals_plus, atol=1e-13)


def test_pressure_dofmap_broken_at_midplane():
    mesh = build_channel_mesh((1.0, 1.0, 1.0), (1, 1, 2))
    dm = fe.build_dofmap(mesh, "Q1_scalar_broken_sigma")
    assert dm.ndof == 16  # 12 grid vertices + 4 duplicated midplane nodes
    lower = set(dm.elem_dofs[0].tolist())
    upper = set(dm.elem_dofs[1].tolist())
    assert not lower & upper  # fissure: no shared pressure dof across sigma
    assert dm.n_free == 16


def test_inplane_dofmap_clamped():
    mesh = build_channel_mesh((1.0, 1.0, 1.0), (2, 2, 2))
    dm = fe.build_dofmap(mesh, "Q1_vec2_sigma")
    assert dm.ndof == 18
    assert dm.n_free == 2  # only the center node remains


def test_deflection_dofmap_counts():
    mesh1 = build_channel_mesh((1.0, 1.0, 1.0), (1, 1, 2))
    dm1 = fe.build_dofmap(mesh1, "BFS_sigma")
    assert dm1.ndof == 16
    assert dm1.n_free == 0  # every node is on the clamped edge

    mesh2 = build_channel_mesh((1.0, 1.0, 1.0), (2, 2, 2))
    dm2 = fe.build_dofmap(mesh2, "BFS_sigma")
    assert dm2.ndof == 36
    assert dm2.n_free == 4  # all four dof kinds of the center node

    dm2free = fe.build_dofmap(mesh2, "BFS_sigma", dirichlet=None)
    assert dm2free.n_free == 36


def test_unknown_space_rejected():
    mesh = build_channel_mesh((1.0, 1.0, 1.0), (1, 1, 2))
    with pytest.raises(UnsupportedSpace):
        fe.build_dofmap(mesh, "P2_tet")
