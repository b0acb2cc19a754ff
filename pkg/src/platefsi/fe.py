"""Reference bases, quadrature, and degree-of-freedom maps.

Scalar building blocks are tensor products on [0,1]^d:

* Lagrange bases of order 1..3 (equispaced nodes),
* cubic Hermite value/slope pairs, and their tensor product, a 16-dof
  C^1 quadrilateral element whose dofs are value, both first
  derivatives, and the mixed second derivative at each corner.

Element dof tables for the channel mesh are built here for the four
spaces used by the coupled solver: triquadratic vector velocity,
trilinear pressure duplicated across the interface plane, bilinear
in-plane plate displacement, and the C^1 deflection space.
"""

from __future__ import annotations

import numpy as np

from .errors import UnsupportedSpace
from .mesh import TAG_INFLOW, TAG_NO_SLIP, TAG_OUTFLOW, ChannelMesh

# local dof ordering of the C^1 quad: dof = 4*corner + kind where
# corners run counterclockwise from the lower-left and kind indexes
# (value, d/dx1, d/dx2, d2/dx1dx2)
BFS_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
BFS_KINDS = ((0, 0), (1, 0), (0, 1), (1, 1))


def hermite_shape(alpha, beta, x, deriv=0):
    """Cubic Hermite shape function on [0,1].

    alpha selects the interpolated quantity (0 value, 1 slope), beta the
    endpoint (0 left, 1 right); deriv <= 3 picks a derivative order.
    The four cubics satisfy d^a H[alpha,beta] / dx^a (b) =
    delta(a,alpha) * delta(b,beta) for a, b in {0,1}.
    """
    x = np.asarray(x, dtype=float)
    key = (int(alpha), int(beta), int(deriv))
    if alpha not in (0, 1) or beta not in (0, 1):
        raise ValueError("alpha and beta must be 0 or 1")
    if deriv < 0:
        raise ValueError("deriv must be >= 0")
    if deriv > 3:
        return np.zeros_like(x)
    table = {
        (0, 0, 0): lambda t: (2.0 * t + 1.0) * (t - 1.0) ** 2,
        (0, 0, 1): lambda t: 6.0 * t * (t - 1.0),
        (0, 0, 2): lambda t: 12.0 * t - 6.0,
        (0, 0, 3): lambda t: np.full_like(t, 12.0),
        (1, 0, 0): lambda t: t * (t - 1.0) ** 2,
        (1, 0, 1): lambda t: (t - 1.0) * (3.0 * t - 1.0),
        (1, 0, 2): lambda t: 6.0 * t - 4.0,
        (1, 0, 3): lambda t: np.full_like(t, 6.0),
        (0, 1, 0): lambda t: t * t * (3.0 - 2.0 * t),
        (0, 1, 1): lambda t: 6.0 * t * (1.0 - t),
        (0, 1, 2): lambda t: 6.0 - 12.0 * t,
        (0, 1, 3): lambda t: np.full_like(t, -12.0),
        (1, 1, 0): lambda t: t * t * (t - 1.0),
        (1, 1, 1): lambda t: t * (3.0 * t - 2.0),
        (1, 1, 2): lambda t: 6.0 * t - 2.0,
        (1, 1, 3): lambda t: np.full_like(t, 6.0),
    }
    return table[key](x)


def lagrange_1d(order, x, deriv=0):
    """Equispaced Lagrange basis values on [0,1]; shape (order+1, len(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if order == 1:
        polys = {
            0: (lambda t: 1.0 - t, lambda t: t),
            1: (lambda t: np.full_like(t, -1.0), lambda t: np.full_like(t, 1.0)),
        }
    elif order == 2:
        polys = {
            0: (lambda t: (2.0 * t - 1.0) * (t - 1.0),
                lambda t: 4.0 * t * (1.0 - t),
                lambda t: t * (2.0 * t - 1.0)),
            1: (lambda t: 4.0 * t - 3.0,
                lambda t: 4.0 - 8.0 * t,
                lambda t: 4.0 * t - 1.0),
            2: (lambda t: np.full_like(t, 4.0),
                lambda t: np.full_like(t, -8.0),
                lambda t: np.full_like(t, 4.0)),
        }
    elif order == 3:
        polys = {
            0: (lambda t: 1.0 + t * (-5.5 + t * (9.0 - 4.5 * t)),
                lambda t: t * (9.0 + t * (-22.5 + 13.5 * t)),
                lambda t: t * (-4.5 + t * (18.0 - 13.5 * t)),
                lambda t: t * (1.0 + t * (-4.5 + 4.5 * t))),
            1: (lambda t: -5.5 + t * (18.0 - 13.5 * t),
                lambda t: 9.0 + t * (-45.0 + 40.5 * t),
                lambda t: -4.5 + t * (36.0 - 40.5 * t),
                lambda t: 1.0 + t * (-9.0 + 13.5 * t)),
            2: (lambda t: 18.0 - 27.0 * t,
                lambda t: -45.0 + 81.0 * t,
                lambda t: 36.0 - 81.0 * t,
                lambda t: -9.0 + 27.0 * t),
            3: (lambda t: np.full_like(t, -27.0),
                lambda t: np.full_like(t, 81.0),
                lambda t: np.full_like(t, -81.0),
                lambda t: np.full_like(t, 27.0)),
        }
    else:
        raise UnsupportedSpace(f"Lagrange order {order} not supported")
    if deriv < 0:
        raise ValueError("deriv must be >= 0")
    if deriv > order:
        return np.zeros((order + 1, x.size))
    if deriv not in polys:
        raise ValueError(f"derivative order {deriv} not tabulated")
    return np.stack([f(x) for f in polys[deriv]])


def q_basis(order, points, deriv=None):
    """Tensor-product Lagrange basis at points in [0,1]^d.

    points has shape (npts, d); deriv is a length-d tuple of per-axis
    derivative orders (default all zero).  Returns ((order+1)^d, npts)
    with the first axis index running fastest in the basis numbering.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dim = pts.shape[1]
    if deriv is None:
        deriv = (0,) * dim
    if len(deriv) != dim:
        raise ValueError("deriv length must match point dimension")
    per_axis = [lagrange_1d(order, pts[:, a], deriv[a]) for a in range(dim)]
    n1 = order + 1
    out = per_axis[0]
    for a in range(1, dim):
        # new index = old + n1^a * axis-a index
        out = np.einsum("in,jn->jin", out, per_axis[a]).reshape(-1, pts.shape[0])
    return out


def gauss_rule(npts, dim):
    """Tensor Gauss-Legendre rule on [0,1]^dim; returns (points, weights)."""
    if npts < 1:
        raise ValueError("need at least one point per axis")
    xi, wi = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * (xi + 1.0)
    w = 0.5 * wi
    if dim == 1:
        return x[:, None], w
    axes = [x] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.ones(pts.shape[0])
    for g in wgrids:
        weights = weights * g.reshape(-1)
    return pts, weights


def bfs_tabulate(points, deriv=(0, 0), lengths=(1.0, 1.0)):
    """C^1 quad basis table at reference points in [0,1]^2.

    The element is a physical rectangle with side lengths `lengths`; dofs
    are physical derivatives, so shape values carry the length scalings
    L^alpha and derivative requests divide by L^m per axis.  Returns
    (16, npts) in the local ordering 4*corner + kind.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    l1, l2 = float(lengths[0]), float(lengths[1])
    m1, m2 = deriv
    out = np.empty((16, pts.shape[0]))
    for c, (b1, b2) in enumerate(BFS_CORNERS):
        for t, (a1, a2) in enumerate(BFS_KINDS):
            f1 = hermite_shape(a1, b1, pts[:, 0], m1) * l1 ** (a1 - m1)
            f2 = hermite_shape(a2, b2, pts[:, 1], m2) * l2 ** (a2 - m2)
            out[4 * c + t] = f1 * f2
    return out


def bfs_interpolate(dofs, points, lengths=(1.0, 1.0), deriv=(0, 0)):
    """Evaluate a C^1-quad interpolant from its 16 local dofs."""
    table = bfs_tabulate(points, deriv=deriv, lengths=lengths)
    return np.asarray(dofs) @ table


def bfs_local_dofs(fun, origin, lengths, eps=None):
    """Exact local dof vector of a callable w(x1, x2) on one rectangle.

    fun must accept (x1, x2, d1, d2) and return the requested derivative;
    used by tests and interpolation helpers.
    """
    x0, y0 = origin
    l1, l2 = lengths
    vals = np.empty(16)
    for c, (b1, b2) in enumerate(BFS_CORNERS):
        x, y = x0 + b1 * l1, y0 + b2 * l2
        for t, (a1, a2) in enumerate(BFS_KINDS):
            vals[4 * c + t] = fun(x, y, a1, a2)
    return vals


# ---------------------------------------------------------------------------
# dof maps on the channel mesh

SPACE_KINDS = ("Q2_vec3", "Q1_scalar_broken_sigma", "Q1_vec2_sigma", "BFS_sigma")


class DofMap:
    """Element-to-global dof tables for one field on the channel mesh.

    Attributes common to all kinds: kind, ndof, elem_dofs (one row per
    entity: hexes for 3d spaces, interface quads for plate spaces),
    dirichlet (bool mask over dofs, flagged but never eliminated here).
    """

    def __init__(self, kind, ndof, elem_dofs, dirichlet):
        self.kind = kind
        self.ndof = int(ndof)
        self.elem_dofs = elem_dofs
        self.dirichlet = dirichlet

    @property
    def n_free(self):
        return int(self.ndof - self.dirichlet.sum())


def _q2_grid_coords(mesh: ChannelMesh):
    n1, n2, n3 = mesh.counts
    l1, l2, l3 = mesh.dims
    xs = np.linspace(0.0, l1, 2 * n1 + 1)
    ys = np.linspace(0.0, l2, 2 * n2 + 1)
    zs = np.linspace(-l3, l3, 2 * n3 + 1)
    zs[n3] = 0.0
    return xs, ys, zs


def build_dofmap(mesh: ChannelMesh, kind, dirichlet="default") -> DofMap:
    """Build the dof map for one of the supported spaces.

    dirichlet:
      * Q2_vec3: iterable of tag names to constrain; default
        ("inflow", "no_slip").  All three components are constrained on
        every velocity node of a constrained facet.
      * Q1_scalar_broken_sigma: ignored (pressure carries no essential
        conditions).
      * Q1_vec2_sigma / BFS_sigma: "clamped" (default) removes all dofs
        on plate-edge nodes; None leaves the space unconstrained.
    """
    if kind == "Q2_vec3":
        return _build_velocity_dofmap(mesh, dirichlet)
    if kind == "Q1_scalar_broken_sigma":
        return _build_pressure_dofmap(mesh)
    if kind == "Q1_vec2_sigma":
        return _build_inplane_dofmap(mesh, dirichlet)
    if kind == "BFS_sigma":
        return _build_deflection_dofmap(mesh, dirichlet)
    raise UnsupportedSpace(f"unknown space kind {kind!r}")


def _build_velocity_dofmap(mesh, dirichlet):
    n1, n2, n3 = mesh.counts
    if dirichlet == "default":
        dirichlet = ("inflow", "no_slip")
    tagset = set(dirichlet or ())
    bad = tagset - {"inflow", "outflow", "no_slip"}
    if bad:
        raise UnsupportedSpace(f"unknown boundary tags {sorted(bad)}")
    g1, g2, g3 = 2 * n1 + 1, 2 * n2 + 1, 2 * n3 + 1
    nn = g1 * g2 * g3

    def nid(i, j, k):
        return i + g1 * (j + g2 * k)

    ne = n1 * n2 * n3
    elem_dofs = np.empty((ne, 81), dtype=np.int64)
    for e3 in range(n3):
        for e2 in range(n2):
            for e1 in range(n1):
                e = e1 + n1 * (e2 + n2 * e3)
                loc = 0
                for c in range(3):
                    for b in range(3):
                        for a in range(3):
                            node = nid(2 * e1 + a, 2 * e2 + b, 2 * e3 + c)
                            for comp in range(3):
                                elem_dofs[e, 3 * loc + comp] = 3 * node + comp
                            loc += 1

    node_dir = np.zeros(nn, dtype=bool)
    ii, jj, kk = np.meshgrid(np.arange(g1), np.arange(g2), np.arange(g3),
                             indexing="ij")

    def flat(arr):
        # node index layout is i fastest, then j, then k
        return arr.transpose(2, 1, 0).reshape(-1)

    lateral = (ii == 0) | (ii == g1 - 1) | (jj == 0) | (jj == g2 - 1)
    if "no_slip" in tagset:
        node_dir |= flat(lateral)
    if "inflow" in tagset:
        node_dir |= flat(kk == 0)
    if "outflow" in tagset:
        node_dir |= flat(kk == g3 - 1)
    dirichlet_mask = np.repeat(node_dir, 3)

    dm = DofMap("Q2_vec3", 3 * nn, elem_dofs, dirichlet_mask)
    xs, ys, zs = _q2_grid_coords(mesh)
    coords = np.empty((nn, 3))
    coords[:, 0] = np.tile(xs, g2 * g3)
    coords[:, 1] = np.tile(np.repeat(ys, g1), g3)
    coords[:, 2] = np.repeat(zs, g1 * g2)
    dm.node_coords = coords
    dm.grid_shape = (g1, g2, g3)

    # trace table on interface facets: 9 velocity nodes per facet in
    # 2d-lexicographic order, components interleaved
    nq = mesh.sigma.quads.shape[0]
    trace = np.empty((nq, 27), dtype=np.int64)
    kmid2 = n3  # q2 k-level of the midplane
    for e2 in range(n2):
        for e1 in range(n1):
            q = e1 + n1 * e2
            loc = 0
            for b in range(3):
                for a in range(3):
                    node = nid(2 * e1 + a, 2 * e2 + b, kmid2)
                    for comp in range(3):
                        trace[q, 3 * loc + comp] = 3 * node + comp
                    loc += 1
    dm.sigma_trace_dofs = trace
    return dm


def _build_pressure_dofmap(mesh):
    n1, n2, n3 = mesh.counts
    kmid = n3 // 2
    nbase = (n1 + 1) * (n2 + 1) * (n3 + 1)
    ndup = (n1 + 1) * (n2 + 1)

    def nid(i, j, k):
        return i + (n1 + 1) * (j + (n2 + 1) * k)

    ne = n1 * n2 * n3
    elem_dofs = np.empty((ne, 8), dtype=np.int64)
    for e3 in range(n3):
        for e2 in range(n2):
            for e1 in range(n1):
                e = e1 + n1 * (e2 + n2 * e3)
                loc = 0
                for c in (0, 1):
                    for b in (0, 1):
                        for a in (0, 1):
                            i, j, k = e1 + a, e2 + b, e3 + c
                            if k == kmid and e3 >= kmid:
                                dof = nbase + i + (n1 + 1) * j
                            else:
                                dof = nid(i, j, k)
                            elem_dofs[e, loc] = dof
                            loc += 1
    dm = DofMap("Q1_scalar_broken_sigma", nbase + ndup, elem_dofs,
                np.zeros(nbase + ndup, dtype=bool))
    coords = np.empty((nbase + ndup, 3))
    coords[:nbase] = mesh.nodes
    dup = np.arange(ndup)
    coords[nbase:] = mesh.nodes[nid(dup % (n1 + 1), dup // (n1 + 1), kmid)]
    dm.node_coords = coords
    dm.n_base = nbase
    return dm


def _build_inplane_dofmap(mesh, dirichlet):
    if dirichlet == "default":
        dirichlet = "clamped"
    sg = mesh.sigma
    nn = sg.nodes.shape[0]
    n1 = mesh.counts[0]
    nq = sg.quads.shape[0]
    elem_dofs = np.empty((nq, 8), dtype=np.int64)
    for e2 in range(mesh.counts[1]):
        for e1 in range(n1):
            q = e1 + n1 * e2
            loc = 0
            # counterclockwise corners to match the C^1 quad convention
            for (a, b) in BFS_CORNERS:
                node = (e1 + a) + (n1 + 1) * (e2 + b)
                for comp in range(2):
                    elem_dofs[q, loc] = 2 * node + comp
                    loc += 1
    mask = np.zeros(2 * nn, dtype=bool)
    if dirichlet == "clamped":
        for node in sg.boundary_nodes:
            mask[2 * node] = True
            mask[2 * node + 1] = True
    elif dirichlet is not None:
        raise UnsupportedSpace(f"unknown dirichlet spec {dirichlet!r}")
    dm = DofMap("Q1_vec2_sigma", 2 * nn, elem_dofs, mask)
    dm.node_coords = sg.nodes
    return dm


def _build_deflection_dofmap(mesh, dirichlet):
    if dirichlet == "default":
        dirichlet = "clamped"
    sg = mesh.sigma
    nn = sg.nodes.shape[0]
    n1 = mesh.counts[0]
    nq = sg.quads.shape[0]
    elem_dofs = np.empty((nq, 16), dtype=np.int64)
    for e2 in range(mesh.counts[1]):
        for e1 in range(n1):
            q = e1 + n1 * e2
            for c, (a, b) in enumerate(BFS_CORNERS):
                node = (e1 + a) + (n1 + 1) * (e2 + b)
                for t in range(4):
                    elem_dofs[q, 4 * c + t] = 4 * node + t
    mask = np.zeros(4 * nn, dtype=bool)
    if dirichlet == "clamped":
        for node in sg.boundary_nodes:
            mask[4 * node: 4 * node + 4] = True
    elif dirichlet is not None:
        raise UnsupportedSpace(f"unknown dirichlet spec {dirichlet!r}")
    dm = DofMap("BFS_sigma", 4 * nn, elem_dofs, mask)
    dm.node_coords = sg.nodes
    return dm
