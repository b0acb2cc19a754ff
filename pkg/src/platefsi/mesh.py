"""Structured meshes.

Two mesh families are provided:

* a channel mesh: an axis-aligned hexahedral grid on
  (0, L1) x (0, L2) x (-L3, L3) whose element layers are split evenly
  above and below the midplane x3 = 0, so the plate interface is a
  conforming layer of element faces;
* a voxel unit-cell mesh on (0, 1)^2 x (-1/2, 1/2) described by a solid
  mask and integer yarn labels, used by the homogenization and
  permeability solvers.

All grids are uniform per axis, so every element has a constant diagonal
Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DisconnectedSolid,
    EmptyPhase,
    NonPositiveDimension,
    OddLayerCount,
    ParseError,
)

# Boundary facet tags.
TAG_INFLOW = 0    # x3 = -L3, flow enters here
TAG_OUTFLOW = 1   # x3 = +L3, zero normal stress
TAG_NO_SLIP = 2   # lateral walls
TAG_NAMES = {TAG_INFLOW: "inflow", TAG_OUTFLOW: "outflow", TAG_NO_SLIP: "no_slip"}


@dataclass(frozen=True)
class SigmaMesh:
    """Quadrilateral mesh of the interface plane x3 = 0."""

    nodes: np.ndarray      # (ns, 2) in-plane coordinates
    quads: np.ndarray      # (nq, 4) corner indices, counterclockwise
    node3d: np.ndarray     # (ns,) index of the matching 3d mesh node
    boundary_nodes: np.ndarray  # (nb,) indices of nodes on the plate edge


@dataclass(frozen=True)
class ChannelMesh:
    dims: tuple            # (L1, L2, L3); the channel spans x3 in (-L3, L3)
    counts: tuple          # elements per axis (n1, n2, n3), n3 even
    nodes: np.ndarray      # (nn, 3) vertex coordinates
    hexes: np.ndarray      # (ne, 8) vertex connectivity, VTK ordering
    boundary_facets: np.ndarray  # (nb, 4) vertex quadruples on the boundary
    boundary_tags: np.ndarray    # (nb,) one of the TAG_* constants
    boundary_elems: np.ndarray   # (nb,) adjacent element index
    sigma_facets: np.ndarray     # (nf, 4) vertex quadruples on x3 = 0
    sigma_elem_minus: np.ndarray  # (nf,) element below each interface facet
    sigma_elem_plus: np.ndarray   # (nf,) element above each interface facet
    sigma: SigmaMesh

    @property
    def spacing(self):
        n1, n2, n3 = self.counts
        l1, l2, l3 = self.dims
        return (l1 / n1, l2 / n2, 2.0 * l3 / n3)

    def node_index(self, i, j, k):
        n1, n2, _ = self.counts
        return i + (n1 + 1) * (j + (n2 + 1) * np.asarray(k))


def _check_channel_args(dims, counts):
    if len(dims) != 3 or len(counts) != 3:
        raise NonPositiveDimension("dims and counts must have three entries")
    if any(not (d > 0.0) for d in dims):
        raise NonPositiveDimension(f"dims must be positive, got {tuple(dims)}")
    if any(int(n) != n or n <= 0 for n in counts):
        raise NonPositiveDimension(f"counts must be positive integers, got {tuple(counts)}")
    if counts[2] % 2 != 0:
        raise OddLayerCount(
            f"count across the channel thickness must be even, got {counts[2]}")


def build_channel_mesh(dims, counts) -> ChannelMesh:
    """Build the two-sided channel grid with an interface-conforming layer.

    Parameters
    ----------
    dims : (L1, L2, L3)
        Cross-section lengths and half-height; the mesh spans
        (0,L1) x (0,L2) x (-L3,L3).
    counts : (n1, n2, n3)
        Elements per axis.  n3 must be even so that x3 = 0 is a node layer.

    The node layer at the midplane is set to exactly 0.0 so interface
    facets can be located by equality.
    """
    _check_channel_args(dims, counts)
    l1, l2, l3 = float(dims[0]), float(dims[1]), float(dims[2])
    n1, n2, n3 = int(counts[0]), int(counts[1]), int(counts[2])

    xs = np.linspace(0.0, l1, n1 + 1)
    ys = np.linspace(0.0, l2, n2 + 1)
    zs = np.linspace(-l3, l3, n3 + 1)
    zs[n3 // 2] = 0.0  # force a bit-exact midplane
    nodes = np.zeros(((n1 + 1) * (n2 + 1) * (n3 + 1), 3))
    xg, yg, zg = np.meshgrid(xs, ys, zs, indexing="ij")
    # node index = i + (n1+1)*(j + (n2+1)*k), i fastest
    order = np.arange(n1 + 1)[:, None, None] + (n1 + 1) * (
        np.arange(n2 + 1)[None, :, None] + (n2 + 1) * np.arange(n3 + 1)[None, None, :])
    nodes[order.ravel()] = np.stack([xg, yg, zg], axis=-1).reshape(-1, 3)

    def nid(i, j, k):
        return i + (n1 + 1) * (j + (n2 + 1) * k)

    ei, ej, ek = np.meshgrid(np.arange(n1), np.arange(n2), np.arange(n3),
                             indexing="ij")
    ei, ej, ek = ei.ravel(), ej.ravel(), ek.ravel()
    # element index = e1 + n1*(e2 + n2*e3)
    eorder = np.argsort(ei + n1 * (ej + n2 * ek), kind="stable")
    ei, ej, ek = ei[eorder], ej[eorder], ek[eorder]
    hexes = np.column_stack([
        nid(ei, ej, ek), nid(ei + 1, ej, ek), nid(ei + 1, ej + 1, ek),
        nid(ei, ej + 1, ek), nid(ei, ej, ek + 1), nid(ei + 1, ej, ek + 1),
        nid(ei + 1, ej + 1, ek + 1), nid(ei, ej + 1, ek + 1),
    ]).astype(np.int64)

    bfacets, btags, belems = _tag_boundary_facets(n1, n2, n3, nid)
    sfacets, sminus, splus, sigma = _build_sigma(n1, n2, n3, nid, xs, ys)

    return ChannelMesh(
        dims=(l1, l2, l3), counts=(n1, n2, n3), nodes=nodes, hexes=hexes,
        boundary_facets=bfacets, boundary_tags=btags, boundary_elems=belems,
        sigma_facets=sfacets, sigma_elem_minus=sminus, sigma_elem_plus=splus,
        sigma=sigma)


def _tag_boundary_facets(n1, n2, n3, nid):
    def eid(e1, e2, e3):
        return e1 + n1 * (e2 + n2 * e3)

    facets, tags, elems = [], [], []
    # bottom (inflow) and top (outflow)
    for e2 in range(n2):
        for e1 in range(n1):
            facets.append([nid(e1, e2, 0), nid(e1 + 1, e2, 0),
                           nid(e1 + 1, e2 + 1, 0), nid(e1, e2 + 1, 0)])
            tags.append(TAG_INFLOW)
            elems.append(eid(e1, e2, 0))
            facets.append([nid(e1, e2, n3), nid(e1 + 1, e2, n3),
                           nid(e1 + 1, e2 + 1, n3), nid(e1, e2 + 1, n3)])
            tags.append(TAG_OUTFLOW)
            elems.append(eid(e1, e2, n3 - 1))
    # lateral walls
    for e3 in range(n3):
        for e2 in range(n2):
            facets.append([nid(0, e2, e3), nid(0, e2 + 1, e3),
                           nid(0, e2 + 1, e3 + 1), nid(0, e2, e3 + 1)])
            tags.append(TAG_NO_SLIP)
            elems.append(eid(0, e2, e3))
            facets.append([nid(n1, e2, e3), nid(n1, e2 + 1, e3),
                           nid(n1, e2 + 1, e3 + 1), nid(n1, e2, e3 + 1)])
            tags.append(TAG_NO_SLIP)
            elems.append(eid(n1 - 1, e2, e3))
        for e1 in range(n1):
            facets.append([nid(e1, 0, e3), nid(e1 + 1, 0, e3),
                           nid(e1 + 1, 0, e3 + 1), nid(e1, 0, e3 + 1)])
            tags.append(TAG_NO_SLIP)
            elems.append(eid(e1, 0, e3))
            facets.append([nid(e1, n2, e3), nid(e1 + 1, n2, e3),
                           nid(e1 + 1, n2, e3 + 1), nid(e1, n2, e3 + 1)])
            tags.append(TAG_NO_SLIP)
            elems.append(eid(e1, n2 - 1, e3))
    return (np.asarray(facets, dtype=np.int64),
            np.asarray(tags, dtype=np.int64),
            np.asarray(elems, dtype=np.int64))


def _build_sigma(n1, n2, n3, nid, xs, ys):
    kmid = n3 // 2

    def eid(e1, e2, e3):
        return e1 + n1 * (e2 + n2 * e3)

    facets, minus, plus = [], [], []
    for e2 in range(n2):
        for e1 in range(n1):
            facets.append([nid(e1, e2, kmid), nid(e1 + 1, e2, kmid),
                           nid(e1 + 1, e2 + 1, kmid), nid(e1, e2 + 1, kmid)])
            minus.append(eid(e1, e2, kmid - 1))
            plus.append(eid(e1, e2, kmid))
    # facet index = e1 + n1*e2, matching the quad numbering below
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    order = np.arange(n1 + 1)[:, None] + (n1 + 1) * np.arange(n2 + 1)[None, :]
    nodes2d = np.zeros(((n1 + 1) * (n2 + 1), 2))
    nodes2d[order.ravel()] = np.stack([xg, yg], axis=-1).reshape(-1, 2)

    def nid2(i, j):
        return i + (n1 + 1) * j

    qi, qj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    qi, qj = qi.ravel(), qj.ravel()
    qorder = np.argsort(qi + n1 * qj, kind="stable")
    qi, qj = qi[qorder], qj[qorder]
    quads = np.column_stack([nid2(qi, qj), nid2(qi + 1, qj),
                             nid2(qi + 1, qj + 1), nid2(qi, qj + 1)]).astype(np.int64)
    ii, jj = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), indexing="ij")
    node3d = nid(ii, jj, kmid).ravel()
    n3d_sorted = np.zeros_like(node3d)
    n3d_sorted[order.ravel()] = node3d
    bmask = np.zeros((n1 + 1) * (n2 + 1), dtype=bool)
    for j in range(n2 + 1):
        for i in range(n1 + 1):
            if i in (0, n1) or j in (0, n2):
                bmask[nid2(i, j)] = True
    sigma = SigmaMesh(nodes=nodes2d, quads=quads, node3d=n3d_sorted,
                      boundary_nodes=np.nonzero(bmask)[0].astype(np.int64))
    return (np.asarray(facets, dtype=np.int64), np.asarray(minus, dtype=np.int64),
            np.asarray(plus, dtype=np.int64), sigma)


def tag_boundaries(mesh: ChannelMesh) -> ChannelMesh:
    """Recompute boundary facet tags; idempotent on a built mesh."""
    n1, n2, n3 = mesh.counts

    def nid(i, j, k):
        return i + (n1 + 1) * (j + (n2 + 1) * k)

    bfacets, btags, belems = _tag_boundary_facets(n1, n2, n3, nid)
    return ChannelMesh(
        dims=mesh.dims, counts=mesh.counts, nodes=mesh.nodes, hexes=mesh.hexes,
        boundary_facets=bfacets, boundary_tags=btags, boundary_elems=belems,
        sigma_facets=mesh.sigma_facets, sigma_elem_minus=mesh.sigma_elem_minus,
        sigma_elem_plus=mesh.sigma_elem_plus, sigma=mesh.sigma)


# ---------------------------------------------------------------------------
# voxel unit cell


@dataclass(frozen=True)
class CellMesh:
    """Voxel decomposition of the unit cell (0,1)^2 x (-1/2, 1/2).

    Attributes
    ----------
    resolution : (m1, m2, m3) voxel counts per axis.
    solid_mask : bool array of shape resolution; True marks solid.
    yarn_labels : int array of shape resolution; 0 is fluid, k >= 1 labels
        the yarn a solid voxel belongs to.
    contact_facets : (nc, 3) int array; columns are the flat indices of the
        two touching voxels and the facet axis (0..2).  Contact facets sit
        between face-adjacent solid voxels with different labels; the facet
        normal is the axis unit vector.
    periodic_pairs : (np, 2) int array of grid-node indices (slave, master)
        tying the lateral faces y1=1 -> y1=0 and y2=1 -> y2=0; edge and
        corner nodes are chained to a single master.
    fluid_spans : (bool, bool, bool), whether the fluid phase percolates
        across the cell along each axis (lateral wrap-around allowed on
        the other axes).
    """

    resolution: tuple
    solid_mask: np.ndarray
    yarn_labels: np.ndarray
    contact_facets: np.ndarray
    periodic_pairs: np.ndarray
    fluid_spans: tuple

    @property
    def voxel_size(self):
        m1, m2, m3 = self.resolution
        return (1.0 / m1, 1.0 / m2, 1.0 / m3)

    @property
    def solid_volume(self):
        h1, h2, h3 = self.voxel_size
        return float(self.solid_mask.sum()) * h1 * h2 * h3

    @property
    def fluid_volume(self):
        h1, h2, h3 = self.voxel_size
        return float((~self.solid_mask).sum()) * h1 * h2 * h3

    def voxel_origin(self, i, j, k):
        """Lower corner coordinates of voxel (i, j, k)."""
        h1, h2, h3 = self.voxel_size
        return np.array([i * h1, j * h2, -0.5 + k * h3])

    def node_coords(self, i, j, k):
        h1, h2, h3 = self.voxel_size
        return np.array([i * h1, j * h2, -0.5 + k * h3])


def build_cell_mesh(resolution, solid_mask, yarn_labels=None,
                    allow_empty_solid=False) -> CellMesh:
    """Build a voxel cell mesh from a solid mask and optional yarn labels.

    Raises EmptyPhase when no solid voxel exists (unless allow_empty_solid,
    which permeability solvers use for all-fluid reference cells) and
    DisconnectedSolid when the solid phase is not face-connected.
    """
    m1, m2, m3 = (int(r) for r in resolution)
    if m1 <= 0 or m2 <= 0 or m3 <= 0:
        raise NonPositiveDimension(f"resolution must be positive, got {resolution}")
    mask = np.asarray(solid_mask, dtype=bool)
    if mask.shape != (m1, m2, m3):
        raise NonPositiveDimension(
            f"mask shape {mask.shape} does not match resolution {(m1, m2, m3)}")
    if yarn_labels is None:
        labels = mask.astype(np.int64)
    else:
        labels = np.asarray(yarn_labels, dtype=np.int64)
        if labels.shape != mask.shape:
            raise NonPositiveDimension("yarn label array shape mismatch")
        if not np.array_equal(labels > 0, mask):
            raise EmptyPhase("yarn labels must be positive exactly on solid voxels")

    if not mask.any():
        if not allow_empty_solid:
            raise EmptyPhase("cell contains no solid voxel")
    else:
        if not _solid_connected(mask):
            raise DisconnectedSolid("solid phase is not face-connected")

    contacts = _contact_facets(labels)
    pairs = _periodic_pairs(m1, m2, m3)
    spans = tuple(_fluid_spans(mask, axis) for axis in range(3))
    return CellMesh(resolution=(m1, m2, m3), solid_mask=mask, yarn_labels=labels,
                    contact_facets=contacts, periodic_pairs=pairs,
                    fluid_spans=spans)


def _solid_connected(mask):
    """True when the solid voxels form one face-connected component."""
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return True
    visited = np.zeros(mask.shape, dtype=bool)
    stack = [tuple(idx[0])]
    visited[tuple(idx[0])] = True
    shape = mask.shape
    while stack:
        i, j, k = stack.pop()
        for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                           (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + di, j + dj, k + dk
            if 0 <= a < shape[0] and 0 <= b < shape[1] and 0 <= c < shape[2]:
                if mask[a, b, c] and not visited[a, b, c]:
                    visited[a, b, c] = True
                    stack.append((a, b, c))
    return visited.sum() == len(idx)


def _contact_facets(labels):
    rows = []
    m1, m2, m3 = labels.shape
    strides = (m2 * m3, m3, 1)

    def flat(i, j, k):
        return i * strides[0] + j * strides[1] + k

    for axis in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        la = labels[tuple(sl_a)]
        lb = labels[tuple(sl_b)]
        touching = (la > 0) & (lb > 0) & (la != lb)
        for i, j, k in np.argwhere(touching):
            a = [i, j, k]
            b = [i, j, k]
            b[axis] += 1
            rows.append([flat(*a), flat(*b), axis])
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def _periodic_pairs(m1, m2, m3):
    pairs = []
    for k in range(m3 + 1):
        for j in range(m2 + 1):
            for i in range(m1 + 1):
                if i == m1 or j == m2:
                    im = 0 if i == m1 else i
                    jm = 0 if j == m2 else j
                    slave = i + (m1 + 1) * (j + (m2 + 1) * k)
                    master = im + (m1 + 1) * (jm + (m2 + 1) * k)
                    pairs.append([slave, master])
    return np.asarray(pairs, dtype=np.int64)


def _fluid_spans(mask, axis):
    """Percolation check for the fluid phase along one axis.

    Wrap-around adjacency is allowed on the other two axes (the cell is
    periodic there); the checked axis is traversed from the first slab to
    the last.
    """
    fluid = ~mask
    if not fluid.any():
        return False
    first = np.take(fluid, 0, axis=axis)
    if not first.any():
        return False
    shape = mask.shape
    visited = np.zeros(shape, dtype=bool)
    stack = []
    for pos in np.argwhere(first):
        full = list(pos)
        full.insert(axis, 0)
        visited[tuple(full)] = True
        stack.append(tuple(full))
    while stack:
        cur = stack.pop()
        for ax in range(3):
            for step in (1, -1):
                nxt = list(cur)
                nxt[ax] += step
                if ax == axis:
                    if nxt[ax] < 0 or nxt[ax] >= shape[ax]:
                        continue
                else:
                    nxt[ax] %= shape[ax]
                t = tuple(nxt)
                if fluid[t] and not visited[t]:
                    visited[t] = True
                    stack.append(t)
    last = np.take(visited, shape[axis] - 1, axis=axis)
    # spanning additionally requires the wrap neighbor on the far side to
    # be fluid, so a periodic continuation of the flow path exists
    far = np.take(fluid, 0, axis=axis)
    return bool((last & far).any())


# ---------------------------------------------------------------------------
# voxel mask text format
#
# Line 1: "m1 m2 m3".  Then m3 slabs (k = 0 .. m3-1, bottom to top), each
# with m2 rows (j = 0 .. m2-1) of m1 integers; 0 is fluid, k >= 1 is the
# yarn label.  Blank lines between slabs are allowed and ignored.


def read_voxel_mask(path):
    """Read a voxel mask file; returns (resolution, yarn_labels array)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = []
            for ln, line in enumerate(fh, start=1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                for tok in body.split():
                    tokens.append((tok, ln))
    except OSError as exc:
        raise ParseError(f"cannot read mask file {path}: {exc}") from exc
    if len(tokens) < 3:
        raise ParseError(f"{path}: missing resolution header")
    try:
        m1, m2, m3 = (int(tokens[i][0]) for i in range(3))
    except ValueError as exc:
        raise ParseError(f"{path}: bad resolution header") from exc
    if m1 <= 0 or m2 <= 0 or m3 <= 0:
        raise ParseError(f"{path}: non-positive resolution {(m1, m2, m3)}")
    need = m1 * m2 * m3
    body = tokens[3:]
    if len(body) != need:
        raise ParseError(
            f"{path}: expected {need} voxel entries, found {len(body)}")
    values = np.empty(need, dtype=np.int64)
    for pos, (tok, ln) in enumerate(body):
        try:
            values[pos] = int(tok)
        except ValueError as exc:
            raise ParseError(f"{path}:{ln}: bad voxel value {tok!r}") from exc
    if (values < 0).any():
        raise ParseError(f"{path}: voxel labels must be >= 0")
    # file order: slabs of rows of i-entries -> index (k, j, i)
    labels = values.reshape(m3, m2, m1).transpose(2, 1, 0)
    return (m1, m2, m3), np.ascontiguousarray(labels)


def write_voxel_mask(path, labels):
    """Write a yarn label array in the voxel mask text format."""
    labels = np.asarray(labels, dtype=np.int64)
    m1, m2, m3 = labels.shape
    lines = [f"{m1} {m2} {m3}"]
    for k in range(m3):
        for j in range(m2):
            lines.append(" ".join(str(int(labels[i, j, k])) for i in range(m1)))
        if k != m3 - 1:
            lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
