"""Scenario configuration, result serialization, and the command line.

Scenarios are TOML files with sections mirroring the library layout:
[geometry], [fluid], [plate], [interface], [time], [solver], [output].
`parse_config` validates everything up front and reports the complete
list of violations, not only the first.  Load samplers are named
built-ins (constant, poiseuille, gaussian_pulse) so that scenarios stay
declarative.  Field snapshots are written as legacy-VTK-flavored ASCII
files carrying viewer-friendly point data plus the raw degree-of-freedom
vectors in trailing FIELD blocks, which makes write/read round trips
bitwise exact.

The only environment variable honored is PLATEFSI_OUTPUT_DIR, which
overrides the configured output directory.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:                                   # Python < 3.11
    import tomli as tomllib

from . import assembly, fe, homogenize, mesh, permeability, solver
from .errors import (
    IoError,
    ParseError,
    PlateFsiError,
    ValidationError,
)

SAMPLER_KINDS = ("constant", "poiseuille", "gaussian_pulse")
CONFIG_SECTIONS = ("geometry", "fluid", "plate", "interface", "time",
                   "solver", "output")
ENERGY_HEADER = "t,E_kin_f,E_el_p,E_kin_p,D_interface"
ENERGY_COLUMNS = ("E_kin_f", "E_el_p", "E_kin_p", "D_interface")

_VTK_PREAMBLE = "# vtk DataFile Version 3.0"

# local index of the eight element corners in VTK hexahedron order for
# the triquadratic (27 node) and trilinear (8 node) layouts
_Q2_CORNERS = (0, 2, 8, 6, 18, 20, 26, 24)
_Q1_CORNERS = (0, 1, 3, 2, 4, 5, 7, 6)


def _fmt(x):
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# load samplers


def poiseuille_inflow(v_max, l1, l2):
    """Inflow profile v(x) = v_max * 16/(l1^2 l2^2) x1(l1-x1) x2(l2-x2) e3."""
    scale = 16.0 * float(v_max) / (l1 ** 2 * l2 ** 2)

    def sample(t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.shape[0], 3))
        out[:, 2] = scale * x[:, 0] * (l1 - x[:, 0]) * x[:, 1] * (l2 - x[:, 1])
        return out

    return sample


def constant_sampler(value):
    """Space- and time-independent sampler; scalar or fixed vector."""
    value = np.asarray(value, dtype=float)

    def sample(t, x):
        x = np.asarray(x, dtype=float)
        if value.ndim == 0:
            return np.full(x.shape[0], float(value))
        return np.broadcast_to(value, (x.shape[0], value.shape[0])).copy()

    return sample


def gaussian_pulse_sampler(value, center, width):
    """Constant profile modulated by exp(-((t-center)/width)^2 / 2)."""
    base = constant_sampler(value)
    center, width = float(center), float(width)

    def sample(t, x):
        return base(t, x) * np.exp(-0.5 * ((t - center) / width) ** 2)

    return sample


def build_sampler(spec, dims, arity):
    """Instantiate a named sampler from its validated spec dictionary.

    `arity` is 3 for volume forces and inflow data, 1 for the scalar
    transverse plate load.
    """
    if spec is None:
        return None
    kind = spec["kind"]
    if kind == "constant":
        return constant_sampler(spec["value"])
    if kind == "gaussian_pulse":
        return gaussian_pulse_sampler(spec["value"], spec["center"],
                                      spec["width"])
    if kind == "poiseuille":
        if arity != 3:
            raise ValidationError("poiseuille sampler is vector-valued")
        return poiseuille_inflow(spec["v_max"], dims[0], dims[1])
    raise ValidationError(f"unknown sampler kind {kind!r}")


# ---------------------------------------------------------------------------
# scenario configuration


@dataclass
class ScenarioConfig:
    """Validated scenario: geometry, physics, discretization, output."""

    dims: tuple
    counts: tuple
    rho_f: float
    mu: float
    force_spec: dict | None
    inflow_spec: dict | None
    triple: assembly.StiffnessTriple
    rho_s_hat: float
    g3_spec: dict | None
    khat: np.ndarray | None
    t_end: float | None
    dt: float | None
    nsteps: int | None
    method: str
    tol: float
    output_dir: str
    field_basename: str
    energy_csv: str
    raw: dict = field(repr=False, default_factory=dict)

    def config_hash(self):
        """Stable digest of the parsed file contents."""
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"),
                          default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def samplers(self):
        """Instantiate the configured load samplers."""
        return {
            "f": build_sampler(self.force_spec, self.dims, 3),
            "inflow": build_sampler(self.inflow_spec, self.dims, 3),
            "g3": build_sampler(self.g3_spec, self.dims, 1),
        }

    def build_system(self):
        """Channel mesh plus assembled coupled operator."""
        channel = mesh.build_channel_mesh(self.dims, self.counts)
        nf = channel.sigma.quads.shape[0]
        interface = assembly.InterfaceData.from_tensors(
            nf, self.triple, khat=self.khat, rho_s_hat=self.rho_s_hat)
        return channel, solver.FsiSystem(channel, interface,
                                         self.rho_f, self.mu)


def _num(table, section, key, bad, positive=True, default=None):
    """Fetch a float entry, recording a violation when invalid."""
    if key not in table:
        if default is not None:
            return float(default)
        bad.append(f"{section}: missing key {key}")
        return None
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        bad.append(f"{section}.{key} must be a number, got {val!r}")
        return None
    val = float(val)
    if positive and not val > 0.0:
        bad.append(f"{section}.{key} must be positive, got {val}")
        return None
    return val


def _count(table, section, key, bad):
    if key not in table:
        bad.append(f"{section}: missing key {key}")
        return None
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, int) or val <= 0:
        bad.append(f"{section}.{key} must be a positive integer, got {val!r}")
        return None
    return val


def _matrix3(value, where, bad):
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        bad.append(f"{where} must be a 3x3 matrix")
        return None
    if m.shape != (3, 3) or not np.isfinite(m).all():
        bad.append(f"{where} must be a finite 3x3 matrix")
        return None
    return m


def _spd_violation(m, where, bad):
    if np.abs(m - m.T).max() > 1e-12 * max(np.abs(m).max(), 1e-300):
        bad.append(f"{where} must be symmetric")
        return
    evals = np.linalg.eigvalsh(0.5 * (m + m.T))
    if evals.min() <= 0.0:
        bad.append(f"{where} must be positive definite")
    elif evals.min() <= 1e-14 * evals.max():
        # inverting such a matrix is meaningless in double precision;
        # blocked-axis permeabilities land here
        bad.append(f"{where} is numerically singular (eigenvalue ratio "
                   f"{evals.min() / evals.max():.1e})")


def _sampler_spec(table, section, arity, bad, allow_poiseuille=False):
    """Validate one sampler table; returns the normalized spec or None."""
    if table is None:
        return None
    if not isinstance(table, dict):
        bad.append(f"{section} must be a table")
        return None
    kind = table.get("kind")
    allowed = SAMPLER_KINDS if allow_poiseuille else tuple(
        k for k in SAMPLER_KINDS if k != "poiseuille")
    if kind not in allowed:
        bad.append(f"{section}.kind must be one of {', '.join(allowed)}, "
                   f"got {kind!r}")
        return None
    spec = {"kind": kind}
    if kind == "poiseuille":
        v_max = _num(table, section, "v_max", bad, positive=False)
        if v_max is None:
            return None
        spec["v_max"] = v_max
        return spec
    value = table.get("value")
    if arity == 1:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad.append(f"{section}.value must be a scalar")
            return None
        spec["value"] = float(value)
    else:
        arr = None
        if isinstance(value, (list, tuple)) and len(value) == arity:
            try:
                arr = [float(v) for v in value]
            except (TypeError, ValueError):
                arr = None
        if arr is None:
            bad.append(f"{section}.value must be a {arity}-vector")
            return None
        spec["value"] = arr
    if kind == "gaussian_pulse":
        center = _num(table, section, "center", bad, positive=False)
        width = _num(table, section, "width", bad)
        if center is None or width is None:
            return None
        spec["center"], spec["width"] = center, width
    return spec


def _plate_triple(plate, config_dir, bad):
    """Resolve the stiffness triple from one of the three plate forms."""
    forms = [k for k in ("tensors", "inline", "isotropic") if k in plate]
    if len(forms) != 1:
        bad.append("plate: give exactly one of tensors, inline, isotropic")
        return None, None
    if forms[0] == "tensors":
        rel = plate["tensors"]
        if not isinstance(rel, str):
            bad.append("plate.tensors must be a file path")
            return None, None
        path = Path(config_dir) / rel
        try:
            data = assembly.read_tensor_file(path)
        except ParseError as exc:
            bad.append(f"plate.tensors: {exc}")
            return None, None
        if data.triple is None:
            bad.append(f"plate.tensors: {path} has no stiffness sections")
            return None, None
        return data.triple, data
    if forms[0] == "inline":
        inline = plate["inline"]
        if not isinstance(inline, dict):
            bad.append("plate.inline must be a table")
            return None, None
        mats = {}
        for key in ("ahom", "bhom", "chom"):
            if key not in inline:
                bad.append(f"plate.inline: missing key {key}")
                return None, None
            m = _matrix3(inline[key], f"plate.inline.{key}", bad)
            if m is None:
                return None, None
            mats[key] = m
        return assembly.StiffnessTriple.from_voigt(
            mats["ahom"], mats["bhom"], mats["chom"]), None
    iso = plate["isotropic"]
    if not isinstance(iso, dict):
        bad.append("plate.isotropic must be a table")
        return None, None
    e = _num(iso, "plate.isotropic", "e", bad)
    nu = _num(iso, "plate.isotropic", "nu", bad, positive=False)
    thickness = _num(iso, "plate.isotropic", "thickness", bad)
    if e is None or nu is None or thickness is None:
        return None, None
    if not -1.0 < nu < 1.0:
        bad.append(f"plate.isotropic.nu must lie in (-1, 1), got {nu}")
        return None, None
    shear = e / (2.0 * (1.0 + nu))
    try:
        return homogenize.orthotropic_plate_tensors(
            e, e, nu, nu, shear, thickness), None
    except PlateFsiError as exc:
        bad.append(f"plate.isotropic: {exc}")
        return None, None


def parse_config(path) -> ScenarioConfig:
    """Parse and fully validate a scenario file.

    Raises ParseError for unreadable or syntactically broken files and
    ValidationError carrying every semantic violation found.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    bad = []
    for section in raw:
        if section not in CONFIG_SECTIONS:
            bad.append(f"unknown section [{section}]")
    for section in ("geometry", "fluid", "plate"):
        if section not in raw:
            bad.append(f"missing section [{section}]")

    geo = raw.get("geometry", {})
    dims = tuple(_num(geo, "geometry", k, bad) for k in ("l1", "l2", "l3"))
    counts = tuple(_count(geo, "geometry", k, bad) for k in ("n1", "n2", "n3"))
    if counts[2] is not None and counts[2] % 2:
        bad.append(f"geometry.n3 must be even so the interface is a node "
                   f"layer, got {counts[2]}")

    fluid = raw.get("fluid", {})
    rho_f = _num(fluid, "fluid", "rho", bad)
    mu = _num(fluid, "fluid", "mu", bad)
    force_spec = _sampler_spec(fluid.get("force"), "fluid.force", 3, bad)
    inflow_spec = _sampler_spec(fluid.get("inflow"), "fluid.inflow", 3, bad,
                                allow_poiseuille=True)

    plate = raw.get("plate", {})
    triple, tensor_data = (None, None)
    if plate:
        triple, tensor_data = _plate_triple(plate, path.parent, bad)
    rho_s_default = 1.0
    if tensor_data is not None and tensor_data.rho_s_hat is not None:
        rho_s_default = tensor_data.rho_s_hat
    rho_s_hat = _num(plate, "plate", "rho_s_hat", bad, default=rho_s_default)
    g3_spec = _sampler_spec(plate.get("load"), "plate.load", 1, bad)
    if triple is not None:
        report = homogenize.validate_tensors(triple)
        bad.extend(f"plate tensors: {msg}" for msg in report.failures)

    interface = raw.get("interface")
    khat = None
    if interface is None:
        if tensor_data is not None and tensor_data.khat is not None:
            khat = tensor_data.khat
    else:
        keys = [k for k in ("khat", "k") if k in interface]
        if len(keys) != 1:
            bad.append("interface: give exactly one of khat, k")
        elif keys[0] == "khat":
            khat = _matrix3(interface["khat"], "interface.khat", bad)
        else:
            kmat = _matrix3(interface["k"], "interface.k", bad)
            delta = _num(interface, "interface", "delta", bad)
            if kmat is not None and delta is not None and mu is not None:
                khat = kmat / (mu * delta)
    if khat is not None:
        _spd_violation(khat, "interface slip matrix", bad)

    time_tab = raw.get("time")
    t_end = dt = nsteps = None
    if time_tab is not None:
        t_end = _num(time_tab, "time", "t_end", bad)
        has_dt = "dt" in time_tab
        has_steps = "steps" in time_tab
        if has_dt == has_steps:
            bad.append("time: give exactly one of dt, steps")
        elif has_dt:
            dt = _num(time_tab, "time", "dt", bad)
            if dt is not None and t_end is not None:
                nsteps = int(round(t_end / dt))
                if nsteps < 1 or abs(nsteps * dt - t_end) > 1e-8 * t_end:
                    bad.append(f"time.dt = {dt} does not divide t_end = {t_end}")
                    nsteps = None
        else:
            nsteps = _count(time_tab, "time", "steps", bad)
            if nsteps is not None and t_end is not None:
                dt = t_end / nsteps

    solver_tab = raw.get("solver", {})
    method = solver_tab.get("method", "direct")
    if method not in ("direct", "gmres"):
        bad.append(f"solver.method must be direct or gmres, got {method!r}")
    tol = _num(solver_tab, "solver", "tol", bad, default=1e-10)

    out_tab = raw.get("output", {})
    output_dir = out_tab.get("directory", "out")
    field_basename = out_tab.get("fields", "fields")
    energy_csv = out_tab.get("energy", "energy.csv")
    for key, val in (("directory", output_dir), ("fields", field_basename),
                     ("energy", energy_csv)):
        if not isinstance(val, str) or not val:
            bad.append(f"output.{key} must be a nonempty string")
    output_dir = os.environ.get("PLATEFSI_OUTPUT_DIR", output_dir)

    if bad:
        raise ValidationError(bad)
    return ScenarioConfig(
        dims=dims, counts=counts, rho_f=rho_f, mu=mu,
        force_spec=force_spec, inflow_spec=inflow_spec,
        triple=triple, rho_s_hat=rho_s_hat, g3_spec=g3_spec, khat=khat,
        t_end=t_end, dt=dt, nsteps=nsteps, method=method, tol=tol,
        output_dir=output_dir, field_basename=field_basename,
        energy_csv=energy_csv, raw=raw)


# ---------------------------------------------------------------------------
# material file (homogenize subcommand input)


MATERIAL_KEYS = ("e", "nu", "contact_normal", "contact_tangent", "thickness")


def read_material_file(path):
    """Read a key = value material file for the cell solver.

    Required keys e and nu; optional contact_normal, contact_tangent,
    thickness (defaults 1.0).  Lines starting with # are comments.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read material file {path}: {exc}") from exc
    values = {}
    for ln, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"{path}:{ln}: expected key = value")
        key, _, rhs = body.partition("=")
        key = key.strip().lower()
        if key not in MATERIAL_KEYS:
            raise ParseError(f"{path}:{ln}: unknown key {key!r}")
        try:
            values[key] = float(rhs.strip())
        except ValueError as exc:
            raise ParseError(f"{path}:{ln}: bad number {rhs.strip()!r}") from exc
    for key in ("e", "nu"):
        if key not in values:
            raise ParseError(f"{path}: missing key {key}")
    values.setdefault("contact_normal", 1.0)
    values.setdefault("contact_tangent", 1.0)
    values.setdefault("thickness", 1.0)
    return values


# ---------------------------------------------------------------------------
# field snapshots


def write_fields(state, channel, path, spaces=None):
    """Write one channel snapshot plus its interface companion file.

    The channel file carries the vertex grid with hexahedral cells,
    corner-sampled velocity vectors and pressure scalars as point data,
    and the full velocity/pressure degree-of-freedom vectors in a FIELD
    block.  The companion `<stem>_sigma<suffix>` file carries the
    midplane quads with deflection, deflection rate, and in-plane
    displacement, again with the raw vectors appended.  Returns the two
    paths written.
    """
    path = Path(path)
    if spaces is None:
        spaces = {
            "v": fe.build_dofmap(channel, "Q2_vec3"),
            "p": fe.build_dofmap(channel, "Q1_scalar_broken_sigma"),
        }
    nn = channel.nodes.shape[0]
    ne = channel.hexes.shape[0]

    v_elem = state.v[spaces["v"].elem_dofs].reshape(ne, 27, 3)
    p_elem = state.p[spaces["p"].elem_dofs]
    vert_v = np.zeros((nn, 3))
    vert_p = np.zeros(nn)
    for m in range(8):
        vert_v[channel.hexes[:, m]] = v_elem[:, _Q2_CORNERS[m], :]
        vert_p[channel.hexes[:, m]] = p_elem[:, _Q1_CORNERS[m]]

    lines = [_VTK_PREAMBLE,
             f"platefsi channel snapshot t={_fmt(state.t)}",
             "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nn} double"]
    lines.extend(" ".join(_fmt(c) for c in row) for row in channel.nodes)
    lines.append(f"CELLS {ne} {9 * ne}")
    lines.extend("8 " + " ".join(str(i) for i in row)
                 for row in channel.hexes)
    lines.append(f"CELL_TYPES {ne}")
    lines.extend("12" for _ in range(ne))
    lines.append(f"POINT_DATA {nn}")
    lines.append("VECTORS velocity double")
    lines.extend(" ".join(_fmt(c) for c in row) for row in vert_v)
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(c) for c in vert_p)
    lines.append("FIELD FieldData 2")
    lines.append(f"velocity_dofs 1 {state.v.size} double")
    lines.extend(_fmt(c) for c in state.v)
    lines.append(f"pressure_dofs 1 {state.p.size} double")
    lines.extend(_fmt(c) for c in state.p)
    _write_lines(path, lines)

    sigma_path = path.with_name(path.stem + "_sigma" + path.suffix)
    sg = channel.sigma
    ns = sg.nodes.shape[0]
    nf = sg.quads.shape[0]
    lines = [_VTK_PREAMBLE,
             f"platefsi interface snapshot t={_fmt(state.t)}",
             "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {ns} double"]
    lines.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in sg.nodes)
    lines.append(f"CELLS {nf} {5 * nf}")
    lines.extend("4 " + " ".join(str(i) for i in row) for row in sg.quads)
    lines.append(f"CELL_TYPES {nf}")
    lines.extend("9" for _ in range(nf))
    lines.append(f"POINT_DATA {ns}")
    lines.append("SCALARS deflection double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(c) for c in state.u3[0::4])
    lines.append("SCALARS deflection_rate double 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(_fmt(c) for c in state.w3[0::4])
    lines.append("VECTORS inplane_displacement double")
    u2 = state.u_bar.reshape(ns, 2)
    lines.extend(f"{_fmt(a)} {_fmt(b)} 0" for a, b in u2)
    lines.append("FIELD FieldData 3")
    lines.append(f"deflection_dofs 1 {state.u3.size} double")
    lines.extend(_fmt(c) for c in state.u3)
    lines.append(f"deflection_rate_dofs 1 {state.w3.size} double")
    lines.extend(_fmt(c) for c in state.w3)
    lines.append(f"inplane_dofs 1 {state.u_bar.size} double")
    lines.extend(_fmt(c) for c in state.u_bar)
    _write_lines(sigma_path, lines)
    return path, sigma_path


def _write_lines(path, lines):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _tokenize_vtk(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if len(lines) < 4 or lines[0] != _VTK_PREAMBLE or lines[2] != "ASCII":
        raise ParseError(f"{path}: not a recognized snapshot file")
    title = lines[1]
    if "t=" not in title:
        raise ParseError(f"{path}: title line carries no time stamp")
    try:
        t = float(title.rsplit("t=", 1)[1])
    except ValueError as exc:
        raise ParseError(f"{path}: bad time stamp in title") from exc
    return t, lines


def _read_field_blocks(lines, path):
    """Parse the trailing FIELD block into name -> flat float array."""
    try:
        start = lines.index(next(l for l in lines if l.startswith("FIELD ")))
    except StopIteration:
        raise ParseError(f"{path}: missing FIELD block") from None
    narrays = int(lines[start].split()[-1])
    out = {}
    pos = start + 1
    for _ in range(narrays):
        name, ncomp, ntup, _dtype = lines[pos].split()
        count = int(ncomp) * int(ntup)
        vals = np.array([float(v) for v in lines[pos + 1:pos + 1 + count]])
        if vals.size != count:
            raise ParseError(f"{path}: truncated FIELD array {name}")
        out[name] = vals
        pos += 1 + count
    return out


def read_fields(path):
    """Read a channel snapshot; returns time and raw dof vectors."""
    t, lines = _tokenize_vtk(path)
    blocks = _read_field_blocks(lines, path)
    for key in ("velocity_dofs", "pressure_dofs"):
        if key not in blocks:
            raise ParseError(f"{path}: missing FIELD array {key}")
    return {"t": t, "v": blocks["velocity_dofs"],
            "p": blocks["pressure_dofs"]}


def read_sigma_fields(path):
    """Read an interface snapshot; returns time and raw dof vectors."""
    t, lines = _tokenize_vtk(path)
    blocks = _read_field_blocks(lines, path)
    for key in ("deflection_dofs", "deflection_rate_dofs", "inplane_dofs"):
        if key not in blocks:
            raise ParseError(f"{path}: missing FIELD array {key}")
    return {"t": t, "u3": blocks["deflection_dofs"],
            "w3": blocks["deflection_rate_dofs"],
            "u_bar": blocks["inplane_dofs"]}


def read_state(channel_path, channel):
    """Rebuild a SolutionState from a snapshot pair."""
    channel_path = Path(channel_path)
    sigma_path = channel_path.with_name(
        channel_path.stem + "_sigma" + channel_path.suffix)
    vol = read_fields(channel_path)
    surf = read_sigma_fields(sigma_path)
    return solver.SolutionState(t=vol["t"], v=vol["v"], p=vol["p"],
                                u_bar=surf["u_bar"], u3=surf["u3"],
                                w3=surf["w3"])


# ---------------------------------------------------------------------------
# energy log


def write_energy_csv(path, times, energies):
    """Write the monitored energy time series."""
    times = np.asarray(times, dtype=float)
    lines = [ENERGY_HEADER]
    for i, t in enumerate(times):
        row = [t] + [energies[k][i] for k in ENERGY_COLUMNS]
        lines.append(",".join(_fmt(x) for x in row))
    _write_lines(path, lines)


def read_energy_csv(path):
    """Read an energy log back into (times, column dict)."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != ENERGY_HEADER.split(","):
        raise ParseError(f"{path}: unexpected energy log header")
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    if data.size == 0:
        data = data.reshape(0, 5)
    energies = {k: data[:, 1 + i] for i, k in enumerate(ENERGY_COLUMNS)}
    return data[:, 0], energies


# ---------------------------------------------------------------------------
# subcommands


def _load_cell(path):
    resolution, labels = mesh.read_voxel_mask(path)
    yarns = labels if labels.max(initial=0) > 1 else None
    return mesh.build_cell_mesh(resolution, labels > 0, yarn_labels=yarns,
                                allow_empty_solid=True)


def _merge_tensor_file(path, triple=None, khat=None, rho_s_hat=None):
    """Write the tensor file, preserving sections it already carries."""
    path = Path(path)
    old = assembly.read_tensor_file(path) if path.exists() else None
    if old is not None:
        triple = triple if triple is not None else old.triple
        khat = khat if khat is not None else old.khat
        rho_s_hat = rho_s_hat if rho_s_hat is not None else old.rho_s_hat
        overrides = old.facet_overrides
    else:
        overrides = None
    assembly.write_tensor_file(path, triple, khat=khat, rho_s_hat=rho_s_hat,
                               facet_overrides=overrides)


def _cmd_homogenize(ns):
    cell = _load_cell(ns.cell)
    values = read_material_file(ns.material)
    mat = homogenize.CellMaterial.isotropic(
        values["e"], values["nu"],
        contact_normal=values["contact_normal"],
        contact_tangent=values["contact_tangent"])
    stiff = homogenize.assemble_cell_stiffness(cell, mat)
    sols = homogenize.solve_all_cell_problems(stiff)
    triple = homogenize.homogenized_tensors(sols, stiff,
                                            thickness=values["thickness"])
    report = homogenize.validate_tensors(triple)
    for msg in report.failures:
        print(f"warning: {msg}", file=sys.stderr)
    _merge_tensor_file(ns.out, triple=triple)
    print(f"membrane coercivity {report.membrane_coercivity:.6g}, "
          f"bending coercivity {report.bending_coercivity:.6g}, "
          f"coupling ratio {report.coupling_ratio:.3e}")
    print("vanishing coupling predicted:",
          homogenize.predict_vanishing_coupling(cell))
    print(f"wrote {ns.out}")
    return 0


def _cmd_permeability(ns):
    cell = _load_cell(ns.cell)
    if ns.method == "cells":
        tensor = permeability.permeability_from_cells(
            *permeability.solve_all_darcy_cells(cell))
    else:
        tensor = permeability.permeability_darcy_fit(cell,
                                                     viscosity=ns.viscosity)
    if ns.period != 1.0:
        tensor = tensor.scaled(ns.period)
    khat = tensor.khat(ns.viscosity, ns.thickness)
    if not all(tensor.axis_open):
        print("warning: fluid phase does not percolate along axes "
              f"{tuple(i + 1 for i, o in enumerate(tensor.axis_open) if not o)}; "
              "the slip matrix is singular and scenario validation will "
              "reject it", file=sys.stderr)
    _merge_tensor_file(ns.out, khat=khat)
    with np.printoptions(precision=6):
        print(f"permeability ({tensor.provenance}, axes open "
              f"{tensor.axis_open}):")
        print(tensor.matrix)
        print("slip matrix:")
        print(khat)
    print(f"wrote {ns.out}")
    return 0


def _require_time(cfg):
    if cfg.dt is None or cfg.nsteps is None:
        raise ValidationError(
            ["time: section with t_end and dt or steps is required "
             "for solve-transient"])


def _out_dir(cfg, ns):
    out = Path(ns.out_dir) if ns.out_dir else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_solve_stationary(ns):
    cfg = parse_config(ns.config)
    out = _out_dir(cfg, ns)
    channel, fsi = cfg.build_system()
    loads = cfg.samplers()
    result = solver.solve_stationary(fsi, inflow=loads["inflow"],
                                     f=loads["f"], g3=loads["g3"],
                                     method=cfg.method, tol=cfg.tol)
    state = solver.SolutionState(t=0.0, v=result.v, p=result.p,
                                 u_bar=result.u_bar, u3=result.u3,
                                 w3=np.zeros_like(result.u3))
    paths = write_fields(state, channel,
                         out / f"{cfg.field_basename}_stationary.vtk")
    print(f"fluid solve: {result.fluid_report.method}, residual "
          f"{result.fluid_report.residual:.3e}")
    print(f"plate solve: {result.plate_report.method}, residual "
          f"{result.plate_report.residual:.3e}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_solve_transient(ns):
    cfg = parse_config(ns.config)
    _require_time(cfg)
    out = _out_dir(cfg, ns)
    channel, fsi = cfg.build_system()
    loads = cfg.samplers()

    def progress(step, total, t):
        print(f"step {step}/{total} t={t:.6g}", file=sys.stderr)

    every = ns.write_every
    result = solver.run_transient(
        fsi, cfg.dt, cfg.nsteps, f=loads["f"], g3=loads["g3"],
        inflow=loads["inflow"], method=cfg.method, tol=cfg.tol,
        record_states=every > 0, progress=progress)
    written = []
    if every > 0:
        for i, state in enumerate(result.states):
            if i % every == 0 or i == len(result.states) - 1:
                written.extend(write_fields(
                    state, channel,
                    out / f"{cfg.field_basename}_{i:06d}.vtk"))
    else:
        written.extend(write_fields(
            result.final, channel,
            out / f"{cfg.field_basename}_final.vtk"))
    energy_path = out / cfg.energy_csv
    write_energy_csv(energy_path, result.times, result.energies)
    written.append(energy_path)
    print(f"{cfg.nsteps} steps, kinematic residual "
          f"{result.max_kinematic_residual:.3e}, divergence residual "
          f"{result.max_divergence_residual:.3e}")
    for p in written:
        print(f"wrote {p}")
    return 0


_STUDY_LEVELS = {"stokes": (2, 3, 4), "plate": (2, 4, 8),
                 "plate_exact": (3, 5), "membrane": (4, 6, 8)}


def _cmd_convergence(ns):
    if ns.levels:
        try:
            levels = tuple(int(v) for v in ns.levels.split(","))
        except ValueError as exc:
            raise ParseError(f"bad --levels value {ns.levels!r}") from exc
    else:
        levels = _STUDY_LEVELS[ns.case]
    result = solver.convergence_study(ns.case, levels)
    names = sorted(result.errors)
    lines = [f"case {result.case}",
             "h " + " ".join(names)]
    for i, h in enumerate(result.hs):
        row = [h] + [result.errors[n][i] for n in names]
        lines.append(" ".join(_fmt(x) for x in row))
    lines.append("rates " + " ".join(_fmt(result.rates[n]) for n in names))
    out = ns.out or f"rates_{ns.case}.txt"
    _write_lines(out, lines)
    for line in lines:
        print(line)
    print(f"wrote {out}")
    return 0


def _cmd_validate(ns):
    cfg = parse_config(ns.config)
    print(f"configuration valid (hash {cfg.config_hash()})")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="platefsi",
        description="Channel Stokes flow through an immersed homogenized "
                    "plate: cell solvers, coupled solvers, and studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("homogenize",
                       help="effective plate stiffness from a voxel cell")
    p.add_argument("--cell", required=True, help="voxel mask file")
    p.add_argument("--material", required=True, help="key = value material file")
    p.add_argument("--out", required=True, help="tensor file to write/merge")
    p.set_defaults(func=_cmd_homogenize)

    p = sub.add_parser("permeability",
                       help="permeability and slip matrix from a voxel cell")
    p.add_argument("--cell", required=True, help="voxel mask file")
    p.add_argument("--method", choices=("cells", "fit"), default="cells")
    p.add_argument("--out", required=True, help="tensor file to write/merge")
    p.add_argument("--viscosity", type=float, default=1.0)
    p.add_argument("--thickness", type=float, default=1.0,
                   help="plate thickness entering the slip matrix")
    p.add_argument("--period", type=float, default=1.0,
                   help="physical cell edge length (quadratic rescale)")
    p.set_defaults(func=_cmd_permeability)

    p = sub.add_parser("solve-stationary",
                       help="one-way coupled steady solve from a scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_solve_stationary)

    p = sub.add_parser("solve-transient",
                       help="backward Euler time marching from a scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--write-every", type=int, default=1,
                   help="snapshot stride; 0 writes only the final state")
    p.set_defaults(func=_cmd_solve_transient)

    p = sub.add_parser("convergence-study",
                       help="manufactured-solution error decay table")
    p.add_argument("--case", choices=sorted(_STUDY_LEVELS), required=True)
    p.add_argument("--levels", default=None,
                   help="comma-separated element counts per axis")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("validate", help="check a scenario file and exit")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_validate)
    return parser


def run_cli(argv=None) -> int:
    """Entry point returning a process exit code.

    0 on success, 1 with a JSON error object on stderr for library and
    input failures, 2 for command-line usage errors.
    """
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except (PlateFsiError, OSError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ValidationError):
            payload["violations"] = exc.violations
        print(json.dumps(payload), file=sys.stderr)
        return 1


def main():
    raise SystemExit(run_cli(sys.argv[1:]))
