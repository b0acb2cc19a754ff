"""Finite elements for channel flow through an immersed homogenized plate."""

from . import assembly, fe, homogenize, io_cli, mesh, permeability, solver  # noqa: F401

__version__ = "0.1.0"
