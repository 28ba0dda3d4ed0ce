"""Gaussian-process active exploration of gridded scalar fields.

Submodules: ``grid`` (lattice geometry), ``surfaces`` (ground-truth fields),
``gp`` (exact GP regression), ``policies`` (coverage paths and the
variance-seeking explorer), ``metrics``, ``harness`` (seeded trials and
sweeps) and ``cli``.
"""

__version__ = "0.1.0"
