"""Probabilistic safety barrier certificates for multi-robot collision
avoidance: bounded-noise chance constraints turned into linear control
constraints, solved as a minimally-invasive QP per step, with a simulation
harness for empirical verification."""

from . import certificates, distributions, dynamics, qp, sim
from ._accel import NUMBA_ENABLED

__all__ = ["certificates", "distributions", "dynamics", "qp", "sim",
           "NUMBA_ENABLED"]
__version__ = "0.1.0"
