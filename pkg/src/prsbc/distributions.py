"""Bounded-support probability machinery.

Per-axis measurement noise is a symmetric uniform; the difference of two
measured coordinates therefore follows a symmetric trapezoid distribution
(triangular when both half-widths match, rectangular when one is zero,
a Dirac spike when both are). This module provides the exact CDF, the
quantile function, seeded sampling, and the confidence-offset selection
rule that turns a chance constraint into a deterministic one.

All distribution math is one-dimensional: noise is independent per axis.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import njit

__all__ = [
    "SymmetricUniform",
    "DifferenceDistribution",
    "OffsetPair",
    "difference_of_uniforms",
    "trapezoid_cdf",
    "trapezoid_inv_cdf",
    "select_offset",
    "sample",
]


@dataclass(frozen=True)
class SymmetricUniform:
    """Uniform noise on [-half_width, +half_width]; zero width is a Dirac at 0."""

    half_width: float

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")


@dataclass(frozen=True)
class DifferenceDistribution:
    """Distribution of the difference of two independent symmetric uniforms.

    Symmetric trapezoid centered at ``center`` with plateau half-width
    ``inner_half_width`` and support half-width ``outer_half_width``.
    """

    center: float
    inner_half_width: float
    outer_half_width: float

    def __post_init__(self):
        if self.inner_half_width < 0 or self.outer_half_width < 0:
            raise ValueError("half-widths must be >= 0")
        if self.inner_half_width > self.outer_half_width + 1e-15:
            raise ValueError(
                f"inner_half_width {self.inner_half_width} exceeds "
                f"outer_half_width {self.outer_half_width}"
            )

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.outer_half_width, self.center + self.outer_half_width)


@dataclass(frozen=True)
class OffsetPair:
    """Quantile pair for a confidence level and the offset picked from it.

    ``e1`` is the upper quantile, ``e2`` the lower one; ``selected`` is e2
    when the lower quantile clears zero from above, e1 when the upper
    quantile clears zero from below, and 0 when the quantile interval
    straddles zero (the two robots may overlap along this axis).
    """

    e1: float
    e2: float
    selected: float


def difference_of_uniforms(center: float, half_width_a: float,
                           half_width_b: float) -> DifferenceDistribution:
    """Distribution of (center + U(+-a)) - U(+-b)."""
    return DifferenceDistribution(
        center=center,
        inner_half_width=abs(half_width_a - half_width_b),
        outer_half_width=half_width_a + half_width_b,
    )


@njit(cache=True)
def _trap_cdf(center, inner, outer, t):
    u = t - center
    if outer <= 0.0:
        if u < 0.0:
            return 0.0
        if u > 0.0:
            return 1.0
        return 0.5
    if u <= -outer:
        return 0.0
    if u >= outer:
        return 1.0
    height = 1.0 / (inner + outer)
    if u < -inner:
        return 0.5 * height * (u + outer) ** 2 / (outer - inner)
    if u > inner:
        return 1.0 - 0.5 * height * (outer - u) ** 2 / (outer - inner)
    return 0.5 + height * u


@njit(cache=True)
def _trap_ppf(center, inner, outer, p):
    if outer <= 0.0:
        return center
    height = 1.0 / (inner + outer)
    ramp_mass = 0.5 * height * (outer - inner)
    if p <= ramp_mass:
        if ramp_mass == 0.0:
            u = -outer
        else:
            u = -outer + np.sqrt(2.0 * p * (outer * outer - inner * inner))
    elif p >= 1.0 - ramp_mass:
        if ramp_mass == 0.0:
            u = outer
        else:
            u = outer - np.sqrt(2.0 * (1.0 - p) * (outer * outer - inner * inner))
    else:
        u = (p - 0.5) / height
    return center + u


@njit(cache=True)
def _select_offset(center, inner, outer, sigma):
    """Return (e1, e2, selected) for one axis at confidence sigma."""
    e1 = _trap_ppf(center, inner, outer, sigma)
    e2 = _trap_ppf(center, inner, outer, 1.0 - sigma)
    if e2 > 0.0:
        return e1, e2, e2
    if e1 < 0.0:
        return e1, e2, e1
    return e1, e2, 0.0


def trapezoid_cdf(dist: DifferenceDistribution, t: float) -> float:
    """Exact CDF of the trapezoid at t (0 left of support, 1 right of it)."""
    return float(_trap_cdf(dist.center, dist.inner_half_width, dist.outer_half_width,
                           float(t)))


def trapezoid_inv_cdf(dist: DifferenceDistribution, p: float) -> float:
    """Quantile function; p=0 and p=1 map to the exact support edges."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return float(_trap_ppf(dist.center, dist.inner_half_width, dist.outer_half_width,
                           float(p)))


def select_offset(dist: DifferenceDistribution, sigma: float) -> OffsetPair:
    """Pick the per-axis constraint offset for confidence level sigma.

    Requires sigma in [0.5, 1]: below 0.5 the quantile ordering flips and
    the selection rule is undefined. sigma = 1 lands exactly on the
    support edges (worst-case avoidance with fully inflated volumes).
    """
    if not 0.5 <= sigma <= 1.0:
        raise ValueError(f"sigma must lie in [0.5, 1], got {sigma}")
    e1, e2, sel = _select_offset(dist.center, dist.inner_half_width,
                                 dist.outer_half_width, float(sigma))
    return OffsetPair(e1=float(e1), e2=float(e2), selected=float(sel))


def sample(dist, rng: np.random.Generator, size=None):
    """Draw from a SymmetricUniform or DifferenceDistribution.

    Uses the caller's generator; never touches global RNG state.
    """
    if isinstance(dist, SymmetricUniform):
        if dist.half_width == 0.0:
            return 0.0 if size is None else np.zeros(size)
        return rng.uniform(-dist.half_width, dist.half_width, size)
    if isinstance(dist, DifferenceDistribution):
        # recover the two component half-widths (unique up to swapping)
        a = 0.5 * (dist.outer_half_width + dist.inner_half_width)
        b = 0.5 * (dist.outer_half_width - dist.inner_half_width)
        ua = rng.uniform(-a, a, size) if a > 0 else (0.0 if size is None else np.zeros(size))
        ub = rng.uniform(-b, b, size) if b > 0 else (0.0 if size is None else np.zeros(size))
        return dist.center + ua - ub
    raise TypeError(f"cannot sample from {type(dist).__name__}")
