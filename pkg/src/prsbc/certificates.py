"""Linear safety certificates on controls.

For every robot pair (and robot-obstacle pair) a single half-space row over
the control vector is built. The probabilistic rows replace the measured
position difference by per-axis confidence offsets drawn from the quantiles
of the difference distribution, subtract a process-noise allowance, and use
a radius term that depends on the convention:

* ``paper_d_factor`` multiplies the squared combined radius by the workspace
  dimension d (the per-axis conditions are summed, each carrying its own
  radius term); this is the form that carries the chance-constraint
  guarantee.
* ``sbc_compat`` keeps the plain squared radius so that with zero noise the
  probabilistic row coincides exactly with the deterministic barrier row.

The deterministic rows (SBC) use measured differences directly with no
offset or allowance machinery. All rows share the scaling in which the
coefficient on robot i's control block is -2 e^T G_i / gamma.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import njit
from .distributions import _select_offset

__all__ = [
    "PAPER_D_FACTOR",
    "SBC_COMPAT",
    "PairBelief",
    "ObstacleBelief",
    "HalfspaceConstraint",
    "ConstraintSet",
    "make_pair_belief",
    "make_obstacle_belief",
    "compute_B",
    "pairwise_prsbc",
    "robot_obstacle_prsbc",
    "decentralized_split",
    "sbc_pairwise",
    "sbc_robot_obstacle",
    "build_all",
]

PAPER_D_FACTOR = "paper_d_factor"
SBC_COMPAT = "sbc_compat"
_CONVENTIONS = (PAPER_D_FACTOR, SBC_COMPAT)


def _radius_factor(convention: str, d: int) -> float:
    if convention == PAPER_D_FACTOR:
        return float(d)
    if convention == SBC_COMPAT:
        return 1.0
    raise ValueError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class PairBelief:
    """Everything needed to write one inter-robot row: offsets, noise
    allowance, models, geometry."""

    e: np.ndarray               # (d,) selected per-axis offsets
    B: float                    # process-noise allowance, <= 0
    delta_drift: np.ndarray     # (d,) F_i - F_j at the measurements
    input_i: np.ndarray         # (d, m)
    input_j: np.ndarray         # (d, m)
    combined_radius: float      # R_i + R_j
    gamma: float


@dataclass(frozen=True)
class ObstacleBelief:
    """Row ingredients for a robot-obstacle pair (only the robot is steered)."""

    e: np.ndarray
    B: float
    drift_i: np.ndarray
    input_i: np.ndarray
    combined_radius: float
    gamma: float
    reported_velocity: np.ndarray   # obstacle velocity as detected


@dataclass(frozen=True)
class HalfspaceConstraint:
    """One row  coefficients . u <= bound  over a (joint or per-robot)
    control vector."""

    coefficients: np.ndarray
    bound: float
    tag: tuple

    def satisfied_by(self, u: np.ndarray, tol: float = 0.0) -> bool:
        return float(self.coefficients @ u) <= self.bound + tol


@dataclass(frozen=True)
class ConstraintSet:
    """Stacked rows A u <= b plus per-row tags, over a control vector of
    length n_u."""

    A: np.ndarray
    b: np.ndarray
    tags: tuple
    n_u: int

    def __len__(self):
        return self.b.size

    def as_constraints(self) -> list[HalfspaceConstraint]:
        return [HalfspaceConstraint(self.A[k].copy(), float(self.b[k]), self.tags[k])
                for k in range(self.b.size)]


def compute_B(proc_i: np.ndarray, proc_j: np.ndarray, dists, gamma: float) -> float:
    """Process-noise allowance: per axis -(2/gamma) * max|dw| * max|dx|,
    summed.

    max|dw| is the support half-width of the velocity-noise difference and
    max|dx| the largest magnitude the position difference can take over its
    support.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    total = 0.0
    for l, dist in enumerate(dists):
        dw = float(proc_i[l]) + float(proc_j[l])
        dx_max = abs(dist.center) + dist.outer_half_width
        total += -(2.0 / gamma) * dw * dx_max
    return total


def make_pair_belief(xhat_i, xhat_j, meas_i, meas_j, proc_i, proc_j,
                     model_i, model_j, radius_i: float, radius_j: float,
                     gamma: float, sigma: float) -> PairBelief:
    """Assemble offsets and allowance for one robot pair at confidence sigma."""
    from .distributions import difference_of_uniforms, select_offset

    xhat_i = np.asarray(xhat_i, dtype=float)
    xhat_j = np.asarray(xhat_j, dtype=float)
    d = xhat_i.size
    e = np.empty(d)
    dists = []
    for l in range(d):
        dist = difference_of_uniforms(xhat_i[l] - xhat_j[l],
                                      float(meas_i[l]), float(meas_j[l]))
        dists.append(dist)
        e[l] = select_offset(dist, sigma).selected
    B = compute_B(proc_i, proc_j, dists, gamma)
    return PairBelief(e=e, B=B, delta_drift=model_i.drift - model_j.drift,
                      input_i=model_i.input_matrix, input_j=model_j.input_matrix,
                      combined_radius=radius_i + radius_j, gamma=gamma)


def make_obstacle_belief(xhat_i, xhat_k, meas_i, meas_k, proc_i, vel_noise_k,
                         model_i, radius_i: float, radius_k: float,
                         gamma: float, sigma_o: float,
                         reported_velocity) -> ObstacleBelief:
    """Same offset construction against an obstacle; its velocity noise is
    folded into the allowance alongside the robot's process noise."""
    from .distributions import difference_of_uniforms, select_offset

    xhat_i = np.asarray(xhat_i, dtype=float)
    xhat_k = np.asarray(xhat_k, dtype=float)
    d = xhat_i.size
    e = np.empty(d)
    dists = []
    for l in range(d):
        dist = difference_of_uniforms(xhat_i[l] - xhat_k[l],
                                      float(meas_i[l]), float(meas_k[l]))
        dists.append(dist)
        e[l] = select_offset(dist, sigma_o).selected
    B = compute_B(proc_i, vel_noise_k, dists, gamma)
    return ObstacleBelief(e=e, B=B, drift_i=model_i.drift,
                          input_i=model_i.input_matrix,
                          combined_radius=radius_i + radius_k, gamma=gamma,
                          reported_velocity=np.asarray(reported_velocity, dtype=float))


def pairwise_prsbc(belief: PairBelief, i: int, j: int, n_robots: int, m: int,
                   convention: str = PAPER_D_FACTOR) -> HalfspaceConstraint:
    """Probabilistic inter-robot row over the joint control vector."""
    d = belief.e.size
    gamma = belief.gamma
    coef = np.zeros(n_robots * m)
    coef[i * m:(i + 1) * m] = -2.0 * (belief.e @ belief.input_i) / gamma
    coef[j * m:(j + 1) * m] = +2.0 * (belief.e @ belief.input_j) / gamma
    rfac = _radius_factor(convention, d)
    bound = (float(belief.e @ belief.e) - rfac * belief.combined_radius ** 2
             + belief.B + 2.0 * float(belief.e @ belief.delta_drift) / gamma)
    return HalfspaceConstraint(coef, bound, ("robot_pair", i, j))


def robot_obstacle_prsbc(i: int, k: int, belief: ObstacleBelief,
                         n_robots: int, m: int,
                         convention: str = PAPER_D_FACTOR) -> HalfspaceConstraint:
    """Probabilistic robot-obstacle row; touches only robot i's block and
    carries the obstacle-velocity transport term in the bound."""
    d = belief.e.size
    gamma = belief.gamma
    coef = np.zeros(n_robots * m)
    coef[i * m:(i + 1) * m] = -2.0 * (belief.e @ belief.input_i) / gamma
    rfac = _radius_factor(convention, d)
    bound = (-2.0 * float(belief.e @ belief.reported_velocity) / gamma
             + float(belief.e @ belief.e) - rfac * belief.combined_radius ** 2
             + belief.B + 2.0 * float(belief.e @ belief.drift_i) / gamma)
    return HalfspaceConstraint(coef, bound, ("robot_obstacle", i, k))


def decentralized_split(constraint: HalfspaceConstraint, p_ij: float, p_ji: float,
                        i: int, j: int, m: int
                        ) -> tuple[HalfspaceConstraint, HalfspaceConstraint]:
    """Split a joint pair row into two per-robot rows by responsibility share.

    Adding the two split inequalities reproduces the joint one, so any pair
    of controls satisfying both also satisfies the original row.
    """
    total = p_ij + p_ji
    if total <= 0:
        raise ValueError(f"responsibilities must satisfy p_ij + p_ji > 0, "
                         f"got {p_ij}, {p_ji}")
    row_i = constraint.coefficients[i * m:(i + 1) * m].copy()
    row_j = constraint.coefficients[j * m:(j + 1) * m].copy()
    b_i = (p_ij / total) * constraint.bound
    b_j = (p_ji / total) * constraint.bound
    tag = constraint.tag + ("split",)
    return (HalfspaceConstraint(row_i, b_i, tag + (i,)),
            HalfspaceConstraint(row_j, b_j, tag + (j,)))


def sbc_pairwise(xhat_i, xhat_j, radius_i: float, radius_j: float, gamma: float,
                 model_i, model_j, i: int, j: int, n_robots: int,
                 m: int) -> HalfspaceConstraint:
    """Deterministic barrier row from measured positions (no offsets, no
    allowance), in the same 1/gamma row scaling as the probabilistic rows."""
    dx = np.asarray(xhat_i, dtype=float) - np.asarray(xhat_j, dtype=float)
    coef = np.zeros(n_robots * m)
    coef[i * m:(i + 1) * m] = -2.0 * (dx @ model_i.input_matrix) / gamma
    coef[j * m:(j + 1) * m] = +2.0 * (dx @ model_j.input_matrix) / gamma
    h = float(dx @ dx) - (radius_i + radius_j) ** 2
    bound = h + 2.0 * float(dx @ (model_i.drift - model_j.drift)) / gamma
    return HalfspaceConstraint(coef, bound, ("robot_pair", i, j))


def sbc_robot_obstacle(xhat_i, xhat_k, radius_i: float, radius_k: float,
                       gamma: float, model_i, reported_velocity,
                       i: int, k: int, n_robots: int, m: int) -> HalfspaceConstraint:
    """Deterministic robot-obstacle row with the velocity transport term."""
    dx = np.asarray(xhat_i, dtype=float) - np.asarray(xhat_k, dtype=float)
    coef = np.zeros(n_robots * m)
    coef[i * m:(i + 1) * m] = -2.0 * (dx @ model_i.input_matrix) / gamma
    h = float(dx @ dx) - (radius_i + radius_k) ** 2
    bound = (-2.0 * float(dx @ np.asarray(reported_velocity, dtype=float)) / gamma
             + h + 2.0 * float(dx @ model_i.drift) / gamma)
    return HalfspaceConstraint(coef, bound, ("robot_obstacle", i, k))


# ---------------------------------------------------------------------------
# batched kernels used by the per-step hot path
# ---------------------------------------------------------------------------

@njit(cache=True)
def _pair_rows(pos, dv, dw, radii, G, F, gamma, sigma, rad_factor, prob_mode):
    """All N(N-1)/2 inter-robot rows in one pass.

    prob_mode=True builds probabilistic rows (offsets + allowance at the
    given sigma and radius factor); False builds deterministic barrier rows.
    """
    n, d = pos.shape
    m = G.shape[2]
    n_pairs = n * (n - 1) // 2
    A = np.zeros((n_pairs, n * m))
    b = np.empty(n_pairs)
    e = np.empty(d)
    row = 0
    for i in range(n):
        for j in range(i + 1, n):
            B = 0.0
            for l in range(d):
                c = pos[i, l] - pos[j, l]
                if prob_mode:
                    ain = abs(dv[i, l] - dv[j, l])
                    aout = dv[i, l] + dv[j, l]
                    _, _, e[l] = _select_offset(c, ain, aout, sigma)
                    B += -(2.0 / gamma) * (dw[i, l] + dw[j, l]) * (abs(c) + aout)
                else:
                    e[l] = c
            rij = radii[i] + radii[j]
            rfac = rad_factor if prob_mode else 1.0
            ee = 0.0
            edf = 0.0
            for l in range(d):
                ee += e[l] * e[l]
                edf += e[l] * (F[i, l] - F[j, l])
            b[row] = ee - rfac * rij * rij + B + 2.0 * edf / gamma
            for q in range(m):
                ci = 0.0
                cj = 0.0
                for l in range(d):
                    ci += e[l] * G[i, l, q]
                    cj += e[l] * G[j, l, q]
                A[row, i * m + q] = -2.0 * ci / gamma
                A[row, j * m + q] = +2.0 * cj / gamma
            row += 1
    return A, b


@njit(cache=True)
def _obstacle_rows(pos, dv, dw, radii, G, F, obs_pos, obs_dv, obs_dw, obs_rad,
                   obs_vel, gamma, sigma_o, rad_factor, prob_mode):
    """All N*K robot-obstacle rows in one pass."""
    n, d = pos.shape
    m = G.shape[2]
    k_obs = obs_pos.shape[0]
    A = np.zeros((n * k_obs, n * m))
    b = np.empty(n * k_obs)
    e = np.empty(d)
    row = 0
    for i in range(n):
        for k in range(k_obs):
            B = 0.0
            for l in range(d):
                c = pos[i, l] - obs_pos[k, l]
                if prob_mode:
                    ain = abs(dv[i, l] - obs_dv[k, l])
                    aout = dv[i, l] + obs_dv[k, l]
                    _, _, e[l] = _select_offset(c, ain, aout, sigma_o)
                    B += -(2.0 / gamma) * (dw[i, l] + obs_dw[k, l]) * (abs(c) + aout)
                else:
                    e[l] = c
            rik = radii[i] + obs_rad[k]
            rfac = rad_factor if prob_mode else 1.0
            ee = 0.0
            edf = 0.0
            euk = 0.0
            for l in range(d):
                ee += e[l] * e[l]
                edf += e[l] * F[i, l]
                euk += e[l] * obs_vel[k, l]
            b[row] = -2.0 * euk / gamma + ee - rfac * rik * rik + B + 2.0 * edf / gamma
            for q in range(m):
                ci = 0.0
                for l in range(d):
                    ci += e[l] * G[i, l, q]
                A[row, i * m + q] = -2.0 * ci / gamma
            row += 1
    return A, b


def _pair_tags(n: int) -> list:
    return [("robot_pair", i, j) for i in range(n) for j in range(i + 1, n)]


def _obstacle_tags(n: int, k: int) -> list:
    return [("robot_obstacle", i, kk) for i in range(n) for kk in range(k)]


def build_all(pos, dv, dw, radii, G, F, gamma: float, sigma: float,
              sigma_o: float, mode: str = "prsbc",
              convention: str = PAPER_D_FACTOR,
              obstacles: dict | None = None,
              topology: str = "centralized",
              responsibility: np.ndarray | None = None,
              neighbor_radius: float | None = None):
    """Assemble the full constraint set for one control step.

    Arrays: ``pos``/``dv``/``dw`` are (N, d) measured positions and noise
    half-widths, ``radii`` (N,), ``G`` (N, d, m), ``F`` (N, d). ``obstacles``
    optionally carries the same fields for obstacles (keys ``pos``, ``dv``,
    ``dw``, ``radii``, ``vel``).

    Returns a joint ConstraintSet for the centralized topology, or a list of
    per-robot ConstraintSets (each over that robot's own control) for the
    decentralized one.
    """
    if mode not in ("prsbc", "sbc"):
        raise ValueError(f"unknown mode {mode!r}")
    pos = np.ascontiguousarray(pos, dtype=float)
    dv = np.ascontiguousarray(dv, dtype=float)
    dw = np.ascontiguousarray(dw, dtype=float)
    radii = np.ascontiguousarray(radii, dtype=float)
    G = np.ascontiguousarray(G, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    n, d = pos.shape
    m = G.shape[2]
    prob = mode == "prsbc"
    rfac = _radius_factor(convention, d)

    A_p, b_p = _pair_rows(pos, dv, dw, radii, G, F, gamma, sigma, rfac, prob)
    tags = _pair_tags(n)

    if obstacles is not None and len(obstacles["pos"]):
        A_o, b_o = _obstacle_rows(
            pos, dv, dw, radii, G, F,
            np.ascontiguousarray(obstacles["pos"], dtype=float),
            np.ascontiguousarray(obstacles["dv"], dtype=float),
            np.ascontiguousarray(obstacles["dw"], dtype=float),
            np.ascontiguousarray(obstacles["radii"], dtype=float),
            np.ascontiguousarray(obstacles["vel"], dtype=float),
            gamma, sigma_o, rfac, prob)
        tags_o = _obstacle_tags(n, len(obstacles["pos"]))
    else:
        A_o = np.zeros((0, n * m))
        b_o = np.zeros(0)
        tags_o = []

    if topology == "centralized":
        return ConstraintSet(A=np.vstack([A_p, A_o]),
                             b=np.concatenate([b_p, b_o]),
                             tags=tuple(tags + tags_o), n_u=n * m)
    if topology != "decentralized":
        raise ValueError(f"unknown topology {topology!r}")

    if responsibility is None:
        share = np.full((n, n), 0.5)
    else:
        share = np.asarray(responsibility, dtype=float)
        if share.shape == ():
            share = np.full((n, n), float(share))
    out = []
    pair_index = {}
    for row, (_, i, j) in enumerate(tags):
        pair_index[(i, j)] = row
    for i in range(n):
        rows = []
        bounds = []
        rtags = []
        for j in range(n):
            if j == i:
                continue
            if neighbor_radius is not None:
                if np.linalg.norm(pos[i] - pos[j]) > neighbor_radius:
                    continue
            a, bb = (i, j) if i < j else (j, i)
            row = pair_index[(a, bb)]
            total = share[i, j] + share[j, i]
            if total <= 0:
                raise ValueError(f"responsibilities p[{i},{j}] + p[{j},{i}] must be > 0")
            rows.append(A_p[row, i * m:(i + 1) * m])
            bounds.append((share[i, j] / total) * b_p[row])
            rtags.append(("robot_pair", a, bb, "split", i))
        for k in range(len(tags_o)):
            _, oi, ok = tags_o[k]
            if oi != i:
                continue
            rows.append(A_o[k, i * m:(i + 1) * m])
            bounds.append(b_o[k])
            rtags.append(("robot_obstacle", i, ok))
        A_i = np.array(rows) if rows else np.zeros((0, m))
        out.append(ConstraintSet(A=A_i, b=np.array(bounds), tags=tuple(rtags), n_u=m))
    return out
