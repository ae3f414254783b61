"""Scenario engine: measure, certify, solve, actuate, and verify.

One trial is a sequential loop over steps; trials are independent given
their seeds. Two RNG streams are derived from the trial seed: one drives
measurement and process noise (so trajectories are bit-reproducible), the
other drives the Monte Carlo safety estimator (so sampling the metric never
perturbs the trajectory).
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import certificates, dynamics, qp

__all__ = [
    "CONTROLLERS",
    "Scenario",
    "ScenarioError",
    "TrajectoryLog",
    "Metrics",
    "TrialsResult",
    "run",
    "empirical_pair_safety",
    "box_overlap_safety",
    "verify_chance_constraint",
    "stepwise_sigma",
    "monte_carlo_trials",
    "trial_parallelism",
]

CONTROLLERS = ("prsbc_centralized", "prsbc_decentralized", "sbc", "none")
SAFETY_METRICS = ("monte_carlo", "box_overlap")

STATUS_NAMES = ("optimal", "infeasible_fallback", "nominal")
_ST_OPT, _ST_FALLBACK, _ST_NOMINAL = 0, 1, 2


class ScenarioError(ValueError):
    """Scenario fails validation (bad field or unsafe initial layout)."""


@dataclass(frozen=True)
class Scenario:
    """Declarative experiment description; immutable and picklable."""

    robots: tuple
    obstacles: tuple = ()
    sigma: float = 0.9
    sigma_o: float = 0.9
    gamma: float = 100.0
    dt: float = 0.02
    max_steps: int = 2000
    seed: int = 0
    controller: str = "prsbc_centralized"
    convention: str = certificates.PAPER_D_FACTOR
    gain: float = 1.0
    goal_tolerance: float = 0.05
    responsibility: object = 0.5          # scalar or (N, N) share matrix
    neighbor_radius: float | None = None
    safety_samples: int = 10_000
    safety_stride: int = 10
    safety_metric: str = "monte_carlo"
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    name: str = "scenario"

    def validated(self) -> "Scenario":
        validate_scenario(self)
        return self


def validate_scenario(sc: Scenario) -> None:
    if not sc.robots:
        raise ScenarioError("scenario has no robots")
    if not (0.5 <= sc.sigma <= 1.0 and 0.5 <= sc.sigma_o <= 1.0):
        raise ScenarioError(f"sigma and sigma_o must lie in [0.5, 1], got "
                            f"{sc.sigma}, {sc.sigma_o}")
    if sc.dt <= 0:
        raise ScenarioError(f"dt must be > 0, got {sc.dt}")
    if sc.gamma <= 0:
        raise ScenarioError(f"gamma must be > 0, got {sc.gamma}")
    if sc.max_steps < 1:
        raise ScenarioError(f"max_steps must be >= 1, got {sc.max_steps}")
    if sc.controller not in CONTROLLERS:
        raise ScenarioError(f"unknown controller {sc.controller!r}")
    if sc.convention not in (certificates.PAPER_D_FACTOR, certificates.SBC_COMPAT):
        raise ScenarioError(f"unknown convention {sc.convention!r}")
    if sc.safety_metric not in SAFETY_METRICS:
        raise ScenarioError(f"unknown safety metric {sc.safety_metric!r}")
    if sc.gain <= 0:
        raise ScenarioError(f"gain must be > 0, got {sc.gain}")
    d = sc.robots[0].dim
    for r in sc.robots:
        if r.dim != d:
            raise ScenarioError("robots disagree on workspace dimension")
    if sc.safety_metric == "box_overlap" and d != 2:
        raise ScenarioError("box_overlap safety metric is 2-D only")

    # initial layout must be collision-free over the full measurement
    # supports, not just at the nominal positions
    state = dynamics.initial_state(list(sc.robots), list(sc.obstacles))
    pts = dynamics.filter_points(state, list(sc.robots))
    radii = np.array([dynamics.effective_radius(r) for r in sc.robots])
    n = len(sc.robots)
    for i in range(n):
        for j in range(i + 1, n):
            gap = np.maximum(
                np.abs(pts[i] - pts[j]) - (sc.robots[i].meas_noise
                                           + sc.robots[j].meas_noise), 0.0)
            if np.linalg.norm(gap) < radii[i] + radii[j]:
                raise ScenarioError(
                    f"robots {sc.robots[i].id} and {sc.robots[j].id} are not "
                    f"collision-free over their initial measurement supports")
    for i in range(n):
        for k, ob in enumerate(sc.obstacles):
            gap = np.maximum(
                np.abs(pts[i] - state.obstacle_positions[k])
                - (sc.robots[i].meas_noise + ob.meas_noise), 0.0)
            if np.linalg.norm(gap) < radii[i] + ob.radius:
                raise ScenarioError(
                    f"robot {sc.robots[i].id} and obstacle {ob.id} are not "
                    f"collision-free over their initial measurement supports")


@dataclass
class TrajectoryLog:
    """Per-step record of one trial (arrays trimmed to executed length)."""

    times: np.ndarray          # (T,)
    true_pos: np.ndarray       # (T, N, d) robot centers
    meas_pos: np.ndarray       # (T, N, d) measured filter points
    nominal: np.ndarray        # (T, N, m)
    safe: np.ndarray           # (T, N, m)
    status: np.ndarray         # (T, N) int codes into STATUS_NAMES
    pair_dist: np.ndarray      # (T, P) true center distances, pairs (i<j)
    obstacle_pos: np.ndarray   # (T, K, d)
    solve_times: np.ndarray    # (T, N) seconds per robot-solve (joint/n when
                               # centralized, 0 when unfiltered)

    @property
    def steps(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class Metrics:
    min_true_pair_distance: float
    min_empirical_pair_safety: float
    collision_step_count: int
    goal_reach_times: tuple
    fallback_count: int
    mean_solve_time_per_robot: float


@dataclass(frozen=True)
class TrialsResult:
    per_trial: tuple
    seeds: tuple

    def aggregate(self) -> dict:
        fields = ("min_true_pair_distance", "min_empirical_pair_safety",
                  "collision_step_count", "fallback_count",
                  "mean_solve_time_per_robot")
        out = {}
        for f in fields:
            vals = np.array([getattr(t, f) for t in self.per_trial], dtype=float)
            out[f] = {"min": float(vals.min()), "mean": float(vals.mean()),
                      "max": float(vals.max())}
        reach = [t for m in self.per_trial for t in m.goal_reach_times]
        reached = [t for t in reach if t is not None]
        out["goal_reach_times"] = {
            "reached_fraction": len(reached) / len(reach) if reach else 0.0,
            "mean_s": float(np.mean(reached)) if reached else None,
            "max_s": float(np.max(reached)) if reached else None,
        }
        return out


def stepwise_sigma(sigma_all: float, n_steps: int) -> float:
    """Per-step confidence whose n_steps-fold product equals sigma_all."""
    if not 0.0 < sigma_all <= 1.0:
        raise ValueError(f"sigma_all must lie in (0, 1], got {sigma_all}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    return float(np.exp(np.log(sigma_all) / n_steps))


def empirical_pair_safety(measured_i, measured_j, meas_noise_i, meas_noise_j,
                          combined_radius: float, n_samples: int,
                          rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the step-wise safety probability.

    True positions are uniform inside the measurement boxes; the estimate is
    the fraction of joint draws at distance >= combined_radius.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    mi = np.asarray(measured_i, dtype=float)
    mj = np.asarray(measured_j, dtype=float)
    vi = rng.uniform(-1.0, 1.0, size=(n_samples, mi.size)) * np.asarray(meas_noise_i)
    vj = rng.uniform(-1.0, 1.0, size=(n_samples, mj.size)) * np.asarray(meas_noise_j)
    dx = (mi - vi) - (mj - vj)
    return float(np.mean(np.einsum("sd,sd->s", dx, dx) >= combined_radius ** 2))


def box_overlap_safety(measured_i, measured_j, meas_noise_i, meas_noise_j,
                       radius_i: float, radius_j: float) -> float:
    """2-D alternative metric: one minus the overlap fraction of the two
    radius-inflated error boxes, minimized over the pair."""
    mi = np.asarray(measured_i, dtype=float)
    mj = np.asarray(measured_j, dtype=float)
    if mi.size != 2:
        raise ValueError("box_overlap_safety is 2-D only")
    half_i = np.asarray(meas_noise_i, dtype=float) + radius_i
    half_j = np.asarray(meas_noise_j, dtype=float) + radius_j
    overlap = 1.0
    for l in range(2):
        lo = max(mi[l] - half_i[l], mj[l] - half_j[l])
        hi = min(mi[l] + half_i[l], mj[l] + half_j[l])
        overlap *= max(0.0, hi - lo)
    area_i = float(np.prod(2.0 * half_i))
    area_j = float(np.prod(2.0 * half_j))
    ratios = []
    for area in (area_i, area_j):
        ratios.append(1.0 - overlap / area if area > 0 else (0.0 if overlap > 0 else 1.0))
    return min(ratios)


def verify_chance_constraint(xhat_i, xhat_j, meas_noise_i, meas_noise_j,
                             proc_noise_i, proc_noise_j, combined_radius: float,
                             gamma: float, u_i, u_j, n_samples: int,
                             rng: np.random.Generator) -> float:
    """Frequency of the barrier condition hdot + gamma*h >= 0 over joint
    draws of measurement and process noise (single-integrator models)."""
    d = np.asarray(xhat_i).size
    vi = rng.uniform(-1.0, 1.0, size=(n_samples, d)) * np.asarray(meas_noise_i)
    vj = rng.uniform(-1.0, 1.0, size=(n_samples, d)) * np.asarray(meas_noise_j)
    wi = rng.uniform(-1.0, 1.0, size=(n_samples, d)) * np.asarray(proc_noise_i)
    wj = rng.uniform(-1.0, 1.0, size=(n_samples, d)) * np.asarray(proc_noise_j)
    dx = (np.asarray(xhat_i) - vi) - (np.asarray(xhat_j) - vj)
    h = np.einsum("sd,sd->s", dx, dx) - combined_radius ** 2
    rel = (np.asarray(u_i) - np.asarray(u_j))[None, :] + (wi - wj)
    hdot = 2.0 * np.einsum("sd,sd->s", dx, rel)
    return float(np.mean(hdot + gamma * h >= 0.0))


def _pair_list(n: int) -> list:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def run(scenario: Scenario) -> tuple[TrajectoryLog, Metrics]:
    """Execute one trial: measure, build certificates, solve, actuate."""
    validate_scenario(scenario)
    sc = scenario
    robots = list(sc.robots)
    obstacles = list(sc.obstacles)
    n = len(robots)
    k_obs = len(obstacles)
    d = robots[0].dim
    m = d

    rng_dyn = np.random.default_rng([sc.seed, 0])
    rng_metric = np.random.default_rng([sc.seed, 1])

    state = dynamics.initial_state(robots, obstacles)
    radii_eff = np.array([dynamics.effective_radius(r) for r in robots])
    radii_true = np.array([r.radius for r in robots])
    dv = np.array([r.meas_noise for r in robots])
    dw = np.array([r.proc_noise for r in robots])
    goals = np.array([r.goal for r in robots])
    limits = np.array([r.ctrl_limit for r in robots])
    G = np.stack([dynamics.eval_affine(r, r.start).input_matrix for r in robots])
    F = np.stack([dynamics.eval_affine(r, r.start).drift for r in robots])
    obs_static = {
        "dv": np.array([o.meas_noise for o in obstacles]) if obstacles else np.zeros((0, d)),
        "dw": np.array([o.vel_noise for o in obstacles]) if obstacles else np.zeros((0, d)),
        "radii": np.array([o.radius for o in obstacles]) if obstacles else np.zeros(0),
        "vel": np.array([o.reported_velocity for o in obstacles]) if obstacles else np.zeros((0, d)),
    }
    box_lo, box_hi = qp.box_from_limits(limits, m)
    eye = np.eye(n * m)
    eye_robot = np.eye(m)
    pairs = _pair_list(n)

    T = sc.max_steps
    times = np.empty(T)
    true_pos = np.empty((T, n, d))
    meas_pos = np.empty((T, n, d))
    nominal = np.empty((T, n, m))
    safe = np.empty((T, n, m))
    status = np.empty((T, n), dtype=np.int8)
    pair_dist = np.empty((T, len(pairs)))
    obstacle_pos = np.empty((T, k_obs, d))
    solve_times = np.zeros((T, n))

    fallback_count = 0
    solve_time_total = 0.0
    solve_count = 0           # robot-solves (centralized solve counts n)
    min_safety = 1.0
    collision_steps = 0
    reach_time = [None] * n
    centralized = sc.controller in ("prsbc_centralized", "sbc")
    mode = "sbc" if sc.controller == "sbc" else "prsbc"

    steps = 0
    for step in range(T):
        meas_r, meas_o = dynamics.measure(state, robots, obstacles, rng_dyn)
        u_nom = np.empty((n, m))
        for i in range(n):
            u_nom[i] = dynamics.nominal_controller(meas_r[i], goals[i],
                                                   sc.gain, limits[i])

        if sc.controller == "none":
            u_safe = u_nom.copy()
            st = np.full(n, _ST_NOMINAL, dtype=np.int8)
        elif centralized:
            obs_args = None
            if k_obs:
                obs_args = dict(obs_static, pos=meas_o)
            cs = certificates.build_all(
                meas_r, dv, dw, radii_eff, G, F, sc.gamma, sc.sigma, sc.sigma_o,
                mode=mode, convention=sc.convention, obstacles=obs_args,
                topology="centralized")
            C = np.vstack([cs.A, eye, -eye])
            dvec = np.concatenate([cs.b, box_hi, -box_lo])
            t0 = time.perf_counter()
            u, _, _, code, _ = qp.solve_arrays(u_nom.ravel(), C, dvec,
                                               sc.qp_tol, sc.qp_max_iter)
            elapsed = time.perf_counter() - t0
            solve_times[step, :] = elapsed / n
            solve_time_total += elapsed
            solve_count += n
            if code != 0:
                fallback_count += 1
                st = np.full(n, _ST_FALLBACK, dtype=np.int8)
            else:
                st = np.full(n, _ST_OPT, dtype=np.int8)
            u_safe = u.reshape(n, m)
        else:
            obs_args = None
            if k_obs:
                obs_args = dict(obs_static, pos=meas_o)
            sets = certificates.build_all(
                meas_r, dv, dw, radii_eff, G, F, sc.gamma, sc.sigma, sc.sigma_o,
                mode=mode, convention=sc.convention, obstacles=obs_args,
                topology="decentralized", responsibility=sc.responsibility,
                neighbor_radius=sc.neighbor_radius)
            u_safe = np.empty((n, m))
            st = np.empty(n, dtype=np.int8)
            for i in range(n):
                C = np.vstack([sets[i].A, eye_robot, -eye_robot])
                dvec = np.concatenate([sets[i].b, box_hi[i * m:(i + 1) * m],
                                       -box_lo[i * m:(i + 1) * m]])
                t0 = time.perf_counter()
                u, _, _, code, _ = qp.solve_arrays(u_nom[i], C, dvec,
                                                   sc.qp_tol, sc.qp_max_iter)
                elapsed = time.perf_counter() - t0
                solve_times[step, i] = elapsed
                solve_time_total += elapsed
                solve_count += 1
                if code != 0:
                    fallback_count += 1
                    st[i] = _ST_FALLBACK
                    u_safe[i] = 0.0
                else:
                    st[i] = _ST_OPT
                    u_safe[i] = u

        times[step] = state.time
        true_pos[step] = state.positions
        meas_pos[step] = meas_r
        nominal[step] = u_nom
        safe[step] = u_safe
        status[step] = st
        if k_obs:
            obstacle_pos[step] = state.obstacle_positions
        collided = False
        for p, (i, j) in enumerate(pairs):
            dist = float(np.linalg.norm(state.positions[i] - state.positions[j]))
            pair_dist[step, p] = dist
            if dist < radii_true[i] + radii_true[j]:
                collided = True
        for k in range(k_obs):
            for i in range(n):
                dist = float(np.linalg.norm(state.positions[i]
                                            - state.obstacle_positions[k]))
                if dist < radii_true[i] + obstacles[k].radius:
                    collided = True
        if collided:
            collision_steps += 1

        if step % sc.safety_stride == 0:
            min_safety = min(min_safety, _step_safety(sc, meas_r, meas_o, dv,
                                                      radii_eff, obs_static,
                                                      obstacles, rng_metric))

        for i in range(n):
            if reach_time[i] is None:
                if np.linalg.norm(state.positions[i] - goals[i]) <= sc.goal_tolerance:
                    reach_time[i] = float(state.time)

        steps = step + 1
        if all(t is not None for t in reach_time):
            break
        state = dynamics.step_true_state(state, u_safe, robots, obstacles,
                                         sc.dt, rng_dyn)

    log = TrajectoryLog(
        times=times[:steps], true_pos=true_pos[:steps], meas_pos=meas_pos[:steps],
        nominal=nominal[:steps], safe=safe[:steps], status=status[:steps],
        pair_dist=pair_dist[:steps],
        obstacle_pos=obstacle_pos[:steps] if k_obs else np.zeros((steps, 0, d)),
        solve_times=solve_times[:steps])

    min_pair = float(pair_dist[:steps].min()) if pairs else float("inf")
    metrics = Metrics(
        min_true_pair_distance=min_pair,
        min_empirical_pair_safety=float(min_safety),
        collision_step_count=collision_steps,
        goal_reach_times=tuple(reach_time),
        fallback_count=fallback_count,
        mean_solve_time_per_robot=(solve_time_total / solve_count
                                   if solve_count else 0.0),
    )
    return log, metrics


def _step_safety(sc, meas_r, meas_o, dv, radii_eff, obs_static, obstacles, rng):
    """Minimum pairwise safety estimate at one step (robot pairs and
    robot-obstacle pairs)."""
    n = meas_r.shape[0]
    worst = 1.0
    for i in range(n):
        for j in range(i + 1, n):
            if sc.safety_metric == "monte_carlo":
                val = empirical_pair_safety(meas_r[i], meas_r[j], dv[i], dv[j],
                                            radii_eff[i] + radii_eff[j],
                                            sc.safety_samples, rng)
            else:
                val = box_overlap_safety(meas_r[i], meas_r[j], dv[i], dv[j],
                                         radii_eff[i], radii_eff[j])
            worst = min(worst, val)
        for k, ob in enumerate(obstacles):
            if sc.safety_metric == "monte_carlo":
                val = empirical_pair_safety(meas_r[i], meas_o[k], dv[i],
                                            obs_static["dv"][k],
                                            radii_eff[i] + ob.radius,
                                            sc.safety_samples, rng)
            else:
                val = box_overlap_safety(meas_r[i], meas_o[k], dv[i],
                                         obs_static["dv"][k],
                                         radii_eff[i], ob.radius)
            worst = min(worst, val)
    return worst


def _run_seeded(args):
    scenario, seed = args
    _, metrics = run(replace(scenario, seed=int(seed)))
    return metrics


def trial_parallelism(n_trials: int) -> int:
    """Worker count for trial batches, capped by PRSBC_THREADS (default 1)."""
    cap = int(os.environ.get("PRSBC_THREADS", "1") or "1")
    return max(1, min(cap, n_trials))


def monte_carlo_trials(scenario: Scenario, n_trials: int,
                       base_seed: int | None = None) -> TrialsResult:
    """Run n_trials with consecutive seeds and collect per-trial metrics.

    Trials are embarrassingly parallel; aggregation order is fixed by seed,
    so results do not depend on the worker count.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if base_seed is None:
        base_seed = scenario.seed
    seeds = tuple(int(base_seed) + t for t in range(n_trials))
    workers = trial_parallelism(n_trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(_run_seeded, [(scenario, s) for s in seeds]))
    else:
        metrics = [_run_seeded((scenario, s)) for s in seeds]
    return TrialsResult(per_trial=tuple(metrics), seeds=seeds)
