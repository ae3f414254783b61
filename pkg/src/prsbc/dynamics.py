"""Robot and obstacle models, nominal control, measurement, and propagation.

Robots follow control-affine dynamics with bounded uniform process noise and
expose noisy position measurements with bounded uniform error. Unicycle
robots are handled through a near-identity map: the safety filter sees the
point a fixed lookahead distance in front of the axle, which tracks any
commanded planar velocity exactly, and the wrapped radius is inflated by the
lookahead distance to keep the certificate geometry conservative.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SINGLE_INTEGRATOR",
    "UNICYCLE_MAPPED",
    "RobotSpec",
    "ObstacleSpec",
    "WorldState",
    "AffineModel",
    "eval_affine",
    "nominal_controller",
    "unicycle_map",
    "initial_state",
    "filter_points",
    "effective_radius",
    "step_true_state",
    "measure",
]

SINGLE_INTEGRATOR = "single_integrator"
UNICYCLE_MAPPED = "unicycle_mapped"
_MODEL_KINDS = (SINGLE_INTEGRATOR, UNICYCLE_MAPPED)


@dataclass(frozen=True)
class RobotSpec:
    """Static description of one robot (geometry, limits, noise, task)."""

    id: int
    radius: float
    ctrl_limit: float
    meas_noise: np.ndarray       # per-axis measurement half-widths
    proc_noise: np.ndarray       # per-axis process-noise half-widths
    goal: np.ndarray
    start: np.ndarray
    model_kind: str = SINGLE_INTEGRATOR
    heading: float = 0.0         # initial heading, unicycle only
    lookahead: float = 0.1       # lookahead-point distance, unicycle only

    def __post_init__(self):
        object.__setattr__(self, "meas_noise", np.asarray(self.meas_noise, dtype=float))
        object.__setattr__(self, "proc_noise", np.asarray(self.proc_noise, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        if self.radius <= 0:
            raise ValueError(f"robot {self.id}: radius must be > 0")
        if self.ctrl_limit <= 0:
            raise ValueError(f"robot {self.id}: ctrl_limit must be > 0")
        if np.any(self.meas_noise < 0) or np.any(self.proc_noise < 0):
            raise ValueError(f"robot {self.id}: noise half-widths must be >= 0")
        if self.model_kind not in _MODEL_KINDS:
            raise ValueError(f"robot {self.id}: unknown model kind {self.model_kind!r}")
        if self.model_kind == UNICYCLE_MAPPED and self.lookahead <= 0:
            raise ValueError(f"robot {self.id}: lookahead must be > 0")
        d = self.start.size
        if not (self.goal.size == self.meas_noise.size == self.proc_noise.size == d):
            raise ValueError(f"robot {self.id}: inconsistent vector dimensions")

    @property
    def dim(self) -> int:
        return self.start.size


@dataclass(frozen=True)
class ObstacleSpec:
    """Passive moving obstacle with reported velocity and bounded noise."""

    id: int
    radius: float
    start: np.ndarray
    reported_velocity: np.ndarray
    meas_noise: np.ndarray
    vel_noise: np.ndarray

    def __post_init__(self):
        for name in ("start", "reported_velocity", "meas_noise", "vel_noise"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.radius <= 0:
            raise ValueError(f"obstacle {self.id}: radius must be > 0")
        if np.any(self.meas_noise < 0) or np.any(self.vel_noise < 0):
            raise ValueError(f"obstacle {self.id}: noise half-widths must be >= 0")


@dataclass(frozen=True)
class WorldState:
    """Immutable per-step snapshot of true robot and obstacle states."""

    time: float
    positions: np.ndarray            # (N, d) true robot centers
    headings: np.ndarray             # (N,)  used by unicycle robots only
    obstacle_positions: np.ndarray   # (K, d)


@dataclass(frozen=True)
class AffineModel:
    """Control-affine terms evaluated at a measurement: xdot = drift + input @ u."""

    drift: np.ndarray          # (d,)
    input_matrix: np.ndarray   # (d, m)


def eval_affine(spec: RobotSpec, measured_pos: np.ndarray,
                heading: float | None = None) -> AffineModel:
    """Zeroth-order model at the measured position.

    Both supported kinds reduce to zero drift and identity input: the single
    integrator by definition, the unicycle because the filter operates on
    its lookahead point, which the inversion map drives at exactly the
    commanded velocity.
    """
    d = np.asarray(measured_pos).size
    if spec.model_kind in (SINGLE_INTEGRATOR, UNICYCLE_MAPPED):
        return AffineModel(drift=np.zeros(d), input_matrix=np.eye(d))
    raise ValueError(f"unknown model kind {spec.model_kind!r}")


def nominal_controller(measured_pos: np.ndarray, goal: np.ndarray,
                       gain: float, ctrl_limit: float) -> np.ndarray:
    """Proportional go-to-goal velocity, magnitude-clamped to ctrl_limit."""
    if gain <= 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    u = -gain * (np.asarray(measured_pos, dtype=float) - np.asarray(goal, dtype=float))
    speed = float(np.linalg.norm(u))
    if speed > ctrl_limit:
        u = u * (ctrl_limit / speed)
    return u


def unicycle_map(desired_velocity: np.ndarray, heading: float,
                 lookahead: float) -> tuple[float, float]:
    """Invert the lookahead-point kinematics: planar velocity -> (v, omega)."""
    if lookahead <= 0:
        raise ValueError(f"lookahead must be > 0, got {lookahead}")
    vx, vy = float(desired_velocity[0]), float(desired_velocity[1])
    c, s = np.cos(heading), np.sin(heading)
    v = vx * c + vy * s
    omega = (-vx * s + vy * c) / lookahead
    return float(v), float(omega)


def initial_state(robots: list[RobotSpec], obstacles: list[ObstacleSpec]) -> WorldState:
    d = robots[0].dim
    positions = np.array([r.start for r in robots], dtype=float)
    headings = np.array([r.heading for r in robots], dtype=float)
    obs = (np.array([o.start for o in obstacles], dtype=float)
           if obstacles else np.zeros((0, d)))
    return WorldState(time=0.0, positions=positions, headings=headings,
                      obstacle_positions=obs)


def filter_points(state: WorldState, robots: list[RobotSpec]) -> np.ndarray:
    """True positions of the points the safety filter reasons about."""
    pts = state.positions.copy()
    for i, spec in enumerate(robots):
        if spec.model_kind == UNICYCLE_MAPPED:
            th = state.headings[i]
            pts[i, 0] += spec.lookahead * np.cos(th)
            pts[i, 1] += spec.lookahead * np.sin(th)
    return pts


def effective_radius(spec: RobotSpec) -> float:
    """Safety radius seen by the certificates (lookahead-inflated for unicycles)."""
    if spec.model_kind == UNICYCLE_MAPPED:
        return spec.radius + spec.lookahead
    return spec.radius


def _wrap_angle(a: float) -> float:
    # maps to (-pi, pi]
    return float(np.pi - (np.pi - a) % (2.0 * np.pi))


def step_true_state(state: WorldState, controls: np.ndarray,
                    robots: list[RobotSpec], obstacles: list[ObstacleSpec],
                    dt: float, rng: np.random.Generator) -> WorldState:
    """Explicit Euler step with one process-noise draw per entity.

    ``controls`` holds the safety-filtered planar velocity per robot;
    unicycle robots realize it through the inversion map at their current
    true heading.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    n, d = state.positions.shape
    pos = state.positions.copy()
    head = state.headings.copy()
    for i, spec in enumerate(robots):
        w = rng.uniform(-spec.proc_noise, spec.proc_noise)
        if spec.model_kind == SINGLE_INTEGRATOR:
            pos[i] += (controls[i] + w) * dt
        else:
            v, omega = unicycle_map(controls[i], head[i], spec.lookahead)
            c, s = np.cos(head[i]), np.sin(head[i])
            pos[i, 0] += (v * c + w[0]) * dt
            pos[i, 1] += (v * s + w[1]) * dt
            head[i] = _wrap_angle(head[i] + omega * dt)
    obs = state.obstacle_positions.copy()
    for k, spec in enumerate(obstacles):
        w = rng.uniform(-spec.vel_noise, spec.vel_noise)
        obs[k] += (spec.reported_velocity + w) * dt
    return WorldState(time=state.time + dt, positions=pos, headings=head,
                      obstacle_positions=obs)


def measure(state: WorldState, robots: list[RobotSpec],
            obstacles: list[ObstacleSpec],
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Noisy positions of robot filter points and obstacles (fresh draw per call)."""
    pts = filter_points(state, robots)
    for i, spec in enumerate(robots):
        pts[i] += rng.uniform(-spec.meas_noise, spec.meas_noise)
    obs = state.obstacle_positions.copy()
    for k, spec in enumerate(obstacles):
        obs[k] += rng.uniform(-spec.meas_noise, spec.meas_noise)
    return pts, obs
