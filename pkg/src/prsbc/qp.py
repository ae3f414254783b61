"""Minimally-invasive control correction.

Solves  min ||u - u_ref||^2  subject to stacked half-space rows and a
per-component box, by a dual active-set method: start at the unconstrained
optimum, repeatedly pull in the most violated row, taking full steps (row
becomes active) or partial steps (a blocking active row is dropped when its
multiplier would cross zero). Ties break on the lowest index, so the solver
is deterministic. The objective Hessian is the identity, which keeps every
step a plain projection and guarantees active normals stay independent.

Infeasibility is detected exactly (a violated row whose normal lies in the
span of the active ones with no droppable blocker admits an unbounded dual
ray); the fallback is the zero control, the safe stop behavior.
"""

import time
from dataclasses import dataclass

import numpy as np

from ._accel import njit
from .certificates import ConstraintSet

__all__ = [
    "QPProblem",
    "QPSolution",
    "KKTReport",
    "box_from_limits",
    "solve",
    "solve_arrays",
    "check_kkt",
    "STATUS_OPTIMAL",
    "STATUS_FALLBACK",
]

STATUS_OPTIMAL = "optimal"
STATUS_FALLBACK = "infeasible_fallback"


def box_from_limits(ctrl_limits, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-component box inscribed in each robot's control-norm ball.

    The 2-norm bound ||u_i|| <= alpha_i is replaced by |u_i|_inf <=
    alpha_i/sqrt(m), which never exceeds the ball.
    """
    hi = np.repeat(np.asarray(ctrl_limits, dtype=float) / np.sqrt(m), m)
    return -hi, hi


@dataclass(frozen=True)
class QPProblem:
    """Reference control, stacked rows, and box bounds (lo <= u <= hi)."""

    reference: np.ndarray
    rows: ConstraintSet
    box_lo: np.ndarray
    box_hi: np.ndarray

    def __post_init__(self):
        n_u = self.reference.size
        if self.rows.A.shape[1] != n_u:
            raise ValueError(f"rows have {self.rows.A.shape[1]} columns, "
                             f"expected {n_u}")
        if self.box_lo.size != n_u or self.box_hi.size != n_u:
            raise ValueError("box bounds must match the control dimension")
        if np.any(self.box_lo > self.box_hi):
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def n_u(self) -> int:
        return self.reference.size

    @classmethod
    def build(cls, reference, rows, box_lo, box_hi) -> "QPProblem":
        reference = np.asarray(reference, dtype=float)
        if isinstance(rows, ConstraintSet):
            cs = rows
        else:
            rows = list(rows)
            if rows:
                cs = ConstraintSet(A=np.array([r.coefficients for r in rows], dtype=float),
                                   b=np.array([r.bound for r in rows], dtype=float),
                                   tags=tuple(r.tag for r in rows),
                                   n_u=reference.size)
            else:
                cs = ConstraintSet(A=np.zeros((0, reference.size)), b=np.zeros(0),
                                   tags=(), n_u=reference.size)
        return cls(reference=reference, rows=cs,
                   box_lo=np.asarray(box_lo, dtype=float),
                   box_hi=np.asarray(box_hi, dtype=float))

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All constraints as one C u <= d system (rows then box faces)."""
        n_u = self.n_u
        eye = np.eye(n_u)
        C = np.vstack([self.rows.A, eye, -eye])
        d = np.concatenate([self.rows.b, self.box_hi, -self.box_lo])
        return C, d


@dataclass(frozen=True)
class QPSolution:
    u: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    solve_time: float
    multipliers: np.ndarray   # over the stacked (rows + box) system


@dataclass(frozen=True)
class KKTReport:
    primal_violation_max: float
    stationarity_residual: float
    complementarity_residual: float
    violated_rows: tuple


@njit(cache=True)
def _solve_kernel(g, C, d, feas_tol, max_iter):
    """Dual active-set projection onto {u : C u <= d} from g.

    Returns (x, lam, iters, status) with status 0 optimal, 1 infeasible,
    2 iteration limit; lam holds nonnegative multipliers for the gradient
    convention of ||x-g||^2 (so stationarity is 2(x-g) + C^T lam = 0).
    """
    n = g.size
    nr = C.shape[0]
    x = g.copy()
    lam_full = np.zeros(nr)
    act = np.empty(n, dtype=np.int64)
    mu = np.zeros(n)
    nact = 0
    iters = 0
    status = 2
    while iters < max_iter:
        iters += 1
        # most violated inactive row; strict > keeps the lowest index on ties
        s = C @ x - d
        p = -1
        s_best = feas_tol
        for r in range(nr):
            if s[r] > s_best:
                in_act = False
                for k in range(nact):
                    if act[k] == r:
                        in_act = True
                        break
                if not in_act:
                    s_best = s[r]
                    p = r
        if p < 0:
            status = 0
            break
        cp = C[p]
        cpcp = cp @ cp
        u_plus = 0.0
        resolved = False
        while iters < max_iter:
            iters += 1
            s_p = cp @ x - d[p]
            if nact > 0:
                N = C[act[:nact]]
                r_dir = np.linalg.solve(N @ N.T, N @ cp)
                z = cp - N.T @ r_dir
            else:
                r_dir = np.zeros(0)
                z = cp.copy()
            zz = z @ z
            # a full active set leaves no null-space direction to move along
            if nact >= n or zz <= 1e-14 * max(1.0, cpcp):
                t2 = np.inf
            else:
                t2 = s_p / zz
            t1 = np.inf
            l_block = -1
            for k in range(nact):
                if r_dir[k] > 1e-14:
                    tk = mu[k] / r_dir[k]
                    if tk < t1:
                        t1 = tk
                        l_block = k
            if not np.isfinite(t2) and not np.isfinite(t1):
                return np.zeros(n), np.zeros(nr), iters, 1
            t = min(t1, t2)
            for k in range(nact):
                mu[k] -= t * r_dir[k]
            u_plus += t
            if np.isfinite(t2) and t == t2:
                x = x - t * z
                act[nact] = p
                mu[nact] = u_plus
                nact += 1
                resolved = True
                break
            if np.isfinite(t2):
                x = x - t * z
            for k in range(l_block, nact - 1):
                act[k] = act[k + 1]
                mu[k] = mu[k + 1]
            nact -= 1
        if not resolved and iters >= max_iter:
            status = 2
            break
    if status != 0:
        return np.zeros(n), np.zeros(nr), iters, status
    for k in range(nact):
        lam_full[act[k]] = 2.0 * mu[k]
    return x, lam_full, iters, 0


@njit(cache=True)
def _kkt_residual(g, C, d, x, lam):
    """max of primal violation, stationarity and complementarity residuals
    for the objective ||x - g||^2."""
    n = g.size
    nr = C.shape[0]
    primal = 0.0
    comp = 0.0
    grad = 2.0 * (x - g)
    for r in range(nr):
        s = 0.0
        for q in range(n):
            s += C[r, q] * x[q]
        slack = s - d[r]
        if slack > primal:
            primal = slack
        c = abs(lam[r] * slack)
        if c > comp:
            comp = c
        for q in range(n):
            grad[q] += C[r, q] * lam[r]
    stat = 0.0
    for q in range(n):
        a = abs(grad[q])
        if a > stat:
            stat = a
    res = primal
    if stat > res:
        res = stat
    if comp > res:
        res = comp
    return res


def solve_arrays(reference: np.ndarray, C: np.ndarray, d: np.ndarray,
                 tol: float = 1e-8, max_iter: int = 200):
    """Solver core on raw stacked arrays; returns (u, lam, iters, status_code,
    kkt_residual). Used directly by the per-step simulation path."""
    scale = max(1.0, float(np.abs(d).max()) if d.size else 1.0)
    x, lam, iters, code = _solve_kernel(reference, C, d, tol * scale, max_iter)
    if code == 0:
        res = float(_kkt_residual(reference, C, d, x, lam))
        if res > tol * scale:
            # numerically unsound optimum: refuse it, take the safe stop
            return np.zeros_like(reference), np.zeros(d.size), iters, 1, res
        return x, lam, iters, 0, res
    return np.zeros_like(reference), np.zeros(d.size), iters, code, float("nan")


def solve(problem: QPProblem, tol: float = 1e-8, max_iter: int = 200) -> QPSolution:
    """Solve the correction QP; on infeasibility or iteration exhaustion the
    controls fall back to exactly zero with the status flagged."""
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    C, d = problem.stacked()
    t0 = time.perf_counter()
    u, lam, iters, code, res = solve_arrays(problem.reference, C, d, tol, max_iter)
    dt = time.perf_counter() - t0
    if code == 0:
        return QPSolution(u=u, status=STATUS_OPTIMAL, kkt_residual=res,
                          iterations=iters, solve_time=dt, multipliers=lam)
    return QPSolution(u=np.zeros(problem.n_u), status=STATUS_FALLBACK,
                      kkt_residual=float("nan"), iterations=iters,
                      solve_time=dt, multipliers=np.zeros(d.size))


def check_kkt(problem: QPProblem, u: np.ndarray, active_tol: float = 1e-7) -> KKTReport:
    """Independent optimality check: recover nonnegative multipliers for the
    rows active at u by nonnegative least squares, then report the residuals.

    For an infeasible point this still reports the primal picture, listing
    every violated row tag.
    """
    from scipy.optimize import nnls

    u = np.asarray(u, dtype=float)
    C, d = problem.stacked()
    slack = C @ u - d
    primal = float(max(0.0, slack.max())) if slack.size else 0.0
    tags = list(problem.rows.tags) + [("box", q) for q in range(2 * problem.n_u)]
    violated = tuple(tags[r] for r in range(slack.size) if slack[r] > active_tol)

    grad = 2.0 * (u - problem.reference)
    active = np.where(np.abs(slack) <= active_tol)[0]
    lam = np.zeros(slack.size)
    if active.size:
        sol, _ = nnls(C[active].T, -grad)
        lam[active] = sol
    stat = float(np.abs(grad + C.T @ lam).max())
    comp = float(np.abs(lam * slack).max()) if slack.size else 0.0
    return KKTReport(primal_violation_max=primal, stationarity_residual=stat,
                     complementarity_residual=comp, violated_rows=violated)
