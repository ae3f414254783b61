"""Independent oracle suites.

Each suite checks one pillar of the stack against a method that shares no
code with the implementation under test: the analytic trapezoid CDF against
raw sampling, the active-set QP against brute-force grid search, and the
certificate construction against direct Monte Carlo evaluation of the
barrier condition. Tolerances widen as 1/sqrt(n) when fewer samples are
requested, keeping the suites deterministic at any budget.
"""

from dataclasses import dataclass

import numpy as np

from . import certificates, dynamics, qp, sim
from .distributions import (DifferenceDistribution, difference_of_uniforms,
                            trapezoid_cdf, trapezoid_inv_cdf)

__all__ = [
    "SuiteResult",
    "distribution_oracle",
    "qp_oracle",
    "sufficiency_oracle",
    "run_all",
]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    details: dict

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in self.details.items())
        return f"[{status}] {self.name}: {parts}"


def distribution_oracle(n_params: int = 20, n_points: int = 10,
                        n_samples: int = 10**6, seed: int = 0,
                        base_cdf_tol: float = 2e-3,
                        base_quantile_tol: float = 5e-3) -> SuiteResult:
    """Analytic CDF and quantiles vs the empirical law of actual differences
    of uniform draws."""
    rng = np.random.default_rng([seed, 101])
    scale = np.sqrt(10**6 / n_samples)
    cdf_tol = base_cdf_tol * scale
    q_tol = base_quantile_tol * scale
    max_cdf = 0.0
    max_q = 0.0
    for _ in range(n_params):
        hw_a, hw_b = rng.uniform(0.0, 0.5, 2)
        center = rng.uniform(-2.0, 2.0)
        dist = difference_of_uniforms(center, hw_a, hw_b)
        draws = (center + rng.uniform(-hw_a, hw_a, n_samples)
                 - rng.uniform(-hw_b, hw_b, n_samples))
        draws.sort()
        span = dist.outer_half_width
        for t in np.linspace(center - 1.1 * span, center + 1.1 * span, n_points):
            emp = np.searchsorted(draws, t, side="right") / n_samples
            max_cdf = max(max_cdf, abs(emp - trapezoid_cdf(dist, t)))
        for p in np.linspace(0.05, 0.95, n_points):
            emp_q = draws[min(n_samples - 1, int(p * n_samples))]
            max_q = max(max_q, abs(emp_q - trapezoid_inv_cdf(dist, p)))
    passed = max_cdf <= cdf_tol and max_q <= q_tol
    return SuiteResult("distribution_oracle", passed, {
        "max_cdf_err": max_cdf, "cdf_tol": cdf_tol,
        "max_quantile_err": max_q, "quantile_tol": q_tol,
        "n_samples": n_samples})


_GRID_POINTS = {1: 201, 2: 81, 3: 31, 4: 17, 5: 11, 6: 9}


def _grid_search(g, C, d, lo, hi):
    """Best feasible objective on a regular grid over the box; inf when no
    grid point is feasible."""
    n = g.size
    axes = [np.linspace(lo[k], hi[k], _GRID_POINTS[n]) for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([a.ravel() for a in mesh], axis=1)
    feas = np.all(X @ C.T <= d[None, :] + 1e-12, axis=1)
    if not feas.any():
        return np.inf
    Xf = X[feas]
    return float(np.min(np.sum((Xf - g) ** 2, axis=1)))


def qp_oracle(n_problems: int = 100, seed: int = 0, obj_tol: float = 1e-3,
              kkt_tol: float = 1e-7, max_dim: int = 6) -> SuiteResult:
    """Active-set results vs grid search over the box, plus KKT residuals.

    A declared-optimal solve must be feasible, KKT-clean, and no worse than
    the best grid point; a declared-infeasible one must leave the grid with
    no feasible point either.
    """
    rng = np.random.default_rng([seed, 202])
    max_gap = -np.inf
    max_kkt = 0.0
    n_fallback = 0
    false_infeasible = 0
    violations = 0
    for _ in range(n_problems):
        n = int(rng.integers(2, max_dim + 1))
        nrow = int(rng.integers(0, 2 * n + 3))
        g = rng.normal(0.0, 0.08, n)
        hi = np.full(n, 0.1)
        lo = -hi
        A = rng.normal(size=(nrow, n))
        b = rng.normal(0.0, 0.06, nrow)
        cs = certificates.ConstraintSet(A=A, b=b, tags=tuple(("row", r) for r in range(nrow)),
                                        n_u=n)
        problem = qp.QPProblem.build(g, cs, lo, hi)
        solution = qp.solve(problem)
        C, d = problem.stacked()
        grid_obj = _grid_search(g, C, d, lo, hi)
        if solution.status == qp.STATUS_OPTIMAL:
            obj = float(np.sum((solution.u - g) ** 2))
            max_gap = max(max_gap, obj - grid_obj)
            report = qp.check_kkt(problem, solution.u)
            max_kkt = max(max_kkt, report.stationarity_residual,
                          report.primal_violation_max,
                          report.complementarity_residual)
            if obj > grid_obj + obj_tol:
                violations += 1
        else:
            n_fallback += 1
            if np.isfinite(grid_obj):
                false_infeasible += 1
    passed = violations == 0 and false_infeasible == 0 and max_kkt <= kkt_tol
    return SuiteResult("qp_oracle", passed, {
        "max_objective_gap": max_gap, "obj_tol": obj_tol,
        "max_kkt_residual": max_kkt, "kkt_tol": kkt_tol,
        "fallbacks": n_fallback, "false_infeasible": false_infeasible})


def random_pair_config(rng, d: int = 2, radius: float = 0.2,
                       meas_max: float = 0.12, proc_max: float = 0.07,
                       clearance_factor: float = 1.02):
    """Random pair geometry whose measurement supports clear the combined
    radius (times sqrt(d) so the worst-case certificate stays feasible)."""
    combined = 2.0 * radius
    dv_i = rng.uniform(0.0, meas_max, d)
    dv_j = rng.uniform(0.0, meas_max, d)
    dw_i = rng.uniform(0.0, proc_max, d)
    dw_j = rng.uniform(0.0, proc_max, d)
    need = np.sqrt(d) * combined * clearance_factor
    while True:
        xi = rng.uniform(-1.5, 1.5, d)
        xj = rng.uniform(-1.5, 1.5, d)
        gap = np.maximum(np.abs(xi - xj) - (dv_i + dv_j), 0.0)
        if np.linalg.norm(gap) >= need:
            return xi, xj, dv_i, dv_j, dw_i, dw_j, combined


def sufficiency_oracle(n_configs: int = 100, n_samples: int = 10**5,
                       sigma: float = 0.9, gamma: float = 100.0,
                       seed: int = 0, base_slack: float = 0.01) -> SuiteResult:
    """End-to-end chance-constraint check: for random pair geometries, solve
    for controls against the probabilistic row and measure the frequency of
    the barrier condition under joint noise draws."""
    rng = np.random.default_rng([seed, 303])
    slack = base_slack * np.sqrt(10**5 / n_samples)
    d = 2
    worst = 1.0
    failures = 0
    model = dynamics.AffineModel(drift=np.zeros(d), input_matrix=np.eye(d))
    for _ in range(n_configs):
        xi, xj, dv_i, dv_j, dw_i, dw_j, combined = random_pair_config(rng, d)
        belief = certificates.make_pair_belief(
            xi, xj, dv_i, dv_j, dw_i, dw_j, model, model,
            combined / 2, combined / 2, gamma, sigma)
        row = certificates.pairwise_prsbc(belief, 0, 1, 2, d,
                                          certificates.PAPER_D_FACTOR)
        # drive the pair head-on at the speed cap, then solve the joint QP so
        # the tested control actually sits against the certificate
        alpha = 0.1
        direction = (xj - xi) / np.linalg.norm(xj - xi)
        u_ref = np.concatenate([alpha * direction, -alpha * direction])
        lo, hi = qp.box_from_limits([alpha, alpha], d)
        problem = qp.QPProblem.build(u_ref, [row], lo, hi)
        solution = qp.solve(problem)
        if solution.status != qp.STATUS_OPTIMAL:
            failures += 1
            continue
        u = solution.u
        freq = sim.verify_chance_constraint(xi, xj, dv_i, dv_j, dw_i, dw_j,
                                            combined, gamma, u[:d], u[d:],
                                            n_samples, rng)
        worst = min(worst, freq)
        if freq < sigma - slack:
            failures += 1
    passed = failures == 0
    return SuiteResult("sufficiency_oracle", passed, {
        "min_frequency": worst, "required": sigma - slack,
        "failures": failures, "n_configs": n_configs, "n_samples": n_samples})


def run_all(seed: int = 0, mc_samples: int | None = None) -> list[SuiteResult]:
    dist_n = mc_samples if mc_samples else 10**6
    suff_n = mc_samples if mc_samples else 10**5
    return [
        distribution_oracle(n_samples=dist_n, seed=seed),
        qp_oracle(seed=seed),
        sufficiency_oracle(n_samples=suff_n, seed=seed),
    ]
