"""Discrete measures on R^3, endpoint pushforwards, exact and entropic
coupling solvers, and particle-level verification that a coupling's cost is
realized by actually steering every matched pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.optimize
import scipy.sparse
from scipy.special import logsumexp

from .ground_cost import CostMatrix, GroundCostSpec
from .rigid_body import InertiaBody
from .steering import DivergenceError, integrate, make_policy, policy_cost


class MarginalMismatchError(ValueError):
    """Raised when source and target masses cannot be coupled."""


class EpsilonTooSmallError(RuntimeError):
    """Raised when the dense Sinkhorn kernel underflows to an all-zero row or
    column; retry with log_domain=True or a larger epsilon."""


class EnsembleDivergenceError(RuntimeError):
    """Integration divergence while steering the coupled pair (i, j)."""

    def __init__(self, i: int, j: int, time: float):
        super().__init__(f"steering of pair ({i}, {j}) diverged at t = {time:.6g}")
        self.pair = (i, j)
        self.time = time


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud; weights are nonnegative and sum to one."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.support.ndim != 2 or len(self.support) != len(self.weights):
            raise ValueError("support and weights must have matching lengths")
        if not np.all(np.isfinite(self.support)):
            raise ValueError("support points must be finite")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")

    def __len__(self) -> int:
        return len(self.weights)


def make_measure(points, weights=None) -> DiscreteMeasure:
    """Measure from points, equal-weight unless weights are given."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    return DiscreteMeasure(support=points.copy(), weights=np.asarray(weights, dtype=float).copy())


@dataclass(frozen=True)
class GaussianSpec:
    """Mean and SPD covariance of a Gaussian endpoint distribution."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != (3,) or self.covariance.shape != (3, 3):
            raise ValueError("mean must be (3,) and covariance (3, 3)")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc


def gaussian_spec(mean, covariance) -> GaussianSpec:
    return GaussianSpec(mean=np.asarray(mean, dtype=float),
                        covariance=np.asarray(covariance, dtype=float))


def pushforward_inertia(measure: DiscreteMeasure, body: InertiaBody) -> DiscreteMeasure:
    """Map each support point omega to J * omega (elementwise); weights are
    untouched, which is the particle-level version of the density pushforward."""
    return DiscreteMeasure(support=measure.support * body.J,
                           weights=measure.weights.copy())


def sample_gaussian(spec: GaussianSpec, n: int, seed: int) -> DiscreteMeasure:
    """n equal-weight samples via the Cholesky factor and a seeded generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(spec.covariance)
    points = rng.standard_normal((n, 3)) @ L.T + spec.mean
    return DiscreteMeasure(support=points, weights=np.full(n, 1.0 / n))


def second_moment(measure: DiscreteMeasure) -> float:
    """Weighted mean squared support norm sum_i w_i ||x_i||^2."""
    return float(measure.weights @ np.sum(measure.support ** 2, axis=1))


@dataclass(frozen=True)
class Coupling:
    """Joint plan between two discrete measures.

    Row sums reproduce the source weights and column sums the target weights
    within marginal_tol (checked at construction); transport_cost is
    sum_ij plan_ij cost_ij for the cost matrix the solver was given.
    """

    plan: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure
    transport_cost: float
    marginal_tol: float = 1e-9
    solver_info: Optional[dict] = None

    def __post_init__(self):
        if self.plan.shape != (len(self.source), len(self.target)):
            raise ValueError("plan shape must match the measure sizes")
        if np.any(self.plan < 0.0):
            raise ValueError("plan entries must be nonnegative")
        row, col = self.marginal_residuals()
        if max(row, col) > self.marginal_tol:
            raise MarginalMismatchError(
                f"marginal residuals ({row:.3e}, {col:.3e}) exceed {self.marginal_tol:.3e}")

    def marginal_residuals(self) -> Tuple[float, float]:
        row = float(np.max(np.abs(self.plan.sum(axis=1) - self.source.weights)))
        col = float(np.max(np.abs(self.plan.sum(axis=0) - self.target.weights)))
        return row, col


def _cost_entries(cost) -> np.ndarray:
    entries = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    return entries


def solve_exact(cost, source: DiscreteMeasure, target: DiscreteMeasure) -> Coupling:
    """Exact optimal coupling of the discrete linear program.

    Equal-weight supports of the same size reduce to an assignment problem;
    everything else goes through the transportation LP (HiGHS).
    """
    C = _cost_entries(cost)
    m, n = C.shape
    if m != len(source) or n != len(target):
        raise ValueError("cost matrix shape must match the measure sizes")
    if abs(float(source.weights.sum()) - float(target.weights.sum())) > 1e-9:
        raise MarginalMismatchError("source and target masses differ by more than 1e-9")

    equal_weight = (m == n
                    and np.all(np.abs(source.weights - 1.0 / m) < 1e-15)
                    and np.all(np.abs(target.weights - 1.0 / n) < 1e-15))
    if equal_weight:
        rows, cols = scipy.optimize.linear_sum_assignment(C)
        plan = np.zeros((m, n))
        plan[rows, cols] = source.weights[rows]
        total = float(np.dot(C[rows, cols], source.weights[rows]))
        return Coupling(plan=plan, source=source, target=target,
                        transport_cost=total,
                        solver_info={"solver": "assignment"})

    a_rows = scipy.sparse.kron(scipy.sparse.eye(m, format="csr"),
                               np.ones((1, n)), format="csr")
    a_cols = scipy.sparse.kron(np.ones((1, m)),
                               scipy.sparse.eye(n, format="csr"), format="csr")
    A_eq = scipy.sparse.vstack([a_rows, a_cols[:-1]], format="csr")
    b_eq = np.concatenate([source.weights, target.weights[:-1]])
    res = scipy.optimize.linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq,
                                 bounds=(0.0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(m, n), 0.0)
    total = float(np.sum(plan * C))
    return Coupling(plan=plan, source=source, target=target,
                    transport_cost=total,
                    solver_info={"solver": "linprog-highs"})


def solve_sinkhorn(cost, source: DiscreteMeasure, target: DiscreteMeasure,
                   epsilon: float, max_iter: int = 10000, tol: float = 1e-9,
                   log_domain: Optional[bool] = None,
                   epsilon_scaling: bool = True) -> Coupling:
    """Entropic coupling by Sinkhorn matrix scaling.

    Iterates until the marginal residual (max-abs) drops below tol or the
    max_iter budget is spent.  The returned plan is renormalized so the
    source marginals hold exactly; the achieved target residual is reported
    in solver_info.  log_domain defaults to epsilon < 0.05 * median(cost);
    the dense kernel path raises EpsilonTooSmallError on underflow.

    On the log-domain path, epsilon_scaling anneals epsilon from median(cost)
    down to the requested value by decades, warm-starting the potentials at
    each stage; this is what makes very small epsilon reachable at tol ~ 1e-9.
    solver_info["residual_history"] records the final-epsilon iterations.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    C = _cost_entries(cost)
    m, n = C.shape
    if m != len(source) or n != len(target):
        raise ValueError("cost matrix shape must match the measure sizes")
    a = source.weights
    b = target.weights
    if log_domain is None:
        log_domain = epsilon < 0.05 * float(np.median(C))

    history = []
    iterations = 0
    if log_domain:
        schedule = [float(epsilon)]
        if epsilon_scaling:
            top = float(np.median(C))
            while schedule[0] < top / 10.0:
                schedule.insert(0, schedule[0] * 10.0)
        with np.errstate(divide="ignore"):
            log_a = np.log(a)
            log_b = np.log(b)
        f = np.zeros(m)
        g = np.zeros(n)
        budget = max_iter
        stage_cap = max(500, max_iter // max(len(schedule), 1))
        for stage, eps in enumerate(schedule):
            final_stage = stage == len(schedule) - 1
            stage_tol = tol if final_stage else max(tol, 1e-10)
            history = []
            cap = budget if final_stage else min(stage_cap, budget)
            for _ in range(cap):
                f = eps * (log_a - logsumexp((g[None, :] - C) / eps, axis=1))
                g = eps * (log_b - logsumexp((f[:, None] - C) / eps, axis=0))
                plan = np.exp((f[:, None] + g[None, :] - C) / eps)
                residual = float(np.max(np.abs(plan.sum(axis=1) - a)))
                history.append(residual)
                iterations += 1
                budget -= 1
                if residual <= stage_tol:
                    break
            if budget <= 0:
                break
    else:
        K = np.exp(-C / epsilon)
        if np.any(K.sum(axis=1) == 0.0) or np.any(K.sum(axis=0) == 0.0):
            raise EpsilonTooSmallError(
                "kernel underflow: use log_domain=True or increase epsilon")
        u = np.ones(m)
        v = np.ones(n)
        for iterations in range(1, max_iter + 1):
            Kv = K @ v
            if np.any(Kv == 0.0) or not np.all(np.isfinite(Kv)):
                raise EpsilonTooSmallError(
                    "kernel underflow: use log_domain=True or increase epsilon")
            u = a / Kv
            KTu = K.T @ u
            if np.any(KTu == 0.0) or not np.all(np.isfinite(KTu)):
                raise EpsilonTooSmallError(
                    "kernel underflow: use log_domain=True or increase epsilon")
            v = b / KTu
            plan = u[:, None] * K * v[None, :]
            residual = float(np.max(np.abs(plan.sum(axis=1) - a)))
            history.append(residual)
            if residual <= tol:
                break

    # exact source marginals; report the remaining target residual
    row_sums = plan.sum(axis=1)
    scale = np.divide(a, row_sums, out=np.zeros_like(a), where=row_sums > 0.0)
    plan = plan * scale[:, None]
    target_residual = float(np.max(np.abs(plan.sum(axis=0) - b)))
    total = float(np.sum(plan * C))
    return Coupling(plan=plan, source=source, target=target,
                    transport_cost=total,
                    marginal_tol=max(tol, target_residual * (1.0 + 1e-9)),
                    solver_info={"solver": "sinkhorn",
                                 "epsilon": float(epsilon),
                                 "log_domain": bool(log_domain),
                                 "iterations": iterations,
                                 "residual_history": history,
                                 "target_residual": target_residual})


def ensemble_steer(coupling: Coupling, spec: GroundCostSpec,
                   policy_kind: str = "norminv-ustarstar", step: float = 1e-3,
                   mass_floor: float = 1e-15, skip_divergent: bool = False):
    """Steer every coupled pair and aggregate the realized control cost.

    Each source atom is split across its matched targets in proportion to the
    plan; one trajectory is integrated per retained entry (mass > mass_floor).
    Returns (terminal measure, plan-weighted total cost, failed pairs); a
    failed pair raises EnsembleDivergenceError unless skip_divergent is set.
    """
    body = spec.body
    t_f = spec.t_f
    plan = coupling.plan
    src = coupling.source.support
    tgt = coupling.target.support
    points = []
    masses = []
    total_cost = 0.0
    failures = []
    for i, j in zip(*np.nonzero(plan > mass_floor)):
        x0 = src[i]
        x_f = tgt[j]
        policy = make_policy(policy_kind, body, x0, x_f, t_f)
        try:
            traj = integrate(body, policy, x0, x_f, t_f, step)
        except DivergenceError as exc:
            if skip_divergent:
                failures.append((int(i), int(j), exc.time))
                continue
            raise EnsembleDivergenceError(int(i), int(j), exc.time) from exc
        points.append(traj.states[-1])
        masses.append(plan[i, j])
        total_cost += plan[i, j] * policy_cost(traj)
    if not points:
        raise ValueError("coupling has no plan entries above the mass floor")
    masses = np.asarray(masses)
    terminal = DiscreteMeasure(support=np.asarray(points),
                               weights=masses / masses.sum())
    return terminal, float(total_cost), tuple(failures)


def product_coupling(source: DiscreteMeasure, target: DiscreteMeasure,
                     cost) -> Coupling:
    """The independent (outer-product) coupling; always feasible, never better
    than the optimum.  Useful as a finite-cost witness."""
    plan = np.outer(source.weights, target.weights)
    C = _cost_entries(cost)
    return Coupling(plan=plan, source=source, target=target,
                    transport_cost=float(np.sum(plan * C)),
                    solver_info={"solver": "product"})


def measure_to_csv(measure: DiscreteMeasure, path) -> None:
    """CSV with header x1,x2,x3,weight; full-precision reprs."""
    lines = ["x1,x2,x3,weight"]
    for point, w in zip(measure.support, measure.weights):
        lines.append(",".join(repr(float(v)) for v in point) + f",{float(w)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def coupling_to_csv(coupling: Coupling, cost, path, mass_floor: float = 1e-15) -> None:
    """CSV with header i,j,mass,cost listing plan entries above mass_floor."""
    C = _cost_entries(cost)
    lines = ["i,j,mass,cost"]
    for i, j in zip(*np.nonzero(coupling.plan > mass_floor)):
        lines.append(f"{i},{j},{float(coupling.plan[i, j])!r},{float(C[i, j])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def coupling_summary(coupling: Coupling) -> dict:
    """JSON-ready description: total cost, marginal residuals, solver data."""
    row, col = coupling.marginal_residuals()
    info = dict(coupling.solver_info or {})
    info.pop("residual_history", None)
    return {
        "transport_cost": coupling.transport_cost,
        "row_residual": row,
        "col_residual": col,
        **info,
    }
