"""Ground-cost evaluation: closed forms, the two-phase upper bound, the
trajectory-dependent lower bound, the numeric transcription oracle, and
batch cost-matrix assembly for coupling programs.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .rigid_body import AffinePair, InertiaBody, _as_vec3, affine_pair
from .steering import Trajectory
from .trajopt import ground_cost_numeric

KINDS = ("classical", "norm-invariant", "euler-numeric", "euler-bounded")


def cost_classical(x0, x_f, t_f: float) -> float:
    """Scaled squared Euclidean distance ||x0 - x_f||^2 / (2 t_f).

    Minimum control energy for the fully actuated integrator dynamics.
    """
    if t_f <= 0.0:
        raise ValueError("t_f must be > 0")
    d = np.asarray(x0, dtype=float) - np.asarray(x_f, dtype=float)
    return float(np.dot(d, d)) / (2.0 * t_f)


def cost_norminv(x0, x_f, t_f: float) -> float:
    """Minimum control energy under a translated norm-invariant drift.

    Numerically identical to cost_classical; kept as a separate operation so
    callers record which dynamical setting produced the value (the optimal
    paths differ: they are generally curved here).
    """
    return cost_classical(x0, x_f, t_f)


def cost_upper_bound(x0, x_f, t_f: float) -> float:
    """Two-phase construction bound (||x0||^2 + ||x_f||^2) / t_f.

    Cost of steering to the origin over the first half horizon and replaying
    a time-reversed steering from the origin over the second half; valid for
    every endpoint pair of the gyroscopic dynamics.
    """
    if t_f <= 0.0:
        raise ValueError("t_f must be > 0")
    x0 = np.asarray(x0, dtype=float)
    x_f = np.asarray(x_f, dtype=float)
    return (float(np.dot(x0, x0)) + float(np.dot(x_f, x_f))) / t_f


def cost_lower_bound(x0, x_f, t_f: float, pair: AffinePair,
                     trajectory: Trajectory) -> float:
    """Trajectory-dependent lower bound on the control energy.

    Evaluates (1/2 t_f) max(0, ||z0|| - t_f ||b|| - int ||A z(t)|| dt)^2 with
    the integral taken along the supplied feasible trajectory (trapezoid on
    its grid).  The clamp at zero keeps the bound valid when the inner
    expression goes negative.  With A = 0, b = 0 this is ||z0||^2 / (2 t_f),
    i.e. the exact optimum of the translated norm-invariant case.
    """
    if t_f <= 0.0:
        raise ValueError("t_f must be > 0")
    x0 = _as_vec3(x0, "x0")
    x_f = _as_vec3(x_f, "x_f")
    z0 = x0 - x_f
    z_states = trajectory.states - x_f
    az_norms = np.linalg.norm(z_states @ pair.A.T, axis=1)
    integral = float(np.trapezoid(az_norms, trajectory.times))
    inner = float(np.linalg.norm(z0)) - t_f * float(np.linalg.norm(pair.b)) - integral
    return max(inner, 0.0) ** 2 / (2.0 * t_f)


@dataclass(frozen=True)
class GroundCostSpec:
    """Which ground cost to evaluate, at what horizon, for which body."""

    kind: str
    t_f: float
    body: Optional[InertiaBody] = None
    numeric_options: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.t_f <= 0.0:
            raise ValueError("t_f must be > 0")
        if self.kind in ("euler-numeric", "euler-bounded") and self.body is None:
            raise ValueError(f"kind {self.kind!r} requires a body")


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise ground costs between two support sets.

    flagged lists (i, j, reason) provenance entries for numeric evaluations
    that did not converge or fell outside their bound sandwich.
    """

    entries: np.ndarray
    spec: GroundCostSpec
    flagged: Tuple[Tuple[int, int, str], ...] = ()

    def __post_init__(self):
        e = self.entries
        if e.ndim != 2 or e.size == 0:
            raise ValueError("entries must be a nonempty 2-D array")
        if not np.all(np.isfinite(e)) or np.any(e < 0.0):
            raise ValueError("cost entries must be finite and nonnegative")

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]


_numeric_cache: dict = {}
_cache_lock = threading.Lock()


def _options_key(options: Optional[dict]) -> tuple:
    if not options:
        return ()
    return tuple(sorted((k, repr(v)) for k, v in options.items()))


def _numeric_entry(spec: GroundCostSpec, x0: np.ndarray, x_f: np.ndarray):
    """Cached numeric ground cost; key is an exact-bit match on the inputs."""
    key = (x0.tobytes(), x_f.tobytes(), float(spec.t_f),
           spec.body.J.tobytes(), _options_key(spec.numeric_options))
    with _cache_lock:
        hit = _numeric_cache.get(key)
    if hit is not None:
        return hit
    cost, cert = ground_cost_numeric(spec.body, x0, x_f, spec.t_f,
                                     spec.numeric_options)
    result = (float(cost), bool(cert.converged))
    with _cache_lock:
        _numeric_cache[key] = result
    return result


def clear_numeric_cache():
    with _cache_lock:
        _numeric_cache.clear()


def evaluate(spec: GroundCostSpec, x0, x_f) -> float:
    """Single-pair ground cost under the given spec (closed-form kinds only
    return the value; numeric kinds go through the cached oracle)."""
    x0 = _as_vec3(x0, "x0")
    x_f = _as_vec3(x_f, "x_f")
    if spec.kind == "classical":
        return cost_classical(x0, x_f, spec.t_f)
    if spec.kind == "norm-invariant":
        return cost_norminv(x0, x_f, spec.t_f)
    if spec.kind == "euler-bounded":
        return cost_upper_bound(x0, x_f, spec.t_f)
    return _numeric_entry(spec, x0, x_f)[0]


def cost_matrix(spec: GroundCostSpec, sources: Sequence, targets: Sequence) -> CostMatrix:
    """Assemble the (i, j) -> cost(source_i, target_j) matrix.

    Numeric entries are validated against their bound sandwich: every entry
    must sit below the two-phase upper bound, and above ||z0||^2/(2 t_f) when
    the affine correction vanishes (the exactly solvable case).  Violations
    and non-converged solves are flagged, not fatal.
    """
    if len(sources) == 0 or len(targets) == 0:
        raise ValueError("sources and targets must be nonempty")
    src = [_as_vec3(s, "source") for s in sources]
    tgt = [_as_vec3(t, "target") for t in targets]
    m, n = len(src), len(tgt)
    entries = np.empty((m, n))
    flagged = []

    if spec.kind in ("classical", "norm-invariant", "euler-bounded"):
        point = {"classical": cost_classical,
                 "norm-invariant": cost_norminv,
                 "euler-bounded": cost_upper_bound}[spec.kind]
        for i, s in enumerate(src):
            for j, t in enumerate(tgt):
                entries[i, j] = point(s, t, spec.t_f)
        return CostMatrix(entries=entries, spec=spec)

    sandwich_tol = 1e-3
    for i, s in enumerate(src):
        for j, t in enumerate(tgt):
            value, converged = _numeric_entry(spec, s, t)
            entries[i, j] = value
            if not converged:
                flagged.append((i, j, "non-converged"))
            upper = cost_upper_bound(s, t, spec.t_f)
            if value > upper + sandwich_tol:
                flagged.append((i, j, "above-upper-bound"))
            pair = affine_pair(spec.body, t)
            if not pair.A.any() and not pair.b.any():
                lower = cost_norminv(s, t, spec.t_f)
                if value < lower - max(sandwich_tol, 0.02 * lower):
                    flagged.append((i, j, "below-lower-bound"))
    return CostMatrix(entries=entries, spec=spec, flagged=tuple(flagged))


def cost_matrix_to_csv(matrix: CostMatrix, path) -> None:
    """Row-major CSV with a two-line header carrying m, n, kind and t_f."""
    lines = ["m,n,kind,t_f",
             f"{matrix.m},{matrix.n},{matrix.spec.kind},{matrix.spec.t_f!r}"]
    for row in matrix.entries:
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
