"""Feedback steering laws that enforce linear decay of the distance to the
target, their two-phase composition through the origin, and fixed-step
closed-loop integration with running-cost accumulation.

All controllers are radial: u = g(z) * z/||z|| in the shifted coordinate
z = x - x_f, with the scalar gain g chosen so that d||z||/dt is the constant
-||z0||/t_f.  The norm then hits zero exactly at the horizon end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rigid_body import AffinePair, InertiaBody, _as_vec3, euler_drift


class SingularStateError(RuntimeError):
    """Raised when a radial law is evaluated at z = 0 with the guard disabled."""


class DivergenceError(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, time: float):
        super().__init__(f"state became non-finite at t = {time:.6g}")
        self.time = time


class InvalidWeightError(ValueError):
    """Raised for control-weight matrices that are not symmetric positive definite."""


def _default_guard(z0_norm: float) -> float:
    return 1e-8 * max(z0_norm, 1.0)


def ustar(z, z0, t_f: float, pair: AffinePair) -> np.ndarray:
    """Affine-corrected radial feedback.

    u = (-||z0||/t_f - <z, Az + b>/||z||) * z/||z||.  The projection term
    cancels the radial component of the affine drift, so the closed loop
    satisfies d||z||/dt = -||z0||/t_f regardless of (A, b).
    """
    z = np.asarray(z, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    nz = np.linalg.norm(z)
    if nz == 0.0:
        raise SingularStateError("radial feedback undefined at z = 0")
    affine = pair.A @ z + pair.b
    gain = -np.linalg.norm(z0) / t_f - float(np.dot(z, affine)) / nz
    return gain * z / nz


def ustarstar(z, z0, t_f: float) -> np.ndarray:
    """Pure radial feedback u = -(||z0||/t_f) z/||z|| with constant magnitude.

    Optimal (minimum control energy) whenever the drift is orthogonal to z in
    the shifted coordinate; cost ||z0||^2 / (2 t_f).
    """
    z = np.asarray(z, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    nz = np.linalg.norm(z)
    if nz == 0.0:
        raise SingularStateError("radial feedback undefined at z = 0")
    return (-np.linalg.norm(z0) / t_f) * z / nz


@dataclass(frozen=True)
class SteeringPolicy:
    """A steering law plus the bookkeeping needed to integrate it.

    kind is one of "feasible-ustar", "norminv-ustarstar", "two-phase" or
    "open-loop".  Closed-form kinds store their generating endpoints and
    affine pair; open-loop kinds store a time-stamped control table.
    terminal_guard_eps is the state-norm radius below which the law switches
    to the drift-cancelling hold u = -(drift(z) + Az + b).
    """

    kind: str
    t_f: float
    terminal_guard_eps: float
    x0: Optional[np.ndarray] = None
    x_f: Optional[np.ndarray] = None
    pair: Optional[AffinePair] = None
    body: Optional[InertiaBody] = None
    table_times: Optional[np.ndarray] = None
    table_controls: Optional[np.ndarray] = None
    table_mode: str = "linear"
    phase_split: Optional[float] = None

    def __post_init__(self):
        if self.t_f <= 0.0:
            raise ValueError("t_f must be > 0")
        if self.terminal_guard_eps < 0.0:
            raise ValueError("terminal_guard_eps must be >= 0")

    # -- law evaluation ----------------------------------------------------

    def control(self, t: float, x) -> np.ndarray:
        """Evaluate the control at time t and state x (original coordinate)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "feasible-ustar":
            return self._radial(x - self.x_f, self.pair)
        if self.kind == "norminv-ustarstar":
            return self._radial(x - self.x_f, None)
        if self.kind == "two-phase":
            if t < self.phase_split:
                return self._phase1(x)
            return -self._table_lookup(self.t_f - t)
        if self.kind == "open-loop":
            return self._table_lookup(t)
        raise ValueError(f"unknown policy kind {self.kind!r}")

    def _hold(self, z, pair: Optional[AffinePair]) -> np.ndarray:
        u = -euler_drift(self.body, z) if self.body is not None else np.zeros(3)
        if pair is not None:
            u = u - pair.A @ z - pair.b
        return u

    def _radial(self, z: np.ndarray, pair: Optional[AffinePair]) -> np.ndarray:
        nz = np.linalg.norm(z)
        if nz < self.terminal_guard_eps or self._z0_norm() == 0.0:
            if nz == 0.0 and self.terminal_guard_eps == 0.0 and self._z0_norm() > 0.0:
                raise SingularStateError("z = 0 reached with guard disabled")
            return self._hold(z, pair)
        if nz == 0.0:
            raise SingularStateError("z = 0 reached with guard disabled")
        gain = -self._z0_norm() / self.t_f
        if pair is not None:
            gain -= float(np.dot(z, pair.A @ z + pair.b)) / nz
        return gain * z / nz

    def _phase1(self, x: np.ndarray) -> np.ndarray:
        # steer x -> 0 over [0, t_f/2] at constant norm rate 2||x0||/t_f
        nx = np.linalg.norm(x)
        x0_norm = np.linalg.norm(self.x0)
        if nx < self.terminal_guard_eps or x0_norm == 0.0:
            return -euler_drift(self.body, x) if self.body is not None else np.zeros(3)
        return -(2.0 * x0_norm / self.t_f) * x / nx

    def _table_lookup(self, s: float) -> np.ndarray:
        if self.table_mode == "zoh":
            idx = int(np.searchsorted(self.table_times, s, side="right")) - 1
            idx = min(max(idx, 0), len(self.table_controls) - 1)
            return self.table_controls[idx].copy()
        out = np.empty(3)
        for i in range(3):
            out[i] = np.interp(s, self.table_times, self.table_controls[:, i])
        return out

    # -- integration hooks ---------------------------------------------------

    def _z0_norm(self) -> float:
        return float(np.linalg.norm(self.x0 - self.x_f))

    def segments(self) -> list:
        """Steering segments as (end_time, target_state, norm_rate) triples.

        norm_rate is the decay speed of ||x - target|| enforced by the law,
        or None for open-loop segments (no arrival handling).
        """
        if self.kind in ("feasible-ustar", "norminv-ustarstar"):
            rate = self._z0_norm() / self.t_f
            return [(self.t_f, self.x_f, rate)]
        if self.kind == "two-phase":
            rate1 = 2.0 * np.linalg.norm(self.x0) / self.t_f
            return [(self.phase_split, np.zeros(3), rate1), (self.t_f, self.x_f, None)]
        return [(self.t_f, self.x_f, None)]


def ustar_policy(body: InertiaBody, x0, x_f, t_f: float,
                 guard_eps: Optional[float] = None) -> SteeringPolicy:
    """Feedback policy built from the affine-corrected radial law."""
    from .rigid_body import affine_pair

    x0 = _as_vec3(x0, "x0")
    x_f = _as_vec3(x_f, "x_f")
    z0n = float(np.linalg.norm(x0 - x_f))
    return SteeringPolicy(
        kind="feasible-ustar",
        t_f=float(t_f),
        terminal_guard_eps=_default_guard(z0n) if guard_eps is None else guard_eps,
        x0=x0, x_f=x_f,
        pair=affine_pair(body, x_f),
        body=body,
    )


def ustarstar_policy(x0, x_f, t_f: float, body: Optional[InertiaBody] = None,
                     guard_eps: Optional[float] = None) -> SteeringPolicy:
    """Pure radial policy (no affine correction); optimal on translated
    norm-invariant dynamics."""
    x0 = _as_vec3(x0, "x0")
    x_f = _as_vec3(x_f, "x_f")
    z0n = float(np.linalg.norm(x0 - x_f))
    return SteeringPolicy(
        kind="norminv-ustarstar",
        t_f=float(t_f),
        terminal_guard_eps=_default_guard(z0n) if guard_eps is None else guard_eps,
        x0=x0, x_f=x_f,
        body=body,
    )


def two_phase_policy(body: Optional[InertiaBody], x0, x_f, t_f: float,
                     table_step: float = 1e-3,
                     guard_eps: Optional[float] = None) -> SteeringPolicy:
    """Two-phase controller: steer x0 to the origin over the first half
    horizon, then replay a time-reversed steering of x_f to the origin over
    the second half.

    The replay table comes from integrating the reversed dynamics
    xr' = -drift(xr) + v under the radial law v = -(2||x_f||/t_f) xr/||xr||
    on [0, t_f/2]; the forward control on (t_f/2, t_f] is u(t) = -v(t_f - t).
    Each phase costs ||x0||^2/t_f and ||x_f||^2/t_f respectively.
    """
    x0 = _as_vec3(x0, "x0")
    x_f = _as_vec3(x_f, "x_f")
    t_f = float(t_f)
    split = 0.5 * t_f
    guard = (_default_guard(max(np.linalg.norm(x0), np.linalg.norm(x_f)))
             if guard_eps is None else guard_eps)
    times, controls = _reverse_leg_table(body, x_f, split, min(table_step, split), guard)
    return SteeringPolicy(
        kind="two-phase",
        t_f=t_f,
        terminal_guard_eps=guard,
        x0=x0, x_f=x_f,
        body=body,
        table_times=times,
        table_controls=controls,
        table_mode="linear",
        phase_split=split,
    )


def make_policy(kind: str, body: Optional[InertiaBody], x0, x_f, t_f: float,
                **kwargs) -> SteeringPolicy:
    """Policy constructor dispatch by kind name.

    Without a body the affine correction vanishes, so "feasible-ustar"
    degenerates to the pure radial law.
    """
    if kind == "feasible-ustar" and body is not None:
        return ustar_policy(body, x0, x_f, t_f, **kwargs)
    if kind in ("feasible-ustar", "norminv-ustarstar"):
        return ustarstar_policy(x0, x_f, t_f, body=body, **kwargs)
    if kind == "two-phase":
        return two_phase_policy(body, x0, x_f, t_f, **kwargs)
    raise ValueError(f"unknown steering kind {kind!r}")


def open_loop_policy(times, controls, t_f: float, x_f, mode: str = "zoh",
                     guard_eps: float = 0.0) -> SteeringPolicy:
    """Policy that replays a stored control table (e.g. a transcription result)."""
    times = np.asarray(times, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 2 or controls.shape[0] != times.shape[0]:
        raise ValueError("times and controls must have matching leading length")
    if mode not in ("zoh", "linear"):
        raise ValueError("mode must be 'zoh' or 'linear'")
    return SteeringPolicy(
        kind="open-loop",
        t_f=float(t_f),
        terminal_guard_eps=guard_eps,
        x_f=_as_vec3(x_f, "x_f"),
        table_times=times,
        table_controls=controls,
        table_mode=mode,
    )


def _reverse_leg_table(body: Optional[InertiaBody], x_from: np.ndarray, horizon: float,
                       step: float, guard: float):
    """Integrate xr' = -drift(xr) + v from x_from toward 0 and record v.

    The recorded table is what the two-phase policy replays time-flipped.
    """
    c = float(np.linalg.norm(x_from)) / horizon
    n_steps = max(1, int(round(horizon / step)))
    h = horizon / n_steps
    times = np.linspace(0.0, horizon, n_steps + 1)
    controls = np.zeros((n_steps + 1, 3))
    if c == 0.0:
        return times, controls

    def drift(xr):
        return euler_drift(body, xr) if body is not None else np.zeros(3)

    def law(xr):
        nr = np.linalg.norm(xr)
        if nr < guard:
            return drift(xr)  # hold: xr' = -drift + v = 0
        return (-c) * xr / nr

    def rhs(xr):
        return -drift(xr) + law(xr)

    x = x_from.astype(float).copy()
    controls[0] = law(x)
    for k in range(n_steps):
        r = np.linalg.norm(x)
        if times[k] >= horizon - 1.5 * h and r <= c * h * 1.02:
            tau = min(r / c, h)
            if tau > 0.0:
                x = _rk4(rhs, x, tau)
            x = np.zeros(3)
        else:
            x = _rk4(rhs, x, h)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(times[k + 1])
        controls[k + 1] = law(x)
    return times, controls


def _rk4(f, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped closed-loop samples with accumulated control energy.

    running_cost[k] is the trapezoidal quadrature of (1/2)||u||^2 up to
    times[k]; terminal_error is the achieved miss distance ||x(t_f) - x_f||
    (measured before any arrival snap, so it reports the true residual).
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    running_cost: np.ndarray
    x_f: np.ndarray
    terminal_error: float

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.states) == len(self.controls) == len(self.running_cost) == n):
            raise ValueError("trajectory arrays must have equal length")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing from 0")
        if np.any(np.diff(self.running_cost) < -1e-15):
            raise ValueError("running cost must be nondecreasing")


def integrate(body: Optional[InertiaBody], policy: SteeringPolicy, x0, x_f,
              t_f: float, step: float, fast: bool = True) -> Trajectory:
    """Fixed-step RK4 integration of the closed loop in the original coordinate.

    Parameters
    ----------
    body : InertiaBody or None
        Drift source; None integrates the drift-free double of the problem.
    policy : SteeringPolicy
        Evaluated at (t, x); laws defined on the shifted coordinate read
        z = x - x_f internally.
    x0, x_f : 3-vectors
        Integration endpoints; must match the policy's generating endpoints.
    t_f, step : float
        Horizon and RK4 step.  The step count is rounded so the grid ends
        exactly at t_f (and contains the phase split for two-phase laws).

    Near the arrival of a feedback segment (within one step of the segment
    end, with the remaining distance at most one step's worth of norm decay)
    the integrator takes a shortened step of the exact time-to-arrival
    predicted by the law and then holds at the target.  This keeps the
    terminal grid nodes on the linear norm-decay law instead of chattering
    across the target.

    fast=True routes the single-segment radial kinds through a scalar inner
    loop with identical semantics; fast=False forces the generic path.
    """
    x0 = _as_vec3(x0, "x0")
    x_f = _as_vec3(x_f, "x_f")
    t_f = float(t_f)
    if step <= 0.0 or step > t_f:
        raise ValueError("step must satisfy 0 < step <= t_f")
    if abs(t_f - policy.t_f) > 1e-9 * max(t_f, 1.0):
        raise ValueError("policy horizon does not match t_f")
    if policy.x_f is not None and not np.allclose(policy.x_f, x_f, atol=1e-12):
        raise ValueError("policy target does not match x_f")
    if policy.x0 is not None and not np.allclose(policy.x0, x0, atol=1e-12):
        raise ValueError("policy initial state does not match x0")

    n_steps = max(1, int(round(t_f / step)))
    if policy.kind == "two-phase" and n_steps % 2 == 1:
        n_steps += 1
    h = t_f / n_steps
    times = np.linspace(0.0, t_f, n_steps + 1)

    if fast and policy.kind in ("feasible-ustar", "norminv-ustarstar"):
        return _integrate_radial_scalar(body, policy, x0, x_f, times, h)

    segments = policy.segments()

    def segment_at(t: float):
        for end, target, rate in segments:
            if t < end - 1e-12 * t_f:
                return end, target, rate
        return segments[-1]

    def rhs(t, x):
        u = policy.control(t, x)
        dx = u if body is None else euler_drift(body, x) + u
        return dx

    def rk4_step(t, x, dt):
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = rhs(t + dt, x + dt * k3)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    states = np.empty((n_steps + 1, 3))
    controls = np.empty((n_steps + 1, 3))
    cost = np.zeros(n_steps + 1)

    x = x0.copy()
    states[0] = x
    controls[0] = policy.control(0.0, x)
    arrival_residual = None

    for k in range(n_steps):
        t = times[k]
        end, target, rate = segment_at(t)
        u_k = controls[k]
        e_k = 0.5 * float(np.dot(u_k, u_k))

        snapped = False
        if rate is not None and rate > 0.0:
            r = float(np.linalg.norm(x - target))
            if t >= end - 1.5 * h and r <= rate * h * 1.02:
                tau = min(r / rate, h)
                if tau > 1e-15:
                    x = rk4_step(t, x, tau)
                residual = float(np.linalg.norm(x - target))
                if end >= t_f - 1e-12 * t_f:
                    arrival_residual = residual
                x = target.copy()
                snapped = True
                u_next = policy.control(times[k + 1], x)
                e_next = 0.5 * float(np.dot(u_next, u_next))
                cost[k + 1] = cost[k] + tau * e_k + (h - tau) * e_next
        if not snapped:
            x = rk4_step(t, x, h)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(times[k + 1])
            u_next = policy.control(times[k + 1], x)
            e_next = 0.5 * float(np.dot(u_next, u_next))
            cost[k + 1] = cost[k] + 0.5 * h * (e_k + e_next)

        states[k + 1] = x
        controls[k + 1] = u_next

    terminal_error = float(np.linalg.norm(states[-1] - x_f))
    if arrival_residual is not None:
        terminal_error = max(terminal_error, arrival_residual)
    return Trajectory(times=times, states=states, controls=controls,
                      running_cost=cost, x_f=x_f.copy(),
                      terminal_error=terminal_error)


def _integrate_radial_scalar(body: Optional[InertiaBody], policy: SteeringPolicy,
                             x0: np.ndarray, x_f: np.ndarray,
                             times: np.ndarray, h: float) -> Trajectory:
    """Scalar-arithmetic twin of the generic loop for the radial feedback kinds.

    Same guard, arrival and quadrature rules as the generic path; it exists
    because fine-step closed-loop runs are dominated by small-array overhead.
    """
    n_steps = len(times) - 1
    t_f = float(times[-1])
    f1, f2, f3 = float(x_f[0]), float(x_f[1]), float(x_f[2])
    z0n = policy._z0_norm()
    guard = policy.terminal_guard_eps
    rate = z0n / t_f
    hold_body = policy.body

    if policy.kind == "feasible-ustar":
        A = policy.pair.A
        a11, a12, a13 = A[0]
        a21, a22, a23 = A[1]
        a31, a32, a33 = A[2]
        b1, b2, b3 = policy.pair.b
    else:
        a11 = a12 = a13 = a21 = a22 = a23 = a31 = a32 = a33 = 0.0
        b1 = b2 = b3 = 0.0

    if body is not None:
        da, db, dg = body.alpha, body.beta, body.gamma
    else:
        da = db = dg = 0.0
    if hold_body is not None:
        ha, hb, hg = hold_body.alpha, hold_body.beta, hold_body.gamma
    else:
        ha = hb = hg = 0.0

    from math import isfinite, sqrt

    def control(x1, x2, x3):
        z1, z2, z3 = x1 - f1, x2 - f2, x3 - f3
        nz = sqrt(z1 * z1 + z2 * z2 + z3 * z3)
        if nz < guard or z0n == 0.0:
            if nz == 0.0 and guard == 0.0 and z0n > 0.0:
                raise SingularStateError("z = 0 reached with guard disabled")
            u1 = -(ha * z2 * z3) - (a11 * z1 + a12 * z2 + a13 * z3) - b1
            u2 = -(hb * z3 * z1) - (a21 * z1 + a22 * z2 + a23 * z3) - b2
            u3 = -(hg * z1 * z2) - (a31 * z1 + a32 * z2 + a33 * z3) - b3
            return u1, u2, u3
        if nz == 0.0:
            raise SingularStateError("z = 0 reached with guard disabled")
        w1 = a11 * z1 + a12 * z2 + a13 * z3 + b1
        w2 = a21 * z1 + a22 * z2 + a23 * z3 + b2
        w3 = a31 * z1 + a32 * z2 + a33 * z3 + b3
        g = -z0n / t_f - (z1 * w1 + z2 * w2 + z3 * w3) / nz
        s = g / nz
        return s * z1, s * z2, s * z3

    def rhs(x1, x2, x3):
        u1, u2, u3 = control(x1, x2, x3)
        return da * x2 * x3 + u1, db * x3 * x1 + u2, dg * x1 * x2 + u3

    def rk4(x1, x2, x3, dt):
        k11, k12, k13 = rhs(x1, x2, x3)
        hh = 0.5 * dt
        k21, k22, k23 = rhs(x1 + hh * k11, x2 + hh * k12, x3 + hh * k13)
        k31, k32, k33 = rhs(x1 + hh * k21, x2 + hh * k22, x3 + hh * k23)
        k41, k42, k43 = rhs(x1 + dt * k31, x2 + dt * k32, x3 + dt * k33)
        s = dt / 6.0
        return (x1 + s * (k11 + 2.0 * (k21 + k31) + k41),
                x2 + s * (k12 + 2.0 * (k22 + k32) + k42),
                x3 + s * (k13 + 2.0 * (k23 + k33) + k43))

    states = np.empty((n_steps + 1, 3))
    controls = np.empty((n_steps + 1, 3))
    cost = np.zeros(n_steps + 1)

    x1, x2, x3 = float(x0[0]), float(x0[1]), float(x0[2])
    states[0] = (x1, x2, x3)
    u1, u2, u3 = control(x1, x2, x3)
    controls[0] = (u1, u2, u3)
    arrival_residual = None
    arrival_window = t_f - 1.5 * h

    for k in range(n_steps):
        t = times[k]
        e_k = 0.5 * (u1 * u1 + u2 * u2 + u3 * u3)

        snapped = False
        if rate > 0.0 and t >= arrival_window:
            z1, z2, z3 = x1 - f1, x2 - f2, x3 - f3
            r = sqrt(z1 * z1 + z2 * z2 + z3 * z3)
            if r <= rate * h * 1.02:
                tau = min(r / rate, h)
                if tau > 1e-15:
                    x1, x2, x3 = rk4(x1, x2, x3, tau)
                dz1, dz2, dz3 = x1 - f1, x2 - f2, x3 - f3
                arrival_residual = sqrt(dz1 * dz1 + dz2 * dz2 + dz3 * dz3)
                x1, x2, x3 = f1, f2, f3
                snapped = True
                u1, u2, u3 = control(x1, x2, x3)
                e_next = 0.5 * (u1 * u1 + u2 * u2 + u3 * u3)
                cost[k + 1] = cost[k] + tau * e_k + (h - tau) * e_next
        if not snapped:
            x1, x2, x3 = rk4(x1, x2, x3, h)
            if not (isfinite(x1) and isfinite(x2) and isfinite(x3)):
                raise DivergenceError(times[k + 1])
            u1, u2, u3 = control(x1, x2, x3)
            e_next = 0.5 * (u1 * u1 + u2 * u2 + u3 * u3)
            cost[k + 1] = cost[k] + 0.5 * h * (e_k + e_next)

        states[k + 1] = (x1, x2, x3)
        controls[k + 1] = (u1, u2, u3)

    terminal_error = float(np.linalg.norm(states[-1] - x_f))
    if arrival_residual is not None:
        terminal_error = max(terminal_error, arrival_residual)
    return Trajectory(times=times, states=states, controls=controls,
                      running_cost=cost, x_f=x_f.copy(),
                      terminal_error=terminal_error)


def policy_cost(trajectory: Trajectory) -> float:
    """Accumulated control energy at the horizon end."""
    return float(trajectory.running_cost[-1])


def norm_law_deviation(policy: SteeringPolicy, trajectory: Trajectory) -> Optional[float]:
    """Max deviation of the sampled norms from the policy's linear decay law.

    Radial feedback kinds predict ||x(t) - x_f|| = (1 - t/t_f) ||x0 - x_f||;
    the two-phase kind predicts a vee shape on ||x(t)||.  Open-loop tables
    carry no law, so None is returned.
    """
    t = trajectory.times
    if policy.kind in ("feasible-ustar", "norminv-ustarstar"):
        z0n = policy._z0_norm()
        predicted = (1.0 - t / policy.t_f) * z0n
        actual = np.linalg.norm(trajectory.states - trajectory.x_f, axis=1)
        return float(np.max(np.abs(actual - predicted)))
    if policy.kind == "two-phase":
        x0n = float(np.linalg.norm(policy.x0))
        xfn = float(np.linalg.norm(policy.x_f))
        predicted = np.where(t <= policy.phase_split,
                             x0n * (1.0 - t / policy.phase_split),
                             xfn * (t / policy.phase_split - 1.0))
        actual = np.linalg.norm(trajectory.states, axis=1)
        return float(np.max(np.abs(actual - predicted)))
    return None


def rescale_weighted(u, weight, inverse: bool = False) -> np.ndarray:
    """Map controls between the weighted energy (1/2) u' R u and the
    unweighted one via v = R^(1/2) u.

    With inverse=True the map R^(-1/2) is applied, so a round trip is the
    identity up to rounding.
    """
    u = np.asarray(u, dtype=float)
    R = np.asarray(weight, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R, R.T, atol=1e-12 * max(1.0, float(np.abs(R).max()))):
        raise InvalidWeightError("weight must be a symmetric 3x3 matrix")
    w, V = np.linalg.eigh(R)
    if np.any(w <= 0.0):
        raise InvalidWeightError("weight must be positive definite")
    scale = np.sqrt(w) if not inverse else 1.0 / np.sqrt(w)
    S = (V * scale) @ V.T
    return u @ S.T
