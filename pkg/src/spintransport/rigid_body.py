"""Rigid-body angular-velocity dynamics about the principal axes.

State is the angular-momentum-like vector x = J * omega (elementwise), in
which the gyroscopic drift is quadratic and orthogonal to the state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class InvalidInertiaError(ValueError):
    """Raised when principal moments of inertia are nonpositive or non-finite."""


def _as_vec3(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must have finite entries")
    return arr


@dataclass(frozen=True)
class InertiaBody:
    """Principal moments of inertia and the derived drift coefficients.

    The coefficients are

        alpha = 1/J3 - 1/J2,  beta = 1/J1 - 1/J3,  gamma = 1/J2 - 1/J1,

    which always satisfy alpha + beta + gamma = 0.  They are computed once
    at construction because every right-hand-side evaluation uses them.
    """

    J: np.ndarray
    alpha: float
    beta: float
    gamma: float


def make_body(J) -> InertiaBody:
    """Build an InertiaBody from strictly positive principal moments."""
    J = np.asarray(J, dtype=float)
    if J.shape != (3,):
        raise InvalidInertiaError(f"J must be a 3-vector, got shape {J.shape}")
    if not np.all(np.isfinite(J)) or np.any(J <= 0.0):
        raise InvalidInertiaError(f"principal moments must be finite and > 0, got {J}")
    alpha = 1.0 / J[2] - 1.0 / J[1]
    beta = 1.0 / J[0] - 1.0 / J[2]
    gamma = 1.0 / J[1] - 1.0 / J[0]
    return InertiaBody(J=J.copy(), alpha=float(alpha), beta=float(beta), gamma=float(gamma))


def euler_drift(body: InertiaBody, z) -> np.ndarray:
    """Gyroscopic drift (alpha*z2*z3, beta*z3*z1, gamma*z1*z2).

    Orthogonal to the state: <drift(z), z> = (alpha+beta+gamma) z1 z2 z3 = 0.
    """
    z = np.asarray(z, dtype=float)
    return np.array([
        body.alpha * z[1] * z[2],
        body.beta * z[2] * z[0],
        body.gamma * z[0] * z[1],
    ])


def euler_drift_jacobian(body: InertiaBody, z) -> np.ndarray:
    """Jacobian of the gyroscopic drift at z."""
    z = np.asarray(z, dtype=float)
    a, b, g = body.alpha, body.beta, body.gamma
    return np.array([
        [0.0, a * z[2], a * z[1]],
        [b * z[2], 0.0, b * z[0]],
        [g * z[1], g * z[0], 0.0],
    ])


@dataclass(frozen=True)
class AffinePair:
    """Constant affine drift correction (A, b) induced by moving the steering
    target x_f to the origin.

    In the shifted coordinate z = x - x_f the dynamics picks up A z + b with
    A = drift_jacobian(x_f) (zero diagonal) and b = drift(x_f), so that
    drift(z) + A z + b = drift(z + x_f) identically.
    """

    A: np.ndarray
    b: np.ndarray
    x_f: np.ndarray


def affine_pair(body: InertiaBody, x_f) -> AffinePair:
    """Affine correction generated by translating the target x_f to the origin."""
    x_f = _as_vec3(x_f, "x_f")
    a, b, g = body.alpha, body.beta, body.gamma
    A = np.array([
        [0.0, a * x_f[2], a * x_f[1]],
        [b * x_f[2], 0.0, b * x_f[0]],
        [g * x_f[1], g * x_f[0], 0.0],
    ])
    bvec = np.array([
        a * x_f[1] * x_f[2],
        b * x_f[2] * x_f[0],
        g * x_f[0] * x_f[1],
    ])
    return AffinePair(A=A, b=bvec, x_f=x_f.copy())


def zero_pair(x_f=None) -> AffinePair:
    """Trivial affine correction (A = 0, b = 0), e.g. for drift-free dynamics."""
    x_f = np.zeros(3) if x_f is None else _as_vec3(x_f, "x_f")
    return AffinePair(A=np.zeros((3, 3)), b=np.zeros(3), x_f=x_f)


def rhs_x(body: InertiaBody, x, u) -> np.ndarray:
    """Controlled dynamics in the original coordinate: xdot = drift(x) + u."""
    return euler_drift(body, x) + np.asarray(u, dtype=float)


def rhs_z(body: InertiaBody, pair: AffinePair, z, u) -> np.ndarray:
    """Controlled dynamics in the shifted coordinate: zdot = drift(z) + A z + b + u."""
    z = np.asarray(z, dtype=float)
    return euler_drift(body, z) + pair.A @ z + pair.b + np.asarray(u, dtype=float)


def is_translated_norm_invariant(
    drift: Callable[[np.ndarray], np.ndarray],
    x_f,
    samples: int = 1000,
    radius: float = 10.0,
    tol: float = 1e-9,
    seed: int = 0,
) -> bool:
    """Monte Carlo check that <drift(z + x_f), z> vanishes on a ball of test points.

    This is a falsification test, not a proof: it returns False as soon as one
    sampled z violates |<drift(z + x_f), z>| <= tol * (1 + ||z|| ||drift(z + x_f)||),
    and True if all samples pass.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if radius <= 0.0 or tol <= 0.0:
        raise ValueError("radius and tol must be > 0")
    x_f = np.asarray(x_f, dtype=float)
    d = x_f.shape[0]
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        direction = rng.standard_normal(d)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            continue
        # radius**(1/d) scaling gives uniform sampling in the ball
        z = direction / norm * radius * rng.uniform() ** (1.0 / d)
        fz = np.asarray(drift(z + x_f), dtype=float)
        bound = tol * (1.0 + np.linalg.norm(z) * np.linalg.norm(fz))
        if abs(float(np.dot(fz, z))) > bound:
            return False
    return True
