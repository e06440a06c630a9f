"""Network readout, SGD gradient and the finite distributions it is trained on.

Every reduction over particles or data atoms goes through :func:`seqsum`,
which accumulates strictly left to right. That keeps the particle system and
its measure-valued pushforward bit-for-bit comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-12


class ConditionError(ValueError):
    """A model ingredient violates one of the standing conditions."""


def seqsum(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Left-to-right sum along ``axis`` (no pairwise reduction)."""
    values = np.asarray(values, dtype=float)
    if values.shape[axis] == 0:
        return np.sum(values, axis=axis)
    return np.take(np.cumsum(values, axis=axis), -1, axis=axis)


def rowdot(w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``w @ z`` over the last axis, coordinates accumulated in index order.

    ``w`` has shape ``(..., d')`` and ``z`` broadcasts against it.
    """
    out = w[..., 0] * z[..., 0]
    for j in range(1, w.shape[-1]):
        out = out + w[..., j] * z[..., j]
    return out


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def _tanh(u):
    return np.tanh(u)


def _tanh_prime(u):
    t = np.tanh(u)
    return 1.0 - t * t


def _logistic(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def _logistic_prime(u):
    s = _logistic(u)
    return s * (1.0 - s)


# kind -> (sigma, sigma', C_sigma, L_sigma). The Lipschitz constant must be
# strictly above 1, so the true constant 1 is nudged upwards.
_CATALOG = {
    "tanh": (_tanh, _tanh_prime, 1.0, 1.0000001),
    "logistic": (_logistic, _logistic_prime, 1.0, 1.0000001),
}

_REJECTED = {
    "relu": "relu is unbounded",
    "identity": "the identity is unbounded",
    "linear": "a linear activation is unbounded",
    "softplus": "softplus is unbounded",
}


@dataclass(frozen=True)
class Activation:
    kind: str = "tanh"
    c_sigma: float = 1.0
    l_sigma: float = 1.0000001

    def __post_init__(self):
        if self.kind in _REJECTED:
            raise ConditionError(f"(CONT) violated: {_REJECTED[self.kind]}")
        if self.kind not in _CATALOG:
            raise ConditionError(f"(CONT) cannot be checked for unknown activation {self.kind!r}")
        if not self.c_sigma >= 1.0:
            raise ConditionError(f"(CONT) requires C_sigma >= 1, got {self.c_sigma}")
        if not self.l_sigma > 1.0:
            raise ConditionError(f"(CONT) requires L_sigma > 1, got {self.l_sigma}")

    @classmethod
    def named(cls, kind: str) -> "Activation":
        """Activation with the pinned constants of the catalog."""
        if kind in _REJECTED:
            raise ConditionError(f"(CONT) violated: {_REJECTED[kind]}")
        if kind not in _CATALOG:
            raise ConditionError(f"(CONT) cannot be checked for unknown activation {kind!r}")
        _, _, c, l = _CATALOG[kind]
        return cls(kind, c, l)

    def value(self, u):
        return _CATALOG[self.kind][0](u)

    def deriv(self, u):
        return _CATALOG[self.kind][1](u)


def activation_eval(act: Activation, u: float, derivative: bool = False) -> float:
    return float(act.deriv(u) if derivative else act.value(u))


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

def _check_probs(probs: np.ndarray, what: str) -> None:
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"{what}: probabilities must be a non-empty vector")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0):
        raise ValueError(f"{what}: probabilities must be finite and nonnegative")
    total = math.fsum(probs)
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"{what}: probabilities sum to {total!r}, not 1")


@dataclass(frozen=True, eq=False)
class DataAtomSet:
    """Finite data distribution over atoms ``(z_j, y_j)`` with ``z_j`` in R^{d'}."""

    z: np.ndarray
    y: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if not (len(z) == len(y) == len(p)):
            raise ValueError("data atoms: z, y and probs must have the same length")
        _check_probs(p, "data atoms")
        for name, arr in (("z", z), ("y", y), ("probs", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim_in(self) -> int:
        return self.z.shape[1]

    @property
    def size(self) -> int:
        return len(self.y)

    @property
    def c_pi(self) -> float:
        """max over atoms of max(|(1, z)|, |y|, 1)."""
        lifted = np.sqrt(1.0 + np.sum(self.z ** 2, axis=1))
        return float(max(1.0, lifted.max(), np.abs(self.y).max()))

    def atom(self, j: int) -> tuple[np.ndarray, float]:
        return self.z[j], float(self.y[j])


@dataclass(frozen=True, eq=False)
class InitialWeightAtomSet:
    """Finite initial weight distribution; each atom is ``(c, w_1, ..., w_d')``."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(a) != len(p):
            raise ValueError("weight atoms: atoms and probs must have the same length")
        if a.shape[1] < 2:
            raise ValueError("weight atoms: need at least (c, w_1)")
        _check_probs(p, "weight atoms")
        a.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return len(self.probs)

    @property
    def c_nu(self) -> float:
        # any radius >= 1 containing the support is admissible
        return float(max(1.0, np.sqrt(np.sum(self.atoms ** 2, axis=1)).max()))

    def with_probs(self, probs) -> "InitialWeightAtomSet":
        return InitialWeightAtomSet(self.atoms, probs)

    def as_measure(self) -> "ParamMeasure":
        return ParamMeasure(self.atoms, self.probs)


@dataclass(frozen=True, eq=False)
class ParamMeasure:
    """Weighted atom cloud in parameter space; only the points move under SGD."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(pts) != len(w):
            raise ValueError("measure: points and weights must have the same length")
        _check_probs(w, "measure")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "ParamMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mix(self, other: "ParamMeasure", alpha: float) -> "ParamMeasure":
        """alpha * self + (1 - alpha) * other, by concatenating atoms."""
        return ParamMeasure(
            np.concatenate([self.points, other.points]),
            np.concatenate([alpha * self.weights, (1.0 - alpha) * other.weights]),
        )


@dataclass(frozen=True)
class SimConfig:
    n: int
    T: float
    d_in: int
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.d_in < 1:
            raise ValueError("d_in must be >= 1")

    @property
    def n_prime(self) -> int:
        return floor_nt(self.n, self.T)

    @property
    def eps(self) -> float:
        return 1.0 / self.n


def floor_nt(n: int, T: float) -> int:
    # guard against n*T landing a few ulps below an integer
    return int(math.floor(n * T + 1e-9))


# ---------------------------------------------------------------------------
# Readout and gradient
# ---------------------------------------------------------------------------

def _check_z(z: np.ndarray, points: np.ndarray) -> None:
    if z.shape[-1] != points.shape[-1] - 1:
        raise ValueError(f"input has dimension {z.shape[-1]}, weights expect {points.shape[-1] - 1}")


def readout_batch(z: np.ndarray, points: np.ndarray, weights: np.ndarray, act: Activation) -> np.ndarray:
    """F(z_r, mu_r) for a batch: ``points`` is ``(R, N, d)``, ``z`` is ``(R, d')``."""
    u = rowdot(points[..., 1:], z[:, None, :])
    return seqsum(weights * points[..., 0] * act.value(u), axis=-1)


def gradients_batch(z, y, points, weights, act: Activation) -> np.ndarray:
    """A((z_r, y_r), theta; mu_r) for every particle of every batch member.

    Returns an array shaped like ``points``.
    """
    c = points[..., 0]
    u = rowdot(points[..., 1:], z[:, None, :])
    s = act.value(u)
    sp = act.deriv(u)
    F = seqsum(weights * c * s, axis=-1)
    g = (y - F)[:, None]
    out = np.empty_like(points)
    out[..., 0] = g * s
    out[..., 1:] = (g * c * sp)[..., None] * z[:, None, :]
    return out


def readout_F(z, mu: ParamMeasure, act: Activation) -> float:
    z = np.asarray(z, dtype=float).reshape(-1)
    _check_z(z, mu.points)
    return float(readout_batch(z[None], mu.points[None], mu.weights, act)[0])


def loss_residual_g(x, mu: ParamMeasure, act: Activation) -> float:
    z, y = x
    return float(y) - readout_F(z, mu, act)


def gradient_A(x, theta, mu: ParamMeasure, act: Activation) -> np.ndarray:
    """SGD direction for one particle ``theta = (c, w)`` against the measure ``mu``."""
    z, y = x
    z = np.asarray(z, dtype=float).reshape(-1)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    _check_z(z, mu.points)
    if theta.shape[0] != mu.dim:
        raise ValueError(f"theta has dimension {theta.shape[0]}, measure lives in R^{mu.dim}")
    g = loss_residual_g((z, y), mu, act)
    u = rowdot(theta[1:], z)
    out = np.empty_like(theta)
    out[0] = g * act.value(u)
    out[1:] = (g * theta[0] * act.deriv(u)) * z
    return out


def check_activation_bounds(act: Activation, grid=None) -> bool:
    """|sigma|, |sigma'| <= C_sigma on a grid (default 10^4 points in [-50, 50])."""
    u = np.linspace(-50.0, 50.0, 10_000) if grid is None else np.asarray(grid, dtype=float)
    return bool(np.all(np.abs(act.value(u)) <= act.c_sigma) and np.all(np.abs(act.deriv(u)) <= act.c_sigma))


def check_activation_lipschitz(act: Activation, pairs: int = 10_000, seed: int = 0) -> bool:
    """Lipschitz bound of sigma and sigma' on random pairs in [-10, 10]."""
    rng = np.random.default_rng(seed)
    u, v = rng.uniform(-10, 10, size=(2, pairs))
    du = np.abs(u - v)
    ok_val = np.abs(act.value(u) - act.value(v)) <= act.l_sigma * du + 1e-15
    ok_der = np.abs(act.deriv(u) - act.deriv(v)) <= act.l_sigma * du + 1e-15
    return bool(np.all(ok_val) and np.all(ok_der))
