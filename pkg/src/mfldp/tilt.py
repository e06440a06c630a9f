"""Time-blocked data tilts, their relative entropy and per-step discretization.

A :class:`TiltedKernel` is ``dt (x) rho_t(dx)`` with ``rho_t`` constant on each
block of ``block_edges``. All time integrals reduce to exact overlap sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import NORM_TOL, DataAtomSet, floor_nt

# relative entropy without absolute continuity
INFINITE_ENTROPY = math.inf


def _xlogy_ratio(p: np.ndarray, q: np.ndarray) -> float:
    """sum_j p_j log(p_j / q_j) with 0 log 0 = 0; INFINITE_ENTROPY if p >> q fails."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = p > 0
    if np.any(q[pos] <= 0):
        return INFINITE_ENTROPY
    # nonnegative in exact arithmetic; clip rounding noise near p = q
    return max(0.0, float(math.fsum(p[pos] * np.log(p[pos] / q[pos]))))


def kl_divergence(p, q) -> float:
    return _xlogy_ratio(p, q)


@dataclass(frozen=True, eq=False)
class TiltedKernel:
    horizon: float
    block_edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.block_edges, dtype=float).reshape(-1)
        probs = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if len(edges) != len(probs) + 1:
            raise ValueError("need one more block edge than probability rows")
        if edges[0] != 0.0 or abs(edges[-1] - self.horizon) > 1e-12 or np.any(np.diff(edges) <= 0):
            raise ValueError("block edges must increase strictly from 0 to the horizon")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > NORM_TOL):
            raise ValueError("every kernel row must be a probability vector")
        edges.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "block_edges", edges)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def constant(cls, row, T: float) -> "TiltedKernel":
        return cls(T, np.array([0.0, T]), np.asarray(row, dtype=float)[None, :])

    @classmethod
    def uniform_blocks(cls, rows, T: float) -> "TiltedKernel":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        edges = np.linspace(0.0, T, len(rows) + 1)
        edges[-1] = T
        return cls(T, edges, rows)

    @property
    def blocks(self) -> int:
        return len(self.probs)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.block_edges)

    def abs_continuous(self, pi: DataAtomSet) -> bool:
        return bool(np.all(self.probs[:, pi.probs == 0] == 0))

    def row_at(self, t: float) -> np.ndarray:
        b = int(np.searchsorted(self.block_edges, t, side="right")) - 1
        return self.probs[min(max(b, 0), self.blocks - 1)]

    def average(self, a: float, b: float) -> np.ndarray:
        """(1/(b-a)) * integral of rho_t over [a, b], via block overlaps."""
        lo = np.maximum(self.block_edges[:-1], a)
        hi = np.minimum(self.block_edges[1:], b)
        overlap = np.clip(hi - lo, 0.0, None)
        mask = overlap > 0
        rows = self.probs[mask]
        if len(rows) == 1:
            return rows[0].copy()
        # overlaps add up to b - a; normalizing by their sum keeps rows stochastic
        w = overlap[mask] / math.fsum(overlap[mask])
        return w @ rows

    def step_rows(self, times: np.ndarray) -> np.ndarray:
        """Averaged rows over consecutive grid cells ``[times[k], times[k+1]]``."""
        return np.array([self.average(times[k], times[k + 1]) for k in range(len(times) - 1)])

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "block_edges": self.block_edges.tolist(),
            "probs": self.probs.reshape(-1).tolist(),
            "shape": list(self.probs.shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TiltedKernel":
        return cls(d["horizon"], np.asarray(d["block_edges"]), np.asarray(d["probs"]).reshape(d["shape"]))


@dataclass(frozen=True, eq=False)
class StepKernelSequence:
    """Per-step data laws pi_{k,n}, k = 1..n'."""

    n: int
    kernels: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.kernels, dtype=float))
        if k.size == 0:
            k = k.reshape(0, k.shape[-1] if k.ndim == 2 else 0)
        if np.any(k < 0) or np.any(np.abs(k.sum(axis=1) - 1.0) > NORM_TOL):
            raise ValueError("every step kernel must be a probability vector")
        object.__setattr__(self, "kernels", k)

    def __len__(self) -> int:
        return len(self.kernels)

    @classmethod
    def constant(cls, row, n: int, T: float) -> "StepKernelSequence":
        return cls(n, np.tile(np.asarray(row, dtype=float), (floor_nt(n, T), 1)))


def relative_entropy_R(rho: TiltedKernel, pi: DataAtomSet) -> float:
    """H(rho | dt (x) pi) = sum_b width_b * H(rho_b | pi)."""
    if rho.probs.shape[1] != pi.size:
        raise ValueError("kernel rows and data atoms differ in size")
    parts = [w * _xlogy_ratio(row, pi.probs) for w, row in zip(rho.widths, rho.probs)]
    if any(math.isinf(p) for p in parts):
        return INFINITE_ENTROPY
    return float(math.fsum(parts))


def discretize_kernel(rho: TiltedKernel, n: int) -> StepKernelSequence:
    """pi_{k,n} = n * integral of rho_t over [(k-1)/n, k/n] for k <= floor(nT)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    n_prime = floor_nt(n, rho.horizon)
    rows = [rho.average((k - 1) / n, k / n) for k in range(1, n_prime + 1)]
    kern = np.array(rows) if rows else np.zeros((0, rho.probs.shape[1]))
    return StepKernelSequence(n, kern)


def steps_to_kernel(seq: StepKernelSequence, T: float, tail=None) -> TiltedKernel:
    """Assemble sum_k 1{t in [(k-1)/n, k/n]} dt pi_{k,n}(dx) as a kernel on [0, T].

    The tail [n'/n, T] is not touched by any step; it carries ``tail``
    (the base law pi by convention) and must be supplied when nonempty.
    """
    if len(seq) == 0:
        raise ValueError("empty step sequence")
    n = seq.n
    n_prime = len(seq)
    edges = np.arange(n_prime + 1) / n
    rows = seq.kernels
    if T - edges[-1] > 1e-12:
        if tail is None:
            raise ValueError("the step grid stops before T; pass the tail law")
        edges = np.append(edges, T)
        rows = np.vstack([rows, np.asarray(tail, dtype=float)[None, :]])
    else:
        edges[-1] = T
    return TiltedKernel(T, edges, rows)


def step_entropy_sum(seq: StepKernelSequence, pi: DataAtomSet) -> float:
    """(1/n) sum_k H(pi_{k,n} | pi)."""
    parts = [_xlogy_ratio(row, pi.probs) for row in seq.kernels]
    if any(math.isinf(p) for p in parts):
        return INFINITE_ENTROPY
    return float(math.fsum(parts)) / seq.n


def check_entropy_inequality(rho: TiltedKernel, pi: DataAtomSet, n: int, slack: float = 1e-12):
    """R of the reassembled per-step kernels never exceeds R(rho)."""
    rhs = relative_entropy_R(rho, pi)
    if math.isinf(rhs):
        raise ValueError("R(rho) must be finite")
    seq = discretize_kernel(rho, n)
    if len(seq) == 0:
        lhs = 0.0
    else:
        lhs = relative_entropy_R(steps_to_kernel(seq, rho.horizon, tail=pi.probs), pi)
    return lhs, rhs, bool(lhs <= rhs + slack)


def exponential_tilt(pi: DataAtomSet | np.ndarray, potential, beta: float = 1.0) -> np.ndarray:
    """Row proportional to p_j exp(beta * potential_j), computed in log space."""
    p = pi.probs if isinstance(pi, DataAtomSet) else np.asarray(pi, dtype=float)
    pot = np.asarray(potential, dtype=float)
    if pot.shape != p.shape or not np.all(np.isfinite(pot)):
        raise ValueError("potential must be finite with one entry per atom")
    if beta == 0.0 or not np.any(pot[p > 0]):
        return p.copy()
    out = np.zeros_like(p)
    pos = p > 0
    logw = np.log(p[pos]) + beta * pot[pos]
    logw -= logw.max()
    w = np.exp(logw)
    out[pos] = w / math.fsum(w)
    return out


def pair_with_test_functions(rho: TiltedKernel, atom_values, time_fn, nodes: int = 8) -> float:
    """integral_0^T time_fn(t) * sum_j atom_values_j rho_t(j) dt (Gauss-Legendre per block)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    vals = np.asarray(atom_values, dtype=float)
    total = 0.0
    for (a, b), row in zip(zip(rho.block_edges[:-1], rho.block_edges[1:]), rho.probs):
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * float(np.dot(w, time_fn(t))) * float(row @ vals)
    return total
