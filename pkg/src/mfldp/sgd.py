"""The n-particle SGD system, its measure-valued pushforward and growth bounds.

Particles are updated simultaneously: the readout inside every gradient is
evaluated on the frozen pre-step measure. The same batched kernel drives the
particle simulation, the pushforward flow and the Monte Carlo replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .functionals import TestFunctional, get_functional
from .model import (
    Activation,
    DataAtomSet,
    InitialWeightAtomSet,
    ParamMeasure,
    SimConfig,
    gradients_batch,
    seqsum,
)

DEFAULT_MEMORY_BUDGET = 2 ** 26  # floats


@dataclass(frozen=True, eq=False)
class DataStream:
    """Indices into a :class:`DataAtomSet`, one per SGD step."""

    indices: np.ndarray
    pi: DataAtomSet
    source: str = "iid_pi"
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.pi.size):
            raise ValueError("data stream refers to atoms outside the data set")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def z(self) -> np.ndarray:
        return self.pi.z[self.indices]

    @property
    def y(self) -> np.ndarray:
        return self.pi.y[self.indices]


@dataclass(frozen=True, eq=False)
class TrajectoryMeasure:
    """Weighted paths on a shared time grid.

    ``paths`` has shape ``(N, len(grid), d)``. For SGD output ``steps`` holds
    the SGD step index of every stored grid point and paths are read
    piecewise constant (cadlag). Mean-field solutions are piecewise linear.
    """

    grid: np.ndarray
    paths: np.ndarray
    weights: np.ndarray
    interpolation: str = "piecewise_constant"
    horizon: float | None = None
    n: int | None = None
    steps: np.ndarray | None = None
    stream: DataStream | None = None
    running_sup: float | None = None  # sup over every step, stored or not

    def __post_init__(self):
        if self.interpolation not in ("piecewise_constant", "piecewise_linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.paths.shape[:2] != (len(self.weights), len(self.grid)):
            raise ValueError("paths must have shape (len(weights), len(grid), d)")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("trajectory weights must sum to 1")
        if self.interpolation == "piecewise_constant" and (self.n is None or self.steps is None):
            raise ValueError("piecewise-constant trajectories need n and steps")
        if self.horizon is None:
            object.__setattr__(self, "horizon", float(self.grid[-1]))

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def states_at(self, times) -> np.ndarray:
        """Marginal states at ``times``; shape ``(N, len(times), d)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if self.interpolation == "piecewise_constant":
            k = np.floor(self.n * times + 1e-9).astype(np.int64)
            k = np.clip(k, 0, self.steps[-1])
            pos = np.searchsorted(self.steps, k)
            pos = np.minimum(pos, len(self.steps) - 1)
            if np.any(self.steps[pos] != k):
                missing = sorted(set(k.tolist()) - set(self.steps.tolist()))
                raise KeyError(f"SGD steps {missing} were not stored (strided trajectory)")
            return self.paths[:, pos, :]
        out = np.empty((self.paths.shape[0], len(times), self.dim))
        for i, t in enumerate(times):
            t = min(max(t, self.grid[0]), self.grid[-1])
            j = int(np.searchsorted(self.grid, t, side="right")) - 1
            j = min(j, len(self.grid) - 2)
            lam = (t - self.grid[j]) / (self.grid[j + 1] - self.grid[j])
            out[:, i, :] = (1.0 - lam) * self.paths[:, j, :] + lam * self.paths[:, j + 1, :]
        return out

    def marginal(self, t: float) -> ParamMeasure:
        return ParamMeasure(self.states_at([t])[:, 0, :], self.weights)

    def sup_norm(self) -> float:
        stored = float(np.sqrt(np.sum(self.paths ** 2, axis=2)).max())
        return stored if self.running_sup is None else max(stored, self.running_sup)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def sgd_step(state: ParamMeasure, x, eps: float, act: Activation) -> ParamMeasure:
    if not eps > 0:
        raise ValueError("eps must be positive")
    z, y = x
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != state.dim - 1:
        raise ValueError(f"input has dimension {z.shape[1]}, weights expect {state.dim - 1}")
    A = gradients_batch(z, np.array([float(y)]), state.points[None], state.weights, act)[0]
    return ParamMeasure(state.points + eps * A, state.weights)


def evolve_batch(points0, weights, z_steps, y_steps, act: Activation, eps: float, record,
                 return_sup: bool = False):
    """Run ``len(y_steps[0])`` simultaneous SGD steps for R independent systems.

    points0: (R, N, d); z_steps: (R, K, d'); y_steps: (R, K).
    ``record`` lists the step indices (0..K) whose states are returned, as an
    array of shape (R, len(record), N, d). With ``return_sup`` the largest
    particle norm seen by each system over all steps is returned as well.
    """
    record = np.asarray(record, dtype=np.int64)
    K = y_steps.shape[1]
    if record.size and (record.min() < 0 or record.max() > K):
        raise ValueError("record steps outside 0..K")
    out = np.empty((points0.shape[0], len(record)) + points0.shape[1:])
    slots = {}
    for i, k in enumerate(record.tolist()):
        slots.setdefault(k, []).append(i)
    state = np.array(points0, dtype=float)
    for i in slots.get(0, ()):
        out[:, i] = state
    sup = np.max(np.sum(state ** 2, axis=-1), axis=-1) if return_sup else None
    for k in range(K):
        A = gradients_batch(z_steps[:, k], y_steps[:, k], state, weights, act)
        state = state + eps * A
        for i in slots.get(k + 1, ()):
            out[:, i] = state
        if return_sup:
            sup = np.maximum(sup, np.max(np.sum(state ** 2, axis=-1), axis=-1))
    if return_sup:
        return out, np.sqrt(sup)
    return out


def _stored_steps(n: int, n_prime: int, d: int, budget: int, keep=()) -> np.ndarray:
    total = n * (n_prime + 1) * d
    stride = max(1, math.ceil(total / budget))
    steps = set(range(0, n_prime + 1, stride)) | {0, n_prime} | {int(k) for k in keep}
    return np.array(sorted(k for k in steps if 0 <= k <= n_prime), dtype=np.int64)


def _run_stream(points0, weights, stream: DataStream, n: int, T: float, act, budget, keep_times):
    n_prime = len(stream)
    keep = [math.floor(n * t + 1e-9) for t in keep_times]
    steps = _stored_steps(n, n_prime, points0.shape[1], budget, keep)
    states, sup = evolve_batch(points0[None], weights, stream.z[None], stream.y[None], act, 1.0 / n, steps,
                               return_sup=True)
    states = states[0]
    return TrajectoryMeasure(
        grid=steps / n,
        paths=np.ascontiguousarray(states.transpose(1, 0, 2)),
        weights=np.array(weights, dtype=float),
        interpolation="piecewise_constant",
        horizon=float(T),
        n=n,
        steps=steps,
        stream=stream,
        running_sup=float(sup[0]),
    )


def sample_initial(nu: InitialWeightAtomSet, n: int, seed: int, replica: int = 0) -> np.ndarray:
    return nu.atoms[rng.sample_atoms(nu.probs, n, rng.stream(seed, replica, rng.INIT))]


def sample_stream(pi: DataAtomSet, n_prime: int, seed: int, replica: int = 0) -> DataStream:
    idx = rng.sample_atoms(pi.probs, n_prime, rng.stream(seed, replica, rng.DATA))
    return DataStream(idx, pi, "iid_pi", seed)


def simulate_theta_n(cfg: SimConfig, pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation,
                     seed: int | None = None, memory_budget: int = DEFAULT_MEMORY_BUDGET,
                     keep_times=()) -> TrajectoryMeasure:
    """Sample n particles from nu and n' data points from pi, then run SGD with eps = 1/n."""
    if cfg.d_in != pi.dim_in or nu.dim != pi.dim_in + 1:
        raise ValueError("config, data and weight dimensions disagree")
    seed = cfg.seed if seed is None else seed
    points0 = sample_initial(nu, cfg.n, seed)
    stream = sample_stream(pi, cfg.n_prime, seed)
    weights = np.full(cfg.n, 1.0 / cfg.n)
    return _run_stream(points0, weights, stream, cfg.n, cfg.T, act, memory_budget, keep_times)


def pushforward_eta_n(nu0: ParamMeasure, stream: DataStream, cfg: SimConfig, act: Activation,
                      memory_budget: int = DEFAULT_MEMORY_BUDGET, keep_times=()) -> TrajectoryMeasure:
    """Deterministic flow of every atom of nu0 through the SGD maps driven by ``stream``."""
    if len(stream) != cfg.n_prime:
        raise ValueError(f"stream has {len(stream)} points, expected n' = {cfg.n_prime}")
    return _run_stream(nu0.points, nu0.weights, stream, cfg.n, cfg.T, act, memory_budget, keep_times)


# ---------------------------------------------------------------------------
# Growth bound
# ---------------------------------------------------------------------------

def c_bar(c_sigma: float, T: float) -> float:
    """Bound factor for the output weights: 2(1+T) C_sigma^3 exp(C_sigma^2 T)."""
    return 2.0 * (1.0 + T) * c_sigma ** 3 * math.exp(c_sigma ** 2 * T)


def sgd_constant(c_nu: float, c_sigma: float, T: float) -> float:
    """Explicit C_SGD with (1/n) sum_k |A_k| <= C_SGD (T^2+1)(1 + Y*4 + Z*2).

    Chain (E = exp(C_s^2 T), cb = c_bar, a_k = mean |c| under the measure):
      a_k <= E (C_nu + C_s Y*1);  |g_k| <= |Y_k| + G,  G = C_s E (C_nu + C_s Y*1)
      |c| <= cb (C_nu + Y*1) =: K  and  K >= max(1, |c|)
      |A_k| <= C_s |g_k| K |(1, Z_k)|
    so (1/n) sum |A_k| <= C_s K (S + G Z*1) with S = (1/n) sum |Y_k||(1,Z_k)|.
    Expanding K and G leaves S, Y*1 S, Z*1, Y*1 Z*1 and (Y*1)^2 Z*1. With
    U = 1 + Y*4 + Z*2 and Cauchy-Schwarz / AM-GM (T' = n'/n <= T):
      S <= (T^2+1) U / 2              Y*1 S <= (T^2 Y*4 + Z*2)/2
      Z*1 <= (T^2+1) U / 2            Y*1 Z*1 <= (T^2+1) U / 4
      (Y*1)^2 Z*1 <= T^2 (Y*4 + Z*2)/2
    """
    E = math.exp(c_sigma ** 2 * T)
    cb = c_bar(c_sigma, T)
    inner = (c_nu + 1.0) / 2.0 + c_sigma * E * (
        c_nu ** 2 / 2.0 + c_nu * (1.0 + c_sigma) / 4.0 + c_sigma / 2.0
    )
    return max(c_sigma * cb * inner, 1.0 + 1e-12)


def growth_bound_value(c_nu: float, c_sigma: float, T: float, y_star_4: float, z_star_2: float) -> float:
    return c_nu + sgd_constant(c_nu, c_sigma, T) * (T ** 2 + 1.0) * (1.0 + y_star_4 + z_star_2)


@dataclass(frozen=True)
class GrowthBoundReport:
    y_star_m: dict
    z_star_m: dict
    c_nu: float
    c_bar: float
    c_sgd: float
    bound: float
    observed_sup: float
    ok: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ok", bool(self.observed_sup <= self.bound))

    def to_dict(self) -> dict:
        return {
            "y_star_m": {str(k): v for k, v in self.y_star_m.items()},
            "z_star_m": {str(k): v for k, v in self.z_star_m.items()},
            "c_nu": self.c_nu, "c_bar": self.c_bar, "c_sgd": self.c_sgd,
            "bound": self.bound, "observed_sup": self.observed_sup, "ok": self.ok,
        }


class GrowthBoundViolation(AssertionError):
    pass


def growth_report_from_data(z, y, n: int, T: float, act: Activation, c_nu: float,
                            observed_sup: float) -> GrowthBoundReport:
    """Growth bound for one run from its data stream (z, y) and initial radius."""
    y = np.abs(np.asarray(y, dtype=float))
    zl = np.sqrt(1.0 + np.sum(np.asarray(z, dtype=float) ** 2, axis=1))
    ys = {m: float(seqsum(y ** m) / n) if len(y) else 0.0 for m in (1, 2, 4)}
    zs = {m: float(seqsum(zl ** m) / n) if len(zl) else 0.0 for m in (1, 2)}
    return GrowthBoundReport(
        y_star_m=ys,
        z_star_m=zs,
        c_nu=c_nu,
        c_bar=c_bar(act.c_sigma, T),
        c_sgd=sgd_constant(c_nu, act.c_sigma, T),
        bound=growth_bound_value(c_nu, act.c_sigma, T, ys[4], zs[2]),
        observed_sup=float(observed_sup),
    )


def initial_radius(points0) -> float:
    """max(1, largest initial norm): the support radius of the empirical initial measure."""
    return float(max(1.0, np.sqrt(np.sum(np.asarray(points0) ** 2, axis=-1)).max()))


def growth_bound_report(traj: TrajectoryMeasure, stream: DataStream, cfg: SimConfig, act: Activation,
                        c_nu: float | None = None, check: bool = True) -> GrowthBoundReport:
    """Evaluate the explicit growth bound on a simulated run.

    ``c_nu`` defaults to :func:`initial_radius` of the stored initial states.
    """
    if c_nu is None:
        c_nu = initial_radius(traj.paths[:, 0, :])
    report = growth_report_from_data(stream.z, stream.y, cfg.n, cfg.T, act, c_nu, traj.sup_norm())
    if check and not report.ok:
        raise GrowthBoundViolation(f"observed sup {report.observed_sup} exceeds bound {report.bound}")
    return report


def path_values(traj: TrajectoryMeasure, f: TestFunctional | str) -> np.ndarray:
    f = get_functional(f)
    return f.apply(traj.states_at(f.times(traj.horizon)))


def empirical_expectation(traj: TrajectoryMeasure, f: TestFunctional | str) -> float:
    return float(seqsum(traj.weights * path_values(traj, f)))
