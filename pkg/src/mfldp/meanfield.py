"""Tilted McKean-Vlasov evolution for finite initial laws.

Given a data tilt rho, every initial atom of nu flows deterministically, so
the law of the solution is the weighted cloud of those trajectories. The
fixed point of the Picard map is computed on an explicit-Euler time grid;
laws are compared with the synchronous-coupling Wasserstein distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Activation, DataAtomSet, InitialWeightAtomSet, rowdot, seqsum
from .sgd import TrajectoryMeasure, c_bar
from .tilt import TiltedKernel, relative_entropy_R

DEFAULT_DT = 1.0 / 128


class MeanFieldError(RuntimeError):
    """Picard iteration did not reach its tolerance, even after the fallback."""


@dataclass(frozen=True, eq=False)
class MeanFieldSolution:
    cloud: TrajectoryMeasure
    dt: float
    c_traj: float

    @property
    def times(self) -> np.ndarray:
        return self.cloud.grid

    @property
    def paths(self) -> np.ndarray:
        return self.cloud.paths

    @property
    def weights(self) -> np.ndarray:
        return self.cloud.weights

    @property
    def horizon(self) -> float:
        return float(self.cloud.grid[-1])

    def within_bound(self) -> bool:
        return self.cloud.sup_norm() <= self.c_traj


@dataclass
class PicardReport:
    iterations: int = 0
    gaps: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    c_contr: float = math.nan
    converged: bool = False
    fallback: bool = False
    window: float | None = None
    status: str = "running"

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations, "gaps": list(self.gaps),
            "contraction_ratios": list(self.contraction_ratios), "c_contr": self.c_contr,
            "converged": self.converged, "fallback": self.fallback, "window": self.window,
            "status": self.status,
        }


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

def trajectory_bound(nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation, T: float) -> float:
    """Explicit C_traj for solutions driven by tilts supported on supp(pi).

    |c_t| <= c_bar (C_nu + T C_pi) =: c_max (continuous analogue of the
    output-weight chain with |y| <= C_pi), |g| <= C_pi + C_sigma c_max and
    |A| <= C_sigma |g| max(1, |c|) |(1, z)|, integrated over [0, T].
    """
    cs, cp, cn = act.c_sigma, pi.c_pi, nu.c_nu
    c_max = c_bar(cs, T) * (cn + T * cp)
    drift = cs * (cp + cs * c_max) * c_max * cp
    return cn + T * drift


def contraction_from_constants(c_sigma: float, l_sigma: float, c_pi: float, c_traj: float) -> float:
    """C = C_1 + C_2 with C_1 = 2 C_s^2 C_traj L_s C_pi^2 and C_2 = 2 C_traj^2 C_pi^3 C_s^2 L_s."""
    c1 = 2.0 * c_sigma ** 2 * c_traj * l_sigma * c_pi ** 2
    c2 = 2.0 * c_traj ** 2 * c_pi ** 3 * c_sigma ** 2 * l_sigma
    return c1 + c2


def contraction_constant(nu: InitialWeightAtomSet, pi: DataAtomSet, act: Activation, T: float) -> float:
    return contraction_from_constants(act.c_sigma, act.l_sigma, pi.c_pi, trajectory_bound(nu, pi, act, T))


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------

def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid on [0, T] whose step is the largest T/K not exceeding dt."""
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    K = max(1, math.ceil(T / dt - 1e-9))
    times = np.arange(K + 1) * (T / K)
    times[-1] = T
    return times


def drift(points, cloud_points, cloud_weights, pi: DataAtomSet, row, act: Activation) -> np.ndarray:
    """sum_x row(x) A(x, theta; cloud) for every theta in ``points``."""
    Z, Y = pi.z, pi.y
    u_cloud = rowdot(cloud_points[:, None, 1:], Z[None, :, :])
    F = seqsum((cloud_weights * cloud_points[:, 0])[:, None] * act.value(u_cloud), axis=0)
    coef = row * (Y - F)
    u = rowdot(points[:, None, 1:], Z[None, :, :])
    dc = seqsum(coef[None, :] * act.value(u), axis=1)
    dw = seqsum((coef[None, :] * points[:, 0:1] * act.deriv(u))[..., None] * Z[None], axis=1)
    return np.concatenate([dc[:, None], dw], axis=1)


def _flow(start, times, rows, weights, pi, act, frozen=None) -> np.ndarray:
    """Explicit Euler from ``start``; the readout uses ``frozen`` paths if given,
    otherwise the flowing cloud itself (the discrete fixed point)."""
    K = len(times) - 1
    paths = np.empty((len(start), K + 1, start.shape[1]))
    paths[:, 0] = start
    for k in range(K):
        cur = paths[:, k]
        cloud = cur if frozen is None else frozen[:, k]
        paths[:, k + 1] = cur + (times[k + 1] - times[k]) * drift(cur, cloud, weights, pi, rows[k], act)
    return paths


def _solution(times, paths, weights, dt, c_traj) -> MeanFieldSolution:
    cloud = TrajectoryMeasure(
        grid=times, paths=paths, weights=np.asarray(weights, dtype=float),
        interpolation="piecewise_linear", horizon=float(times[-1]),
    )
    return MeanFieldSolution(cloud, float(dt), float(c_traj))


def _check_shapes(rho: TiltedKernel, pi: DataAtomSet, nu: InitialWeightAtomSet) -> None:
    if rho.probs.shape[1] != pi.size:
        raise ValueError("kernel rows and data atoms differ in size")
    if nu.dim != pi.dim_in + 1:
        raise ValueError(f"weights live in R^{nu.dim}, data inputs in R^{pi.dim_in}")


def constant_solution(nu: InitialWeightAtomSet, T: float, dt: float, c_traj: float = math.inf) -> MeanFieldSolution:
    times = time_grid(T, dt)
    paths = np.repeat(nu.atoms[:, None, :], len(times), axis=1)
    return _solution(times, paths, nu.probs, times[1] - times[0], c_traj)


def zeta_map(eta: MeanFieldSolution, rho: TiltedKernel, pi: DataAtomSet, nu: InitialWeightAtomSet,
             act: Activation) -> MeanFieldSolution:
    """One application of the Picard map: flow nu's atoms against the frozen cloud ``eta``."""
    _check_shapes(rho, pi, nu)
    if eta.paths.shape[0] != nu.size or eta.paths.shape[2] != nu.dim:
        raise ValueError("frozen cloud and initial law have incompatible atoms")
    if abs(eta.horizon - rho.horizon) > 1e-12:
        raise ValueError("cloud and kernel horizons differ")
    times = eta.times
    paths = _flow(nu.atoms, times, rho.step_rows(times), eta.weights, pi, act, frozen=eta.paths)
    return _solution(times, paths, nu.probs, eta.dt, eta.c_traj)


def euler_solve(rho: TiltedKernel, pi: DataAtomSet, nu: InitialWeightAtomSet, dt: float,
                act: Activation) -> MeanFieldSolution:
    """Forward Euler of the self-consistent flow: the exact fixed point of the discrete Picard map."""
    _check_shapes(rho, pi, nu)
    times = time_grid(rho.horizon, dt)
    paths = _flow(nu.atoms, times, rho.step_rows(times), nu.probs, pi, act)
    return _solution(times, paths, nu.probs, times[1] - times[0], trajectory_bound(nu, pi, act, rho.horizon))


def _sync_distance(p1, p2, weights) -> float:
    sq = np.max(np.sum((p1 - p2) ** 2, axis=2), axis=1)
    return math.sqrt(max(0.0, float(seqsum(weights * sq))))


def wasserstein_D(eta1: MeanFieldSolution, eta2: MeanFieldSolution, T0: float | None = None) -> float:
    """Synchronous-coupling evaluation of D_{T0}: (sum_j w_j sup_{t<=T0} |eta1_j(t) - eta2_j(t)|^2)^(1/2).

    Paths are piecewise linear, so the supremum over [0, T0] is attained on
    grid points or at T0 itself.
    """
    c1, c2 = eta1.cloud, eta2.cloud
    if c1.paths.shape[0] != c2.paths.shape[0] or c1.dim != c2.dim or not np.array_equal(c1.weights, c2.weights):
        raise ValueError("clouds must have matching atoms and weights")
    T0 = min(c1.horizon, c2.horizon) if T0 is None else T0
    times = np.union1d(c1.grid[c1.grid <= T0], c2.grid[c2.grid <= T0])
    times = np.union1d(times, [T0])
    return _sync_distance(c1.states_at(times), c2.states_at(times), c1.weights)


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

def _picard_window(start, times, rows, weights, pi, act, tol, max_iter, damping, init_paths, report):
    eta = init_paths
    rising = 0
    for _ in range(max_iter):
        new = _flow(start, times, rows, weights, pi, act, frozen=eta)
        if damping:
            new = (1.0 - damping) * new + damping * eta
        gap = _sync_distance(eta, new, weights)
        if report.gaps and report.gaps[-1] > 0:
            ratio = gap / report.gaps[-1]
            report.contraction_ratios.append(ratio)
            rising = rising + 1 if ratio >= 1.0 else 0
        report.gaps.append(gap)
        report.iterations += 1
        eta = new
        if gap < tol:
            return eta, "converged"
        if rising >= 3:
            return eta, "stalled"
    return eta, "max_iter"


def picard_solve(rho: TiltedKernel, pi: DataAtomSet, nu: InitialWeightAtomSet, dt: float = DEFAULT_DT,
                 tol: float = 1e-8, max_iter: int = 200, act: Activation | None = None,
                 damping: float = 0.0, init: MeanFieldSolution | None = None):
    """Iterate the Picard map from the constant cloud (or ``init``) to its fixed point.

    If the whole-horizon iteration stalls (three consecutive gap ratios >= 1)
    the horizon is cut into windows of length T0 = min(T, 1/(2 C_contr)), on
    which the map contracts, and solved window by window. A run that still
    misses ``tol`` comes back with ``report.status == "nonconverged"``.
    """
    act = act or Activation.named("tanh")
    _check_shapes(rho, pi, nu)
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    if math.isinf(relative_entropy_R(rho, pi)):
        raise ValueError("the tilt must have finite relative entropy")
    T = rho.horizon
    c_traj = trajectory_bound(nu, pi, act, T)
    report = PicardReport(c_contr=contraction_constant(nu, pi, act, T))
    times = time_grid(T, dt)
    rows = rho.step_rows(times)
    weights = nu.probs
    if init is None:
        eta0 = np.repeat(nu.atoms[:, None, :], len(times), axis=1)
    else:
        if init.paths.shape != (nu.size, len(times), nu.dim):
            raise ValueError("initial guess is not on the solver grid")
        eta0 = init.paths
    paths, how = _picard_window(nu.atoms, times, rows, weights, pi, act, tol, max_iter, damping, eta0, report)

    if how == "stalled":
        report.fallback = True
        T0 = min(T, 1.0 / (2.0 * report.c_contr))
        report.window = T0
        step = times[1] - times[0]
        per = max(1, int(math.floor(T0 / step + 1e-9)))
        paths = np.empty((nu.size, len(times), nu.dim))
        paths[:, 0] = nu.atoms
        how = "converged"
        for a in range(0, len(times) - 1, per):
            b = min(a + per, len(times) - 1)
            start = paths[:, a]
            guess = np.repeat(start[:, None, :], b - a + 1, axis=1)
            seg, seg_how = _picard_window(start, times[a:b + 1], rows[a:b], weights, pi, act, tol,
                                          max_iter, damping, guess, report)
            paths[:, a:b + 1] = seg
            if seg_how != "converged":
                how = seg_how
                break

    report.converged = how == "converged"
    report.status = "converged" if report.converged else "nonconverged"
    return _solution(times, paths, weights, times[1] - times[0], c_traj), report


def lln_reference(nu: InitialWeightAtomSet, pi: DataAtomSet, T: float, dt: float = DEFAULT_DT,
                  tol: float = 1e-10, act: Activation | None = None, max_iter: int = 500) -> MeanFieldSolution:
    """Mean-field limit under the untilted data law (rho_t = pi for all t)."""
    sol, report = picard_solve(TiltedKernel.constant(pi.probs, T), pi, nu, dt, tol, max_iter, act)
    if not report.converged:
        raise MeanFieldError(f"LLN reference did not converge: last gap {report.gaps[-1]:.3e}")
    return sol


# ---------------------------------------------------------------------------
# Residual diagnostic
# ---------------------------------------------------------------------------

def _monomial(f_id, d):
    idx = tuple(int(i) for i in f_id)
    if len(idx) not in (1, 2) or any(not 0 <= i < d for i in idx):
        raise ValueError(f"unsupported test function {f_id!r}: need a first or second order monomial")
    if len(idx) == 1:
        (i,) = idx

        def f(x):
            return x[..., i]

        def grad(x):
            g = np.zeros_like(x)
            g[..., i] = 1.0
            return g
    else:
        i, j = idx

        def f(x):
            return x[..., i] * x[..., j]

        def grad(x):
            g = np.zeros_like(x)
            g[..., i] += x[..., j]
            g[..., j] += x[..., i]
            return g
    return f, grad


def evt_residual(eta: MeanFieldSolution, rho: TiltedKernel, pi: DataAtomSet, f_id, act: Activation) -> float:
    """max_t sum_j w_j |f(theta_t) - f(theta_0) - int_0^t A(x, theta_s; eta_s) . grad f(theta_s) rho_s(dx) ds|.

    The time integral uses the trapezoidal rule on the solution grid, so an
    explicit-Euler solution leaves a residual of order dt.
    """
    f, grad = _monomial(f_id, eta.paths.shape[2])
    times = eta.times
    rows = rho.step_rows(times)
    P = eta.paths
    w = eta.weights
    integral = np.zeros(P.shape[0])
    worst = 0.0
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        a = np.sum(drift(P[:, k], P[:, k], w, pi, rows[k], act) * grad(P[:, k]), axis=1)
        b = np.sum(drift(P[:, k + 1], P[:, k + 1], w, pi, rows[k], act) * grad(P[:, k + 1]), axis=1)
        integral = integral + 0.5 * h * (a + b)
        r = f(P[:, k + 1]) - f(P[:, 0]) - integral
        worst = max(worst, float(seqsum(w * np.abs(r))))
    return worst
