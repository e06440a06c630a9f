"""Runnable invariant checks shared by the ``check`` experiment and the scripts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .meanfield import (
    constant_solution,
    contraction_constant,
    evt_residual,
    lln_reference,
    picard_solve,
    wasserstein_D,
    zeta_map,
)
from .model import Activation, DataAtomSet, InitialWeightAtomSet, ParamMeasure, SimConfig, gradient_A, readout_F
from .sgd import growth_bound_report, pushforward_eta_n, simulate_theta_n
from .tilt import (
    TiltedKernel,
    check_entropy_inequality,
    discretize_kernel,
    relative_entropy_R,
    step_entropy_sum,
    steps_to_kernel,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def row(self) -> dict:
        return {"check": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed, "detail": self.detail}


def fd_gradient(x, theta_index: int, points, act: Activation, h: float = 1e-6) -> np.ndarray:
    """-n times the central difference of 0.5 (y - F(z, mu))^2 in particle ``theta_index``."""
    z, y = x
    n = len(points)
    grad = np.empty(points.shape[1])
    for i in range(points.shape[1]):
        up, dn = points.copy(), points.copy()
        up[theta_index, i] += h
        dn[theta_index, i] -= h
        lu = 0.5 * (y - readout_F(z, ParamMeasure.uniform(up), act)) ** 2
        ld = 0.5 * (y - readout_F(z, ParamMeasure.uniform(dn), act)) ** 2
        grad[i] = -n * (lu - ld) / (2.0 * h)
    return grad


def random_gradient_instance(gen: np.random.Generator):
    d_in = int(gen.integers(1, 4))
    n = int(gen.integers(1, 9))
    points = gen.uniform(-1.5, 1.5, size=(n, d_in + 1))
    z = gen.uniform(-1.5, 1.5, size=d_in)
    y = float(gen.uniform(-2.0, 2.0))
    return (z, y), points


def gradient_oracle(instances: int = 100, seed: int = 0, act: Activation | None = None) -> CheckResult:
    act = act or Activation.named("tanh")
    gen = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < instances:
        x, points = random_gradient_instance(gen)
        j = int(gen.integers(len(points)))
        A = gradient_A(x, points[j], ParamMeasure.uniform(points), act)
        if np.linalg.norm(A) < 1e-3:
            continue  # relative error is meaningless at a stationary point
        ref = fd_gradient(x, j, points, act)
        worst = max(worst, float(np.linalg.norm(A - ref) / np.linalg.norm(ref)))
        done += 1
    return CheckResult("gradient_oracle", worst, 1e-5, worst < 1e-5, f"{instances} instances")


def random_kernel(gen: np.random.Generator, m: int, T: float, max_blocks: int = 6, zeros: bool = True):
    B = int(gen.integers(1, max_blocks + 1))
    inner = np.sort(gen.uniform(0.0, T, size=B - 1))
    edges = np.concatenate([[0.0], inner, [T]])
    if np.any(np.diff(edges) <= 1e-9):
        edges = np.linspace(0.0, T, B + 1)
    rows = gen.dirichlet(np.ones(m), size=B)
    if zeros and m > 2:
        mask = gen.random((B, m)) < 0.2
        mask[np.arange(B), gen.integers(m, size=B)] = False
        rows = np.where(mask, 0.0, rows)
        rows = rows / rows.sum(axis=1, keepdims=True)
    return TiltedKernel(T, edges, rows)


def entropy_inequality(kernels: int = 100, ns=(2, 3, 7), seed: int = 0) -> list[CheckResult]:
    gen = np.random.default_rng(seed)
    violation = 0.0
    identity = 0.0
    for _ in range(kernels):
        m = int(gen.integers(2, 7))
        T = float(gen.uniform(0.3, 1.5))
        pi_probs = gen.dirichlet(np.ones(m))
        pi = DataAtomSet(gen.uniform(-1, 1, size=(m, 2)), gen.uniform(-1, 1, size=m), pi_probs / pi_probs.sum())
        rho = random_kernel(gen, m, T)
        for n in ns:
            lhs, rhs, _ = check_entropy_inequality(rho, pi, n)
            violation = max(violation, lhs - rhs)
            seq = discretize_kernel(rho, n)
            if len(seq):
                assembled = relative_entropy_R(steps_to_kernel(seq, T, tail=pi.probs), pi)
                identity = max(identity, abs(step_entropy_sum(seq, pi) - assembled))
    return [
        CheckResult("entropy_inequality", max(violation, 0.0), 1e-12, violation < 1e-12,
                    f"{kernels} kernels x n in {tuple(ns)}"),
        CheckResult("step_entropy_identity", identity, 1e-12, identity < 1e-12, "(1/n) sum_k H = R(assembled)"),
    ]


def representation_identity(pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation, n: int = 100,
                            T: float = 1.0, seed: int = 0) -> list[CheckResult]:
    cfg = SimConfig(n, T, pi.dim_in, seed)
    traj = simulate_theta_n(cfg, pi, nu, act)
    emp = ParamMeasure.uniform(traj.paths[:, 0, :])
    eta = pushforward_eta_n(emp, traj.stream, cfg, act)
    dev = float(np.max(np.abs(traj.paths - eta.paths)))
    growth = growth_bound_report(traj, traj.stream, cfg, act, check=False)
    return [
        CheckResult("representation_identity", dev, 0.0, dev == 0.0, f"n={n}, T={T}"),
        CheckResult("growth_bound", growth.observed_sup, growth.bound, growth.ok, "observed sup vs bound"),
    ]


def contraction(pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation, T: float = 0.5,
                tol: float = 1e-8, max_iter: int = 50) -> list[CheckResult]:
    """Picard run on [0, T0] with T0 = 1/(2 C), C computed for the horizon T."""
    C = contraction_constant(nu, pi, act, T)
    T0 = 1.0 / (2.0 * C)
    rho = TiltedKernel.constant(pi.probs, T0)
    dt = T0 / 64
    sol, rep = picard_solve(rho, pi, nu, dt, tol, max_iter, act)
    slack = T0 * C + 0.1
    worst = max(rep.contraction_ratios, default=0.0)
    start = zeta_map(constant_solution(nu, T0, dt), rho, pi, nu, act)
    sol2, rep2 = picard_solve(rho, pi, nu, dt, tol, max_iter, act, init=start)
    gap = wasserstein_D(sol, sol2)
    return [
        CheckResult("contraction_ratio", worst, slack, worst <= slack, f"C={C:.6g}, T0={T0:.6g}"),
        CheckResult("picard_converged", float(rep.iterations), float(max_iter),
                    rep.converged and rep.iterations <= max_iter and rep2.converged, f"tol={tol}"),
        CheckResult("uniqueness", gap, 1e-7, gap < 1e-7, "two initializations"),
    ]


MONOMIALS = ((0,), (1,), (2,), (0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def euler_order(pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation, T: float = 0.5,
                dt: float = 1.0 / 64, monomials=MONOMIALS) -> CheckResult:
    rho = TiltedKernel.constant(pi.probs, T)
    coarse = lln_reference(nu, pi, T, dt, 1e-12, act)
    fine = lln_reference(nu, pi, T, dt / 2, 1e-12, act)
    ratios = []
    for f_id in monomials:
        if max(f_id) >= nu.dim:
            continue
        ratios.append(evt_residual(coarse, rho, pi, f_id, act) / evt_residual(fine, rho, pi, f_id, act))
    lo, hi = min(ratios), max(ratios)
    return CheckResult("euler_order", lo if lo < 1.5 else hi, 3.0, 1.5 <= lo and hi <= 3.0,
                       f"ratios in [{lo:.4f}, {hi:.4f}]")


def run_all(pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation, seed: int = 0) -> list[CheckResult]:
    out = [gradient_oracle(seed=seed, act=act)]
    out += entropy_inequality(seed=seed)
    out += representation_identity(pi, nu, act, seed=seed)
    out += contraction(pi, nu, act)
    out.append(euler_order(pi, nu, act))
    return out


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'value':>12}  {'threshold':>12}  result"]
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        val = f"{r.value:.4e}" if math.isfinite(r.value) else str(r.value)
        lines.append(f"{r.name:<{width}}  {val:>12}  {r.threshold:>12.4e}  {flag}  {r.detail}")
    return "\n".join(lines)
