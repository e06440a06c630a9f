"""Rate-function upper bounds, importance sampling and decay/LLN experiments.

Rates are minimized over a restricted family: data tilts that are piecewise
constant on B equal time blocks (softmax logits per block) and, for the
annealed rate, reweightings of the initial atoms. Every value reported here
is therefore an upper bound on the true infimum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from . import rng
from .functionals import TestFunctional, get_functional
from .meanfield import MeanFieldSolution, euler_solve, lln_reference
from .model import Activation, DataAtomSet, InitialWeightAtomSet, SimConfig, seqsum
from .sgd import (
    GrowthBoundReport,
    evolve_batch,
    growth_report_from_data,
    initial_radius,
)
from .tilt import (
    StepKernelSequence,
    TiltedKernel,
    discretize_kernel,
    exponential_tilt,
    kl_divergence,
    relative_entropy_R,
)

Z95 = 1.959963984540054
CHUNK_BUDGET = 2 ** 22  # floats per replica chunk


@dataclass(frozen=True)
class EventSpec:
    """{theta : theta(f) >= a} or {theta : theta(f) <= a}."""

    functional: str | TestFunctional
    threshold: float
    direction: str = "geq"

    def __post_init__(self):
        if self.direction not in ("geq", "leq"):
            raise ValueError(f"direction must be 'geq' or 'leq', got {self.direction!r}")
        get_functional(self.functional)

    @property
    def f(self) -> TestFunctional:
        return get_functional(self.functional)

    def contains(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return values >= self.threshold if self.direction == "geq" else values <= self.threshold


@dataclass(frozen=True)
class OptConfig:
    T: float = 1.0
    blocks: int = 1
    dt: float = 1.0 / 32
    outer_iters: int = 8
    inner_iters: int = 10
    penalty0: float = 10.0
    fd_h: float = 1e-4
    feas_tol: float = 1e-6
    newton_iters: int = 8
    step0: float = 1.0

    def __post_init__(self):
        if self.blocks < 1 or self.outer_iters < 1 or self.inner_iters < 0:
            raise ValueError("blocks and outer_iters must be >= 1, inner_iters >= 0")
        if not (self.T > 0 and self.dt > 0 and self.fd_h > 0 and self.feas_tol > 0):
            raise ValueError("T, dt, fd_h and feas_tol must be positive")


@dataclass
class RateEstimate:
    value: float  # inf when infeasible
    entropy_cost: float
    init_cost: float
    constraint_gap: float
    tilt: TiltedKernel
    nu0: InitialWeightAtomSet
    optimizer_trace: list = field(default_factory=list)
    status: str = "feasible"
    achieved: float = math.nan
    params: np.ndarray | None = None
    upper_bound: bool = True  # restricted family: never a certified value

    def to_dict(self) -> dict:
        return {
            "value": self.value, "entropy_cost": self.entropy_cost, "init_cost": self.init_cost,
            "constraint_gap": self.constraint_gap, "status": self.status, "achieved": self.achieved,
            "upper_bound": self.upper_bound, "tilt": self.tilt.to_dict(),
            "nu0_probs": self.nu0.probs.tolist(),
            "optimizer_trace": [list(t) for t in self.optimizer_trace],
        }


def meanfield_expectation(sol: MeanFieldSolution, f: TestFunctional | str) -> float:
    """theta(f) for the law of the mean-field cloud."""
    f = get_functional(f)
    vals = f.apply(sol.cloud.states_at(f.times(sol.horizon)))
    return float(seqsum(sol.weights * vals))


# ---------------------------------------------------------------------------
# Rate estimation
# ---------------------------------------------------------------------------

class _RateProblem:
    """Logit parametrization: B rows of data logits, then (optionally) initial-atom logits."""

    def __init__(self, target: EventSpec, nu, pi, cfg: OptConfig, act, joint: bool):
        self.f = target.f
        self.a = float(target.threshold)
        self.nu, self.pi, self.cfg, self.act, self.joint = nu, pi, cfg, act, joint
        self.B, self.m = cfg.blocks, pi.size
        self.dim = self.B * self.m + (nu.size if joint else 0)
        self._cache: dict[bytes, float] = {}

    def unpack(self, x):
        rows = np.array([exponential_tilt(self.pi, x[b * self.m:(b + 1) * self.m]) for b in range(self.B)])
        nu0 = exponential_tilt(self.nu.probs, x[self.B * self.m:]) if self.joint else self.nu.probs
        return rows, nu0

    def kernel(self, x) -> TiltedKernel:
        return TiltedKernel.uniform_blocks(self.unpack(x)[0], self.cfg.T)

    def costs(self, x):
        rows, nu0 = self.unpack(x)
        ent = relative_entropy_R(TiltedKernel.uniform_blocks(rows, self.cfg.T), self.pi) / self.cfg.T
        init = kl_divergence(nu0, self.nu.probs) if self.joint else 0.0
        return ent, init

    def cost(self, x) -> float:
        return float(sum(self.costs(x)))

    def achieved(self, x) -> float:
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._cache:
            rows, nu0 = self.unpack(x)
            sol = euler_solve(TiltedKernel.uniform_blocks(rows, self.cfg.T), self.pi,
                              self.nu.with_probs(nu0), self.cfg.dt, self.act)
            self._cache[key] = meanfield_expectation(sol, self.f)
        return self._cache[key]

    def gap(self, x) -> float:
        return self.achieved(x) - self.a

    def fd_grad(self, fn, x) -> np.ndarray:
        h = self.cfg.fd_h
        g = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            g[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
        return g

    def linear_direction(self, x0) -> np.ndarray:
        """Potential of the KL-cheapest first-order tilt: (d gap / d logit) / prob, per block width."""
        s = self.fd_grad(self.gap, x0)
        rows, nu0 = self.unpack(x0)
        pot = np.zeros(self.dim)
        for b in range(self.B):
            p = rows[b]
            sl = slice(b * self.m, (b + 1) * self.m)
            # block b costs width/T = 1/B per unit of KL
            pot[sl] = np.where(p > 0, s[sl] / np.where(p > 0, p, 1.0), 0.0) * self.B
        if self.joint:
            sl = slice(self.B * self.m, self.dim)
            pot[sl] = np.where(nu0 > 0, s[sl] / np.where(nu0 > 0, nu0, 1.0), 0.0)
        return pot


def _ray_root(prob: _RateProblem, x0, direction):
    """Feasible point x0 + beta * direction with the gap root found by brentq."""
    g0 = prob.gap(x0)
    if g0 == 0.0:
        return x0.copy()
    slope = float(direction @ prob.fd_grad(prob.gap, x0)) if np.any(direction) else 0.0
    if slope == 0.0:
        return None
    sign = -math.copysign(1.0, g0 * slope)
    beta = abs(g0 / slope)
    for _ in range(40):
        gb = prob.gap(x0 + sign * beta * direction)
        if not math.isfinite(gb):
            return None
        if gb * g0 <= 0:
            b = brentq(lambda t: prob.gap(x0 + sign * t * direction), 0.0, beta, xtol=1e-14, rtol=1e-14)
            return x0 + sign * b * direction
        beta *= 2.0
    return None


def _newton_project(prob: _RateProblem, x, grad=None):
    """Chord-Newton steps along grad(gap) until |gap| <= feas_tol."""
    grad = prob.fd_grad(prob.gap, x) if grad is None else grad
    nrm = float(grad @ grad)
    if nrm == 0.0:
        return x
    for _ in range(prob.cfg.newton_iters):
        g = prob.gap(x)
        if abs(g) <= prob.cfg.feas_tol:
            break
        x = x - g * grad / nrm
    return x


def _refine(prob: _RateProblem, x_best, best_cost, trace):
    """Quadratic penalty outer loop with finite-difference gradient descent inside.

    Only feasible points that lower the objective are accepted, so the
    accepted objectives in ``trace`` never increase.
    """
    cfg = prob.cfg
    x = x_best.copy()
    mu = cfg.penalty0
    step = cfg.step0
    for _ in range(cfg.outer_iters):
        def penalized(v, mu=mu):
            return prob.cost(v) + mu * prob.gap(v) ** 2

        p_cur = penalized(x)
        for _ in range(cfg.inner_iters):
            grad = prob.fd_grad(prob.cost, x) + 2.0 * mu * prob.gap(x) * prob.fd_grad(prob.gap, x)
            gn = float(np.sqrt(grad @ grad))
            if gn < 1e-12:
                break
            for _ in range(30):
                cand = x - step * grad / gn
                p_new = penalized(cand)
                if p_new < p_cur:
                    x, p_cur = cand, p_new
                    step *= 2.0
                    break
                step *= 0.5
            else:
                break
        xp = _newton_project(prob, x)
        c, gap = prob.cost(xp), abs(prob.gap(xp))
        accepted = gap <= cfg.feas_tol and c < best_cost
        trace.append((c, gap, accepted))
        if accepted:
            x_best, best_cost = xp.copy(), c
            x = xp
        mu *= 2.0
    return x_best, best_cost


def _closest(prob: _RateProblem, x, trace):
    """Descent on gap^2 for the full outer x inner budget; returns the point of smallest |gap| seen."""
    cfg = prob.cfg
    best, best_gap = x.copy(), abs(prob.gap(x))
    step = cfg.step0
    for _ in range(cfg.outer_iters):
        for _ in range(cfg.inner_iters):
            g_cur = prob.gap(x) ** 2
            grad = prob.fd_grad(lambda v: prob.gap(v) ** 2, x)
            gn = float(np.sqrt(grad @ grad))
            if gn < 1e-12:
                break
            for _ in range(30):
                cand = x - step * grad / gn
                if prob.gap(cand) ** 2 < g_cur:
                    x = cand
                    step *= 2.0
                    break
                step *= 0.5
            else:
                break
        gap = abs(prob.gap(x))
        trace.append((prob.cost(x), gap, False))
        if gap < best_gap:
            best, best_gap = x.copy(), gap
        if best_gap <= cfg.feas_tol:
            break
    return best


def _finish(prob: _RateProblem, x, trace) -> RateEstimate:
    rows, nu0 = prob.unpack(x)
    ent, init = prob.costs(x)
    gap = abs(prob.gap(x))
    feasible = gap <= prob.cfg.feas_tol
    return RateEstimate(
        value=ent + init if feasible else math.inf, entropy_cost=ent, init_cost=init, constraint_gap=gap,
        tilt=TiltedKernel.uniform_blocks(rows, prob.cfg.T),
        nu0=prob.nu.with_probs(nu0), optimizer_trace=trace,
        status="feasible" if feasible else "infeasible",
        achieved=prob.achieved(x), params=np.array(x),
    )


def _solve(prob: _RateProblem, starts) -> RateEstimate:
    trace = []
    x0 = np.zeros(prob.dim)
    candidates = [s for s in starts if s is not None]
    if abs(prob.gap(x0)) <= prob.cfg.feas_tol:
        candidates.append(x0)
    warm = _ray_root(prob, x0, prob.linear_direction(x0))
    if warm is not None:
        candidates.append(_newton_project(prob, warm))
    feasible = [(prob.cost(c), i, c) for i, c in enumerate(candidates) if abs(prob.gap(c)) <= prob.cfg.feas_tol]
    if not feasible:
        best = min(candidates + [x0], key=lambda c: abs(prob.gap(c)))
        trace.append((prob.cost(best), abs(prob.gap(best)), False))
        return _finish(prob, _closest(prob, best, trace), trace)
    best_cost, _, x_best = min(feasible, key=lambda t: (t[0], t[1]))
    trace.append((best_cost, abs(prob.gap(x_best)), True))
    if best_cost > 0.0:
        x_best, best_cost = _refine(prob, x_best, best_cost, trace)
    return _finish(prob, x_best, trace)


def _check_inputs(nu, pi, act):
    if nu.dim != pi.dim_in + 1:
        raise ValueError("weight and data dimensions disagree")
    return act or Activation.named("tanh")


def _expand_blocks(est: RateEstimate | None, blocks: int, m: int):
    """Logits of a coarser block estimate repeated onto ``blocks`` equal blocks (same kernel)."""
    if est is None or est.status != "feasible" or est.params is None:
        return None
    b0 = est.tilt.blocks
    if blocks % b0 or len(est.params) < b0 * m:
        return None
    rows = est.params[: b0 * m].reshape(b0, m)
    return np.repeat(rows, blocks // b0, axis=0).reshape(-1)


def estimate_I(target: EventSpec, nu: InitialWeightAtomSet, pi: DataAtomSet, opt_cfg: OptConfig | None = None,
               act: Activation | None = None, base: RateEstimate | None = None) -> RateEstimate:
    """Upper bound on the quenched rate of the boundary {theta(f) = a}: min (1/T) R(rho) over block tilts.

    A feasible ``base`` estimate on a coarser block grid (dividing B) is
    used as an extra starting point, so refining the blocks never hurts.
    """
    act = _check_inputs(nu, pi, act)
    cfg = opt_cfg or OptConfig()
    prob = _RateProblem(target, nu, pi, cfg, act, joint=False)
    return _solve(prob, [_expand_blocks(base, cfg.blocks, pi.size)])


def estimate_J(target: EventSpec, nu: InitialWeightAtomSet, pi: DataAtomSet, opt_cfg: OptConfig | None = None,
               act: Activation | None = None, base: RateEstimate | None = None) -> RateEstimate:
    """Upper bound on the annealed rate: min (1/T) R(rho) + H(nu0 | nu) over tilts and initial reweightings.

    The quenched optimum (``base``, computed if absent) is one of the
    starting points, so a feasible quenched estimate is never beaten by the
    annealed one in the wrong direction.
    """
    act = _check_inputs(nu, pi, act)
    cfg = opt_cfg or OptConfig()
    if base is None:
        base = estimate_I(target, nu, pi, cfg, act)
    prob = _RateProblem(target, nu, pi, cfg, act, joint=True)
    start = _expand_blocks(base, cfg.blocks, pi.size)
    if start is not None:
        start = np.concatenate([start, np.zeros(nu.size)])
    return _solve(prob, [start])


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------

class ISResult(NamedTuple):
    p_hat: float
    ci_halfwidth: float
    ess: float
    std: float
    hits: int
    replicas: int
    status: str


def _record_steps(f: TestFunctional, n: int, n_prime: int, T: float) -> np.ndarray:
    k = np.floor(n * f.times(T) + 1e-9).astype(np.int64)
    return np.minimum(k, n_prime)


def _draw(pi, nu_atoms_probs, kernels, n, n_prime, seed, r):
    init = rng.sample_atoms(nu_atoms_probs, n, rng.stream(seed, r, rng.INIT))
    gen = rng.stream(seed, r, rng.DATA)
    if kernels is None:
        data = rng.sample_atoms(pi.probs, n_prime, gen)
    else:
        # row-wise inverse CDF; identical to sample_atoms when every row equals pi
        cdf = np.cumsum(kernels, axis=1)
        u = gen.random(n_prime) * cdf[:, -1]
        data = np.minimum(np.sum(cdf <= u[:, None], axis=1), pi.size - 1)
    return init, data


def _chunk(f, cfg: SimConfig, pi, nu, act, seed, lo, hi, kernels, nu0_probs, with_growth):
    n, n_prime, T = cfg.n, cfg.n_prime, cfg.T
    sample_probs = nu.probs if nu0_probs is None else nu0_probs
    inits, datas = zip(*(_draw(pi, sample_probs, kernels, n, n_prime, seed, r) for r in range(lo, hi)))
    inits, datas = np.array(inits), np.array(datas).reshape(hi - lo, n_prime)
    logw = np.zeros(hi - lo)
    if kernels is not None:
        steps = np.arange(n_prime)
        q = kernels[steps[None, :], datas]
        if np.any(q <= 0):
            raise ValueError("sampled a data atom with kernel weight 0")
        logw = logw + seqsum(np.log(pi.probs[datas]) - np.log(q), axis=1)
    if nu0_probs is not None:
        q0 = nu0_probs[inits]
        if np.any(q0 <= 0):
            raise ValueError("sampled an initial atom with weight 0 under nu0")
        logw = logw + seqsum(np.log(nu.probs[inits]) - np.log(q0), axis=1)
    points0 = nu.atoms[inits]
    record = _record_steps(f, n, n_prime, T)
    weights = np.full(n, 1.0 / n)
    res = evolve_batch(points0, weights, pi.z[datas], pi.y[datas], act, 1.0 / n, record, return_sup=with_growth)
    states, sup = res if with_growth else (res, None)
    vals = f.apply(np.swapaxes(states, 1, 2))  # (R, n)
    theta_f = seqsum(weights * vals, axis=-1)
    growth = []
    if with_growth:
        for i in range(hi - lo):
            growth.append(growth_report_from_data(pi.z[datas[i]], pi.y[datas[i]], n, T, act,
                                                  initial_radius(points0[i]), sup[i]))
    return theta_f, logw, growth


def simulate_functional(f, cfg: SimConfig, pi: DataAtomSet, nu: InitialWeightAtomSet, act: Activation,
                        replicas: int, seed: int, kernels=None, nu0_probs=None, workers: int = 1,
                        with_growth: bool = False):
    """theta^n(f) and log likelihood ratios for ``replicas`` independent SGD runs.

    Replica r draws from the streams (seed, r, .), so the output does not
    depend on ``workers`` or on how replicas are chunked.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    f = get_functional(f)
    if kernels is not None:
        kernels = np.asarray(kernels, dtype=float)
        if kernels.shape != (cfg.n_prime, pi.size):
            raise ValueError(f"need {cfg.n_prime} step kernels over {pi.size} atoms, got {kernels.shape}")
    if nu0_probs is not None:
        nu0_probs = np.asarray(nu0_probs, dtype=float)
    per = cfg.n * nu.dim * (len(f.times(cfg.T)) + 4)
    size = max(1, min(replicas, CHUNK_BUDGET // per))
    bounds = [(lo, min(lo + size, replicas)) for lo in range(0, replicas, size)]

    def job(b):
        return _chunk(f, cfg, pi, nu, act, seed, b[0], b[1], kernels, nu0_probs, with_growth)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    theta_f = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts])
    growth = [g for p in parts for g in p[2]]
    return theta_f, logw, growth


def _estimate(hits: np.ndarray, w: np.ndarray) -> ISResult:
    R = len(hits)
    contrib = w * hits
    p_hat = float(seqsum(contrib)) / R
    std = math.sqrt(float(seqsum((contrib - p_hat) ** 2)) / (R - 1)) if R > 1 else 0.0
    hw = contrib[hits]
    ess = float(seqsum(hw)) ** 2 / float(seqsum(hw ** 2)) if hw.size and np.any(hw > 0) else 0.0
    return ISResult(p_hat, Z95 * std / math.sqrt(R), ess, std, int(hits.sum()), R,
                    "ok" if ess > 0 else "zero_ess")


def importance_sample(event: EventSpec, seq: StepKernelSequence, cfg: SimConfig, nu: InitialWeightAtomSet,
                      pi: DataAtomSet, replicas: int, seed: int, act: Activation | None = None,
                      nu0_probs=None, workers: int = 1) -> ISResult:
    """Weighted hit rate with data drawn from the per-step kernels (and initial atoms from nu0).

    Weights are L = prod_k pi(X_k) / pi_k(X_k) times prod_i nu(theta_i) / nu0(theta_i).
    """
    act = act or Activation.named("tanh")
    if seq.n != cfg.n:
        raise ValueError("kernel sequence and config disagree on n")
    if np.any((seq.kernels > 0) & (pi.probs[None, :] == 0)):
        raise ValueError("step kernels put mass outside the support of pi")
    theta_f, logw, _ = simulate_functional(event.f, cfg, pi, nu, act, replicas, seed, seq.kernels,
                                           nu0_probs, workers)
    return _estimate(event.contains(theta_f), np.exp(logw))


def naive_mc(event: EventSpec, cfg: SimConfig, nu: InitialWeightAtomSet, pi: DataAtomSet, replicas: int,
             seed: int, act: Activation | None = None, workers: int = 1) -> ISResult:
    act = act or Activation.named("tanh")
    theta_f, logw, _ = simulate_functional(event.f, cfg, pi, nu, act, replicas, seed, workers=workers)
    return _estimate(event.contains(theta_f), np.exp(logw))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def decay_curve(event: EventSpec, n_list, method: str, replicas: int, seeds, pi: DataAtomSet,
                nu: InitialWeightAtomSet, act: Activation | None = None, T: float = 1.0,
                estimate: RateEstimate | None = None, workers: int = 1) -> list[dict]:
    """-(1/n') log p_hat per n. Rows with p_hat = 0 are flagged and carry NaN rates.

    The rate interval maps p_hat -/+ ci through -(1/n') log; a lower end at
    or below zero gives an infinite upper rate.
    """
    act = act or Activation.named("tanh")
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    if method not in ("naive", "tilted"):
        raise ValueError(f"unknown method {method!r}")
    if method == "tilted" and estimate is None:
        raise ValueError("the tilted method needs a rate estimate")
    seeds = [seeds] * len(n_list) if np.isscalar(seeds) else list(seeds)
    rows = []
    for n, seed in zip(n_list, seeds):
        cfg = SimConfig(n, T, pi.dim_in, int(seed))
        if method == "naive":
            res = naive_mc(event, cfg, nu, pi, replicas, int(seed), act, workers)
        else:
            seq = discretize_kernel(estimate.tilt, n)
            res = importance_sample(event, seq, cfg, nu, pi, replicas, int(seed), act,
                                    estimate.nu0.probs, workers)
        npr = cfg.n_prime
        flagged = res.p_hat <= 0.0
        if flagged:
            rate = lo = hi = math.nan
        else:
            rate = -math.log(res.p_hat) / npr
            lo = -math.log(min(1.0, res.p_hat + res.ci_halfwidth)) / npr
            hi = -math.log(res.p_hat - res.ci_halfwidth) / npr if res.p_hat > res.ci_halfwidth else math.inf
        rows.append({
            "n": n, "n_prime": npr, "p_hat": res.p_hat, "ci_halfwidth": res.ci_halfwidth, "ess": res.ess,
            "minus_log_p_over_nprime": rate, "rate_lo": lo, "rate_hi": hi, "flagged": flagged,
        })
    return rows


@dataclass
class LLNResult:
    rows: list
    theta_star: float
    reference: MeanFieldSolution
    growth: list[GrowthBoundReport]

    @property
    def growth_violations(self) -> int:
        return sum(not g.ok for g in self.growth)


def lln_experiment(f, n_list, replicas: int, nu: InitialWeightAtomSet, pi: DataAtomSet,
                   act: Activation | None = None, dt: float = 1.0 / 128, seed: int = 0, T: float = 1.0,
                   tol: float = 1e-10, workers: int = 1) -> LLNResult:
    """Median and IQR of |theta^n(f) - theta*(f)| over independent replicas, per n."""
    act = act or Activation.named("tanh")
    f = get_functional(f)
    ref = lln_reference(nu, pi, T, dt, tol, act)
    star = meanfield_expectation(ref, f)
    rows, growth = [], []
    for n in n_list:
        cfg = SimConfig(int(n), T, pi.dim_in, seed)
        theta_f, _, g = simulate_functional(f, cfg, pi, nu, act, replicas, seed, workers=workers,
                                            with_growth=True)
        err = np.abs(theta_f - star)
        q25, q50, q75 = np.percentile(err, [25, 50, 75])
        rows.append({"n": int(n), "median_abs_error": float(q50), "iqr": float(q75 - q25)})
        growth.extend(g)
    return LLNResult(rows, star, ref, growth)
