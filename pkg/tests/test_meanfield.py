import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfldp.meanfield import (
    MeanFieldError,
    constant_solution,
    contraction_constant,
    contraction_from_constants,
    euler_solve,
    evt_residual,
    lln_reference,
    picard_solve,
    time_grid,
    trajectory_bound,
    wasserstein_D,
    zeta_map,
)
from mfldp.model import Activation, DataAtomSet, InitialWeightAtomSet, ParamMeasure, SimConfig, gradient_A
from mfldp.sgd import DataStream, pushforward_eta_n
from mfldp.tilt import TiltedKernel, relative_entropy_R

TANH = Activation.named("tanh")


def single(theta, z, y):
    nu = InitialWeightAtomSet([theta], [1.0])
    pi = DataAtomSet([z], [y], [1.0])
    return nu, pi


class TestZetaMap:
    def test_zero_drift_when_data_fit(self):
        nu = InitialWeightAtomSet([[0.6, 0.8], [-0.2, 0.4]], [0.5, 0.5])
        z = np.array([0.7])
        y = 0.5 * 0.6 * math.tanh(0.8 * 0.7) + 0.5 * -0.2 * math.tanh(0.4 * 0.7)
        pi = DataAtomSet([z], [y], [1.0])
        eta0 = constant_solution(nu, 0.5, 1 / 32)
        out = zeta_map(eta0, TiltedKernel.constant([1.0], 0.5), pi, nu, TANH)
        np.testing.assert_allclose(out.paths, eta0.paths, atol=1e-15)

    def test_one_step_hand_oracle(self):
        theta, z, y = [0.4, -0.7, 0.2], [0.5, 1.0], 0.9
        nu, pi = single(theta, z, y)
        dt = 0.125
        eta0 = constant_solution(nu, dt, dt)
        out = zeta_map(eta0, TiltedKernel.constant([1.0], dt), pi, nu, TANH)
        expected = np.array(theta) + dt * gradient_A((np.array(z), y), theta, ParamMeasure.uniform([theta]), TANH)
        np.testing.assert_allclose(out.paths[0, 1], expected, rtol=1e-14)

    def test_deterministic(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.uniform_blocks([[0.1, 0.2, 0.3, 0.4], pi.probs], 0.5)
        eta0 = constant_solution(nu, 0.5, 1 / 64)
        a = zeta_map(eta0, rho, pi, nu, act)
        b = zeta_map(eta0, rho, pi, nu, act)
        np.testing.assert_array_equal(a.paths, b.paths)

    def test_dimension_errors(self, desk_case):
        pi, nu, act = desk_case
        other = InitialWeightAtomSet([[1.0, 0.0]], [1.0])
        with pytest.raises(ValueError):
            zeta_map(constant_solution(nu, 0.5, 1 / 64), TiltedKernel.constant(pi.probs, 0.5), pi, other, act)
        with pytest.raises(ValueError):
            zeta_map(constant_solution(nu, 0.5, 1 / 64), TiltedKernel.constant([0.5, 0.5], 0.5), pi, nu, act)


class TestPicard:
    def test_one_step_converges_fast(self, desk_case):
        pi, nu, act = desk_case
        dt = 1 / 128
        rho = TiltedKernel.constant(pi.probs, dt)
        sol, rep = picard_solve(rho, pi, nu, dt, 1e-12, 10, act)
        assert rep.converged and rep.iterations <= 2
        np.testing.assert_array_equal(sol.paths, euler_solve(rho, pi, nu, dt, act).paths)

    def test_desk_geometric_decay(self, desk_case):
        pi, nu, act = desk_case
        sol, rep = picard_solve(TiltedKernel.constant(pi.probs, 0.5), pi, nu, 1 / 128, 1e-8, 50, act)
        assert rep.converged and rep.iterations <= 50 and not rep.fallback
        assert rep.gaps[-1] < 1e-8
        assert all(r < 1.0 for r in rep.contraction_ratios)
        assert sol.within_bound()

    def test_fixed_point_residual(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.uniform_blocks([[0.4, 0.1, 0.1, 0.4], [0.1, 0.4, 0.4, 0.1]], 0.5)
        tol = 1e-9
        sol, rep = picard_solve(rho, pi, nu, 1 / 64, tol, 50, act)
        assert wasserstein_D(sol, zeta_map(sol, rho, pi, nu, act)) < 10 * tol

    def test_uniqueness_two_starts(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.constant(pi.probs, 0.5)
        a, _ = picard_solve(rho, pi, nu, 1 / 64, 1e-10, 60, act)
        start = zeta_map(constant_solution(nu, 0.5, 1 / 64), rho, pi, nu, act)
        b, _ = picard_solve(rho, pi, nu, 1 / 64, 1e-10, 60, act, init=start)
        assert wasserstein_D(a, b) < 1e-9

    def test_damping_reaches_same_point(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.constant(pi.probs, 0.5)
        a, _ = picard_solve(rho, pi, nu, 1 / 64, 1e-11, 80, act)
        b, rep = picard_solve(rho, pi, nu, 1 / 64, 1e-11, 200, act, damping=0.3)
        assert rep.converged and wasserstein_D(a, b) < 1e-9

    def test_initial_marginal_is_nu(self, desk_case):
        pi, nu, act = desk_case
        sol, _ = picard_solve(TiltedKernel.constant(pi.probs, 0.5), pi, nu, 1 / 64, 1e-8, 50, act)
        np.testing.assert_array_equal(sol.paths[:, 0], nu.atoms)
        np.testing.assert_array_equal(sol.weights, nu.probs)

    def test_stall_falls_back_to_windows(self):
        nu = InitialWeightAtomSet([[0.5, 1.0], [-1.0, 0.3]], [0.5, 0.5])
        pi = DataAtomSet([[1.0], [-0.5]], [5.0, -5.0], [0.5, 0.5])
        rho = TiltedKernel.constant(pi.probs, 6.0)
        sol, rep = picard_solve(rho, pi, nu, 1 / 16, 1e-8, 300, TANH)
        assert rep.fallback and rep.converged
        assert rep.window == pytest.approx(min(6.0, 1 / (2 * rep.c_contr)))
        assert wasserstein_D(sol, euler_solve(rho, pi, nu, 1 / 16, TANH)) < 1e-8

    def test_nonconvergence_is_reported(self, desk_case):
        pi, nu, act = desk_case
        _, rep = picard_solve(TiltedKernel.constant(pi.probs, 0.5), pi, nu, 1 / 64, 1e-14, 2, act)
        assert not rep.converged and rep.status == "nonconverged"
        with pytest.raises(MeanFieldError):
            lln_reference(nu, pi, 0.5, 1 / 64, 1e-14, act, max_iter=2)

    def test_preconditions(self, desk_case):
        pi, nu, act = desk_case
        with pytest.raises(ValueError):
            picard_solve(TiltedKernel.constant(pi.probs, 0.5), pi, nu, 1 / 64, 0.0, 10, act)
        degenerate = DataAtomSet(pi.z, pi.y, [0.5, 0.5, 0.0, 0.0])
        with pytest.raises(ValueError):
            picard_solve(TiltedKernel.constant(pi.probs, 0.5), degenerate, nu, 1 / 64, 1e-8, 10, act)


class TestDistance:
    def test_identical(self, desk_case):
        pi, nu, act = desk_case
        sol = euler_solve(TiltedKernel.constant(pi.probs, 0.5), pi, nu, 1 / 32, act)
        assert wasserstein_D(sol, sol) == 0.0

    def test_constant_single_atoms(self):
        a = constant_solution(InitialWeightAtomSet([[1.0, 2.0]], [1.0]), 1.0, 0.1)
        b = constant_solution(InitialWeightAtomSet([[4.0, 6.0]], [1.0]), 1.0, 0.1)
        assert wasserstein_D(a, b) == pytest.approx(5.0)

    @given(st.floats(0.1, 3.0))
    def test_homogeneity(self, scale):
        base = constant_solution(InitialWeightAtomSet([[0.0, 0.0], [1.0, 1.0]], [0.3, 0.7]), 1.0, 0.25)
        moved = constant_solution(InitialWeightAtomSet([[0.5, -0.2], [1.3, 1.1]], [0.3, 0.7]), 1.0, 0.25)
        far = constant_solution(InitialWeightAtomSet(base.paths[:, 0] + scale * (moved.paths[:, 0] - base.paths[:, 0]),
                                                     [0.3, 0.7]), 1.0, 0.25)
        assert wasserstein_D(base, far) == pytest.approx(scale * wasserstein_D(base, moved), rel=1e-12)

    def test_sup_over_partial_horizon(self, desk_case):
        pi, nu, act = desk_case
        a = constant_solution(nu, 0.5, 1 / 64)
        b = euler_solve(TiltedKernel.constant(pi.probs, 0.5), pi, nu, 1 / 64, act)
        assert wasserstein_D(a, b, 0.1) <= wasserstein_D(a, b, 0.5)

    def test_mismatch(self):
        a = constant_solution(InitialWeightAtomSet([[1.0, 2.0]], [1.0]), 1.0, 0.1)
        b = constant_solution(InitialWeightAtomSet([[1.0, 2.0], [0.0, 0.0]], [0.5, 0.5]), 1.0, 0.1)
        with pytest.raises(ValueError):
            wasserstein_D(a, b)


class TestConstants:
    def test_plug_in(self):
        assert contraction_from_constants(1.0, 1.0, 1.0, 1.0) == 4.0

    def test_monotone_in_c_pi(self, desk_case):
        _, nu, act = desk_case
        small = DataAtomSet([[0.5, 0.5]], [0.5], [1.0])
        big = DataAtomSet([[1.5, 1.5]], [2.0], [1.0])
        assert contraction_constant(nu, small, act, 0.5) < contraction_constant(nu, big, act, 0.5)

    def test_trajectory_bound_at_zero(self, desk_case):
        pi, nu, act = desk_case
        assert trajectory_bound(nu, pi, act, 0.0) == nu.c_nu

    @given(st.floats(0.0, 2.0), st.floats(0.0, 1.0))
    def test_trajectory_bound_nondecreasing(self, T, dT):
        from mfldp.desk import desk

        pi, nu, act = desk()
        assert trajectory_bound(nu, pi, act, T) <= trajectory_bound(nu, pi, act, T + dT)

    def test_solutions_respect_bound(self, desk_case):
        pi, nu, act = desk_case
        gen = np.random.default_rng(0)
        for _ in range(5):
            rho = TiltedKernel.uniform_blocks(gen.dirichlet(np.ones(4), size=3), 1.0)
            sol, rep = picard_solve(rho, pi, nu, 1 / 64, 1e-8, 50, act)
            assert rep.converged and sol.cloud.sup_norm() <= sol.c_traj


class TestResidual:
    def test_zero_for_constant_cloud(self):
        nu = InitialWeightAtomSet([[0.6, 0.8]], [1.0])
        y = 0.6 * math.tanh(0.8 * 0.7)
        pi = DataAtomSet([[0.7]], [y], [1.0])
        rho = TiltedKernel.constant([1.0], 0.5)
        sol = euler_solve(rho, pi, nu, 1 / 32, TANH)
        for f in [(0,), (1,), (0, 1)]:
            assert evt_residual(sol, rho, pi, f, TANH) < 1e-15

    def test_unsupported(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.constant(pi.probs, 0.5)
        sol = euler_solve(rho, pi, nu, 1 / 32, act)
        for bad in [(0, 1, 2), (), (7,)]:
            with pytest.raises(ValueError):
                evt_residual(sol, rho, pi, bad, act)

    def test_first_order_halving(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.constant(pi.probs, 0.5)
        r = [evt_residual(lln_reference(nu, pi, 0.5, dt, 1e-12, act), rho, pi, (0, 1), act) for dt in (1 / 32, 1 / 64)]
        assert 1.5 <= r[0] / r[1] <= 3.0

    def test_single_atom_within_drift_scale(self):
        nu, pi = single([0.4, -0.7, 0.2], [0.5, 1.0], 0.9)
        rho = TiltedKernel.constant([1.0], 1.0)
        dt = 1 / 64
        sol = lln_reference(nu, pi, 1.0, dt, 1e-12, TANH)
        drift_bound = trajectory_bound(nu, pi, TANH, 1.0)
        assert evt_residual(sol, rho, pi, (0,), TANH) < 10 * dt * drift_bound


class TestLLNReference:
    def test_matches_n1_pushforward_at_dt_equal_1_over_n(self):
        nu, pi = single([0.4, -0.7, 0.2], [0.5, 1.0], 0.9)
        n = 64
        cfg = SimConfig(n, 1.0, 2)
        eta = pushforward_eta_n(nu.as_measure(), DataStream(np.zeros(n, dtype=int), pi), cfg, TANH)
        sol = lln_reference(nu, pi, 1.0, 1 / n, 1e-13, TANH)
        np.testing.assert_allclose(sol.paths, eta.paths, atol=1e-12)

    def test_pushforward_converges_first_order(self):
        nu, pi = single([0.4, -0.7, 0.2], [0.5, 1.0], 0.9)
        fine = lln_reference(nu, pi, 1.0, 1 / 1024, 1e-13, TANH)
        errs = []
        for n in (16, 32, 64):
            cfg = SimConfig(n, 1.0, 2)
            eta = pushforward_eta_n(nu.as_measure(), DataStream(np.zeros(n, dtype=int), pi), cfg, TANH)
            errs.append(float(np.abs(eta.paths[0, -1] - fine.paths[0, -1]).max()))
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)

    def test_symmetric_law_keeps_c_mean_zero(self):
        atoms = np.array([[0.7, 0.3, -0.5], [-0.4, 0.9, 0.2], [0.2, -0.6, 0.8]])
        nu = InitialWeightAtomSet(np.vstack([atoms, -atoms]), np.full(6, 1 / 6))
        z = np.array([[0.5, 0.4], [-0.3, 0.8]])
        pi = DataAtomSet(np.vstack([z, -z]), [0.7, -0.2, -0.7, 0.2], [0.3, 0.2, 0.3, 0.2])
        sol = lln_reference(nu, pi, 1.0, 1 / 64, 1e-12, TANH)
        c_mean = np.einsum("j,jk->k", sol.weights, sol.paths[:, :, 0])
        assert np.max(np.abs(c_mean)) < 1e-10
        assert np.max(np.abs(sol.paths[:, -1, 0])) > 0.1

    def test_kernel_entropy_zero_and_same_path(self, desk_case):
        pi, nu, act = desk_case
        rho = TiltedKernel.constant(pi.probs, 0.5)
        assert relative_entropy_R(rho, pi) == 0.0
        a = lln_reference(nu, pi, 0.5, 1 / 64, 1e-9, act, max_iter=50)
        b, _ = picard_solve(rho, pi, nu, 1 / 64, 1e-9, 50, act)
        np.testing.assert_array_equal(a.paths, b.paths)


def test_time_grid():
    g = time_grid(0.5, 0.2)
    assert len(g) == 4 and g[-1] == 0.5
    assert len(time_grid(1.0, 1 / 128)) == 129
