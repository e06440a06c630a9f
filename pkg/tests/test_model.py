import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfldp.checks import fd_gradient
from mfldp.model import (
    Activation,
    ConditionError,
    DataAtomSet,
    InitialWeightAtomSet,
    ParamMeasure,
    SimConfig,
    activation_eval,
    check_activation_bounds,
    check_activation_lipschitz,
    gradient_A,
    gradients_batch,
    loss_residual_g,
    readout_F,
    rowdot,
    seqsum,
)

coord = st.floats(-2.0, 2.0, allow_nan=False)


class TestActivation:
    @pytest.mark.parametrize("kind", ["tanh", "logistic"])
    def test_catalog_satisfies_bounds(self, kind):
        act = Activation.named(kind)
        assert check_activation_bounds(act)
        assert check_activation_lipschitz(act)
        assert act.l_sigma > 1.0 and act.c_sigma >= 1.0

    @pytest.mark.parametrize("kind", ["relu", "identity", "softplus"])
    def test_unbounded_rejected_with_condition_name(self, kind):
        with pytest.raises(ConditionError, match=r"\(CONT\)"):
            Activation.named(kind)

    def test_unknown_rejected(self):
        with pytest.raises(ConditionError):
            Activation.named("swish")

    def test_lipschitz_must_exceed_one(self):
        with pytest.raises(ConditionError):
            Activation("tanh", 1.0, 1.0)

    def test_tanh_values(self):
        act = Activation.named("tanh")
        assert activation_eval(act, 0.0) == 0.0
        assert activation_eval(act, 0.0, derivative=True) == 1.0
        assert activation_eval(act, 0.3) == pytest.approx(math.tanh(0.3), abs=1e-16)

    def test_logistic_values(self):
        act = Activation.named("logistic")
        assert activation_eval(act, 0.0) == pytest.approx(0.5)
        assert activation_eval(act, 0.0, derivative=True) == pytest.approx(0.25)
        assert activation_eval(act, 1.3) == pytest.approx(1.0 / (1.0 + math.exp(-1.3)), rel=1e-14)


class TestDistributions:
    def test_normalization_enforced(self):
        with pytest.raises(ValueError, match="sum"):
            DataAtomSet([[0.0], [1.0]], [0.0, 1.0], [0.5, 0.6])
        with pytest.raises(ValueError):
            InitialWeightAtomSet([[1.0, 0.0]], [0.9])

    def test_negative_probs_rejected(self):
        with pytest.raises(ValueError):
            DataAtomSet([[0.0], [1.0]], [0.0, 1.0], [1.5, -0.5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            DataAtomSet([[0.0], [1.0]], [0.0], [0.5, 0.5])

    def test_c_pi(self):
        pi = DataAtomSet([[3.0, 4.0], [0.0, 0.0]], [0.5, -7.0], [0.5, 0.5])
        assert pi.c_pi == 7.0
        pi = DataAtomSet([[3.0, 4.0]], [0.5], [1.0])
        assert pi.c_pi == pytest.approx(math.sqrt(26.0))

    def test_c_nu_at_least_one(self):
        nu = InitialWeightAtomSet([[0.1, 0.2]], [1.0])
        assert nu.c_nu == 1.0

    def test_mix_weights(self):
        a = ParamMeasure.uniform([[1.0, 0.0], [0.0, 1.0]])
        b = ParamMeasure.uniform([[2.0, 2.0]])
        m = a.mix(b, 0.25)
        assert m.weights.tolist() == [0.125, 0.125, 0.75]

    def test_sim_config(self):
        cfg = SimConfig(10, 0.35, 2)
        assert cfg.n_prime == 3 and cfg.eps == 0.1
        assert SimConfig(100, 0.29, 1).n_prime == 29  # 100 * 0.29 lands a few ulps below 29
        with pytest.raises(ValueError):
            SimConfig(0, 1.0, 1)


class TestReadout:
    def test_hand_value(self):
        mu = ParamMeasure([[2.0, 1.0], [-1.0, 0.5]], [0.25, 0.75])
        act = Activation.named("tanh")
        expected = 0.25 * 2.0 * math.tanh(0.7) + 0.75 * -1.0 * math.tanh(0.35)
        assert readout_F([0.7], mu, act) == pytest.approx(expected, rel=1e-15)
        assert loss_residual_g(([0.7], 1.0), mu, act) == pytest.approx(1.0 - expected, rel=1e-15)

    def test_dimension_mismatch(self):
        mu = ParamMeasure.uniform([[1.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            readout_F([1.0], mu, Activation.named("tanh"))

    def test_gradient_hand_oracle(self):
        act = Activation.named("tanh")
        theta = np.array([0.5, 1.0, -1.0])
        mu = ParamMeasure.uniform([theta])
        z, y = np.array([0.3, 0.2]), 1.0
        u = 0.3 - 0.2
        g = y - 0.5 * math.tanh(u)
        expected = [g * math.tanh(u), g * 0.5 * (1 - math.tanh(u) ** 2) * 0.3, g * 0.5 * (1 - math.tanh(u) ** 2) * 0.2]
        np.testing.assert_allclose(gradient_A((z, y), theta, mu, act), expected, rtol=1e-14)

    @given(st.integers(0, 10_000))
    def test_gradient_matches_finite_difference(self, seed):
        gen = np.random.default_rng(seed)
        n, d_in = int(gen.integers(1, 6)), int(gen.integers(1, 4))
        points = gen.uniform(-1.5, 1.5, size=(n, d_in + 1))
        z, y = gen.uniform(-1.5, 1.5, size=d_in), float(gen.uniform(-2, 2))
        j = int(gen.integers(n))
        A = gradient_A((z, y), points[j], ParamMeasure.uniform(points), Activation.named("tanh"))
        ref = fd_gradient((z, y), j, points, Activation.named("tanh"))
        assert np.linalg.norm(A - ref) <= 1e-6 * max(1.0, np.linalg.norm(ref))

    def test_batch_matches_single(self, gen):
        act = Activation.named("logistic")
        points = gen.normal(size=(3, 5, 3))
        w = np.full(5, 0.2)
        z = gen.normal(size=(3, 2))
        y = gen.normal(size=3)
        out = gradients_batch(z, y, points, w, act)
        for r in range(3):
            mu = ParamMeasure(points[r], w)
            for j in range(5):
                np.testing.assert_array_equal(out[r, j], gradient_A((z[r], y[r]), points[r, j], mu, act))

    @given(st.lists(coord, min_size=1, max_size=4), coord)
    def test_zero_output_weight_kills_input_gradient(self, w, y):
        theta = np.array([0.0] + w)
        mu = ParamMeasure.uniform([theta])
        A = gradient_A((np.ones(len(w)), y), theta, mu, Activation.named("tanh"))
        assert np.all(A[1:] == 0.0)


class TestSummation:
    def test_seqsum_is_left_to_right(self):
        vals = np.array([1e16, 1.0, -1e16, 1.0])
        assert seqsum(vals) == ((1e16 + 1.0) - 1e16) + 1.0

    def test_rowdot(self, gen):
        w = gen.normal(size=(4, 3))
        z = gen.normal(size=3)
        np.testing.assert_allclose(rowdot(w, z), w @ z, rtol=1e-14)
