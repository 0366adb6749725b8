import numpy as np
import pytest

from app.services.datagen import (
    Family,
    SimSpec,
    ar_covariance,
    design_matrix,
    signals,
    simulate,
    spawn_seeds,
    student_t,
)


def test_ar_covariance():
    np.testing.assert_allclose(ar_covariance(3, 0.5), [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])


def test_design_matrix_covariance():
    rng = np.random.default_rng(0)
    A = design_matrix(rng, 40000, 6, 0.5)
    np.testing.assert_allclose(np.cov(A, rowvar=False), ar_covariance(6, 0.5), atol=0.03)


def test_signals_at_origin():
    eta = signals(np.zeros((2, 8)))
    np.testing.assert_allclose(eta, [[-4.0, 5.0], [-4.0, 5.0]])


def test_signals_tail_term():
    a = np.zeros((1, 8))
    a[0, 5:] = [1.0, 2.0, 2.0]
    np.testing.assert_allclose(signals(a), [[-4.0 + 0.9, 5.0 - 0.9]])


def test_student_t_is_centered_and_heavy_tailed():
    z = student_t(np.random.default_rng(1), 200000)
    assert abs(np.median(z)) < 0.02
    assert np.mean(np.abs(z) > 5) > 0.01


class TestSpawnSeeds:
    def test_deterministic_and_distinct(self):
        a = spawn_seeds(42, 5)
        assert a == spawn_seeds(42, 5)
        assert len(set(a)) == 5
        assert a != spawn_seeds(43, 5)

    def test_fit_in_32_bits(self):
        assert all(0 <= s < 2 ** 32 for s in spawn_seeds(0, 20))


class TestSimulate:
    def test_deterministic(self):
        spec = SimSpec(n=50, d=8, family=Family.QUANTILE, rng_seed=7)
        a, b = simulate(spec), simulate(spec)
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.responses, b.responses)
        assert not np.array_equal(a.A, simulate(spec.model_copy(update={"rng_seed": 8})).A)

    def test_quantile(self):
        data = simulate(SimSpec(n=100, d=10, family=Family.QUANTILE))
        assert data.A.shape == (100, 10)
        np.testing.assert_allclose(data.signal, signals(data.A)[:, 0])
        assert np.all(np.isfinite(data.responses))

    def test_logistic(self):
        data = simulate(SimSpec(n=200, d=6, family=Family.LOGISTIC, rng_seed=2))
        assert set(np.unique(data.responses)) <= {0.0, 1.0}

    @pytest.mark.parametrize("q", [3, 5])
    def test_multinomial(self, q):
        data = simulate(SimSpec(n=20000, d=6, family=Family.MULTINOMIAL, q=q, rng_seed=3))
        assert data.responses.min() >= 1 and data.responses.max() <= q
        assert data.probabilities.shape == (20000, q)
        np.testing.assert_allclose(data.probabilities.sum(axis=1), 1.0)
        # classes 3..q-1 share the reference logit
        for j in range(2, q):
            np.testing.assert_allclose(data.probabilities[:, j], data.probabilities[:, -1])
        freq = np.bincount(data.responses, minlength=q + 1)[1:] / 20000
        np.testing.assert_allclose(freq, data.probabilities.mean(axis=0), atol=0.015)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SimSpec(n=10, d=5)
        with pytest.raises(ValueError):
            SimSpec(n=10, family=Family.MULTINOMIAL, q=2)
