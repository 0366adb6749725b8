import math

import numpy as np
import pytest

from app.errors import NotASimplexPoint, ShapeMismatch
from app.services.invariants import (
    family_losses,
    finite_difference_hessian,
    gradient_check,
    label,
    small_instance,
)
from app.services.kernel import KernelSpec, SketchedBlocks, assemble_blocks, gram_matrix
from app.services.losses import (
    LogisticLoss,
    MultinomialSpec,
    Parameterization,
    ProblemFactory,
    ProblemInstance,
    SmoothedQuantileLoss,
    bohning_bound_check,
    dense_curvature,
    multinomial_probabilities,
    sq_loss_derivs,
    sq_loss_value,
)
from app.services.qmme import check_majorization

LOSS_IDS = [label(loss) for loss in family_losses()]


def _tiny_blocks(n=4, m=3, seed=0, delta=1e-4):
    A = np.random.default_rng(seed).standard_normal((n, 2))
    return assemble_blocks(gram_matrix(A, KernelSpec(sigma=1.0)), np.arange(m), delta)


class TestSmoothedQuantile:
    def test_value_at_zero(self):
        assert sq_loss_value(0.0, 0.3, 0.25) == pytest.approx(0.25 / math.sqrt(2 * math.pi), rel=1e-14)

    def test_median_loss_is_symmetric(self):
        u = np.linspace(-3, 3, 41)
        np.testing.assert_allclose(sq_loss_value(u, 0.5, 0.4), sq_loss_value(-u, 0.5, 0.4), rtol=1e-13)

    def test_tail_approaches_check_loss(self):
        h = 0.25
        u = 10 * h
        assert sq_loss_value(u, 0.5, h) == pytest.approx(0.5 * u, rel=1e-8)

    def test_derivatives_at_zero(self):
        first, second = sq_loss_derivs(0.0, 0.7, 0.25)
        assert first == pytest.approx(0.2)
        assert second == pytest.approx(1.0 / (math.sqrt(2 * math.pi) * 0.25))

    def test_first_derivative_limit(self):
        first, _ = sq_loss_derivs(1e3, 0.3, 0.25)
        assert first == pytest.approx(0.3)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
    def test_first_derivative_matches_finite_difference(self, tau):
        h, eps = 0.25, 1e-5
        u = np.random.default_rng(1).uniform(-2, 2, 50)
        fd = (sq_loss_value(u + eps, tau, h) - sq_loss_value(u - eps, tau, h)) / (2 * eps)
        first, _ = sq_loss_derivs(u, tau, h)
        np.testing.assert_allclose(first, fd, atol=1e-6)

    def test_second_derivative_bounded(self):
        _, second = sq_loss_derivs(np.linspace(-5, 5, 101), 0.5, 0.25)
        assert np.all(second <= SmoothedQuantileLoss(h=0.25).curvature_scale + 1e-15)

    def test_curvature_constant(self):
        assert SmoothedQuantileLoss(h=0.25).curvature_scale == pytest.approx(1.59577, abs=1e-5)


class TestMultinomialSpec:
    def test_tight_and_loose_bounds(self):
        loose = MultinomialSpec(q=3, loose_bound=True).E()
        np.testing.assert_allclose(loose, [[2 / 3, -1 / 3], [-1 / 3, 2 / 3]])
        np.testing.assert_allclose(MultinomialSpec(q=3).E(), 0.5 * loose)

    def test_full_parameterization_bound(self):
        spec = MultinomialSpec(q=3, parameterization=Parameterization.FULL)
        assert spec.qprime == 3
        np.testing.assert_allclose(spec.E(), 0.5 * (np.eye(3) - np.ones((3, 3)) / 4))

    def test_einv_scale(self):
        assert MultinomialSpec(q=4).einv_scale == 2.0
        assert MultinomialSpec(q=4, loose_bound=True).einv_scale == 1.0

    def test_full_probabilities_at_zero(self):
        P = multinomial_probabilities(np.zeros((4, 3)), Parameterization.FULL)
        np.testing.assert_allclose(P, np.full((4, 3), 1 / 3))

    def test_standard_probabilities_extreme_logits(self):
        P = multinomial_probabilities(np.array([[1000.0, -1000.0]]), Parameterization.STANDARD)
        assert np.all(np.isfinite(P))
        np.testing.assert_allclose(P, [[1.0, 0.0, 0.0]], atol=1e-300)


class TestObjective:
    def test_logistic_at_zero(self):
        inst = small_instance(LogisticLoss(), n=40, m=5)
        f, g = inst.objective_grad(np.zeros(5))
        assert f == pytest.approx(40 * math.log(2.0), rel=1e-14)
        np.testing.assert_allclose(g, -inst.blocks.KGt.T @ (inst.responses - 0.5), atol=1e-12)

    @pytest.mark.parametrize("loss", family_losses(), ids=LOSS_IDS)
    def test_gradient_matches_finite_differences(self, loss):
        inst = small_instance(loss, n=40, m=5, seed=2)
        rng = np.random.default_rng(3)
        for _ in range(3):
            assert gradient_check(inst, 0.5 * rng.standard_normal(inst.x_shape)) <= 1e-5

    @pytest.mark.parametrize("loss", family_losses(), ids=LOSS_IDS)
    def test_data_fit_plus_ridge(self, loss):
        inst = small_instance(loss, n=40, m=5)
        x = np.random.default_rng(4).standard_normal(inst.x_shape)
        assert inst.data_fit(x) + inst.ridge(x) == pytest.approx(inst.objective(x), rel=1e-12)

    def test_full_parameterization_row_shift(self):
        loss = MultinomialSpec(q=4, parameterization=Parameterization.FULL)
        inst = small_instance(loss, n=50, m=6, lam=0.0)
        rng = np.random.default_rng(5)
        X = rng.standard_normal(inst.x_shape)
        shifted = X + rng.standard_normal((6, 1))
        assert inst.objective(shifted) == pytest.approx(inst.objective(X), rel=1e-10)

    def test_shape_checks(self):
        inst = small_instance(MultinomialSpec(q=3), n=40, m=5)
        with pytest.raises(ShapeMismatch):
            inst.objective(np.zeros(5))
        with pytest.raises(ShapeMismatch):
            ProblemInstance(blocks=inst.blocks, loss=LogisticLoss(), responses=np.zeros(3), lam=1.0)
        with pytest.raises(ValueError):
            ProblemInstance(blocks=inst.blocks, loss=MultinomialSpec(q=3),
                            responses=np.full(40, 4), lam=1.0)
        with pytest.raises(ValueError):
            ProblemInstance(blocks=inst.blocks, loss=LogisticLoss(), responses=np.zeros(40), lam=-1.0)


class TestExactHessian:
    def test_quantile_at_zero_residuals(self):
        blocks = _tiny_blocks(n=6, m=3, delta=1e-9)
        x = np.array([0.3, -0.2, 0.5])
        loss = SmoothedQuantileLoss(h=0.25)
        inst = ProblemInstance(blocks=blocks, loss=loss, responses=blocks.KGt @ x, lam=0.7)
        want = loss.curvature_scale * blocks.GK2Gt + 0.7 * blocks.GKGt
        np.testing.assert_allclose(inst.exact_hessian(x), want, rtol=1e-12)

    def test_logistic_at_zero(self):
        blocks = _tiny_blocks(n=6, m=3, delta=1e-9)
        inst = ProblemInstance(blocks=blocks, loss=LogisticLoss(), responses=[0, 1, 1, 0, 1, 0], lam=0.2)
        np.testing.assert_allclose(inst.exact_hessian(np.zeros(3)),
                                   0.25 * blocks.GK2Gt + 0.2 * blocks.GKGt, rtol=1e-12)

    @pytest.mark.parametrize("parameterization", list(Parameterization))
    def test_small_multinomial_matches_finite_differences(self, parameterization):
        inst = ProblemInstance(blocks=_tiny_blocks(), loss=MultinomialSpec(q=3, parameterization=parameterization),
                               responses=[1, 2, 3, 1], lam=0.1)
        X = np.random.default_rng(6).standard_normal(inst.x_shape)
        np.testing.assert_allclose(inst.exact_hessian(X), finite_difference_hessian(inst, X), atol=1e-4)

    @pytest.mark.parametrize("loss", family_losses(), ids=LOSS_IDS)
    def test_curvature_dominates_hessian(self, loss):
        qp = loss.qprime if isinstance(loss, MultinomialSpec) else 1
        inst = small_instance(loss, n=80, m=max(2, 48 // qp // 2), seed=7)
        H = dense_curvature(inst)
        top = np.linalg.eigvalsh(H)[-1]
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.standard_normal(inst.x_shape)
            gap = np.linalg.eigvalsh(H - inst.exact_hessian(x))[0]
            assert gap >= -1e-8 * top


class TestCurvatureBound:
    def test_logistic_identity_blocks(self):
        I3 = np.eye(3)
        blocks = SketchedBlocks(KGt=I3, GKGt=I3, GK2Gt=I3, delta=0.0)
        inst = ProblemInstance(blocks=blocks, loss=LogisticLoss(), responses=[0, 1, 0], lam=1.0)
        np.testing.assert_allclose(inst.curvature.H, 1.25 * I3)

    def test_quantile_damping(self):
        blocks = _tiny_blocks(n=6, m=3, delta=1e-3)
        inst = ProblemInstance(blocks=blocks, loss=SmoothedQuantileLoss(), responses=np.zeros(6), lam=0.5)
        want = SmoothedQuantileLoss().curvature_scale * blocks.GK2Gt + 0.5 * blocks.GKGt + 1e-3 * np.eye(3)
        np.testing.assert_allclose(inst.curvature.H, want, rtol=1e-12)

    @pytest.mark.parametrize("loss", family_losses(), ids=LOSS_IDS)
    def test_majorization(self, loss):
        assert check_majorization(small_instance(loss), samples=100, radius=2.0).valid

    @pytest.mark.parametrize("loss", [l for l in family_losses() if isinstance(l, MultinomialSpec)],
                             ids=[label(l) for l in family_losses() if isinstance(l, MultinomialSpec)])
    def test_sylvester_step_matches_dense_solve(self, loss):
        inst = small_instance(loss, n=60, m=48 // loss.qprime, seed=9)
        H = dense_curvature(inst)
        rng = np.random.default_rng(10)
        for _ in range(5):
            G = rng.standard_normal(inst.x_shape)
            dense = np.linalg.solve(H, G.reshape(-1, order="F")).reshape(inst.x_shape, order="F")
            step = inst.majorant_solve(G)
            assert np.linalg.norm(step - dense) / np.linalg.norm(dense) <= 1e-8
            np.testing.assert_allclose(H @ step.reshape(-1, order="F"),
                                       inst.h_matvec(step).reshape(-1, order="F"), rtol=1e-8, atol=1e-6)

    @pytest.mark.parametrize("parameterization", list(Parameterization))
    def test_zero_ridge_uses_the_kronecker_bound(self, parameterization):
        loss = MultinomialSpec(q=3, parameterization=parameterization)
        inst = small_instance(loss, n=80, m=10, lam=0.0, sigma=1.0)
        H = dense_curvature(inst)
        np.testing.assert_allclose(H, np.kron(loss.E(), inst.blocks.GK2Gt))
        G = np.random.default_rng(11).standard_normal(inst.x_shape)
        step = inst.majorant_solve(G)
        resid = H @ step.reshape(-1, order="F") - G.reshape(-1, order="F")
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(G)
        assert check_majorization(inst, samples=50, radius=2.0).valid

    def test_plan_fixes_the_damping(self):
        inst = small_instance(MultinomialSpec(q=3), n=40, m=6)
        factory = ProblemFactory(blocks=inst.blocks, loss=inst.loss, responses=inst.responses)
        a = factory(0.5)
        assert a.delta == factory.plan.delta
        with pytest.raises(ValueError, match="disagrees"):
            ProblemInstance(blocks=inst.blocks, loss=inst.loss, responses=inst.responses,
                            lam=0.5, delta=10 * factory.plan.delta, plan=factory.plan)
        V = np.random.default_rng(12).standard_normal(a.x_shape)
        dense = dense_curvature(a) @ V.reshape(-1, order="F")
        op = a.h_matvec(V).reshape(-1, order="F")
        assert np.linalg.norm(dense - op) <= 1e-12 * np.linalg.norm(dense)

    def test_factory_shares_one_plan(self):
        inst = small_instance(MultinomialSpec(q=4), n=40, m=6)
        factory = ProblemFactory(blocks=inst.blocks, loss=inst.loss, responses=inst.responses)
        a, b = factory(1.0), factory(0.01)
        assert a.plan is b.plan is factory.plan
        assert a.curvature.plan is b.curvature.plan
        assert ProblemFactory(blocks=inst.blocks, loss=LogisticLoss(),
                              responses=np.zeros(40)).plan is None


class TestBohning:
    @pytest.mark.parametrize("q", [2, 3, 5, 10])
    def test_uniform_and_vertex(self, q):
        assert bohning_bound_check(np.full(q, 1.0 / q)) >= -1e-12
        assert bohning_bound_check(np.eye(q)[0]) >= -1e-12

    def test_two_classes_is_tight(self):
        assert bohning_bound_check([0.5, 0.5]) == pytest.approx(0.0, abs=1e-15)

    def test_random_simplex_points(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            q = int(rng.integers(2, 9))
            assert bohning_bound_check(rng.dirichlet(np.ones(q))) >= -1e-12

    def test_rejects_non_simplex(self):
        with pytest.raises(NotASimplexPoint):
            bohning_bound_check([0.5, 0.6])
        with pytest.raises(NotASimplexPoint):
            bohning_bound_check([1.2, -0.2])
        with pytest.raises(NotASimplexPoint):
            bohning_bound_check([1.0])
