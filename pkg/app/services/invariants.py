# app/services/invariants.py
"""
Numerical self-checks run by `qmme check`.

Each check builds small seeded instances and returns a CheckReport; a failed
report does not raise.
"""
from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from app.core.sylvester import build_plan, solve_sylvester, sylvester_operator_dense, sylvester_rhs
from app.services.datagen import Family, SimSpec, simulate
from app.services.kernel import KernelSpec, SketchSpec, assemble_blocks, gram_matrix, make_sketch
from app.services.losses import (
    LogisticLoss,
    Loss,
    MultinomialSpec,
    Parameterization,
    ProblemInstance,
    SmoothedQuantileLoss,
    bohning_bound_check,
    dense_curvature,
)
from app.services.qmme import (
    CheckReport,
    QmmeConfig,
    check_energy_descent,
    check_gradient_lipschitz,
    check_majorization,
    check_nonexpansive,
    qmme_run,
)
from app.settings import DELTA_MULTINOMIAL, DELTA_QUANTILE_LOGISTIC

logger = logging.getLogger(__name__)


def family_losses() -> List[Loss]:
    return [
        SmoothedQuantileLoss(tau=0.5, h=0.25),
        LogisticLoss(),
        MultinomialSpec(q=3, parameterization=Parameterization.STANDARD),
        MultinomialSpec(q=3, parameterization=Parameterization.FULL),
        MultinomialSpec(q=5, parameterization=Parameterization.STANDARD),
        MultinomialSpec(q=5, parameterization=Parameterization.FULL),
    ]


def small_instance(loss: Loss, n: int = 200, m: int = 32, lam: float = 0.1, seed: int = 0,
                   d: int = 6, sigma: float = 2.0, delta: Optional[float] = None) -> ProblemInstance:
    """A simulated instance of the loss family with a uniform sketch."""
    family = Family(loss.family)
    q = loss.q if isinstance(loss, MultinomialSpec) else 3
    data = simulate(SimSpec(n=n, d=d, family=family, q=q, rng_seed=seed))
    if delta is None:
        delta = DELTA_MULTINOMIAL if family == Family.MULTINOMIAL else DELTA_QUANTILE_LOGISTIC
    rows = make_sketch(n, None, SketchSpec(m=m, rng_seed=seed))
    blocks = assemble_blocks(gram_matrix(data.A, KernelSpec(sigma=sigma)), rows, delta)
    return ProblemInstance(blocks=blocks, loss=loss, responses=data.responses, lam=lam)


def label(loss: Loss) -> str:
    if isinstance(loss, MultinomialSpec):
        return f"multinomial-{loss.parameterization.value}-q{loss.q}"
    return loss.family


def random_point(inst: ProblemInstance, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal(inst.x_shape)


def finite_difference_gradient(problem, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = eps
        g[idx] = (problem.objective(x + e) - problem.objective(x - e)) / (2.0 * eps)
    return g


def finite_difference_hessian(problem, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Column-major: column j differentiates the gradient along vec coordinate j."""
    flat = x.reshape(-1, order="F")
    H = np.empty((flat.size, flat.size))
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = eps
        gp = problem.gradient((flat + e).reshape(x.shape, order="F"))
        gm = problem.gradient((flat - e).reshape(x.shape, order="F"))
        H[:, j] = ((gp - gm) / (2.0 * eps)).reshape(-1, order="F")
    return 0.5 * (H + H.T)


def gradient_check(problem, x: np.ndarray, eps: float = 1e-6) -> float:
    """Relative error between the analytic and the central-difference gradient."""
    g = problem.gradient(x)
    fd = finite_difference_gradient(problem, x, eps)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def check_gradients(seed: int = 0) -> List[CheckReport]:
    rng = np.random.default_rng(seed)
    reports = []
    for loss in family_losses():
        inst = small_instance(loss, n=40, m=5, seed=seed)
        worst = max(gradient_check(inst, random_point(inst, rng, 0.5)) for _ in range(3))
        reports.append(CheckReport(f"gradient[{label(loss)}]", 3, worst, 1e-5, worst <= 1e-5))
    return reports


def check_majorant_validity(seed: int = 0) -> List[CheckReport]:
    reports = []
    for loss in family_losses():
        inst = small_instance(loss, seed=seed)
        rep = check_majorization(inst, samples=100, radius=2.0, rng_seed=seed)
        reports.append(CheckReport(f"majorization[{label(loss)}]", rep.samples, rep.worst,
                                   rep.threshold, rep.valid))
    return reports


def check_nonexpansive_maps(seed: int = 0, losses: Optional[List[Loss]] = None) -> List[CheckReport]:
    reports = []
    for loss in losses or family_losses():
        inst = small_instance(loss, seed=seed)
        rep = check_nonexpansive(inst, samples=50, radius=2.0, rng_seed=seed)
        reports.append(CheckReport(f"nonexpansive[{label(loss)}]", rep.samples, rep.worst,
                                   rep.threshold, rep.valid))
    return reports


def check_gradient_lipschitz_maps(seed: int = 0) -> List[CheckReport]:
    reports = []
    for loss in family_losses():
        inst = small_instance(loss, n=120, m=16, seed=seed)
        rep = check_gradient_lipschitz(inst, samples=50, radius=2.0, rng_seed=seed)
        reports.append(CheckReport(f"gradient_lipschitz[{label(loss)}]", rep.samples, rep.worst,
                                   rep.threshold, rep.valid))
    return reports


def check_energy_monotone(seed: int = 0, max_iters: int = 300) -> List[CheckReport]:
    """E_k over hybrid-restart QMME runs, one per family."""
    reports = []
    for loss in family_losses():
        inst = small_instance(loss, n=150, m=16, lam=1e-2, seed=seed)
        res = qmme_run(inst, inst.initial_point(), QmmeConfig(max_iters=max_iters))
        rep = check_energy_descent(res.trajectory)
        reports.append(CheckReport(f"energy_descent[{label(loss)}]", rep.samples, rep.worst,
                                   rep.threshold, rep.valid))
    return reports


def check_sylvester_oracle(instances: int = 50, seed: int = 0) -> CheckReport:
    """Bartels-Stewart solves against the dense Kronecker system, m q' <= 64."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        qp = int(rng.integers(1, 5))
        m = int(rng.integers(2, 64 // qp + 1))
        W = rng.standard_normal((m, m))
        GKG = W @ W.T / m + 0.1 * np.eye(m)
        V = rng.standard_normal((m, m))
        GK2G = V @ V.T / m
        plan = build_plan(GKG, GK2G, 1e-2, qp)
        lam = float(10 ** rng.uniform(-2, 1))
        Ck = rng.standard_normal((m, qp))
        got = solve_sylvester(plan, lam, Ck)
        vec = np.linalg.solve(sylvester_operator_dense(plan, lam),
                              sylvester_rhs(plan, Ck).reshape(-1, order="F"))
        want = vec.reshape((m, qp), order="F")
        worst = max(worst, float(np.linalg.norm(got - want) / np.linalg.norm(want)))
    return CheckReport("sylvester_oracle", instances, worst, 1e-8, worst <= 1e-8)


def check_step_equivalence(seed: int = 0) -> List[CheckReport]:
    """Sylvester majorant step against the dense H^-1 solve."""
    rng = np.random.default_rng(seed)
    reports = []
    for loss in family_losses():
        if not isinstance(loss, MultinomialSpec):
            continue
        inst = small_instance(loss, n=60, m=48 // loss.qprime, seed=seed)
        H = dense_curvature(inst)
        worst = 0.0
        for _ in range(5):
            G = rng.standard_normal(inst.x_shape)
            step = inst.majorant_solve(G)
            dense = np.linalg.solve(H, G.reshape(-1, order="F")).reshape(inst.x_shape, order="F")
            worst = max(worst, float(np.linalg.norm(step - dense) / np.linalg.norm(dense)))
        reports.append(CheckReport(f"step_equivalence[{label(loss)}]", 5, worst, 1e-8, worst <= 1e-8))
    return reports


def check_bohning(points: int = 1000, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(points):
        q = int(rng.integers(2, 11))
        worst = min(worst, bohning_bound_check(rng.dirichlet(np.ones(q))))
    return CheckReport("bohning_bound", points, float(worst), -1e-12, worst >= -1e-12)


def run_invariant_suite(seed: int = 0) -> List[CheckReport]:
    reports: List[CheckReport] = []
    reports += check_majorant_validity(seed)
    reports += check_nonexpansive_maps(seed)
    reports += check_gradient_lipschitz_maps(seed)
    reports += check_energy_monotone(seed)
    reports += check_gradients(seed)
    reports += check_step_equivalence(seed)
    reports.append(check_sylvester_oracle(seed=seed))
    reports.append(check_bohning(seed=seed))
    for r in reports:
        level = logging.INFO if r.valid else logging.ERROR
        logger.log(level, f"{r.name}: worst={r.worst:.3e} threshold={r.threshold:.1e} valid={r.valid}")
    return reports
