import math
from dataclasses import dataclass

import numpy as np
import pytest
import scipy.sparse as sparse

from entropy_ldg import diagnostics as dg
from entropy_ldg.assembly import build_operators
from entropy_ldg.dgspace import DgSpace
from entropy_ldg.errors import InvalidArgument, NotConvergedError, TimeStepUnderflow
from entropy_ldg.mesh import build_interval_mesh, build_structured_tri_mesh, orient_facets
from entropy_ldg.models import TURING_A, TURING_B, porous_medium, skt
from entropy_ldg.problems import constant, porous_exact, porous_waiting
from entropy_ldg.stepper import (
    AdaptiveConfig,
    Factorization,
    NewtonConfig,
    advance,
    initial_state,
    make_norm,
    newton_solve,
    run_adaptive,
    run_fixed,
)
from entropy_ldg.system import Scheme


def make(mesh, p, model, forcing=None):
    sp = DgSpace(mesh, p, model.N)
    return Scheme(sp, model, build_operators(sp, model, orient_facets(mesh)), forcing)


@dataclass
class FakeEval:
    residual: np.ndarray
    blocks: object = None
    coercivity_margin: float = 0.0
    production: float = 1.0


def affine(A, b):
    return lambda W: FakeEval(A @ W - b), lambda W, blocks: sparse.csr_matrix(A)


# -- Newton ----------------------------------------------------------------------


def test_newton_zero_iterations_when_converged():
    A = np.array([[2.0, 1.0], [0.0, 3.0]])
    x = np.array([1.0, -1.0])
    ev, jac = affine(A, A @ x)
    res = newton_solve(ev, jac, x, NewtonConfig(tol=1e-12))
    assert res.converged and res.iterations == 0


def test_newton_affine_one_iteration(rng):
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    b = rng.standard_normal(6)
    ev, jac = affine(A, b)
    res = newton_solve(ev, jac, np.zeros(6), NewtonConfig(tol=1e-10))
    assert res.converged and res.iterations == 1
    np.testing.assert_allclose(A @ res.W, b, atol=1e-12)


def test_newton_cap_reports_failure():
    # r(W) = W³ − 8 with the Jacobian frozen at 1 converges slowly
    ev = lambda W: FakeEval(W**3 - 8.0)  # noqa: E731
    jac = lambda W, blocks: sparse.csr_matrix(np.array([[3.0 * float(W[0]) ** 2 + 50.0]]))  # noqa: E731
    res = newton_solve(ev, jac, np.array([1.0]), NewtonConfig(tol=1e-14, s_max=2))
    assert not res.converged and res.iterations == 2 and res.reason


def test_newton_rejects_nonfinite_start():
    ev, jac = affine(np.eye(2), np.zeros(2))
    with pytest.raises(InvalidArgument):
        newton_solve(ev, jac, np.array([np.nan, 0.0]), NewtonConfig())


def test_newton_config_validation():
    for kw in ({"tol": 0.0}, {"s_max": 0}, {"norm": "max"}, {"jacobian": "exact"}, {"cond": "x"}):
        with pytest.raises(InvalidArgument):
            NewtonConfig(**kw)
    for kw in ({"shrink": 1.0}, {"growth": 0.9}, {"tau1": 0.0}):
        with pytest.raises(InvalidArgument):
            AdaptiveConfig(**kw)


def test_l2_norm_matches_dense(rng):
    sc = make(build_structured_tri_mesh(2, 2), 2, porous_medium(2.0))
    r = rng.standard_normal(sc.space.n_dofs)
    Minv = np.linalg.inv(sc.ops.M.toarray())
    assert make_norm(sc, "l2")(r) == pytest.approx(math.sqrt(r @ Minv @ r), rel=1e-12)
    assert make_norm(sc, "euclidean") is None


@pytest.mark.parametrize("shape", ["banded", "dense", "sparse"])
def test_factorization_paths_agree(shape, rng, monkeypatch):
    from entropy_ldg import stepper
    from entropy_ldg.system import SchemeParams

    sc = make(build_interval_mesh(0, 1, 20), 2, porous_medium(2.0))
    W = 0.1 * rng.standard_normal(sc.space.n_dofs)
    J = sc.frozen_jacobian(W, SchemeParams(tau=1e-3))
    if shape != "banded":
        monkeypatch.setattr(stepper, "BAND_LIMIT", 0)
    if shape == "sparse":
        monkeypatch.setattr(stepper, "DENSE_LIMIT", 0)
    f = Factorization(J)
    assert f.kind == shape
    b = rng.standard_normal(J.shape[0])
    np.testing.assert_allclose(f.solve(b), np.linalg.solve(J.toarray(), b), rtol=1e-10, atol=1e-12)
    exact = np.linalg.cond(J.toarray(), 1)
    assert f.condition("estimate") == pytest.approx(exact, rel=0.5)


# -- time stepping ------------------------------------------------------------------


def test_steady_state_preserved():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 6), 2, model)
    prob = constant(model, 0.3)
    rep = run_fixed(sc, prob.rho0, 0.01, 0.05, NewtonConfig(tol=1e-12))
    np.testing.assert_allclose(rep.final_W, sc.space.constant(model.s_prime(np.array([0.3]))), atol=1e-12)
    for row in rep.rows[1:]:
        assert abs(row.entropy_slack) <= 1e-12
        assert row.newton_iters == 0


def test_zero_final_time_only_initial_row():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 4), 1, model)
    rep = run_fixed(sc, constant(model, 0.5).rho0, 0.1, 0.0, NewtonConfig())
    assert len(rep.rows) == 1 and rep.rows[0].step == 0


def test_fixed_requires_integer_steps():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 4), 1, model)
    with pytest.raises(InvalidArgument):
        run_fixed(sc, constant(model, 0.5).rho0, 0.3, 1.0, NewtonConfig())


def test_first_step_never_evaluates_sprime_of_datum():
    """ρ₀ touches the vacuum state, where s' is infinite; the step must still succeed."""
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(-math.pi / 2, 3 * math.pi / 2, 16), 2, model)
    prob = porous_waiting(model)
    state, row0 = initial_state(sc, prob.rho0)
    np.testing.assert_allclose(state.prev, sc.moments(prob.rho0))
    assert np.all(np.isfinite(state.W))
    new, row, res = advance(state, 1e-3, sc, NewtonConfig(tol=1e-8))
    assert res.converged and np.all(np.isfinite(new.W)) and not new.first
    assert row.boundary_margin > 0


@pytest.mark.parametrize("eps", [0.0, 1e-4, 1e-2])
def test_first_step_iteration_count(eps):
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 16), 1, model, porous_exact(model).forcing)
    prob = porous_exact(model)
    state, _ = initial_state(sc, prob.rho0)
    _, _, res = advance(state, 1e-3, sc, NewtonConfig(tol=1e-10), epsilon=eps)
    assert res.converged and res.iterations <= 10


@pytest.mark.parametrize("M", [16, 32])
def test_entropy_monotone_without_reactions(M):
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(-math.pi / 2, 3 * math.pi / 2, M), 1, model)
    rep = run_fixed(sc, porous_waiting(model).rho0, 1e-2, 0.2, NewtonConfig(tol=1e-10))
    E = [r.entropy for r in rep.rows]
    assert all(b <= a + 1e-9 for a, b in zip(E, E[1:]))
    assert rep.stats.audit_ok


def test_mass_conserved_without_regularization():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(-math.pi / 2, 3 * math.pi / 2, 16), 2, model)
    tol = 1e-10
    rep = run_fixed(sc, porous_waiting(model).rho0, 1e-2, 0.1, NewtonConfig(tol=tol))
    # the λ ≡ 1 test function telescopes back to ∫ρ₀
    assert dg.mass_drift(rep.rows) <= 10 * (len(rep.rows) - 1) * tol


def test_adaptive_step_sequence():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 4), 1, model)
    acfg = AdaptiveConfig(tau1=1e-3)
    T = 0.02
    rep = run_adaptive(sc, constant(model, 0.4).rho0, acfg, T, NewtonConfig())
    taus = [r.tau for r in rep.rows[1:]]
    expected, t = [], 0.0
    tau = 1e-3
    while t < T * (1 - 1e-14):
        step = min(tau, T - t)
        expected.append(step)
        t += step
        tau *= 1.1
    np.testing.assert_allclose(taus, expected, rtol=1e-12)
    assert rep.state.t == T and rep.rows[-1].t == T


def test_adaptive_retry_after_failure():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 4), 1, model)
    calls = []

    def flaky(state, tau, scheme, cfg, eps):
        calls.append(tau)
        if len(calls) == 3:
            raise NotConvergedError("injected", 1.0, cfg.s_max)
        return advance(state, tau, scheme, cfg, eps)

    rep = run_adaptive(sc, constant(model, 0.4).rho0, AdaptiveConfig(tau1=1e-3), 0.004, NewtonConfig(), step_fn=flaky)
    assert calls[3] == pytest.approx(0.2 * calls[2])
    assert calls[4] == pytest.approx(1.1 * calls[3])
    assert rep.rejected_steps == 1 and rep.state.t == 0.004


def test_adaptive_underflow():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 2), 1, model)

    def always_fail(state, tau, scheme, cfg, eps):
        raise NotConvergedError("injected")

    with pytest.raises(TimeStepUnderflow):
        run_adaptive(sc, constant(model, 0.4).rho0, AdaptiveConfig(tau1=1e-3), 1.0, NewtonConfig(), step_fn=always_fail)


def test_adaptive_without_retry_propagates():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 2), 1, model)

    def fail(state, tau, scheme, cfg, eps):
        raise NotConvergedError("injected")

    with pytest.raises(NotConvergedError):
        run_adaptive(sc, constant(model, 0.4).rho0, AdaptiveConfig(retry=False), 1.0, NewtonConfig(), step_fn=fail)


def test_relative_reaction_bound_limits_tau():
    model = skt(TURING_A, TURING_B, box_cap=[10.0, 10.0])
    sc = make(build_structured_tri_mesh(1, 1), 1, model)
    state, _ = initial_state(sc, constant(model, [2.0, 0.5]).rho0)
    with pytest.raises(InvalidArgument):
        advance(state, 1.01 / model.C_f, sc, NewtonConfig())
    rep = run_adaptive(sc, constant(model, [2.0, 0.5]).rho0, AdaptiveConfig(tau1=0.5 / model.C_f), 5.0 / model.C_f, NewtonConfig())
    assert max(r.tau for r in rep.rows[1:]) < 1.0 / model.C_f


def test_snapshots_and_report_metadata():
    model = porous_medium(2.0)
    sc = make(build_interval_mesh(0, 1, 4), 1, model)
    cfg = NewtonConfig(norm="l2", tol=1e-11)
    rep = run_fixed(sc, constant(model, 0.4).rho0, 0.01, 0.05, cfg, snapshot_times=(0.0, 0.03))
    assert set(rep.snapshots) == {0.0, 0.03}
    assert rep.residual_norm == "l2" and rep.tol == 1e-11
    assert rep.quadrature_degree == sc.space.volume_degree
