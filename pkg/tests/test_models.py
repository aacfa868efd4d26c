import numpy as np
import pytest
import sympy as sym

from entropy_ldg.errors import InvalidArgument
from entropy_ldg.models import (
    TURING_A,
    TURING_B,
    porous_medium,
    sample_interior,
    skt,
    tumor_growth,
    validate_model,
    volume_filling_mixture,
)

UNIT_A = [[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]]


def all_models():
    return [
        porous_medium(2.0),
        porous_medium(1.5),
        skt(UNIT_A, np.zeros((2, 3)), box_cap=[1.0, 1.0]),
        skt(TURING_A, TURING_B, box_cap=[10.0, 10.0]),
        volume_filling_mixture([1.0, 0.5]),
        volume_filling_mixture([2.0, 1.0, 0.3]),
        tumor_growth(1.0, 1.0),
    ]


def test_porous_values():
    m = porous_medium(2.0)
    assert m.u(np.array([[0.0]]))[0, 0] == 0.5
    assert m.s(np.array([[0.5]]))[0] == pytest.approx(0.0, abs=1e-15)
    assert m.s_second(np.array([[0.5]]))[0, 0, 0] == pytest.approx(4.0)
    assert m.A(np.array([[0.5]]))[0, 0, 0] == pytest.approx(1.0)
    assert m.A_sup == 2.0 and m.gamma == 2.0 and m.C_f == 0.0


def test_porous_entropy_value_oracle():
    r = sym.Rational(1, 4)
    exact = float(r * sym.log(r) + (1 - r) * sym.log(1 - r) + sym.log(2))
    assert porous_medium(2.0).s(np.array([[0.25]]))[0] == pytest.approx(exact, abs=1e-15)
    assert exact == pytest.approx(0.130812, abs=1e-6)


@pytest.mark.parametrize("m", [1.0, 2.5, 3.0, 0.5])
def test_porous_range(m):
    with pytest.raises(InvalidArgument):
        porous_medium(m)


def test_skt_unit_coefficients():
    m = skt(UNIT_A, np.zeros((2, 3)), box_cap=[1.0, 1.0])
    np.testing.assert_allclose(m.A(np.array([1.0, 1.0])), [[3.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(m.u(np.zeros(2)), [1.0, 1.0])
    assert m.s(np.ones(2)) == pytest.approx(0.0)


def test_skt_turing_gamma():
    m = skt(TURING_A, TURING_B, box_cap=[10.0, 10.0])
    assert m.gamma == pytest.approx(1.875e-6, rel=1e-12)
    assert m.reaction_bound == "relative" and m.C_f > 0


def test_skt_requires_box_cap():
    with pytest.raises(InvalidArgument, match="unbounded"):
        skt(UNIT_A, np.zeros((2, 3)))


def test_skt_rejects_degenerate_entropy():
    a = [[0.0, 1.0, 0.0], [0.0, 1.0, 1.0]]
    with pytest.raises(InvalidArgument):
        skt(a, np.zeros((2, 3)), box_cap=[1, 1])


def test_mixture_values():
    m = volume_filling_mixture([1.0, 2.0])
    np.testing.assert_allclose(m.u(np.zeros(2)), [1 / 3, 1 / 3])
    assert m.gamma == 1.0


def test_mixture_entropy_minimum_at_barycentre(rng):
    for N in (1, 2, 3):
        m = volume_filling_mixture(np.ones(N))
        bary = np.full(N, 1.0 / (N + 1))
        s0 = m.s(bary)
        assert s0 > 0
        np.testing.assert_allclose(m.s_prime(bary), 0.0, atol=1e-14)
        others = sample_interior(m, 500, rng)
        assert np.all(m.s(others) >= s0 - 1e-14)


def test_mixture_rejects_nonpositive():
    with pytest.raises(InvalidArgument):
        volume_filling_mixture([1.0, 0.0])


def test_mixture_product_identity(rng):
    m = volume_filling_mixture([1.0, 0.5, 2.0])
    rho = sample_interior(m, 1000, rng)
    prod = np.swapaxes(m.A(rho), -1, -2) @ m.s_second(rho)
    np.testing.assert_allclose(prod, np.broadcast_to(np.diag(m.p), prod.shape), atol=1e-10)


def test_tumor_product_values():
    m = tumor_growth(1.0, 1.0)
    P = np.swapaxes(m.A(np.array([0.2, 0.3])), -1, -2) @ m.s_second(np.array([0.2, 0.3]))
    np.testing.assert_allclose(P, [[2.0, 0.3], [0.0, 2.4]], atol=1e-12)
    np.testing.assert_allclose(m.mobility(np.array([0.0, 0.0])), [[2.0, 0.0], [0.0, 2.0]])
    assert m.gamma > 0


def test_tumor_product_symbolic(rng):
    # independent oracle: sympy builds Aᵀs'' from the entropy and A
    b, t, r1, r2 = sym.symbols("beta theta r1 r2", positive=True)
    r0 = 1 - r1 - r2
    s = r1 * (sym.log(r1) - 1) + r2 * (sym.log(r2) - 1) + r0 * (sym.log(r0) - 1) + 3
    H = sym.hessian(s, (r1, r2))
    A = sym.Matrix(
        [
            [2 * r1 * (1 - r1) - b * t * r1 * r2**2, -2 * b * r1 * r2 * (1 + t * r1)],
            [-2 * r1 * r2 + b * t * (1 - r2) * r2**2, 2 * b * r2 * (1 - r2) * (1 + t * r1)],
        ]
    )
    P = sym.simplify(A.T * H)
    assert sym.simplify(P - sym.Matrix([[2, b * t * r2], [0, 2 * b * (t * r1 + 1)]])) == sym.zeros(2, 2)
    f = sym.lambdify((b, t, r1, r2), P, "numpy")
    m = tumor_growth(0.7, 2.0)
    rho = sample_interior(m, 1000, rng)
    got = np.swapaxes(m.A(rho), -1, -2) @ m.s_second(rho)
    want = np.array([np.array(f(0.7, 2.0, x, y), dtype=float) for x, y in rho])
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_tumor_theta_range():
    with pytest.raises(InvalidArgument):
        tumor_growth(1.0, 4.0)
    with pytest.raises(InvalidArgument):
        tumor_growth(4.0, 2.5)
    tumor_growth(4.0, 1.99)


def test_tumor_gamma_grid_oracle():
    m = tumor_growth(1.0, 1.0)
    n = 100
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    grid = np.stack([i[keep], j[keep]], axis=1) / n
    P = m.mobility(grid)
    lam = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, 1, 2)))[:, 0].min()
    assert m.gamma == pytest.approx(lam, rel=0.01)


def test_porous_entropy_derivatives_symbolic(rng):
    r = sym.symbols("r", positive=True)
    s = r * sym.log(r) + (1 - r) * sym.log(1 - r) + sym.log(2)
    ds = sym.lambdify(r, sym.diff(s, r), "numpy")
    d2s = sym.lambdify(r, sym.diff(s, r, 2), "numpy")
    m = porous_medium(1.7)
    rho = rng.uniform(0.01, 0.99, (200, 1))
    np.testing.assert_allclose(m.s_prime(rho), ds(rho), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(m.s_second(rho)[..., 0], d2s(rho), rtol=1e-12)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.describe()[:40])
def test_contract_round_trips(model, rng):
    rho = sample_interior(model, 10_000, rng)
    np.testing.assert_allclose(model.u(model.s_prime(rho)), rho, atol=1e-9)
    w = model.s_prime(rho)
    np.testing.assert_allclose(model.s_prime(model.u(w)), w, atol=1e-9)
    chain = model.u_prime(w) @ model.s_second(model.u(w))
    np.testing.assert_allclose(chain, np.broadcast_to(np.eye(model.N), chain.shape), atol=1e-7)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.describe()[:40])
def test_contract_h2a(model, rng):
    rho = sample_interior(model, 5000, rng)
    z = rng.standard_normal((5000, model.N))
    q = np.einsum("pi,pij,pj->p", z, model.s_second(rho) @ model.A(rho), z)
    assert np.all(q >= model.gamma * (z**2).sum(axis=1) * (1 - 1e-10) - 1e-12)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.describe()[:40])
def test_strict_boundedness_of_u(model, rng):
    w = rng.uniform(-30, 30, (5000, model.N))
    assert np.all(model.domain.distance(model.u(w)) > 0)
    big = rng.uniform(-700, 700, (5000, model.N))
    if model.name == "skt":
        big = big * model.pi  # u = exp(w/π) has no upper bound, so stay within exp's range
    with np.errstate(over="ignore"):
        vals = model.u(big)
    assert np.all(np.isfinite(vals))


def test_mobility_override_matches_product(rng):
    for model in all_models():
        rho = sample_interior(model, 200, rng)
        generic = np.swapaxes(model.A(rho), -1, -2) @ model.s_second(rho)
        np.testing.assert_allclose(model.mobility(rho), generic, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: m.describe()[:40])
def test_validate_model_ok(model):
    rep = validate_model(model, samples=10_000, seed=3)
    assert rep.ok, rep.to_text()
    assert rep.h2a_margin >= -1e-8 and rep.h2b_slack >= -1e-8


def test_validate_mixture_margin_zero():
    rep = validate_model(volume_filling_mixture([1.0, 1.0]), samples=2000)
    assert rep.h2a_margin == pytest.approx(0.0, abs=1e-10)


def test_skt_relative_reaction_bound(rng):
    m = skt(TURING_A, TURING_B, box_cap=[10.0, 10.0])
    rho = sample_interior(m, 10_000, rng)
    assert np.all((m.f(rho) * m.s_prime(rho)).sum(axis=1) <= m.C_f * (1 + m.s(rho)))


def test_skt_reaction_jacobian_fd(rng):
    m = skt(TURING_A, TURING_B, box_cap=[10.0, 10.0])
    rho = sample_interior(m, 20, rng)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (m.f(rho + e) - m.f(rho - e)) / (2 * h)
        np.testing.assert_allclose(m.f_prime(rho)[:, :, k], fd, rtol=1e-6, atol=1e-6)


def test_validate_rejects_zero_samples():
    with pytest.raises(InvalidArgument):
        validate_model(porous_medium(2.0), samples=0)
