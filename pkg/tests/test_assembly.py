import numpy as np
import pytest

from entropy_ldg.assembly import (
    assemble_gradient,
    assemble_mass,
    assemble_regularization,
    assemble_stability,
    build_operators,
    dump_operator,
    resolve_regularization,
)
from entropy_ldg.dgspace import DgSpace, dg_gradient, l2_project
from entropy_ldg.errors import InvalidArgument
from entropy_ldg.mesh import build_interval_mesh, build_structured_tri_mesh, orient_facets
from entropy_ldg.models import porous_medium, volume_filling_mixture


@pytest.fixture
def two():
    mesh = build_interval_mesh(0.0, 1.0, 2)
    return mesh, DgSpace(mesh, 0), orient_facets(mesh)


# two-element p=0 oracles, assembled by hand


def test_mass_two_elements(two):
    _, sp, _ = two
    np.testing.assert_allclose(assemble_mass(sp).toarray(), np.diag([0.5, 0.5]), atol=1e-12)


def test_gradient_two_elements(two):
    _, sp, o = two
    np.testing.assert_allclose(assemble_gradient(sp, o).toarray(), [[1.0, -1.0], [0.0, 0.0]], atol=1e-12)


def test_stability_two_elements(two):
    _, sp, _ = two
    S, eta = assemble_stability(sp, porous_medium(2.0).A_sup)
    np.testing.assert_allclose(eta, [4.0])
    np.testing.assert_allclose(S.toarray(), 4.0 * np.array([[1.0, -1.0], [-1.0, 1.0]]), atol=1e-12)


def test_regularization_two_elements(two):
    _, sp, o = two
    np.testing.assert_allclose(assemble_regularization(sp, 1, o).toarray(), [[4.5, -4.0], [-4.0, 4.5]], atol=1e-12)


def test_h2_rejected_in_1d(two):
    _, sp, o = two
    with pytest.raises(InvalidArgument):
        assemble_regularization(sp, 2, o)
    with pytest.raises(InvalidArgument):
        resolve_regularization(sp, 3)


def test_auto_regularization_kind():
    sp2 = DgSpace(build_structured_tri_mesh(2, 2), 1)
    assert resolve_regularization(sp2, "auto", closure_continuous=True) == 1
    assert resolve_regularization(sp2, "auto", closure_continuous=False) == 2
    assert resolve_regularization(DgSpace(build_interval_mesh(0, 1, 2), 1), "auto", False) == 1


# structural properties


SPACES = [
    (build_interval_mesh(0.0, 1.0, 5), 2, "directional", 1.0),
    (build_structured_tri_mesh(3, 2), 2, "directional", 1.0),
    (build_structured_tri_mesh(2, 3), 1, "standard", 0.3),
]


@pytest.mark.parametrize("mesh,p,rule,alpha", SPACES)
def test_symmetry_and_definiteness(mesh, p, rule, alpha):
    sp = DgSpace(mesh, p)
    o = orient_facets(mesh, rule, alpha)
    M = assemble_mass(sp).toarray()
    S = assemble_stability(sp, 1.0)[0].toarray()
    kinds = [1] + ([2] if mesh.dim == 2 else [])
    for X in [M, S] + [assemble_regularization(sp, k, o).toarray() for k in kinds]:
        assert np.abs(X - X.T).max() <= 1e-12 * np.abs(X).max()
    assert np.linalg.eigvalsh(M).min() > 0
    assert np.linalg.eigvalsh(S).min() > -1e-10
    for k in kinds:
        C = assemble_regularization(sp, k, o).toarray()
        assert np.linalg.eigvalsh(C).min() >= np.linalg.eigvalsh(M).min() * (1 - 1e-10)


@pytest.mark.parametrize("mesh,p,rule,alpha", SPACES)
def test_stability_kernel_and_quadrature(mesh, p, rule, alpha, rng):
    sp = DgSpace(mesh, p)
    S, eta = assemble_stability(sp, 2.0)
    cont = l2_project(lambda x: 1.0 + x.sum(axis=1), sp)
    np.testing.assert_allclose(S @ cont, 0.0, atol=1e-11)
    w = rng.standard_normal(sp.n_dofs)
    wb = sp.blocks(w)[0]
    K = mesh.interior_elements
    j = np.einsum("fqi,fi->fq", sp._int_phi[:, 0], wb[K[:, 0]]) - np.einsum("fqi,fi->fq", sp._int_phi[:, 1], wb[K[:, 1]])
    direct = np.sum(eta[:, None] * sp._int_weights * j**2)
    assert w @ S @ w == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("mesh,p,rule,alpha", SPACES)
def test_mass_quadratic_form(mesh, p, rule, alpha, rng):
    sp = DgSpace(mesh, p, extra_quadrature=3)
    w = rng.standard_normal(sp.n_dofs)
    vals = sp.at_quadrature(w)[..., 0]
    assert w @ assemble_mass(sp) @ w == pytest.approx(np.sum(sp.weights * vals**2), rel=1e-12)


def _traces(sp, o, w, psi):
    tr = sp.traces(o)
    wb = sp.blocks(w)[0]
    w1 = np.einsum("fqi,fi->fq", tr.phi[:, 0], wb[tr.first])
    w2 = np.einsum("fqi,fi->fq", tr.phi[:, 1], wb[tr.second])
    p1 = np.einsum("fqj,fcj->fqc", tr.phi[:, 0], psi[tr.first])
    p2 = np.einsum("fqj,fcj->fqc", tr.phi[:, 1], psi[tr.second])
    return tr, w1, w2, p1, p2


def average_jump_defect(sp, o, rng, samples=100):
    """Worst |⟨λ⟩_α[ψ]_N + ⟨ψ⟩_{1−α}·[λ]_N − [λψ]_N| at facet quadrature points."""
    worst = 0.0
    for _ in range(samples):
        lam = rng.standard_normal(sp.n_dofs)
        psi = rng.standard_normal((sp.nel, sp.d, sp.nloc))
        tr, l1, l2, p1, p2 = _traces(sp, o, lam, psi)
        a = tr.alpha[:, None, None]
        n = tr.normals[:, None, :]
        avg_l = (1 - a[..., 0]) * l1 + a[..., 0] * l2  # ⟨λ⟩_α
        avg_p = a * p1 + (1 - a) * p2  # ⟨ψ⟩_{1−α}
        lhs = avg_l * np.sum((p1 - p2) * n, axis=2) + np.sum(avg_p * n, axis=2) * (l1 - l2)
        rhs = np.sum((l1[..., None] * p1 - l2[..., None] * p2) * n, axis=2)
        worst = max(worst, np.abs(lhs - rhs).max())
    return worst


def integration_by_parts_defect(sp, o, rng, samples=100):
    """Worst |ΨᵀBW − (−Σ_K ∫ ∇w·ψ + ∫_F [w]_N ⟨ψ⟩_{1−α})| by direct quadrature."""
    B = assemble_gradient(sp, o)
    worst = 0.0
    for _ in range(samples):
        w = rng.standard_normal(sp.n_dofs)
        psi = rng.standard_normal((sp.nel, sp.d, sp.nloc))
        grad_w = np.einsum("eqic,ei->eqc", sp.dphi, sp.blocks(w)[0])
        psi_q = np.einsum("ecj,qj->eqc", psi, sp.phi)
        vol = -np.sum(sp.weights[..., None] * grad_w * psi_q)
        tr, w1, w2, p1, p2 = _traces(sp, o, w, psi)
        a = tr.alpha[:, None, None]
        face = np.sum(tr.weights * (w1 - w2) * np.sum((a * p1 + (1 - a) * p2) * tr.normals[:, None, :], axis=2))
        worst = max(worst, abs(psi.ravel() @ (B @ w) - (vol + face)))
    return worst


@pytest.mark.parametrize("mesh,p,rule,alpha", SPACES)
def test_average_jump_identity(mesh, p, rule, alpha, rng):
    assert average_jump_defect(DgSpace(mesh, p), orient_facets(mesh, rule, alpha), rng) <= 1e-12


@pytest.mark.parametrize("mesh,p,rule,alpha", SPACES)
def test_gradient_integration_by_parts(mesh, p, rule, alpha, rng):
    assert integration_by_parts_defect(DgSpace(mesh, p), orient_facets(mesh, rule, alpha), rng) <= 1e-10


def test_gradient_alpha_affects_only_interior(rng):
    mesh = build_structured_tri_mesh(2, 2)
    sp = DgSpace(mesh, 1)
    B1 = assemble_gradient(sp, orient_facets(mesh, "standard", 1.0))
    Bh = assemble_gradient(sp, orient_facets(mesh, "standard", 0.5))
    D = (B1 - Bh).tocoo()
    bnd_only = set(mesh.boundary_elements) - set(mesh.interior_elements.ravel())
    rows_el = D.row[np.abs(D.data) > 1e-14] // (sp.d * sp.nloc)
    assert not (set(rows_el) & bnd_only)
    assert np.abs(D.data).max() > 0


def test_gradient_constant_vs_continuous_zero_trace():
    mesh = build_structured_tri_mesh(4, 4)
    sp = DgSpace(mesh, 2)
    B = assemble_gradient(sp, orient_facets(mesh))
    bubble = lambda x: np.stack([x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1])] * 2)  # noqa: E731
    psi = l2_project(bubble, DgSpace(mesh, 2, n_species=2))
    psi = np.stack([psi.reshape(2, sp.nel, sp.nloc)[c] for c in range(2)], axis=1)  # (nel, d, nloc)
    assert abs(psi.ravel() @ (B @ sp.constant(3.0))) < 1e-12


def test_regularization_conforming_h1(rng):
    mesh = build_structured_tri_mesh(3, 3)
    sp = DgSpace(mesh, 2, extra_quadrature=2)
    C = assemble_regularization(sp, 1, orient_facets(mesh))
    w = l2_project(lambda x: 1 + 2 * x[:, 0] - x[:, 1] + x[:, 0] * x[:, 1], sp)
    # ‖w‖² + ‖∇w‖² computed by quadrature
    x, y = sp.points[..., 0], sp.points[..., 1]
    val = 1 + 2 * x - y + x * y
    grad2 = (2 + y) ** 2 + (-1 + x) ** 2
    assert w @ C @ w == pytest.approx(np.sum(sp.weights * (val**2 + grad2)), rel=1e-10)
    c = sp.constant(1.5)
    assert c @ C @ c == pytest.approx(1.5**2 * mesh.domain_measure, rel=1e-12)


def test_regularization_conforming_h2():
    mesh = build_structured_tri_mesh(3, 2)
    sp = DgSpace(mesh, 2, extra_quadrature=2)
    C = assemble_regularization(sp, 2, orient_facets(mesh))
    w = l2_project(lambda x: x[:, 0] ** 2 + x[:, 0] * x[:, 1] - 0.5 * x[:, 1] ** 2, sp)
    x, y = sp.points[..., 0], sp.points[..., 1]
    val = x**2 + x * y - 0.5 * y**2
    grad2 = (2 * x + y) ** 2 + (x - y) ** 2
    hess2 = 4.0 + 1.0 + 1.0 + 1.0
    assert w @ C @ w == pytest.approx(np.sum(sp.weights * (val**2 + grad2 + hess2)), rel=1e-10)


def test_regularization_coercive_in_dg_norm(rng):
    mesh = build_interval_mesh(0, 1, 6)
    sp = DgSpace(mesh, 2)
    o = orient_facets(mesh)
    C = assemble_regularization(sp, 1, o)
    M = assemble_mass(sp)
    hF = mesh.facet_size
    ratios = []
    for _ in range(100):
        w = rng.standard_normal(sp.n_dofs)
        gb = dg_gradient(sp, w, o).broken[0]  # (nel, d, nloc)
        broken = np.sum(np.einsum("eij,ecj->eci", sp.mass_blocks, gb) * gb)
        wb = sp.blocks(w)[0]
        K = mesh.interior_elements
        j = np.einsum("fqi,fi->fq", sp._int_phi[:, 0], wb[K[:, 0]]) - np.einsum("fqi,fi->fq", sp._int_phi[:, 1], wb[K[:, 1]])
        dg = w @ M @ w + broken + np.sum(sp._int_weights * j**2 / hF[:, None])
        ratios.append((w @ C @ w) / dg)
    assert min(ratios) > 0.05


def test_kronecker_consistency(rng):
    mesh = build_structured_tri_mesh(2, 2)
    sp = DgSpace(mesh, 1, n_species=3)
    ops = build_operators(sp, volume_filling_mixture([1, 1, 1]), orient_facets(mesh))
    import scipy.sparse as sparse

    W = rng.standard_normal(sp.n_dofs)
    big = sparse.kron(sparse.identity(3), ops.S) @ W
    per = np.concatenate([ops.S @ b for b in W.reshape(3, -1)])
    np.testing.assert_allclose(big, per, atol=1e-13)


def test_block_inverse_exact(rng):
    mesh = build_structured_tri_mesh(2, 2)
    sp = DgSpace(mesh, 3)
    ops = build_operators(sp, volume_filling_mixture([1.0]), orient_facets(mesh))
    X = rng.standard_normal((sp.n_scalar, 2))
    np.testing.assert_allclose(ops.M @ ops.M_inv_apply(X), X, atol=1e-12)


def test_dump_operator(tmp_path, two):
    _, sp, o = two
    path = tmp_path / "B.txt"
    dump_operator(assemble_gradient(sp, o), path)
    rows = [line.split() for line in path.read_text().splitlines()]
    assert rows[0][:2] == ["0", "0"] and float(rows[0][2]) == 1.0
