"""Broken polynomial spaces, quadrature, projection and lifted DG derivatives.

Coefficient vectors are species-major: index ``s * n_scalar + e * nloc + i``
for species ``s``, element ``e`` and local basis function ``i``.  Vector
fields use ``e * (d * nloc) + c * nloc + j`` per species, matrix fields
``e * (d * d * nloc) + (a * d + b) * nloc + j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import ceil

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

from .errors import InvalidArgument, NumericDomainError
from .mesh import FluxOrientation, Mesh


# ----------------------------------------------------------------------------
# quadrature


def gauss_interval(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact to ``degree``."""
    n = max(1, ceil((degree + 1) / 2))
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def gauss_triangle(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1)."""
    n = max(1, ceil((degree + 1) / 2))
    a, wa = roots_legendre(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, Bq = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = (1.0 + A) * (1.0 - Bq) / 4.0
    y = (1.0 + Bq) / 2.0
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    return pts, (WA * WB).ravel() / 8.0


def reference_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 1:
        x, w = gauss_interval(degree)
        return x[:, None], w
    return gauss_triangle(degree)


# ----------------------------------------------------------------------------
# local basis


def _exponents(dim: int, p: int) -> np.ndarray:
    if dim == 1:
        return np.arange(p + 1)[:, None]
    return np.array([(k - j, j) for k in range(p + 1) for j in range(k + 1)])


def _falling(a: np.ndarray, k: int) -> np.ndarray:
    out = np.ones_like(a, dtype=float)
    for m in range(k):
        out = out * (a - m)
    return out


class LocalBasis:
    """Monomials in centred coordinates, orthonormalised on the reference simplex.

    Normalisation is ``(1/|K̂|) ∫ φ_i φ_j = δ_ij``, so ``φ_0 ≡ 1`` and the
    physical mass block is ``|K|`` times the identity.
    """

    def __init__(self, dim: int, p: int):
        self.dim, self.p = dim, p
        self.exps = _exponents(dim, p)
        self.centre = np.full(dim, 0.5 if dim == 1 else 1.0 / 3.0)
        self.scale = 2.0 if dim == 1 else 3.0
        self.ref_measure = 1.0 if dim == 1 else 0.5
        pts, w = reference_rule(dim, 2 * p + 2)
        coef = np.eye(len(self.exps))
        for _ in range(2):
            V = self._mono(pts, (0,) * dim) @ coef.T
            G = (V * w[:, None]).T @ V / self.ref_measure
            L = np.linalg.cholesky(G)
            coef = np.linalg.solve(L, coef)
        self.coef = coef

    @property
    def size(self) -> int:
        return len(self.exps)

    def _mono(self, xi: np.ndarray, der: tuple) -> np.ndarray:
        s = (np.atleast_2d(xi) - self.centre) * self.scale
        out = np.ones((s.shape[0], len(self.exps)))
        for c in range(self.dim):
            a = self.exps[:, c]
            k = der[c]
            pw = np.where(a >= k, a - k, 0)
            out *= _falling(a, k) * self.scale**k * s[:, c : c + 1] ** pw
        return out

    def values(self, xi: np.ndarray) -> np.ndarray:
        """(npts, nloc)"""
        return self._mono(xi, (0,) * self.dim) @ self.coef.T

    def gradients(self, xi: np.ndarray) -> np.ndarray:
        """Reference gradients, (npts, nloc, dim)."""
        out = []
        for c in range(self.dim):
            der = tuple(1 if k == c else 0 for k in range(self.dim))
            out.append(self._mono(xi, der) @ self.coef.T)
        return np.stack(out, axis=-1)

    def hessians(self, xi: np.ndarray) -> np.ndarray:
        """Reference Hessians, (npts, nloc, dim, dim)."""
        n = np.atleast_2d(xi).shape[0]
        out = np.zeros((n, self.size, self.dim, self.dim))
        for a in range(self.dim):
            for b in range(self.dim):
                der = [0] * self.dim
                der[a] += 1
                der[b] += 1
                out[:, :, a, b] = self._mono(xi, tuple(der)) @ self.coef.T
        return out


# ----------------------------------------------------------------------------
# the space


@dataclass
class FacetTraces:
    """Basis traces on interior facets, sides ordered (K1, K2)."""

    first: np.ndarray
    second: np.ndarray
    normals: np.ndarray  # (nfi, d), out of K1
    alpha: np.ndarray
    weights: np.ndarray  # (nfi, nqf) physical
    points: np.ndarray  # (nfi, nqf, d)
    phi: np.ndarray  # (nfi, 2, nqf, nloc)
    dphi: np.ndarray  # (nfi, 2, nqf, nloc, d)


class DgSpace:
    """Broken space S_p(T_h)^N with quadrature and dof layout."""

    def __init__(self, mesh: Mesh, degree: int, n_species: int = 1, extra_quadrature: int = 0):
        if degree < 0:
            raise InvalidArgument("degree must be nonnegative")
        if n_species < 1:
            raise InvalidArgument("species count must be positive")
        self.mesh = mesh
        self.p = int(degree)
        self.N = int(n_species)
        self.d = mesh.dim
        self.basis = LocalBasis(self.d, self.p)
        self.nloc = self.basis.size
        self.nel = mesh.n_elements
        self.n_scalar = self.nel * self.nloc
        self.n_dofs = self.N * self.n_scalar
        self.volume_degree = 2 * self.p + 2 + int(extra_quadrature)
        self.facet_degree = 2 * self.p + 2 + int(extra_quadrature)

        d = self.d
        P = mesh.element_vertices()  # (nel, d+1, d)
        self.v0 = P[:, 0, :]
        self.jac = np.stack([P[:, k + 1, :] - P[:, 0, :] for k in range(d)], axis=2)  # (nel, d, d)
        self.detj = np.abs(np.linalg.det(self.jac))
        self.invj = np.linalg.inv(self.jac)

        xq, wq = reference_rule(d, self.volume_degree)
        self.ref_points, self.ref_weights = xq, wq
        self.phi = self.basis.values(xq)  # (nq, nloc)
        gref = self.basis.gradients(xq)  # (nq, nloc, d)
        self.dphi = np.einsum("eca,qic->eqia", self.invj, gref)  # (nel, nq, nloc, d)
        self.weights = self.detj[:, None] * wq[None, :]  # (nel, nq)
        self.points = self.v0[:, None, :] + np.einsum("eab,qb->eqa", self.jac, xq)
        self.phiphi = np.einsum("qi,qj->qij", self.phi, self.phi)

        self._build_facets()

    # -- geometry helpers -------------------------------------------------

    def to_reference(self, element: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Map physical points ``x`` (..., d) in ``element`` (...) to reference coordinates."""
        return np.einsum("...ab,...b->...a", self.invj[element], x - self.v0[element])

    def _facet_rule(self, facet_vertices: np.ndarray, measures: np.ndarray):
        mesh = self.mesh
        if self.d == 1:
            pts = mesh.vertices[facet_vertices[:, 0]][:, None, :]  # (nf, 1, 1)
            w = np.ones((len(measures), 1))
            return pts, w
        t, wt = gauss_interval(self.facet_degree)
        a = mesh.vertices[facet_vertices[:, 0]]
        b = mesh.vertices[facet_vertices[:, 1]]
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        return pts, measures[:, None] * wt[None, :]

    def _trace(self, elements: np.ndarray, pts: np.ndarray):
        nf, nqf, d = pts.shape
        el = np.repeat(elements[:, None], nqf, axis=1)
        xi = self.to_reference(el, pts).reshape(-1, d)
        phi = self.basis.values(xi).reshape(nf, nqf, self.nloc)
        g = self.basis.gradients(xi).reshape(nf, nqf, self.nloc, d)
        dphi = np.einsum("fca,fqic->fqia", self.invj[elements], g)
        return phi, dphi

    def _build_facets(self):
        mesh = self.mesh
        pts, w = self._facet_rule(mesh.interior_facets, mesh.interior_measures)
        self._int_points, self._int_weights = pts, w
        if mesh.n_interior:
            p0, g0 = self._trace(mesh.interior_elements[:, 0], pts)
            p1, g1 = self._trace(mesh.interior_elements[:, 1], pts)
            self._int_phi = np.stack([p0, p1], axis=1)
            self._int_dphi = np.stack([g0, g1], axis=1)
        else:
            nqf = pts.shape[1] if pts.ndim == 3 else 1
            self._int_phi = np.zeros((0, 2, nqf, self.nloc))
            self._int_dphi = np.zeros((0, 2, nqf, self.nloc, self.d))
        bp, bw = self._facet_rule(mesh.boundary_facets, mesh.boundary_measures)
        self.bnd_points, self.bnd_weights = bp, bw
        self.bnd_phi, self.bnd_dphi = self._trace(mesh.boundary_elements, bp)

    def traces(self, orientation: FluxOrientation) -> FacetTraces:
        """Interior facet traces with sides ordered as in ``orientation``."""
        swap = orientation.first != self.mesh.interior_elements[:, 0]
        phi = np.where(swap[:, None, None, None], self._int_phi[:, ::-1], self._int_phi)
        dphi = np.where(swap[:, None, None, None, None], self._int_dphi[:, ::-1], self._int_dphi)
        return FacetTraces(
            first=orientation.first,
            second=orientation.second,
            normals=orientation.normals,
            alpha=orientation.alpha,
            weights=self._int_weights,
            points=self._int_points,
            phi=phi,
            dphi=dphi,
        )

    # -- layout -------------------------------------------------------------

    def blocks(self, W: np.ndarray) -> np.ndarray:
        """View a CoeffVec as (N, nel, nloc)."""
        W = np.asarray(W, dtype=float)
        if W.size != self.n_dofs:
            raise InvalidArgument(f"coefficient vector has length {W.size}, expected {self.n_dofs}")
        return W.reshape(self.N, self.nel, self.nloc)

    def at_quadrature(self, W: np.ndarray) -> np.ndarray:
        """Values at volume quadrature points, (nel, nq, N)."""
        vals = self.blocks(W).reshape(-1, self.nloc) @ self.phi.T  # (N·nel, nq)
        return vals.reshape(self.N, self.nel, -1).transpose(1, 2, 0)

    def constant(self, values) -> np.ndarray:
        """CoeffVec of the spatially constant field with the given per-species values."""
        values = np.broadcast_to(np.asarray(values, dtype=float), (self.N,))
        W = np.zeros((self.N, self.nel, self.nloc))
        W[:, :, 0] = values[:, None]  # φ_0 ≡ 1
        return W.ravel()

    @cached_property
    def mass_blocks(self) -> np.ndarray:
        """Scalar element mass blocks (nel, nloc, nloc)."""
        return np.einsum("eq,qij->eij", self.weights, self.phiphi)

    @cached_property
    def mass_inverse_blocks(self) -> np.ndarray:
        return np.linalg.inv(self.mass_blocks)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """∫ values·φ_j for values at quadrature points (nel, nq, N) -> CoeffVec."""
        wv = values * self.weights[:, :, None]  # (nel, nq, N)
        out = self.phi.T @ wv  # (nel, nloc, N)
        return out.transpose(2, 0, 1).ravel()

    # -- sampling ------------------------------------------------------------

    def sample_points(self, kind: str = "quadrature", n: int = 4):
        """Reference sample points per element: quadrature points or a uniform lattice."""
        if kind == "quadrature":
            return self.ref_points
        if kind != "uniform":
            raise InvalidArgument(f"unknown sampling {kind!r}")
        if self.d == 1:
            return ((np.arange(n) + 0.5) / n)[:, None]
        pts = [((i + 1.0 / 3.0) / n, (j + 1.0 / 3.0) / n) for j in range(n) for i in range(n - j)]
        return np.array(pts)


def _evaluate(f, x: np.ndarray, N: int) -> np.ndarray:
    """Call ``f`` on points (npts, d); normalise to (npts, N)."""
    v = np.asarray(f(x), dtype=float)
    npts = x.shape[0]
    if v.ndim == 0:
        v = np.full((npts, 1), float(v))
    elif v.ndim == 1:
        v = v[:, None]
    elif v.shape[0] == N and v.shape[1] == npts and v.shape != (npts, N):
        v = v.T
    if v.shape != (npts, N):
        raise InvalidArgument(f"function returned shape {v.shape}, expected ({npts}, {N})")
    return v


def l2_project(f, space: DgSpace) -> np.ndarray:
    """L² projection of ``f(x) -> (npts,) or (N, npts)`` onto the space."""
    x = space.points.reshape(-1, space.d)
    v = _evaluate(f, x, space.N)
    if not np.all(np.isfinite(v)):
        raise NumericDomainError("function is not finite at some quadrature point")
    rhs = space.integrate(v.reshape(space.nel, -1, space.N)).reshape(space.N, space.nel, space.nloc)
    coef = np.einsum("eij,sej->sei", space.mass_inverse_blocks, rhs)
    return coef.ravel()


def eval_field(space: DgSpace, W: np.ndarray, element: int, xi) -> np.ndarray:
    """Per-species value of the discrete field at reference point ``xi`` of ``element``."""
    if not 0 <= int(element) < space.nel:
        raise InvalidArgument(f"element id {element} out of range")
    xi = np.atleast_2d(np.asarray(xi, dtype=float)).reshape(1, space.d)
    phi = space.basis.values(xi)[0]
    return space.blocks(W)[:, int(element), :] @ phi


def eval_points(space: DgSpace, W: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Values at the same reference points in every element, (nel, npts, N)."""
    return np.einsum("sei,qi->eqs", space.blocks(W), space.basis.values(xi))


def element_of(space: DgSpace, x) -> tuple[int, np.ndarray]:
    """Locate the element containing physical point ``x`` and its reference coordinates."""
    x = np.asarray(x, dtype=float).reshape(space.d)
    xi = np.einsum("eab,eb->ea", space.invj, x[None, :] - space.v0)
    if space.d == 1:
        inside = (xi[:, 0] >= -1e-12) & (xi[:, 0] <= 1 + 1e-12)
    else:
        inside = (xi >= -1e-12).all(axis=1) & (xi.sum(axis=1) <= 1 + 1e-12)
    hits = np.flatnonzero(inside)
    if hits.size == 0:
        raise InvalidArgument(f"point {x} lies outside the mesh")
    e = int(hits[-1])
    return e, np.clip(xi[e], 0.0, 1.0)


# ----------------------------------------------------------------------------
# lifted derivatives


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    rows = np.concatenate([np.ravel(r) for r in rows]) if rows else np.zeros(0, int)
    cols = np.concatenate([np.ravel(c) for c in cols]) if cols else np.zeros(0, int)
    vals = np.concatenate([np.ravel(v) for v in vals]) if vals else np.zeros(0)
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def broken_gradient_matrix(space: DgSpace) -> sp.csr_matrix:
    """G with ∫ ∇_h w · θ = Θᵀ G W (scalar w, vector θ)."""
    nl, d, nel = space.nloc, space.d, space.nel
    vals = np.einsum("eq,eqic,qj->ecji", space.weights, space.dphi, space.phi)
    e, c, j, i = np.meshgrid(np.arange(nel), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij")
    rows = e * d * nl + c * nl + j
    cols = e * nl + i
    return _coo([rows], [cols], [vals], (nel * d * nl, nel * nl))


def lifting_matrix(space: DgSpace, orientation: FluxOrientation) -> sp.csr_matrix:
    """Lf with ∫ L(λ)·θ = ∫_{F^I} [λ]_N · ⟨θ⟩_{1-α} = Θᵀ Lf Λ."""
    tr = space.traces(orientation)
    nl, d, nel = space.nloc, space.d, space.nel
    K = np.stack([tr.first, tr.second], axis=1)  # (nf, 2)
    wside = np.stack([tr.alpha, 1.0 - tr.alpha], axis=1)  # weight of θ from each side
    sgn = np.array([1.0, -1.0])
    rows, cols, vals = [], [], []
    for S in range(2):  # side of θ
        for T in range(2):  # side of λ
            v = np.einsum(
                "fq,f,fc,fqj,fqi->fcji",
                tr.weights,
                wside[:, S] * sgn[T],
                tr.normals,
                tr.phi[:, S],
                tr.phi[:, T],
            )
            f, c, j, i = np.meshgrid(
                np.arange(len(K)), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij"
            )
            rows.append(K[f, S] * d * nl + c * nl + j)
            cols.append(K[f, T] * nl + i)
            vals.append(v)
    return _coo(rows, cols, vals, (nel * d * nl, nel * nl))


def _vector_mass_inverse(space: DgSpace, ncomp: int) -> sp.csr_matrix:
    blocks = [sp.kron(sp.eye(ncomp), sp.csr_matrix(b)) for b in space.mass_inverse_blocks]
    return sp.block_diag(blocks, format="csr")


@dataclass
class LiftedGradient:
    """Coefficients (N, nel, d, nloc) of ∇_DG w and of the jump lifting L(w)."""

    gradient: np.ndarray
    lifting: np.ndarray
    broken: np.ndarray


def dg_gradient_matrix(space: DgSpace, orientation: FluxOrientation) -> sp.csr_matrix:
    """Map scalar coefficients to coefficients of ∇_DG w (vector layout)."""
    Minv = _vector_mass_inverse(space, space.d)
    return (Minv @ (broken_gradient_matrix(space) - lifting_matrix(space, orientation))).tocsr()


def dg_gradient(space: DgSpace, W: np.ndarray, orientation: FluxOrientation) -> LiftedGradient:
    Minv = _vector_mass_inverse(space, space.d)
    G = broken_gradient_matrix(space)
    L = lifting_matrix(space, orientation)
    Wb = space.blocks(W).reshape(space.N, -1).T  # (n_scalar, N)
    shape = (space.nel, space.d, space.nloc, space.N)
    broken = (Minv @ (G @ Wb)).reshape(shape)
    lift = (Minv @ (L @ Wb)).reshape(shape)
    mv = lambda a: np.moveaxis(a, -1, 0)  # noqa: E731
    return LiftedGradient(gradient=mv(broken - lift), lifting=mv(lift), broken=mv(broken))


def hessian_form_matrix(space: DgSpace, orientation: FluxOrientation) -> sp.csr_matrix:
    """G_H with ∫ H_DG(λ):Θ = Θᵀ G_H Λ.

    H_DG = D²_h λ − R(λ) + B(λ), with ∫R(λ):Θ = Σ_K ∫_{∂K°} ⟨Θ⟩ n_K·∇λ|_K and
    ∫B(λ):Θ = ∫_{F^I} ⟨∇_h·Θ⟩·[λ]_N.  Averages use the weights ⟨·⟩_{1−α}.
    """
    nl, d, nel = space.nloc, space.d, space.nel
    dd = d * d
    nrow = nel * dd * nl
    xq = space.ref_points
    href = space.basis.hessians(xq)  # (nq, nloc, d, d)
    hphys = np.einsum("eca,qicd,edb->eqiab", space.invj, href, space.invj)
    vol = np.einsum("eq,eqiab,qj->eabji", space.weights, hphys, space.phi)
    e, a, b, j, i = np.meshgrid(
        np.arange(nel), np.arange(d), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij"
    )
    rows = [e * dd * nl + (a * d + b) * nl + j]
    cols = [e * nl + i]
    vals = [vol]

    tr = space.traces(orientation)
    nf = len(tr.first)
    if nf:
        K = np.stack([tr.first, tr.second], axis=1)
        wside = np.stack([tr.alpha, 1.0 - tr.alpha], axis=1)
        nK = np.stack([tr.normals, -tr.normals], axis=1)  # outward normal of each side
        sgn = np.array([1.0, -1.0])
        f, a, b, j, i = np.meshgrid(
            np.arange(nf), np.arange(d), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij"
        )
        for S in range(2):  # side of Θ
            for T in range(2):  # side of λ
                # −R: −⟨Θ⟩_ab n_{K_T, b} ∂_a λ_T
                r = -np.einsum(
                    "fq,f,fb,fqj,fqia->fabji",
                    tr.weights,
                    wside[:, S],
                    nK[:, T],
                    tr.phi[:, S],
                    tr.dphi[:, T],
                )
                # +B: ⟨∂_b Θ_ab⟩ n_F,a (λ1 − λ2)
                bl = np.einsum(
                    "fq,f,fa,fqjb,fqi->fabji",
                    tr.weights,
                    wside[:, S] * sgn[T],
                    tr.normals,
                    tr.dphi[:, S],
                    tr.phi[:, T],
                )
                rows.append(K[f, S] * dd * nl + (a * d + b) * nl + j)
                cols.append(K[f, T] * nl + i)
                vals.append(r + bl)
    return _coo(rows, cols, vals, (nrow, nel * nl))


def dg_hessian(space: DgSpace, W: np.ndarray, orientation: FluxOrientation) -> np.ndarray:
    """Coefficients (N, nel, d, d, nloc) of H_DG w."""
    Minv = _vector_mass_inverse(space, space.d * space.d)
    GH = hessian_form_matrix(space, orientation)
    Wb = space.blocks(W).reshape(space.N, -1).T
    H = (Minv @ (GH @ Wb)).reshape(space.nel, space.d, space.d, space.nloc, space.N)
    return np.moveaxis(H, -1, 0)
