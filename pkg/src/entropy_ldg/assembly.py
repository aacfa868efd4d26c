"""State-independent sparse operators: mass, LDG gradient, stabilisation, regularisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dgspace import DgSpace, _coo, _vector_mass_inverse, dg_gradient_matrix, hessian_form_matrix
from .errors import InvalidArgument
from .mesh import FluxOrientation


def assemble_mass(space: DgSpace) -> sp.csr_matrix:
    """Scalar mass matrix, block diagonal per element."""
    return sp.block_diag(list(space.mass_blocks), format="csr")


def assemble_vector_mass(space: DgSpace, ncomp: int | None = None) -> sp.csr_matrix:
    ncomp = space.d if ncomp is None else ncomp
    return sp.block_diag([np.kron(np.eye(ncomp), b) for b in space.mass_blocks], format="csr")


def assemble_gradient(space: DgSpace, orientation: FluxOrientation) -> sp.csr_matrix:
    """B with b_h(w, ψ) = Ψᵀ B W.

    b_h(w, ψ) = −∫_{F^I} ⟨w⟩_α [ψ]_N − ∫_{∂Ω} w ψ·n + Σ_K ∫_K w ∇·ψ.
    """
    nl, d, nel = space.nloc, space.d, space.nel
    rows, cols, vals = [], [], []

    # volume: ∫_K w ∂_c ψ_c
    v = np.einsum("eq,qi,eqjc->ecji", space.weights, space.phi, space.dphi)
    e, c, j, i = np.meshgrid(np.arange(nel), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij")
    rows.append(e * d * nl + c * nl + j)
    cols.append(e * nl + i)
    vals.append(v)

    # boundary: −∫ w ψ·n
    Kb = space.mesh.boundary_elements
    if len(Kb):
        v = -np.einsum("fq,fc,fqj,fqi->fcji", space.bnd_weights, space.mesh.boundary_normals, space.bnd_phi, space.bnd_phi)
        f, c, j, i = np.meshgrid(np.arange(len(Kb)), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij")
        rows.append(Kb[f] * d * nl + c * nl + j)
        cols.append(Kb[f] * nl + i)
        vals.append(v)

    # interior: −∫ ⟨w⟩_α [ψ]_N with ⟨w⟩_α = (1−α) w1 + α w2, [ψ]_N = (ψ1 − ψ2)·n
    tr = space.traces(orientation)
    nf = len(tr.first)
    if nf:
        K = np.stack([tr.first, tr.second], axis=1)
        wcol = np.stack([1.0 - tr.alpha, tr.alpha], axis=1)
        sgn = np.array([1.0, -1.0])
        f, c, j, i = np.meshgrid(np.arange(nf), np.arange(d), np.arange(nl), np.arange(nl), indexing="ij")
        for S in range(2):  # side of ψ
            for T in range(2):  # side of w
                v = -np.einsum(
                    "fq,f,fc,fqj,fqi->fcji", tr.weights, sgn[S] * wcol[:, T], tr.normals, tr.phi[:, S], tr.phi[:, T]
                )
                rows.append(K[f, S] * d * nl + c * nl + j)
                cols.append(K[f, T] * nl + i)
                vals.append(v)
    return _coo(rows, cols, vals, (nel * d * nl, nel * nl))


def jump_penalty(space: DgSpace, weights: np.ndarray) -> sp.csr_matrix:
    """Matrix of Σ_F weight_F ∫_F [w]·[λ] over interior facets."""
    nl, nel = space.nloc, space.nel
    K = space.mesh.interior_elements
    nf = len(K)
    if nf == 0:
        return sp.csr_matrix((nel * nl, nel * nl))
    phi = space._int_phi  # mesh ordering; jump sign irrelevant here
    wq = space._int_weights * np.asarray(weights)[:, None]
    sgn = np.array([1.0, -1.0])
    rows, cols, vals = [], [], []
    f, j, i = np.meshgrid(np.arange(nf), np.arange(nl), np.arange(nl), indexing="ij")
    for S in range(2):
        for T in range(2):
            v = sgn[S] * sgn[T] * np.einsum("fq,fqj,fqi->fji", wq, phi[:, S], phi[:, T])
            rows.append(K[f, S] * nl + j)
            cols.append(K[f, T] * nl + i)
            vals.append(v)
    return _coo(rows, cols, vals, (nel * nl, nel * nl))


def gradient_jump_penalty(space: DgSpace, weights: np.ndarray) -> sp.csr_matrix:
    """Matrix of Σ_F weight_F ∫_F [∇_h w]·[∇_h λ] (full vector jump)."""
    nl, nel = space.nloc, space.nel
    K = space.mesh.interior_elements
    nf = len(K)
    if nf == 0:
        return sp.csr_matrix((nel * nl, nel * nl))
    g = space._int_dphi
    wq = space._int_weights * np.asarray(weights)[:, None]
    sgn = np.array([1.0, -1.0])
    rows, cols, vals = [], [], []
    f, j, i = np.meshgrid(np.arange(nf), np.arange(nl), np.arange(nl), indexing="ij")
    for S in range(2):
        for T in range(2):
            v = sgn[S] * sgn[T] * np.einsum("fq,fqja,fqia->fji", wq, g[:, S], g[:, T])
            rows.append(K[f, S] * nl + j)
            cols.append(K[f, T] * nl + i)
            vals.append(v)
    return _coo(rows, cols, vals, (nel * nl, nel * nl))


def stabilization_weights(space: DgSpace, A_sup: float) -> np.ndarray:
    """η_F = 𝗁_F⁻¹ A_sup."""
    if not A_sup > 0:
        raise InvalidArgument("A_sup must be positive")
    return A_sup / space.mesh.facet_size


def assemble_stability(space: DgSpace, A_sup: float) -> tuple[sp.csr_matrix, np.ndarray]:
    eta_F = stabilization_weights(space, A_sup)
    return jump_penalty(space, eta_F), eta_F


def resolve_regularization(space: DgSpace, kind, closure_continuous: bool = True) -> int:
    """ℓ = 1 in 1D; in 2D ℓ = 1 when s''A is continuous up to ∂D, else ℓ = 2."""
    if kind in (None, "auto"):
        return 1 if space.d == 1 or closure_continuous else 2
    kind = int(kind)
    if kind not in (1, 2):
        raise InvalidArgument(f"regularization kind must be 1 or 2, got {kind}")
    if kind == 2 and space.d != 2:
        raise InvalidArgument("the H²-type regularization is only available in 2D")
    return kind


def assemble_regularization(space: DgSpace, kind: int, orientation: FluxOrientation) -> sp.csr_matrix:
    """C for the H¹-type (ℓ=1) or H²-type (ℓ=2) DG inner product."""
    kind = resolve_regularization(space, kind)
    hF = space.mesh.facet_size
    M = assemble_mass(space)
    Mv = assemble_vector_mass(space)
    G = dg_gradient_matrix(space, orientation)  # coefficients of ∇_DG
    C = M + G.T @ Mv @ G
    if kind == 1:
        C = C + jump_penalty(space, 1.0 / hF)
    else:
        MTinv = _vector_mass_inverse(space, space.d * space.d)
        GH = hessian_form_matrix(space, orientation)
        C = C + GH.T @ MTinv @ GH
        C = C + gradient_jump_penalty(space, 1.0 / hF) + jump_penalty(space, hF**-3.0)
    C = 0.5 * (C + C.T)
    return C.tocsr()


@dataclass
class OperatorSet:
    """Assembled scalar operators shared by all species."""

    space: DgSpace
    orientation: FluxOrientation
    M: sp.csr_matrix
    Mv: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix
    eta_F: np.ndarray
    kind: int
    _C: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def C(self) -> sp.csr_matrix:
        if self._C is None:
            self._C = assemble_regularization(self.space, self.kind, self.orientation)
        return self._C

    def M_inv_apply(self, X: np.ndarray) -> np.ndarray:
        """Apply the scalar M⁻¹ to columns of X (n_scalar, k)."""
        sp_ = self.space
        Xb = np.asarray(X).reshape(sp_.nel, sp_.nloc, -1)
        return np.einsum("eij,ejk->eik", sp_.mass_inverse_blocks, Xb).reshape(np.shape(X))

    def Mv_inv_apply(self, X: np.ndarray) -> np.ndarray:
        """Apply the vector-field M⁻¹ to columns of X (nel·d·nloc, k)."""
        sp_ = self.space
        Xb = np.asarray(X).reshape(sp_.nel, sp_.d, sp_.nloc, -1)
        return np.einsum("eij,ecjk->ecik", sp_.mass_inverse_blocks, Xb).reshape(np.shape(X))

    @property
    def G(self) -> sp.csr_matrix:
        """M⁻¹B; maps W to Z = −∇_DG w coefficients."""
        if not hasattr(self, "_G"):
            Minv = _vector_mass_inverse(self.space, self.space.d)
            self._G = (Minv @ self.B).tocsr()
        return self._G


def build_operators(space: DgSpace, model, orientation: FluxOrientation, regularization="auto") -> OperatorSet:
    kind = resolve_regularization(space, regularization, getattr(model, "closure_continuous", True))
    S, eta_F = assemble_stability(space, model.A_sup)
    return OperatorSet(
        space=space,
        orientation=orientation,
        M=assemble_mass(space),
        Mv=assemble_vector_mass(space),
        B=assemble_gradient(space, orientation),
        S=S,
        eta_F=eta_F,
        kind=kind,
    )


def dump_operator(matrix, path) -> None:
    """Write a sparse matrix as ``row col value`` triplets, sorted by row then column."""
    A = sp.coo_matrix(matrix)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
