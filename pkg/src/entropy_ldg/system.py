"""State-dependent part of the scheme: local blocks, reduced operator, residual, Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import OperatorSet
from .dgspace import DgSpace
from .errors import DivergedStateError, InvalidArgument, SingularStateError
from .models import ModelSpec

SINGULAR_OFFSET = 1e-14


@dataclass
class Forcing:
    """External data entering F_h.

    ``source(t, x)`` returns (N, npts) values of a volume source g;
    ``neumann(t, x, n)`` returns (N, npts) boundary fluxes g_N = (A∇ρ)·n.
    """

    source: Callable | None = None
    neumann: Callable | None = None


@dataclass
class SchemeParams:
    tau: float
    epsilon: float = 0.0
    first_step: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgument("time step must be positive")
        if self.epsilon < 0:
            raise InvalidArgument("regularization weight must be nonnegative")


@dataclass
class LocalBlocks:
    """Per-element dense blocks, indexed (species, basis) × (species, basis)."""

    rho: np.ndarray  # (nel, nq, N) = u(w_h) at quadrature points
    Nhat: np.ndarray  # (nel, N·nloc, N·nloc)
    Ahat: np.ndarray  # (nel, N·nloc, N·nloc)
    clamped: int  # quadrature values moved off ∂D before evaluating s''
    _Ninv: np.ndarray | None = None
    _E: np.ndarray | None = None

    @property
    def Ninv(self) -> np.ndarray:
        if self._Ninv is None:
            try:
                self._Ninv = np.linalg.inv(self.Nhat)
            except np.linalg.LinAlgError as exc:
                raise SingularStateError(f"singular mobility block: {exc}") from exc
        return self._Ninv

    @property
    def E(self) -> np.ndarray:
        """Ê_K = Â_K N̂_K⁻¹ Â_Kᵀ."""
        if self._E is None:
            self._E = self.Ahat @ self.Ninv @ np.swapaxes(self.Ahat, 1, 2)
        return self._E


@dataclass
class StateTerms:
    blocks: LocalBlocks
    Z: np.ndarray
    Sigma: np.ndarray
    U: np.ndarray  # U_h(W)
    operator: np.ndarray  # [(I⊗BᵀM⁻¹)Ê(I⊗M⁻¹B) + I⊗S]W
    reaction: np.ndarray | None  # F_h(W)
    production: float
    energy: float


@dataclass
class Evaluation:
    """Everything computed along one residual evaluation."""

    residual: np.ndarray
    blocks: LocalBlocks
    Z: np.ndarray  # (nel, d, N·nloc)
    Sigma: np.ndarray  # (nel, d, N·nloc)
    U: np.ndarray  # U_h(W)
    coercivity_margin: float  # ΣᵀN̂Σ − γ‖Σ‖²
    sigma_energy: float  # ‖Σ‖²
    production: float  # ΣᵀN̂Σ


class Scheme:
    """Fully discrete LDG scheme for one model on one space."""

    def __init__(
        self,
        space: DgSpace,
        model: ModelSpec,
        ops: OperatorSet,
        forcing: Forcing | None = None,
        reaction_jacobian: bool = True,
    ):
        if model.N != space.N:
            raise InvalidArgument(f"model has {model.N} species but the space has {space.N}")
        self.space, self.model, self.ops = space, model, ops
        self.forcing = forcing or Forcing()
        self.reaction_jacobian = reaction_jacobian
        self.clamp_events = 0
        self._setup()

    # -- precomputation -------------------------------------------------------

    def _setup(self):
        s = self.space
        N, nl, nel, d = s.N, s.nloc, s.nel, s.d
        self.G = self.ops.G
        self.GT = self.G.T.tocsr()
        self.nv = nel * d * nl
        # quadrature products for block assembly: (nq, nloc·nloc)
        self._pp = s.phiphi.reshape(s.phi.shape[0], nl * nl)
        # global pattern of element blocks coupling species, (nel, N, nl, N, nl)
        e, t, j, r, i = np.meshgrid(np.arange(nel), np.arange(N), np.arange(nl), np.arange(N), np.arange(nl), indexing="ij")
        self._blk_rows = (t * s.n_scalar + e * nl + j).ravel()
        self._blk_cols = (r * s.n_scalar + e * nl + i).ravel()
        # Ê pattern in species-major vector layout, (nel, d, N, nl, N, nl)
        e, c, t, j, r, i = np.meshgrid(
            np.arange(nel), np.arange(d), np.arange(N), np.arange(nl), np.arange(N), np.arange(nl), indexing="ij"
        )
        base = e * d * nl + c * nl
        self._E_rows = (t * self.nv + base + j).ravel()
        self._E_cols = (r * self.nv + base + i).ravel()
        eye = sp.identity(N, format="csr")
        self.GN = sp.kron(eye, self.G, format="csr")
        self.SN = sp.kron(eye, self.ops.S, format="csr")
        self._CN = None
        self._load_cache: tuple[float, np.ndarray] | None = None
        self._state_cache: tuple[np.ndarray, StateTerms] | None = None
        self._assemblers: dict[bool, JacobianPattern | None] = {}

    @property
    def CN(self) -> sp.csr_matrix:
        if self._CN is None:
            self._CN = sp.kron(sp.identity(self.space.N), self.ops.C, format="csr")
        return self._CN

    def _element_blocks(self, values: np.ndarray) -> np.ndarray:
        """∫ values_{ts} φ_i φ_j per element for values (nel, nq, k·N, N) -> (nel·k, N·nl, N·nl)."""
        s = self.space
        N, nl, nel = s.N, s.nloc, s.nel
        k = values.shape[2] // N
        wv = values * s.weights[:, :, None, None]
        out = np.moveaxis(wv, 1, -1).reshape(-1, wv.shape[1]) @ self._pp  # (nel·k·N·N, nl·nl)
        out = out.reshape(nel, k, N, N, nl, nl).transpose(0, 1, 2, 4, 3, 5)
        return out.reshape(nel * k, N * nl, N * nl) if k == 1 else out.reshape(nel, k, N * nl, N * nl)

    # -- local blocks ----------------------------------------------------------

    def eval_local_blocks(self, W: np.ndarray) -> LocalBlocks:
        W = np.asarray(W, dtype=float)
        if not np.all(np.isfinite(W)):
            raise DivergedStateError("non-finite coefficients")
        wq = self.space.at_quadrature(W)
        rho = self.model.u(wq)
        if not np.all(np.isfinite(rho)):
            raise DivergedStateError("u(w) overflowed")
        rho_c, nclamp = self.model.domain.clamp(rho, SINGULAR_OFFSET)
        self.clamp_events += nclamp
        P = self.model.mobility(rho_c)
        bad = ~np.isfinite(P).all(axis=(1, 2, 3))
        if bad.any():
            el = int(np.flatnonzero(bad)[0])
            raise SingularStateError(f"entropy Hessian not finite on element {el}", element=el)
        A = self.model.A(rho)
        both = self._element_blocks(np.concatenate([P, A], axis=2))
        return LocalBlocks(rho=rho, Nhat=both[:, 0], Ahat=both[:, 1], clamped=nclamp)

    # -- layout helpers -----------------------------------------------------------

    def _to_local(self, Zflat: np.ndarray) -> np.ndarray:
        """(nel·d·nl, N) -> (nel, d, N·nl)."""
        s = self.space
        return Zflat.reshape(s.nel, s.d, s.nloc, s.N).transpose(0, 1, 3, 2).reshape(s.nel, s.d, s.N * s.nloc)

    def _from_local(self, Y: np.ndarray) -> np.ndarray:
        s = self.space
        return Y.reshape(s.nel, s.d, s.N, s.nloc).transpose(0, 1, 3, 2).reshape(self.nv, s.N)

    def _columns(self, W: np.ndarray) -> np.ndarray:
        return np.asarray(W, dtype=float).reshape(self.space.N, -1).T

    def gradient_coefficients(self, W: np.ndarray) -> np.ndarray:
        """Z = M⁻¹BW per species, local layout (nel, d, N·nl)."""
        return self._to_local(self.G @ self._columns(W))

    def apply_E(self, blocks: LocalBlocks, V: np.ndarray) -> np.ndarray:
        """(I⊗BᵀM⁻¹) Ê (I⊗M⁻¹B) V."""
        Z = self.gradient_coefficients(V)
        Y = np.einsum("eab,ecb->eca", blocks.E, Z)
        return (self.GT @ self._from_local(Y)).T.ravel()

    def solve_sigma(self, blocks: LocalBlocks, Z: np.ndarray) -> np.ndarray:
        """Σ from N̂Σ = ÂᵀZ, local layout."""
        R = Z @ blocks.Ahat  # rows of ÂᵀZ
        return R @ np.swapaxes(blocks.Ninv, 1, 2)

    def recover_sigma_q(self, W: np.ndarray):
        """(Z, Σ, Q) as species-major vector-field coefficient arrays (N, nel, d, nloc)."""
        blocks = self.eval_local_blocks(W)
        Z = self.gradient_coefficients(W)
        Sig = self.solve_sigma(blocks, Z)
        AS = np.einsum("eab,ecb->eca", blocks.Ahat, Sig)
        Q = self.ops.Mv_inv_apply(self._from_local(AS))
        shape = lambda X: X.T.reshape(self.space.N, self.space.nel, self.space.d, self.space.nloc)  # noqa: E731
        return shape(self._from_local(Z)), shape(self._from_local(Sig)), shape(Q)

    # -- vectors ------------------------------------------------------------

    def U_h(self, W: np.ndarray) -> np.ndarray:
        return self.space.integrate(self.model.u(self.space.at_quadrature(W)))

    def moments(self, rho0) -> np.ndarray:
        """R_h⁰ as the load vector ∫ρ₀ φ (equals M times the L² projection)."""
        from .dgspace import _evaluate

        s = self.space
        v = _evaluate(rho0, s.points.reshape(-1, s.d), s.N).reshape(s.nel, -1, s.N)
        return s.integrate(v)

    def load(self, t: float) -> np.ndarray:
        """∫ g(t)·λ + ∫_{∂Ω} g_N(t)·λ."""
        if self._load_cache is not None and self._load_cache[0] == t:
            return self._load_cache[1]
        s = self.space
        out = np.zeros(s.n_dofs)
        f = self.forcing
        if f.source is not None:
            x = s.points.reshape(-1, s.d)
            g = np.asarray(f.source(t, x), dtype=float).reshape(s.N, -1).T
            out += s.integrate(g.reshape(s.nel, -1, s.N))
        if f.neumann is not None and s.mesh.n_boundary:
            nqf = s.bnd_points.shape[1]
            x = s.bnd_points.reshape(-1, s.d)
            n = np.repeat(s.mesh.boundary_normals, nqf, axis=0)
            g = np.asarray(f.neumann(t, x, n), dtype=float).reshape(s.N, -1, nqf)
            vals = np.einsum("fq,sfq,fqj->sfj", s.bnd_weights, g, s.bnd_phi)
            tmp = np.zeros((s.N, s.nel, s.nloc))
            np.add.at(tmp, (slice(None), s.mesh.boundary_elements), vals)
            out += tmp.ravel()
        self._load_cache = (t, out)
        return out

    @property
    def has_load(self) -> bool:
        return self.forcing.source is not None or self.forcing.neumann is not None

    # -- residual and Jacobian ---------------------------------------------------------

    def state_terms(self, W: np.ndarray) -> StateTerms:
        """Parts of the residual that depend on W only; the last result is cached."""
        cached = self._state_cache
        if cached is not None and np.array_equal(cached[0], W):
            return cached[1]
        s = self.space
        blocks = self.eval_local_blocks(W)
        Z = self.gradient_coefficients(W)
        Sig = self.solve_sigma(blocks, Z)
        AS = Sig @ np.swapaxes(blocks.Ahat, 1, 2)
        operator = (self.GT @ self._from_local(AS)).T.ravel() + self.SN @ W
        reaction = s.integrate(self.model.f(blocks.rho)) if self.model.has_reaction() else None
        production = float(np.sum((Sig @ blocks.Nhat) * Sig))
        # mass of stacked species blocks is I_N ⊗ M_K
        Sl = Sig.reshape(s.nel, s.d * s.N, s.nloc)
        energy = float(np.sum((Sl @ s.mass_blocks) * Sl))
        terms = StateTerms(blocks, Z, Sig, s.integrate(blocks.rho), operator, reaction, production, energy)
        self._state_cache = (np.array(W, dtype=float), terms)
        return terms

    def evaluate(self, W: np.ndarray, prev: np.ndarray, params: SchemeParams, t: float) -> Evaluation:
        """Residual ετCW + U_h(W) − prev + τ[(I⊗BᵀM⁻¹)Ê(I⊗M⁻¹B) + I⊗S]W − τF_h(W) − τ·load(t)."""
        tau = params.tau
        st = self.state_terms(W)
        r = st.U - prev + tau * st.operator
        if params.epsilon > 0:
            r += params.epsilon * tau * (self.CN @ W)
        if st.reaction is not None:
            r -= tau * st.reaction
        if self.has_load:
            r -= tau * self.load(t)
        if not np.all(np.isfinite(r)):
            raise DivergedStateError("non-finite residual")
        margin = st.production - self.model.gamma * st.energy
        return Evaluation(r, st.blocks, st.Z, st.Sigma, st.U, margin, st.energy, st.production)

    def residual(self, W: np.ndarray, prev: np.ndarray, params: SchemeParams, t: float = 0.0) -> np.ndarray:
        return self.evaluate(W, prev, params, t).residual

    def stiffness(self, blocks: LocalBlocks) -> sp.csr_matrix:
        """(I⊗BᵀM⁻¹) Ê (I⊗M⁻¹B) with Ê frozen at ``blocks``."""
        s = self.space
        data = np.broadcast_to(
            blocks.E.reshape(s.nel, 1, s.N, s.nloc, s.N, s.nloc), (s.nel, s.d, s.N, s.nloc, s.N, s.nloc)
        ).ravel()
        nvt = s.N * self.nv
        E = sp.csr_matrix((data, (self._E_rows, self._E_cols)), shape=(nvt, nvt))
        return (self.GN.T @ (E @ self.GN)).tocsr()

    def jacobian_pattern(self, with_C: bool) -> JacobianPattern | None:
        if with_C not in self._assemblers:
            self._assemblers[with_C] = JacobianPattern.build(self, with_C)
        return self._assemblers[with_C]

    def frozen_jacobian(self, W_lin: np.ndarray, params: SchemeParams, blocks: LocalBlocks | None = None) -> sp.csr_matrix:
        """ετ(I⊗C) + U'_h + τ[(I⊗BᵀM⁻¹)Ê(I⊗M⁻¹B) + I⊗S] − τF'_h, all at W_lin.

        ``blocks`` may carry local blocks already evaluated at ``W_lin``.
        """
        s, tau = self.space, params.tau
        pat = self.jacobian_pattern(params.epsilon > 0)
        if blocks is None:
            blocks = self.eval_local_blocks(W_lin)
        up = self.model.u_prime(s.at_quadrature(W_lin))  # (nel, nq, N, N)
        local = self._element_blocks(up)
        if self.reaction_jacobian and self.model.has_reaction():
            local = local - tau * self._element_blocks(self.model.f_prime(blocks.rho) @ up)
        if pat is not None:
            return pat.matrix(local, blocks.E, tau, params.epsilon)
        local = local.reshape(s.nel, s.N, s.nloc, s.N, s.nloc)
        J = sp.csr_matrix((local.ravel(), (self._blk_rows, self._blk_cols)), shape=(s.n_dofs, s.n_dofs))
        J = J + tau * (self.stiffness(blocks) + self.SN)
        if params.epsilon > 0:
            J = J + params.epsilon * tau * self.CN
        return J.tocsr()


# entries of the Ê-to-stiffness map beyond which the sparse product is used instead
PATTERN_LIMIT = 20_000_000


class JacobianPattern:
    """Fixed CSR pattern of the Jacobian with linear maps from local blocks to its data.

    Assembling on a frozen pattern replaces the sparse triple product by one
    sparse matrix-vector product, and gives factorizations a stable layout.
    """

    def __init__(self, n, indptr, indices, pos_U, P_E, S_data, C_data):
        self.n = n
        self.indptr = indptr
        self.indices = indices
        self.pos_U = pos_U
        self.P_E = P_E
        self.S_data = S_data
        self.C_data = C_data
        self.rows = np.repeat(np.arange(n), np.diff(indptr))

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @classmethod
    def build(cls, scheme: "Scheme", with_C: bool) -> "JacobianPattern | None":
        s = scheme.space
        n = s.n_dofs
        GN = scheme.GN.tocsr()
        GN.sort_indices()
        # Ê entries in the broadcast (nel, d, N, nl, N, nl) order, and their index into E.ravel()
        ri, rj = scheme._E_rows, scheme._E_cols
        eidx = np.broadcast_to(
            np.arange(s.nel * (s.N * s.nloc) ** 2).reshape(s.nel, 1, s.N * s.nloc, s.N * s.nloc),
            (s.nel, s.d, s.N * s.nloc, s.N * s.nloc),
        ).reshape(s.nel, s.d, s.N, s.nloc, s.N, s.nloc)
        eidx = eidx.ravel()
        li = np.diff(GN.indptr)[ri]
        lj = np.diff(GN.indptr)[rj]
        total = int(np.sum(li * lj))
        if total > PATTERN_LIMIT:
            return None
        # expand every Ê entry into the outer product of two rows of GN
        q = np.repeat(np.arange(len(ri)), li * lj)
        off = np.arange(total) - np.repeat(np.cumsum(li * lj) - li * lj, li * lj)
        lj_q = lj[q]
        a_pos = GN.indptr[ri[q]] + off // lj_q
        b_pos = GN.indptr[rj[q]] + off % lj_q
        ka = GN.indices[a_pos].astype(np.int64)
        kb = GN.indices[b_pos].astype(np.int64)
        vals = GN.data[a_pos] * GN.data[b_pos]

        blk_r, blk_c = scheme._blk_rows.astype(np.int64), scheme._blk_cols.astype(np.int64)
        SN = scheme.SN.tocoo()
        keys = [ka * n + kb, blk_r * n + blk_c, SN.row.astype(np.int64) * n + SN.col]
        CN = scheme.CN.tocoo() if with_C else None
        if CN is not None:
            keys.append(CN.row.astype(np.int64) * n + CN.col)
        pattern = np.unique(np.concatenate(keys))
        rows = pattern // n
        indices = (pattern % n).astype(np.int32)
        indptr = np.zeros(n + 1, dtype=np.int32)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        nnz = len(pattern)

        pos_E = np.searchsorted(pattern, keys[0])
        P_E = sp.csr_matrix((vals, (pos_E, eidx[q])), shape=(nnz, s.nel * (s.N * s.nloc) ** 2))
        pos_U = np.searchsorted(pattern, keys[1])
        S_data = np.bincount(np.searchsorted(pattern, keys[2]), SN.data, minlength=nnz)
        C_data = None
        if CN is not None:
            C_data = np.bincount(np.searchsorted(pattern, keys[3]), CN.data, minlength=nnz)
        return cls(n, indptr, indices, pos_U, P_E, S_data, C_data)

    def data(self, U_blocks: np.ndarray, E: np.ndarray, tau: float, epsilon: float = 0.0) -> np.ndarray:
        out = np.bincount(self.pos_U, U_blocks.ravel(), minlength=self.nnz)
        out += tau * (self.P_E @ E.ravel() + self.S_data)
        if epsilon > 0:
            out += epsilon * tau * self.C_data
        return out

    def matrix(self, U_blocks, E, tau, epsilon=0.0) -> sp.csr_matrix:
        J = sp.csr_matrix((self.data(U_blocks, E, tau, epsilon), self.indices, self.indptr), shape=(self.n, self.n))
        J.pattern = self
        return J
