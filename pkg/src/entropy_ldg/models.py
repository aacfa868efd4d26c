"""Cross-diffusion models in entropy variables.

All functions are vectorised over leading axes: densities ``rho`` and entropy
variables ``w`` have shape ``(..., N)``; matrix-valued functions return
``(..., N, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, xlogy

from .errors import InvalidArgument


@dataclass(frozen=True)
class Domain:
    """Admissible set: a box ``(lower_i, upper_i)^N`` or the open unit simplex."""

    kind: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def clamp(self, rho: np.ndarray, delta: float) -> tuple[np.ndarray, int]:
        """Move points within ``delta`` of the boundary inside; return count of clamped values."""
        if self.kind == "box":
            lo = self.lower + delta
            hi = np.where(np.isfinite(self.upper), self.upper - delta, np.inf)
            out = np.clip(rho, lo, hi)
        else:
            out = np.maximum(rho, delta)
            total = out.sum(axis=-1, keepdims=True)
            excess = np.maximum(total - (1.0 - delta), 0.0)
            out = out - excess * out / total
        return out, int(np.count_nonzero(out != rho))

    def distance(self, rho: np.ndarray) -> np.ndarray:
        """Signed distance-like margin to the boundary per point (positive inside)."""
        if self.kind == "box":
            lo = rho - self.lower
            hi = np.where(np.isfinite(self.upper), self.upper - rho, np.inf)
            return np.minimum(lo, hi).min(axis=-1)
        return np.minimum(rho.min(axis=-1), 1.0 - rho.sum(axis=-1))


class ModelSpec:
    """Contract for a cross-diffusion system satisfying the boundedness-by-entropy hypotheses."""

    name: str = "model"
    N: int
    domain: Domain
    gamma: float
    C_f: float = 0.0
    A_sup: float
    reaction_bound: str = "absolute"  # or "relative": f·s' ≤ C_f (1 + s)
    # whether s''A extends continuously to the closure of D (selects the H¹ regularisation in 2D)
    closure_continuous: bool = True
    params: dict

    def A(self, rho):
        raise NotImplementedError

    def f(self, rho):
        return np.zeros_like(rho)

    def f_prime(self, rho):
        return np.zeros(rho.shape + (self.N,))

    def has_reaction(self) -> bool:
        return False

    def s(self, rho):
        raise NotImplementedError

    def s_prime(self, rho):
        raise NotImplementedError

    def s_second(self, rho):
        raise NotImplementedError

    def u(self, w):
        raise NotImplementedError

    def u_prime(self, w):
        raise NotImplementedError

    def mobility(self, rho):
        """A(ρ)ᵀ s''(ρ)."""
        return np.swapaxes(self.A(rho), -1, -2) @ self.s_second(rho)

    def interior_point(self, rho) -> np.ndarray:
        """Clamp an arbitrary density vector into D (used for initial guesses)."""
        out, _ = self.domain.clamp(np.asarray(rho, dtype=float), 1e-8)
        return out

    def describe(self) -> str:
        items = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name}({items}) N={self.N} gamma={self.gamma:.6g} C_f={self.C_f:.6g} A_sup={self.A_sup:.6g}"


# ----------------------------------------------------------------------------
# porous medium


class PorousMedium(ModelSpec):
    name = "porous_medium"
    N = 1
    closure_continuous = False

    def __init__(self, m: float):
        if not 1.0 < m <= 2.0:
            raise InvalidArgument(f"porous-medium exponent must lie in (1, 2], got {m}")
        self.m = float(m)
        self.domain = Domain("box", np.zeros(1), np.ones(1))
        self.gamma = self.m
        self.C_f = 0.0
        self.A_sup = self.m
        self.params = {"m": self.m}

    def A(self, rho):
        return (self.m * rho ** (self.m - 1.0))[..., None]

    def s(self, rho):
        r = rho[..., 0]
        return xlogy(r, r) + xlogy(1.0 - r, 1.0 - r) + np.log(2.0)

    def s_prime(self, rho):
        return np.log(rho) - np.log1p(-rho)

    def s_second(self, rho):
        return (1.0 / (rho * (1.0 - rho)))[..., None]

    def u(self, w):
        return expit(w)

    def u_prime(self, w):
        return (expit(w) * expit(-w))[..., None]

    def mobility(self, rho):
        return (self.m * rho ** (self.m - 2.0) / (1.0 - rho))[..., None]


def porous_medium(m: float) -> PorousMedium:
    return PorousMedium(m)


# ----------------------------------------------------------------------------
# SKT population model


class SKT(ModelSpec):
    name = "skt"
    N = 2
    reaction_bound = "relative"
    closure_continuous = False

    def __init__(self, a, b, box_cap):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != (2, 3) or b.shape != (2, 3):
            raise InvalidArgument("SKT coefficients a and b must be 2x3 arrays [[x10,x11,x12],[x20,x21,x22]]")
        if box_cap is None:
            raise InvalidArgument(
                "SKT admissible set (0, inf)^2 is unbounded: a box_cap is required to fix A_sup"
            )
        cap = np.asarray(box_cap, dtype=float).reshape(2)
        if np.any(cap <= 0):
            raise InvalidArgument("box_cap entries must be positive")
        if a[0, 1] <= 0 or a[1, 2] <= 0:
            raise InvalidArgument("SKT requires a_11 > 0 and a_22 > 0")
        if a[0, 2] <= 0 or a[1, 1] <= 0:
            raise InvalidArgument("SKT entropy needs a_12 > 0 and a_21 > 0")
        if np.any(a < 0) or np.any(b < 0):
            raise InvalidArgument("SKT coefficients must be nonnegative")
        self.a0 = a[:, 0]
        self.a = a[:, 1:]
        self.b0 = b[:, 0]
        self.b = b[:, 1:]
        self.pi = np.array([self.a[1, 0], self.a[0, 1]])
        self.domain = Domain("box", np.zeros(2), np.full(2, np.inf))
        self.gamma = float(np.min(self.pi * np.diag(self.a)))
        terms = self.b0 + (self.b.T @ self.pi) / (np.e * self.pi)
        self.C_f = float(2.0 / np.log(2.0) * terms.max())
        self.box_cap = cap
        corners = np.array([[x, y] for x in (0.0, cap[0]) for y in (0.0, cap[1])])
        self.A_sup = float(np.abs(self.A(corners)).max())
        self.params = {"a": a.tolist(), "b": b.tolist(), "box_cap": cap.tolist()}

    def A(self, rho):
        diag = self.a0 + rho @ self.a.T  # a_i0 + Σ_k a_ik ρ_k
        out = self.a[None, :, :] * rho.reshape(-1, 2)[:, :, None]  # a_ij ρ_i
        out = out.reshape(rho.shape[:-1] + (2, 2))
        out[..., 0, 0] += diag[..., 0]
        out[..., 1, 1] += diag[..., 1]
        return out

    def has_reaction(self) -> bool:
        return bool(np.any(self.b0) or np.any(self.b))

    def f(self, rho):
        return rho * (self.b0 - rho @ self.b.T)

    def f_prime(self, rho):
        out = -rho[..., :, None] * self.b
        idx = np.arange(2)
        out[..., idx, idx] += self.b0 - rho @ self.b.T
        return out

    def s(self, rho):
        return (self.pi * (xlogy(rho, rho) - rho + 1.0)).sum(axis=-1)

    def s_prime(self, rho):
        return self.pi * np.log(rho)

    def s_second(self, rho):
        out = np.zeros(rho.shape + (2,))
        out[..., 0, 0] = self.pi[0] / rho[..., 0]
        out[..., 1, 1] = self.pi[1] / rho[..., 1]
        return out

    def u(self, w):
        return np.exp(w / self.pi)

    def u_prime(self, w):
        v = self.u(w) / self.pi
        out = np.zeros(w.shape + (2,))
        out[..., 0, 0] = v[..., 0]
        out[..., 1, 1] = v[..., 1]
        return out

    def mobility(self, rho):
        # (Aᵀ s'')_ij = A_ji π_j / ρ_j
        return np.swapaxes(self.A(rho), -1, -2) * (self.pi / rho)[..., None, :]


def skt(a, b, box_cap=None) -> SKT:
    return SKT(a, b, box_cap)


TURING_A = [[0.05, 2.5e-5, 1.025], [0.05, 0.075, 2.5e-5]]
TURING_B = [[59.7, 24.875, 19.9], [49.75, 19.9, 19.9]]


# ----------------------------------------------------------------------------
# simplex models


class _SimplexEntropy(ModelSpec):
    """Entropy Σρ_i(log ρ_i − 1) + ρ_0(log ρ_0 − 1) + N + 1 with ρ_0 = 1 − Σρ_i."""

    def _setup_domain(self):
        self.domain = Domain("simplex")

    def s(self, rho):
        r0 = 1.0 - rho.sum(axis=-1)
        return (xlogy(rho, rho) - rho).sum(axis=-1) + xlogy(r0, r0) - r0 + self.N + 1.0

    def s_prime(self, rho):
        r0 = 1.0 - rho.sum(axis=-1, keepdims=True)
        return np.log(rho) - np.log(r0)

    def s_second(self, rho):
        r0 = 1.0 - rho.sum(axis=-1)
        out = np.broadcast_to((1.0 / r0)[..., None, None], rho.shape + (self.N,)).copy()
        idx = np.arange(self.N)
        out[..., idx, idx] += 1.0 / rho
        return out

    def u(self, w):
        # softmax with an extra zero logit for the solvent fraction, shifted by the largest logit
        m = np.maximum(w.max(axis=-1, keepdims=True), 0.0)
        e = np.exp(w - m)
        return e / (np.exp(-m) + e.sum(axis=-1, keepdims=True))

    def u_prime(self, w):
        r = self.u(w)
        out = -r[..., :, None] * r[..., None, :]
        idx = np.arange(self.N)
        out[..., idx, idx] += r
        return out


class VolumeFillingMixture(_SimplexEntropy):
    name = "mixture"
    closure_continuous = True

    def __init__(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.ndim != 1 or p.size < 1 or np.any(p <= 0):
            raise InvalidArgument("mixture pressure coefficients must be positive")
        self.p = p
        self.N = p.size
        self._setup_domain()
        self.gamma = float(p.min())
        self.C_f = 0.0
        # |A_ii| = p_i ρ_i(1−ρ_i) ≤ p_i/4 and |A_ji| = p_i ρ_i ρ_j ≤ p_i/4 on the simplex
        self.A_sup = float(p.max() / 4.0)
        self.params = {"p": p.tolist()}

    def A(self, rho):
        # A_ji = p_i ρ_i (δ_ji − ρ_j)
        eye = np.eye(self.N)
        return (eye - rho[..., :, None]) * (self.p * rho)[..., None, :]

    def mobility(self, rho):
        return np.broadcast_to(np.diag(self.p), rho.shape + (self.N,)).copy()


def volume_filling_mixture(p) -> VolumeFillingMixture:
    return VolumeFillingMixture(p)


class TumorGrowth(_SimplexEntropy):
    name = "tumor_growth"
    N = 2
    closure_continuous = True

    def __init__(self, beta: float, theta: float):
        if beta <= 0:
            raise InvalidArgument("beta must be positive")
        if not 0.0 < theta < 4.0 / np.sqrt(beta):
            raise InvalidArgument(f"theta must lie in (0, 4/sqrt(beta)) = (0, {4.0 / np.sqrt(beta):.6g})")
        self.beta, self.theta = float(beta), float(theta)
        self._setup_domain()
        self.C_f = 0.0
        self.gamma = self._coercivity_constant()
        g = _simplex_grid(200)
        self.A_sup = float(np.abs(self.A(g)).max())
        self.params = {"beta": self.beta, "theta": self.theta}

    def A(self, rho):
        b, t = self.beta, self.theta
        r1, r2 = rho[..., 0], rho[..., 1]
        out = np.empty(rho.shape + (2,))
        out[..., 0, 0] = 2 * r1 * (1 - r1) - b * t * r1 * r2**2
        out[..., 0, 1] = -2 * b * r1 * r2 * (1 + t * r1)
        out[..., 1, 0] = -2 * r1 * r2 + b * t * (1 - r2) * r2**2
        out[..., 1, 1] = 2 * b * r2 * (1 - r2) * (1 + t * r1)
        return out

    def mobility(self, rho):
        b, t = self.beta, self.theta
        out = np.zeros(rho.shape + (2,))
        out[..., 0, 0] = 2.0
        out[..., 0, 1] = b * t * rho[..., 1]
        out[..., 1, 1] = 2.0 * b * (t * rho[..., 0] + 1.0)
        return out

    def _coercivity_constant(self) -> float:
        """Min eigenvalue of the symmetrised product over the closed simplex, refined to 1%."""
        prev = None
        n = 100
        while True:
            P = self.mobility(_simplex_grid(n))
            lam = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, -1, -2)))[:, 0].min()
            if prev is not None and abs(lam - prev) <= 0.01 * abs(lam):
                return float(lam)
            prev, n = lam, 2 * n


def tumor_growth(beta: float, theta: float) -> TumorGrowth:
    return TumorGrowth(beta, theta)


def _simplex_grid(n: int) -> np.ndarray:
    """Points (i/n, j/n) with i + j ≤ n."""
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    return np.stack([i[keep], j[keep]], axis=1) / n


# ----------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    model: str
    samples: int
    h2a_margin: float  # min over samples of λ_min(sym(s''A)) − γ
    h2b_slack: float  # min over samples of bound − f·s'
    roundtrip_rho: float  # max |u(s'(ρ)) − ρ|
    roundtrip_w: float  # max |s'(u(w)) − w|
    chain_rule: float  # max |u'(w) s''(u(w)) − I|
    inside: bool  # u(w) ∈ D for all sampled w
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.h2a_margin >= -1e-8
            and self.h2b_slack >= -1e-8
            and self.roundtrip_rho <= 1e-9
            and self.roundtrip_w <= 1e-9
            and self.chain_rule <= 1e-7
            and self.inside
        )

    def to_text(self) -> str:
        rows = [
            ("model", self.model),
            ("samples", self.samples),
            ("h2a_margin", f"{self.h2a_margin:.6e}"),
            ("h2b_slack", f"{self.h2b_slack:.6e}"),
            ("roundtrip_rho", f"{self.roundtrip_rho:.3e}"),
            ("roundtrip_w", f"{self.roundtrip_w:.3e}"),
            ("chain_rule", f"{self.chain_rule:.3e}"),
            ("inside", self.inside),
            ("ok", self.ok),
        ]
        return "\n".join(f"{k}: {v}" for k, v in rows + [("note", n) for n in self.notes])


def sample_interior(model: ModelSpec, n: int, rng: np.random.Generator, margin: float = 1e-3) -> np.ndarray:
    """Random densities inside D (inside box_cap for unbounded boxes)."""
    N = model.N
    if model.domain.kind == "simplex":
        x = rng.dirichlet(np.ones(N + 1), size=n)[:, :N]
        return margin + (1.0 - (N + 1) * margin) * x
    lo = model.domain.lower
    hi = model.domain.upper
    hi = np.where(np.isfinite(hi), hi, getattr(model, "box_cap", np.ones(N)))
    return lo + margin * (hi - lo) + (1 - 2 * margin) * (hi - lo) * rng.random((n, N))


def validate_model(model: ModelSpec, samples: int = 10_000, seed: int = 0) -> ValidationReport:
    """Sample-based checks of the entropy structure; reports and never raises."""
    if samples < 1:
        raise InvalidArgument("need at least one sample")
    rng = np.random.default_rng(seed)
    rho = sample_interior(model, samples, rng)

    P = model.s_second(rho) @ model.A(rho)
    lam = np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, -1, -2)))[:, 0]
    h2a = float((lam - model.gamma).min())

    prod = (model.f(rho) * model.s_prime(rho)).sum(axis=-1)
    if model.reaction_bound == "relative":
        bound = model.C_f * (1.0 + model.s(rho))
    else:
        bound = np.full(samples, model.C_f)
    h2b = float((bound - prod).min())

    rt_rho = float(np.abs(model.u(model.s_prime(rho)) - rho).max())
    w = model.s_prime(rho)
    rt_w = float(np.abs(model.s_prime(model.u(w)) - w).max())
    wr = rng.uniform(-10.0, 10.0, size=(samples, model.N))
    if isinstance(model, SKT):
        wr = wr * model.pi / 2.0  # keep exp(w/π) moderate
    chain = model.u_prime(wr) @ model.s_second(model.u(wr))
    chain_err = float(np.abs(chain - np.eye(model.N)).max())
    wide = rng.uniform(-700.0, 700.0, size=(samples, model.N))
    if isinstance(model, SKT):
        wide = wide * model.pi / 2.0
    with np.errstate(over="ignore"):
        uw = model.u(wide)
    # closed D for extreme w (rounding may reach the boundary), strict interior for moderate w
    inside = bool(np.all(np.isfinite(uw)) and np.all(model.domain.distance(uw) >= -1e-15))
    inside = inside and bool(np.all(model.domain.distance(model.u(wr)) > 0.0))
    return ValidationReport(model.describe(), samples, h2a, h2b, rt_rho, rt_w, chain_err, inside)
