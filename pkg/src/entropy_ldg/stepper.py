"""Quasi-Newton solver, fixed and adaptive backward-Euler time loops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import dgbtrf, dgbtrs
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import diagnostics as dg
from .errors import (
    DivergedStateError,
    InvalidArgument,
    NotConvergedError,
    SingularStateError,
    TimeStepUnderflow,
)
from .system import Evaluation, Scheme, SchemeParams

log = logging.getLogger(__name__)

DENSE_LIMIT = 400
# adaptive steps stay below TAU_SAFETY / C_f under a relative reaction bound
TAU_SAFETY = 0.9


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    s_max: int = 50
    norm: str = "euclidean"  # or "l2": L² norm of the residual's Riesz representative, sqrt(rᵀM⁻¹r)
    jacobian: str = "step"  # "step": frozen at the previous time level; "iterate": refreshed each iteration
    cond: str = "none"  # none | estimate | exact | auto

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgument("Newton tolerance must be positive")
        if self.s_max < 1:
            raise InvalidArgument("s_max must be at least 1")
        if self.norm not in ("euclidean", "l2"):
            raise InvalidArgument(f"unknown residual norm {self.norm!r}")
        if self.jacobian not in ("step", "iterate"):
            raise InvalidArgument(f"unknown Jacobian policy {self.jacobian!r}")
        if self.cond not in ("none", "estimate", "exact", "auto"):
            raise InvalidArgument(f"unknown condition estimate mode {self.cond!r}")


@dataclass(frozen=True)
class AdaptiveConfig:
    tau1: float = 1e-4
    shrink: float = 0.2
    growth: float = 1.1
    retry: bool = True
    tau_max: float = math.inf
    min_fraction: float = 1e-12  # abort once τ < min_fraction·T

    def __post_init__(self):
        if not 0 < self.shrink < 1 < self.growth:
            raise InvalidArgument("need 0 < shrink < 1 < growth")
        if not self.tau1 > 0:
            raise InvalidArgument("initial step must be positive")


# ----------------------------------------------------------------------------
# linear algebra


BAND_LIMIT = 96  # widest band (kl + ku + 1) routed to the banded LU


class BandedLayout:
    """Reverse Cuthill-McKee ordering of a fixed pattern and its LAPACK band storage map."""

    def __init__(self, pattern):
        n = pattern.n
        A = sp.csr_matrix((np.ones(pattern.nnz), pattern.indices, pattern.indptr), shape=(n, n))
        perm = reverse_cuthill_mckee((A + A.T).tocsr(), symmetric_mode=True)
        iperm = np.empty(n, dtype=np.int64)
        iperm[perm] = np.arange(n)
        pr = iperm[pattern.rows]
        pc = iperm[pattern.indices]
        self.n = n
        self.perm = perm
        self.kl = int(max(0, (pr - pc).max()))
        self.ku = int(max(0, (pc - pr).max()))
        self.width = self.kl + self.ku + 1
        self.flat = (self.kl + self.ku + pr - pc) * n + pc

    def storage(self, data: np.ndarray) -> np.ndarray:
        ab = np.zeros((2 * self.kl + self.ku + 1) * self.n)
        ab[self.flat] = data
        return ab.reshape(2 * self.kl + self.ku + 1, self.n)


def _layout(pattern) -> BandedLayout:
    if not hasattr(pattern, "_band"):
        pattern._band = BandedLayout(pattern)
    return pattern._band


class Factorization:
    """LU factors of a Jacobian.

    Banded LAPACK after a bandwidth-reducing permutation when the band is
    narrow, dense LAPACK for small systems, SuperLU otherwise.
    """

    def __init__(self, J: sp.spmatrix):
        self.n = J.shape[0]
        self.J = J
        self.kind = "sparse"
        pattern = getattr(J, "pattern", None)
        band = _layout(pattern) if pattern is not None else None
        try:
            if band is not None and band.width <= BAND_LIMIT:
                self.kind = "banded"
                self.band = band
                lu, piv, info = dgbtrf(band.storage(J.data), band.kl, band.ku, overwrite_ab=1)
                if info != 0:
                    raise np.linalg.LinAlgError(f"banded LU failed (info={info})")
                self._lu = (lu, piv)
            elif self.n <= DENSE_LIMIT:
                self.kind = "dense"
                self._lu = sla.lu_factor(J.toarray(), check_finite=True)
            else:
                self._lu = spla.splu(J.tocsc())
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            raise DivergedStateError(f"Jacobian factorization failed: {exc}") from exc

    def _band_solve(self, b, trans=0):
        band = self.band
        x, info = dgbtrs(self._lu[0], band.kl, band.ku, b[band.perm], self._lu[1], trans=trans)
        out = np.empty_like(x)
        out[band.perm] = x
        return out

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.kind == "banded":
            return self._band_solve(b)
        if self.kind == "dense":
            return sla.lu_solve(self._lu, b, check_finite=False)
        return self._lu.solve(b)

    def condition(self, mode: str) -> float:
        if mode == "none":
            return math.nan
        if mode == "auto":
            mode = "exact" if self.n < 2000 else "estimate"
        if mode == "exact":
            return float(np.linalg.cond(self.J.toarray()))
        inv = spla.LinearOperator(
            (self.n, self.n),
            matvec=self.solve,
            rmatvec=self._solve_t,
            dtype=float,
        )
        return float(spla.onenormest(self.J) * spla.onenormest(inv))

    def _solve_t(self, b):
        if self.kind == "banded":
            return self._band_solve(b, trans=1)
        if self.kind == "dense":
            return sla.lu_solve(self._lu, b, trans=1, check_finite=False)
        return self._lu.solve(b, trans="T")


@dataclass
class NewtonResult:
    W: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    cond_estimate: float
    evaluation: Evaluation | None
    history: list = field(default_factory=list)  # (iteration, residual norm, max|W|, cond)
    min_coercivity: float = math.inf  # min over iterates of (ΣᵀN̂Σ − γ‖Σ‖²) / ΣᵀN̂Σ
    reason: str = ""


def newton_solve(
    evaluate: Callable[[np.ndarray], Evaluation],
    jacobian: Callable[..., sp.spmatrix],
    W_init: np.ndarray,
    cfg: NewtonConfig,
    W_lin: np.ndarray | None = None,
    norm: Callable[[np.ndarray], float] | None = None,
) -> NewtonResult:
    """Quasi-Newton iteration W ← W − J⁻¹ r(W).

    ``jacobian(V, blocks)`` is evaluated at ``W_lin`` (default ``W_init``)
    and factorized once; with ``cfg.jacobian == "iterate"`` it is refreshed at
    every iterate.  ``blocks`` are the local blocks of the last evaluation
    when it was taken at the linearisation point, else None.
    Non-finite states end the iteration with ``converged=False``.
    ``norm`` measures the residual (Euclidean by default).
    """
    W = np.array(W_init, dtype=float)
    if not np.all(np.isfinite(W)):
        raise InvalidArgument("initial guess is not finite")
    history = []
    min_coerc = math.inf

    def _eval(V):
        ev = evaluate(V)
        return ev, float(norm(ev.residual) if norm is not None else np.linalg.norm(ev.residual))

    def _coerc(ev):
        return ev.coercivity_margin / max(abs(ev.production), 1e-300)

    try:
        ev, rn = _eval(W)
    except (DivergedStateError, SingularStateError) as exc:
        return NewtonResult(W, 0, False, math.inf, math.nan, None, history, min_coerc, str(exc))
    min_coerc = min(min_coerc, _coerc(ev))
    history.append((0, rn, float(np.abs(W).max()), math.nan))
    if rn <= cfg.tol:
        return NewtonResult(W, 0, True, rn, math.nan, ev, history, min_coerc)

    lu = None
    cond = math.nan
    for k in range(1, cfg.s_max + 1):
        try:
            if lu is None or cfg.jacobian == "iterate":
                if cfg.jacobian == "iterate" or W_lin is None or k == 1 and np.array_equal(W_lin, W):
                    J = jacobian(W, ev.blocks)
                else:
                    J = jacobian(W_lin, None)
                lu = Factorization(J)
                cond = lu.condition(cfg.cond)
            W = W - lu.solve(ev.residual)
            ev, rn = _eval(W)
        except (DivergedStateError, SingularStateError) as exc:
            return NewtonResult(W, k, False, math.inf, cond, None, history, min_coerc, str(exc))
        min_coerc = min(min_coerc, _coerc(ev))
        history.append((k, rn, float(np.abs(W).max()), cond))
        if rn <= cfg.tol:
            return NewtonResult(W, k, True, rn, cond, ev, history, min_coerc)
    return NewtonResult(W, cfg.s_max, False, rn, cond, ev, history, min_coerc, "iteration cap reached")


# ----------------------------------------------------------------------------
# time stepping


@dataclass
class RunState:
    t: float
    W: np.ndarray
    prev: np.ndarray  # U_h(Wⁿ), or R_h⁰ before the first step
    n: int
    entropy: float  # E_n (E_0 = ∫ s(ρ₀))
    first: bool = True


@dataclass
class RunReport:
    rows: list
    state: RunState
    quadrature_degree: int
    residual_norm: str = "euclidean"
    jacobian_policy: str = "step"
    snapshots: dict = field(default_factory=dict)
    newton_histories: dict = field(default_factory=dict)
    rejected_steps: int = 0
    min_coercivity: float = math.inf
    clamp_events: int = 0
    wall_time: float = 0.0
    tol: float = 0.0
    stats: dg.RunStats | None = None

    @property
    def final_W(self) -> np.ndarray:
        return self.state.W


def initial_state(scheme: Scheme, rho0: Callable) -> tuple[RunState, dg.StepDiagnostics]:
    """R_h⁰ = moments of ρ₀; W_init = s'(clamped mean of the projection) per species."""
    space, model = scheme.space, scheme.model
    prev = scheme.moments(rho0)
    mass0 = prev.reshape(space.N, space.nel, space.nloc)[:, :, 0].sum(axis=1)  # φ_0 ≡ 1
    mean = model.interior_point(mass0 / space.mesh.domain_measure)
    W0 = space.constant(model.s_prime(mean))
    E0 = dg.entropy_value(space, model, rho0=rho0)
    row = dg.StepDiagnostics(
        step=0,
        t=0.0,
        tau=0.0,
        newton_iters=0,
        entropy=E0,
        mass=dg.mass_value(space, model, rho0=rho0),
        min_u=np.full(space.N, math.nan),
        max_u=np.full(space.N, math.nan),
        sigma_l2=math.nan,
        jump_energy=math.nan,
        entropy_slack=math.nan,
        cond_estimate=math.nan,
    )
    return RunState(t=0.0, W=W0, prev=prev, n=0, entropy=E0, first=True), row


def make_norm(scheme: Scheme, kind: str) -> Callable[[np.ndarray], float] | None:
    """None for the Euclidean norm; sqrt(rᵀ(I⊗M⁻¹)r) for "l2"."""
    if kind == "euclidean":
        return None
    space = scheme.space
    Minv = space.mass_inverse_blocks

    def l2(r):
        rb = r.reshape(space.N, space.nel, space.nloc)
        return math.sqrt(float(np.einsum("sei,eij,sej->", rb, Minv, rb)))

    return l2


def _check_tau(scheme: Scheme, tau: float):
    if not tau > 0:
        raise InvalidArgument("time step must be positive")
    m = scheme.model
    if m.reaction_bound == "relative" and m.C_f > 0 and not tau < 1.0 / m.C_f:
        raise InvalidArgument(f"time step {tau} violates tau < 1/C_f = {1.0 / m.C_f:.6g}")


def advance(
    state: RunState,
    tau: float,
    scheme: Scheme,
    cfg: NewtonConfig,
    epsilon: float = 0.0,
) -> tuple[RunState, dg.StepDiagnostics, NewtonResult]:
    """One backward-Euler step; raises NotConvergedError on Newton failure."""
    _check_tau(scheme, tau)
    params = SchemeParams(tau=tau, epsilon=epsilon, first_step=state.first)
    t_new = state.t + tau
    # no previous time level exists before the first step, so the Jacobian is refreshed there
    step_cfg = replace(cfg, jacobian="iterate") if state.first else cfg
    res = newton_solve(
        lambda V: scheme.evaluate(V, state.prev, params, t_new),
        lambda V, blocks: scheme.frozen_jacobian(V, params, blocks),
        state.W,
        step_cfg,
        W_lin=state.W,
        norm=make_norm(scheme, cfg.norm),
    )
    if not res.converged:
        raise NotConvergedError(
            f"Newton failed at t={t_new:.6g} (tau={tau:.3g}): {res.reason}, residual {res.residual_norm:.3e}",
            res.residual_norm,
            res.iterations,
        )
    row = step_diagnostics(scheme, state, res, tau, epsilon)
    new = RunState(t=t_new, W=res.W, prev=res.evaluation.U, n=state.n + 1, entropy=row.entropy, first=False)
    return new, row, res


def step_diagnostics(scheme: Scheme, state: RunState, res: NewtonResult, tau: float, epsilon: float) -> dg.StepDiagnostics:
    space, model = scheme.space, scheme.model
    ev = res.evaluation
    rho = ev.blocks.rho
    E_new = float(np.sum(space.weights * model.s(rho)))
    mass = np.einsum("eq,eqs->s", space.weights, rho)
    lo, hi, margin = dg.bounds(model, rho)
    W = res.W
    jump = float(W @ (scheme.SN @ W))
    c_energy = float(W @ (scheme.CN @ W)) if epsilon > 0 else 0.0
    work = float(scheme.load(state.t + tau) @ W) if scheme.has_load else 0.0
    slack = dg.entropy_audit(
        state.entropy,
        E_new,
        tau=tau,
        gamma=model.gamma,
        sigma_energy=ev.sigma_energy,
        jump_energy=jump,
        epsilon=epsilon,
        c_energy=c_energy,
        C_f=model.C_f,
        bound_kind=model.reaction_bound,
        measure=space.mesh.domain_measure,
        work=work,
    )
    return dg.StepDiagnostics(
        step=state.n + 1,
        t=state.t + tau,
        tau=tau,
        newton_iters=res.iterations,
        entropy=E_new,
        mass=mass,
        min_u=lo,
        max_u=hi,
        sigma_l2=ev.sigma_energy,
        jump_energy=jump,
        entropy_slack=slack,
        cond_estimate=res.cond_estimate,
        c_energy=c_energy,
        boundary_margin=margin,
        coercivity_margin=res.min_coercivity,
        residual_norm=res.residual_norm,
    )


def _new_report(scheme: Scheme, cfg: NewtonConfig, row0, keep_rows: bool) -> RunReport:
    report = RunReport(
        rows=[row0] if keep_rows else [],
        state=None,
        quadrature_degree=scheme.space.volume_degree,
        residual_norm=cfg.norm,
        jacobian_policy=cfg.jacobian,
        tol=cfg.tol,
        stats=dg.RunStats(cfg.tol),
    )
    report.stats.add(row0)
    return report


def _record(report: RunReport, row, res: NewtonResult, keep_rows: bool, sink):
    report.stats.add(row)
    if keep_rows:
        report.rows.append(row)
    if sink is not None:
        sink(row)
    report.min_coercivity = min(report.min_coercivity, res.min_coercivity)


def _snap(report: RunReport, state: RunState, snapshot_times, atol: float):
    for ts in snapshot_times:
        if abs(state.t - ts) <= atol and ts not in report.snapshots:
            report.snapshots[ts] = state.W.copy()


def run_fixed(
    scheme: Scheme,
    rho0: Callable,
    tau: float,
    T: float,
    cfg: NewtonConfig,
    epsilon: float = 0.0,
    snapshot_times=(),
    keep_histories: int = 0,
    callback: Callable | None = None,
    sink: Callable | None = None,
    keep_rows: bool = True,
) -> RunReport:
    """Uniform steps τ up to T (T/τ must be an integer within rounding).

    Rows go to ``sink`` as they are produced; ``keep_rows=False`` keeps only
    the streaming statistics in ``report.stats``.
    """
    t0 = time.perf_counter()
    if T < 0:
        raise InvalidArgument("final time must be nonnegative")
    nsteps = int(round(T / tau)) if T > 0 else 0
    if T > 0 and abs(nsteps * tau - T) > 1e-9 * max(T, 1.0):
        raise InvalidArgument(f"T={T} is not an integer multiple of tau={tau}")
    state, row0 = initial_state(scheme, rho0)
    report = _new_report(scheme, cfg, row0, keep_rows)
    if sink is not None:
        sink(row0)
    _snap(report, state, snapshot_times, 0.5 * tau)
    clamp0 = scheme.clamp_events
    for n in range(nsteps):
        state, row, res = advance(state, tau, scheme, cfg, epsilon)
        if n == nsteps - 1:
            state.t = T
            row.t = T
        _record(report, row, res, keep_rows, sink)
        if n < keep_histories:
            report.newton_histories[n + 1] = res.history
        _snap(report, state, snapshot_times, 0.5 * tau)
        if callback is not None:
            callback(state, row)
    report.state = state
    report.clamp_events = scheme.clamp_events - clamp0
    report.wall_time = time.perf_counter() - t0
    return report


def run_adaptive(
    scheme: Scheme,
    rho0: Callable,
    acfg: AdaptiveConfig,
    T: float,
    cfg: NewtonConfig,
    epsilon: float = 0.0,
    snapshot_times=(),
    step_fn: Callable = advance,
    callback: Callable | None = None,
    sink: Callable | None = None,
    keep_rows: bool = True,
    keep_histories: int = 0,
) -> RunReport:
    """Grow τ by ``growth`` each step, shrink by ``shrink`` and retry on Newton failure.

    Snapshot times are hit exactly by clipping the step.  With a relative
    reaction bound the step is capped below 1/C_f.
    """
    t0 = time.perf_counter()
    state, row0 = initial_state(scheme, rho0)
    report = _new_report(scheme, cfg, row0, keep_rows)
    if sink is not None:
        sink(row0)
    _snap(report, state, snapshot_times, 0.0)
    tau_cap = acfg.tau_max
    m = scheme.model
    if m.reaction_bound == "relative" and m.C_f > 0:
        tau_cap = min(tau_cap, TAU_SAFETY / m.C_f)
    targets = sorted({float(ts) for ts in snapshot_times if 0 < ts < T} | {float(T)})
    tau = min(acfg.tau1, tau_cap)
    floor = acfg.min_fraction * T
    clamp0 = scheme.clamp_events
    first = True
    while state.t < T * (1 - 1e-14):
        if not first:
            tau = min(tau * acfg.growth, tau_cap)
        first = False
        target = next(ts for ts in targets if ts > state.t * (1 + 1e-14))
        while True:
            step = min(tau, target - state.t)
            if step < floor:
                raise TimeStepUnderflow(f"time step {step:.3e} fell below {floor:.3e} at t={state.t:.6g}")
            try:
                new, row, res = step_fn(state, step, scheme, cfg, epsilon)
                break
            except NotConvergedError as exc:
                if not acfg.retry:
                    raise
                report.rejected_steps += 1
                log.info("step rejected: %s", exc)
                tau = step * acfg.shrink
        if abs(new.t - target) <= 1e-12 * max(1.0, T):
            new.t = target
            row.t = target
        state = new
        _record(report, row, res, keep_rows, sink)
        if state.n <= keep_histories:
            report.newton_histories[state.n] = res.history
        _snap(report, state, snapshot_times, 1e-12 * max(1.0, T))
        if callback is not None:
            callback(state, row)
    report.state = state
    report.clamp_events = scheme.clamp_events - clamp0
    report.wall_time = time.perf_counter() - t0
    return report
