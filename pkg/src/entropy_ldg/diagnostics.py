"""Entropy, mass, bounds, error norms, rates, manufactured sources and CSV rows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dgspace import DgSpace, _evaluate, reference_rule
from .models import ModelSpec


@dataclass
class StepDiagnostics:
    step: int
    t: float
    tau: float
    newton_iters: int
    entropy: float
    mass: np.ndarray
    min_u: np.ndarray
    max_u: np.ndarray
    sigma_l2: float  # ‖σ‖²
    jump_energy: float  # ‖η_F^{1/2}[w]‖²
    entropy_slack: float
    cond_estimate: float
    # not part of the CSV schema
    c_energy: float = 0.0
    boundary_margin: float = math.nan  # min distance of u(w_h) to ∂D
    coercivity_margin: float = math.nan  # min over Newton iterates
    residual_norm: float = math.nan


def csv_header(N: int) -> str:
    cols = ["step", "t", "tau", "newton_iters", "entropy"]
    cols += [f"mass_{i}" for i in range(1, N + 1)]
    cols += [f"min_u_{i}" for i in range(1, N + 1)]
    cols += [f"max_u_{i}" for i in range(1, N + 1)]
    cols += ["sigma_l2", "jump_energy", "entropy_slack", "cond_estimate"]
    return ",".join(cols)


def _fmt(x) -> str:
    return repr(float(x))


def csv_row(d: StepDiagnostics) -> str:
    vals = [str(d.step), _fmt(d.t), _fmt(d.tau), str(d.newton_iters), _fmt(d.entropy)]
    vals += [_fmt(v) for v in d.mass]
    vals += [_fmt(v) for v in d.min_u]
    vals += [_fmt(v) for v in d.max_u]
    vals += [_fmt(d.sigma_l2), _fmt(d.jump_energy), _fmt(d.entropy_slack), _fmt(d.cond_estimate)]
    return ",".join(vals)


def write_csv(path, rows: Sequence[StepDiagnostics], N: int) -> None:
    with open(path, "w") as fh:
        fh.write(csv_header(N) + "\n")
        for r in rows:
            fh.write(csv_row(r) + "\n")


# ----------------------------------------------------------------------------
# functionals


def entropy_value(space: DgSpace, model: ModelSpec, W: np.ndarray | None = None, rho0: Callable | None = None) -> float:
    """∫ s(u(w_h)), or ∫ s(ρ₀) when ``rho0`` is given (quadrature of the exact datum)."""
    if rho0 is not None:
        x = space.points.reshape(-1, space.d)
        rho = _evaluate(rho0, x, space.N).reshape(space.nel, -1, space.N)
    else:
        rho = model.u(space.at_quadrature(W))
    return float(np.sum(space.weights * model.s(rho)))


def mass_value(space: DgSpace, model: ModelSpec, W: np.ndarray | None = None, rho0: Callable | None = None) -> np.ndarray:
    """Per-species ∫ u(w_h) (or ∫ ρ₀)."""
    if rho0 is not None:
        x = space.points.reshape(-1, space.d)
        rho = _evaluate(rho0, x, space.N).reshape(space.nel, -1, space.N)
    else:
        rho = model.u(space.at_quadrature(W))
    return np.einsum("eq,eqs->s", space.weights, rho)


def bounds(model: ModelSpec, rho_q: np.ndarray):
    """(min per species, max per species, min distance to ∂D) over quadrature values."""
    flat = rho_q.reshape(-1, model.N)
    return flat.min(axis=0), flat.max(axis=0), float(model.domain.distance(flat).min())


def entropy_audit(
    E_prev: float,
    E_new: float,
    *,
    tau: float,
    gamma: float,
    sigma_energy: float,
    jump_energy: float,
    epsilon: float = 0.0,
    c_energy: float = 0.0,
    C_f: float = 0.0,
    bound_kind: str = "absolute",
    measure: float = 1.0,
    work: float = 0.0,
) -> float:
    """RHS − LHS of the one-step discrete entropy inequality.

    ``work`` is ⟨load, W⟩ for external sources or boundary fluxes, which are
    absent from the homogeneous inequality.
    """
    lhs = epsilon * tau * c_energy + E_new + gamma * tau * sigma_energy + tau * jump_energy
    if bound_kind == "relative":
        growth = C_f * tau * (measure + E_new)
    else:
        growth = C_f * tau * measure
    rhs = E_prev + growth + tau * work
    return rhs - lhs


# ----------------------------------------------------------------------------
# errors and rates


def error_norms(
    space: DgSpace,
    model: ModelSpec,
    W: np.ndarray,
    Sigma: np.ndarray,
    rho_exact: Callable,
    grad_exact: Callable,
    t: float,
    extra_degree: int = 4,
):
    """(‖ρ − u(w_h)‖, ‖∇ρ + σ_h‖) per species at time ``t``.

    ``rho_exact(t, x)`` returns (N, npts); ``grad_exact(t, x)`` returns (N, d, npts).
    ``Sigma`` has shape (N, nel, d, nloc).
    """
    xi, wr = reference_rule(space.d, space.volume_degree + extra_degree)
    phi = space.basis.values(xi)
    x = space.v0[:, None, :] + np.einsum("eab,qb->eqa", space.jac, xi)
    wts = space.detj[:, None] * wr[None, :]
    xf = x.reshape(-1, space.d)
    N, nel, nq = space.N, space.nel, len(wr)
    rho = np.asarray(rho_exact(t, xf), dtype=float).reshape(N, nel, nq)
    grad = np.asarray(grad_exact(t, xf), dtype=float).reshape(N, space.d, nel, nq)
    wq = np.einsum("sei,qi->eqs", space.blocks(W), phi)
    uh = np.moveaxis(model.u(wq), -1, 0)  # (N, nel, nq)
    sig = np.einsum("seci,qi->sceq", Sigma, phi)
    e_rho = np.sqrt(np.einsum("eq,seq->s", wts, (rho - uh) ** 2))
    e_grad = np.sqrt(np.einsum("eq,sceq->s", wts, (grad + sig) ** 2))
    return e_rho, e_grad


def convergence_rates(errors: Sequence[float], hs: Sequence[float]) -> list[float]:
    """r_i = log(e_i / e_{i+1}) / log(h_i / h_{i+1})."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    return [float(np.log(e[i] / e[i + 1]) / np.log(h[i] / h[i + 1])) for i in range(len(e) - 1)]


# ----------------------------------------------------------------------------
# manufactured solutions

# fourth-order central difference weights for the first derivative
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_OFF = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


def _ddx(fun, x: np.ndarray, c: int, h: float) -> np.ndarray:
    out = 0.0
    for wgt, k in zip(_D1, _OFF):
        if wgt == 0.0:
            continue
        xs = x.copy()
        xs[:, c] += k * h
        out = out + wgt * fun(xs)
    return out / h


def diffusive_flux(model: ModelSpec, rho_exact: Callable, dim: int, step: float = 1e-3) -> Callable:
    """(t, x) -> A(ρ)∇ρ with shape (N, d, npts), by finite differences of ``rho_exact``."""

    def flux(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rho = np.asarray(rho_exact(t, x), dtype=float).T  # (npts, N)
        A = model.A(rho)  # (npts, N, N)
        out = []
        for c in range(dim):
            g = _ddx(lambda y: np.asarray(rho_exact(t, y), dtype=float).T, x, c, step)  # (npts, N)
            out.append(np.einsum("pij,pj->ip", A, g))
        return np.stack(out, axis=1)

    return flux


def manufactured_source(model: ModelSpec, rho_exact: Callable, dim: int, step: float = 1e-3, closed_form: Callable | None = None) -> Callable:
    """g = ∂_t ρ − ∇·(A(ρ)∇ρ) − f(ρ) as a callable (t, x) -> (N, npts).

    Derivatives use fourth-order central differences of ``rho_exact(t, x)``;
    ``closed_form`` short-circuits when an analytic expression is known.
    """
    if closed_form is not None:
        return closed_form
    flux = diffusive_flux(model, rho_exact, dim, step)

    def g(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dt = sum(w * np.asarray(rho_exact(t + k * step, x), dtype=float) for w, k in zip(_D1, _OFF) if w) / step
        div = 0.0
        for c in range(dim):
            div = div + _ddx(lambda y: flux(t, y)[:, c, :].T, x, c, step).T
        rho = np.asarray(rho_exact(t, x), dtype=float).T
        return dt - div - model.f(rho).T

    return g


# ----------------------------------------------------------------------------
# run-level summaries


@dataclass
class AuditSummary:
    min_slack: float
    telescoped_slack: float
    steps: int
    violations: list = field(default_factory=list)


def audit_rows(rows: Sequence[StepDiagnostics], tol: float) -> AuditSummary:
    """Per-step slack floor −10·tol and telescoped budget −10·N_t·tol."""
    steps = [r for r in rows if r.step > 0]
    slacks = np.array([r.entropy_slack for r in steps]) if steps else np.zeros(0)
    bad = [r.step for r in steps if r.entropy_slack < -10.0 * tol]
    tele = float(slacks.sum()) if steps else 0.0
    if steps and tele < -10.0 * len(steps) * tol:
        bad.append("telescoped")
    return AuditSummary(float(slacks.min()) if steps else 0.0, tele, len(steps), bad)


def boundedness_violations(rows: Sequence[StepDiagnostics]) -> list[int]:
    """Steps where some value of u(w_h) reached or crossed ∂D."""
    return [r.step for r in rows if r.step > 0 and not r.boundary_margin > 0.0]


def mass_drift(rows: Sequence[StepDiagnostics]) -> float:
    """max_n |M_n − M_0| over species."""
    m0 = rows[0].mass
    return float(max(np.abs(r.mass - m0).max() for r in rows))


class RunStats:
    """Streaming summary of report rows (for runs too long to keep every row)."""

    def __init__(self, tol: float, max_listed: int = 20):
        self.tol = tol
        self.max_listed = max_listed
        self.steps = 0
        self.slack_min = math.inf
        self.slack_sum = 0.0
        self.slack_violations: list = []
        self.n_slack_violations = 0
        self.boundary_violations: list = []
        self.n_boundary_violations = 0
        self.min_boundary_margin = math.inf
        self.mass0 = None
        self.max_drift = 0.0
        self.max_iters = 0
        self.total_iters = 0
        self.min_u = None
        self.max_u = None
        self.entropy0 = math.nan
        self.entropy_last = math.nan
        self.max_entropy_increase = -math.inf
        self.min_coercivity = math.inf

    def add(self, r: StepDiagnostics) -> None:
        if r.step == 0:
            self.mass0 = np.array(r.mass, dtype=float)
            self.entropy0 = self.entropy_last = r.entropy
            return
        self.steps += 1
        self.slack_min = min(self.slack_min, r.entropy_slack)
        self.slack_sum += r.entropy_slack
        if r.entropy_slack < -10.0 * self.tol:
            self.n_slack_violations += 1
            if len(self.slack_violations) < self.max_listed:
                self.slack_violations.append(r.step)
        if not r.boundary_margin > 0.0:
            self.n_boundary_violations += 1
            if len(self.boundary_violations) < self.max_listed:
                self.boundary_violations.append(r.step)
        self.min_boundary_margin = min(self.min_boundary_margin, r.boundary_margin)
        if self.mass0 is not None:
            self.max_drift = max(self.max_drift, float(np.abs(r.mass - self.mass0).max()))
        self.max_iters = max(self.max_iters, r.newton_iters)
        self.total_iters += r.newton_iters
        self.min_u = r.min_u.copy() if self.min_u is None else np.minimum(self.min_u, r.min_u)
        self.max_u = r.max_u.copy() if self.max_u is None else np.maximum(self.max_u, r.max_u)
        self.max_entropy_increase = max(self.max_entropy_increase, r.entropy - self.entropy_last)
        self.entropy_last = r.entropy
        self.min_coercivity = min(self.min_coercivity, r.coercivity_margin)

    @property
    def telescoped_ok(self) -> bool:
        return self.slack_sum >= -10.0 * max(self.steps, 1) * self.tol

    @property
    def audit_ok(self) -> bool:
        return self.n_slack_violations == 0 and self.telescoped_ok

    def summary(self) -> AuditSummary:
        bad = list(self.slack_violations)
        if not self.telescoped_ok:
            bad.append("telescoped")
        return AuditSummary(self.slack_min if self.steps else 0.0, self.slack_sum, self.steps, bad)


def field_variance(space: DgSpace, model: ModelSpec, W: np.ndarray | None = None, rho0: Callable | None = None) -> np.ndarray:
    """Per-species spatial variance |Ω|⁻¹∫(ρ − mean)² of u(w_h) (or of ρ₀)."""
    if rho0 is not None:
        x = space.points.reshape(-1, space.d)
        rho = _evaluate(rho0, x, space.N).reshape(space.nel, -1, space.N)
    else:
        rho = model.u(space.at_quadrature(W))
    vol = float(space.weights.sum())
    mean = np.einsum("eq,eqs->s", space.weights, rho) / vol
    return np.einsum("eq,eqs->s", space.weights, (rho - mean) ** 2) / vol
