"""Custom runs from a configuration and the built-in experiment presets."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diagnostics as dg
from .assembly import build_operators
from .config import RunConfig
from .dgspace import DgSpace, element_of, eval_field
from .errors import InvalidArgument
from .mesh import build_interval_mesh, build_structured_tri_mesh, orient_facets
from .models import TURING_A, TURING_B, ModelSpec, porous_medium, skt, volume_filling_mixture
from .problems import Problem, mixture_fronts, porous_exact, porous_waiting, skt_exact, skt_turing, waiting_time
from .stepper import AdaptiveConfig, NewtonConfig, RunReport, initial_state, newton_solve, run_adaptive, run_fixed
from .system import Scheme, SchemeParams

log = logging.getLogger(__name__)

COERCIVITY_TOL = 1e-10  # relative rounding allowance on ΣᵀN̂Σ ≥ γ‖Σ‖²


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class ExperimentResult:
    name: str
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = [f"experiment {self.name}"] + [c.line() for c in self.checks]
        lines.append(f"result: {'ok' if self.ok else 'FAILED'}")
        return "\n".join(lines)


# ----------------------------------------------------------------------------
# output helpers


class CsvSink:
    """Streams report rows to a CSV file with the fixed diagnostics header."""

    def __init__(self, path, N: int):
        self.path = str(path)
        self._fh = open(self.path, "w")
        self._fh.write(dg.csv_header(N) + "\n")

    def __call__(self, row: dg.StepDiagnostics) -> None:
        self._fh.write(dg.csv_row(row) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def reference_lattice(dim: int, n: int) -> np.ndarray:
    """Equispaced reference points: n per element in 1D, the order-(n−1) lattice in 2D."""
    if n < 1:
        raise InvalidArgument("need at least one sample per element")
    if n == 1:
        return np.full((1, dim), 0.5 if dim == 1 else 1.0 / 3.0)
    t = np.linspace(0.0, 1.0, n)
    if dim == 1:
        return t[:, None]
    return np.array([(t[i], t[j]) for j in range(n) for i in range(n - j)])


def sample_field(space: DgSpace, model: ModelSpec, W: np.ndarray, samples: int = 4):
    """(element ids, physical points, u(w_h) values) at the reference lattice of every element."""
    xi = reference_lattice(space.d, samples)
    phi = space.basis.values(xi)
    w = np.einsum("sei,qi->eqs", space.blocks(W), phi)
    x = space.v0[:, None, :] + np.einsum("eab,qb->eqa", space.jac, xi)
    elem = np.repeat(np.arange(space.nel), len(xi))
    return elem, x.reshape(-1, space.d), model.u(w).reshape(-1, space.N)


def emit_field(space: DgSpace, model: ModelSpec, W: np.ndarray, path, samples: int = 4) -> str:
    """CSV of u(w_h) sampled on each element, ordered by element then lattice point."""
    elem, x, u = sample_field(space, model, W, samples)
    coords = ["x", "y"][: space.d]
    header = ["element"] + coords + [f"u_{i}" for i in range(1, space.N + 1)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(elem)):
            vals = [str(int(elem[k]))] + [repr(float(v)) for v in x[k]] + [repr(float(v)) for v in u[k]]
            fh.write(",".join(vals) + "\n")
    return str(path)


def read_field(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _table(path, header: list[str], rows: list[list]) -> str:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")
    return str(path)


# ----------------------------------------------------------------------------
# generic run and checks


def run_checks(label: str, report: RunReport, model: ModelSpec) -> list[Check]:
    """Entropy audit, strict boundedness and coercivity for one run."""
    st = report.stats
    checks = []
    kind = "relative bound" if model.reaction_bound == "relative" and model.C_f > 0 else "C_f form"
    checks.append(
        Check(
            f"{label} entropy inequality ({kind})",
            st.audit_ok,
            f"min slack {st.slack_min:.3e}, telescoped {st.slack_sum:.3e}, floor {-10 * st.tol:.1e}/step over {st.steps} steps",
        )
    )
    lo = np.array2string(st.min_u, precision=6) if st.min_u is not None else "n/a"
    hi = np.array2string(st.max_u, precision=6) if st.max_u is not None else "n/a"
    checks.append(
        Check(
            f"{label} strict boundedness",
            st.n_boundary_violations == 0,
            f"{st.n_boundary_violations} violations, min distance to boundary {st.min_boundary_margin:.3e}, min u {lo}, max u {hi}",
        )
    )
    checks.append(
        Check(
            f"{label} discrete coercivity",
            report.min_coercivity >= -COERCIVITY_TOL,
            f"min relative margin over Newton iterates {report.min_coercivity:.3e}",
        )
    )
    return checks


def simulate(
    scheme: Scheme,
    problem: Problem,
    *,
    newton: NewtonConfig,
    tau: float | None = None,
    T: float,
    epsilon: float = 0.0,
    adaptive: AdaptiveConfig | None = None,
    csv_path=None,
    snapshots=(),
    keep_rows: bool = False,
    callback: Callable | None = None,
) -> RunReport:
    sink = CsvSink(csv_path, scheme.space.N) if csv_path else None
    try:
        if adaptive is None:
            report = run_fixed(
                scheme, problem.rho0, tau, T, newton, epsilon, snapshots, callback=callback, sink=sink, keep_rows=keep_rows
            )
        else:
            report = run_adaptive(
                scheme, problem.rho0, adaptive, T, newton, epsilon, snapshots, callback=callback, sink=sink, keep_rows=keep_rows
            )
    finally:
        if sink is not None:
            sink.close()
    return report


def run_config(cfg: RunConfig, out_dir: str | None = None) -> ExperimentResult:
    """Execute a custom run; writes the step CSV, field samples and a summary."""
    if cfg.preset:
        return run_experiment(cfg.preset, out_dir or cfg.out_dir)
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    scheme, problem = cfg.build()
    result = ExperimentResult("run")
    csv_path = os.path.join(out, cfg.csv_name)
    report = simulate(
        scheme,
        problem,
        newton=cfg.newton,
        tau=cfg.tau,
        T=cfg.T,
        epsilon=cfg.epsilon,
        adaptive=cfg.adaptive if cfg.time_mode == "adaptive" else None,
        csv_path=csv_path,
        snapshots=cfg.snapshots,
    )
    result.files.append(csv_path)
    if cfg.fields:
        for ts, W in sorted(report.snapshots.items()):
            result.files.append(emit_field(scheme.space, scheme.model, W, os.path.join(out, f"field_t{ts:g}.csv"), cfg.samples))
        result.files.append(emit_field(scheme.space, scheme.model, report.final_W, os.path.join(out, "field_final.csv"), cfg.samples))
    result.checks += run_checks("run", report, scheme.model)
    if problem.exact is not None and problem.grad is not None:
        _, Sig, _ = scheme.recover_sigma_q(report.final_W)
        e_rho, e_grad = dg.error_norms(scheme.space, scheme.model, report.final_W, Sig, problem.exact, problem.grad, report.state.t)
        result.data["errors"] = (e_rho, e_grad)
    result.data["report"] = report
    _write_summary(out, result, extra=[scheme.model.describe(), scheme.space.mesh.summary()])
    return result


def _write_summary(out: str, result: ExperimentResult, extra=()) -> None:
    path = os.path.join(out, "summary.txt")
    with open(path, "w") as fh:
        for line in extra:
            fh.write(line + "\n")
        fh.write(result.summary() + "\n")
    result.files.append(path)


def _scheme(mesh, degree: int, model: ModelSpec, problem: Problem | None = None, regularization="auto") -> Scheme:
    space = DgSpace(mesh, degree, model.N)
    ops = build_operators(space, model, orient_facets(mesh), regularization)
    return Scheme(space, model, ops, problem.forcing if problem else None)


# ----------------------------------------------------------------------------
# porous medium


def pm_convergence(out: str, degrees=(1, 2), meshes=(8, 16, 32, 64), T: float = 1.0, tol: float = 1e-12,
                   norm: str = "l2", write_steps: bool = True) -> ExperimentResult:
    """h-convergence against the Barenblatt-type exact solution with τ = h^{p+1}.

    The residual is measured in the mesh-independent L² dual norm: a fixed
    Euclidean tolerance on load-vector coefficients loosens like h^{-1/2} and
    its per-step bias accumulates over the h^{-(p+1)} steps.
    """
    res = ExperimentResult("pm-convergence")
    model = porous_medium(2.0)
    newton = NewtonConfig(tol=tol, s_max=50, norm=norm)
    rows = []
    res.data["rates"] = {}
    res.data["stats"] = []
    for p in degrees:
        errs, hs = [], []
        for M in meshes:
            mesh = build_interval_mesh(0.0, 1.0, M)
            problem = porous_exact(model)
            scheme = _scheme(mesh, p, model, problem)
            h = mesh.h
            tau = T / round(T / h ** (p + 1))
            csv = os.path.join(out, f"steps_p{p}_M{M}.csv") if write_steps else None
            rep = simulate(scheme, problem, newton=newton, tau=tau, T=T, csv_path=csv)
            if csv:
                res.files.append(csv)
            _, Sig, _ = scheme.recover_sigma_q(rep.final_W)
            e_rho, e_grad = dg.error_norms(scheme.space, model, rep.final_W, Sig, problem.exact, problem.grad, T)
            errs.append((e_rho[0], e_grad[0]))
            hs.append(h)
            rows.append([p, M, h, tau, rep.stats.steps, e_rho[0], e_grad[0], rep.wall_time])
            res.data["stats"].append((f"p={p} M={M}", rep))
            res.checks += run_checks(f"p={p} M={M}", rep, model)
            log.info("pm-convergence p=%d M=%d: %.3e %.3e (%.1fs)", p, M, e_rho[0], e_grad[0], rep.wall_time)
        e = np.array(errs)
        r_rho = dg.convergence_rates(e[:, 0], hs)
        r_grad = dg.convergence_rates(e[:, 1], hs)
        res.data["rates"][p] = (r_rho, r_grad, e, hs)
        res.checks.append(Check(f"p={p} density rate", abs(r_rho[-1] - (p + 1)) <= 0.2, f"{r_rho[-1]:.4f} (target {p + 1} ± 0.2)"))
        res.checks.append(Check(f"p={p} gradient rate", abs(r_grad[-1] - p) <= 0.25, f"{r_grad[-1]:.4f} (target {p} ± 0.25)"))
    res.files.append(_table(os.path.join(out, "errors.csv"), ["p", "M", "h", "tau", "steps", "err_rho", "err_grad", "seconds"], rows))
    rate_rows = []
    for p, (rr, rg, _, hs) in res.data["rates"].items():
        for i in range(len(rr)):
            rate_rows.append([p, meshes[i], meshes[i + 1], rr[i], rg[i]])
    res.files.append(_table(os.path.join(out, "rates.csv"), ["p", "M_coarse", "M_fine", "rate_rho", "rate_grad"], rate_rows))
    return res


WAITING_DOMAIN = (-np.pi / 4.0, 5.0 * np.pi / 4.0)


def waiting_setup(degree: int = 5, h: float = 0.04, model=None, regularization="auto"):
    model = model or porous_medium(2.0)
    a, b = WAITING_DOMAIN
    mesh = build_interval_mesh(a, b, int(round((b - a) / h)))
    problem = porous_waiting(model)
    return _scheme(mesh, degree, model, problem, regularization), problem


def run_waiting(epsilon: float, *, tol: float = 1e-6, s_max: int = 100, tau: float = 1e-3, T: float = 0.2,
                csv_path=None, degree: int = 5, h: float = 0.04):
    """Waiting-time run; returns (report, scheme, [(t, u_h(0))])."""
    scheme, problem = waiting_setup(degree, h)
    e0, xi0 = element_of(scheme.space, [0.0])
    trace = []

    def probe(state, row):
        trace.append((state.t, float(scheme.model.u(eval_field(scheme.space, state.W, e0, xi0))[0])))

    rep = simulate(scheme, problem, newton=NewtonConfig(tol=tol, s_max=s_max), tau=tau, T=T, epsilon=epsilon,
                   csv_path=csv_path, callback=probe)
    return rep, scheme, trace


def pm_waiting_time(out: str, epsilon: float = 1e-6, threshold: float = 1e-3) -> ExperimentResult:
    res = ExperimentResult("pm-waiting-time")
    m = 2.0
    csv = os.path.join(out, "steps.csv")
    rep, scheme, trace = run_waiting(epsilon, csv_path=csv)
    res.files.append(csv)
    res.files.append(_table(os.path.join(out, "value_at_0.csv"), ["t", "u_at_0"], [list(r) for r in trace]))
    res.files.append(emit_field(scheme.space, scheme.model, rep.final_W, os.path.join(out, "field_final.csv")))
    ts = waiting_time(m)
    tr = np.array(trace)
    before = tr[tr[:, 0] <= 0.9 * ts + 1e-12, 1]
    crossed = tr[tr[:, 1] > threshold, 0]
    first = float(crossed[0]) if crossed.size else math.inf
    res.data.update(trace=tr, t_star=ts, first_exceed=first, report=rep)
    res.checks.append(Check("support frozen before 0.9 t*", bool(before.max() <= threshold),
                            f"max u_h(0) on [0, {0.9 * ts:.4f}] = {before.max():.3e} (threshold {threshold:g})"))
    res.checks.append(Check("support moves before 2 t*", first < 2 * ts,
                            f"u_h(0) first exceeds {threshold:g} at t = {first:.4f} (2 t* = {2 * ts:.4f})"))
    res.checks += run_checks("waiting-time", rep, scheme.model)
    res.checks.append(_mass_bound_check(rep, scheme, epsilon, 0.2))
    return res


def _mass_bound_check(rep: RunReport, scheme: Scheme, epsilon: float, T: float) -> Check:
    QT = T * scheme.space.mesh.domain_measure
    E0 = rep.stats.entropy0
    bound = math.sqrt(epsilon) * math.sqrt(QT) * math.sqrt(E0)
    drift = rep.stats.max_drift
    return Check(f"mass drift bound eps={epsilon:g}", drift <= bound, f"drift {drift:.3e} <= {bound:.3e}")


def pm_mass_drift(out: str, epsilons=(1e-3, 1e-4, 1e-5)) -> ExperimentResult:
    res = ExperimentResult("pm-mass-drift")
    drifts = []
    rows = []
    res.data["stats"] = []
    for eps in epsilons:
        csv = os.path.join(out, f"steps_eps{eps:g}.csv")
        rep, scheme, _ = run_waiting(eps, csv_path=csv)
        res.files.append(csv)
        drifts.append(rep.stats.max_drift)
        rows.append([eps, rep.stats.max_drift])
        res.data["stats"].append((f"eps={eps:g}", rep))
        res.checks.append(_mass_bound_check(rep, scheme, eps, 0.2))
        res.checks += run_checks(f"eps={eps:g}", rep, scheme.model)
    ratios = [drifts[i] / drifts[i + 1] for i in range(len(drifts) - 1)]
    res.data.update(drifts=drifts, ratios=ratios)
    for i, r in enumerate(ratios):
        res.checks.append(Check(f"drift ratio eps={epsilons[i]:g}/{epsilons[i + 1]:g}", 3.0 <= r <= 30.0, f"{r:.3f} in [3, 30]"))
    res.files.append(_table(os.path.join(out, "drift.csv"), ["epsilon", "max_drift"], rows))
    return res


def first_step_history(scheme: Scheme, problem: Problem, tau: float, epsilon: float, newton: NewtonConfig):
    """Newton history of the first time step with per-iteration Jacobian refresh and exact condition numbers."""
    state, _ = initial_state(scheme, problem.rho0)
    params = SchemeParams(tau=tau, epsilon=epsilon, first_step=True)
    cfg = NewtonConfig(tol=newton.tol, s_max=newton.s_max, jacobian="iterate", cond="exact")
    return newton_solve(
        lambda V: scheme.evaluate(V, state.prev, params, tau),
        lambda V, blocks: scheme.frozen_jacobian(V, params, blocks),
        state.W,
        cfg,
    )


def pm_regularization(out: str, smooth_eps=(0.0, 1e-6, 1e-4, 1e-2), rough_eps=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> ExperimentResult:
    """First-step Newton behaviour against ε for a smooth and a degenerate datum (report only)."""
    res = ExperimentResult("pm-regularization")
    model = porous_medium(2.0)
    cases = []
    smooth = porous_exact(model)
    cases.append(("smooth", lambda: _scheme(build_interval_mesh(0.0, 1.0, 16), 2, model, smooth), smooth,
                  1e-3, smooth_eps, NewtonConfig(tol=1e-10, s_max=50)))
    rough_scheme = lambda: waiting_setup(5, 0.04, model)[0]  # noqa: E731
    cases.append(("waiting", rough_scheme, porous_waiting(model), 1e-3, rough_eps, NewtonConfig(tol=1e-12, s_max=50)))
    for name, make, problem, tau, eps_list, newton in cases:
        rows = []
        scheme = make()
        for eps in eps_list:
            r = first_step_history(scheme, problem, tau, eps, newton)
            for s_, rn, linf, cond in r.history:
                rows.append([eps, s_, rn, linf, cond])
            res.data[(name, eps)] = r
            res.checks.append(Check(f"{name} eps={eps:g} first step", True,
                                    f"{'converged' if r.converged else 'not converged'} after {r.iterations} iterations, "
                                    f"residual {r.residual_norm:.2e}, max cond {max((h[3] for h in r.history[1:]), default=math.nan):.2e}"))
        res.files.append(_table(os.path.join(out, f"newton_{name}.csv"), ["epsilon", "s", "residual", "linf_W", "cond"], rows))
    return res


# ----------------------------------------------------------------------------
# SKT


def skt_convergence_model():
    return skt([[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]], np.zeros((2, 3)), box_cap=[1.0, 1.0])


def skt_convergence(out: str, meshes=(4, 8, 16), degree: int = 1, T: float = 0.5, tol: float = 1e-6) -> ExperimentResult:
    res = ExperimentResult("skt-convergence")
    model = skt_convergence_model()
    newton = NewtonConfig(tol=tol, s_max=50)
    errs, hs, rows = [], [], []
    res.data["stats"] = []
    for nx in meshes:
        mesh = build_structured_tri_mesh(nx, nx)
        problem = skt_exact(model)
        scheme = _scheme(mesh, degree, model, problem)
        h = mesh.h
        tau = T / round(T / h ** (degree + 1))
        csv = os.path.join(out, f"steps_nx{nx}.csv")
        rep = simulate(scheme, problem, newton=newton, tau=tau, T=T, csv_path=csv)
        res.files.append(csv)
        _, Sig, _ = scheme.recover_sigma_q(rep.final_W)
        e_rho, e_grad = dg.error_norms(scheme.space, model, rep.final_W, Sig, problem.exact, problem.grad, T)
        errs.append((e_rho, e_grad))
        hs.append(h)
        rows.append([nx, h, tau, rep.stats.steps, e_rho[0], e_grad[0], e_rho[1], e_grad[1], rep.wall_time])
        res.data["stats"].append((f"nx={nx}", rep))
        res.checks += run_checks(f"nx={nx}", rep, model)
    e = np.array(errs)  # (meshes, 2, N)
    r_rho = dg.convergence_rates(e[:, 0, 0], hs)
    r_grad = dg.convergence_rates(e[:, 1, 0], hs)
    res.data.update(rates=(r_rho, r_grad), errors=e, hs=hs)
    p = degree
    res.checks.append(Check("species 1 density rate", abs(r_rho[-1] - (p + 1)) <= 0.2, f"{r_rho[-1]:.4f} (target {p + 1} ± 0.2)"))
    res.checks.append(Check("species 1 gradient rate", abs(r_grad[-1] - p) <= 0.25, f"{r_grad[-1]:.4f} (target {p} ± 0.25)"))
    res.files.append(_table(os.path.join(out, "errors.csv"),
                            ["nx", "h", "tau", "steps", "err_rho1", "err_grad1", "err_rho2", "err_grad2", "seconds"], rows))
    rate_rows = [[meshes[i], meshes[i + 1], r_rho[i], r_grad[i]] for i in range(len(r_rho))]
    res.files.append(_table(os.path.join(out, "rates.csv"), ["nx_coarse", "nx_fine", "rate_rho1", "rate_grad1"], rate_rows))
    return res


def skt_turing_run(out: str, nx: int = 10, degree: int = 3, T: float = 10.0, tol: float = 1e-6) -> ExperimentResult:
    res = ExperimentResult("skt-turing")
    model = skt(TURING_A, TURING_B, box_cap=[10.0, 10.0])
    mesh = build_structured_tri_mesh(nx, nx)
    problem = skt_turing(model)
    scheme = _scheme(mesh, degree, model, problem)
    var0 = dg.field_variance(scheme.space, model, rho0=problem.rho0)
    csv = os.path.join(out, "steps.csv")
    snaps = tuple(t for t in (0.5, T) if t <= T)
    rep = simulate(scheme, problem, newton=NewtonConfig(tol=tol, s_max=50), T=T,
                   adaptive=AdaptiveConfig(tau1=1e-4), csv_path=csv, snapshots=snaps)
    res.files.append(csv)
    for ts, W in sorted(rep.snapshots.items()):
        res.files.append(emit_field(scheme.space, model, W, os.path.join(out, f"field_t{ts:g}.csv")))
    var = dg.field_variance(scheme.space, model, rep.final_W)
    res.data.update(report=rep, var0=var0, var=var)
    res.checks.append(Check("reaches final time", abs(rep.state.t - T) <= 1e-12 * T, f"t = {rep.state.t:.6g}, {rep.stats.steps} steps, {rep.rejected_steps} rejected"))
    res.checks.append(Check("pattern forms", var[0] > 10 * var0[0], f"var(rho_1) {var0[0]:.3e} -> {var[0]:.3e}"))
    res.checks.append(Check("rho_1 stays positive", bool(rep.stats.min_u[0] > 0), f"min rho_1 = {rep.stats.min_u[0]:.3e}"))
    res.checks += run_checks("turing", rep, model)
    return res


# ----------------------------------------------------------------------------
# mixture


def mixture_boundedness(out: str, M: int = 32, degree: int = 2, tau: float = 1e-4, T: float = 0.1) -> ExperimentResult:
    """Two-species volume-filling mixture started close to every face of the simplex."""
    res = ExperimentResult("mixture-boundedness")
    model = volume_filling_mixture([1.0, 0.5])
    mesh = build_interval_mesh(0.0, 1.0, M)
    problem = mixture_fronts(model)
    scheme = _scheme(mesh, degree, model, problem)
    csv = os.path.join(out, "steps.csv")
    rep = simulate(scheme, problem, newton=NewtonConfig(tol=1e-10, s_max=50), tau=tau, T=T, csv_path=csv)
    res.files.append(csv)
    res.files.append(emit_field(scheme.space, model, rep.final_W, os.path.join(out, "field_final.csv")))
    res.data["report"] = rep
    res.checks += run_checks("mixture", rep, model)
    drift = rep.stats.max_drift
    res.checks.append(Check("mixture mass conservation", drift <= 10 * rep.stats.steps * 1e-10, f"drift {drift:.3e}"))
    return res


PRESETS: dict[str, Callable[..., ExperimentResult]] = {
    "pm-convergence": pm_convergence,
    "pm-waiting-time": pm_waiting_time,
    "pm-mass-drift": pm_mass_drift,
    "pm-regularization": pm_regularization,
    "skt-convergence": skt_convergence,
    "skt-turing": skt_turing_run,
    "mixture-boundedness": mixture_boundedness,
}


def run_experiment(name: str, out_dir: str = "out", **overrides) -> ExperimentResult:
    if name not in PRESETS:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    out = os.path.join(out_dir, name)
    os.makedirs(out, exist_ok=True)
    result = PRESETS[name](out, **overrides)
    _write_summary(out, result)
    return result
