"""Closed-form initial data, exact solutions and forcings of the built-in test problems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import manufactured_source
from .errors import InvalidArgument
from .models import SKT, ModelSpec, PorousMedium, VolumeFillingMixture
from .system import Forcing


@dataclass
class Problem:
    """Initial datum ρ₀(x) -> (N, npts), optional exact solution and forcing."""

    name: str
    rho0: Callable
    exact: Callable | None = None  # (t, x) -> (N, npts)
    grad: Callable | None = None  # (t, x) -> (N, d, npts)
    forcing: Forcing | None = None


def _x(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


# -- porous medium ------------------------------------------------------------


def porous_exact(model: PorousMedium, alpha: float = 2.0, beta: float = 5.0) -> Problem:
    """ρ = [(m−1)(x−α)²/(2m(m+1)(β−t))]^{1/(m−1)} with the matching Neumann flux."""
    m = model.m

    def rho(t, x):
        x = _x(x)[:, 0]
        return (((m - 1.0) * (x - alpha) ** 2 / (2.0 * m * (m + 1.0) * (beta - t))) ** (1.0 / (m - 1.0)))[None]

    def grad(t, x):
        x = _x(x)[:, 0]
        r = rho(t, x[:, None])[0]
        return (2.0 / (m - 1.0) * r / (x - alpha))[None, None]

    def neumann(t, x, n):
        # g_N = ∂_x(ρ^m) n = m ρ^{m−1} ρ_x n
        r = rho(t, x)[0]
        return (m * r ** (m - 1.0) * grad(t, x)[0, 0] * np.asarray(n)[:, 0])[None]

    return Problem("pm-exact", lambda x: rho(0.0, x), rho, grad, Forcing(neumann=neumann))


def porous_waiting(model: PorousMedium) -> Problem:
    """ρ₀ = sin^{2/(m−1)} on [0, π], zero elsewhere."""
    m = model.m

    def rho0(x):
        x = _x(x)[:, 0]
        inside = (x >= 0.0) & (x <= np.pi)
        return np.where(inside, np.abs(np.sin(np.clip(x, 0.0, np.pi))) ** (2.0 / (m - 1.0)), 0.0)[None]

    return Problem("pm-waiting", rho0)


def waiting_time(m: float) -> float:
    """t* = (m−1)/(2m(m+1))."""
    return (m - 1.0) / (2.0 * m * (m + 1.0))


# -- SKT ----------------------------------------------------------------------


def skt_exact(model: SKT) -> Problem:
    """Manufactured pair of cosine modes decaying like e^{−t}, with its volume source."""
    pi = np.pi

    def rho(t, x):
        x = _x(x)
        X, Y, e = x[:, 0], x[:, 1], np.exp(-t)
        return np.stack(
            [0.25 * np.cos(2 * pi * X) * np.cos(pi * Y) * e + 0.5, 0.25 * np.cos(pi * X) * np.cos(2 * pi * Y) * e + 0.5]
        )

    def grad(t, x):
        x = _x(x)
        X, Y, e = x[:, 0], x[:, 1], np.exp(-t)
        g1 = np.stack(
            [-0.5 * pi * np.sin(2 * pi * X) * np.cos(pi * Y) * e, -0.25 * pi * np.cos(2 * pi * X) * np.sin(pi * Y) * e]
        )
        g2 = np.stack(
            [-0.25 * pi * np.sin(pi * X) * np.cos(2 * pi * Y) * e, -0.5 * pi * np.cos(pi * X) * np.sin(2 * pi * Y) * e]
        )
        return np.stack([g1, g2])

    src = manufactured_source(model, rho, 2)
    return Problem("skt-exact", lambda x: rho(0.0, x), rho, grad, Forcing(source=src))


def skt_turing(model: SKT) -> Problem:
    """Equilibrium (2, 0.5) with two truncated quadratic bumps on the first species."""

    def g(x, y):
        return np.maximum(1.0 - 64.0 * x**2 - 8.0 * y**2, 0.0)

    def rho0(x):
        x = _x(x)
        X, Y = x[:, 0], x[:, 1]
        r1 = 2.0 + 0.31 * g(X - 0.25, Y - 0.25) + 0.31 * g(X - 0.75, Y - 0.75)
        return np.stack([r1, np.full_like(X, 0.5)])

    return Problem("skt-turing", rho0)


# -- mixtures -----------------------------------------------------------------


def mixture_fronts(model: VolumeFillingMixture, width: float = 0.05, floor: float = 0.01) -> Problem:
    """Species separated by smooth fronts along x, each close to 0 and to the simplex face."""
    N = model.N

    def rho0(x):
        x = _x(x)[:, 0]
        centres = (np.arange(N) + 0.5) / N
        bumps = np.stack([np.exp(-(((x - c) / (0.5 / N)) ** 2) / width) for c in centres])
        frac = bumps / bumps.sum(axis=0, keepdims=True)
        return floor + (1.0 - (N + 1) * floor) * frac

    return Problem("mixture-fronts", rho0)


# -- registry -------------------------------------------------------------------


def constant(model: ModelSpec, value) -> Problem:
    v = np.broadcast_to(np.asarray(value, dtype=float), (model.N,)).copy()
    if not model.domain.distance(v[None])[0] > 0:
        raise InvalidArgument(f"constant state {v.tolist()} is not inside the admissible set")

    def rho0(x):
        return np.repeat(v[:, None], _x(x).shape[0], axis=1)

    return Problem("constant", rho0)


PROBLEMS = {
    "pm-exact": (PorousMedium, porous_exact),
    "pm-waiting": (PorousMedium, porous_waiting),
    "skt-exact": (SKT, skt_exact),
    "skt-turing": (SKT, skt_turing),
    "mixture-fronts": (VolumeFillingMixture, mixture_fronts),
}


def make_problem(name: str, model: ModelSpec, value=None) -> Problem:
    if name == "constant":
        if value is None:
            raise InvalidArgument("a constant initial datum needs a value")
        return constant(model, value)
    if name not in PROBLEMS:
        raise InvalidArgument(f"unknown initial datum {name!r}; choose from {sorted(PROBLEMS) + ['constant']}")
    kind, factory = PROBLEMS[name]
    if not isinstance(model, kind):
        raise InvalidArgument(f"initial datum {name!r} requires a {kind.name} model, got {model.name}")
    return factory(model)
