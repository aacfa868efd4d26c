"""INI run configuration: parsing, validation and object construction."""

from __future__ import annotations

import ast
import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import build_operators
from .dgspace import DgSpace
from .errors import InvalidArgument
from .mesh import build_interval_mesh, build_structured_tri_mesh, orient_facets
from .models import ModelSpec, porous_medium, skt, tumor_growth, volume_filling_mixture
from .problems import Problem, make_problem
from .stepper import AdaptiveConfig, NewtonConfig
from .system import Scheme

MODEL_KEYS = {
    "porous_medium": {"m"},
    "skt": {"a", "b", "box_cap"},
    "mixture": {"p"},
    "tumor_growth": {"beta", "theta"},
}

SECTIONS = {
    "model": {"name"} | set().union(*MODEL_KEYS.values()),
    "mesh": {"dim", "a", "b", "M", "nx", "ny", "box", "eta"},
    "scheme": {"degree", "flux", "alpha", "epsilon", "regularization", "extra_quadrature"},
    "time": {"mode", "tau", "T", "tau1", "shrink", "growth", "retry", "tau_max", "snapshots"},
    "newton": {"tol", "s_max", "norm", "jacobian", "cond"},
    "initial": {"datum", "value"},
    "output": {"dir", "csv", "fields", "samples", "preset"},
}


@dataclass
class RunConfig:
    model: dict
    mesh: dict
    degree: int = 1
    flux: str = "directional"
    alpha: float = 1.0
    eta: float = 1.0
    epsilon: float = 0.0
    regularization: str | int = "auto"
    extra_quadrature: int = 0
    time_mode: str = "fixed"
    tau: float | None = None
    T: float = 1.0
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    snapshots: tuple = ()
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    datum: str = "constant"
    value: object = None
    out_dir: str = "out"
    csv_name: str = "steps.csv"
    fields: bool = True
    samples: int = 4
    preset: str | None = None

    # -- construction ---------------------------------------------------------

    def build_model(self) -> ModelSpec:
        return build_model(self.model)

    def build_mesh(self):
        m = self.mesh
        if m["dim"] == 1:
            return build_interval_mesh(m["a"], m["b"], m["M"], eta=self.eta)
        return build_structured_tri_mesh(m["nx"], m["ny"], box=m["box"], eta=self.eta)

    def build(self) -> tuple[Scheme, Problem]:
        model = self.build_model()
        mesh = self.build_mesh()
        space = DgSpace(mesh, self.degree, model.N, extra_quadrature=self.extra_quadrature)
        orientation = orient_facets(mesh, self.flux, self.alpha)
        ops = build_operators(space, model, orientation, self.regularization)
        problem = make_problem(self.datum, model, self.value)
        return Scheme(space, model, ops, problem.forcing), problem


def build_model(spec: dict) -> ModelSpec:
    name = spec.get("name")
    if name not in MODEL_KEYS:
        raise InvalidArgument(f"unknown model {name!r}; choose from {sorted(MODEL_KEYS)}")
    extra = set(spec) - {"name"} - MODEL_KEYS[name]
    if extra:
        raise InvalidArgument(f"keys {sorted(extra)} are not parameters of model {name!r}")
    try:
        if name == "porous_medium":
            return porous_medium(float(spec.get("m", 2.0)))
        if name == "skt":
            return skt(spec["a"], spec["b"], spec.get("box_cap"))
        if name == "mixture":
            return volume_filling_mixture(spec["p"])
        return tumor_growth(float(spec["beta"]), float(spec["theta"]))
    except KeyError as exc:
        raise InvalidArgument(f"model {name!r} is missing parameter {exc.args[0]!r}") from None


def _value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "yes", "on", "1", "false", "no", "off", "0"):
        return v.lower() in ("true", "yes", "on", "1")
    raise InvalidArgument(f"expected a boolean, got {v!r}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate an INI document; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case (M vs m)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed configuration: {exc}") from None

    unknown_sections = set(cp.sections()) - set(SECTIONS)
    if unknown_sections:
        raise InvalidArgument(f"unknown sections: {sorted(unknown_sections)}")
    unknown = [f"[{s}] {k}" for s in cp.sections() for k in cp[s] if k not in SECTIONS[s]]
    if unknown:
        raise InvalidArgument(f"unknown keys: {', '.join(sorted(unknown))}")
    for required in ("model", "mesh"):
        if required not in cp:
            raise InvalidArgument(f"missing section [{required}]")

    sec = {s: {k: _value(v) for k, v in cp[s].items()} for s in cp.sections()}
    get = lambda s, k, d=None: sec.get(s, {}).get(k, d)  # noqa: E731

    model = dict(sec["model"])
    if "name" not in model:
        raise InvalidArgument("[model] needs a name")
    mesh = dict(sec["mesh"])
    eta = float(mesh.pop("eta", 1.0))
    dim = int(mesh.get("dim", 2 if "nx" in mesh else 1))
    mesh["dim"] = dim
    if dim == 1:
        for k in ("a", "b", "M"):
            if k not in mesh:
                raise InvalidArgument(f"1D mesh needs {k}")
        mesh["a"], mesh["b"] = float(mesh["a"]), float(mesh["b"])
        if not isinstance(mesh["M"], int):
            raise InvalidArgument("M must be an integer")
    elif dim == 2:
        if "nx" not in mesh:
            raise InvalidArgument("2D mesh needs nx")
        mesh.setdefault("ny", mesh["nx"])
        mesh.setdefault("box", ((0.0, 0.0), (1.0, 1.0)))
    else:
        raise InvalidArgument(f"dimension must be 1 or 2, got {dim}")

    epsilon = float(get("scheme", "epsilon", 0.0))
    if epsilon < 0:
        raise InvalidArgument("epsilon must be nonnegative")
    degree = get("scheme", "degree", 1)
    if not isinstance(degree, int) or degree < 0:
        raise InvalidArgument("degree must be a nonnegative integer")

    mode = get("time", "mode", "fixed")
    if mode not in ("fixed", "adaptive"):
        raise InvalidArgument(f"time mode must be fixed or adaptive, got {mode!r}")
    T = float(get("time", "T", 1.0))
    if T < 0:
        raise InvalidArgument("T must be nonnegative")
    tau = get("time", "tau")
    if mode == "fixed":
        if tau is None:
            raise InvalidArgument("fixed time stepping needs tau")
        tau = float(tau)
        if not tau > 0:
            raise InvalidArgument("tau must be positive")
    adaptive = AdaptiveConfig(
        tau1=float(get("time", "tau1", 1e-4)),
        shrink=float(get("time", "shrink", 0.2)),
        growth=float(get("time", "growth", 1.1)),
        retry=_bool(get("time", "retry", True)),
        tau_max=float(get("time", "tau_max", math.inf)),
    )
    snaps = get("time", "snapshots", ())
    snaps = tuple(float(s) for s in np.atleast_1d(snaps)) if snaps != () else ()

    newton = NewtonConfig(
        tol=float(get("newton", "tol", 1e-10)),
        s_max=int(get("newton", "s_max", 50)),
        norm=str(get("newton", "norm", "euclidean")),
        jacobian=str(get("newton", "jacobian", "step")),
        cond=str(get("newton", "cond", "none")),
    )
    reg = get("scheme", "regularization", "auto")
    cfg = RunConfig(
        model=model,
        mesh=mesh,
        degree=degree,
        flux=str(get("scheme", "flux", "directional")),
        alpha=float(get("scheme", "alpha", 1.0)),
        eta=eta,
        epsilon=epsilon,
        regularization=reg,
        extra_quadrature=int(get("scheme", "extra_quadrature", 0)),
        time_mode=mode,
        tau=tau,
        T=T,
        adaptive=adaptive,
        snapshots=snaps,
        newton=newton,
        datum=str(get("initial", "datum", "constant")),
        value=get("initial", "value"),
        out_dir=str(get("output", "dir", "out")),
        csv_name=str(get("output", "csv", "steps.csv")),
        fields=_bool(get("output", "fields", True)),
        samples=int(get("output", "samples", 4)),
        preset=get("output", "preset"),
    )
    # fail early on model parameter errors (e.g. m outside (1, 2], SKT without box_cap)
    cfg.build_model()
    if cfg.flux not in ("directional", "standard"):
        raise InvalidArgument(f"unknown flux rule {cfg.flux!r}")
    if not 0.0 <= cfg.alpha <= 1.0:
        raise InvalidArgument("alpha must lie in [0, 1]")
    if cfg.eta <= 0:
        raise InvalidArgument("eta must be positive")
    if cfg.samples < 1:
        raise InvalidArgument("samples must be positive")
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
