"""Run configuration: INI parsing, validation, serialization and initial data.

The document is INI with flat sections; every key is optional and falls back
to the defaults below::

    [grid]    Lx, Nx, Ny
    [model]   L, sigma, potential (logarithmic), theta, theta_c, rho, c0,
              eps (a number in (0, 1) or "exact")
    [step]    tau, scheme (convex_split | fully_implicit), newton_tol,
              newton_max, jacobian_reuse
    [init]    kind (constant | seeded_noise | checkpoint), seed, amplitude,
              mean, modes_x, modes_y, y_weight, path
    [run]     T_end, steady_tol
    [output]  dir, cadence, checkpoint_every
    [sweep]   axis (L | eps | mean | tau | grid), values, workers
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

import numpy as np

from .errors import ParseError, ValidationError
from .fields import BulkSurfacePair, generalized_mean
from .grid import SlabGrid, build_grid
from .model import ModelParams
from .potentials import Logarithmic, PotentialSpec
from .stepper import Scheme, StepConfig

SCHEMES = tuple(s.value for s in Scheme)
INIT_KINDS = ("constant", "seeded_noise", "checkpoint")
SWEEP_AXES = ("L", "eps", "mean", "tau", "grid")
EXACT_MARGIN = 1e-6


@dataclass(frozen=True)
class GridSection:
    Lx: float = 16.0
    Nx: int = 64
    Ny: int = 33


@dataclass(frozen=True)
class ModelSection:
    L: float = 1.0
    sigma: float = 1.0
    potential: str = "logarithmic"
    theta: float = 0.3
    theta_c: float = 1.0
    rho: float = 1.0
    c0: float = 0.0
    eps: Optional[float] = None


@dataclass(frozen=True)
class StepSection:
    tau: float = 1e-3
    scheme: str = "convex_split"
    newton_tol: float = 1e-10
    newton_max: int = 50
    jacobian_reuse: int = 20


@dataclass(frozen=True)
class InitSection:
    kind: str = "seeded_noise"
    seed: int = 7
    amplitude: float = 0.05
    mean: float = 0.1
    modes_x: int = 8
    modes_y: int = 1
    y_weight: float = 0.02
    path: str = ""


@dataclass(frozen=True)
class RunSection:
    T_end: float = 10.0
    steady_tol: float = 1e-9


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    cadence: int = 10
    checkpoint_every: int = 1000


@dataclass(frozen=True)
class SweepSection:
    axis: str = "L"
    values: Tuple[str, ...] = ("0.1", "0.01", "0.001", "0")
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    step: StepSection = field(default_factory=StepSection)
    init: InitSection = field(default_factory=InitSection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    # builders for the numerical objects
    def build_grid(self) -> SlabGrid:
        return build_grid(self.grid.Lx, self.grid.Nx, self.grid.Ny)

    def potential(self) -> PotentialSpec:
        m = self.model
        return PotentialSpec(Logarithmic(m.theta, m.theta_c), rho=m.rho, c0=m.c0)

    def params(self) -> ModelParams:
        m = self.model
        return ModelParams(L=m.L, sigma=m.sigma, potential=self.potential(), eps=m.eps)

    def step_config(self) -> StepConfig:
        s = self.step
        return StepConfig(tau=s.tau, scheme=s.scheme, newton_tol=s.newton_tol,
                          newton_max=s.newton_max, jacobian_reuse=s.jacobian_reuse)

    def with_value(self, section: str, key: str, value) -> "RunConfig":
        return replace(self, **{section: replace(getattr(self, section), **{key: value})})


_SECTION_TYPES = {
    "grid": GridSection, "model": ModelSection, "step": StepSection, "init": InitSection,
    "run": RunSection, "output": OutputSection, "sweep": SweepSection,
}


def _key_lines(text):
    """Map ``(section, key)`` to 1-based line numbers, plus section header lines."""
    where, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where.setdefault((section, None), n)
        elif section is not None:
            for sep in "=:":
                if sep in line:
                    where.setdefault((section, line.split(sep, 1)[0].strip().lower()), n)
                    break
    return where


def _convert(kind, raw: str, name: str):
    raw = raw.strip()
    if name == "eps":
        return None if raw.lower() in ("exact", "none", "") else float(raw)
    if name == "values":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError("not finite")
        return value
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document.

    Raises :class:`ParseError` (with line number) for syntax, unknown names
    and unconvertible values, and :class:`ValidationError` listing every
    violated constraint.
    """
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None
    lines = _key_lines(text)
    sections = {}
    for name in cp.sections():
        if name not in _SECTION_TYPES:
            raise ParseError(f"unknown section [{name}]", line=lines.get((name, None)))
        cls = _SECTION_TYPES[name]
        known = {f.name.lower(): f for f in fields(cls)}
        values = {}
        for key, raw in cp.items(name):
            line = lines.get((name, key))
            if key not in known:
                raise ParseError(f"unknown key '{key}' in [{name}]", line=line, field=key)
            f = known[key]
            try:
                values[f.name] = _convert(f.type, raw, f.name)
            except ValueError:
                raise ParseError(f"bad value {raw!r} for {name}.{f.name}", line=line,
                                 field=f"{name}.{f.name}") from None
        sections[name] = cls(**values)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = []
    g, m, s, i, r, o, w = cfg.grid, cfg.model, cfg.step, cfg.init, cfg.run, cfg.output, cfg.sweep
    if not g.Lx > 0:
        v.append("grid.Lx must be positive")
    if g.Nx < 4 or g.Nx % 2:
        v.append("grid.Nx must be an even integer >= 4")
    if g.Ny < 3:
        v.append("grid.Ny must be >= 3")
    if m.L < 0 or m.sigma < 0:
        v.append("model.L and model.sigma must be nonnegative")
    elif m.L > 0 and m.sigma == 0:
        v.append("model: L > 0 with sigma = 0 is outside the regime matrix "
                 "(admissible: L > 0 with sigma > 0, or L = 0 with sigma >= 0)")
    if m.potential != "logarithmic":
        v.append("model.potential must be 'logarithmic'")
    if not m.theta > 0:
        v.append("model.theta must be positive")
    if m.theta_c < 0:
        v.append("model.theta_c must be nonnegative")
    if not m.rho > 0:
        v.append("model.rho must be positive")
    if m.c0 < 0:
        v.append("model.c0 must be nonnegative")
    if m.eps is not None and not 0 < m.eps < 1:
        v.append("model.eps must lie in (0, 1) or be 'exact'")
    if not s.tau > 0:
        v.append("step.tau must be positive")
    if s.scheme not in SCHEMES:
        v.append(f"step.scheme must be one of {', '.join(SCHEMES)}")
    if not s.newton_tol > 0 or s.newton_max < 1:
        v.append("step.newton_tol must be positive and step.newton_max >= 1")
    if s.jacobian_reuse < 1:
        v.append("step.jacobian_reuse must be >= 1")
    if i.kind not in INIT_KINDS:
        v.append(f"init.kind must be one of {', '.join(INIT_KINDS)}")
    if not -1 < i.mean < 1:
        v.append("init.mean must lie strictly inside (-1, 1)")
    if i.amplitude < 0:
        v.append("init.amplitude must be nonnegative")
    elif i.kind == "seeded_noise" and m.eps is None and abs(i.mean) + 2 * i.amplitude >= 1 - EXACT_MARGIN:
        v.append("init: |mean| + 2 * amplitude must stay below 1 in exact mode")
    if i.seed < 0 or i.seed >= 2**64:
        v.append("init.seed must be a 64-bit unsigned integer")
    if i.y_weight < 0:
        v.append("init.y_weight must be nonnegative")
    if i.modes_x < 0 or i.modes_y < 0:
        v.append("init.modes_x and init.modes_y must be nonnegative")
    if i.kind == "checkpoint" and not i.path:
        v.append("init.path is required for checkpoint initial data")
    if not r.T_end > 0:
        v.append("run.T_end must be positive")
    if r.steady_tol < 0:
        v.append("run.steady_tol must be nonnegative")
    if o.cadence < 1:
        v.append("output.cadence must be >= 1")
    if o.checkpoint_every < 0:
        v.append("output.checkpoint_every must be >= 0 (0 disables)")
    elif s.jacobian_reuse >= 1 and o.checkpoint_every % s.jacobian_reuse:
        v.append("output.checkpoint_every must be a multiple of step.jacobian_reuse")
    if w.axis not in SWEEP_AXES:
        v.append(f"sweep.axis must be one of {', '.join(SWEEP_AXES)}")
    if w.workers < 1:
        v.append("sweep.workers must be >= 1")
    if v:
        raise ValidationError(v)


def _format(value) -> str:
    if value is None:
        return "exact"
    if isinstance(value, tuple):
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    out = []
    for name in _SECTION_TYPES:
        out.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in fields(sec):
            out.append(f"{f.name} = {_format(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def physics_text(cfg: RunConfig) -> str:
    """Canonical text of the grid, model and step settings.

    Its digest tags checkpoints so that resuming under different physics is
    detected; initial data and run length are deliberately excluded.
    """
    return serialize(replace(cfg, init=InitSection(), run=RunSection(), output=OutputSection(),
                             sweep=SweepSection()))


# -- initial data --------------------------------------------------------

def seeded_noise(grid: SlabGrid, seed: int, amplitude: float, mean: float,
                 modes_x: int = 8, modes_y: int = 1, y_weight: float = 0.02) -> np.ndarray:
    """Random smooth field with a given generalized mean.

    A sum of Fourier modes ``cos/sin(2 pi k x / Lx) cos(l pi y)`` with
    ``k <= modes_x``, ``l <= modes_y`` and standard normal coefficients from
    a PCG64 generator, scaled to maximum modulus ``amplitude`` and shifted
    so the generalized mean equals ``mean``.  Terms with ``l >= 1`` are
    weighted by ``y_weight``.

    The strip is only one unit wide, so y-modes relax on much faster time
    scales than the x-modes; a small ``y_weight`` keeps the data resolved by
    moderate step sizes while still breaking the y-symmetry that would make
    all boundary regimes coincide.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    X, Y = grid.coords()
    f = np.zeros(grid.shape)
    for k in range(modes_x + 1):
        for l in range(modes_y + 1):
            if k == 0 and l == 0:
                continue
            a, b = rng.standard_normal(2)
            arg = 2.0 * np.pi * k * X / grid.Lx
            w = 1.0 if l == 0 else y_weight
            f += w * (a * np.cos(arg) + b * np.sin(arg)) * np.cos(l * np.pi * Y)
    peak = float(np.max(np.abs(f))) if f.size else 0.0
    phi = amplitude * f / peak if peak > 0 else f
    phi = phi - generalized_mean(grid, (phi, grid.trace(phi)))
    return phi + mean


def initial_field(cfg: RunConfig, grid: SlabGrid) -> BulkSurfacePair:
    i = cfg.init
    if i.kind == "constant":
        return BulkSurfacePair.constant(grid, i.mean)
    if i.kind == "seeded_noise":
        return BulkSurfacePair.from_bulk(
            grid, seeded_noise(grid, i.seed, i.amplitude, i.mean, i.modes_x, i.modes_y, i.y_weight))
    raise ValueError("checkpoint initial data is loaded by the runner")
