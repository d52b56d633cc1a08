"""Measured quantities along trajectories and post-processing fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FitError, ParamError, RegimeError
from .grid import SlabGrid, a_bulk, a_surface

CSV_COLUMNS = ["t", "E", "mean", "D", "velocity", "delta_sep", "max_abs_phi", "newton_iters"]


@dataclass
class TrajectoryRecord:
    t0: float
    energy0: float
    mean0: float
    delta0: float
    rows: list = field(default_factory=list)
    status: str = "completed"
    steps: int = 0
    newton_total: int = 0
    cum_dissipation: float = 0.0
    max_energy_increase: float = -math.inf
    max_step_defect: float = 0.0
    max_mean_drift: float = 0.0
    min_delta_sep: float = math.inf
    final_state: object = None

    @classmethod
    def start(cls, state, energy, mean):
        return cls(t0=state.t, energy0=energy, mean0=mean, delta0=separation_delta(state.phi))

    def accumulate(self, d):
        self.steps += 1
        self.newton_total += d.newton_iters
        self.cum_dissipation += d.tau * d.dissipation
        self.max_energy_increase = max(self.max_energy_increase, d.energy_change)
        self.max_step_defect = max(self.max_step_defect, abs(d.balance_defect))
        self.max_mean_drift = max(self.max_mean_drift, abs(d.mean - self.mean0))
        self.min_delta_sep = min(self.min_delta_sep, d.delta_sep)

    def append(self, d):
        if self.rows and d.t <= self.rows[-1].t:
            raise ValueError("sample times must increase strictly")
        self.rows.append(d)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    @property
    def final_energy(self) -> float:
        return self.rows[-1].energy if self.rows else self.energy0

    def csv_rows(self):
        for r in self.rows:
            yield [r.t, r.energy, r.mean, r.dissipation, r.velocity, r.delta_sep, r.max_abs_phi, r.newton_iters]

    def to_csv(self, stream=None) -> str:
        out = stream if stream is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.csv_rows():
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        return out.getvalue() if stream is None else ""


def separation_delta(pair) -> float:
    """``1 - max(|phi|, |psi|)``; nonpositive values only occur with regularization."""
    bulk, surf = pair
    return 1.0 - max(float(np.max(np.abs(bulk))), float(np.max(np.abs(surf))))


def separation_onset(record: TrajectoryRecord, threshold: float):
    """First sampled time after which ``delta_sep >= threshold`` holds for good.

    Returns ``None`` when the margin is below the threshold at the last sample.
    """
    d = record.column("delta_sep")
    t = record.times
    if d.size == 0 or d[-1] < threshold:
        return None
    bad = np.nonzero(d < threshold)[0]
    return float(t[0] if bad.size == 0 else t[bad[-1] + 1])


def separation_plateau(record: TrajectoryRecord, t_from: float) -> float:
    """Smallest sampled margin at times ``>= t_from``."""
    d = record.column("delta_sep")
    t = record.times
    sel = d[t >= t_from]
    if sel.size == 0:
        raise ValueError(f"no samples at t >= {t_from}")
    return float(np.min(sel))


@dataclass
class LevelSetLadder:
    delta: float
    k: np.ndarray
    z: np.ndarray

    def first_empty(self) -> Optional[int]:
        idx = np.nonzero(self.z == 0)[0]
        return int(idx[0]) if idx.size else None


def ladder_levels(delta: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    return 1.0 - delta - delta / 2.0 ** n


def level_set_measures(grid: SlabGrid, pair, delta: float, n_max: int, lower=False) -> LevelSetLadder:
    """Measures of ``{phi >= k_n}`` plus ``{psi >= k_n}`` along the ladder.

    ``lower=True`` treats the symmetric ladder ``{phi <= -k_n}``.
    """
    if not 0.0 < delta < 1.0:
        raise ParamError("delta must lie in (0, 1)")
    if n_max < 1:
        raise ParamError("n_max must be >= 1")
    bulk, surf = pair
    sign = -1.0 if lower else 1.0
    b = sign * np.asarray(bulk)
    s = sign * np.asarray(surf)
    k = ladder_levels(delta, n_max)
    z = np.array([
        float(np.sum(grid.weights[b >= kn]) + grid.hx * np.count_nonzero(s >= kn)) for kn in k
    ])
    return LevelSetLadder(delta, k, z)


def degiorgi_threshold(C: float, b: float, eps: float) -> float:
    if not (C > 0 and b > 1 and eps > 0):
        raise ParamError("need C > 0, b > 1, eps > 0")
    return C ** (-1.0 / eps) * b ** (-1.0 / eps**2)


@dataclass
class DeGiorgiCheck:
    threshold: float
    applicable: bool
    decay_holds: bool
    recursion_holds: bool

    @property
    def passed(self) -> bool:
        return self.applicable and self.decay_holds


def degiorgi_check(z, C: float, b: float, eps: float, rtol=1e-12) -> DeGiorgiCheck:
    """Check the geometric decay bound of the iteration lemma on a series.

    ``applicable`` is false when ``z[0]`` exceeds the threshold, in which case
    the lemma gives no conclusion and the check does not pass.
    """
    z = np.asarray(z, dtype=float)
    s = degiorgi_threshold(C, b, eps)
    n = np.arange(z.size)
    bound = s * b ** (-n / eps)
    applicable = bool(z[0] <= s * (1 + rtol))
    decay = bool(np.all(z <= bound * (1 + rtol)))
    rec = bool(np.all(z[1:] <= C * b ** n[:-1] * z[:-1] ** (1 + eps) * (1 + rtol)))
    return DeGiorgiCheck(s, applicable, decay, rec)


@dataclass
class DissipationTerms:
    bulk: float
    surface: float
    jump: float

    @property
    def total(self) -> float:
        return self.bulk + self.surface + self.jump


def dissipation_terms(grid: SlabGrid, params, mu_pair) -> DissipationTerms:
    mu, theta = mu_pair
    mu = np.asarray(mu, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if params.L == 0 and not np.array_equal(grid.trace(mu), theta):
        raise RegimeError("L = 0 requires theta to be the trace of mu")
    jump = grid.trace(mu) - theta
    return DissipationTerms(
        bulk=a_bulk(grid, mu, mu),
        surface=params.sigma * a_surface(grid, theta, theta),
        jump=params.chi * grid.hx * float(np.sum(jump * jump)),
    )


def h1_distance(grid: SlabGrid, a, b) -> float:
    """Discrete H^1-type distance: gradient seminorms plus L^2 of a pair difference."""
    d = np.asarray(a[0]) - np.asarray(b[0])
    dg = np.asarray(a[1]) - np.asarray(b[1])
    sq = (a_bulk(grid, d, d) + a_surface(grid, dg, dg)
          + float(np.sum(grid.weights * d * d)) + grid.hx * float(np.sum(dg * dg)))
    return math.sqrt(max(sq, 0.0))


def l2_distance(grid: SlabGrid, a, b) -> float:
    d = np.asarray(a[0]) - np.asarray(b[0])
    dg = np.asarray(a[1]) - np.asarray(b[1])
    return math.sqrt(float(np.sum(grid.weights * d * d)) + grid.hx * float(np.sum(dg * dg)))


@dataclass
class RateFit:
    exponent: float
    theta_star: float
    constant: float
    rms: float
    faster_than_power_law: bool


DEGENERATE_DISTANCE = 1e-13


def fit_convergence_rate(times, distances, min_samples=10) -> RateFit:
    """Least-squares fit of ``d(t) = C (1 + t)^(-p)`` over samples with ``t >= 1``.

    The implied Lojasiewicz-type exponent is ``theta* = p / (1 + 2p)``.
    Distances below 1e-13 make the fit meaningless (typically exponential
    decay) and raise :class:`FitError`.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(distances, dtype=float)
    sel = t >= 1.0
    t, d = t[sel], d[sel]
    if t.size < min_samples:
        raise FitError(f"need {min_samples} samples with t >= 1, got {t.size}")
    if np.any(d < DEGENERATE_DISTANCE):
        raise FitError("distances below 1e-13: faster than any power law")
    x = np.log1p(t)
    y = np.log(d)
    slope, icpt = np.polyfit(x, y, 1)
    rms = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    p = -float(slope)
    # local exponents growing along the series signal super-algebraic decay
    local = -np.diff(y) / np.diff(x)
    k = max(1, local.size // 4)
    head, tail = float(np.mean(local[:k])), float(np.mean(local[-k:]))
    faster = bool(head > 0 and tail > 1.5 * head)
    theta = p / (1.0 + 2.0 * p) if p > 0 else float("nan")
    return RateFit(p, theta, float(math.exp(icpt)), rms, faster)


@dataclass
class EnergyAudit:
    max_step_defect: float
    max_energy_increase: float
    energy_drop: float
    dissipated: float

    @property
    def cumulative_defect(self) -> float:
        return self.energy_drop - self.dissipated


def energy_balance_audit(record: TrajectoryRecord) -> EnergyAudit:
    inc = record.max_energy_increase if record.steps else 0.0
    return EnergyAudit(
        max_step_defect=record.max_step_defect,
        max_energy_increase=inc,
        energy_drop=record.energy0 - record.final_energy,
        dissipated=record.cum_dissipation,
    )
