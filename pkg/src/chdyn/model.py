"""Regime parameters shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import RegimeError
from .potentials import Logarithmic, PotentialSpec


def chi(L: float) -> float:
    """Kinetic-rate coefficient: ``1/L`` for finite positive ``L``, else 0."""
    if L < 0:
        raise RegimeError("L must be nonnegative")
    return 1.0 / L if L > 0 else 0.0


@dataclass(frozen=True)
class ModelParams:
    """Regime ``(L, sigma)`` plus potential and regularization.

    Surface diffusion ``nu`` is fixed to 1 and the wall is impermeable
    (``alpha = 0``).  ``eps=None`` selects the exact singular nonlinearity,
    a value in (0, 1) the Moreau-Yosida regularization.
    """

    L: float = 1.0
    sigma: float = 1.0
    potential: PotentialSpec = field(default_factory=lambda: PotentialSpec(Logarithmic()))
    eps: Optional[float] = None

    def __post_init__(self):
        if self.L < 0 or self.sigma < 0:
            raise RegimeError("L and sigma must be nonnegative")
        if self.L > 0 and self.sigma == 0:
            raise RegimeError(
                "L > 0 requires sigma > 0; admissible regimes are "
                "(L > 0, sigma > 0) and (L = 0, sigma >= 0)"
            )
        if self.eps is not None and not 0.0 < self.eps < 1.0:
            raise RegimeError("Yosida eps must lie in (0, 1)")

    @property
    def chi(self) -> float:
        return chi(self.L)

    @property
    def trace_linked(self) -> bool:
        """Chemical potentials are trace-linked (theta = mu on the boundary) iff L = 0."""
        return self.L == 0

    @property
    def nu(self) -> float:
        return 1.0

    @property
    def alpha(self) -> float:
        return 0.0
