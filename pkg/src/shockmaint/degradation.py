"""Compound-Poisson degradation with geometric shock sizes.

Each installed component carries a shock rate ``lam`` and a geometric
parameter ``q``; per unit period the number of shocks is Poisson(lam) and
each shock adds ``Y`` damage units with ``P(Y = y) = q**y * (1 - q)`` on
``{0, 1, 2, ...}``.  Components are drawn from a population prior with
``lam ~ Gamma(shape=alpha, rate=beta)`` and ``q ~ Beta(a, b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class PopulationPrior:
    """Gamma/Beta heterogeneity distribution of one component pool."""

    alpha: float
    beta: float
    a: float
    b: float

    def __post_init__(self):
        for name in ("alpha", "beta", "a", "b"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v!r}")

    @classmethod
    def from_moments(cls, mean_rate: float, cv_rate: float, a: float, b: float) -> "PopulationPrior":
        alpha = 1.0 / cv_rate**2
        return cls(alpha, alpha / mean_rate, a, b)

    @classmethod
    def from_success_beta(cls, alpha: float, beta: float, a_p: float, b_p: float) -> "PopulationPrior":
        """Prior given as a Beta(a_p, b_p) law on the per-shock success probability.

        With ``p = 1 - q`` the shock pmf reads ``(1 - p)**y * p``; a Beta(a_p, b_p)
        law on ``p`` is a Beta(b_p, a_p) law on ``q``.
        """
        return cls(alpha, beta, b_p, a_p)

    @property
    def mean_rate(self) -> float:
        return self.alpha / self.beta

    @property
    def cv_rate(self) -> float:
        return 1.0 / math.sqrt(self.alpha)

    @property
    def mean_q(self) -> float:
        return self.a / (self.a + self.b)

    @property
    def mean_p(self) -> float:
        """Mean per-shock success probability ``1 - q``."""
        return self.b / (self.a + self.b)

    @property
    def mean_shock_size(self) -> float:
        """E[q / (1 - q)] under the Beta law (infinite when b <= 1)."""
        return self.a / (self.b - 1.0) if self.b > 1.0 else math.inf


@dataclass(frozen=True)
class DegradationParams:
    lam: float
    q: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be > 0, got {self.lam!r}")
        if not (0.0 < self.q < 1.0):
            raise ValueError(f"q must lie in (0, 1), got {self.q!r}")

    @property
    def mean_shock_size(self) -> float:
        return self.q / (1.0 - self.q)


@dataclass(frozen=True)
class PeriodSignal:
    """Shock count ``k`` and total damage ``z`` observed in one unit period."""

    k: int
    z: int

    def __post_init__(self):
        if self.k < 0 or self.z < 0:
            raise ValueError("k and z must be non-negative")
        if self.k == 0 and self.z != 0:
            raise ValueError("z must be 0 when no shock arrived")


@dataclass(frozen=True)
class AssetConfig:
    """One asset: failure threshold, replacement costs and component pool.

    ``unit_shocks`` switches to deterministic unit shock sizes (``Y == 1``)
    with the shock rate fixed at the prior mean.  ``params`` pins a known
    (lam, q) for every installed component, used by the exact solvers.
    """

    xi: int
    c_pm: float
    c_cm: float
    prior: PopulationPrior
    unit_shocks: bool = False
    params: DegradationParams | None = field(default=None)

    def __post_init__(self):
        if int(self.xi) != self.xi or self.xi < 1:
            raise ValueError(f"xi must be a positive integer, got {self.xi!r}")
        # zero costs are admitted for degenerate sanity instances
        if not (0 <= self.c_pm <= self.c_cm):
            raise ValueError(f"need 0 <= c_pm <= c_cm, got c_pm={self.c_pm}, c_cm={self.c_cm}")


def sample_params(prior: PopulationPrior, rng: np.random.Generator) -> DegradationParams:
    lam = rng.gamma(prior.alpha, 1.0 / prior.beta)
    q = rng.beta(prior.a, prior.b)
    # Beta draws may round to the boundary for extreme hyperparameters.
    q = min(max(q, 1e-12), 1.0 - 1e-12)
    return DegradationParams(max(lam, 1e-300), q)


def sample_period(params: DegradationParams, rng: np.random.Generator, unit_shocks: bool = False) -> PeriodSignal:
    k = int(rng.poisson(params.lam))
    if k == 0:
        return PeriodSignal(0, 0)
    if unit_shocks:
        return PeriodSignal(k, k)
    # failures before k successes with success probability 1 - q
    z = int(rng.negative_binomial(k, 1.0 - params.q))
    return PeriodSignal(k, z)


def sample_periods(params: DegradationParams, n: int, rng: np.random.Generator,
                   unit_shocks: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``sample_period``: returns arrays ``(k, z)`` of length ``n``."""
    k = rng.poisson(params.lam, size=n)
    if unit_shocks:
        return k, k.copy()
    z = rng.negative_binomial(np.maximum(k, 1), 1.0 - params.q)
    z[k == 0] = 0
    return k, z


def period_signal_logpmf(params: DegradationParams, sig: PeriodSignal | tuple[int, int]) -> float:
    k, z = (sig.k, sig.z) if isinstance(sig, PeriodSignal) else sig
    lp = stats.poisson.logpmf(k, params.lam)
    if k == 0:
        return float(lp) if z == 0 else -math.inf
    return float(lp + stats.nbinom.logpmf(z, k, 1.0 - params.q))
