"""Conjugate Gamma/Beta belief tracking for a single asset.

The belief about the installed component is summarised by the cumulative
damage ``x``, shock count ``k`` and operational age ``t`` since the last
replacement.  The posterior is Gamma(alpha + k, rate beta + t) for the shock
rate and Beta(a + x, b + k) for the geometric parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln

from .degradation import DegradationParams, PeriodSignal, PopulationPrior, sample_period


@dataclass(frozen=True)
class AssetBelief:
    x: int = 0
    k: int = 0
    t: int = 0

    def __post_init__(self):
        if self.x < 0 or self.k < 0 or self.t < 0:
            raise ValueError("belief statistics must be non-negative")
        if self.k == 0 and self.x != 0:
            raise ValueError("damage without shocks is impossible")

    def update(self, sig: PeriodSignal) -> "AssetBelief":
        return AssetBelief(self.x + sig.z, self.k + sig.k, self.t + 1)


@dataclass(frozen=True)
class PosteriorParams:
    alpha_t: float
    beta_t: float
    a_t: float
    b_t: float

    def as_prior(self) -> PopulationPrior:
        return PopulationPrior(self.alpha_t, self.beta_t, self.a_t, self.b_t)


def posterior(prior: PopulationPrior, belief: AssetBelief) -> PosteriorParams:
    return PosteriorParams(prior.alpha + belief.k, prior.beta + belief.t,
                           prior.a + belief.x, prior.b + belief.k)


def point_estimates(post: PosteriorParams) -> tuple[float, float]:
    """Posterior means ``(lam_hat, q_hat)``."""
    return post.alpha_t / post.beta_t, post.a_t / (post.a_t + post.b_t)


def predictive_sample_period(prior: PopulationPrior, belief: AssetBelief,
                             rng: np.random.Generator) -> PeriodSignal:
    """Draw one period from the posterior predictive.

    A fresh (lam, q) is drawn from the current posterior on every call.
    """
    post = posterior(prior, belief)
    lam = rng.gamma(post.alpha_t, 1.0 / post.beta_t)
    q = min(max(rng.beta(post.a_t, post.b_t), 1e-12), 1.0 - 1e-12)
    return sample_period(DegradationParams(max(lam, 1e-300), q), rng)


def predictive_count_logpmf(post: PosteriorParams, k) -> np.ndarray:
    """Gamma-Poisson (negative binomial) log mass of ``k`` shocks in one period."""
    k = np.asarray(k, dtype=float)
    a, bt = post.alpha_t, post.beta_t
    return (gammaln(a + k) - gammaln(a) - gammaln(k + 1)
            + a * math.log(bt / (bt + 1.0)) - k * math.log(bt + 1.0))


def predictive_damage_logpmf(post: PosteriorParams, k, z) -> np.ndarray:
    """Beta-negative-binomial log mass of total damage ``z`` given ``k`` shocks."""
    k = np.asarray(k, dtype=float)
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (gammaln(z + k) - gammaln(z + 1) - gammaln(k)
               + betaln(post.a_t + z, post.b_t + k) - betaln(post.a_t, post.b_t))
    out = np.where(k == 0, np.where(z == 0, 0.0, -np.inf), out)
    return out


def predictive_logpmf(prior: PopulationPrior, belief: AssetBelief,
                      sig: PeriodSignal | tuple[int, int]) -> float:
    k, z = (sig.k, sig.z) if isinstance(sig, PeriodSignal) else sig
    post = posterior(prior, belief)
    return float(predictive_count_logpmf(post, k) + predictive_damage_logpmf(post, k, z))
