"""Two-threshold (PM / opportunistic PM) control limits and their tuning."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .evaluator import episode_costs
from .network import NetworkConfig, NetworkState
from .policy import Policy, pack_policy, sequential_decide


@dataclass(frozen=True)
class ThresholdPolicy(Policy):
    """Replace at ``x >= tau_pm``; join an ongoing maintenance at ``x >= tau_opm``.

    ``opportunity="sequential"`` visits the assets in a random order each
    epoch and lets an asset join once a failure or an earlier replacement in
    the same epoch has opened the opportunity.  ``"joint"`` decides from the
    pre-epoch state in one pass: if any asset is failed or reaches its PM
    level, every asset at or above its OPM level is replaced.
    """

    tau_pm: tuple[int, ...]
    tau_opm: tuple[int, ...]
    opportunity: str = "sequential"
    name: str = field(default="threshold", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tau_pm", tuple(int(v) for v in self.tau_pm))
        object.__setattr__(self, "tau_opm", tuple(int(v) for v in self.tau_opm))
        if len(self.tau_pm) != len(self.tau_opm):
            raise ValueError("tau_pm and tau_opm need one entry per asset")
        for p, o in zip(self.tau_pm, self.tau_opm):
            if not (0 < o <= p):
                raise ValueError(f"need 0 < tau_opm <= tau_pm, got ({p}, {o})")
        if self.opportunity not in ("sequential", "joint"):
            raise ValueError(f"unknown opportunity rule {self.opportunity!r}")

    @classmethod
    def uniform(cls, M: int, tau_pm: int, tau_opm: int | None = None, **kw) -> "ThresholdPolicy":
        return cls((tau_pm,) * M, ((tau_pm if tau_opm is None else tau_opm),) * M, **kw)

    @classmethod
    def reactive(cls, config: NetworkConfig) -> "ThresholdPolicy":
        xi = tuple(int(v) for v in config.xi)
        return cls(xi, xi, name="reactive")

    def validate(self, config: NetworkConfig) -> None:
        if len(self.tau_pm) != config.M:
            raise ValueError(f"policy has {len(self.tau_pm)} assets, instance has {config.M}")
        for p, xi in zip(self.tau_pm, config.xi):
            if p > xi:
                raise ValueError(f"tau_pm {p} exceeds failure level {xi}")

    def kernel_policy(self, config: NetworkConfig):
        self.validate(config)
        return pack_policy(K.POL_THRESHOLD, config.M, self.tau_pm, self.tau_opm,
                           joint=self.opportunity == "joint")

    def decide(self, config: NetworkConfig, state: NetworkState,
               order: Sequence[int] | None = None) -> np.ndarray:
        x = state.x
        failed = state.failed(config)
        pm = np.asarray(self.tau_pm)
        opm = np.asarray(self.tau_opm)
        if self.opportunity == "joint":
            if (failed | (x >= pm)).any():
                return (failed | (x >= opm)).astype(np.int64)
            return np.zeros(config.M, dtype=np.int64)
        return sequential_decide(config, state, order,
                                 lambda m, eta, _: x[m] >= pm[m] or (eta and x[m] >= opm[m]))

    def decide_one(self, config: NetworkConfig, state: NetworkState, m: int, eta: bool) -> int:
        if self.opportunity != "sequential":
            raise NotImplementedError("the joint rule decides from the pre-epoch state")
        x = int(state.beliefs[m].x)
        if x >= config.xi[m] or x >= self.tau_pm[m]:
            return 1
        return int(bool(eta) and x >= self.tau_opm[m])


@dataclass
class SweepResult:
    policy: ThresholdPolicy
    cost: float
    ci_halfwidth: float
    pm_curve: list[tuple[int, float, float]]
    opm_curve: list[tuple[int, float, float]]
    reps: int
    seed: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "threshold", "mean_cost", "ci_halfwidth"])
            for t, m, c in self.pm_curve:
                w.writerow(["pm", t, f"{m:.6f}", f"{c:.6f}"])
            for t, m, c in self.opm_curve:
                w.writerow(["opm", t, f"{m:.6f}", f"{c:.6f}"])


_TAG_FINAL = 0xF1A1


def _argmin_prefer_larger(curve):
    best = min(m for _, m, _ in curve)
    return max(t for t, m, _ in curve if m == best)


def optimize_thresholds(config: NetworkConfig, reps: int = 10_000, horizon: int = 1000, seed: int = 0,
                        workers: int = 1, mode: str = "L1", pm_grid: Sequence[int] | None = None,
                        opportunity: str = "sequential", ci_warn: float = 0.01,
                        eval_reps: int | None = None) -> SweepResult:
    """Two-step sweep under common random numbers.

    Step 1 sweeps the PM level with OPM switched off (``tau_opm = tau_pm``);
    step 2 fixes the best PM level and sweeps the OPM level below it.  Every
    candidate is evaluated on the same replications, and ties go to the
    larger threshold.  With ``eval_reps`` the chosen policy is re-evaluated
    on fresh replications, which removes the selection bias of the sweep
    minimum from the reported cost.
    """
    if not config.symmetric:
        raise NotImplementedError("asymmetric component pools need a per-asset sweep")
    M = config.M
    xi = int(config.xi[0])
    grid = range(1, xi + 1) if pm_grid is None else pm_grid

    def run(p, o):
        pol = ThresholdPolicy.uniform(M, p, o, opportunity=opportunity)
        c = episode_costs(pol, config, mode, reps, horizon, seed, workers)
        return c.mean(), 1.96 * c.std(ddof=1) / np.sqrt(c.size)

    pm_curve = [(p, *run(p, p)) for p in grid]
    p_star = _argmin_prefer_larger(pm_curve)
    if M > 1:
        opm_curve = [(o, *run(p_star, o)) for o in range(1, p_star + 1)]
        o_star = _argmin_prefer_larger(opm_curve)
    else:
        opm_curve = []
        o_star = p_star
    pol = ThresholdPolicy.uniform(M, p_star, o_star, opportunity=opportunity)
    curve = opm_curve if opm_curve else pm_curve
    mean, ci = next((m, c) for t, m, c in curve if t == (o_star if opm_curve else p_star))
    if eval_reps:
        c = episode_costs(pol, config, mode, eval_reps, horizon, K.derive_seed(seed, _TAG_FINAL), workers)
        mean, ci = c.mean(), 1.96 * c.std(ddof=1) / np.sqrt(c.size)
    if ci > ci_warn * mean:
        warnings.warn(f"threshold sweep CI half-width {ci:.4g} exceeds {ci_warn:.0%} of the cost; "
                      "increase reps")
    return SweepResult(pol, float(mean), float(ci), pm_curve, opm_curve, reps, seed)
