"""Monte Carlo estimation of the discounted cost of a policy."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels as K
from .network import NetworkConfig, RolloutStart, kernel_instance, model_source
from .policy import Policy

MODES = ("L1", "L2", "replay")


@dataclass(frozen=True)
class EvalReport:
    mean: float
    ci_halfwidth: float
    reps: int
    horizon: int
    mode: str
    seed: int
    sd: float

    def row(self, instance: str = "", policy: str = "") -> dict:
        d = {"instance": instance, "policy": policy}
        d.update(asdict(self))
        return d


def horizon_for(gamma: float, tol: float = 1e-4) -> int:
    """Smallest H with gamma**H <= tol."""
    if gamma <= 0.0:
        return 1
    return int(math.ceil(math.log(tol) / math.log(gamma)))


def _chunk(args):
    seed, r0, r1, horizon, gamma, c_st, inst, src, pol, ctrl = args
    return K.run_reps(seed, r0, r1, horizon, gamma, c_st, inst, src, pol, ctrl)


def _split(reps: int, workers: int) -> list[tuple[int, int]]:
    n = max(1, min(workers, reps))
    edges = np.linspace(0, reps, n + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def episode_costs(policy: Policy, config: NetworkConfig, mode: str = "L1", reps: int = 10_000,
                  horizon: int = 1000, seed: int = 0, workers: int = 1, replay=None,
                  start: RolloutStart | None = None) -> np.ndarray:
    """Per-replication discounted costs, in replication order.

    Replication ``r`` always uses the same random streams for a given seed, so
    the output does not depend on ``workers`` and two policies evaluated with
    the same seed are paired replication by replication.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    policy.check_mode(mode)
    inst = kernel_instance(config)
    if start is None:
        start = RolloutStart(config.M)
    if mode == "replay":
        if replay is None:
            raise ValueError("replay mode needs a replay source")
        src = replay.kernel_source()
        start.init_mode[:] = K.INIT_REPLAY
    else:
        src = model_source()
    pol = policy.kernel_policy(config)
    ctrl = start.pack()
    jobs = [(K.kernel_seed(seed), a, b, int(horizon), float(config.gamma), float(config.c_st), inst, src, pol, ctrl)
            for a, b in _split(reps, workers)]
    if workers <= 1 or len(jobs) == 1:
        parts = [_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk, jobs))
    out = np.concatenate(parts)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite episode cost")
    return out


def summarize(costs: np.ndarray, horizon: int, mode: str, seed: int) -> EvalReport:
    n = costs.size
    sd = float(costs.std(ddof=1)) if n > 1 else 0.0
    return EvalReport(float(costs.mean()), 1.96 * sd / math.sqrt(n), int(n), int(horizon), mode, int(seed), sd)


def evaluate(policy: Policy, config: NetworkConfig, mode: str = "L1", reps: int = 10_000,
             horizon: int = 1000, seed: int = 0, workers: int = 1, replay=None,
             tol: float = 1e-4) -> EvalReport:
    if config.gamma ** horizon > tol:
        warnings.warn(f"horizon {horizon} leaves discount weight {config.gamma ** horizon:.2e} > {tol}")
    c = episode_costs(policy, config, mode, reps, horizon, seed, workers, replay)
    return summarize(c, horizon, mode, seed)


@dataclass(frozen=True)
class PairedReport:
    diff: float          # mean of J(a) - J(b)
    ci_halfwidth: float
    reps: int

    @property
    def upper(self) -> float:
        return self.diff + self.ci_halfwidth


def compare(policy_a: Policy, policy_b: Policy, config: NetworkConfig, mode: str = "L1",
            reps: int = 10_000, horizon: int = 1000, seed: int = 0, workers: int = 1,
            z: float = 1.96, replay=None) -> PairedReport:
    """Paired estimate of J(a) - J(b) on common random numbers."""
    ca = episode_costs(policy_a, config, mode, reps, horizon, seed, workers, replay)
    cb = episode_costs(policy_b, config, mode, reps, horizon, seed, workers, replay)
    d = ca - cb
    return PairedReport(float(d.mean()), z * float(d.std(ddof=1)) / math.sqrt(d.size), int(d.size))
