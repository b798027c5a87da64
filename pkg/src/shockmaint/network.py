"""Multi-asset network: state, admissible actions, costs and the two-stage
transition (replace, then degrade one period)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels as K
from .bayes import AssetBelief, predictive_sample_period
from .degradation import AssetConfig, DegradationParams, PeriodSignal, sample_params, sample_period

L1 = "L1"
L2 = "L2"


@dataclass(frozen=True)
class NetworkConfig:
    assets: tuple[AssetConfig, ...]
    c_st: float
    gamma: float
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        if len(self.assets) < 1:
            raise ValueError("need at least one asset")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.c_st < 0:
            raise ValueError("c_st must be non-negative")

    @property
    def M(self) -> int:
        return len(self.assets)

    @property
    def xi(self) -> np.ndarray:
        return np.array([a.xi for a in self.assets], dtype=np.int64)

    @property
    def symmetric(self) -> bool:
        a0 = self.assets[0]
        return all(a == a0 for a in self.assets)

    @property
    def c_max(self) -> float:
        return self.c_st + sum(a.c_cm for a in self.assets)

    def with_costs(self, c_pm=None, c_cm=None, c_st=None) -> "NetworkConfig":
        assets = tuple(replace(a, c_pm=a.c_pm if c_pm is None else c_pm,
                               c_cm=a.c_cm if c_cm is None else c_cm) for a in self.assets)
        return NetworkConfig(assets, self.c_st if c_st is None else c_st, self.gamma, self.name)


@dataclass(frozen=True)
class NetworkState:
    beliefs: tuple[AssetBelief, ...]
    mode: str = L1
    params: tuple[DegradationParams, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "beliefs", tuple(self.beliefs))
        if self.mode not in (L1, L2):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == L2:
            if self.params is None or len(self.params) != len(self.beliefs):
                raise ValueError("L2 state needs parameters for every asset")
            object.__setattr__(self, "params", tuple(self.params))
        elif self.params is not None:
            raise ValueError("L1 state must not carry parameters")

    @property
    def x(self) -> np.ndarray:
        return np.array([b.x for b in self.beliefs], dtype=np.int64)

    def failed(self, config: NetworkConfig) -> np.ndarray:
        return self.x >= config.xi


def unit_params(asset: AssetConfig) -> DegradationParams:
    # unit shocks have mean size 1, the same as a geometric with q = 1/2
    return DegradationParams(asset.prior.mean_rate, 0.5)


def new_component(asset: AssetConfig, rng: np.random.Generator) -> DegradationParams:
    if asset.params is not None:
        return asset.params
    if asset.unit_shocks:
        return unit_params(asset)
    return sample_params(asset.prior, rng)


def initial_state(config: NetworkConfig, mode: str = L1, rng: np.random.Generator | None = None) -> NetworkState:
    beliefs = tuple(AssetBelief() for _ in config.assets)
    if mode == L1:
        return NetworkState(beliefs, L1)
    if rng is None:
        raise ValueError("L2 initial state needs an rng to draw component parameters")
    return NetworkState(beliefs, L2, tuple(new_component(a, rng) for a in config.assets))


def action_set(config: NetworkConfig, state: NetworkState) -> list[tuple[int, ...]]:
    return [(1,) if f else (0, 1) for f in state.failed(config)]


def _check_action(config: NetworkConfig, state: NetworkState, action: Sequence[int]) -> np.ndarray:
    a = np.asarray(action, dtype=np.int64)
    if a.shape != (config.M,) or not np.isin(a, (0, 1)).all():
        raise ValueError(f"action must be a 0/1 vector of length {config.M}")
    bad = np.flatnonzero(state.failed(config) & (a == 0))
    if bad.size:
        raise ValueError(f"failed assets {bad.tolist()} must be replaced")
    return a


def cost(config: NetworkConfig, state: NetworkState, action: Sequence[int]) -> float:
    a = _check_action(config, state, action)
    if not a.any():
        return 0.0
    failed = state.failed(config)
    c = config.c_st
    for m, asset in enumerate(config.assets):
        if a[m]:
            c += asset.c_cm if failed[m] else asset.c_pm
    return float(c)


def apply_actions(config: NetworkConfig, state: NetworkState, action: Sequence[int],
                  rng: np.random.Generator | None = None) -> NetworkState:
    """Stage 1: replaced assets restart from a fresh belief (and new params in L2)."""
    a = _check_action(config, state, action)
    beliefs = list(state.beliefs)
    params = list(state.params) if state.params is not None else None
    for m in np.flatnonzero(a):
        beliefs[m] = AssetBelief()
        if params is not None:
            if rng is None:
                raise ValueError("L2 replacement needs an rng")
            params[m] = new_component(config.assets[m], rng)
    return NetworkState(tuple(beliefs), state.mode, None if params is None else tuple(params))


def advance(config: NetworkConfig, state: NetworkState, rng: np.random.Generator) -> tuple[NetworkState, list[PeriodSignal]]:
    """Stage 2: every asset degrades for one period.

    L2 draws from the component's own parameters, L1 from the one-period
    posterior predictive of its belief.
    """
    beliefs = []
    signals = []
    for m, (asset, b) in enumerate(zip(config.assets, state.beliefs)):
        if state.mode == L2:
            sig = sample_period(state.params[m], rng, asset.unit_shocks)
        elif asset.params is not None:
            sig = sample_period(asset.params, rng, asset.unit_shocks)
        elif asset.unit_shocks:
            sig = sample_period(unit_params(asset), rng, True)
        else:
            sig = predictive_sample_period(asset.prior, b, rng)
        signals.append(sig)
        beliefs.append(b.update(sig))
    return NetworkState(tuple(beliefs), state.mode, state.params), signals


# ---------------------------------------------------------------------------
# packing for the compiled simulator


def kernel_instance(config: NetworkConfig):
    A = config.assets
    flam = np.array([a.params.lam if a.params is not None else -1.0 for a in A])
    fq = np.array([a.params.q if a.params is not None else 0.0 for a in A])
    return (config.xi,
            np.array([a.c_pm for a in A], dtype=float),
            np.array([a.c_cm for a in A], dtype=float),
            np.array([a.prior.alpha for a in A]),
            np.array([a.prior.beta for a in A]),
            np.array([a.prior.a for a in A]),
            np.array([a.prior.b for a in A]),
            np.array([a.unit_shocks for a in A], dtype=np.bool_),
            flam, fq)


def model_source():
    z = np.zeros(1, dtype=np.int64)
    return (K.SRC_MODEL, z, z, z)


@dataclass
class RolloutStart:
    """Initial condition and first-epoch controls for the compiled simulator."""

    M: int
    x0: np.ndarray = field(default=None)
    k0: np.ndarray = field(default=None)
    t0: np.ndarray = field(default=None)
    init_mode: np.ndarray = field(default=None)
    lam0: np.ndarray = field(default=None)
    q0: np.ndarray = field(default=None)
    first_perm: np.ndarray = field(default=None)
    decided: np.ndarray = field(default=None)
    eta0: bool = False
    setup_paid0: bool = False
    cost0: float = 0.0
    use_ctrl: bool = False

    def __post_init__(self):
        M = self.M
        z = lambda: np.zeros(M, dtype=np.int64)
        self.x0 = z() if self.x0 is None else np.asarray(self.x0, dtype=np.int64)
        self.k0 = z() if self.k0 is None else np.asarray(self.k0, dtype=np.int64)
        self.t0 = z() if self.t0 is None else np.asarray(self.t0, dtype=np.int64)
        self.init_mode = z() if self.init_mode is None else np.asarray(self.init_mode, dtype=np.int64)
        self.lam0 = np.zeros(M) if self.lam0 is None else np.asarray(self.lam0, dtype=float)
        self.q0 = np.zeros(M) if self.q0 is None else np.asarray(self.q0, dtype=float)
        self.first_perm = np.arange(M, dtype=np.int64) if self.first_perm is None else np.asarray(self.first_perm, dtype=np.int64)
        self.decided = np.zeros(M, dtype=np.bool_) if self.decided is None else np.asarray(self.decided, dtype=np.bool_)

    @classmethod
    def from_state(cls, state: NetworkState, **kw) -> "RolloutStart":
        M = len(state.beliefs)
        rs = cls(M, x0=[b.x for b in state.beliefs], k0=[b.k for b in state.beliefs],
                 t0=[b.t for b in state.beliefs], **kw)
        if state.mode == L2:
            rs.init_mode[:] = K.INIT_GIVEN
            rs.lam0 = np.array([p.lam for p in state.params])
            rs.q0 = np.array([p.q for p in state.params])
        return rs

    def pack(self):
        return (bool(self.use_ctrl), self.x0, self.k0, self.t0, self.init_mode, self.lam0, self.q0,
                self.first_perm, self.decided, bool(self.eta0), bool(self.setup_paid0),
                float(self.cost0))
