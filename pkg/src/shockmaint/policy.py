"""Uniform decision interface shared by every policy family.

A policy maps the observable network state to a joint action.  Each family
also packs itself into the flat tuple consumed by the compiled simulator.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels as K
from .network import NetworkConfig, NetworkState

_EMPTY_TABLE = np.zeros((1, 1, 1, 1), dtype=np.int8)
_EMPTY_JT = np.zeros(1, dtype=np.int64)


class VariantError(ValueError):
    """Policy information requirement incompatible with the requested mode."""


def _empty_weights():
    v = np.zeros(1)
    m = np.zeros((1, 1))
    return (v, v + 1.0, m, v, m, v, m, v, m, v)


def pack_policy(kind: int, M: int, tpm=None, topm=None, joint: bool = False, table=None, jtable=None,
                variant: int = 0, delta: float = 0.0, zeta: float = 0.0, weights=None):
    tpm = np.zeros(M, np.int64) if tpm is None else np.ascontiguousarray(tpm, dtype=np.int64)
    topm = np.zeros(M, np.int64) if topm is None else np.ascontiguousarray(topm, dtype=np.int64)
    table = _EMPTY_TABLE if table is None else np.ascontiguousarray(table, dtype=np.int8)
    jtable = _EMPTY_JT if jtable is None else np.ascontiguousarray(jtable, dtype=np.int64)
    weights = _empty_weights() if weights is None else tuple(np.ascontiguousarray(w, dtype=float) for w in weights)
    return (int(kind), tpm, topm, int(bool(joint)), table, jtable, int(variant), float(delta),
            float(zeta), weights)


class Policy:
    """Base class.  ``info`` is "any", "L1" or "L2": the information the policy reads.

    Neural weights are packed as (mu, sd, W1, b1, ..., W4, b4) with every
    ``W`` stored as (inputs, outputs).
    """

    info = "any"
    name = "policy"

    def kernel_policy(self, config: NetworkConfig):
        raise NotImplementedError

    def check_mode(self, mode: str) -> None:
        if mode == "replay" and self.info == "L2":
            raise VariantError(f"{self.name} needs true parameters and cannot run on replayed data")
        if mode == "L1" and self.info == "L2":
            raise VariantError(f"{self.name} reads true parameters (f1 features); "
                               "use the f2 open-loop feedback variant in L1 mode")

    def decide(self, config: NetworkConfig, state: NetworkState,
               order: Sequence[int] | None = None) -> np.ndarray:
        """Joint action for ``state``; assets are visited in ``order``."""
        raise NotImplementedError

    def decide_one(self, config: NetworkConfig, state: NetworkState, m: int, eta: bool) -> int:
        """Action for asset ``m`` in the epoch sub-state ``state`` (earlier
        decisions of the epoch already applied); ``eta`` is the opportunity flag."""
        raise NotImplementedError(f"{self.name} does not decide asset by asset")


def sequential_decide(config: NetworkConfig, state: NetworkState, order, decide_one) -> np.ndarray:
    """Visit assets in ``order``; ``decide_one(m, eta, committed)`` returns 0/1.

    ``eta`` is the opportunity flag: some asset is failed or already committed.
    """
    M = config.M
    order = range(M) if order is None else order
    failed = state.failed(config)
    a = np.zeros(M, dtype=np.int64)
    eta = bool(failed.any())
    for m in order:
        am = 1 if failed[m] else int(decide_one(m, eta, a.copy()))
        if am:
            a[m] = 1
            eta = True
    return a
