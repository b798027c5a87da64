"""Benchmark instances and the YAML instance document format.

Instance document::

    name: I1
    gamma: 0.99
    c_st: 1.0
    assets:                 # one entry per asset, or use `M` + `asset`
      - xi: 20
        c_pm: 1.0
        c_cm: 5.0
        prior: {alpha: 11.11, beta: 11.11, a: 4999.5, b: 4999.5}
        unit_shocks: false  # optional
        params: {lam: 1.0, q: 0.5}   # optional, pins known parameters
    # or
    M: 2
    asset: {...}

``prior`` may instead be given as ``{alpha, beta, a_p, b_p}`` where
``Beta(a_p, b_p)`` is the law of the per-shock success probability ``1 - q``.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .degradation import AssetConfig, DegradationParams, PopulationPrior
from .network import NetworkConfig


def _pool(xi, c_pm, c_cm, prior, M, c_st, gamma, name, **kw) -> NetworkConfig:
    asset = AssetConfig(xi, c_pm, c_cm, prior, **kw)
    return NetworkConfig((asset,) * M, c_st, gamma, name)


def I1() -> NetworkConfig:
    return _pool(20, 1.0, 5.0, PopulationPrior(11.11, 11.11, 4999.5, 4999.5), 2, 1.0, 0.99, "I1")


def I2() -> NetworkConfig:
    return _pool(20, 1.0, 10.0, PopulationPrior(2.78, 2.78, 1249.5, 1249.5), 2, 1.0, 0.99, "I2")


CASE_STUDY_PRIOR = PopulationPrior.from_success_beta(40.696, 28.779, 8.924, 9.405)


def CS(M: int, c_st: float, name: str = "CS") -> NetworkConfig:
    return _pool(50, 1.0, 5.0, CASE_STUDY_PRIOR, M, c_st, 0.99, name)


def CS1() -> NetworkConfig:
    return CS(1, 0.0, "CS1")


def CS2() -> NetworkConfig:
    return CS(2, 1.0, "CS2")


def CS3() -> NetworkConfig:
    return CS(5, 1.0, "CS3")


def twin_unit() -> NetworkConfig:
    """Two assets, unit shocks arriving at rate 5 per period, I1 costs."""
    prior = PopulationPrior(1.0, 0.2, 1.0, 1.0)
    return _pool(20, 1.0, 5.0, prior, 2, 1.0, 0.99, "twin_unit", unit_shocks=True,
                 params=DegradationParams(5.0, 0.5))


def micro() -> NetworkConfig:
    """One asset, xi = 3, unit shocks at rate 1, c_st = 0, gamma = 0.9."""
    prior = PopulationPrior(1.0, 1.0, 1.0, 1.0)
    return _pool(3, 1.0, 5.0, prior, 1, 0.0, 0.9, "micro", unit_shocks=True,
                 params=DegradationParams(1.0, 0.5))


BUILTIN = {"I1": I1, "I2": I2, "CS1": CS1, "CS2": CS2, "CS3": CS3, "twin_unit": twin_unit, "micro": micro}


def _prior_from_doc(d: dict) -> PopulationPrior:
    if "a_p" in d:
        return PopulationPrior.from_success_beta(d["alpha"], d["beta"], d["a_p"], d["b_p"])
    return PopulationPrior(float(d["alpha"]), float(d["beta"]), float(d["a"]), float(d["b"]))


def _asset_from_doc(d: dict) -> AssetConfig:
    params = d.get("params")
    return AssetConfig(int(d["xi"]), float(d["c_pm"]), float(d["c_cm"]), _prior_from_doc(d["prior"]),
                       unit_shocks=bool(d.get("unit_shocks", False)),
                       params=None if params is None else DegradationParams(float(params["lam"]), float(params["q"])))


def from_document(doc: dict) -> NetworkConfig:
    if "builtin" in doc:
        if doc["builtin"] not in BUILTIN:
            raise ValueError(f"unknown builtin instance {doc['builtin']!r}")
        return BUILTIN[doc["builtin"]]()
    if "assets" in doc:
        assets = tuple(_asset_from_doc(a) for a in doc["assets"])
    else:
        assets = (_asset_from_doc(doc["asset"]),) * int(doc["M"])
    return NetworkConfig(assets, float(doc.get("c_st", 0.0)), float(doc["gamma"]), str(doc.get("name", "")))


def to_document(config: NetworkConfig) -> dict:
    def asset(a: AssetConfig) -> dict:
        d = {"xi": a.xi, "c_pm": a.c_pm, "c_cm": a.c_cm,
             "prior": {"alpha": a.prior.alpha, "beta": a.prior.beta, "a": a.prior.a, "b": a.prior.b}}
        if a.unit_shocks:
            d["unit_shocks"] = True
        if a.params is not None:
            d["params"] = {"lam": a.params.lam, "q": a.params.q}
        return d
    return {"name": config.name, "gamma": config.gamma, "c_st": config.c_st,
            "assets": [asset(a) for a in config.assets]}


def load(path) -> NetworkConfig:
    return from_document(yaml.safe_load(Path(path).read_text()))
