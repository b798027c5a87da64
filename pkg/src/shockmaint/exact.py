"""Exact dynamic programming on small instances.

``solve_underlying_mdp`` runs policy iteration on the joint damage levels of
assets with known parameters.  ``solve_single_asset_bmdp`` solves the
truncated single-asset belief MDP over ``(x, k, t)``; applied to every asset
separately it gives the integrated Bayes heuristic.  ``check_monotonicity``
audits tables for the structural properties of optimal policies.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np
from scipy import optimize

from . import _kernels as K
from .degradation import AssetConfig, DegradationParams
from .network import NetworkConfig, NetworkState
from .policy import Policy, pack_policy

TIE_REL = 1e-9


class BudgetError(ValueError):
    """State space larger than the configured cell budget."""


class ConvergenceError(RuntimeError):
    pass


def _tie(q):
    return TIE_REL * (1.0 + np.abs(q))


@dataclass(frozen=True)
class TruncationSpec:
    """Grid caps.  ``k`` and ``t`` saturate at their caps; damage saturates at
    the failure level, which is an absorbing band for decisions."""

    x_max: tuple[int, ...] | None = None
    k_max: int | None = None
    t_max: int | None = None
    tail_mass_eps: float = 1e-10

    @classmethod
    def default(cls, asset: AssetConfig, tail_mass_eps: float = 1e-10) -> "TruncationSpec":
        """Caps at four expected lifetimes of a prior-mean component."""
        p = asset.prior
        size = 1.0 if asset.unit_shocks else p.mean_q / (1.0 - p.mean_q)
        rate = p.mean_rate
        if asset.params is not None:
            rate = asset.params.lam
            size = 1.0 if asset.unit_shocks else asset.params.q / (1.0 - asset.params.q)
        k_max = int(math.ceil(4 * asset.xi / max(size, 1e-9)))
        t_max = int(math.ceil(4 * asset.xi / max(rate * size, 1e-9)))
        return cls((asset.xi,), k_max, t_max, tail_mass_eps)


# ---------------------------------------------------------------------------
# table policies


@dataclass
class TabularPolicy(Policy):
    """Lookup-table policy with its value and action-value tables.

    ``kind="joint"``: grid over the damage levels ``(x_1, ..., x_M)`` with
    ``x_m`` in ``0..xi_m``; ``actions`` holds replacement bitmasks (bit m is
    asset m) and ``q_values`` has a trailing axis over all ``2**M`` bitmasks.

    ``kind="asset"``: grid over one asset's ``(x, k, t)``; ``actions`` is 0/1
    and ``q_values[..., a]`` is the value of action ``a``.  The table is
    applied to every asset separately.
    """

    kind: str
    actions: np.ndarray
    values: np.ndarray
    q_values: np.ndarray | None = None
    trunc: TruncationSpec | None = None
    report: dict = field(default_factory=dict)
    name: str = "table"

    @property
    def level_axes(self) -> list[int]:
        return list(range(self.actions.ndim)) if self.kind == "joint" else [0]

    def kernel_policy(self, config: NetworkConfig):
        if self.kind == "joint":
            shape = tuple(int(v) + 1 for v in config.xi)
            if self.actions.shape != shape:
                raise ValueError(f"joint table shape {self.actions.shape} does not match instance {shape}")
            return pack_policy(K.POL_JOINT_TABLE, config.M, jtable=self.actions.ravel())
        xi = self.actions.shape[0] - 1
        if any(int(v) != xi for v in config.xi):
            raise ValueError("asset table failure level does not match the instance")
        table = np.broadcast_to(self.actions.astype(np.int8), (config.M,) + self.actions.shape)
        return pack_policy(K.POL_ASSET_TABLE, config.M, table=table)

    def decide(self, config: NetworkConfig, state: NetworkState, order: Sequence[int] | None = None) -> np.ndarray:
        if self.kind == "joint":
            idx = tuple(min(int(x), int(xi)) for x, xi in zip(state.x, config.xi))
            mask = int(self.actions[idx])
            return np.array([(mask >> m) & 1 for m in range(config.M)], dtype=np.int64)
        X, Kc, T = self.actions.shape
        a = np.zeros(config.M, dtype=np.int64)
        for m, b in enumerate(state.beliefs):
            if b.x >= config.xi[m]:
                a[m] = 1
            else:
                a[m] = self.actions[min(b.x, X - 1), min(b.k, Kc - 1), min(b.t, T - 1)]
        return a

    def decide_one(self, config: NetworkConfig, state: NetworkState, m: int, eta: bool) -> int:
        if self.kind != "asset":
            raise NotImplementedError("joint tables decide from the pre-epoch state")
        b = state.beliefs[m]
        if b.x >= config.xi[m]:
            return 1
        X, Kc, T = self.actions.shape
        return int(self.actions[min(b.x, X - 1), min(b.k, Kc - 1), min(b.t, T - 1)])

    def replace_levels(self) -> np.ndarray:
        """Asset table: smallest damage level with a replacement, per (k, t)."""
        if self.kind != "asset":
            raise ValueError("replace levels are defined for asset tables")
        X = self.actions.shape[0]
        act = self.actions.astype(bool).copy()
        act[X - 1] = True
        return np.argmax(act, axis=0)

    def write_heatmap_csv(self, path) -> None:
        """Rows are shock counts k, columns ages t, entries the minimal replace level."""
        lv = self.replace_levels()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k\\t"] + list(range(lv.shape[1])))
            for k in range(lv.shape[0]):
                w.writerow([k] + lv[k].tolist())

    # flat binary: magic, kind, ndim, shape, actions (int64), values (float64)
    _MAGIC = b"SMTB0001"

    def save(self, path) -> None:
        kind = 0 if self.kind == "joint" else 1
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<qq", kind, self.actions.ndim))
            fh.write(struct.pack(f"<{self.actions.ndim}q", *self.actions.shape))
            fh.write(np.ascontiguousarray(self.actions, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TabularPolicy":
        with open(path, "rb") as fh:
            if fh.read(8) != cls._MAGIC:
                raise ValueError(f"{path} is not a policy table file")
            kind, ndim = struct.unpack("<qq", fh.read(16))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
            n = int(np.prod(shape))
            actions = np.frombuffer(fh.read(8 * n), dtype="<i8").reshape(shape).copy()
            values = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
        if kind == 1:
            actions = actions.astype(np.int8)
        return cls("joint" if kind == 0 else "asset", actions, values)


# ---------------------------------------------------------------------------
# underlying MDP (known parameters)


def increment_pmf(params: DegradationParams, unit_shocks: bool, n: int) -> np.ndarray:
    """P(Z = z) for z < n of one period's total damage (Panjer recursion)."""
    lam, q = params.lam, params.q
    g = np.zeros(n)
    if unit_shocks:
        g[0] = math.exp(-lam)
        for z in range(1, n):
            g[z] = g[z - 1] * lam / z
        return g
    f = (1.0 - q) * q ** np.arange(n)
    g[0] = math.exp(-lam * (1.0 - f[0]))
    for z in range(1, n):
        i = np.arange(1, z + 1)
        g[z] = lam / z * np.sum(i * f[i] * g[z - i])
    return g


def damage_kernel(params: DegradationParams, unit_shocks: bool, xi: int) -> np.ndarray:
    """Row y, column y': one-period transition of the damage level, failed band lumped at xi."""
    g = increment_pmf(params, unit_shocks, xi)
    P = np.zeros((xi + 1, xi + 1))
    for y in range(xi):
        P[y, y:xi] = g[: xi - y]
        P[y, xi] = max(0.0, 1.0 - P[y, :xi].sum())
    P[xi, xi] = 1.0
    return P


def _expect(V: np.ndarray, kernels: list[np.ndarray]) -> np.ndarray:
    """W[y] = E[V(Y')] when each asset moves independently from post-action level y."""
    W = V
    for m, P in enumerate(kernels):
        W = np.moveaxis(np.tensordot(P, W, axes=([1], [m])), 0, m)
    return W


def _bits(mask: int, M: int) -> tuple[int, ...]:
    return tuple((mask >> m) & 1 for m in range(M))


def _joint_q(V, kernels, config: NetworkConfig) -> np.ndarray:
    M = config.M
    xi = config.xi
    shape = tuple(int(v) + 1 for v in xi)
    W = _expect(V, kernels)
    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    failed = [grids[m] >= xi[m] for m in range(M)]
    Q = np.empty(shape + (2 ** M,))
    for mask in range(2 ** M):
        bits = _bits(mask, M)
        sl = tuple(slice(0, 1) if b else slice(None) for b in bits)
        cont = np.broadcast_to(W[sl], shape)
        c = np.full(shape, config.c_st if mask else 0.0)
        bad = np.zeros(shape, dtype=bool)
        for m, asset in enumerate(config.assets):
            if bits[m]:
                c = c + np.where(failed[m], asset.c_cm, asset.c_pm)
            else:
                bad |= failed[m]
        Q[..., mask] = np.where(bad, np.inf, c + config.gamma * cont)
    return Q


def _greedy(Q: np.ndarray, current: np.ndarray | None = None) -> np.ndarray:
    """Argmin with ties to the current action, else to fewer replacements, then lower bitmask."""
    qmin = Q.min(axis=-1, keepdims=True)
    ok = Q <= qmin + _tie(qmin)
    nA = Q.shape[-1]
    M = int(round(math.log2(nA)))
    order = sorted(range(nA), key=lambda a: (bin(a).count("1"), a))
    act = np.full(Q.shape[:-1], -1, dtype=np.int64)
    for a in reversed(order):
        act = np.where(ok[..., a], a, act)
    if current is not None:
        keep = np.take_along_axis(ok, current[..., None], axis=-1)[..., 0]
        act = np.where(keep, current, act)
    return act


def _evaluate_joint(act, kernels, config: NetworkConfig, dense_limit: int = 4096, tol: float = 1e-13):
    """Exact value of a stationary joint table."""
    shape = act.shape
    N = act.size
    M = config.M
    Q0 = _joint_q(np.zeros(shape), kernels, config)  # immediate costs
    c = np.take_along_axis(Q0, act[..., None], axis=-1)[..., 0]
    if N <= dense_limit:
        T = np.zeros((N, N))
        for i, x in enumerate(itertools.product(*[range(s) for s in shape])):
            bits = _bits(int(act[x]), M)
            row = np.ones(1)
            for m in range(M):
                y = 0 if bits[m] else x[m]
                row = np.outer(row, kernels[m][y]).ravel()
            T[i] = row
        V = np.linalg.solve(np.eye(N) - config.gamma * T, c.ravel())
        return V.reshape(shape)
    V = np.zeros(shape)
    for _ in range(1_000_000):
        W = _expect(V, kernels)
        cont = np.empty(shape)
        for mask in np.unique(act):
            bits = _bits(int(mask), M)
            sl = tuple(slice(0, 1) if b else slice(None) for b in bits)
            cont = np.where(act == mask, np.broadcast_to(W[sl], shape), cont)
        Vn = c + config.gamma * cont
        if np.max(np.abs(Vn - V)) <= tol * (1.0 - config.gamma) * max(1.0, np.max(np.abs(Vn))):
            return Vn
        V = Vn
    raise ConvergenceError("policy evaluation did not converge")


def solve_underlying_mdp(config: NetworkConfig, params: Sequence[DegradationParams] | None = None,
                         budget: int = 10_000_000, max_iter: int = 200) -> TabularPolicy:
    """Policy iteration over the joint damage levels with known parameters.

    Parameters come from ``params`` or from each asset's pinned ``params``.
    Starts from the reactive policy; each iteration evaluates the policy
    exactly and improves it greedily, keeping the incumbent action on ties.
    """
    if params is None:
        if any(a.params is None for a in config.assets):
            raise ValueError("every asset needs known parameters")
        params = [a.params for a in config.assets]
    M = config.M
    shape = tuple(int(v) + 1 for v in config.xi)
    cells = int(np.prod(shape)) * 2 ** M
    if cells > budget:
        raise BudgetError(f"{cells} state-action cells exceed the budget of {budget}")
    kernels = [damage_kernel(p, a.unit_shocks, a.xi) for p, a in zip(params, config.assets)]
    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    act = np.zeros(shape, dtype=np.int64)
    for m in range(M):
        act |= (grids[m] >= config.xi[m]).astype(np.int64) << m
    history = []
    for it in range(max_iter):
        V = _evaluate_joint(act, kernels, config)
        history.append(float(V.sum()))
        Q = _joint_q(V, kernels, config)
        new = _greedy(Q, act)
        if np.array_equal(new, act):
            break
        act = new
    else:
        raise ConvergenceError("policy iteration hit the iteration cap")
    Q = _joint_q(V, kernels, config)
    final = _greedy(Q)
    resid = float(np.max(np.abs(Q.min(axis=-1) - V)))
    return TabularPolicy("joint", final, V, Q, report={
        "method": "policy_iteration", "iterations": it + 1, "value_history": history,
        "bellman_residual": resid}, name="exact")


def solo_levels(policy: TabularPolicy) -> list[int]:
    """Per asset: lowest level replaced when every other asset is new; xi + 1 if never."""
    act = policy.actions
    M = act.ndim
    out = []
    for m in range(M):
        idx = [0] * M
        lv = act.shape[m]
        for x in range(act.shape[m]):
            idx[m] = x
            if (int(act[tuple(idx)]) >> m) & 1:
                lv = x
                break
        out.append(lv)
    return out


def coupling_states(policy: TabularPolicy) -> list[tuple[int, ...]]:
    """States where some asset below its solo replacement level is replaced with others."""
    solo = solo_levels(policy)
    M = policy.actions.ndim
    out = []
    for x in itertools.product(*[range(s) for s in policy.actions.shape]):
        bits = _bits(int(policy.actions[x]), M)
        if sum(bits) < 2:
            continue
        if any(bits[m] and x[m] < solo[m] for m in range(M)):
            out.append(x)
    return out


# ---------------------------------------------------------------------------
# single-asset belief MDP


@nb.njit(cache=True)
def _count_pmf(known_lam, r, beta_t, eps, out):
    """Cells of the one-period shock-count pmf; tail mass lumped on the last cell."""
    D = out.shape[0]
    if known_lam > 0.0:
        pr = math.exp(-known_lam)
        ratio_p = known_lam
    else:
        p = beta_t / (beta_t + 1.0)
        pr = math.exp(r * math.log(p))
        ratio_p = 1.0 - p
    cum = 0.0
    n = 0
    while True:
        out[n] = pr
        cum += pr
        n += 1
        if cum >= 1.0 - eps or n == D:
            break
        if known_lam > 0.0:
            pr *= ratio_p / n
        else:
            pr *= (r + n - 1) * ratio_p / n
    out[n - 1] += max(1.0 - cum, 0.0)
    return n


@nb.njit(cache=True)
def _size_pmf(n, unit, known_q, at, bt, zmax, out):
    """P(Z = z | n shocks) for z < zmax; returns the mass at or beyond zmax."""
    for z in range(zmax):
        out[z] = 0.0
    if n == 0:
        out[0] = 1.0
        return 0.0
    if unit:
        if n < zmax:
            out[n] = 1.0
            return 0.0
        return 1.0
    if known_q > 0.0:
        p0 = math.exp(n * math.log(1.0 - known_q))
    else:
        p0 = 1.0
        for i in range(n):
            p0 *= (bt + i) / (at + bt + i)
    s = 0.0
    pz = p0
    for z in range(zmax):
        out[z] = pz
        s += pz
        if known_q > 0.0:
            pz *= (z + n) / (z + 1.0) * known_q
        else:
            pz *= (z + n) / (z + 1.0) * (at + z) / (at + bt + n + z)
    return max(1.0 - s, 0.0)


@nb.njit(cache=True)
def _continuation(x, k, t, V, vfail, hyp, xi, Kc, T, eps, cbuf, zbuf, skip_self):
    """E[V(next)] from a post-action state; with ``skip_self`` the self-loop
    mass is returned separately instead of being valued."""
    alpha, beta, a, b, unit, known_lam, known_q = hyp
    nd = _count_pmf(known_lam, alpha + k, beta + t, eps, cbuf)
    t2 = min(t + 1, T)
    zmax = xi - x
    acc = 0.0
    p_self = 0.0
    for dk in range(nd):
        pk = cbuf[dk]
        if pk == 0.0:
            continue
        k2 = min(k + dk, Kc)
        pf = _size_pmf(dk, unit, known_q, a + x, b + k, zmax, zbuf)
        acc += pk * pf * vfail
        for z in range(zmax):
            pz = zbuf[z]
            if pz == 0.0:
                continue
            if skip_self and z == 0 and k2 == k and t2 == t:
                p_self += pk * pz
            else:
                acc += pk * pz * V[x + z, k2, t2]
    return acc, p_self


@nb.njit(cache=True)
def _bellman(V, Vout, Qout, g, hyp, xi, Kc, T, eps, c_rep, c_fail, gamma):
    """One synchronous (Jacobi) Bellman sweep; ``g`` is E[V(next)] after a replacement."""
    D = 4096
    cbuf = np.zeros(D)
    zbuf = np.zeros(xi + 1)
    rep = c_rep + gamma * g
    fail = c_fail + gamma * g
    for x in range(xi):
        for k in range(Kc + 1):
            for t in range(T + 1):
                cont, _ = _continuation(x, k, t, V, fail, hyp, xi, Kc, T, eps, cbuf, zbuf, False)
                Qout[x, k, t, 0] = gamma * cont
                Qout[x, k, t, 1] = rep
                Vout[x, k, t] = min(rep, gamma * cont)
    for k in range(Kc + 1):
        for t in range(T + 1):
            Qout[xi, k, t, 0] = np.inf
            Qout[xi, k, t, 1] = fail
            Vout[xi, k, t] = fail


@nb.njit(cache=True)
def _backward(g, V, hyp, xi, Kc, T, eps, c_rep, c_fail, gamma):
    """Exact values of the truncated model given the post-replacement continuation ``g``.

    Age increases every period until its cap, so states are solved from the
    oldest layer down; inside the capped layer the levels never decrease and
    the only cycle is the self-loop, solved in closed form.
    """
    D = 4096
    cbuf = np.zeros(D)
    zbuf = np.zeros(xi + 1)
    rep = c_rep + gamma * g
    fail = c_fail + gamma * g
    for k in range(Kc + 1):
        for t in range(T + 1):
            V[xi, k, t] = fail
    for t in range(T, -1, -1):
        for x in range(xi - 1, -1, -1):
            for k in range(Kc, -1, -1):
                cont, ps = _continuation(x, k, t, V, fail, hyp, xi, Kc, T, eps, cbuf, zbuf, True)
                post = gamma * cont / (1.0 - gamma * ps)
                V[x, k, t] = min(rep, post)
    cont, _ = _continuation(0, 0, 0, V, fail, hyp, xi, Kc, T, eps, cbuf, zbuf, False)
    return cont


def _asset_hyp(asset: AssetConfig):
    p = asset.prior
    known_lam = -1.0
    known_q = -1.0
    if asset.params is not None:
        known_lam = asset.params.lam
        known_q = asset.params.q
    elif asset.unit_shocks:
        known_lam = p.mean_rate
    return (float(p.alpha), float(p.beta), float(p.a), float(p.b), bool(asset.unit_shocks),
            float(known_lam), float(known_q))


def solve_single_asset_bmdp(asset: AssetConfig, c_st: float, gamma: float, trunc: TruncationSpec | None = None,
                            budget: int = 10_000_000, tol: float = 1e-6, method: str = "layered",
                            max_iter: int = 100_000) -> TabularPolicy:
    """Optimal replace/postpone table of one asset over its belief ``(x, k, t)``.

    Every replacement pays ``c_st`` as well.  ``method="jacobi"`` runs plain
    synchronous value iteration until the sup-norm Bellman residual is at most
    ``tol``.  ``method="layered"`` solves the truncated model exactly with
    backward sweeps over age plus a scalar root search, then verifies the
    residual with one Jacobi sweep.
    """
    trunc = TruncationSpec.default(asset) if trunc is None else trunc
    xi = asset.xi
    Kc, T = int(trunc.k_max), int(trunc.t_max)
    cells = (xi + 1) * (Kc + 1) * (T + 1) * 2
    if cells > budget:
        raise BudgetError(f"{cells} state-action cells exceed the budget of {budget}")
    hyp = _asset_hyp(asset)
    eps = float(trunc.tail_mass_eps)
    c_rep = asset.c_pm + c_st
    c_fail = asset.c_cm + c_st
    shape = (xi + 1, Kc + 1, T + 1)
    V = np.zeros(shape)
    Vn = np.zeros(shape)
    Q = np.zeros(shape + (2,))
    residuals = []
    cbuf = np.zeros(4096)
    zbuf = np.zeros(xi + 1)

    def g_of(V):
        return _continuation(0, 0, 0, V, V[xi, 0, 0], hyp, xi, Kc, T, eps, cbuf, zbuf, False)[0]

    if method == "jacobi":
        for it in range(max_iter):
            _bellman(V, Vn, Q, g_of(V), hyp, xi, Kc, T, eps, c_rep, c_fail, gamma)
            r = float(np.max(np.abs(Vn - V)))
            residuals.append(r)
            V, Vn = Vn, V
            if r <= tol:
                break
        else:
            raise ConvergenceError(f"value iteration did not reach residual {tol}")
    elif method == "layered":
        def h(g):
            return _backward(g, V, hyp, xi, Kc, T, eps, c_rep, c_fail, gamma) - g
        hi = (c_fail + 1.0) / (1.0 - gamma)
        g = optimize.brentq(h, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
        _backward(g, V, hyp, xi, Kc, T, eps, c_rep, c_fail, gamma)
        _bellman(V, Vn, Q, g_of(V), hyp, xi, Kc, T, eps, c_rep, c_fail, gamma)
        residuals.append(float(np.max(np.abs(Vn - V))))
        if residuals[-1] > tol:
            raise ConvergenceError(f"Bellman residual {residuals[-1]:.3g} above {tol}")
        V = Vn
    else:
        raise ValueError(f"unknown method {method!r}")
    _bellman(V, Vn, Q, g_of(V), hyp, xi, Kc, T, eps, c_rep, c_fail, gamma)
    gap = Q[..., 1] - Q[..., 0]
    act = (gap < -_tie(Q[..., 0].clip(max=1e300))).astype(np.int8)
    act[xi] = 1
    c_max = max(c_fail, c_rep)
    return TabularPolicy("asset", act, V, Q, trunc, report={
        "method": method, "iterations": len(residuals), "residuals": residuals,
        "bellman_residual": residuals[-1],
        "truncation_error_bound": eps * c_max / (1.0 - gamma) ** 2}, name="integrated_bayes")


# ---------------------------------------------------------------------------
# structure checks


@dataclass
class MonotonicityReport:
    mode: str
    checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _level_violations(policy: TabularPolicy, limit: int):
    Q = policy.q_values
    act = policy.actions.astype(np.int64)
    if policy.kind == "asset":
        Q = Q[..., [0, 1]]
    qmin = Q.min(axis=-1)
    axes = policy.level_axes
    M = len(axes)
    out = []
    checked = 0
    for a in np.unique(act):
        S = act == a
        raise_axes = [axes[m] for m in range(M) if (a >> m) & 1]
        U = S
        for ax in raise_axes:
            U = np.logical_or.accumulate(U, axis=ax)
        checked += int(U.sum())
        bad = U & (Q[..., a] > qmin + _tie(qmin))
        for y in map(tuple, np.argwhere(bad)[:limit - len(out)]):
            # witness: a state below y along the raised axes holding action a
            sl = tuple(slice(0, y[i] + 1) if i in raise_axes else slice(y[i], y[i] + 1) for i in range(len(y)))
            w = np.argwhere(S[sl])[0]
            x = tuple(int(w[i] + (0 if i in raise_axes else y[i])) for i in range(len(y)))
            out.append((x, tuple(int(v) for v in y), int(a)))
        if len(out) >= limit:
            break
    return checked, out


def check_monotonicity(policy, mode: str = "levels", limit: int = 1000) -> MonotonicityReport:
    """Audit optimal-policy structure; returns violating pairs.

    ``levels``: for each state x with action a, every state y that raises the
    damage only of assets replaced under a must still have a among its
    minimisers.  ``params``: ``policy`` maps per-asset parameter tuples
    ``((lam, q), ...)`` to joint tables; raising the parameters only of
    replaced assets must keep the action among the minimisers.
    """
    if mode == "levels":
        checked, v = _level_violations(policy, limit)
        return MonotonicityReport("levels", checked, v)
    if mode != "params":
        raise ValueError(f"unknown mode {mode!r}")
    grid = dict(policy)
    out = []
    checked = 0
    for P, pol in grid.items():
        act = pol.actions
        M = act.ndim
        for P2, pol2 in grid.items():
            up = [all(u >= v for u, v in zip(b, a)) for a, b in zip(P, P2)]
            same = [tuple(a) == tuple(b) for a, b in zip(P, P2)]
            if P2 == P or not all(up):
                continue
            Q2 = pol2.q_values
            q2min = Q2.min(axis=-1)
            for x in itertools.product(*[range(s) for s in act.shape]):
                a = int(act[x])
                if any(not ((a >> m) & 1) and not same[m] for m in range(M)):
                    continue
                checked += 1
                if Q2[x + (a,)] > q2min[x] + _tie(q2min[x]):
                    out.append((P, P2, x, a))
                    if len(out) >= limit:
                        return MonotonicityReport("params", checked, out)
    return MonotonicityReport("params", checked, out)
