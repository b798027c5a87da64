"""Degradation data: ingestion, periodisation, empirical-Bayes prior fitting,
replay sources and a synthetic stand-in data generator.

Input CSV: header ``component_id,t,x``; rows of one component are contiguous
and chronological; ``t`` is a timestamp and ``x`` the cumulative damage.
Every data point after the first is one shock (a procedure) whose size is the
damage increment, possibly zero.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.special import betaln, gammaln

from . import _kernels as K
from .degradation import AssetConfig, PopulationPrior, sample_params


class SchemaError(ValueError):
    """Malformed input data."""


class FitWarning(UserWarning):
    """The prior fit did not converge or its hyperparameters are poorly identified."""


@dataclass
class RawSeries:
    component_id: str
    t: np.ndarray
    x: np.ndarray


@dataclass
class PeriodizedSeries:
    component_id: str
    k: np.ndarray   # shocks per period
    z: np.ndarray   # damage per period
    failed: bool    # cumulative damage reached the failure level in the last period
    # observed operational time in periods (up to the failing shock); None means whole periods
    exposure: float | None = None

    @property
    def periods(self) -> int:
        return int(self.k.size)

    @property
    def totals(self) -> tuple[int, int, float]:
        T = float(self.periods if self.exposure is None else self.exposure)
        return int(self.k.sum()), int(self.z.sum()), T


# ---------------------------------------------------------------------------
# ingestion


def ingest(path) -> list[RawSeries]:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        warnings.warn(f"{path} is empty")
        return []
    rows = list(csv.reader(text.splitlines()))
    if [h.strip() for h in rows[0]] != ["component_id", "t", "x"]:
        raise SchemaError(f"{path}: header must be component_id,t,x, got {rows[0]}")
    out: list[RawSeries] = []
    seen = set()
    cur, ts, xs = None, [], []

    def flush():
        if cur is not None:
            out.append(RawSeries(cur, np.array(ts, dtype=float), np.array(xs, dtype=float)))

    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise SchemaError(f"line {line}: expected 3 fields, got {len(row)}")
        cid = row[0].strip()
        try:
            t, x = float(row[1]), float(row[2])
        except ValueError:
            raise SchemaError(f"line {line}: t and x must be numbers") from None
        if not (math.isfinite(t) and math.isfinite(x)) or t < 0 or x < 0:
            raise SchemaError(f"line {line}: t and x must be finite and >= 0")
        if cid != cur:
            if cid in seen:
                raise SchemaError(f"line {line}: rows of component {cid!r} are not contiguous")
            flush()
            seen.add(cid)
            cur, ts, xs = cid, [], []
        elif t == ts[-1]:
            raise SchemaError(f"line {line}: duplicate timestamp {t} for component {cid!r}")
        elif t < ts[-1]:
            raise SchemaError(f"line {line}: timestamps of component {cid!r} decrease")
        elif x < xs[-1]:
            raise SchemaError(f"line {line}: damage of component {cid!r} decreases ({xs[-1]} -> {x})")
        ts.append(t)
        xs.append(x)
    flush()
    return out


def write_series_csv(series: Sequence[RawSeries], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component_id", "t", "x"])
        for s in series:
            for t, x in zip(s.t, s.x):
                w.writerow([s.component_id, repr(float(t)), repr(float(x))])


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessOptions:
    xi: int = 50
    period_length: float = 1.0
    outlier_quantile: float | None = 0.99   # None keeps every interarrival
    min_interarrival: float = 0.0           # shorter procedures are dropped; 0 keeps all


def preprocess(raw: RawSeries, opts: PreprocessOptions = PreprocessOptions()) -> PeriodizedSeries:
    """Operational-time periodisation of one series.

    Interarrival times above the series' ``outlier_quantile`` are treated as
    downtime and removed from the clock.  Procedures closer than
    ``min_interarrival`` to the previous kept one are dropped and their damage
    moves to the next kept procedure.  Time is divided by ``period_length``
    and a shock at operational time ``s`` falls in period ``ceil(s) - 1``.
    The series is cut at the first period where the damage reaches ``xi``.
    """
    t = np.asarray(raw.t, dtype=float)
    x = np.rint(np.asarray(raw.x, dtype=float)).astype(np.int64)
    if t.size < 2:
        raise ValueError(f"component {raw.component_id!r}: fewer than two data points")
    gaps = np.diff(t)
    inc = np.diff(x - x[0])
    if opts.outlier_quantile is not None and gaps.size:
        cut = np.quantile(gaps, opts.outlier_quantile)
        gaps = np.where(gaps > cut, 0.0, gaps)
    if opts.min_interarrival > 0:
        keep_gaps, keep_inc = [], []
        acc_gap, acc_inc = 0.0, 0
        for g, y in zip(gaps, inc):
            acc_gap += g
            acc_inc += y
            if g >= opts.min_interarrival:
                keep_gaps.append(acc_gap)
                keep_inc.append(acc_inc)
                acc_gap, acc_inc = 0.0, 0
        if acc_inc and keep_inc:
            keep_inc[-1] += acc_inc
        gaps, inc = np.array(keep_gaps), np.array(keep_inc, dtype=np.int64)
    s = np.cumsum(gaps) / opts.period_length
    if s.size == 0:
        raise ValueError(f"component {raw.component_id!r}: no procedures left after cleaning")
    period = np.maximum(np.ceil(s).astype(np.int64) - 1, 0)
    cum = np.cumsum(inc)
    hit = np.flatnonzero(cum >= opts.xi)
    failed = hit.size > 0
    last = int(period[hit[0]]) if failed else int(period[-1])
    if not failed and s[-1] < 1.0:
        raise ValueError(f"component {raw.component_id!r}: shorter than one period after cleaning")
    sel = period <= last
    if failed:
        sel &= np.arange(period.size) <= hit[0]
    k = np.bincount(period[sel], minlength=last + 1).astype(np.int64)
    z = np.bincount(period[sel], weights=inc[sel], minlength=last + 1).astype(np.int64)
    exposure = float(s[hit[0]] if failed else s[-1])
    return PeriodizedSeries(raw.component_id, k, z, bool(failed), exposure)


# ---------------------------------------------------------------------------
# prior fitting


def _count_ll(alpha, beta, k, T):
    return (gammaln(alpha + k) - gammaln(alpha) - gammaln(k + 1.0)
            + alpha * np.log(beta / (beta + T)) + k * np.log(T / (beta + T)))


def _size_ll(a, b, z, k):
    pos = k > 0
    out = np.zeros_like(z, dtype=float)
    zz, kk = z[pos], k[pos]
    out[pos] = (gammaln(zz + kk) - gammaln(zz + 1.0) - gammaln(kk)
                + betaln(a + zz, b + kk) - betaln(a, b))
    return out


@dataclass
class FitDiagnostics:
    loglik: float
    loglik_start: float
    start: PopulationPrior
    per_component: np.ndarray
    converged: bool
    # standard errors of (log mean rate, log alpha, logit mean q, log(a + b))
    log_se: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    messages: list[str] = field(default_factory=list)
    at_boundary: bool = False

    def write_csv(self, path, ids: Sequence[str]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component_id", "loglik"])
            for i, v in zip(ids, self.per_component):
                w.writerow([i, repr(float(v))])


def _moments_start(k, z, T) -> PopulationPrior:
    r = k / T
    m = float(r.mean())
    v_lam = float(r.var(ddof=1) - np.mean(r / T)) if r.size > 1 else 0.0
    if not (v_lam > 0):
        v_lam = (0.3 * m) ** 2
    alpha = m * m / v_lam
    pos = k > 0
    qh = z[pos] / (z[pos] + k[pos])
    mq = float(np.clip(qh.mean(), 0.02, 0.98))
    vq = float(qh.var(ddof=1)) if qh.size > 1 else 0.0
    s = mq * (1 - mq) / vq - 1.0 if vq > 0 else 20.0
    s = s if s > 0.5 else 20.0
    return PopulationPrior(alpha, alpha / m, mq * s, (1 - mq) * s)


def _hessian_se(f, p, h=1e-4):
    n = p.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.eye(n)[i] * h
            ej = np.eye(n)[j] * h
            H[i, j] = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4 * h * h)
    try:
        cov = np.linalg.inv(H)
        return np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        return np.full(n, np.nan)


def fit_priors(training: Sequence[PeriodizedSeries], max_log: float = 15.0) -> tuple[PopulationPrior, FitDiagnostics]:
    """Empirical-Bayes hyperparameters from per-component totals.

    Maximises the marginal likelihood of the shock counts (Gamma-Poisson) and
    of the damage given the counts (Beta-geometric) with Nelder-Mead, starting
    from a method-of-moments guess.  The two factors share no parameters and
    are maximised separately.  Each factor is parameterised by its mean and
    log concentration, so when the data show no heterogeneity the
    concentration runs to its cap while the mean still converges; that case
    is reported as ``at_boundary``.  The count exposure of a component is
    its observed operational time; a lifetime ends at the failing shock, so
    counting its last period in full would bias the rate downward.
    """
    if len(training) < 2:
        raise ValueError("need at least two components to fit a population prior")
    tot = np.array([s.totals for s in training], dtype=float)
    k, z, T = tot[:, 0], tot[:, 1], tot[:, 2]
    if np.all(k == 0):
        raise ValueError("no shocks in the training data")
    start = _moments_start(k, z, T)
    msgs = []

    # counts: (log mean rate, log alpha); sizes: (logit mean q, log(a + b))
    def count_hp(p):
        al = math.exp(min(p[1], max_log))
        return al, al / math.exp(p[0])

    def size_hp(p):
        s = math.exp(min(p[1], max_log))
        mq = 1.0 / (1.0 + math.exp(-p[0]))
        return mq * s, (1.0 - mq) * s

    def nll_c(p):
        return -float(np.sum(_count_ll(*count_hp(p), k, T)))

    def nll_s(p):
        return -float(np.sum(_size_ll(*size_hp(p), z, k)))

    p0c = np.array([math.log(start.mean_rate), math.log(start.alpha)])
    p0s = np.array([math.log(start.a / start.b), math.log(start.a + start.b)])
    ll_start = -(nll_c(p0c) + nll_s(p0s))
    opts = dict(xatol=1e-9, fatol=1e-11, maxiter=20_000, maxfev=40_000)
    rc = optimize.minimize(nll_c, p0c, method="Nelder-Mead", options=opts)
    rs = optimize.minimize(nll_s, p0s, method="Nelder-Mead", options=opts)
    converged = bool(rc.success and rs.success)
    boundary = False
    for name, r in (("counts", rc), ("sizes", rs)):
        if not r.success:
            msgs.append(f"{name}: {r.message}")
        if r.x[1] >= max_log:
            boundary = True
            msgs.append(f"{name}: no heterogeneity detected, concentration capped at exp({max_log})")
        r.x[1] = min(r.x[1], max_log)
    prior = PopulationPrior(*count_hp(rc.x), *size_hp(rs.x))
    per = _count_ll(prior.alpha, prior.beta, k, T) + _size_ll(prior.a, prior.b, z, k)
    se = np.concatenate([_hessian_se(nll_c, rc.x), _hessian_se(nll_s, rs.x)])
    if not converged:
        warnings.warn("prior fit did not converge: " + "; ".join(msgs), FitWarning)
    elif boundary or not np.all(np.isfinite(se)) or np.any(se > 1.0):
        warnings.warn("prior fit is poorly identified (log standard errors "
                      f"{np.array2string(se, precision=3)}): " + "; ".join(msgs), FitWarning)
    return prior, FitDiagnostics(float(per.sum()), float(ll_start), start, per, converged, se, msgs, boundary)


# ---------------------------------------------------------------------------
# replay


@dataclass
class ReplaySource:
    """Pool of recorded component lifetimes for trace-driven evaluation.

    Every installed component is a trajectory drawn uniformly with
    replacement from the pool; its per-period signals are fed in order.
    """

    offsets: np.ndarray
    k: np.ndarray
    z: np.ndarray
    ids: list[str]

    @property
    def size(self) -> int:
        return len(self.ids)

    def kernel_source(self):
        return (K.SRC_REPLAY, self.offsets, self.k, self.z)

    def trajectory(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.offsets[i], self.offsets[i + 1]
        return self.k[a:b], self.z[a:b]


def build_replay(test: Sequence[PeriodizedSeries], xi: int) -> ReplaySource:
    if not test:
        raise ValueError("replay needs at least one trajectory")
    for s in test:
        if not s.failed or s.z.sum() < xi:
            raise ValueError(f"trajectory {s.component_id!r} does not reach the failure level {xi}")
    lens = np.array([s.periods for s in test], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    k = np.concatenate([s.k for s in test]).astype(np.int64)
    z = np.concatenate([s.z for s in test]).astype(np.int64)
    return ReplaySource(offsets, k, z, [s.component_id for s in test])


# ---------------------------------------------------------------------------
# synthetic data


def synthesize_component(asset: AssetConfig, rng: np.random.Generator, cid: str,
                         period_length: float = 1.0, max_periods: int = 100_000) -> tuple[RawSeries, PeriodizedSeries]:
    """One full lifetime: raw shock timestamps plus the ground-truth periodisation.

    Shock times are uniform inside their period; the series stops at the
    shock that takes the damage to the failure level.
    """
    params = asset.params if asset.params is not None else sample_params(asset.prior, rng)
    ts, xs, ks, zs = [0.0], [0.0], [], []
    x = 0
    end = 0.0
    for p in range(max_periods):
        n = int(rng.poisson(params.lam))
        times = np.sort(p + (1.0 - rng.random(n)))  # in (p, p + 1]
        sizes = np.ones(n, np.int64) if asset.unit_shocks else rng.geometric(1.0 - params.q, n) - 1
        kk = zz = 0
        for tt, y in zip(times, sizes):
            x += int(y)
            kk += 1
            zz += int(y)
            ts.append(tt * period_length)
            xs.append(float(x))
            if x >= asset.xi:
                end = float(tt)
                break
        ks.append(kk)
        zs.append(zz)
        if x >= asset.xi:
            break
        end = p + 1.0
    raw = RawSeries(cid, np.array(ts), np.array(xs))
    return raw, PeriodizedSeries(cid, np.array(ks, np.int64), np.array(zs, np.int64), x >= asset.xi, end)


def synthesize_pool(asset: AssetConfig, n: int, seed: int, period_length: float = 1.0):
    """``n`` independent full lifetimes; returns (raw series, ground truth)."""
    rng = np.random.default_rng(K.derive_seed(seed, 0x5A17, n) % 2**63)
    out = [synthesize_component(asset, rng, f"c{i:03d}", period_length) for i in range(n)]
    return [r for r, _ in out], [p for _, p in out]


def split_pool(series: Sequence, n_train: int, seed: int):
    """Random train/test split of a component pool."""
    rng = np.random.default_rng(K.derive_seed(seed, 0x5B11, n_train) % 2**63)
    idx = rng.permutation(len(series))
    return [series[i] for i in sorted(idx[:n_train])], [series[i] for i in sorted(idx[n_train:])]
