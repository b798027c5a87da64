"""Compiled episode simulator shared by the evaluator, the threshold sweep and
rollout labeling.

Random streams
--------------
Each installed component owns a SplitMix64 stream keyed by
``(seed, rep, asset, install index)``; the component present at episode start
uses the key ``(seed, rep, asset, INIT)``.  The stream first yields the
component's parameters and then its per-period shocks, drawn lazily one
period at a time.  Per-epoch asset orderings come from a hash of
``(seed, rep, epoch)``.  No stream depends on the actions taken, so policies
evaluated with the same seed see exactly the same components (common random
numbers), and a replication's cost does not depend on which worker ran it.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

SRC_MODEL = 0
SRC_REPLAY = 1

POL_THRESHOLD = 0
POL_ASSET_TABLE = 1
POL_JOINT_TABLE = 2
POL_MLP = 3

FEAT_F1 = 0
FEAT_F2 = 1
FEAT_F3 = 2

INIT_POSTERIOR = 0  # draw the current component's params from the posterior of its belief
INIT_GIVEN = 1      # current component's params are known
INIT_REPLAY = 2     # current component is a fresh trajectory from the replay pool

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_TAG_INIT = np.uint64(0x5EED1A17F00D)
_TAG_PERM = np.uint64(0x9E12A7B3C0DE)
_INV53 = 1.0 / 9007199254740992.0
_POIS_SPLIT = 30.0


@nb.njit(cache=True, inline='always')
def _fmix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def splitmix64(x):
    return _fmix(np.uint64(x) + _GOLDEN)


@nb.njit(cache=True)
def stream_key(seed, a, b, c):
    h = splitmix64(np.uint64(seed))
    h = splitmix64(h ^ np.uint64(a))
    h = splitmix64(h ^ np.uint64(b))
    h = splitmix64(h ^ np.uint64(c))
    return h


def kernel_seed(seed) -> int:
    """A 64-bit seed as the signed integer the kernels take (same bit pattern)."""
    seed = int(seed) % 2**64
    return seed - 2**64 if seed >= 2**63 else seed


def derive_seed(seed, tag, a=0, b=0) -> int:
    """Child seed for a purpose ``tag`` and indices ``a``, ``b``."""
    return kernel_seed(int(stream_key(np.uint64(int(seed) % 2**64), np.uint64(tag), np.uint64(a), np.uint64(b))))


# ---------------------------------------------------------------------------
# variates; the stream state ``s`` is threaded through explicitly


@nb.njit(cache=True, inline='always')
def _u(s):
    """Advance the stream and return (state, uniform on the open interval (0, 1))."""
    s = s + _GOLDEN
    return s, (np.float64(_fmix(s) >> np.uint64(11)) + 0.5) * _INV53


@nb.njit(cache=True)
def _normal(s):
    s, u1 = _u(s)
    s, u2 = _u(s)
    return s, math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True)
def _gamma(s, shape):
    """Gamma(shape, scale 1) by Marsaglia and Tsang."""
    boost = 1.0
    if shape < 1.0:
        s, u = _u(s)
        boost = u ** (1.0 / shape)
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        s, xn = _normal(s)
        v = 1.0 + c * xn
        if v <= 0.0:
            continue
        v = v * v * v
        s, u = _u(s)
        if math.log(u) < 0.5 * xn * xn + d - d * v + d * math.log(v):
            return s, d * v * boost


@nb.njit(cache=True, inline='always')
def _poisson_small(s, el):
    # multiplication method, el = exp(-lam)
    s, p = _u(s)
    k = 0
    while p > el:
        s, u = _u(s)
        p *= u
        k += 1
    return s, k


@nb.njit(cache=True)
def _poisson_large(s, lam):
    n = int(lam // _POIS_SPLIT) + 1
    ep = math.exp(-lam / n)
    k = 0
    for _ in range(n):
        s, kk = _poisson_small(s, ep)
        k += kk
    return s, k


@nb.njit(cache=True, inline='always')
def _poisson(s, lam, el):
    if lam < _POIS_SPLIT:
        return _poisson_small(s, el)
    return _poisson_large(s, lam)


@nb.njit(cache=True, inline='always')
def _geometric0(s, lq):
    """P(Y = y) = q**y (1 - q) on {0, 1, ...}; ``lq = log q``."""
    s, u = _u(s)
    return s, int(math.floor(math.log(u) / lq))


@nb.njit(cache=True)
def epoch_perm(seed, rep, ep, perm):
    M = perm.shape[0]
    for i in range(M):
        perm[i] = i
    h = stream_key(seed, _TAG_PERM, rep, ep)
    for i in range(M - 1, 0, -1):
        h = splitmix64(h)
        j = np.int64(h % np.uint64(i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp


# ---------------------------------------------------------------------------
# component state
#
# st = (x, k, t, lam, q, lq, el, rs, ncomp, roff, rlen, rpos)


@nb.njit(cache=True)
def make_state(M):
    return (np.zeros(M, np.int64), np.zeros(M, np.int64), np.zeros(M, np.int64),
            np.zeros(M), np.zeros(M), np.zeros(M), np.zeros(M),
            np.zeros(M, np.uint64), np.zeros(M, np.int64),
            np.zeros(M, np.int64), np.zeros(M, np.int64), np.zeros(M, np.int64))


@nb.njit(cache=True)
def _set_params(m, lam_v, q_v, st):
    st[3][m] = lam_v
    st[4][m] = q_v
    st[5][m] = math.log(q_v) if q_v > 0.0 else -math.inf
    st[6][m] = math.exp(-lam_v) if lam_v < _POIS_SPLIT else 0.0


@nb.njit(cache=True)
def _draw_params(m, alpha, beta, a, b, unit, flam, fq, st):
    rs = st[7]
    if flam > 0.0:
        _set_params(m, flam, fq, st)
        return
    if unit:
        # unit shocks have mean size 1, like a geometric with q = 1/2
        _set_params(m, alpha / beta, 0.5, st)
        return
    s = rs[m]
    s, g = _gamma(s, alpha)
    lam_v = max(g / beta, 1e-300)
    s, ga = _gamma(s, a)
    s, gb = _gamma(s, b)
    rs[m] = s
    q_v = min(max(ga / (ga + gb), 1e-12), 1.0 - 1e-12)
    _set_params(m, lam_v, q_v, st)


@nb.njit(cache=True)
def _pick_trajectory(m, pool_off, st):
    npool = pool_off.shape[0] - 1
    s, u = _u(st[7][m])
    st[7][m] = s
    i = min(int(u * npool), npool - 1)
    st[9][m] = pool_off[i]
    st[10][m] = pool_off[i + 1] - pool_off[i]
    st[11][m] = 0
    _set_params(m, 0.0, 0.0, st)


@nb.njit(cache=True)
def _install(seed, rep, m, inst, src, st):
    """Replace asset ``m`` with its next component."""
    xi, c_pm, c_cm, alpha, beta, a, b, unit, flam, fq = inst
    j = st[8][m]
    st[7][m] = stream_key(seed, rep, m, j)
    st[8][m] = j + 1
    st[0][m] = 0
    st[1][m] = 0
    st[2][m] = 0
    if src[0] == SRC_REPLAY:
        _pick_trajectory(m, src[1], st)
    else:
        _draw_params(m, alpha[m], beta[m], a[m], b[m], unit[m], flam[m], fq[m], st)


@nb.njit(cache=True)
def _init_asset(seed, rep, m, inst, src, ctrl, st):
    xi, c_pm, c_cm, alpha, beta, a, b, unit, flam, fq = inst
    x0, k0, t0, init_mode, lam0, q0 = ctrl[1], ctrl[2], ctrl[3], ctrl[4], ctrl[5], ctrl[6]
    st[7][m] = stream_key(seed, rep, m, _TAG_INIT)
    st[8][m] = 0
    st[0][m] = x0[m]
    st[1][m] = k0[m]
    st[2][m] = t0[m]
    mode = init_mode[m]
    if mode == INIT_REPLAY:
        _pick_trajectory(m, src[1], st)
    elif mode == INIT_GIVEN:
        _set_params(m, lam0[m], q0[m], st)
    else:
        _draw_params(m, alpha[m] + k0[m], beta[m] + t0[m], a[m] + x0[m], b[m] + k0[m],
                     unit[m], flam[m], fq[m], st)


# ---------------------------------------------------------------------------
# policies


@nb.njit(cache=True)
def features(m, eta, variant, inst, st, out):
    """Feature vector for deciding asset ``m``; ``out`` has 4M+1 or 6M+1 entries."""
    xi, c_pm, c_cm, alpha, beta, a, b, unit, flam, fq = inst
    x, k, t, lam, q = st[0], st[1], st[2], st[3], st[4]
    M = x.shape[0]
    w = 6 if variant == FEAT_F3 else 4
    for i in range(M):
        o = i * w
        out[o] = min(x[i], xi[i])
        if variant == FEAT_F1:
            out[o + 1] = lam[i]
            out[o + 2] = q[i]
        else:
            out[o + 1] = (alpha[i] + k[i]) / (beta[i] + t[i])
            out[o + 2] = (a[i] + x[i]) / (a[i] + b[i] + x[i] + k[i])
        if variant == FEAT_F3:
            out[o + 3] = k[i]
            out[o + 4] = t[i]
        out[o + w - 1] = 1.0 if i == m else 0.0
    out[M * w] = 1.0 if eta else 0.0


@nb.njit(cache=True, fastmath=True, inline='always')
def _dense(WT, b, h, out, relu):
    # WT is (inputs, outputs); zero inputs (dead ReLUs) are skipped
    n = WT.shape[1]
    for i in range(n):
        out[i] = b[i]
    for j in range(WT.shape[0]):
        hj = h[j]
        if hj != 0.0:
            for i in range(n):
                out[i] += WT[j, i] * hj
    if relu:
        for i in range(n):
            out[i] = max(out[i], 0.0)


@nb.njit(cache=True, fastmath=True)
def mlp_forward(f, W, wk):
    """Logits of the 4-layer ReLU network; ``W`` = (mu, sd, W1T, b1, ..., W4T, b4).

    ``wk`` is a (5, width) work array; the logits are left in ``wk[4, :2]``.
    """
    mu, sd, W1, b1, W2, b2, W3, b3, W4, b4 = W
    d = f.shape[0]
    h0 = wk[0, :d]
    for i in range(d):
        h0[i] = (f[i] - mu[i]) / sd[i]
    h1 = wk[1, :W1.shape[1]]
    h2 = wk[2, :W2.shape[1]]
    h3 = wk[3, :W3.shape[1]]
    out = wk[4, :W4.shape[1]]
    _dense(W1, b1, h0, h1, True)
    _dense(W2, b2, h1, h2, True)
    _dense(W3, b3, h2, h3, True)
    _dense(W4, b4, h3, out, False)
    return out


@nb.njit(cache=True)
def _work_buffer(M, W):
    width = max(6 * M + 1, W[2].shape[1], W[4].shape[1], W[6].shape[1], W[8].shape[1], 2)
    return np.zeros((6, width))


@nb.njit(cache=True, inline='always')
def restricted(xm, failed, tpm, topm, delta, zeta):
    """-1 when both actions are allowed, else the forced action."""
    if failed:
        return 1
    if xm <= delta * topm:
        return 0
    if xm >= zeta * tpm:
        return 1
    return -1


@nb.njit(cache=True)
def _mlp_decide(m, eta, pol, inst, st, fbuf):
    W = pol[9]
    f = fbuf[5, :W[0].shape[0]]
    features(m, eta, pol[6], inst, st, f)
    z = mlp_forward(f, W, fbuf)
    return 1 if z[1] > z[0] else 0


@nb.njit(cache=True, inline='always')
def _epoch_prelude(kind, tpm, joint, jt, xi, x):
    """Epoch-level quantity computed from the pre-action state.

    Joint threshold rule: 1 if any asset triggers.  Joint table: action bitmask.
    """
    M = x.shape[0]
    if kind == POL_THRESHOLD and joint:
        for m in range(M):
            if x[m] >= xi[m] or x[m] >= tpm[m]:
                return 1
        return 0
    if kind == POL_JOINT_TABLE:
        idx = 0
        for m in range(M):
            idx = idx * (xi[m] + 1) + min(x[m], xi[m])
        return jt[idx]
    return 0


# ---------------------------------------------------------------------------
# episodes


@nb.njit(cache=True)
def episode(seed, rep, horizon, gamma, c_st, inst, src, pol, ctrl, st, perm, fbuf):
    """Discounted cost of one replication.

    ``ctrl`` = (use_ctrl, x0, k0, t0, init_mode, lam0, q0, first_perm, decided,
    eta0, setup_paid0, cost0).  With ``use_ctrl`` the first epoch follows
    ``first_perm`` and skips ``decided`` assets, whose actions are already
    applied to the initial state and charged in ``cost0``; it starts with
    opportunity flag ``eta0`` and does not charge the setup cost again when
    ``setup_paid0``.
    """
    xi, c_pm, c_cm, unit = inst[0], inst[1], inst[2], inst[7]
    use_ctrl, first_perm, decided = ctrl[0], ctrl[7], ctrl[8]
    eta0, setup_paid0 = ctrl[9], ctrl[10]
    kind, tpm, topm, joint, tbl, jt, delta, zeta = pol[0], pol[1], pol[2], pol[3], pol[4], pol[5], pol[7], pol[8]
    src_kind, pool_k, pool_z = src[0], src[2], src[3]
    x, k, t, lam, lq, el, rs = st[0], st[1], st[2], st[3], st[5], st[6], st[7]
    roff, rlen, rpos = st[9], st[10], st[11]
    M = x.shape[0]
    for m in range(M):
        _init_asset(seed, rep, m, inst, src, ctrl, st)
    total = ctrl[11] if use_ctrl else 0.0
    disc = 1.0
    for ep in range(horizon):
        first = use_ctrl and ep == 0
        if first:
            for i in range(M):
                perm[i] = first_perm[i]
        elif M > 1:
            epoch_perm(seed, rep, ep, perm)
        else:
            perm[0] = 0
        eta = first and eta0
        for m in range(M):
            if x[m] >= xi[m]:
                eta = True
        jf = _epoch_prelude(kind, tpm, joint, jt, xi, x)
        cost = 0.0
        any_act = False
        for j in range(M):
            m = perm[j]
            if first and decided[m]:
                continue
            if x[m] >= xi[m]:
                am = 1
            elif kind == POL_THRESHOLD:
                if joint:
                    am = 1 if (jf and x[m] >= topm[m]) else 0
                else:
                    am = 1 if (x[m] >= tpm[m] or (eta and x[m] >= topm[m])) else 0
            elif kind == POL_ASSET_TABLE:
                am = tbl[m, min(x[m], tbl.shape[1] - 1), min(k[m], tbl.shape[2] - 1),
                         min(t[m], tbl.shape[3] - 1)]
            elif kind == POL_JOINT_TABLE:
                am = (jf >> m) & 1
            else:
                am = restricted(x[m], False, tpm[m], topm[m], delta, zeta)
                if am < 0:
                    am = _mlp_decide(m, eta, pol, inst, st, fbuf)
            if am:
                any_act = True
                eta = True
                cost += c_cm[m] if x[m] >= xi[m] else c_pm[m]
                _install(seed, rep, m, inst, src, st)
        if any_act and not (first and setup_paid0):
            cost += c_st
        total += disc * cost
        # stage 2: one period of degradation
        for m in range(M):
            if src_kind == SRC_REPLAY:
                p = rpos[m]
                if p < rlen[m]:
                    x[m] += pool_z[roff[m] + p]
                    k[m] += pool_k[roff[m] + p]
                    rpos[m] = p + 1
            else:
                s = rs[m]
                s, kk = _poisson(s, lam[m], el[m])
                if kk > 0:
                    if unit[m]:
                        z = kk
                    else:
                        z = 0
                        lqm = lq[m]
                        for _ in range(kk):
                            s, g = _geometric0(s, lqm)
                            z += g
                    x[m] += z
                    k[m] += kk
                rs[m] = s
            t[m] += 1
        disc *= gamma
    return total


@nb.njit(cache=True)
def run_reps(seed, rep0, rep1, horizon, gamma, c_st, inst, src, pol, ctrl):
    M = inst[0].shape[0]
    st = make_state(M)
    perm = np.zeros(M, np.int64)
    fbuf = _work_buffer(M, pol[9])
    out = np.zeros(rep1 - rep0)
    for r in range(rep0, rep1):
        out[r - rep0] = episode(seed, r, horizon, gamma, c_st, inst, src, pol, ctrl, st, perm, fbuf)
    return out


@nb.njit(cache=True)
def label_pair(seed, horizon, gamma, c_st, inst, src, pol, ctrl0, ctrl1, n0, r_max, kval):
    """Paired-CRN rollout comparison of two candidate actions.

    Both candidates are rolled out on the same replication streams.  After
    ``n0`` pairs, sampling continues pair by pair until the mean paired
    difference exceeds ``kval`` standard errors or ``r_max`` rollouts have
    been spent.  Returns (label, mean0, mean1, se_diff, n_pairs, confident).
    """
    M = inst[0].shape[0]
    st = make_state(M)
    perm = np.zeros(M, np.int64)
    fbuf = _work_buffer(M, pol[9])
    s0 = 0.0
    s1 = 0.0
    sd = 0.0
    sdd = 0.0
    n = 0
    max_pairs = max(r_max // 2, 1)
    confident = False
    while n < max_pairs:
        c0 = episode(seed, n, horizon, gamma, c_st, inst, src, pol, ctrl0, st, perm, fbuf)
        c1 = episode(seed, n, horizon, gamma, c_st, inst, src, pol, ctrl1, st, perm, fbuf)
        d = c1 - c0
        s0 += c0
        s1 += c1
        sd += d
        sdd += d * d
        n += 1
        if n >= n0 and n >= 2:
            md = sd / n
            var = max(sdd / n - md * md, 0.0) * n / (n - 1)
            se = math.sqrt(var / n)
            if var == 0.0:
                # identical outcomes on every stream so far
                confident = md != 0.0
                break
            if abs(md) > kval * se:
                confident = True
                break
    md = sd / n
    se = 0.0
    if n >= 2:
        se = math.sqrt(max(sdd / n - md * md, 0.0) / (n - 1))
    tol = 1e-12 * (1.0 + abs(s0 / n))
    label = 1 if md < -tol else 0
    return label, s0 / n, s1 / n, se, n, confident
