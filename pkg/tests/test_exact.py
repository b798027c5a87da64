import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from shockmaint import instances
from shockmaint.bayes import PosteriorParams, predictive_count_logpmf, predictive_damage_logpmf
from shockmaint.degradation import AssetConfig, DegradationParams, PopulationPrior
from shockmaint.exact import (BudgetError, TabularPolicy, TruncationSpec, check_monotonicity, coupling_states,
                              damage_kernel, increment_pmf, solo_levels, solve_single_asset_bmdp,
                              solve_underlying_mdp)
from shockmaint.network import NetworkConfig


def _single(xi, c_pm, c_cm, params, gamma, c_st=0.0, unit=False):
    a = AssetConfig(xi, c_pm, c_cm, PopulationPrior(1, 1, 1, 1), unit_shocks=unit, params=params)
    return NetworkConfig((a,), c_st, gamma)


def test_increment_pmf_is_compound_poisson():
    p = DegradationParams(1.5, 0.4)
    pmf = increment_pmf(p, False, 30)
    rng = np.random.default_rng(0)
    k = rng.poisson(1.5, 10**6)
    z = rng.negative_binomial(np.maximum(k, 1), 0.6)
    z[k == 0] = 0
    emp = np.bincount(z, minlength=30)[:30] / z.size
    assert np.allclose(pmf, emp, atol=4e-3)
    assert np.allclose(increment_pmf(DegradationParams(2.0, 0.5), True, 10), stats.poisson.pmf(np.arange(10), 2.0))


def test_damage_kernel_rows_sum_to_one():
    K = damage_kernel(DegradationParams(1.0, 0.5), False, 10)
    assert np.allclose(K.sum(axis=1), 1.0)


def test_myopic_policy_is_reactive():
    cfg = _single(6, 1.0, 5.0, DegradationParams(1.0, 0.5), 0.0, c_st=1.0)
    pol = solve_underlying_mdp(cfg)
    assert pol.actions.tolist() == [0, 0, 0, 0, 0, 0, 1]


def _threshold_value(tau, lam, xi, c_pm, c_cm, gamma):
    """Discounted cost of 'replace at x >= tau' on the unit-shock chain, by a linear solve."""
    n = xi + 1
    inc = stats.poisson.pmf(np.arange(n), lam)
    P = np.zeros((n, n))
    for x in range(n):
        for d in range(n):
            P[x, min(x + d, xi)] += inc[d]
        P[x, xi] += 1 - inc.sum()
    act = np.arange(n) >= tau
    act[xi] = True
    c = np.where(act, np.where(np.arange(n) >= xi, c_cm, c_pm), 0.0)
    T = np.where(act[:, None], P[0][None, :], P)
    return np.linalg.solve(np.eye(n) - gamma * T, c)


def test_micro_matches_policy_enumeration():
    cfg = instances.micro()
    pol = solve_underlying_mdp(cfg)
    vals = {tau: _threshold_value(tau, 1.0, 3, 1.0, 5.0, 0.9) for tau in range(1, 5)}
    best = min(vals, key=lambda t: vals[t].sum())
    # the best threshold policy is optimal in every state
    assert all(np.all(vals[best] <= v + 1e-12) for v in vals.values())
    expected = [int(x >= best) for x in range(3)] + [1]
    assert pol.actions.tolist() == expected
    assert np.allclose(pol.values, vals[best], atol=1e-8)


def test_twin_unit_structure():
    pol = solve_underlying_mdp(instances.twin_unit())
    assert pol.report["bellman_residual"] < 1e-8
    h = pol.report["value_history"]
    assert all(b < a for a, b in zip(h, h[1:]))
    rep = check_monotonicity(pol)
    assert rep.ok and rep.checked > 0
    solo = solo_levels(pol)
    cs = coupling_states(pol)
    assert cs, "no opportunistic coupling region"
    x = cs[0]
    assert any(pol.actions[x] >> m & 1 and x[m] < solo[m] for m in range(2))


def test_anti_monotone_table_is_flagged():
    # one asset, x = 0..3: replacing at 1 but not at 2 contradicts the Q-values
    Q = np.array([[0.0, 5.0], [1.0, 1.0 - 0.5], [2.0, 3.0], [np.inf, 4.0]])
    act = np.array([0, 1, 0, 1])
    pol = TabularPolicy("joint", act, Q.min(axis=1), Q)
    rep = check_monotonicity(pol)
    assert not rep.ok
    assert rep.violations[0][1] == (2,)


def test_parameter_grid_keeps_monotone_structure():
    grid = {}
    for lam, q in itertools.product([0.5, 1.0, 2.0], [0.3, 0.5, 0.7]):
        cfg = _single(20, 1.0, 5.0, DegradationParams(lam, q), 0.99, c_st=1.0)
        grid[((lam, q),)] = solve_underlying_mdp(cfg)
    rep = check_monotonicity(grid, mode="params")
    assert rep.ok and rep.checked > 0


def test_budget_error():
    with pytest.raises(BudgetError):
        solve_underlying_mdp(instances.twin_unit(), budget=100)
    with pytest.raises(BudgetError):
        solve_single_asset_bmdp(instances.CS1().assets[0], 0.0, 0.99, budget=1000)


MICRO_ASSET = AssetConfig(3, 1.0, 5.0, PopulationPrior(2.0, 2.0, 2.0, 2.0))
MICRO_TRUNC = TruncationSpec((3,), 6, 6)


def _oracle_bmdp(asset, c_st, gamma, Kc, T, horizon):
    """Finite-horizon backward induction on the truncated belief grid, with
    the one-period predictive kernel evaluated from the closed forms."""
    xi = asset.xi
    p = asset.prior
    c_rep, c_fail = asset.c_pm + c_st, asset.c_cm + c_st

    def kernel(x, k, t):
        post = PosteriorParams(p.alpha + k, p.beta + t, p.a + x, p.b + k)
        out = {}
        for dk in range(200):
            pk = math.exp(float(predictive_count_logpmf(post, dk)))
            if pk < 1e-18 and dk > 10:
                break
            below = 0.0
            for z in range(xi - x):
                pz = math.exp(float(predictive_damage_logpmf(post, dk, z)))
                below += pz
                s = (x + z, min(k + dk, Kc), min(t + 1, T))
                out[s] = out.get(s, 0.0) + pk * pz
            out["fail"] = out.get("fail", 0.0) + pk * (1.0 - below)
        return out

    states = [(x, k, t) for x in range(xi) for k in range(Kc + 1) for t in range(T + 1)]
    kern = {s: kernel(*s) for s in states}
    V = {s: 0.0 for s in states}
    Vf = 0.0
    for _ in range(horizon):
        def ev(s):
            return sum(pr * (Vf if s2 == "fail" else V[s2]) for s2, pr in kern[s].items())
        g = ev((0, 0, 0))
        newV = {s: min(c_rep + gamma * g, gamma * ev(s)) for s in states}
        Vf = c_fail + gamma * g
        V = newV
    return V, Vf


def test_bmdp_matches_backward_induction_oracle():
    gamma = 0.9
    pol = solve_single_asset_bmdp(MICRO_ASSET, 0.0, gamma, MICRO_TRUNC)
    H = int(math.ceil(math.log(1e-10) / math.log(gamma)))
    V, Vf = _oracle_bmdp(MICRO_ASSET, 0.0, gamma, 6, 6, H)
    err = max(abs(pol.values[s] - v) for s, v in V.items())
    assert err < 1e-6
    assert np.all(np.abs(pol.values[3] - Vf) < 1e-6)


def test_jacobi_and_layered_agree_and_contract():
    gamma = 0.9
    a = solve_single_asset_bmdp(MICRO_ASSET, 0.0, gamma, MICRO_TRUNC, method="layered")
    b = solve_single_asset_bmdp(MICRO_ASSET, 0.0, gamma, MICRO_TRUNC, method="jacobi", tol=1e-12)
    assert np.max(np.abs(a.values - b.values)) < 1e-9
    assert np.array_equal(a.actions, b.actions)
    r = np.array(b.report["residuals"])
    ratios = r[1:][r[:-1] > 1e-10] / r[:-1][r[:-1] > 1e-10]
    assert np.all(ratios <= gamma + 1e-9)
    assert a.report["truncation_error_bound"] == pytest.approx(1e-10 * 5.0 / (1 - gamma) ** 2)


def test_degenerate_prior_gives_pure_threshold():
    asset = AssetConfig(10, 1.0, 5.0, PopulationPrior(1e9, 1e9, 1e9, 1e9))
    pol = solve_single_asset_bmdp(asset, 1.0, 0.95, TruncationSpec((10,), 30, 30))
    lv = pol.replace_levels()
    assert np.all(lv == lv[0, 0]) and lv[0, 0] < 10


def test_bmdp_table_is_monotone_in_damage():
    pol = solve_single_asset_bmdp(MICRO_ASSET, 0.0, 0.9, MICRO_TRUNC)
    assert check_monotonicity(pol).ok


def test_table_roundtrip_and_heatmap(tmp_path):
    pol = solve_single_asset_bmdp(MICRO_ASSET, 0.0, 0.9, MICRO_TRUNC)
    pol.save(tmp_path / "p.smtb")
    back = TabularPolicy.load(tmp_path / "p.smtb")
    assert back.kind == "asset" and np.array_equal(back.actions, pol.actions)
    assert np.array_equal(back.values, pol.values)
    pol.write_heatmap_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert len(rows) == 1 + 7 and len(rows[1].split(",")) == 1 + 7
    joint = solve_underlying_mdp(instances.micro())
    joint.save(tmp_path / "j.smtb")
    assert np.array_equal(TabularPolicy.load(tmp_path / "j.smtb").actions, joint.actions)


def test_default_truncation_covers_lifetimes():
    a = instances.CS1().assets[0]
    t = TruncationSpec.default(a)
    size = a.prior.mean_q / (1 - a.prior.mean_q)
    assert t.k_max >= 4 * a.xi / size - 1 and t.t_max * a.prior.mean_rate * size >= 4 * a.xi


@settings(max_examples=15, deadline=None)
@given(lam=st.floats(0.3, 3.0), q=st.floats(0.1, 0.8), c_cm=st.floats(1.5, 20.0))
def test_exact_values_are_bellman_fixed_points(lam, q, c_cm):
    cfg = _single(8, 1.0, c_cm, DegradationParams(lam, q), 0.95, c_st=0.5)
    pol = solve_underlying_mdp(cfg)
    assert pol.report["bellman_residual"] < 1e-8
    assert check_monotonicity(pol).ok
