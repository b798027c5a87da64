import numpy as np
import pytest

from shockmaint import instances
from shockmaint.bayes import AssetBelief
from shockmaint.dcl import (Dataset, LabelTask, NNPolicy, collect_samples, extract_features, feature_dim,
                            label_state, restricted_actions, rollout_q)
from shockmaint.evaluator import episode_costs
from shockmaint.exact import solve_underlying_mdp
from shockmaint.heuristics import ThresholdPolicy
from shockmaint.mlp import init_mlp
from shockmaint.network import L2, NetworkState
from shockmaint.degradation import DegradationParams
from shockmaint.policy import VariantError

I1 = instances.I1()
MICRO = instances.micro()
BASE = ThresholdPolicy.uniform(2, 15, 9)


def _task(xs, position=0, order=None, eta=False, setup=False):
    st = NetworkState(tuple(AssetBelief(x, x, x) for x in xs))
    order = tuple(range(len(xs))) if order is None else tuple(order)
    return LabelTask(st, order, position, eta, setup)


def _constant_policy(label, base=BASE, variant="f3_L1", M=2):
    net = init_mlp(feature_dim(M, variant), np.random.default_rng(0))
    net.Ws[-1][:] = 0.0
    net.bs[-1][:] = [0.0, 1.0] if label else [1.0, 0.0]
    return NNPolicy.from_thresholds(net, base, variant=variant)


def test_feature_dimensions():
    assert feature_dim(2, "f3_L1") == 13
    assert feature_dim(2, "f2_L1") == 9
    assert feature_dim(2, "f1_L2") == 9
    st = NetworkState((AssetBelief(), AssetBelief()))
    assert extract_features(I1, st, 0, False, "f3_L1").shape == (13,)
    with pytest.raises(ValueError):
        extract_features(I1, st, 0, False, "f4")
    with pytest.raises(ValueError):
        extract_features(I1, st, 0, False, "f1_L2")


def test_fresh_component_point_estimates():
    cfg = instances.CS1()
    f = extract_features(cfg, NetworkState((AssetBelief(),)), 0, False, "f2_L1")
    prior = cfg.assets[0].prior
    assert f[1] == pytest.approx(prior.mean_rate)
    assert f[1] == pytest.approx(1.414, abs=5e-4)
    assert f[2] == pytest.approx(prior.mean_q)
    assert 1.0 - f[2] == pytest.approx(0.487, abs=5e-4)


def test_feature_layout():
    st = NetworkState((AssetBelief(7, 3, 4), AssetBelief(25, 9, 6)))
    f = extract_features(I1, st, 1, True, "f3_L1")
    p = I1.assets[0].prior
    assert f[0] == 7 and f[3] == 3 and f[4] == 4 and f[5] == 0
    assert f[6] == 20  # clipped at the failure level
    assert f[7] == pytest.approx((p.alpha + 9) / (p.beta + 6))
    assert f[8] == pytest.approx((p.a + 25) / (p.a + p.b + 25 + 9))
    assert f[11] == 1 and f[12] == 1
    l2 = NetworkState(st.beliefs, L2, (DegradationParams(2.0, 0.3), DegradationParams(1.0, 0.6)))
    g = extract_features(I1, l2, 0, False, "f1_L2")
    assert g.tolist() == [7, 2.0, 0.3, 1, 20, 1.0, 0.6, 0, 0]


def test_restricted_actions_examples():
    assert restricted_actions(4, 15, 9) == (0,)
    assert restricted_actions(20, 15, 9, failed=True) == (1,)
    assert restricted_actions(10, 15, 9) == (0, 1)
    assert restricted_actions(23, 15, 9) == (1,)
    assert restricted_actions(5, 15, 9) == (0, 1)


def test_failed_asset_is_labelled_replace_without_rollouts():
    s = label_state(MICRO, _task([3]), ThresholdPolicy.reactive(MICRO), seed=0)
    assert s.label == 1 and s.rollouts == 0


def test_exact_tie_goes_to_postpone():
    cfg = MICRO.with_costs(c_pm=0.0, c_st=0.0)
    s = label_state(cfg, _task([0]), ThresholdPolicy.reactive(cfg), seed=0, horizon=150)
    assert s.label == 0 and s.mean0 == s.mean1


def test_rollout_values_match_exact_q():
    cfg = MICRO.with_costs(c_pm=2.0)
    pol = solve_underlying_mdp(cfg)
    for a in (0, 1):
        c = rollout_q(cfg, _task([2]), pol, a, 50_000, seed=5, horizon=150)
        assert abs(c.mean() - pol.q_values[2, a]) < 3 * c.std() / np.sqrt(c.size)


@pytest.mark.parametrize("c_pm", [0.5, 2.0, 3.0, 4.5])
def test_labels_match_exact_policy_on_resolvable_states(c_pm):
    cfg = MICRO.with_costs(c_pm=c_pm)
    pol = solve_underlying_mdp(cfg)
    for x in range(3):
        # paired differences have sd about 2 here, so 3750 pairs resolve gaps above 0.1
        assert abs(pol.q_values[x, 1] - pol.q_values[x, 0]) > 0.1
        s = label_state(cfg, _task([x]), pol, seed=x, r_max=7500, horizon=150)
        assert s.label == pol.actions[x]


def test_labels_use_the_opportunity_and_setup_flags():
    # postponing a fresh component while the other asset is already replaced
    t = _task([0, 12], position=1, order=(0, 1), eta=True, setup=True)
    s = label_state(I1, t, BASE, seed=2, r_max=400)
    assert s.features[-1] == 1.0
    # a setup already paid makes the candidate replacement cheaper
    q_paid = rollout_q(I1, _task([12, 5], eta=True, setup=True), BASE, 1, 200, seed=1)
    q_free = rollout_q(I1, _task([12, 5], eta=True, setup=False), BASE, 1, 200, seed=1)
    assert np.allclose(q_free - q_paid, I1.c_st)


def test_constant_networks_reduce_to_thresholds():
    lo = int(np.floor(0.5 * 9)) + 1
    always = _constant_policy(1)
    ref = ThresholdPolicy.uniform(2, lo, lo)
    assert np.array_equal(episode_costs(always, I1, reps=200, horizon=400, seed=6),
                          episode_costs(ref, I1, reps=200, horizon=400, seed=6))
    never = _constant_policy(0)
    assert np.array_equal(episode_costs(never, I1, reps=200, horizon=400, seed=6),
                          episode_costs(ThresholdPolicy.reactive(I1), I1, reps=200, horizon=400, seed=6))


def test_python_and_kernel_decisions_agree():
    rng = np.random.default_rng(3)
    net = init_mlp(13, rng)
    net.mu = rng.normal(size=13)
    net.sd = rng.uniform(0.5, 5.0, size=13)
    pol = NNPolicy.from_thresholds(net, BASE)
    for xs in [(4, 4), (10, 12), (6, 20), (14, 9), (19, 19)]:
        st = NetworkState(tuple(AssetBelief(x, x, x) for x in xs))
        a = pol.decide(I1, st, order=[0, 1])
        assert set(a.tolist()) <= {0, 1}
        if xs[1] >= 20:
            assert a[1] == 1
        if max(xs) <= 4:
            assert a.tolist() == [0, 0]


def test_variants_and_modes():
    f1 = _constant_policy(1, variant="f1_L2")
    with pytest.raises(VariantError):
        episode_costs(f1, I1, "L1", reps=5)
    episode_costs(f1, I1, "L2", reps=5, horizon=50)
    episode_costs(f1.with_variant("f2_L1"), I1, "L1", reps=5, horizon=50)
    with pytest.raises(ValueError):
        NNPolicy.from_thresholds(init_mlp(9, np.random.default_rng(0)), BASE, variant="f3_L1")


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    net = init_mlp(13, rng)
    net.mu = rng.normal(size=13)
    pol = NNPolicy.from_thresholds(net, BASE, delta=0.4, zeta=1.2)
    pol.save(tmp_path / "p.pol")
    back = NNPolicy.load(tmp_path / "p.pol")
    assert back.tau_pm == pol.tau_pm and back.tau_opm == pol.tau_opm
    assert (back.delta, back.zeta, back.variant) == (0.4, 1.2, "f3_L1")
    X = rng.normal(size=(50, 13))
    assert np.array_equal(back.model.logits(X), pol.model.logits(X))
    assert np.array_equal(episode_costs(back, I1, reps=50, horizon=300, seed=1),
                          episode_costs(pol, I1, reps=50, horizon=300, seed=1))


def test_collected_dataset(tmp_path):
    ds = collect_samples(BASE, I1, "L1", 300, 0.02, seed=3, thresholds=BASE, variant="f3_L1", r_max=100)
    audit = ds.audit()
    assert audit["samples"] == 300 and audit["one_iota"]
    assert 0.0 < audit["share_replace"] < 1.0
    # only states inside the restricted band are labelled
    assert audit["x_min"] > 0.5 * 9 and audit["x_max"] < 20
    again = collect_samples(BASE, I1, "L1", 300, 0.02, seed=3, thresholds=BASE, variant="f3_L1", r_max=100)
    assert np.array_equal(ds.X, again.X) and np.array_equal(ds.y, again.y)
    ds.write_csv(tmp_path / "d.csv")
    back = Dataset.read_csv(tmp_path / "d.csv", "f3_L1")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert np.array_equal(back.diag, ds.diag)
