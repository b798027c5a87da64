import dataclasses
import warnings

import numpy as np
import pytest

from shockmaint import instances
from shockmaint.degradation import DegradationParams
from shockmaint.pipeline import (FitWarning, PeriodizedSeries, PreprocessOptions, RawSeries, SchemaError,
                                 _count_ll, _size_ll, build_replay, fit_priors, ingest, preprocess,
                                 split_pool, synthesize_component, synthesize_pool, write_series_csv)

CS = instances.CS1().assets[0]
NO_OUTLIERS = PreprocessOptions(xi=50, outlier_quantile=None)


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_ingest_example(tmp_path):
    out = ingest(_write(tmp_path, "component_id,t,x\nA,0,0\nA,1.2,3\nA,2.0,50\n"))
    assert len(out) == 1 and out[0].component_id == "A"
    assert out[0].t.tolist() == [0, 1.2, 2.0] and out[0].x.tolist() == [0, 3, 50]


@pytest.mark.parametrize("body,match", [
    ("A,0,0\nA,1,5\nA,2,4\n", "line 4.*decreases"),
    ("A,0,0\nA,1,5\nA,1,6\n", "line 4.*duplicate"),
    ("A,0,0\nA,2,5\nA,1,6\n", "line 4.*decrease"),
    ("A,0,0\nB,0,0\nA,1,1\n", "line 4.*contiguous"),
    ("A,0,0\nA,1\n", "line 3.*3 fields"),
    ("A,0,zero\n", "line 2.*numbers"),
    ("A,0,-1\n", "line 2"),
])
def test_ingest_rejects_bad_rows(tmp_path, body, match):
    with pytest.raises(SchemaError, match=match):
        ingest(_write(tmp_path, "component_id,t,x\n" + body))


def test_ingest_header_and_empty(tmp_path):
    with pytest.raises(SchemaError, match="header"):
        ingest(_write(tmp_path, "id,time,x\nA,0,0\n"))
    with pytest.warns(UserWarning, match="empty"):
        assert ingest(_write(tmp_path, "")) == []


@pytest.mark.parametrize("period_length", [1.0, 0.1, 24.0])
def test_round_trip_reproduces_signals(tmp_path, period_length):
    rng = np.random.default_rng(5)
    raws, truths = zip(*[synthesize_component(CS, rng, f"c{i}", period_length) for i in range(30)])
    write_series_csv(raws, tmp_path / "s.csv")
    back = ingest(tmp_path / "s.csv")
    opts = dataclasses.replace(NO_OUTLIERS, period_length=period_length)
    for raw, truth in zip(back, truths):
        p = preprocess(raw, opts)
        assert p.failed and truth.failed
        assert np.array_equal(p.k, truth.k) and np.array_equal(p.z, truth.z)
        assert p.z.sum() >= 50 and p.z[:-1].sum() < 50
        assert p.exposure == pytest.approx(truth.exposure, rel=1e-12)


def test_outlier_gap_is_removed():
    t = np.concatenate([[0.0], np.cumsum(np.full(300, 0.05))])
    t[150:] += 5.0   # one interarrival 100 times the median
    x = np.arange(301, dtype=float) * 0.1
    raw = RawSeries("A", t, x)
    kept = preprocess(raw, PreprocessOptions(xi=1000))
    full = preprocess(raw, PreprocessOptions(xi=1000, outlier_quantile=None))
    # the whole outlying interarrival is dropped from the operational clock
    assert kept.exposure == pytest.approx(20.0 - 5.05) and full.exposure == pytest.approx(20.0)
    assert kept.periods == 15
    assert kept.k.sum() == full.k.sum() == 300


def test_zero_increments_keep_counts():
    t = np.linspace(0, 3, 13)
    p = preprocess(RawSeries("A", t, np.zeros(13)), PreprocessOptions(xi=5, outlier_quantile=None))
    assert p.k.tolist() == [4, 4, 4] and p.z.tolist() == [0, 0, 0] and not p.failed


def test_short_procedures_are_merged():
    raw = RawSeries("A", np.array([0.0, 0.5, 0.51, 1.5, 2.5]), np.array([0, 1, 3, 4, 9.0]))
    p = preprocess(raw, PreprocessOptions(xi=9, outlier_quantile=None, min_interarrival=0.1))
    assert p.k.tolist() == [1, 1, 1] and p.z.tolist() == [1, 3, 5] and p.failed


def test_failure_cuts_the_series():
    raw = RawSeries("A", np.array([0.0, 0.5, 1.5, 1.7, 3.5]), np.array([0, 2, 5, 8, 9.0]))
    p = preprocess(raw, PreprocessOptions(xi=5, outlier_quantile=None))
    assert p.k.tolist() == [1, 1] and p.z.tolist() == [2, 3] and p.failed


def test_preprocess_errors():
    with pytest.raises(ValueError, match="two data points"):
        preprocess(RawSeries("A", np.array([0.0]), np.array([0.0])))
    with pytest.raises(ValueError, match="one period"):
        preprocess(RawSeries("A", np.array([0.0, 0.3]), np.array([0.0, 1.0])), NO_OUTLIERS)


def test_marginal_likelihoods_match_direct_sums():
    from scipy import stats
    alpha, beta, T = 3.0, 2.0, 4.0
    k = np.arange(40)
    ll = _count_ll(alpha, beta, k, T)
    assert np.allclose(ll, stats.nbinom.logpmf(k, alpha, beta / (beta + T)))
    a, b = 2.5, 3.5
    kk = 3
    z = np.arange(60)
    # Beta mixture of negative binomials, by quadrature
    qs = np.linspace(1e-6, 1 - 1e-6, 20001)
    w = stats.beta.pdf(qs, a, b)
    direct = [np.trapezoid(w * stats.nbinom.pmf(zz, kk, 1 - qs), qs) for zz in z]
    assert np.allclose(np.exp(_size_ll(a, b, z, np.full(60, kk))), direct, rtol=1e-5, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fit_improves_on_moment_start(seed):
    _, tr = synthesize_pool(CS, 40, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        prior, diag = fit_priors(tr)
    assert diag.converged
    assert diag.loglik >= diag.loglik_start - 1e-9
    assert np.isclose(diag.per_component.sum(), diag.loglik)


def test_fit_recovers_the_prior_without_bias():
    true = CS.prior
    err_rate, err_p = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        for seed in range(100):
            _, tr = synthesize_pool(CS, 50, seed=1000 + seed)
            p, _ = fit_priors(tr)
            err_rate.append(p.mean_rate / true.mean_rate - 1)
            err_p.append(p.mean_p / true.mean_p - 1)
    for e in (np.array(err_rate), np.array(err_p)):
        assert abs(e.mean()) < 3 * e.std(ddof=1) / np.sqrt(e.size)


def test_homogeneous_data_shrink_fitted_spread():
    homog = dataclasses.replace(CS, params=DegradationParams(1.4, 0.5))
    rms = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        for n in (10, 50, 200):
            cv_rate, cv_size = [], []
            for seed in range(40):
                _, tr = synthesize_pool(homog, n, seed=seed)
                p, _ = fit_priors(tr)
                cv_rate.append(p.cv_rate)
                cv_size.append(1 / np.sqrt(p.a + p.b + 1))
            rms.append((np.sqrt(np.mean(np.square(cv_rate))), np.sqrt(np.mean(np.square(cv_size)))))
    rms = np.array(rms)
    assert np.all(np.diff(rms, axis=0) < 0)


def test_tiny_data_warns():
    tiny = [PeriodizedSeries("a", np.array([1]), np.array([2]), False),
            PeriodizedSeries("b", np.array([0, 2]), np.array([0, 1]), False)]
    with pytest.warns(FitWarning):
        _, diag = fit_priors(tiny)
    assert diag.at_boundary


def test_fit_errors():
    one = PeriodizedSeries("a", np.array([1]), np.array([2]), False)
    with pytest.raises(ValueError):
        fit_priors([one])
    zero = PeriodizedSeries("a", np.array([0, 0]), np.array([0, 0]), False)
    with pytest.raises(ValueError):
        fit_priors([zero, zero])


def test_diagnostics_csv(tmp_path):
    _, tr = synthesize_pool(CS, 12, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitWarning)
        _, diag = fit_priors(tr)
    diag.write_csv(tmp_path / "d.csv", [s.component_id for s in tr])
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "component_id,loglik" and len(rows) == 13


def test_split_and_synthesis_are_seeded():
    raws, tr = synthesize_pool(CS, 52, seed=3)
    raws2, _ = synthesize_pool(CS, 52, seed=3)
    assert all(np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x) for a, b in zip(raws, raws2))
    train, test = split_pool(tr, 10, seed=4)
    train2, _ = split_pool(tr, 10, seed=4)
    assert len(train) == 10 and len(test) == 42
    assert [s.component_id for s in train] == [s.component_id for s in train2]
    assert not {s.component_id for s in train} & {s.component_id for s in test}


def test_build_replay():
    _, tr = synthesize_pool(CS, 5, seed=2)
    src = build_replay(tr, 50)
    assert src.size == 5 and src.offsets[-1] == sum(s.periods for s in tr)
    k, z = src.trajectory(3)
    assert np.array_equal(k, tr[3].k) and np.array_equal(z, tr[3].z)
    with pytest.raises(ValueError):
        build_replay([PeriodizedSeries("a", np.array([1]), np.array([2]), False)], 50)
    with pytest.raises(ValueError):
        build_replay([], 50)
