from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mipca.errors import (
    InputError,
    MixedTransformsError,
    OutOfRangeError,
    SingularDesignError,
    TooFewCompleteRowsError,
)
from mipca.pooling import (
    AnalysisResult,
    Quantity,
    analyze_correlation,
    analyze_mean,
    analyze_regression,
    barnard_rubin_df,
    complete_case_analysis,
    fisher_z,
    inverse_fisher_z,
    make_interval,
    rubin_pool,
)


def test_mean_hand_value():
    r = analyze_mean(np.array([[1.0], [2.0], [3.0]]), 0)
    assert r.estimate == 2.0 and r.variance == pytest.approx(1 / 3)
    assert r.n_complete == 3 and r.df_complete == 2


def test_mean_constant_column():
    assert analyze_mean(np.full((5, 1), 4.0), 0).variance == 0.0


def test_fisher_z():
    assert fisher_z(0.0) == 0.0
    assert fisher_z(-0.4) == pytest.approx(-fisher_z(0.4), abs=1e-15)
    assert inverse_fisher_z(fisher_z(0.37)) == pytest.approx(0.37, abs=1e-12)
    with pytest.raises(OutOfRangeError):
        fisher_z(1.0)


@pytest.mark.parametrize("slope", [2.0, -1.0])
def test_correlation_degenerate(rng, slope):
    a = rng.standard_normal(20)
    with pytest.raises(OutOfRangeError):
        analyze_correlation(np.column_stack([a, slope * a]), 0, 1)


def test_correlation_matches_covariance_ratio(rng):
    x = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=50)
    c = np.cov(x.T)
    rho = c[0, 1] / np.sqrt(c[0, 0] * c[1, 1])
    r = analyze_correlation(x, 0, 1)
    assert inverse_fisher_z(r.estimate) == pytest.approx(rho, abs=1e-12)
    assert r.variance == pytest.approx(1 / 47) and r.transform == "fisher_z"


def test_regression_exact_fit(rng):
    x2 = rng.standard_normal(12)
    r = analyze_regression(np.column_stack([2 * x2, x2]), 0, [1])
    assert r.estimate == pytest.approx(2.0, abs=1e-12)
    assert r.variance == pytest.approx(0.0, abs=1e-25)


def test_regression_singular(rng):
    a = rng.standard_normal(12)
    with pytest.raises(SingularDesignError):
        analyze_regression(np.column_stack([rng.standard_normal(12), a, a]), 0, [1, 2])


def test_regression_matches_normal_equations(rng):
    n = 100
    x = rng.standard_normal((n, 6))
    x[:, 0] = x[:, 1:] @ np.array([0.5, -1.0, 0.2, 0.0, 1.5]) + rng.standard_normal(n)
    design = np.column_stack([np.ones(n), x[:, 1:]])
    xtx = design.T @ design
    beta = np.linalg.solve(xtx, design.T @ x[:, 0])
    resid = x[:, 0] - design @ beta
    var = resid @ resid / (n - 6) * np.linalg.inv(xtx)[1, 1]
    r = analyze_regression(x, 0, [1, 2, 3, 4, 5])
    assert r.estimate == pytest.approx(beta[1], abs=1e-10)
    assert r.variance == pytest.approx(var, rel=1e-10)
    assert r.df_complete == n - 6


def _res(est, var, df=50.0, transform="none"):
    return AnalysisResult(est, var, 51, df, transform)


def test_rubin_equal_results():
    pooled = rubin_pool([_res(1.5, 0.2)] * 4)
    assert pooled.estimate == 1.5 and pooled.between == 0.0
    assert pooled.total_variance == pytest.approx(0.2, abs=1e-15)


def test_rubin_hand_example():
    pooled = rubin_pool([_res(1.0, 1.0), _res(3.0, 1.0)])
    assert abs(pooled.estimate - 2.0) < 1e-12
    assert abs(pooled.within - 1.0) < 1e-12
    assert abs(pooled.between - 2.0) < 1e-12
    assert abs(pooled.total_variance - 4.0) < 1e-12


def test_between_factor_decreases_with_m():
    totals = [1.0 + (1 + 1 / m) * 2.0 for m in (2, 5, 20, 100)]
    assert all(a > b for a, b in zip(totals, totals[1:]))
    assert totals[-1] > 3.0


def test_barnard_rubin_hand_value():
    r = Fraction(3)
    df_old = (2 - 1) * (1 + 1 / r) ** 2
    df_obs = Fraction(98, 100) * 97 * Fraction(1, 4)
    expected = float(1 / (1 / df_old + 1 / df_obs))
    assert df_old == Fraction(16, 9)
    assert float(df_obs) == pytest.approx(23.765, abs=1e-12)
    assert abs(barnard_rubin_df(2, 1.0, 2.0, 97) - expected) < 1e-9
    assert expected == pytest.approx(1.654, abs=5e-4)


def test_barnard_rubin_no_between():
    assert barnard_rubin_df(5, 0.3, 0.0, 99) == pytest.approx(100 / 102 * 99, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    m=st.integers(2, 100),
    w=st.floats(1e-6, 1e3),
    b=st.floats(0, 1e3),
    nu=st.floats(1, 1e5),
)
def test_barnard_rubin_bounds(m, w, b, nu):
    df = barnard_rubin_df(m, w, b, nu)
    assert np.isfinite(df) and 0 < df <= nu * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(1e-4, 10)), min_size=2, max_size=30))
def test_total_variance_identity(pairs):
    results = [_res(e, v) for e, v in pairs]
    pooled = rubin_pool(results)
    m = len(results)
    assert pooled.total_variance == pooled.within + (1 + 1 / m) * pooled.between
    assert pooled.ci_low <= pooled.estimate <= pooled.ci_high


def test_mixed_transforms():
    with pytest.raises(MixedTransformsError):
        rubin_pool([_res(0.1, 0.1), _res(0.1, 0.1, transform="fisher_z")])
    with pytest.raises(InputError):
        rubin_pool([_res(0.1, 0.1)])


def test_identical_datasets_give_single_dataset_interval(rng):
    x = rng.standard_normal((40, 3))
    single = analyze_mean(x, 0)
    pooled = rubin_pool([analyze_mean(x, 0) for _ in range(10)])
    df_obs = 40 / 42 * 39
    assert pooled.df == pytest.approx(df_obs, rel=1e-15)
    iv = make_interval(single.estimate, single.variance, df_obs)
    assert pooled.ci_low == pytest.approx(iv.low, rel=1e-14)
    assert pooled.ci_high == pytest.approx(iv.high, rel=1e-14)


def test_pooled_correlation_back_transformed(rng):
    results = []
    for _ in range(5):
        x = rng.multivariate_normal([0, 0], [[1, 0.95], [0.95, 1]], size=10)
        results.append(analyze_correlation(x, 0, 1))
    pooled = rubin_pool(results)
    est, lo, hi = pooled.back_transformed
    assert -1 < lo <= est <= hi < 1
    assert est == pytest.approx(np.tanh(pooled.estimate))


def test_pooled_ci_uses_t_quantile():
    pooled = rubin_pool([_res(1.0, 1.0), _res(3.0, 1.0)])
    half = stats.t.ppf(0.975, pooled.df) * 2.0
    assert pooled.ci_high - pooled.estimate == pytest.approx(half, rel=1e-14)


def test_quantity_parse():
    assert Quantity.parse("mean:1") == Quantity("mean", (0,))
    assert Quantity.parse("corr:5,6") == Quantity("correlation", (4, 5))
    assert Quantity.parse("reg:1~2,3") == Quantity("regression", (0, 1, 2))
    assert Quantity.parse("reg:1,2,3") == Quantity("regression", (0, 1, 2))
    assert Quantity.parse("corr:5,6").label() == "corr:5,6"
    for bad in ("mean", "corr:1", "foo:1", "mean:0", "corr:a,b"):
        with pytest.raises(InputError):
            Quantity.parse(bad)


@pytest.mark.parametrize("spec", ["mean:1", "corr:2,3", "reg:1~2,3"])
def test_complete_case_no_missing(rng, spec):
    x = rng.standard_normal((30, 3))
    q = Quantity.parse(spec)
    assert complete_case_analysis(x, q) == q.analyze(x)


def test_complete_case_one_incomplete_row(rng):
    x = rng.standard_normal((30, 3))
    holed = x.copy()
    holed[7, 2] = np.nan
    q = Quantity.parse("reg:1~2,3")
    expected = analyze_regression(np.delete(x, 7, axis=0), 0, [1, 2])
    assert complete_case_analysis(holed, q) == expected
    assert expected.n_complete == 29


def test_complete_case_all_rows_incomplete(rng):
    x = rng.standard_normal((6, 6))
    x[np.arange(6), np.arange(6)] = np.nan
    with pytest.raises(TooFewCompleteRowsError):
        complete_case_analysis(x, Quantity.parse("mean:1"))
