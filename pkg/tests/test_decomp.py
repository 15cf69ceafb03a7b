import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy import special

from reqiv import panel
from reqiv.decomp import decompose, decomposition_terms, gap
from reqiv.numkit import VarianceSpec
from reqiv.selectmod import ModelSpec, fit_heckman_fiml, fit_heckprobit
from reqiv.synthgen import GroupDGP, MsrSpec, SimConfig, simulate

PROBIT = special.ndtr
IDENTITY = lambda v: v


def design(rng, n, means):
    return np.column_stack([np.ones(n)] + [(rng.uniform(size=n) < m).astype(float) for m in means])


# ---------------------------------------------------------------- arithmetic


def test_symmetric_groups_give_zero_everywhere():
    rng = np.random.default_rng(0)
    X = design(rng, 500, (0.3, 0.6))
    b = np.array([0.2, -0.4, 0.7])
    t = decomposition_terms(b, b, X, X.copy(), [1, 2], PROBIT)
    for k in ("total", "delta_X", "delta_beta", "delta_R"):
        assert t[k] == 0.0
    assert not np.any(t["delta_x"]) and not np.any(t["delta_beta_x"])


def test_zero_reference_coefficient_kills_the_mean_shift():
    rng = np.random.default_rng(1)
    Xc, Xr = design(rng, 400, (0.2, 0.7)), design(rng, 300, (0.6, 0.1))
    t = decomposition_terms(np.array([0.1, 0.5, 0.3]), np.array([-0.2, 0.0, 0.4]), Xc, Xr, [1, 2], PROBIT)
    assert t["delta_x"][0] == 0.0
    assert t["delta_x"][1] != 0.0


@given(st.integers(0, 10_000), st.sampled_from([PROBIT, IDENTITY]))
def test_additivity(seed, link):
    rng = np.random.default_rng(seed)
    Xc, Xr = design(rng, 200, rng.uniform(0.1, 0.9, 3)), design(rng, 150, rng.uniform(0.1, 0.9, 3))
    bc, br = rng.normal(size=4), rng.normal(size=4)
    t = decomposition_terms(bc, br, Xc, Xr, [1, 2, 3], link)
    assert abs(t["delta_X"] + t["delta_beta"] + t["delta_R"] - t["total"]) <= 1e-12
    assert t["total"] == pytest.approx(t["mean_c"] - t["mean_r"], abs=1e-15)


@given(st.integers(0, 10_000))
def test_identity_link_collapses_to_linear_terms(seed):
    rng = np.random.default_rng(seed)
    Xc, Xr = design(rng, 120, (0.3, 0.5)), design(rng, 90, (0.6, 0.4))
    bc, br = rng.normal(size=3), rng.normal(size=3)
    t = decomposition_terms(bc, br, Xc, Xr, [1, 2], IDENTITY)
    dbar = Xc.mean(0) - Xr.mean(0)
    assert np.allclose(t["delta_x"], dbar[1:] * br[1:], rtol=0, atol=1e-13)
    assert np.allclose(t["delta_beta_x"], Xr.mean(0)[1:] * (bc - br)[1:], rtol=0, atol=1e-13)
    assert t["delta_X"] == pytest.approx(float(dbar[1:] @ br[1:]), abs=1e-13)


def test_unitemized_columns_only_reach_the_residual():
    rng = np.random.default_rng(4)
    Xc, Xr = design(rng, 300, (0.3, 0.5)), design(rng, 300, (0.6, 0.4))
    bc, br = np.array([0.3, 0.2, -0.5]), np.array([0.0, 0.4, 0.1])
    full = decomposition_terms(bc, br, Xc, Xr, [1, 2], PROBIT)
    part = decomposition_terms(bc, br, Xc, Xr, [1], PROBIT)
    assert part["delta_x"][0] == full["delta_x"][0]
    assert part["total"] == full["total"]
    assert len(part["delta_beta_x"]) == 1


# ---------------------------------------------------------------- joint fits


@pytest.fixture(scope="module")
def grouped():
    groups = (
        GroupDGP("m", 0.45, (0.35, 0.6), beta=(-0.2, 0.5, 0.3), rho=0.4, shift=0.1),
        GroupDGP("w", 0.55, (0.55, 0.4), beta=(-0.6, 0.3, 0.2), rho=0.3, shift=-0.1),
    )
    sim = simulate(SimConfig(30_000, (0.2, 0.35, 0.5), MsrSpec("probit"), groups=groups, seed=2024))
    rows = panel.add_request_indicators(sim.panel(), [2, 3])
    rows["sex"] = np.where(rows["group"] == 0.0, "m", "w")
    spec = ModelSpec("binary", x_columns=("x1", "x2"), z_columns=("R_eq_2", "R_eq_3"), group_column="sex")
    return sim, rows, fit_heckprobit(rows, spec)


def oracle_terms(sim, fit, rows):
    """Counterfactual means from the true coefficients over the simulated samples."""
    g = sim.config.groups
    X = {}
    for label in ("m", "w"):
        sub = panel.final_request_rows(rows.loc[(rows["R"] >= 1) & (rows["sex"] == label)])
        X[label] = np.column_stack([np.ones(len(sub)), sub["x1"], sub["x2"]])
    return decomposition_terms(np.array(g[0].beta), np.array(g[1].beta), X["m"], X["w"], [1, 2], PROBIT)


def test_recovers_counterfactual_oracle(grouped):
    sim, rows, fit = grouped
    res = decompose(fit, rows, se_method="delta")
    truth = oracle_terms(sim, fit, rows)
    assert res.groups == ("m", "w")
    per = res.per_covariate
    for est, se, tr in (
        (res.total_gap, res.se_total, truth["total"]),
        (res.delta_X, res.se_delta_X, truth["delta_X"]),
        (res.delta_beta, res.se_delta_beta, truth["delta_beta"]),
        (res.delta_R, res.se_delta_R, truth["delta_R"]),
        *zip(per["delta_x"], per["se_delta_x"], truth["delta_x"]),
        *zip(per["delta_beta_x"], per["se_delta_beta_x"], truth["delta_beta_x"]),
    ):
        assert se > 0
        assert abs(est - tr) < 3 * se
    assert abs(res.delta_X + res.delta_beta + res.delta_R - res.total_gap) <= 1e-12


def test_delta_se_agrees_with_gap_helper(grouped):
    _, rows, fit = grouped
    res = decompose(fit, rows, se_method="delta")
    g, se = gap(fit, rows)
    assert g == pytest.approx(res.total_gap, abs=1e-14)
    assert se == pytest.approx(res.se_total, rel=1e-4)


def test_swapping_labels_negates_the_gap(grouped):
    _, rows, fit = grouped
    a = decompose(fit, rows, se_method="none")
    b = decompose(fit, rows, reference_group="m", se_method="none")
    assert b.groups == ("w", "m")
    assert b.total_gap == pytest.approx(-a.total_gap, abs=1e-15)


def test_row_order_does_not_matter(grouped):
    _, rows, fit = grouped
    a = decompose(fit, rows, se_method="none")
    shuffled = rows.sample(frac=1.0, random_state=3).reset_index(drop=True)
    b = decompose(fit, shuffled, se_method="none")
    for k in ("total_gap", "delta_X", "delta_beta", "delta_R"):
        assert getattr(b, k) == pytest.approx(getattr(a, k), abs=1e-14)
    assert np.allclose(b.per_covariate["delta_x"], a.per_covariate["delta_x"], rtol=0, atol=1e-14)


def test_excluded_column_is_not_itemized(grouped):
    _, rows, fit = grouped
    res = decompose(fit, rows, excluded_from_itemization=("x2",), se_method="none")
    assert res.per_covariate["name"].tolist() == ["x1"]
    full = decompose(fit, rows, se_method="none")
    assert res.total_gap == full.total_gap
    with pytest.raises(KeyError):
        decompose(fit, rows, excluded_from_itemization=("x9",), se_method="none")


def test_report_layout(grouped):
    _, rows, fit = grouped
    rep = decompose(fit, rows, se_method="delta").report()
    assert rep["item"].tolist() == ["X:x1", "X:x2", "beta:x1", "beta:x2", "outcome", "all_X", "all_beta",
                                    "all_unexplained", "rho"]
    assert list(rep.columns) == ["item", "m", "w", "gap", "se"]


def test_bootstrap_se_close_to_delta(grouped):
    _, rows, fit = grouped
    small = rows.loc[rows["subject_id"].isin(rows["subject_id"].unique()[:6000])]
    fit_s = fit_heckprobit(small, fit.spec)
    d = decompose(fit_s, small, se_method="delta")
    with pytest.warns(RuntimeWarning, match="refits"):
        b = decompose(fit_s, small, se_method="bootstrap",
                      variance=VarianceSpec("cluster_bootstrap", bootstrap_replicates=100, base_seed=5))
    assert b.total_gap == d.total_gap
    assert b.se_total == pytest.approx(d.se_total, rel=0.3)
    assert b.se_method == "bootstrap" and b.bootstrap_failed == 0


def test_continuous_outcome_uses_identity_link():
    groups = (GroupDGP("a", 0.5, (0.5,), beta=(1.0, 0.5), rho=0.3),
              GroupDGP("b", 0.5, (0.3,), beta=(0.2, 1.5), rho=-0.2))
    sim = simulate(SimConfig(6000, (0.3, 0.6), MsrSpec("probit", sigma=2.0), outcome_kind="continuous",
                             groups=groups, seed=8))
    rows = panel.add_request_indicators(sim.panel(), [2])
    spec = ModelSpec("continuous", x_columns=("x1",), z_columns=("R_eq_2",), group_column="group")
    fit = fit_heckman_fiml(rows, spec)
    res = decompose(fit, rows, se_method="none")
    fin = panel.final_request_rows(rows.loc[rows["R"] >= 1])
    xbar = fin.groupby("group")["x1"].mean()
    br = fit.group_beta(1.0)
    assert res.per_covariate["delta_x"].iloc[0] == pytest.approx((xbar[0.0] - xbar[1.0]) * br[1], abs=1e-12)


# ---------------------------------------------------------------- errors


def test_needs_two_groups(nct_rows):
    fit = fit_heckprobit(nct_rows["employed_before"], ModelSpec("binary", z_columns=("R_eq_2",)))
    with pytest.raises(ValueError, match="two groups"):
        decompose(fit, nct_rows["employed_before"])


def test_empty_group_and_missing_covariate(grouped):
    _, rows, fit = grouped
    with pytest.raises(ValueError, match="no rows"):
        decompose(fit, rows.loc[rows["sex"] == "m"], se_method="none")
    broken = rows.copy()
    broken.loc[broken["sex"] == "w", "x2"] = np.nan
    with pytest.raises(ValueError, match="not observed"):
        decompose(fit, broken, se_method="none")
    with pytest.raises(KeyError):
        decompose(fit, rows.drop(columns="x2"), se_method="none")
    with pytest.raises(ValueError, match="se_method"):
        decompose(fit, rows, se_method="jackknife")


# ---------------------------------------------------------------- aggregate fixtures


@pytest.fixture(scope="module")
def two_request_gap(table1_full):
    rows = panel.add_request_indicators(panel.restrict_requests(table1_full, 2), [2])
    fit = fit_heckprobit(rows, ModelSpec("binary", z_columns=("R_eq_2",), group_column="gender"))
    return fit, rows


def test_corrected_gap_on_aggregate_fixture(two_request_gap):
    fit, rows = two_request_gap
    g, se = gap(fit, rows)
    assert g == pytest.approx(0.12, abs=0.02)
    assert 0 < se < 0.1


def test_uncorrected_gap_on_aggregate_fixture(table1_full):
    spec = ModelSpec("binary", rho_constraint=0.0, sample_rule="final_request_only", group_column="gender")
    fit = fit_heckprobit(table1_full, spec)
    g, _ = gap(fit, table1_full)
    assert g == pytest.approx(0.198, abs=0.005)
    pooled = {"men": (0.378 * 10154 + 0.366 * 9147) / 19301, "women": (0.169 * 12958 + 0.180 * 10643) / 23601}
    assert g == pytest.approx(pooled["men"] - pooled["women"], abs=1e-4)


def test_second_request_fixture_gap_regression(table1_two):
    # literal layout: every late respondent answers the second request
    rows = panel.add_request_indicators(table1_two, [2])
    fit = fit_heckprobit(rows, ModelSpec("binary", z_columns=("R_eq_2",), group_column="gender"))
    assert gap(fit, rows)[0] == pytest.approx(0.1415, abs=5e-4)
