"""Request-indicator overidentification test and nonresponse bias of respondent means."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from scipy import stats

from .panel import add_request_indicators, final_request_rows
from .selectmod import ModelSpec, SelectionFit, fit_model, population_mean

__all__ = ["OveridResult", "overid_test", "wald_test", "bias_gap", "indicator_name"]


def indicator_name(r: int) -> str:
    return f"R_eq_{int(r)}"


@dataclass
class OveridResult:
    request_coefficients: pd.DataFrame  # group, request, estimate, se, ci_low, ci_high
    wald_stats: pd.DataFrame            # scope, statistic, df, p
    identification_requests: tuple
    tested_requests: tuple
    dropped_requests: tuple = ()
    fit: Optional[SelectionFit] = None
    test: str = "wald"

    def p_value(self, scope="joint") -> float:
        row = self.wald_stats.loc[self.wald_stats["scope"].astype(str) == str(scope)]
        if row.empty:
            raise KeyError(scope)
        return float(row["p"].iloc[0])


def wald_test(estimate, vcov) -> tuple[float, int, float]:
    """Chi-square Wald statistic for ``estimate = 0``."""
    b = np.atleast_1d(np.asarray(estimate, float))
    V = np.atleast_2d(np.asarray(vcov, float))
    if b.size == 0:
        return 0.0, 0, 1.0
    W = float(b @ np.linalg.solve(V, b))
    return W, b.size, float(stats.chi2.sf(W, b.size))


def overid_test(rows: pd.DataFrame, base_spec: ModelSpec, tested_requests: Iterable[int],
                method: str = "fiml", test: str = "wald", level: float = 0.95,
                n_jobs: Optional[int] = None) -> OveridResult:
    """Add ``1{R=r}`` for each tested ``r`` to the outcome equation and test them jointly.

    The indicators are also put in the selection equation if absent. Request
    levels outside ``tested_requests`` identify the correction; at least two
    of them must remain. Tested levels without respondents are dropped with a
    warning. ``test="lr"`` swaps the Wald statistic for a likelihood ratio
    (valid only with independent rows).
    """
    tested = tuple(sorted({int(r) for r in tested_requests}))
    levels = sorted(int(r) for r in rows.loc[rows["R"] >= 1, "R"].unique())
    bad = [r for r in tested if r not in levels]
    if bad:
        raise ValueError(f"tested requests {bad} are not observed")
    ident = tuple(r for r in levels if r not in tested)
    if len(ident) < 2:
        raise ValueError("at least two request levels must remain for identification")
    if test not in ("wald", "lr"):
        raise ValueError("test must be 'wald' or 'lr'")
    if test == "lr" and method != "fiml":
        raise ValueError("likelihood ratio needs full information fits")

    dropped = []
    keep = []
    for r in tested:
        cell = rows.loc[(rows["R"] == r) & (rows[base_spec.selection_column] == 1)]
        if cell.empty:
            warnings.warn(f"no respondents at R={r}; indicator dropped")
            dropped.append(r)
        else:
            keep.append(r)

    data = add_request_indicators(rows, keep) if keep else rows
    names = [indicator_name(r) for r in keep]
    spec = replace(
        base_spec,
        x_columns=tuple(base_spec.x_columns) + tuple(n for n in names if n not in base_spec.x_columns),
        z_columns=tuple(base_spec.z_columns) + tuple(n for n in names if n not in base_spec.z_columns),
    )
    fit = fit_model(data, spec, method, n_jobs=n_jobs)

    zc = stats.norm.ppf(0.5 + level / 2)
    coef_rows, tests = [], []
    idx_all = []
    for g in fit.groups:
        sl = fit.beta_slice(g)
        idx = [sl.start + fit.x_names.index(n) for n in names]
        idx_all += idx
        for r, j in zip(keep, idx):
            est, se = fit.params[j], float(np.sqrt(max(fit.vcov[j, j], 0.0)))
            coef_rows.append((g, r, est, se, est - zc * se, est + zc * se))
        if test == "wald":
            W, df, p = wald_test(fit.params[idx], fit.vcov[np.ix_(idx, idx)])
        else:
            W, df, p = _lr(data, base_spec, spec, method, g, len(idx))
        tests.append((g if g is not None else "all", W, df, p))
    if fit.n_groups > 1:
        if test == "wald":
            W, df, p = wald_test(fit.params[idx_all], fit.vcov[np.ix_(idx_all, idx_all)])
        else:
            W, df, p = _lr(data, base_spec, spec, method, None, len(idx_all))
        tests.append(("joint", W, df, p))
    else:
        tests.append(("joint",) + tests[0][1:])

    return OveridResult(
        request_coefficients=pd.DataFrame(coef_rows, columns=["group", "request", "estimate", "se",
                                                              "ci_low", "ci_high"]),
        wald_stats=pd.DataFrame(tests, columns=["scope", "statistic", "df", "p"]),
        identification_requests=ident, tested_requests=tuple(keep), dropped_requests=tuple(dropped),
        fit=fit, test=test,
    )


def _lr(data, base_spec, full_spec, method, group, df):
    if method != "fiml":
        raise ValueError("likelihood ratio needs full information fits")
    sub = data
    b, f = base_spec, full_spec
    if group is not None and base_spec.group_column is not None:
        sub = data.loc[data[base_spec.group_column].astype(str) == str(group)]
        b = replace(base_spec, group_column=None)
        f = replace(full_spec, group_column=None)
    l0 = fit_model(sub, b, method, compute_vcov=False).loglik
    l1 = fit_model(sub, f, method, compute_vcov=False).loglik
    stat = max(2.0 * (l1 - l0), 0.0)
    return stat, df, float(stats.chi2.sf(stat, df)) if df else 1.0


def bias_gap(rows: pd.DataFrame, fit: SelectionFit, group=None) -> float:
    """Respondent mean at the final request minus the corrected population mean."""
    df = rows.loc[rows["R"] >= 1] if "R" in rows else rows
    df = final_request_rows(df)
    col = fit.spec.group_column
    if col is not None:
        g = fit.groups[fit.group_index(group)]
        df = df.loc[df[col].astype(str) == str(g)]
    resp = df.loc[df[fit.spec.selection_column] == 1, fit.spec.outcome]
    if resp.empty:
        raise ValueError("no respondents at the final request")
    corrected, _ = population_mean(fit, rows, "corrected", group)
    return float(resp.mean()) - corrected
