"""
Two-group gap decomposition for probit (or identity-link) selection fits.

All counterfactuals are averages over the reference group's subject-terms:
shift one covariate's mean (``delta_x``), swap one coefficient
(``delta_beta_x``), shift every itemized mean (``delta_X``), swap every
itemized coefficient (``delta_beta``). What is left of the total gap is
``delta_R``; the intercept and any excluded columns only enter there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special

from .numkit import VarianceSpec, cluster_bootstrap
from .panel import final_request_rows
from .selectmod import SelectionFit, fit_model, population_gap

__all__ = ["DecompositionResult", "decompose", "gap", "decomposition_terms"]


@dataclass
class DecompositionResult:
    groups: tuple  # (comparison, reference)
    group_means: dict
    total_gap: float
    per_covariate: pd.DataFrame
    delta_X: float
    delta_beta: float
    delta_R: float
    se_total: float = float("nan")
    se_delta_X: float = float("nan")
    se_delta_beta: float = float("nan")
    se_delta_R: float = float("nan")
    se_group_means: dict = field(default_factory=dict)
    se_method: str = "none"
    rho: dict = field(default_factory=dict)
    loglik: float = float("nan")
    n_rows: int = 0
    bootstrap_failed: int = 0

    def report(self) -> pd.DataFrame:
        """Long table: per-variable rows then the aggregate rows."""
        c, r = self.groups
        out = []
        for row in self.per_covariate.itertuples():
            out.append((f"X:{row.name}", row.mean_comparison, row.mean_reference, row.delta_x, row.se_delta_x))
        for row in self.per_covariate.itertuples():
            out.append((f"beta:{row.name}", row.coef_comparison, row.coef_reference, row.delta_beta_x,
                        row.se_delta_beta_x))
        out += [
            ("outcome", self.group_means[c], self.group_means[r], self.total_gap, self.se_total),
            ("all_X", np.nan, np.nan, self.delta_X, self.se_delta_X),
            ("all_beta", np.nan, np.nan, self.delta_beta, self.se_delta_beta),
            ("all_unexplained", np.nan, np.nan, self.delta_R, self.se_delta_R),
            ("rho", self.rho.get(c, np.nan), self.rho.get(r, np.nan), np.nan, np.nan),
        ]
        return pd.DataFrame(out, columns=["item", str(c), str(r), "gap", "se"])


def _link(fit):
    return special.ndtr if fit.link == "probit" else (lambda v: v)


def _group_frames(fit: SelectionFit, rows: pd.DataFrame, reference_group):
    if fit.n_groups != 2 or fit.spec.group_column is None:
        raise ValueError("decomposition needs a joint fit over exactly two groups")
    ref = fit.groups[1] if reference_group is None else fit.groups[fit.group_index(reference_group)]
    comp = [g for g in fit.groups if str(g) != str(ref)][0]
    df = rows.loc[rows["R"] >= 1] if "R" in rows else rows
    if {"term_id", "subject_id", "t"} <= set(df.columns):
        df = final_request_rows(df)
    col = fit.spec.group_column
    frames = {}
    for g in (comp, ref):
        sub = df.loc[df[col].astype(str) == str(g)]
        if sub.empty:
            raise ValueError(f"group {g!r} has no rows")
        frames[g] = sub
    cols = fit.x_names[1:]
    X = {}
    for g, sub in frames.items():
        missing = [c for c in cols if c not in sub]
        if missing:
            raise KeyError(f"columns {missing} missing for group {g!r}")
        M = np.column_stack([np.ones(len(sub))] + [sub[c].to_numpy(float) for c in cols])
        bad = [cols[j - 1] for j in range(1, M.shape[1]) if not np.all(np.isfinite(M[:, j]))]
        if bad:
            raise ValueError(f"covariates {bad} are not observed for group {g!r}")
        X[g] = M
    return comp, ref, X


def decomposition_terms(beta_c, beta_r, X_c, X_r, itemized: Sequence[int], link) -> dict:
    """All decomposition terms for given coefficient vectors and designs.

    ``itemized`` indexes the columns of ``X`` that get their own rows; the
    others (intercept, excluded columns) stay at the reference values in every
    counterfactual.
    """
    xb = X_r @ beta_r
    base = link(xb).mean()
    mean_c = link(X_c @ beta_c).mean()
    dbar = X_c.mean(axis=0) - X_r.mean(axis=0)
    dbeta = beta_c - beta_r
    it = np.asarray(itemized, dtype=int)
    dx = np.array([link(xb + dbar[j] * beta_r[j]).mean() - base for j in it])
    dbx = np.array([link(xb + X_r[:, j] * dbeta[j]).mean() - base for j in it])
    d_X = link(xb + float(dbar[it] @ beta_r[it])).mean() - base if len(it) else 0.0
    d_B = link(xb + X_r[:, it] @ dbeta[it]).mean() - base if len(it) else 0.0
    total = mean_c - base
    return dict(mean_c=float(mean_c), mean_r=float(base), total=float(total), delta_X=float(d_X),
                delta_beta=float(d_B), delta_R=float(total - d_X - d_B), delta_x=dx, delta_beta_x=dbx)


def _flatten(t):
    return np.concatenate([[t["mean_c"], t["mean_r"], t["total"], t["delta_X"], t["delta_beta"], t["delta_R"]],
                           t["delta_x"], t["delta_beta_x"]])


def decompose(fit: SelectionFit, rows: pd.DataFrame, reference_group=None,
              excluded_from_itemization: Sequence[str] = (), se_method: str = "bootstrap",
              variance: Optional[VarianceSpec] = None, n_jobs: Optional[int] = None) -> DecompositionResult:
    """Decompose the two-group gap of a joint fit.

    ``se_method``: ``bootstrap`` re-estimates the joint fit on every cluster
    resample (``variance`` defaults to 200 replicates); ``delta`` propagates
    the fit's covariance through the coefficients with covariate means held
    fixed; ``none`` skips standard errors.
    """
    comp, ref, X = _group_frames(fit, rows, reference_group)
    names = fit.x_names
    excluded = set(excluded_from_itemization)
    unknown = excluded - set(names[1:])
    if unknown:
        raise KeyError(f"excluded columns not in the outcome equation: {sorted(unknown)}")
    itemized = [j for j in range(1, len(names)) if names[j] not in excluded]
    link = _link(fit)
    bc, br = fit.group_beta(comp), fit.group_beta(ref)
    t = decomposition_terms(bc, br, X[comp], X[ref], itemized, link)
    flat = _flatten(t)
    se = np.full(len(flat), np.nan)
    n_failed = 0

    if se_method == "delta":
        sc, sr = fit.beta_slice(comp), fit.beta_slice(ref)
        k = len(bc)
        J = np.zeros((len(flat), len(fit.params)))
        h = 1e-6
        for j in range(k):
            for sl, which in ((sc, 0), (sr, 1)):
                e = np.zeros(k)
                e[j] = h
                b1 = (bc + e, br) if which == 0 else (bc, br + e)
                b0 = (bc - e, br) if which == 0 else (bc, br - e)
                f1 = _flatten(decomposition_terms(*b1, X[comp], X[ref], itemized, link))
                f0 = _flatten(decomposition_terms(*b0, X[comp], X[ref], itemized, link))
                J[:, sl.start + j] = (f1 - f0) / (2 * h)
        se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", J, fit.vcov, J), 0, None))
    elif se_method == "bootstrap":
        variance = variance or VarianceSpec("cluster_bootstrap", fit.spec.variance.cluster_column,
                                            bootstrap_replicates=200,
                                            base_seed=fit.spec.variance.base_seed)
        if variance.bootstrap_replicates >= 100:
            warnings.warn(f"bootstrap decomposition refits the model {variance.bootstrap_replicates} times",
                          RuntimeWarning)

        def stat(df):
            f = fit_model(df, fit.spec, fit.method, compute_vcov=False)
            c2, r2, X2 = _group_frames(f, df, ref)
            return _flatten(decomposition_terms(f.group_beta(c2), f.group_beta(r2), X2[c2], X2[r2],
                                                itemized, link))

        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".*did not converge.*")
            boot = cluster_bootstrap(stat, rows, variance, n_jobs=n_jobs, compute_estimate=False)
        se, n_failed = boot.se, boot.n_failed
    elif se_method != "none":
        raise ValueError(f"unknown se_method {se_method!r}")

    m = len(itemized)
    per = pd.DataFrame({
        "name": [names[j] for j in itemized],
        "mean_comparison": X[comp][:, itemized].mean(axis=0),
        "mean_reference": X[ref][:, itemized].mean(axis=0),
        "delta_x": t["delta_x"],
        "se_delta_x": se[6:6 + m],
        "coef_comparison": bc[itemized],
        "coef_reference": br[itemized],
        "delta_beta_x": t["delta_beta_x"],
        "se_delta_beta_x": se[6 + m:6 + 2 * m],
    })
    ic, ir = fit.group_index(comp), fit.group_index(ref)
    return DecompositionResult(
        groups=(comp, ref), group_means={comp: t["mean_c"], ref: t["mean_r"]}, total_gap=t["total"],
        per_covariate=per, delta_X=t["delta_X"], delta_beta=t["delta_beta"], delta_R=t["delta_R"],
        se_total=float(se[2]), se_delta_X=float(se[3]), se_delta_beta=float(se[4]), se_delta_R=float(se[5]),
        se_group_means={comp: float(se[0]), ref: float(se[1])}, se_method=se_method,
        rho={comp: float(fit.rho[ic]), ref: float(fit.rho[ir])}, loglik=fit.loglik, n_rows=fit.n_rows,
        bootstrap_failed=n_failed,
    )


def gap(fit: SelectionFit, rows: pd.DataFrame, reference_group=None, se_method: str = "delta",
        variance: Optional[VarianceSpec] = None, n_jobs: Optional[int] = None) -> tuple[float, float]:
    """Comparison-group mean minus reference-group mean of the fitted transform."""
    comp, ref, _ = _group_frames(fit, rows, reference_group)
    if se_method == "delta":
        return population_gap(fit, rows, comp, ref)
    res = decompose(fit, rows, ref, se_method=se_method, variance=variance, n_jobs=n_jobs)
    return res.total_gap, res.se_total
