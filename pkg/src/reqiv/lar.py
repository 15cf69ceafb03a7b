"""
Willing response propensities and local average responses.

The local average response for the pair ``r > r'`` is the Wald ratio

    (E[Y_hat | R=r] - E[Y_hat | R=r']) / (E[S_hat | R=r] - E[S_hat | R=r'])

of weighted sample means. It is the mean requested variable among subjects who
respond by request ``r`` but not by request ``r'``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import pandas as pd

from .numkit import VarianceSpec, cluster_bootstrap

__all__ = [
    "LarEstimate",
    "PropensityEstimate",
    "RelevanceError",
    "estimate_propensities",
    "estimate_lar",
    "lar_profile",
    "profile_table",
    "step_data",
]


class RelevanceError(ValueError):
    """The response propensity does not increase between the two request levels."""


@dataclass(frozen=True)
class PropensityEstimate:
    r: int
    p: float
    se: float
    n: int


@dataclass(frozen=True)
class LarEstimate:
    r: int
    r_prime: int
    p_r: float
    p_r_prime: float
    complier_mean: float
    se: float
    n_r: int
    n_r_prime: int

    def as_dict(self) -> dict:
        return asdict(self)


def _weights(rows: pd.DataFrame) -> np.ndarray:
    if "weight" in rows:
        return rows["weight"].to_numpy(float)
    return np.ones(len(rows))


def _cluster_cov(infl: np.ndarray, clusters) -> np.ndarray:
    codes, uniq = pd.factorize(np.asarray(clusters), sort=False)
    G = len(uniq)
    summed = np.zeros((G, infl.shape[1]))
    np.add.at(summed, codes, infl)
    V = summed.T @ summed
    if G > 1:
        V *= G / (G - 1.0)
    return V


def estimate_propensities(rows: pd.DataFrame, levels=None, cluster_column: str = "cluster_id") -> dict:
    """Weighted share of retained responses at each request level.

    Returns ``{r: PropensityEstimate}``. Levels without rows are left out with
    a warning. Standard errors are cluster robust.
    """
    R = rows["R"].to_numpy()
    avail = sorted(int(x) for x in np.unique(R))
    if levels is None:
        levels = avail
    out = {}
    w_all = _weights(rows)
    s_all = rows["S_hat"].to_numpy(float)
    cl_all = rows[cluster_column].to_numpy() if cluster_column in rows else np.arange(len(rows))
    for r in levels:
        m = R == r
        if not m.any():
            warnings.warn(f"no rows with R={r}; propensity omitted")
            continue
        w, s = w_all[m], s_all[m]
        W = w.sum()
        p = float(np.dot(w, s) / W)
        infl = (w * (s - p) / W)[:, None]
        se = float(np.sqrt(_cluster_cov(infl, cl_all[m])[0, 0]))
        out[int(r)] = PropensityEstimate(int(r), p, se, int(m.sum()))
    return out


def _moments(rows, r, r_prime):
    R = rows["R"].to_numpy()
    w = _weights(rows)
    s = rows["S_hat"].to_numpy(float)
    y = rows["Y_hat"].to_numpy(float)
    res = {}
    for lev in (r, r_prime):
        m = R == lev
        if not m.any():
            raise ValueError(f"no rows with R={lev}")
        W = w[m].sum()
        res[lev] = (m, W, np.dot(w[m], y[m]) / W, np.dot(w[m], s[m]) / W)
    return res


def _wald(rows, r, r_prime):
    mo = _moments(rows, r, r_prime)
    _, _, yr, sr = mo[r]
    _, _, yq, sq = mo[r_prime]
    if not sr > sq:
        raise RelevanceError(
            f"P({r})={sr:.6g} does not exceed P({r_prime})={sq:.6g}; request pair is not relevant"
        )
    return (yr - yq) / (sr - sq), mo


def estimate_lar(rows: pd.DataFrame, r: int, r_prime: int, variance: Optional[VarianceSpec] = None,
                 n_jobs: Optional[int] = None) -> LarEstimate:
    """Local average response of ``r``-versus-``r_prime`` compliers.

    Delta-method standard error over the four cluster-correlated means, or a
    cluster bootstrap when ``variance.method == "cluster_bootstrap"``.

    Raises
    ------
    RelevanceError
        If the estimated propensity at ``r`` does not exceed that at ``r_prime``.
    """
    r, r_prime = int(r), int(r_prime)
    if not r > r_prime:
        raise ValueError("need r > r_prime")
    variance = variance or VarianceSpec()
    theta, mo = _wald(rows, r, r_prime)
    (mr, Wr, yr, sr), (mq, Wq, yq, sq) = mo[r], mo[r_prime]
    D = sr - sq

    if variance.method == "cluster_bootstrap":
        sub = rows.loc[rows["R"].isin([r, r_prime])]
        boot = cluster_bootstrap(lambda d: [_wald(d, r, r_prime)[0]], sub, variance,
                                 n_jobs=n_jobs, compute_estimate=False)
        se = float(boot.se[0])
    else:
        w = _weights(rows)
        s = rows["S_hat"].to_numpy(float)
        y = rows["Y_hat"].to_numpy(float)
        col = variance.cluster_column
        cl = rows[col].to_numpy() if col in rows else np.arange(len(rows))
        keep = mr | mq
        infl = np.zeros((len(rows), 4))
        infl[mr, 0] = w[mr] * (y[mr] - yr) / Wr
        infl[mr, 1] = w[mr] * (s[mr] - sr) / Wr
        infl[mq, 2] = w[mq] * (y[mq] - yq) / Wq
        infl[mq, 3] = w[mq] * (s[mq] - sq) / Wq
        V = _cluster_cov(infl[keep], cl[keep])
        g = np.array([1.0, -theta, -1.0, theta]) / D
        se = float(np.sqrt(max(g @ V @ g, 0.0)))
    return LarEstimate(r, r_prime, float(sr), float(sq), float(theta), se, int(mr.sum()), int(mq.sum()))


def lar_profile(rows: pd.DataFrame, variance: Optional[VarianceSpec] = None,
                n_jobs: Optional[int] = None) -> tuple[list, list]:
    """Adjacent-pair estimates ``(1,0), (2,1), ...`` up to the largest observed R.

    Returns ``(estimates, skipped)`` where ``skipped`` lists ``(r, r', reason)``
    for pairs that failed relevance or lacked rows.
    """
    levels = sorted(int(x) for x in rows["R"].unique())
    est, skipped = [], []
    for r in range(max(levels[0], 0) + 1, levels[-1] + 1):
        try:
            est.append(estimate_lar(rows, r, r - 1, variance, n_jobs))
        except (RelevanceError, ValueError) as exc:
            skipped.append((r, r - 1, str(exc)))
    return est, skipped


def profile_table(estimates) -> pd.DataFrame:
    return pd.DataFrame(
        [(e.r, e.r_prime, e.p_r, e.p_r_prime, e.complier_mean, e.se, e.n_r, e.n_r_prime) for e in estimates],
        columns=["r", "r_prime", "p_r", "p_r_prime", "lar", "se", "n_r", "n_r_prime"],
    )


def step_data(estimates) -> pd.DataFrame:
    """Piecewise-constant complier means over response-aversion intervals."""
    return pd.DataFrame(
        [(e.p_r_prime, e.p_r, e.complier_mean, e.se) for e in estimates],
        columns=["u_lower", "u_upper", "lar", "se"],
    )
