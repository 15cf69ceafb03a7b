"""
Marginal survey response curves implied by a constant-only binary selection fit.

With response aversion ``u`` (respond to ``r`` requests iff ``u <= P(r)``),

    m(u) = Phi((b + rho * Phi^{-1}(1 - u)) / sqrt(1 - rho^2))

and ``int_0^1 m(u) du = Phi(b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy import integrate, special

from .lar import lar_profile
from .selectmod import SelectionFit

__all__ = [
    "MsrCurve",
    "msr_value",
    "msr_gradient",
    "msr_eval",
    "msr_aggregate",
    "msr_curve",
    "complier_average",
    "default_grid",
]


def _upper_quantile(u):
    # Phi^{-1}(1 - u) without forming 1 - u for small u
    return np.where(u < 0.5, -special.ndtri(u), special.ndtri(1.0 - u))


def msr_value(beta, rho, u):
    """m(u) for intercept ``beta`` and correlation ``rho``; vectorized over ``u``."""
    rho = float(rho)
    if not abs(rho) < 1.0:
        raise ValueError("m(u) is degenerate at |rho| = 1")
    u = np.asarray(u, dtype=float)
    return special.ndtr((beta + rho * _upper_quantile(u)) / math.sqrt(1.0 - rho * rho))


def msr_gradient(beta, rho, u):
    """Derivatives of m(u) w.r.t. (beta, atanh rho), shape (len(u), 2)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    q = _upper_quantile(u)
    c = 1.0 / math.sqrt(1.0 - rho * rho)
    arg = (beta + rho * q) * c
    dens = np.exp(-0.5 * arg * arg) / math.sqrt(2 * math.pi)
    # with tau = atanh rho: arg = beta cosh tau + q sinh tau
    d_tau = q * c + rho * beta * c
    return np.column_stack([dens * c, dens * d_tau])


def complier_average(beta, rho, p_low, p_high):
    """Mean of m over (p_low, p_high] by adaptive quadrature."""
    if not p_high > p_low:
        raise ValueError("need p_high > p_low")
    val, _ = integrate.quad(lambda u: float(msr_value(beta, rho, u)), p_low, p_high,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val / (p_high - p_low)


def _constant_params(fit: SelectionFit, group=None):
    if fit.outcome_kind != "binary" or fit.link != "probit":
        raise ValueError("m(u) needs a binary probit-link fit")
    if len(fit.x_names) != 1:
        raise ValueError("m(u) is defined here for constant-only outcome equations")
    i = fit.group_index(group)
    beta = float(fit.group_beta(group)[0])
    rho = float(fit.rho[i])
    # covariance of (beta, atanh rho) when rho was estimated
    sl = fit.beta_slice(group)
    b_idx = sl.start
    try:
        t_idx = fit.param_names.index(
            "atanh_rho" if fit.groups == [None] else f"atanh_rho[{fit.spec.group_column}={fit.groups[i]}]"
        )
        V = fit.vcov[np.ix_([b_idx, t_idx], [b_idx, t_idx])]
    except ValueError:
        V = np.zeros((2, 2))
        V[0, 0] = fit.vcov[b_idx, b_idx]
    return beta, rho, V


def msr_eval(fit: SelectionFit, u, group=None, level: float = 0.95):
    """m(u) at the fitted (b, rho) with a delta-method interval.

    Returns ``(value, low, high)`` arrays (scalars for scalar ``u``).
    """
    beta, rho, V = _constant_params(fit, group)
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("u must lie in (0, 1)")
    m = msr_value(beta, rho, u_arr)
    g = msr_gradient(beta, rho, u_arr)
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", g, V, g), 0, None))
    zc = special.ndtri(0.5 + level / 2)
    lo, hi = np.minimum(m, m - zc * se), np.maximum(m, m + zc * se)
    if np.ndim(u) == 0:
        return float(m[0]), float(lo[0]), float(hi[0])
    return m, lo, hi


def msr_aggregate(fit: SelectionFit, group=None) -> float:
    beta, _, _ = _constant_params(fit, group)
    return float(special.ndtr(beta))


def default_grid(grid_size: int = 512) -> np.ndarray:
    """Uniform interior grid; 512 points give the ends 1/1024 and 1 - 1/1024."""
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    return (np.arange(grid_size) + 0.5) / grid_size


@dataclass
class MsrCurve:
    u_grid: np.ndarray
    m_values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    complier_segments: list = field(default_factory=list)
    skipped_pairs: list = field(default_factory=list)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame({"u": self.u_grid, "m": self.m_values,
                             "ci_low": self.ci_low, "ci_high": self.ci_high})

    def segments_table(self) -> pd.DataFrame:
        return pd.DataFrame(self.complier_segments,
                            columns=["r", "r_prime", "u_low", "u_high", "lar", "se"])


def msr_curve(fit: SelectionFit, rows: Optional[pd.DataFrame] = None, grid_size: int = 512,
              group=None, level: float = 0.95) -> MsrCurve:
    """Curve data on a uniform grid with complier-mean overlays from ``rows``.

    Overlays use the panel restricted to ``group`` when the fit has groups.
    """
    u = default_grid(grid_size)
    m, lo, hi = msr_eval(fit, u, group, level)
    segs, skipped = [], []
    if rows is not None:
        df = rows
        col = fit.spec.group_column
        if col is not None and group is not None:
            df = rows.loc[rows[col].astype(str) == str(group)]
        est, skipped = lar_profile(df)
        segs = [(e.r, e.r_prime, e.p_r_prime, e.p_r, e.complier_mean, e.se) for e in est]
    return MsrCurve(u, m, lo, hi, segs, skipped)
