"""
Numerical foundations: normal kernels, a smooth maximizer, variance estimators.

Everything here is pure given its inputs and safe to call from several threads.
The bivariate normal CDF follows Genz's double precision refinement of the
Drezner-Wesolowsky quadrature over the correlation coefficient.

References
----------
Drezner, Z. and Wesolowsky, G. O. (1990). "On the computation of the bivariate
    normal integral." Journal of Statistical Computation and Simulation, 35.
Genz, A. (2004). "Numerical computation of rectangular bivariate and trivariate
    normal and t probabilities." Statistics and Computing, 14, 251-260.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special

__all__ = [
    "OptimizerSettings",
    "VarianceSpec",
    "OptimizeResult",
    "BootstrapResult",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_logcdf",
    "std_normal_quantile",
    "bivariate_normal_cdf",
    "bivariate_normal_logcdf",
    "bivariate_normal_pdf",
    "maximize",
    "numeric_gradient",
    "numeric_hessian",
    "gradient_check",
    "cluster_sandwich",
    "cluster_bootstrap",
    "replicate_rng",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class OptimizerSettings:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    objective_rel_tolerance: float = 1e-10
    finite_difference_step: float = 1e-5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("gradient_tolerance", "objective_rel_tolerance", "finite_difference_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class VarianceSpec:
    """How standard errors are obtained for an estimator.

    ``analytic_sandwich`` uses the clustered score sandwich; ``cluster_bootstrap``
    resamples whole clusters ``bootstrap_replicates`` times.
    """

    method: Literal["analytic_sandwich", "cluster_bootstrap"] = "analytic_sandwich"
    cluster_column: str = "cluster_id"
    bootstrap_replicates: int = 500
    base_seed: int = 20240601

    def __post_init__(self):
        if self.method not in ("analytic_sandwich", "cluster_bootstrap"):
            raise ValueError(f"unknown variance method {self.method!r}")
        if self.method == "cluster_bootstrap" and self.bootstrap_replicates < 2:
            raise ValueError("cluster_bootstrap needs at least 2 replicates")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")


# ---------------------------------------------------------------------------
# univariate normal


def std_normal_cdf(x):
    """Standard normal CDF, saturating at 0 and 1 in the tails."""
    return special.ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - 0.5 * _LOG_2PI)


def std_normal_logcdf(x):
    """log Phi(x), accurate far into the lower tail."""
    return special.log_ndtr(x)


def std_normal_quantile(p):
    """Inverse of the standard normal CDF.

    Raises
    ------
    ValueError
        If any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise ValueError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# bivariate normal

# Gauss-Legendre nodes/weights on half intervals (Genz's tables, 6, 12, 20 points)
_GL = {
    3: (
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    ),
    6: (
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    ),
    10: (
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
    ),
}


def _bvn_upper_moderate(h, k, r, nodes):
    # P(X > h, Y > k) for |r| < 0.925
    x, w = _GL[nodes]
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = np.arcsin(r)
    total = np.zeros_like(h)
    for xi, wi in zip(x, w):
        for sgn in (-1.0, 1.0):
            sn = np.sin(asr * (1.0 + sgn * xi) * 0.5)
            total += wi * np.exp((sn * hk - hs) / (1.0 - sn * sn))
    return total * asr / (4.0 * math.pi) + special.ndtr(-h) * special.ndtr(-k)


def _bvn_upper_high(h, k, r):
    # P(X > h, Y > k) for 0.925 <= |r| < 1
    x, w = _GL[10]
    neg = r < 0
    k = np.where(neg, -k, k)
    hk = h * k
    a2 = (1.0 - r) * (1.0 + r)
    a = np.sqrt(a2)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -(bs / a2 + hk) / 2.0
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        bvn = np.where(
            asr > -100,
            a * np.exp(asr) * (1 - c * (bs - a2) * (1 - d * bs / 5) / 3 + c * d * a2 * a2 / 5),
            0.0,
        )
        b = np.sqrt(bs)
        sp = math.sqrt(2 * math.pi) * special.ndtr(-b / a)
        bvn = bvn - np.where(
            hk > -100,
            np.exp(-hk / 2) * sp * b * (1 - c * bs * (1 - d * bs / 5) / 3),
            0.0,
        )
        ah = a / 2.0
        for xi, wi in zip(x, w):
            for sgn in (-1.0, 1.0):
                xs = (ah + ah * sgn * xi) ** 2
                rs = np.sqrt(1.0 - xs)
                asr_i = -(bs / xs + hk) / 2.0
                sp_i = 1.0 + c * xs * (1.0 + d * xs)
                ep_i = np.exp(-hk * xs / (2.0 * (1.0 + rs) ** 2)) / rs
                bvn = bvn + np.where(asr_i > -100, ah * wi * np.exp(asr_i) * (ep_i - sp_i), 0.0)
    bvn = -bvn / (2.0 * math.pi)
    pos = bvn + special.ndtr(-np.maximum(h, k))
    lower = np.where(h < 0, special.ndtr(k) - special.ndtr(h), special.ndtr(-h) - special.ndtr(-k))
    negv = np.where(h >= k, -bvn, lower - bvn)
    return np.where(neg, negv, pos)


def bivariate_normal_cdf(a, b, rho):
    """P(X <= a, Y <= b) for a standard bivariate normal with correlation ``rho``.

    Vectorized over broadcastable ``a``, ``b`` and ``rho``. Infinite limits are
    allowed. At ``rho = +1`` the comonotone limit ``min(Phi(a), Phi(b))`` is
    returned, at ``rho = -1`` ``max(0, Phi(a) + Phi(b) - 1)``.
    """
    a, b, rho = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(rho, dtype=float)
    )
    scalar = a.ndim == 0
    a, b, rho = (np.atleast_1d(v).astype(float).copy() for v in (a, b, rho))
    if np.any(np.abs(rho) > 1.0) or np.any(np.isnan(rho)):
        raise ValueError("correlation must satisfy |rho| <= 1")

    out = np.empty_like(a)
    pa, pb = special.ndtr(a), special.ndtr(b)

    # limits that need no quadrature
    done = np.zeros(a.shape, dtype=bool)
    m = (a == -np.inf) | (b == -np.inf)
    out[m], done[m] = 0.0, True
    m = ~done & (a == np.inf)
    out[m], done[m] = pb[m], True
    m = ~done & (b == np.inf)
    out[m], done[m] = pa[m], True
    m = ~done & (rho == 1.0)
    out[m], done[m] = np.minimum(pa[m], pb[m]), True
    m = ~done & (rho == -1.0)
    out[m], done[m] = np.maximum(0.0, pa[m] + pb[m] - 1.0), True
    m = ~done & (rho == 0.0)
    out[m], done[m] = pa[m] * pb[m], True

    # upper-orthant routine evaluated at (-a, -b)
    h, k, r = -a, -b, rho
    absr = np.abs(r)
    for lo, hi, nodes in ((0.0, 0.3, 3), (0.3, 0.75, 6), (0.75, 0.925, 10)):
        m = ~done & (absr >= lo) & (absr < hi)
        if m.any():
            out[m] = _bvn_upper_moderate(h[m], k[m], r[m], nodes)
            done |= m
    m = ~done
    if m.any():
        out[m] = _bvn_upper_high(h[m], k[m], r[m])
    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if scalar else out


_LOG_TAIL = 1e-5  # below this the orthant routines lose relative accuracy
_GL16 = np.polynomial.legendre.leggauss(16)


def _log_mills(x):
    # log(phi(x) / Phi(x))
    return -0.5 * x * x - 0.5 * _LOG_2PI - special.log_ndtr(x)


def _bvn_log_tail(u, v, r):
    """log P(Y <= u, X <= v) by Gauss-Legendre over y in log space.

    The log integrand ``log phi(y) + log Phi((v - r y)/s)`` is concave with
    curvature between 1 and 1/s^2, so panels grow geometrically away from its
    maximum, starting at a quarter of the narrowest width the integrand can
    have there.
    """
    s = np.sqrt((1.0 - r) * (1.0 + r))

    def logf(y):
        return -0.5 * y * y - 0.5 * _LOG_2PI + special.log_ndtr((v - r * y) / s)

    def slope(y):
        return -y - (r / s) * np.exp(_log_mills((v - r * y) / s))

    span = 50.0 + 10.0 * (np.abs(u) + np.abs(v)) / s
    lo, hi = -span, span
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = slope(mid) > 0
        lo, hi = np.where(up, mid, lo), np.where(up, hi, mid)
    y0 = np.minimum(0.5 * (lo + hi), u)
    peak = logf(y0)

    # a maximum on the boundary decays at rate |slope| there, which can be far faster
    edge_rate = np.where(y0 >= u, np.abs(slope(y0)), 0.0)
    d0 = 0.25 * np.minimum(np.minimum(s, 1.0), 1.0 / np.maximum(edge_rate, 1e-300))
    n_geo = int(np.ceil(np.log2(12.0 / d0.min()))) + 1
    edges = np.concatenate([np.zeros((1, len(u))), d0[None, :] * 2.0 ** np.arange(n_geo)[:, None]])
    edges = np.minimum(edges, 12.0)
    x, w = _GL16
    acc = np.zeros(len(u))
    for side in (-1.0, 1.0):
        limit = 12.0 if side < 0 else np.minimum(12.0, u - y0)
        e = np.minimum(edges, limit)
        for j in range(n_geo):
            a_, b_ = e[j], e[j + 1]
            half = 0.5 * (b_ - a_)
            if not np.any(half > 0):
                continue
            mid = 0.5 * (a_ + b_)
            for xi, wi in zip(x, w):
                y = y0 + side * (mid + half * xi)
                acc += wi * half * np.exp(logf(y) - peak)
    return peak + np.log(acc)


def bivariate_normal_logcdf(a, b, rho):
    """log P(X <= a, Y <= b), accurate in relative terms far into the lower tail."""
    a, b, rho = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(rho, dtype=float)
    )
    scalar = a.ndim == 0
    a, b, rho = (np.atleast_1d(v).astype(float) for v in (a, b, rho))
    P = np.atleast_1d(bivariate_normal_cdf(a, b, rho))
    with np.errstate(divide="ignore"):
        out = np.log(P)
    m = (P < _LOG_TAIL) & np.isfinite(a) & np.isfinite(b) & (np.abs(rho) < 1.0)
    if m.any():
        u = np.minimum(a[m], b[m])
        v = np.maximum(a[m], b[m])
        out[m] = _bvn_log_tail(u, v, rho[m])
    return float(out[0]) if scalar else out


def bivariate_normal_pdf(a, b, rho):
    a, b, rho = (np.asarray(v, dtype=float) for v in (a, b, rho))
    one_m = 1.0 - rho * rho
    q = (a * a - 2.0 * rho * a * b + b * b) / one_m
    return np.exp(-0.5 * q) / (2.0 * math.pi * np.sqrt(one_m))


# ---------------------------------------------------------------------------
# optimization


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    covariance: np.ndarray  # negative inverse Hessian at x
    hessian: np.ndarray
    converged: bool
    iterations: int
    message: str = ""


def numeric_gradient(f, x, step=1e-5):
    """Central-difference gradient with steps scaled by ``max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def numeric_hessian(grad, x, step=1e-5):
    """Symmetrized central-difference Jacobian of an analytic gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for j in range(n):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        H[:, j] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2.0 * h)
    return 0.5 * (H + H.T)


def _cubic_step(a0, f0, d0, a1, f1, a2, f2):
    # minimizer of the cubic through (0,f0,d0), (a1,f1), (a2,f2); minimization sense
    denom = a1 * a1 * a2 * a2 * (a1 - a2)
    if denom == 0:
        return None
    m = np.array([[a2 * a2, -a1 * a1], [-a2 ** 3, a1 ** 3]]) / denom
    A, B = m @ np.array([f1 - f0 - d0 * a1, f2 - f0 - d0 * a2])
    if A == 0:
        return -d0 / (2 * B) if B > 0 else None
    disc = B * B - 3 * A * d0
    if disc < 0:
        return None
    return (-B + math.sqrt(disc)) / (3 * A)


def _line_search(phi, f0, d0, alpha0=1.0, c1=1e-4, max_tries=60):
    """Backtracking Armijo search with quadratic then cubic interpolation.

    Works on a function to be *minimized*; ``d0`` is its directional derivative
    at 0 (negative). Non-finite trial values shrink the step by 10x.
    """
    alpha = alpha0
    prev = None
    any_finite = False
    for _ in range(max_tries):
        fa = phi(alpha)
        if not np.isfinite(fa):
            alpha *= 0.1
            prev = None
            continue
        any_finite = True
        if fa <= f0 + c1 * alpha * d0:
            return alpha, fa
        if prev is None:
            new = -d0 * alpha * alpha / (2.0 * (fa - f0 - d0 * alpha))
        else:
            new = _cubic_step(0.0, f0, d0, alpha, fa, prev[0], prev[1])
        prev = (alpha, fa)
        if new is None or not np.isfinite(new):
            new = 0.5 * alpha
        alpha = min(max(new, 0.1 * alpha), 0.5 * alpha)
        if alpha < 1e-16:
            break
    if not any_finite:
        raise FloatingPointError("objective is non-finite at every trial step")
    return None, None


def maximize(objective, start, settings=None, gradient=None, polish=True):
    """Maximize a smooth function with BFGS and an interpolating line search.

    Parameters
    ----------
    objective : callable
        ``objective(x) -> float``.
    start : array_like
        Starting parameter vector; the objective must be finite there.
    settings : OptimizerSettings, optional
    gradient : callable, optional
        Analytic gradient. Central differences are used when omitted.
    polish : bool
        Finish with up to five Newton steps on a finite-difference Hessian
        of the gradient, which tightens the optimum well below the BFGS
        stopping tolerance.

    Returns
    -------
    OptimizeResult
        ``covariance`` is the negative inverse Hessian at the optimum.
    """
    settings = settings or OptimizerSettings()
    step = settings.finite_difference_step
    x = np.array(start, dtype=float)
    f = float(objective(x))
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    grad = gradient if gradient is not None else (lambda z: numeric_gradient(objective, z, step))
    g = np.asarray(grad(x), dtype=float)

    def neg_hess(z):
        return -numeric_hessian(grad, z, step)

    # initial inverse curvature from the local Hessian when it is usable
    Hinv = np.eye(x.size)
    try:
        A = neg_hess(x)
        np.linalg.cholesky(A)
        Hinv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        Hinv = np.eye(x.size) / max(1.0, np.abs(g).max())

    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, settings.max_iterations + 1):
        if np.max(np.abs(g)) <= settings.gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
            break
        d = Hinv @ g
        slope = float(g @ d)
        if not slope > 0:
            Hinv = np.eye(x.size) / max(1.0, np.abs(g).max())
            d = Hinv @ g
            slope = float(g @ d)
        alpha, fa = _line_search(lambda a: -objective(x + a * d), -f, -slope)
        if alpha is None:
            message = "line search failed"
            break
        s = alpha * d
        x_new = x + s
        g_new = np.asarray(grad(x_new), dtype=float)
        yv = g - g_new  # gradient change of the minimized function -f
        f_new = -fa
        rel = abs(f_new - f) / max(1.0, abs(f))
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho_ = 1.0 / sy
            I = np.eye(x.size)
            V = I - rho_ * np.outer(s, yv)
            Hinv = V @ Hinv @ V.T + rho_ * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
        if rel <= settings.objective_rel_tolerance and np.max(np.abs(g)) <= 1e3 * settings.gradient_tolerance:
            converged, message = True, "relative objective change below tolerance"
            break

    H = neg_hess(x)
    if polish:
        for _ in range(5):
            if np.max(np.abs(g)) <= 1e-3 * settings.gradient_tolerance:
                break
            try:
                d = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            if not float(g @ d) > 0:
                break
            alpha, fa = _line_search(lambda a: -objective(x + a * d), -f, -float(g @ d), max_tries=30)
            if alpha is None:
                break
            x = x + alpha * d
            f = -fa
            g = np.asarray(grad(x), dtype=float)
            H = neg_hess(x)
        if np.max(np.abs(g)) <= settings.gradient_tolerance:
            converged, message = True, message if converged else "gradient tolerance reached after polish"

    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
        warnings.warn("Hessian is singular at the optimum; covariance uses a pseudo-inverse")
    return OptimizeResult(
        x=x, fun=f, grad=g, covariance=0.5 * (cov + cov.T), hessian=-H,
        converged=converged, iterations=it, message=message,
    )


def gradient_check(objective, gradient, point, step=1e-5):
    """Largest ``|analytic - numeric| / (1 + |numeric|)`` over coordinates."""
    point = np.asarray(point, dtype=float)
    analytic = np.asarray(gradient(point), dtype=float)
    numeric = numeric_gradient(objective, point, step)
    return float(np.max(np.abs(analytic - numeric) / (1.0 + np.abs(numeric))))


# ---------------------------------------------------------------------------
# variance estimation


def cluster_sandwich(bread, scores, clusters, small_sample=True):
    """Clustered sandwich ``B (sum_g s_g s_g') B`` with ``G/(G-1)`` correction.

    Parameters
    ----------
    bread : ndarray
        Inverse of the negative Hessian (k x k).
    scores : ndarray
        Per-row score contributions (n x k), already multiplied by weights.
    clusters : array_like
        Cluster label per row.
    """
    scores = np.asarray(scores, dtype=float)
    codes, uniq = pd.factorize(np.asarray(clusters), sort=False)
    G = len(uniq)
    summed = np.zeros((G, scores.shape[1]))
    np.add.at(summed, codes, scores)
    meat = summed.T @ summed
    if small_sample and G > 1:
        meat *= G / (G - 1.0)
    V = bread @ meat @ bread.T
    return 0.5 * (V + V.T), G


@dataclass
class BootstrapResult:
    estimate: np.ndarray
    se: np.ndarray
    replicates: np.ndarray
    n_failed: int = 0
    seeds: list = field(default_factory=list)


def replicate_rng(base_seed, replicate):
    """Generator for one bootstrap replicate, a pure function of its inputs."""
    return np.random.default_rng([int(base_seed), int(replicate)])


def cluster_bootstrap(statistic: Callable[[pd.DataFrame], Sequence[float]], data: pd.DataFrame,
                      spec: VarianceSpec, n_jobs: Optional[int] = None,
                      compute_estimate: bool = True) -> BootstrapResult:
    """Resample whole clusters with replacement and recompute ``statistic``.

    Each replicate draws its clusters from ``replicate_rng(base_seed, r)`` so
    results do not depend on ``n_jobs`` or scheduling. Every drawn copy of a
    cluster gets a fresh label in column ``_boot_cluster``. Replicates whose
    statistic raises or is non-finite are dropped with a warning.
    """
    col = spec.cluster_column
    if col not in data.columns:
        raise KeyError(f"cluster column {col!r} not in data")
    codes, uniq = pd.factorize(data[col], sort=True)
    G = len(uniq)
    if G < 2:
        raise ValueError("cluster bootstrap needs at least 2 distinct clusters")
    order = np.argsort(codes, kind="stable")
    starts = np.searchsorted(codes[order], np.arange(G))
    ends = np.searchsorted(codes[order], np.arange(G), side="right")
    sizes = ends - starts
    B = spec.bootstrap_replicates

    def one(r):
        rng = replicate_rng(spec.base_seed, r)
        draw = rng.integers(0, G, size=G)
        lens = sizes[draw]
        # row positions of drawn clusters, concatenated in draw order
        offs = np.repeat(starts[draw] - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
        rows = order[np.arange(lens.sum()) + offs]
        sample = data.iloc[rows].reset_index(drop=True)
        sample["_boot_cluster"] = np.repeat(np.arange(G), lens)
        try:
            val = np.atleast_1d(np.asarray(statistic(sample), dtype=float))
        except (ValueError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            warnings.warn(f"bootstrap replicate {r} failed: {exc}")
            return None
        return val

    n_jobs = n_jobs or 1
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            vals = list(pool.map(one, range(B)))
    else:
        vals = [one(r) for r in range(B)]

    good = [v for v in vals if v is not None and np.all(np.isfinite(v))]
    n_failed = B - len(good)
    if len(good) < 2:
        raise RuntimeError("fewer than two bootstrap replicates succeeded")
    if n_failed:
        warnings.warn(f"{n_failed} of {B} bootstrap replicates dropped")
    reps = np.vstack(good)
    est = np.atleast_1d(np.asarray(statistic(data), dtype=float)) if compute_estimate else reps.mean(axis=0)
    return BootstrapResult(
        estimate=est, se=reps.std(axis=0, ddof=1), replicates=reps, n_failed=n_failed,
        seeds=[[int(spec.base_seed), r] for r in range(B)],
    )
