"""
Parametric sample-selection models estimated on request-indexed panels.

Selection: ``S_hat = 1`` iff ``Z a + u >= 0``. Outcome: ``X b + e`` (continuous)
or ``1{X b + e >= 0}`` (binary), with ``corr(e, u) = rho``.

Three estimators share one result type:

* ``fit_heckprobit``   binary outcome, full information ML,
* ``fit_heckman_fiml`` continuous outcome, full information ML,
* ``fit_heckman_twostep`` probit then least squares with the inverse Mills ratio.

Optimization runs on ``(b, a, atanh rho, log sigma)``. Rows that share every
model input are collapsed into one weighted row before optimizing, so
discrete designs with hundreds of thousands of rows cost a handful of
likelihood evaluations. Per-row scores are expanded back for clustered
variances.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, special

from .numkit import (
    OptimizerSettings,
    VarianceSpec,
    bivariate_normal_logcdf,
    cluster_bootstrap,
    cluster_sandwich,
    maximize,
    numeric_hessian,
)
from .panel import final_request_rows

__all__ = [
    "ModelSpec",
    "SelectionFit",
    "IdentificationError",
    "CollinearityError",
    "SeparationError",
    "fit_probit",
    "fit_heckprobit",
    "fit_heckman_fiml",
    "fit_heckman_twostep",
    "fit_model",
    "population_mean",
    "population_mean_gradient",
    "population_gap",
    "test_selection_bias",
    "probit_loglik",
    "heckprobit_loglik",
    "heckman_loglik",
    "inverse_mills",
    "CONST",
]

CONST = "_cons"
_TANH_CAP = 18.0  # |atanh rho| beyond this is numerically rho = +-1


class IdentificationError(ValueError):
    pass


class CollinearityError(ValueError):
    pass


class SeparationError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """What to fit and how.

    ``x_columns`` and ``z_columns`` exclude the intercept, which both
    equations always carry. ``group_column`` fits every group with its own
    coefficients, correlation and scale, and reports one joint covariance.
    ``all_rows`` uses every row with ``R >= 1``; ``final_request_only`` keeps
    the last row of each subject-term.
    """

    outcome_kind: str
    outcome: str = "Y_hat"
    x_columns: tuple = ()
    z_columns: tuple = ()
    rho_constraint: Optional[float] = None
    weight_column: Optional[str] = "weight"
    variance: VarianceSpec = field(default_factory=VarianceSpec)
    sample_rule: str = "all_rows"
    selection_column: str = "S_hat"
    group_column: Optional[str] = None
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        object.__setattr__(self, "x_columns", tuple(self.x_columns))
        object.__setattr__(self, "z_columns", tuple(self.z_columns))
        if self.outcome_kind not in ("binary", "continuous"):
            raise ValueError(f"outcome_kind must be binary or continuous, got {self.outcome_kind!r}")
        if self.sample_rule not in ("all_rows", "final_request_only"):
            raise ValueError(f"unknown sample_rule {self.sample_rule!r}")
        if self.rho_constraint is not None and not -1.0 < float(self.rho_constraint) < 1.0:
            raise ValueError("a fixed rho must lie strictly inside (-1, 1)")
        if CONST in self.x_columns or CONST in self.z_columns:
            raise ValueError("the intercept is added automatically")
        if self.rho_constraint is None and not set(self.z_columns) - set(self.x_columns):
            raise IdentificationError(
                "free rho needs a selection column excluded from the outcome equation"
            )

    @property
    def free_rho(self) -> bool:
        return self.rho_constraint is None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x_columns"] = list(self.x_columns)
        d["z_columns"] = list(self.z_columns)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["variance"] = VarianceSpec(**d.get("variance", {}))
        d["optimizer"] = OptimizerSettings(**d.get("optimizer", {}))
        return cls(**d)


@dataclass
class SelectionFit:
    """Estimated selection model.

    ``beta`` and ``alpha`` stack the groups' coefficient vectors in group
    order; ``rho`` and ``sigma`` hold one entry per group (``sigma`` is 1 for
    binary FIML). ``params``/``vcov`` are on the optimization scale, named by
    ``param_names``.
    """

    method: str
    outcome_kind: str
    link: str
    groups: list
    x_names: list
    z_names: list
    beta: np.ndarray
    alpha: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    params: np.ndarray
    vcov: np.ndarray
    param_names: list
    loglik: float
    converged: bool
    iterations: int
    n_rows: int
    n_clusters: int
    spec: ModelSpec

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def block_size(self) -> int:
        return len(self.params) // self.n_groups

    def group_index(self, group=None) -> int:
        if group is None:
            if self.n_groups != 1:
                raise ValueError(f"fit has groups {self.groups}; name one")
            return 0
        try:
            return self.groups.index(group)
        except ValueError:
            # JSON round trips turn numeric labels into strings and back
            for i, g in enumerate(self.groups):
                if str(g) == str(group):
                    return i
            raise KeyError(f"unknown group {group!r}") from None

    def beta_slice(self, group=None) -> slice:
        """Positions of one group's outcome coefficients inside ``params``."""
        i = self.group_index(group)
        b = self.block_size()
        return slice(i * b, i * b + len(self.x_names))

    def group_beta(self, group=None) -> np.ndarray:
        kx = len(self.x_names)
        i = self.group_index(group)
        return self.beta[i * kx:(i + 1) * kx]

    def group_alpha(self, group=None) -> np.ndarray:
        kz = len(self.z_names)
        i = self.group_index(group)
        return self.alpha[i * kz:(i + 1) * kz]

    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0, None))

    def table(self) -> pd.DataFrame:
        from scipy.stats import norm

        se = self.se()
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self.params / se
        return pd.DataFrame({
            "parameter": self.param_names,
            "estimate": self.params,
            "se": se,
            "z": z,
            "p": 2 * norm.sf(np.abs(z)),
        })

    def to_dict(self) -> dict:
        def arr(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        return {
            "method": self.method,
            "outcome_kind": self.outcome_kind,
            "link": self.link,
            "groups": [None if g is None else (g if isinstance(g, (int, float, str)) else str(g))
                       for g in self.groups],
            "x_names": list(self.x_names),
            "z_names": list(self.z_names),
            "beta": arr(self.beta),
            "alpha": arr(self.alpha),
            "rho": arr(self.rho),
            "sigma": arr(self.sigma),
            "params": arr(self.params),
            "vcov": [arr(row) for row in np.atleast_2d(self.vcov)],
            "param_names": list(self.param_names),
            "loglik": float(self.loglik) if np.isfinite(self.loglik) else None,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n_rows": int(self.n_rows),
            "n_clusters": int(self.n_clusters),
            "spec": self.spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionFit":
        def arr(v):
            return np.array([np.nan if x is None else x for x in v], dtype=float)

        k = len(d["params"])
        vcov = np.array([[np.nan if x is None else x for x in row] for row in d["vcov"]], dtype=float)
        return cls(
            method=d["method"], outcome_kind=d["outcome_kind"], link=d["link"],
            groups=list(d["groups"]), x_names=list(d["x_names"]), z_names=list(d["z_names"]),
            beta=arr(d["beta"]), alpha=arr(d["alpha"]), rho=arr(d["rho"]), sigma=arr(d["sigma"]),
            params=arr(d["params"]), vcov=vcov.reshape(k, k), param_names=list(d["param_names"]),
            loglik=np.nan if d["loglik"] is None else float(d["loglik"]),
            converged=bool(d["converged"]), iterations=int(d["iterations"]),
            n_rows=int(d["n_rows"]), n_clusters=int(d["n_clusters"]),
            spec=ModelSpec.from_dict(d["spec"]),
        )


# ---------------------------------------------------------------------------
# normal helpers


def inverse_mills(x):
    """phi(x) / Phi(x), evaluated in logs so it stays finite far in the left tail."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - 0.5 * math.log(2 * math.pi) - special.log_ndtr(x))


def _logpdf(x):
    return -0.5 * x * x - 0.5 * math.log(2 * math.pi)


# ---------------------------------------------------------------------------
# log-likelihoods: per-row values and per-row scores


def probit_loglik(b, X, y, scores=False):
    """Per-row probit log-likelihood of 0/1 ``y``; optionally the per-row scores."""
    q = 2.0 * np.asarray(y, float) - 1.0
    qxb = q * (X @ b)
    ll = special.log_ndtr(qxb)
    if not scores:
        return ll
    return ll, X * (q * inverse_mills(qxb))[:, None]


def heckprobit_loglik(theta, X, Z, S, Y, rho_fixed=None, scores=False):
    """Per-row log-likelihood of the binary selection model.

    ``theta = (b, a, atanh rho)``; drop the last entry when ``rho_fixed`` is
    given. With ``scores=True`` also returns the per-row gradient matrix.
    """
    kx, kz = X.shape[1], Z.shape[1]
    b, a = theta[:kx], theta[kx:kx + kz]
    if rho_fixed is None:
        tau = float(np.clip(theta[kx + kz], -_TANH_CAP, _TANH_CAP))
        rho = math.tanh(tau)
    else:
        rho = float(rho_fixed)
    xb, za = X @ b, Z @ a
    n = len(S)
    ll = np.empty(n)
    resp = S > 0.5
    non = ~resp
    ll[non] = special.log_ndtr(-za[non])

    q = np.where(Y[resp] > 0.5, 1.0, -1.0)
    h, k, r = q * xb[resp], za[resp], q * rho
    lP = bivariate_normal_logcdf(h, k, r)
    ll[resp] = lP
    if not scores:
        return ll

    k_all = kx + kz + (rho_fixed is None)
    G = np.zeros((n, k_all))
    G[non, kx:kx + kz] = -Z[non] * inverse_mills(-za[non])[:, None]
    # ratios to P in logs: P can be far below the smallest double
    s2 = max(1.0 - rho * rho, 1e-300)
    s = math.sqrt(s2)
    gh = np.exp(_logpdf(h) + special.log_ndtr((k - r * h) / s) - lP)
    gk = np.exp(_logpdf(k) + special.log_ndtr((h - r * k) / s) - lP)
    G[resp, :kx] = X[resp] * (q * gh)[:, None]
    G[resp, kx:kx + kz] = Z[resp] * gk[:, None]
    if rho_fixed is None:
        lpdf = -0.5 * (h * h - 2 * r * h * k + k * k) / s2 - math.log(2 * math.pi * s)
        G[resp, kx + kz] = q * np.exp(lpdf - lP) * s2
    return ll, G


def heckman_loglik(theta, X, Z, S, Y, rho_fixed=None, scores=False):
    """Per-row log-likelihood of the continuous selection model.

    ``theta = (b, a, atanh rho, log sigma)``; the ``atanh rho`` entry is absent
    when ``rho_fixed`` is given.
    """
    kx, kz = X.shape[1], Z.shape[1]
    b, a = theta[:kx], theta[kx:kx + kz]
    if rho_fixed is None:
        tau = float(np.clip(theta[kx + kz], -_TANH_CAP, _TANH_CAP))
        rho = math.tanh(tau)
        lsig = theta[kx + kz + 1]
    else:
        rho = float(rho_fixed)
        lsig = theta[kx + kz]
    sig = math.exp(lsig)
    c = 1.0 / math.sqrt(1.0 - rho * rho)
    za = Z @ a
    n = len(S)
    ll = np.empty(n)
    resp = S > 0.5
    non = ~resp
    ll[non] = special.log_ndtr(-za[non])
    e = (Y[resp] - X[resp] @ b) / sig
    A = (za[resp] + rho * e) * c
    ll[resp] = -lsig + _logpdf(e) + special.log_ndtr(A)
    if not scores:
        return ll

    k_all = kx + kz + 1 + (rho_fixed is None)
    G = np.zeros((n, k_all))
    G[non, kx:kx + kz] = -Z[non] * inverse_mills(-za[non])[:, None]
    lam = inverse_mills(A)
    G[resp, :kx] = X[resp] * ((e - lam * c * rho) / sig)[:, None]
    G[resp, kx:kx + kz] = Z[resp] * (lam * c)[:, None]
    j = kx + kz
    if rho_fixed is None:
        G[resp, j] = lam * c * (rho * za[resp] + e)
        j += 1
    G[resp, j] = -1.0 + e * e - lam * c * rho * e
    return ll, G


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class _Design:
    X: np.ndarray
    Z: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    w: np.ndarray
    clusters: np.ndarray
    # compressed
    Xu: np.ndarray = None
    Zu: np.ndarray = None
    Su: np.ndarray = None
    Yu: np.ndarray = None
    Wu: np.ndarray = None
    inv: np.ndarray = None
    loc: float = 0.0
    scale: float = 1.0

    def compress(self):
        M = np.column_stack([self.X, self.Z, self.S, self.Y])
        uniq, inv = np.unique(M, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        kx, kz = self.X.shape[1], self.Z.shape[1]
        self.Xu = uniq[:, :kx]
        self.Zu = uniq[:, kx:kx + kz]
        self.Su = uniq[:, kx + kz]
        self.Yu = uniq[:, kx + kz + 1]
        self.Wu = np.bincount(inv, weights=self.w, minlength=len(uniq))
        self.inv = inv
        return self


def _sample(rows: pd.DataFrame, spec: ModelSpec) -> pd.DataFrame:
    df = rows
    if spec.sample_rule == "final_request_only":
        df = final_request_rows(df)
    if "R" in df:
        df = df.loc[df["R"] >= 1]
    return df.reset_index(drop=True)


def _check_rank(M: np.ndarray, names: Sequence[str], label: str):
    if M.shape[0] == 0:
        raise ValueError(f"no rows for the {label} equation")
    # pivoted QR of the column-scaled Gram matrix: k x k whatever the row count
    norms = np.sqrt((M * M).sum(axis=0))
    norms[norms == 0] = 1.0
    Ms = M / norms
    _, Rm, piv = linalg.qr(Ms.T @ Ms, pivoting=True)
    d = np.abs(np.diag(Rm))
    tol = M.shape[1] * (d[0] if d.size else 0.0) * 1e-10
    rank = int((d > tol).sum())
    if rank < M.shape[1]:
        bad = [names[i] for i in piv[rank:]]
        raise CollinearityError(f"{label} design is collinear; drop one of {bad}")


def _design(df: pd.DataFrame, spec: ModelSpec, cols_y: bool = True) -> _Design:
    n = len(df)
    need = list(spec.x_columns) + list(spec.z_columns)
    missing = [c for c in need + [spec.selection_column, spec.outcome] if c not in df]
    if missing:
        raise KeyError(f"columns not in data: {missing}")
    X = np.column_stack([np.ones(n)] + [df[c].to_numpy(float) for c in spec.x_columns])
    Z = np.column_stack([np.ones(n)] + [df[c].to_numpy(float) for c in spec.z_columns])
    bad = [c for c in need if not np.all(np.isfinite(df[c].to_numpy(float)))]
    if bad:
        raise ValueError(f"non-finite covariate values in {bad}")
    S = df[spec.selection_column].to_numpy(float)
    if not np.all((S == 0) | (S == 1)):
        raise ValueError(f"{spec.selection_column} must be 0/1")
    Y = df[spec.outcome].to_numpy(float).copy()
    Y[S == 0] = 0.0
    if not np.all(np.isfinite(Y)):
        raise ValueError("respondent outcomes must be finite")
    if spec.weight_column is not None and spec.weight_column in df:
        w = df[spec.weight_column].to_numpy(float)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
    elif spec.weight_column is not None and spec.weight_column != "weight":
        raise KeyError(f"weight column {spec.weight_column!r} not in data")
    else:
        w = np.ones(n)
    col = spec.variance.cluster_column
    clusters = df[col].to_numpy() if col in df else np.arange(n)
    return _Design(X=X, Z=Z, S=S, Y=Y, w=w, clusters=clusters)


def _group_designs(rows: pd.DataFrame, spec: ModelSpec):
    df = _sample(rows, spec)
    if spec.group_column is None:
        return [None], [df]
    if spec.group_column not in df:
        raise KeyError(f"group column {spec.group_column!r} not in data")
    labels = sorted(pd.unique(df[spec.group_column]).tolist(), key=lambda v: (str(type(v)), v))
    return labels, [df.loc[df[spec.group_column] == g].reset_index(drop=True) for g in labels]


def _names(spec: ModelSpec):
    return [CONST] + list(spec.x_columns), [CONST] + list(spec.z_columns)


def _check_design(d: _Design, spec: ModelSpec, xn, zn, binary_outcome: bool):
    resp = d.S == 1
    if not resp.any() or resp.all():
        raise SeparationError("selection indicator does not vary")
    _check_rank(d.Z, zn, "selection")
    _check_rank(d.X[resp], xn, "outcome")
    if binary_outcome:
        yr = d.Y[resp]
        if not np.all((yr == 0) | (yr == 1)):
            raise ValueError("binary outcome must be 0/1 among respondents")
        if yr.min() == yr.max():
            raise SeparationError(f"respondent outcomes are all {int(yr[0])}")
        for j, name in enumerate(zn[1:], start=1):
            col = d.Z[:, j]
            if not np.all((col == 0) | (col == 1)):
                continue
            cell = resp & (col == 1)
            if cell.any() and d.Y[cell].min() == d.Y[cell].max():
                raise SeparationError(f"respondent outcomes do not vary where {name} = 1")
    else:
        yr = d.Y[resp]
        if np.average((yr - np.average(yr, weights=d.w[resp])) ** 2, weights=d.w[resp]) <= 0:
            raise ValueError("respondent outcomes have zero variance")


# ---------------------------------------------------------------------------
# building blocks


def fit_probit(X, y, w=None, max_iter=100, tol=1e-12):
    """Weighted probit by Newton-Raphson with step halving.

    Returns ``(coef, neg_hessian, loglik)``.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    w = np.ones(len(y)) if w is None else np.asarray(w, float)
    if y.min() == y.max():
        raise SeparationError("probit outcome does not vary")

    def ll_grad_hess(b):
        xb = X @ b
        lcdf, G = probit_loglik(b, X, y, scores=True)
        lam = (2 * y - 1) * inverse_mills((2 * y - 1) * xb)
        ll = float(w @ lcdf)
        g = w @ G
        d = lam * (lam + xb)
        H = (X * (w * d)[:, None]).T @ X
        return ll, g, H

    p0 = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
    b = np.zeros(X.shape[1])
    b[0] = special.ndtri(p0) if np.allclose(X[:, 0], 1.0) else 0.0
    ll, g, H = ll_grad_hess(b)
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            nb = b + t * step
            nll, ng, nH = ll_grad_hess(nb)
            if np.isfinite(nll) and nll >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                nb, nll, ng, nH = b, ll, g, H
                break
        done = abs(nll - ll) <= tol * max(1.0, abs(ll)) and np.max(np.abs(nb - b)) < 1e-10
        b, ll, g, H = nb, nll, ng, nH
        if done or np.max(np.abs(g)) < 1e-12 * max(1.0, w.sum()):
            break
    return b, H, ll


def _wls(X, y, w):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return coef


# ---------------------------------------------------------------------------
# full information ML


def _fiml_group(d: _Design, spec: ModelSpec, xn, zn, binary: bool, compute_vcov: bool):
    _check_design(d, spec, xn, zn, binary)
    resp = d.S == 1
    if not binary:
        wr = d.w[resp]
        d.loc = float(np.average(d.Y[resp], weights=wr))
        d.scale = float(np.sqrt(np.average((d.Y[resp] - d.loc) ** 2, weights=wr)))
        d.Y = np.where(resp, (d.Y - d.loc) / d.scale, 0.0)
    d.compress()

    rho_fixed = spec.rho_constraint
    free = rho_fixed is None
    loglik = heckprobit_loglik if binary else heckman_loglik
    Wtot = d.Wu.sum()

    a0, _, _ = fit_probit(d.Zu, d.Su, d.Wu)
    ru = d.Su == 1
    if binary:
        b0, _, _ = fit_probit(d.Xu[ru], d.Yu[ru], d.Wu[ru])
        tail = []
    else:
        b0 = _wls(d.Xu[ru], d.Yu[ru], d.Wu[ru])
        res = d.Yu[ru] - d.Xu[ru] @ b0
        tail = [0.5 * math.log(max(np.average(res ** 2, weights=d.Wu[ru]), 1e-12))]

    def obj(th):
        return float(d.Wu @ loglik(th, d.Xu, d.Zu, d.Su, d.Yu, rho_fixed)) / Wtot

    def grad(th):
        _, G = loglik(th, d.Xu, d.Zu, d.Su, d.Yu, rho_fixed, scores=True)
        return (d.Wu @ G) / Wtot

    starts = [0.0, 0.5, -0.5] if free else [None]
    best = None
    for t0 in starts:
        th0 = np.concatenate([b0, a0, [t0] if t0 is not None else [], tail])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = maximize(obj, th0, spec.optimizer, grad)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError):
            continue
        if best is None or res.fun > best.fun + 1e-12:
            best = res
    if best is None:
        raise RuntimeError("likelihood maximization failed from every start")
    if not best.converged:
        warnings.warn(f"selection model did not converge: {best.message}")

    theta = best.x
    k = len(theta)
    # map the standardized outcome back to data units
    J = np.eye(k)
    shift = np.zeros(k)
    if not binary:
        J[:len(xn), :len(xn)] *= d.scale
        shift[0] = d.loc
        shift[-1] = math.log(d.scale)
    theta_out = J @ theta + shift
    ll_total = best.fun * Wtot - (0.0 if binary else float(d.w[resp].sum()) * math.log(d.scale))

    bread = scores_rows = None
    if compute_vcov:
        H = numeric_hessian(grad, theta, spec.optimizer.finite_difference_step) * Wtot
        try:
            bread = np.linalg.inv(-H)
        except np.linalg.LinAlgError:
            bread = np.linalg.pinv(-H)
        _, Gu = loglik(theta, d.Xu, d.Zu, d.Su, d.Yu, rho_fixed, scores=True)
        scores_rows = Gu[d.inv] * d.w[:, None]
        bread = J @ bread @ J.T
        # scores w.r.t. data-unit parameters: chain rule through J^{-1}
        scores_rows = scores_rows @ np.linalg.inv(J)

    return dict(theta=theta_out, loglik=ll_total, converged=best.converged, iterations=best.iterations,
                bread=bread, scores=scores_rows, clusters=d.clusters, n=len(d.S))


def _param_names(xn, zn, kind, free, twostep=False):
    names = [f"outcome:{c}" for c in xn] + [f"selection:{c}" for c in zn]
    if twostep:
        return names + ["lambda"]
    if free:
        names.append("atanh_rho")
    if kind == "continuous":
        names.append("log_sigma")
    return names


def _assemble(method, spec, groups, parts, xn, zn, link, compute_vcov, rows, n_jobs, refit):
    kx, kz = len(xn), len(zn)
    binary = spec.outcome_kind == "binary"
    twostep = method == "twostep"
    base = _param_names(xn, zn, spec.outcome_kind, spec.free_rho, twostep)
    names = []
    for g in groups:
        names += base if g is None else [f"{n}[{spec.group_column}={g}]" for n in base]
    params = np.concatenate([p["theta"] for p in parts])
    beta = np.concatenate([p["theta"][:kx] for p in parts])
    alpha = np.concatenate([p["theta"][kx:kx + kz] for p in parts])
    rho = np.array([p["rho"] for p in parts])
    sigma = np.array([p["sigma"] for p in parts])
    k = len(params)
    n_rows = sum(p["n"] for p in parts)
    clusters = np.concatenate([np.asarray(p["clusters"], dtype=object) for p in parts])
    n_clusters = len(pd.unique(clusters))

    vcov = np.full((k, k), np.nan)
    if compute_vcov:
        if spec.variance.method == "cluster_bootstrap" or twostep:
            boot = cluster_bootstrap(lambda df: refit(df).params, _sample(rows, spec)
                                     if spec.sample_rule == "all_rows" else rows,
                                     spec.variance, n_jobs=n_jobs, compute_estimate=False)
            vcov = np.cov(boot.replicates, rowvar=False, ddof=1).reshape(k, k)
        else:
            bread = linalg.block_diag(*[p["bread"] for p in parts])
            offs = np.cumsum([0] + [len(p["theta"]) for p in parts])
            sc = np.zeros((n_rows, k))
            r0 = 0
            for i, p in enumerate(parts):
                sc[r0:r0 + p["n"], offs[i]:offs[i + 1]] = p["scores"]
                r0 += p["n"]
            vcov, _ = cluster_sandwich(bread, sc, clusters)

    return SelectionFit(
        method=method, outcome_kind=spec.outcome_kind, link=link, groups=list(groups),
        x_names=xn, z_names=zn, beta=beta, alpha=alpha, rho=rho, sigma=sigma,
        params=params, vcov=vcov, param_names=names,
        loglik=float(sum(p["loglik"] for p in parts)),
        converged=all(p["converged"] for p in parts),
        iterations=int(sum(p["iterations"] for p in parts)),
        n_rows=int(n_rows), n_clusters=int(n_clusters), spec=spec,
    )


def _fiml(rows, spec, binary, compute_vcov, n_jobs):
    groups, frames = _group_designs(rows, spec)
    xn, zn = _names(spec)
    kx, kz = len(xn), len(zn)
    parts = []
    for df in frames:
        d = _design(df, spec)
        p = _fiml_group(d, spec, xn, zn, binary,
                        compute_vcov and spec.variance.method == "analytic_sandwich")
        th = p["theta"]
        j = kx + kz
        if spec.free_rho:
            p["rho"] = math.tanh(th[j])
            j += 1
        else:
            p["rho"] = float(spec.rho_constraint)
        p["sigma"] = 1.0 if binary else math.exp(th[j])
        parts.append(p)

    def refit(df):
        return _fiml(df, spec, binary, False, None)

    return _assemble("fiml", spec, groups, parts, xn, zn, "probit" if binary else "identity",
                     compute_vcov, rows, n_jobs, refit)


def fit_heckprobit(rows: pd.DataFrame, spec: ModelSpec, compute_vcov: bool = True,
                   n_jobs: Optional[int] = None) -> SelectionFit:
    """Binary-outcome selection model by maximum likelihood.

    Starts from separate probits with rho = 0 and from rho = +-tanh(0.5), keeping
    the best optimum. Non-convergence is flagged in the result and warned.
    """
    if spec.outcome_kind != "binary":
        raise ValueError("fit_heckprobit needs outcome_kind='binary'")
    return _fiml(rows, spec, True, compute_vcov, n_jobs)


def fit_heckman_fiml(rows: pd.DataFrame, spec: ModelSpec, compute_vcov: bool = True,
                     n_jobs: Optional[int] = None) -> SelectionFit:
    """Continuous-outcome selection model by maximum likelihood."""
    if spec.outcome_kind != "continuous":
        raise ValueError("fit_heckman_fiml needs outcome_kind='continuous'")
    return _fiml(rows, spec, False, compute_vcov, n_jobs)


# ---------------------------------------------------------------------------
# two-step


def _twostep_group(d: _Design, spec: ModelSpec, xn, zn):
    resp = d.S == 1
    if not resp.any() or resp.all():
        raise SeparationError("selection indicator does not vary")
    _check_rank(d.Z, zn, "selection")
    a, _, _ = fit_probit(d.Z, d.S, d.w)
    za = d.Z[resp] @ a
    lam = inverse_mills(za)
    if spec.rho_constraint is not None and spec.rho_constraint != 0:
        raise ValueError("the two-step estimator supports only a free rho or rho fixed at 0")
    wr = d.w[resp]
    if spec.rho_constraint == 0:
        Xr = d.X[resp]
        _check_rank(Xr, xn, "outcome")
        coef = np.append(_wls(Xr, d.Y[resp], wr), 0.0)
    else:
        Xr = np.column_stack([d.X[resp], lam])
        _check_rank(Xr, list(xn) + ["lambda"], "outcome")
        coef = _wls(Xr, d.Y[resp], wr)
    b, theta_l = coef[:-1], coef[-1]
    e = d.Y[resp] - d.X[resp] @ b - theta_l * lam
    delta = lam * (lam + za)
    sig2 = np.average(e ** 2, weights=wr) + theta_l ** 2 * np.average(delta, weights=wr)
    sigma = math.sqrt(max(sig2, 0.0))
    rho = float(np.clip(theta_l / sigma, -1.0, 1.0)) if sigma > 0 else 0.0
    return dict(theta=np.concatenate([b, a, [theta_l]]), rho=rho, sigma=sigma, loglik=np.nan,
                converged=True, iterations=0, clusters=d.clusters, n=len(d.S))


def fit_heckman_twostep(rows: pd.DataFrame, spec: ModelSpec, compute_vcov: bool = True,
                        n_jobs: Optional[int] = None) -> SelectionFit:
    """Probit selection step, then weighted least squares of the outcome on
    ``[X, lambda]`` among respondents with ``lambda = phi(Za)/Phi(Za)``.

    Works for binary outcomes too, as a linear probability second stage, so the
    fitted link is the identity. Standard errors come from a cluster bootstrap
    that repeats both steps (``spec.variance`` supplies replicates and seed).
    ``rho``/``sigma`` are the implied values from the lambda coefficient.
    """
    groups, frames = _group_designs(rows, spec)
    xn, zn = _names(spec)
    parts = [_twostep_group(_design(df, spec), spec, xn, zn) for df in frames]

    def refit(df):
        return fit_heckman_twostep(df, spec, compute_vcov=False)

    return _assemble("twostep", spec, groups, parts, xn, zn, "identity", compute_vcov, rows, n_jobs, refit)


def fit_model(rows: pd.DataFrame, spec: ModelSpec, method: str = "fiml", compute_vcov: bool = True,
              n_jobs: Optional[int] = None) -> SelectionFit:
    if method == "twostep":
        return fit_heckman_twostep(rows, spec, compute_vcov, n_jobs)
    if method != "fiml":
        raise ValueError(f"unknown method {method!r}")
    if spec.outcome_kind == "binary":
        return fit_heckprobit(rows, spec, compute_vcov, n_jobs)
    return fit_heckman_fiml(rows, spec, compute_vcov, n_jobs)


# ---------------------------------------------------------------------------
# population functionals


def _population_rows(fit: SelectionFit, rows: pd.DataFrame, target: str, group=None) -> pd.DataFrame:
    if target not in ("corrected", "respondent_only"):
        raise ValueError(f"unknown target {target!r}")
    df = rows.loc[rows["R"] >= 1] if "R" in rows else rows
    if {"term_id", "subject_id", "t"} <= set(df.columns):
        df = final_request_rows(df)
    if target == "respondent_only":
        df = df.loc[df[fit.spec.selection_column] == 1]
    col = fit.spec.group_column
    if col is not None:
        g = fit.groups[fit.group_index(group)]
        df = df.loc[df[col].astype(str) == str(g)] if g is not None else df
    return df


def population_mean_gradient(fit: SelectionFit, rows: pd.DataFrame, target: str = "corrected",
                             group=None) -> tuple[float, np.ndarray]:
    """Average fitted index transform and its gradient w.r.t. ``fit.params``."""
    df = _population_rows(fit, rows, target, group)
    if df.empty:
        raise ValueError("no rows to average over")
    xcols = fit.x_names[1:]
    X = np.column_stack([np.ones(len(df))] + [df[c].to_numpy(float) for c in xcols])
    b = fit.group_beta(group)
    xb = X @ b
    grad = np.zeros(len(fit.params))
    sl = fit.beta_slice(group)
    if fit.link == "probit":
        est = float(special.ndtr(xb).mean())
        grad[sl] = (np.exp(_logpdf(xb))[:, None] * X).mean(axis=0)
    else:
        est = float(xb.mean())
        grad[sl] = X.mean(axis=0)
    return est, grad


def population_mean(fit: SelectionFit, rows: pd.DataFrame, target: str = "corrected",
                    group=None) -> tuple[float, float]:
    """Average of the fitted outcome transform over subject-terms, with delta SE.

    ``corrected`` averages over every subject-term; ``respondent_only`` over
    those who responded by their final request.
    """
    est, g = population_mean_gradient(fit, rows, target, group)
    var = float(g @ fit.vcov @ g)
    return est, math.sqrt(var) if var >= 0 else float("nan")


def population_gap(fit: SelectionFit, rows: pd.DataFrame, group_a, group_b,
                   target: str = "corrected") -> tuple[float, float]:
    """Difference of two groups' population means under the joint covariance."""
    ea, ga = population_mean_gradient(fit, rows, target, group_a)
    eb, gb = population_mean_gradient(fit, rows, target, group_b)
    g = ga - gb
    var = float(g @ fit.vcov @ g)
    return ea - eb, math.sqrt(var) if var >= 0 else float("nan")


def test_selection_bias(fit_corrected: SelectionFit, fit_uncorrected: SelectionFit, rows: pd.DataFrame,
                        variance: Optional[VarianceSpec] = None, group=None,
                        n_jobs: Optional[int] = None) -> float:
    """P-value for equal population means under the two fits.

    Both models are re-estimated on every cluster-bootstrap replicate and the
    standard error of the difference is the replicate standard deviation.
    """
    from scipy.stats import norm

    def diff(df):
        fc = fit_model(df, fit_corrected.spec, fit_corrected.method, compute_vcov=False)
        fu = fit_model(df, fit_uncorrected.spec, fit_uncorrected.method, compute_vcov=False)
        return [population_mean(fc, df, "corrected", group)[0] - population_mean(fu, df, "corrected", group)[0]]

    d0 = (population_mean(fit_corrected, rows, "corrected", group)[0]
          - population_mean(fit_uncorrected, rows, "corrected", group)[0])
    if d0 == 0.0:
        return 1.0
    variance = variance or fit_corrected.spec.variance
    if variance.method != "cluster_bootstrap":
        variance = VarianceSpec("cluster_bootstrap", variance.cluster_column,
                                variance.bootstrap_replicates, variance.base_seed)
    boot = cluster_bootstrap(diff, rows, variance, n_jobs=n_jobs, compute_estimate=False)
    se = float(boot.se[0])
    if se == 0.0:
        return 1.0 if d0 == 0 else 0.0
    return float(2 * norm.sf(abs(d0) / se))


test_selection_bias.__test__ = False  # not a pytest test despite the name
