"""
Synthetic data: a deterministic rebuild of a published two-request survey
from its reported group moments, and a Monte Carlo generator for the
request-count response model with switchable assumption violations.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta, timezone
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, special

from .msr import msr_value
from .panel import ContactRecord

__all__ = [
    "NctVariable",
    "NctMomentTable",
    "NctData",
    "default_nct_moments",
    "read_moments_csv",
    "write_moments_csv",
    "generate_nct",
    "nct_group_sizes",
    "MsrSpec",
    "GroupDGP",
    "Violations",
    "SimConfig",
    "SimResult",
    "simulate",
    "REFERENCE_TWO_DIMENSIONAL_ESTIMATES",
]

NCT_REQUEST_DATES = (
    datetime(2020, 4, 1, 9, tzinfo=timezone.utc),
    datetime(2020, 4, 8, 9, tzinfo=timezone.utc),
)


@dataclass(frozen=True)
class NctVariable:
    name: str
    kind: str
    always_taker_mean: float
    always_taker_se: float
    reminder_complier_mean: float
    reminder_complier_se: float
    ground_truth_mean: float

    def __post_init__(self):
        if self.kind not in ("continuous", "binary"):
            raise ValueError(f"{self.name}: kind must be continuous or binary")


@dataclass(frozen=True)
class NctMomentTable:
    variables: tuple
    always_taker_share: float = 0.38
    reminder_complier_share: float = 0.07
    nonrespondent_share: float = 0.55
    n_total: int = 3720

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        tot = self.always_taker_share + self.reminder_complier_share + self.nonrespondent_share
        if abs(tot - 1.0) > 1e-12:
            raise ValueError(f"group shares sum to {tot}, not 1")
        if self.n_total < 1:
            raise ValueError("n_total must be positive")

    def variable(self, name: str) -> NctVariable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def names(self) -> list:
        return [v.name for v in self.variables]


def default_nct_moments() -> NctMomentTable:
    """Reported group means, standard errors and register-data truth.

    Sample size is 10,000 invited x 93% reachable x 40% without incentives.
    """
    n_total = round(10_000 * 0.93 * 0.40)
    rows = [
        NctVariable("earnings_before", "continuous", 3746, 116, 3244, 256, 3095),
        NctVariable("earnings_after", "continuous", 3783, 107, 3257, 251, 2981),
        NctVariable("large_loss", "binary", 0.13, 0.01, 0.12, 0.02, 0.148),
        NctVariable("employed_before", "binary", 0.65, 0.01, 0.55, 0.03, 0.567),
        NctVariable("employed_after", "binary", 0.64, 0.01, 0.55, 0.03, 0.494),
        NctVariable("employment_loss", "binary", 0.03, 0.00, 0.03, 0.01, 0.091),
    ]
    return NctMomentTable(tuple(rows), n_total=n_total)


# Point estimates and identified-set midpoints of a two-dimensional
# response-aversion model on the same survey; used only in rendered reports.
REFERENCE_TWO_DIMENSIONAL_ESTIMATES = {
    "earnings_before": 3368,
    "earnings_after": 3232,
    "large_loss": 0.142,
    "employed_before": 0.588,
    "employed_after": 0.536,
    "employment_loss": 0.091,
}


_MOMENT_COLUMNS = ["variable", "kind", "always_taker_mean", "always_taker_se",
                   "reminder_complier_mean", "reminder_complier_se", "ground_truth_mean"]


def write_moments_csv(table: NctMomentTable, path) -> None:
    df = pd.DataFrame([[v.name, v.kind, v.always_taker_mean, v.always_taker_se, v.reminder_complier_mean,
                        v.reminder_complier_se, v.ground_truth_mean] for v in table.variables],
                      columns=_MOMENT_COLUMNS)
    with open(path, "w") as fh:
        fh.write(f"# shares={table.always_taker_share},{table.reminder_complier_share},"
                 f"{table.nonrespondent_share} n_total={table.n_total}\n")
        df.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")


def read_moments_csv(path) -> NctMomentTable:
    """Moment table from a delimited file.

    An optional first line ``# shares=a,b,c n_total=N`` overrides the default
    group shares and sample size.
    """
    shares, n_total = (0.38, 0.07, 0.55), 3720
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    if first.startswith("#"):
        skip = 1
        for tok in first[1:].split():
            key, _, val = tok.partition("=")
            if key == "shares":
                shares = tuple(float(x) for x in val.split(","))
            elif key == "n_total":
                n_total = int(val)
    df = pd.read_csv(path, skiprows=skip, float_precision="round_trip")
    missing = [c for c in _MOMENT_COLUMNS if c not in df]
    if missing:
        raise ValueError(f"{path}: line {skip + 1}: missing columns {missing}")
    vars_ = [NctVariable(r.variable, r.kind, float(r.always_taker_mean), float(r.always_taker_se),
                         float(r.reminder_complier_mean), float(r.reminder_complier_se),
                         float(r.ground_truth_mean)) for r in df.itertuples()]
    return NctMomentTable(tuple(vars_), *shares, n_total=n_total)


def nct_group_sizes(table: NctMomentTable) -> tuple[int, int, int]:
    """(always-takers, reminder compliers, nonrespondents).

    Boundaries are cumulative and use round-half-to-even.
    """
    N = table.n_total
    n_at = int(round(table.always_taker_share * N))
    n_resp = int(round((table.always_taker_share + table.reminder_complier_share) * N))
    return n_at, n_resp - n_at, N - n_resp


def _two_point(mean, se, n, rng):
    sd = se * math.sqrt(n)
    vals = np.full(n, float(mean))
    h = n // 2
    vals[:h] += sd
    vals[h:2 * h] -= sd
    return vals[rng.permutation(n)]


def _binary(mean, n, rng, rounding="floor"):
    x = mean * n
    k = int(math.floor(x + 1e-9)) if rounding == "floor" else int(round(x))
    k = min(max(k, 0), n)
    vals = np.zeros(n)
    vals[:k] = 1.0
    return vals[rng.permutation(n)]


@dataclass
class NctData:
    records: dict  # variable -> list[ContactRecord]
    sizes: tuple
    achieved: pd.DataFrame
    rounding_seed: int
    binary_rounding: str = "floor"

    @property
    def variables(self) -> list:
        return list(self.records)


def generate_nct(moments: Optional[NctMomentTable] = None, rounding_seed: int = 0,
                 binary_rounding: str = "floor") -> NctData:
    """Rebuild the two-request survey so each responding group hits its moments.

    Always-takers answer the first request, reminder compliers the second and
    the rest never answer. Continuous variables use a two-point spread of
    ``mean +- se * sqrt(n)`` (the leftover member of an odd group gets the
    mean); binary variables set ``floor(mean * n)`` ones, or the nearest
    count with ``binary_rounding="nearest"``. ``rounding_seed`` only shuffles
    which members carry which value.
    """
    if binary_rounding not in ("floor", "nearest"):
        raise ValueError("binary_rounding must be 'floor' or 'nearest'")
    moments = moments or default_nct_moments()
    n_at, n_rc, n_nr = nct_group_sizes(moments)
    N = moments.n_total
    width = len(str(N))
    records, achieved = {}, []
    for j, v in enumerate(moments.variables):
        rng = np.random.default_rng([int(rounding_seed), j])
        if v.kind == "continuous":
            at = _two_point(v.always_taker_mean, v.always_taker_se, n_at, rng)
            rc = _two_point(v.reminder_complier_mean, v.reminder_complier_se, n_rc, rng)
        else:
            at = _binary(v.always_taker_mean, n_at, rng, binary_rounding)
            rc = _binary(v.reminder_complier_mean, n_rc, rng, binary_rounding)
        for grp, vals, target, n in (("always_taker", at, v.always_taker_mean, n_at),
                                     ("reminder_complier", rc, v.reminder_complier_mean, n_rc)):
            got = float(vals.mean()) if n else float("nan")
            if n and abs(got - target) > 1.0 / n + 1e-12:
                warnings.warn(f"{v.name}/{grp}: achieved mean {got:.6g} vs reported {target}")
            se = float(vals.std(ddof=0) / math.sqrt(n)) if n else float("nan")
            achieved.append((v.name, grp, n, target, got, se))
        recs = []
        for i in range(N):
            sid = f"nct-{i:0{width}d}"
            if i < n_at:
                period, y = 1, at[i]
            elif i < n_at + n_rc:
                period, y = 2, rc[i - n_at]
            else:
                period, y = 0, None
            recs.append(ContactRecord(
                subject_id=sid, term_id="nct", stratum_id="s0", request_timestamps=NCT_REQUEST_DATES,
                response_timestamp=NCT_REQUEST_DATES[period - 1] + timedelta(days=1) if period else None,
                outcome=float(y) if period else None,
            ))
        records[v.name] = recs
    achieved_df = pd.DataFrame(achieved, columns=["variable", "group", "n", "reported_mean",
                                                  "achieved_mean", "achieved_se"])
    return NctData(records, (n_at, n_rc, n_nr), achieved_df, int(rounding_seed), binary_rounding)


# ---------------------------------------------------------------------------
# Monte Carlo generator


@dataclass(frozen=True)
class MsrSpec:
    """Shape of E[Y* | U = u].

    ``constant``: ``c``. ``linear``: ``a + b u``. ``probit``: latent index
    ``beta + rho v + sqrt(1-rho^2) e`` with ``v = Phi^{-1}(1-U)``; binary
    outcomes threshold it at 0, continuous ones scale it by ``sigma``.
    """

    kind: str = "probit"
    c: float = 0.0
    a: float = 0.0
    b: float = 1.0
    beta: float = 0.0
    rho: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "probit"):
            raise ValueError(f"unknown msr kind {self.kind!r}")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")


@dataclass(frozen=True)
class GroupDGP:
    """One population group with binary covariates and probit indices.

    Outcome index ``beta[0] + x @ beta[1:]``; selection index
    ``Phi^{-1}(P(r)) + shift + x @ gamma``.
    """

    label: str
    share: float
    covariate_means: tuple = ()
    beta: tuple = (0.0,)
    gamma: tuple = ()
    rho: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        k = len(self.covariate_means)
        if len(self.beta) != k + 1:
            raise ValueError(f"group {self.label}: beta needs {k + 1} entries")
        if self.gamma and len(self.gamma) != k:
            raise ValueError(f"group {self.label}: gamma needs {k} entries")
        if not 0 <= self.share <= 1:
            raise ValueError("group share must lie in [0, 1]")
        if any(not 0 <= p <= 1 for p in self.covariate_means):
            raise ValueError("covariate means are probabilities")


@dataclass(frozen=True)
class Violations:
    """Assumption breaks injected into the simulated population.

    ``time_drift``: response given in period t equals ``Y* + d t`` (index
    shift for binary). ``request_effect``: responses given in periods
    ``>= request_effect_from`` shift by the amount. ``defiers``: share of
    subjects whose willingness falls with more requests. ``nonuniform_requests``:
    share of above-median-Y* subjects who only get one request.
    """

    time_drift: float = 0.0
    request_effect: float = 0.0
    request_effect_from: int = 3
    defiers: float = 0.0
    nonuniform_requests: float = 0.0

    def active(self) -> list:
        return [k for k in ("time_drift", "request_effect", "defiers", "nonuniform_requests")
                if getattr(self, k) != 0]


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int
    propensities: tuple
    msr: MsrSpec = field(default_factory=MsrSpec)
    outcome_kind: str = "binary"
    noise_sd: float = 0.0
    seed: int = 0
    violations: Violations = field(default_factory=Violations)
    groups: Optional[tuple] = None

    def __post_init__(self):
        P = tuple(float(p) for p in self.propensities)
        object.__setattr__(self, "propensities", P)
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be positive")
        if not P or any(not 0 < p < 1 for p in P):
            raise ValueError("propensities must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(P, P[1:])):
            raise ValueError("propensities must be strictly increasing")
        if self.outcome_kind not in ("binary", "continuous"):
            raise ValueError("outcome_kind must be binary or continuous")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        v = self.violations
        if not 0 <= v.defiers <= 1 or not 0 <= v.nonuniform_requests <= 1:
            raise ValueError("violation shares must lie in [0, 1]")
        if v.defiers and len(P) < 2:
            raise ValueError("defiers need at least two requests")
        if v.request_effect and not 1 <= v.request_effect_from <= len(P):
            raise ValueError("request_effect_from must be a request level present in the design")
        if self.groups is not None:
            if self.msr.kind != "probit":
                raise ValueError("grouped designs use the probit msr kind")
            if abs(sum(g.share for g in self.groups) - 1) > 1e-12:
                raise ValueError("group shares must sum to 1")
            if v.defiers:
                raise ValueError("defiers are not supported together with covariate groups")
            ks = {len(g.covariate_means) for g in self.groups}
            if len(ks) != 1:
                raise ValueError("every group needs the same covariates")
        if self.outcome_kind == "binary" and self.msr.kind != "probit":
            m = [self.msr.c] if self.msr.kind == "constant" else [self.msr.a, self.msr.a + self.msr.b]
            if any(not 0 <= x <= 1 for x in m):
                raise ValueError("binary outcomes need m(u) inside [0, 1]")

    @property
    def n_requests(self) -> int:
        return len(self.propensities)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimResult:
    config: SimConfig
    U: np.ndarray
    y_star: np.ndarray
    n_requests: np.ndarray
    response_period: np.ndarray  # 0 = never
    y_observed: np.ndarray       # NaN for nonrespondents
    group: Optional[np.ndarray]
    X: Optional[np.ndarray]
    threshold: np.ndarray        # per-subject P_i(r), shape (n, T)
    truth: dict

    @property
    def n(self) -> int:
        return len(self.U)

    def covariate_frame(self) -> dict:
        out = {}
        if self.group is not None:
            out["group"] = self.group.astype(float)
        if self.X is not None:
            for j in range(self.X.shape[1]):
                out[f"x{j + 1}"] = self.X[:, j]
        return out

    def subject_ids(self) -> np.ndarray:
        width = len(str(self.n))
        return np.array([f"sim-{i:0{width}d}" for i in range(self.n)], dtype=object)

    def records(self) -> list:
        base = datetime(2024, 1, 1, 12, tzinfo=timezone.utc)
        T = self.config.n_requests
        sched = [tuple(base + timedelta(days=7 * k) for k in range(K)) for K in range(T + 1)]
        covs = self.covariate_frame()
        ids = self.subject_ids()
        out = []
        for i in range(self.n):
            p = int(self.response_period[i])
            ts = sched[int(self.n_requests[i])]
            out.append(ContactRecord(
                subject_id=ids[i], term_id="sim", stratum_id="s0", request_timestamps=ts,
                response_timestamp=ts[p - 1] + timedelta(days=1) if p else None,
                outcome=float(self.y_observed[i]) if p else None,
                covariates={k: float(v[i]) for k, v in covs.items()},
            ))
        return out

    def panel(self, include_t0: bool = True) -> pd.DataFrame:
        """Vectorized equivalent of ``build_panel(self.records())``."""
        K = self.n_requests.astype(np.int64)
        first = 0 if include_t0 else 1
        per = K + 1 - first
        idx = np.repeat(np.arange(self.n), per)
        t = np.arange(per.sum()) - np.repeat(np.cumsum(per) - per, per) + first
        rp = self.response_period[idx]
        S = (t == rp) & (rp > 0)
        S_hat = (rp > 0) & (t >= rp)
        yo = self.y_observed[idx]
        ids = self.subject_ids()[idx]
        df = pd.DataFrame({
            "subject_id": ids,
            "cluster_id": ids.copy(),
            "term_id": np.full(len(idx), "sim", dtype=object),
            "t": t.astype(np.int64),
            "R": t.astype(np.int64),
            "S": S.astype(np.int64),
            "Y": np.where(S, yo, np.nan),
            "S_hat": S_hat.astype(np.int64),
            "Y_hat": np.where(S_hat, yo, 0.0),
            "weight": (1.0 / K)[idx],
        })
        for k, v in self.covariate_frame().items():
            df[k] = v[idx]
        return df


def _draw_population(cfg: SimConfig, rng):
    n = cfg.n_subjects
    T = cfg.n_requests
    P = np.array(cfg.propensities)
    U = rng.uniform(size=n)
    eta = rng.standard_normal(n)
    noise = rng.standard_normal(n)
    v = special.ndtri(1.0 - U)  # selection latent: respond iff a_r + v >= 0
    group = X = None
    if cfg.groups is None:
        thr = np.broadcast_to(P, (n, T)).copy()
        m = cfg.msr
        if m.kind == "probit":
            index = m.beta + m.rho * v + math.sqrt(1 - m.rho ** 2) * eta
            if cfg.outcome_kind == "binary":
                y = (index >= 0).astype(float)
            else:
                y = m.sigma * index + cfg.noise_sd * noise
            latent = index
        else:
            mean = m.c if m.kind == "constant" else m.a + m.b * U
            mean = np.broadcast_to(mean, (n,)).astype(float)
            if cfg.outcome_kind == "binary":
                y = (rng.uniform(size=n) < mean).astype(float)
            else:
                y = mean + cfg.noise_sd * noise
            latent = None
    else:
        shares = np.array([g.share for g in cfg.groups])
        group = rng.choice(len(cfg.groups), size=n, p=shares)
        k = len(cfg.groups[0].covariate_means)
        X = np.zeros((n, k))
        unif = rng.uniform(size=(n, k))
        thr = np.empty((n, T))
        index = np.empty(n)
        for gi, g in enumerate(cfg.groups):
            mask = group == gi
            X[mask] = (unif[mask] < np.array(g.covariate_means)).astype(float)
            xs = X[mask] @ np.array(g.gamma) if g.gamma else 0.0
            sel = special.ndtri(P)[None, :] + g.shift + np.asarray(xs).reshape(-1, 1)
            thr[mask] = special.ndtr(sel)
            xb = g.beta[0] + X[mask] @ np.array(g.beta[1:])
            index[mask] = xb + g.rho * v[mask] + math.sqrt(1 - g.rho ** 2) * eta[mask]
        if cfg.outcome_kind == "binary":
            y = (index >= 0).astype(float)
        else:
            y = cfg.msr.sigma * index + cfg.noise_sd * noise
        latent = index
    return U, v, y, latent, thr, group, X


def _shifted(cfg, y, latent, shift):
    """Outcome after adding ``shift`` to the response (on the index for binary)."""
    if cfg.outcome_kind == "binary":
        if latent is None:
            raise ValueError("binary drift and request effects need the probit msr kind")
        return (latent + shift >= 0).astype(float)
    return y + shift


def simulate(config: SimConfig) -> SimResult:
    """Draw a population and realize one survey round per subject.

    Subject ``i`` answers at the first period ``t`` with ``U_i <= P_i(t)``.
    Requests go to everyone every period unless ``nonuniform_requests`` is on.
    ``truth`` holds the population mean of ``Y*``, complier means per request
    pair from quadrature (population-level) and from averaging the simulated
    ``Y*`` (sample-level), and the group propensities.
    """
    cfg = config
    rng = np.random.default_rng(int(cfg.seed))
    n, T = cfg.n_subjects, cfg.n_requests
    U, v, y_star, latent, thr, group, X = _draw_population(cfg, rng)
    viol = cfg.violations

    K = np.full(n, T, dtype=np.int64)
    if viol.nonuniform_requests:
        hi = y_star > np.median(y_star)
        if cfg.outcome_kind == "binary":
            hi = y_star > 0.5
        K[hi & (rng.uniform(size=n) < viol.nonuniform_requests)] = 1
    else:
        rng.uniform(size=n)  # keep the stream aligned across toggles

    eff_thr = thr.copy()
    if viol.defiers:
        defier = rng.uniform(size=n) < viol.defiers
        eff_thr[defier] = eff_thr[defier][:, ::-1]
    else:
        rng.uniform(size=n)
        defier = np.zeros(n, dtype=bool)

    # willingness in each period, ignoring requests never sent
    will = U[:, None] <= eff_thr
    will &= np.arange(1, T + 1)[None, :] <= K[:, None]
    any_resp = will.any(axis=1)
    period = np.where(any_resp, will.argmax(axis=1) + 1, 0)

    shift = np.zeros(n)
    if viol.time_drift:
        shift += viol.time_drift * period
    if viol.request_effect:
        shift += viol.request_effect * (period >= viol.request_effect_from)
    y_obs = _shifted(cfg, y_star, latent, shift) if np.any(shift) else y_star.copy()
    y_obs = np.where(period > 0, y_obs, np.nan)

    truth = _ground_truth(cfg, U, y_star, thr, group, X)
    return SimResult(cfg, U, y_star, K, period.astype(np.int64), y_obs, group, X, thr, truth)


def _cells(cfg):
    """(probability, group index, x vector) over all covariate cells."""
    if cfg.groups is None:
        yield 1.0, None, None
        return
    for gi, g in enumerate(cfg.groups):
        k = len(g.covariate_means)
        for bits in itertools.product((0.0, 1.0), repeat=k):
            x = np.array(bits)
            p = g.share * float(np.prod([pm if b else 1 - pm for pm, b in zip(g.covariate_means, bits)]))
            if p > 0:
                yield p, gi, x


def _cell_msr(cfg, gi, x):
    """(m(u) callable, selection thresholds P(1..T)) for one covariate cell."""
    P = np.array(cfg.propensities)
    if gi is None:
        m = cfg.msr
        if m.kind == "constant":
            f = lambda u: m.c
        elif m.kind == "linear":
            f = lambda u: m.a + m.b * u
        elif cfg.outcome_kind == "binary":
            f = lambda u: float(msr_value(m.beta, m.rho, u))
        else:
            f = lambda u: m.sigma * (m.beta + m.rho * float(special.ndtri(1 - u)))
        return f, P
    g = cfg.groups[gi]
    xb = g.beta[0] + float(x @ np.array(g.beta[1:]))
    xs = float(x @ np.array(g.gamma)) if g.gamma else 0.0
    thr = special.ndtr(special.ndtri(P) + g.shift + xs)
    if cfg.outcome_kind == "binary":
        f = lambda u: float(msr_value(xb, g.rho, u))
    else:
        f = lambda u: cfg.msr.sigma * (xb + g.rho * float(special.ndtri(1 - u)))
    return f, thr


def _quad(f, lo, hi):
    if hi <= lo:
        return 0.0
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def _ground_truth(cfg, U, y_star, thr, group, X) -> dict:
    T = cfg.n_requests
    bounds = np.concatenate([np.zeros((len(U), 1)), thr], axis=1)
    pairs = [(r, rp) for r in range(1, T + 1) for rp in range(0, r)]

    quad_num = {p: 0.0 for p in pairs}
    quad_den = {p: 0.0 for p in pairs}
    pop_mean = 0.0
    prop = np.zeros(T + 1)
    for w, gi, x in _cells(cfg):
        f, P = _cell_msr(cfg, gi, x)
        Pe = np.concatenate([[0.0], P])
        pop_mean += w * _quad(f, 0.0, 1.0)
        prop += w * Pe
        for r, rp in pairs:
            quad_num[(r, rp)] += w * _quad(f, Pe[rp], Pe[r])
            quad_den[(r, rp)] += w * (Pe[r] - Pe[rp])

    sample = {}
    for r, rp in pairs:
        mask = (U > bounds[:, rp]) & (U <= bounds[:, r])
        sample[(r, rp)] = float(y_star[mask].mean()) if mask.any() else float("nan")

    return {
        "population_mean": pop_mean,
        "sample_mean": float(y_star.mean()),
        "propensities": prop,
        "complier_means": {p: quad_num[p] / quad_den[p] for p in pairs},
        "complier_means_sample": sample,
        "complier_shares": {p: quad_den[p] for p in pairs},
    }
