"""
Request-response panels built from contact logs.

A contact log holds, per subject-term, the *intended* request schedule, the
response instant (if any) and the reported outcome. ``build_panel`` expands it
into one row per received request count ``t`` with

* ``R``      accumulated intended requests (equal to ``t``),
* ``S``      1 in the period containing the response,
* ``S_hat``  retained response choice (cumulative sum of ``S``),
* ``Y_hat``  retained response (outcome carried forward, 0 before response),
* ``weight`` one over the number of intended requests of the subject-term.

Period ``t >= 1`` covers ``[request_t, request_{t+1})``; the last period is
open ended. A response stamped exactly at a request belongs to the period
that request opens.
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "ContactRecord",
    "PanelBuildConfig",
    "PanelDiagnostics",
    "Violation",
    "DataFormatError",
    "PANEL_COLUMNS",
    "impute_opt_out_strata",
    "build_panel",
    "validate_panel",
    "restrict_requests",
    "request_gaps",
    "classify_response_timing",
    "final_request_rows",
    "add_request_indicators",
    "parse_instant",
    "format_instant",
    "read_contacts_csv",
    "write_contacts_csv",
    "read_panel_csv",
    "write_panel_csv",
]

PANEL_COLUMNS = ["subject_id", "cluster_id", "term_id", "t", "R", "S", "Y", "S_hat", "Y_hat", "weight"]


class DataFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


def parse_instant(text: str) -> datetime:
    """Parse an RFC-3339 instant. Naive values are taken as UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def format_instant(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ") if dt.microsecond == 0 \
        else dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class ContactRecord:
    """Raw request/response history of one subject in one term."""

    subject_id: str
    term_id: str
    request_timestamps: tuple = ()
    cluster_id: Optional[str] = None
    stratum_id: Optional[str] = None
    opt_out: bool = False
    response_timestamp: Optional[datetime] = None
    outcome: Optional[float] = None
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        ts = tuple(self.request_timestamps)
        object.__setattr__(self, "request_timestamps", ts)
        if self.cluster_id is None:
            object.__setattr__(self, "cluster_id", self.subject_id)
        for a, b in zip(ts, ts[1:]):
            if not b > a:
                raise ValueError(f"subject {self.subject_id}: request timestamps must be strictly increasing")
        if (self.outcome is None) != (self.response_timestamp is None):
            raise ValueError(f"subject {self.subject_id}: outcome must be present iff a response is")
        if self.opt_out and self.response_timestamp is not None:
            raise ValueError(f"subject {self.subject_id}: opt-outs cannot respond")
        # before imputation an opt-out has neither schedule nor stratum
        if self.opt_out and not ts and self.stratum_id is not None:
            raise ValueError(f"subject {self.subject_id}: opt-out has a stratum but no schedule")

    @property
    def n_requests(self) -> int:
        return len(self.request_timestamps)


@dataclass(frozen=True)
class PanelBuildConfig:
    imputation_seed: int = 0
    min_request_gap: timedelta = timedelta(days=3)
    include_t0: bool = True

    def __post_init__(self):
        if self.min_request_gap < timedelta(0):
            raise ValueError("min_request_gap must be non-negative")


# ---------------------------------------------------------------------------
# construction


def impute_opt_out_strata(records: Iterable[ContactRecord], seed: int) -> list[ContactRecord]:
    """Give every opt-out a stratum drawn uniformly from its term's strata.

    The opt-out inherits that stratum's full intended schedule, taken from the
    longest request list observed in the stratum. Draws are made term by term
    in sorted order with opt-outs sorted by subject, so the result depends only
    on the record set and ``seed``.
    """
    records = list(records)
    if not any(r.opt_out and not r.request_timestamps for r in records):
        return records

    schedules: dict[str, dict[str, tuple]] = {}
    for r in sorted(records, key=lambda r: (r.term_id, r.subject_id)):
        if r.stratum_id is None or not r.request_timestamps:
            continue
        strata = schedules.setdefault(r.term_id, {})
        cur = strata.get(r.stratum_id)
        if cur is None or len(r.request_timestamps) > len(cur):
            strata[r.stratum_id] = r.request_timestamps

    rng = np.random.default_rng(int(seed))
    assigned: dict[tuple[str, str], ContactRecord] = {}
    pending = sorted(
        (r for r in records if r.opt_out and not r.request_timestamps),
        key=lambda r: (r.term_id, r.subject_id),
    )
    for r in pending:
        strata = schedules.get(r.term_id)
        if not strata:
            raise ValueError(f"term {r.term_id}: opt-outs present but no stratum has request timestamps")
        names = sorted(strata)
        pick = names[int(rng.integers(len(names)))]
        assigned[(r.term_id, r.subject_id)] = replace(r, stratum_id=pick, request_timestamps=strata[pick])
    return [assigned.get((r.term_id, r.subject_id), r) for r in records]


def build_panel(records: Iterable[ContactRecord], config: Optional[PanelBuildConfig] = None) -> pd.DataFrame:
    """Expand contact records into the request-indexed panel.

    Rows are ordered by ``(term_id, subject_id, t)`` whatever the input order.
    Covariates are replicated on every row of their subject-term.

    Raises
    ------
    ValueError
        On a response before the first request, a duplicated subject-term,
        or a record without any intended request (run
        ``impute_opt_out_strata`` first).
    """
    config = config or PanelBuildConfig()
    records = sorted(records, key=lambda r: (str(r.term_id), str(r.subject_id)))
    n = len(records)
    K = np.empty(n, dtype=np.int64)
    resp_period = np.zeros(n, dtype=np.int64)  # 0 = never responded
    outcome = np.full(n, np.nan)
    cov_names: list[str] = []
    seen_cov: set[str] = set()
    prev = None
    for i, r in enumerate(records):
        key = (str(r.term_id), str(r.subject_id))
        if key == prev:
            raise ValueError(f"duplicate subject-term: subject {r.subject_id} in term {r.term_id}")
        prev = key
        ts = r.request_timestamps
        if not ts:
            raise ValueError(f"subject {r.subject_id} (term {r.term_id}) has no intended requests")
        K[i] = len(ts)
        if r.response_timestamp is not None:
            if r.response_timestamp < ts[0]:
                raise ValueError(
                    f"subject {r.subject_id} (term {r.term_id}) responded before the first request"
                )
            resp_period[i] = bisect_right(ts, r.response_timestamp)
            outcome[i] = float(r.outcome)
        for c in r.covariates:
            if c not in seen_cov:
                seen_cov.add(c)
                cov_names.append(c)

    first_t = 0 if config.include_t0 else 1
    per = K + 1 - first_t
    idx = np.repeat(np.arange(n), per)
    t = np.arange(per.sum()) - np.repeat(np.cumsum(per) - per, per) + first_t
    S = (t == resp_period[idx]) & (resp_period[idx] > 0)
    S_hat = (resp_period[idx] > 0) & (t >= resp_period[idx])
    Y = np.where(S, outcome[idx], np.nan)
    Y_hat = np.where(S_hat, outcome[idx], 0.0)

    df = pd.DataFrame({
        "subject_id": np.array([str(r.subject_id) for r in records], dtype=object)[idx],
        "cluster_id": np.array([str(r.cluster_id) for r in records], dtype=object)[idx],
        "term_id": np.array([str(r.term_id) for r in records], dtype=object)[idx],
        "t": t.astype(np.int64),
        "R": t.astype(np.int64),
        "S": S.astype(np.int64),
        "Y": Y,
        "S_hat": S_hat.astype(np.int64),
        "Y_hat": Y_hat,
        "weight": (1.0 / K)[idx],
    })
    for c in cov_names:
        vals = np.array([float(r.covariates.get(c, np.nan)) for r in records])
        df[c] = vals[idx]
    return df


def restrict_requests(rows: pd.DataFrame, max_r: int) -> pd.DataFrame:
    """Drop rows with more than ``max_r`` accumulated requests; weights are kept."""
    if max_r < 1:
        raise ValueError("max_r must be >= 1")
    return rows.loc[rows["R"] <= max_r].reset_index(drop=True)


def final_request_rows(rows: pd.DataFrame) -> pd.DataFrame:
    """The last observed period of each subject-term."""
    last = rows.groupby(["term_id", "subject_id"], sort=False)["t"].transform("max")
    return rows.loc[rows["t"] == last].reset_index(drop=True)


def classify_response_timing(rows: pd.DataFrame) -> pd.Series:
    """Label each subject-term early (responded in period 1), late, or nonrespondent.

    Pass the unrestricted panel: once rows beyond some ``R`` are dropped, late
    responses past that horizon are no longer visible.
    """
    g = rows.groupby(["term_id", "subject_id"], sort=True)
    resp_t = rows.loc[rows["S"] == 1].set_index(["term_id", "subject_id"])["t"]
    keys = g.size().index
    resp = resp_t.reindex(keys)
    lab = np.where(resp.isna(), "nonrespondent", np.where(resp == 1, "early", "late"))
    return pd.Series(lab, index=keys, name="timing")


def add_request_indicators(rows: pd.DataFrame, levels: Sequence[int], prefix: str = "R_eq_") -> pd.DataFrame:
    """Append 0/1 columns ``R_eq_<r>`` for the requested levels."""
    out = rows.copy()
    for r in levels:
        out[f"{prefix}{int(r)}"] = (out["R"] == int(r)).astype(float)
    return out


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class Violation:
    tag: str
    term_id: str
    subject_id: str
    t: Optional[int]
    message: str


@dataclass
class PanelDiagnostics:
    violations: list
    response_rates: pd.DataFrame
    request_gaps: Optional[pd.DataFrame] = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def tags(self) -> set:
        return {v.tag for v in self.violations}


def request_gaps(records: Iterable[ContactRecord], min_request_gap: timedelta = timedelta(days=3)) -> pd.DataFrame:
    """Distinct (term, stratum) schedules with the gap before each request."""
    seen = set()
    out = []
    for r in records:
        key = (r.term_id, r.stratum_id, r.request_timestamps)
        if key in seen or len(r.request_timestamps) < 2:
            continue
        seen.add(key)
        for k in range(1, len(r.request_timestamps)):
            gap = r.request_timestamps[k] - r.request_timestamps[k - 1]
            out.append((r.term_id, r.stratum_id, k + 1, gap, gap >= min_request_gap))
    return pd.DataFrame(out, columns=["term_id", "stratum_id", "request", "gap", "adequate"])


def validate_panel(rows: pd.DataFrame, records: Optional[Iterable[ContactRecord]] = None,
                   min_request_gap: timedelta = timedelta(days=3)) -> PanelDiagnostics:
    """Check the checkable restrictions on a panel; never raises on violations.

    Tags: ``monotonicity-3c/requests`` (R decreasing in t),
    ``monotonicity-3d/origin`` (t=0 row with R or S_hat nonzero),
    ``response-once`` (more than one S=1), ``monotonicity-3c/retention``
    (S_hat decreasing or not the running sum of S), ``retention/outcome``
    (Y_hat not the carried-forward response), ``relevance`` (pooled
    E[S_hat | R] decreasing in R within a term) and ``request-gap`` (requests
    closer than ``min_request_gap``, needs ``records``).
    """
    v: list[Violation] = []
    df = rows.sort_values(["term_id", "subject_id", "t"], kind="stable").reset_index(drop=True)
    key = [df["term_id"], df["subject_id"]]
    grp = df.groupby(["term_id", "subject_id"], sort=False)
    same = (df["term_id"].shift() == df["term_id"]) & (df["subject_id"].shift() == df["subject_id"])

    def add(mask, tag, msg):
        for _, row in df.loc[mask, ["term_id", "subject_id", "t"]].iterrows():
            v.append(Violation(tag, str(row.term_id), str(row.subject_id), int(row.t), msg))

    add(same & (df["R"] < df["R"].shift()), "monotonicity-3c/requests", "accumulated requests decrease")
    add((df["t"] == 0) & ((df["R"] != 0) | (df["S_hat"] != 0)), "monotonicity-3d/origin",
        "period 0 must have R=0 and S_hat=0")
    n_resp = grp["S"].transform("sum")
    first = ~same
    add(first & (n_resp > 1), "response-once", "more than one response period")
    cum_s = grp["S"].cumsum()
    add((same & (df["S_hat"] < df["S_hat"].shift())) | (df["S_hat"] != cum_s.clip(upper=1)),
        "monotonicity-3c/retention", "retained response choice is not the running sum of S")
    yresp = df["Y"].where(df["S"] == 1).groupby([df["term_id"], df["subject_id"]]).ffill()
    expect = np.where(df["S_hat"] == 1, yresp.fillna(np.nan), 0.0)
    bad_y = ~np.isclose(df["Y_hat"].to_numpy(float), expect, rtol=0, atol=0, equal_nan=True)
    add(bad_y, "retention/outcome", "retained response is not the carried-forward outcome")

    w = df["weight"] if "weight" in df else pd.Series(1.0, index=df.index)
    rates = (
        df.assign(_w=w, _ws=w * df["S_hat"])
        .groupby(["term_id", "R"], sort=True)
        .agg(n=("S_hat", "size"), _w=("_w", "sum"), _ws=("_ws", "sum"))
        .reset_index()
    )
    rates["rate"] = rates["_ws"] / rates["_w"]
    rates = rates.drop(columns=["_w", "_ws"])
    for term, sub in rates.groupby("term_id", sort=True):
        sub = sub[sub["R"] >= 1]
        drops = sub["rate"].diff() < 0
        for _, row in sub.loc[drops].iterrows():
            v.append(Violation("relevance", str(term), "*", int(row.R),
                               "cumulative response rate decreases in R"))

    gaps = None
    if records is not None:
        gaps = request_gaps(records, min_request_gap)
        for _, row in gaps.loc[~gaps["adequate"]].iterrows():
            v.append(Violation("request-gap", str(row.term_id), "*", int(row.request),
                               f"only {row.gap} since the previous request"))
    return PanelDiagnostics(violations=v, response_rates=rates, request_gaps=gaps)


# ---------------------------------------------------------------------------
# delimited files

_CONTACT_FIXED = ["subject_id", "cluster_id", "term_id", "stratum_id", "opt_out"]


def _fmt_float(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_contacts_csv(records: Iterable[ContactRecord], path) -> None:
    records = list(records)
    kmax = max((r.n_requests for r in records), default=0)
    covs: list[str] = []
    for r in records:
        for c in r.covariates:
            if c not in covs:
                covs.append(c)
    header = _CONTACT_FIXED + [f"request_ts_{k}" for k in range(1, kmax + 1)] + ["response_ts", "outcome"] + covs
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            ts = [format_instant(x) for x in r.request_timestamps]
            ts += [""] * (kmax - len(ts))
            w.writerow(
                [r.subject_id, r.cluster_id, r.term_id, r.stratum_id or "", "1" if r.opt_out else "0"]
                + ts
                + [format_instant(r.response_timestamp) if r.response_timestamp else "", _fmt_float(r.outcome)]
                + [_fmt_float(r.covariates.get(c)) for c in covs]
            )


def read_contacts_csv(path) -> list[ContactRecord]:
    """Read a contact log; errors raise ``DataFormatError`` with the line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: line 1: empty file") from None
        missing = [c for c in _CONTACT_FIXED + ["response_ts", "outcome"] if c not in header]
        if missing:
            raise DataFormatError(f"{path}: line 1: missing columns {missing}")
        ts_cols = [i for i, c in enumerate(header) if c.startswith("request_ts_")]
        pos = {c: i for i, c in enumerate(header)}
        last_fixed = max(pos["response_ts"], pos["outcome"])
        cov_cols = [(i, c) for i, c in enumerate(header) if i > last_fixed]
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ts = tuple(parse_instant(row[i]) for i in ts_cols if row[i].strip())
                resp = row[pos["response_ts"]].strip()
                outc = row[pos["outcome"]].strip()
                opt = row[pos["opt_out"]].strip().lower()
                if opt not in ("0", "1", "true", "false", ""):
                    raise ValueError(f"opt_out must be 0/1, got {opt!r}")
                covs = {c: float(row[i]) if row[i].strip() else float("nan") for i, c in cov_cols}
                out.append(ContactRecord(
                    subject_id=row[pos["subject_id"]],
                    cluster_id=row[pos["cluster_id"]] or None,
                    term_id=row[pos["term_id"]],
                    stratum_id=row[pos["stratum_id"]] or None,
                    opt_out=opt in ("1", "true"),
                    request_timestamps=ts,
                    response_timestamp=parse_instant(resp) if resp else None,
                    outcome=float(outc) if outc else None,
                    covariates=covs,
                ))
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    return out


def write_panel_csv(rows: pd.DataFrame, path) -> None:
    rows.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_panel_csv(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"subject_id": str, "cluster_id": str, "term_id": str},
                         float_precision="round_trip", keep_default_na=True)
    except (pd.errors.ParserError, ValueError) as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    missing = [c for c in PANEL_COLUMNS if c not in df.columns]
    if missing:
        raise DataFormatError(f"{path}: line 1: missing columns {missing}")
    for c in ("t", "R", "S", "S_hat"):
        df[c] = df[c].astype(np.int64)
    for c in ("subject_id", "cluster_id", "term_id"):
        df[c] = df[c].astype(object)
    return df
