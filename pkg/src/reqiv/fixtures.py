"""Bundled request schedules and synthetic contact logs that match published aggregates."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from functools import lru_cache
from importlib import resources
from typing import Optional

import numpy as np
import pandas as pd

from .panel import ContactRecord

__all__ = [
    "survey_timing",
    "term_schedule",
    "largest_remainder",
    "schedule_records",
    "GenderCounts",
    "TABLE1_COUNTS",
    "table1_records",
]

REQUEST_HOUR = 14


@lru_cache(maxsize=1)
def _timing_table() -> pd.DataFrame:
    with resources.files("reqiv").joinpath("data/survey_timing.csv").open("r") as fh:
        df = pd.read_csv(fh, dtype={"term_id": str}, float_precision="round_trip")
    df["timestamp"] = [
        datetime.fromisoformat(d).replace(hour=REQUEST_HOUR, tzinfo=timezone.utc) for d in df["date"]
    ]
    return df


def survey_timing() -> pd.DataFrame:
    """Request dates and cumulative response rates for the ten survey terms.

    Columns: term_id, request, date, cumulative_rate, timestamp (UTC, 14:00).
    """
    return _timing_table().copy()


def term_schedule(term_id: str) -> tuple[tuple, np.ndarray]:
    """(request timestamps, cumulative response rates) for one bundled term."""
    df = _timing_table()
    sub = df[df["term_id"] == term_id].sort_values("request")
    if sub.empty:
        raise KeyError(f"unknown term {term_id!r}; known: {sorted(df['term_id'].unique())}")
    return tuple(sub["timestamp"]), sub["cumulative_rate"].to_numpy(float)


def largest_remainder(total: int, shares) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``shares`` (Hamilton method).

    Ties in the remainders go to the earlier position.
    """
    shares = np.asarray(shares, dtype=float)
    if total < 0 or np.any(shares < 0):
        raise ValueError("total and shares must be non-negative")
    if shares.sum() == 0:
        if total:
            raise ValueError("cannot allocate a positive total over zero shares")
        return np.zeros(len(shares), dtype=np.int64)
    quota = total * shares / shares.sum()
    base = np.floor(quota).astype(np.int64)
    left = int(total - base.sum())
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:left]] += 1
    return base


def _response_instant(schedule, period: int) -> datetime:
    # one day after the request that opens the period; gaps are >= 3 days
    return schedule[period - 1] + timedelta(days=1)


def schedule_records(term_id: str, n_subjects: int = 100, n_strata: int = 1,
                     outcome: float = 1.0) -> list[ContactRecord]:
    """Contact log for one bundled term whose cumulative response rates are exact.

    The number responding in period ``k`` is the increment of
    ``round(rate_k * n_subjects)``. With ``n_subjects=100`` the rates are
    reproduced to the reported two decimals.
    """
    ts, rates = term_schedule(term_id)
    cum = np.rint(rates * n_subjects).astype(np.int64)
    cum = np.maximum.accumulate(cum)
    counts = np.diff(np.concatenate([[0], cum]))
    out = []
    i = 0
    for k, c in enumerate(counts, start=1):
        for _ in range(int(c)):
            out.append((i, k))
            i += 1
    while i < n_subjects:
        out.append((i, 0))
        i += 1
    width = len(str(n_subjects))
    recs = []
    for i, k in out:
        recs.append(ContactRecord(
            subject_id=f"{term_id}-{i:0{width}d}",
            term_id=term_id,
            stratum_id=f"s{i % n_strata}",
            request_timestamps=ts,
            response_timestamp=_response_instant(ts, k) if k else None,
            outcome=outcome if k else None,
        ))
    return recs


class GenderCounts(tuple):
    """(early, late, nonrespondent counts, early intention rate, late intention rate)."""

    __slots__ = ()

    def __new__(cls, early, late, nonresp, early_rate, late_rate):
        return super().__new__(cls, (early, late, nonresp, early_rate, late_rate))

    early = property(lambda s: s[0])
    late = property(lambda s: s[1])
    nonresp = property(lambda s: s[2])
    early_rate = property(lambda s: s[3])
    late_rate = property(lambda s: s[4])


TABLE1_COUNTS = {
    "men": GenderCounts(10154, 9147, 120730, 0.378, 0.366),
    "women": GenderCounts(12958, 10643, 126956, 0.169, 0.180),
}


def table1_records(counts: Optional[dict] = None, terms: Optional[list] = None,
                   late_timing: str = "schedule") -> list[ContactRecord]:
    """Deterministic contact log matching the early/late/nonrespondent table.

    Each gender's counts are split evenly over the bundled terms. With
    ``late_timing="schedule"`` every term keeps its full request schedule and
    late respondents are spread over requests 2..K in proportion to the
    increments of the term's cumulative response rate. With
    ``"second_request"`` every term is cut to its first two requests and all
    late respondents answer the second one. Intention ones are
    allocated by largest remainder so that the early and late rates match to
    the nearest subject. Covariate ``female`` is attached; the outcome is the
    0/1 intention indicator.
    """
    if late_timing not in ("schedule", "second_request"):
        raise ValueError("late_timing must be 'schedule' or 'second_request'")
    counts = counts or TABLE1_COUNTS
    timing = _timing_table()
    terms = terms or list(dict.fromkeys(timing["term_id"]))
    nterm = len(terms)
    recs: list[ContactRecord] = []
    for g, c in counts.items():
        female = 1.0 if g == "women" else 0.0
        early_t = largest_remainder(c.early, np.ones(nterm))
        late_t = largest_remainder(c.late, np.ones(nterm))
        non_t = largest_remainder(c.nonresp, np.ones(nterm))
        early_ones = largest_remainder(int(round(c.early_rate * c.early)), early_t)

        # late cells: (term index, request period)
        cells = []
        for j, term in enumerate(terms):
            ts, rates = term_schedule(term)
            if late_timing == "second_request":
                rates = rates[:2]
            inc = np.clip(np.diff(rates), 0.0, None)
            if inc.sum() == 0:
                inc = np.ones_like(inc)
            alloc = largest_remainder(int(late_t[j]), inc)
            cells.extend((j, k + 2, int(n)) for k, n in enumerate(alloc))
        late_ones = largest_remainder(int(round(c.late_rate * c.late)), [n for _, _, n in cells])

        for j, term in enumerate(terms):
            ts, _ = term_schedule(term)
            if late_timing == "second_request":
                ts = ts[:2]
            seq = 0

            def make(period, y):
                nonlocal seq
                sid = f"{g[0]}{term}-{seq:06d}"
                seq += 1
                return ContactRecord(
                    subject_id=sid, term_id=term, stratum_id="s0", request_timestamps=ts,
                    response_timestamp=_response_instant(ts, period) if period else None,
                    outcome=float(y) if period else None, covariates={"female": female},
                )

            for m in range(int(early_t[j])):
                recs.append(make(1, m < early_ones[j]))
            for (jj, period, n), ones in zip(cells, late_ones):
                if jj != j:
                    continue
                for m in range(n):
                    recs.append(make(period, m < ones))
            for _ in range(int(non_t[j])):
                recs.append(make(0, 0))
    return recs
