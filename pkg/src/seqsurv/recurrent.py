"""Classical recurrent-event models as risk-set transformations.

Each expansion turns the long-format record table into a counting-process
table with columns ``id, start, stop, event, stratum`` plus the chosen
covariates; :func:`fit_classical` then delegates to the shared partial-
likelihood solver with the model's risk-set conventions.  Events are
recurrences (status 1); other codes censor the interval.
"""

from __future__ import annotations

import warnings

import numpy as np
import pandas as pd

from .data import validate_records
from .survival import CoxFit, fit_cox

__all__ = [
    "CLASSICAL_KINDS",
    "expand_ag",
    "expand_pwp",
    "expand_wlw",
    "expand_cox_first",
    "expand_cox_interval",
    "fit_classical",
    "run_classical",
]

META_COLUMNS = ["id", "start", "stop", "event", "stratum"]

#: Table-4-style comparators: per-patient first-event Cox, naive per-interval
#: Cox, and the three recurrent-event models.
CLASSICAL_KINDS = ("cox_first", "cox_interval", "ag", "pwp", "wlw")


def _finish(rows: list[dict], covariate_names, dropped: int, kind: str) -> pd.DataFrame:
    if dropped:
        warnings.warn(f"{kind}: dropped {dropped} zero-length interval(s)", stacklevel=3)
    if not rows:
        raise ValueError(f"{kind}: expansion produced no usable rows")
    return pd.DataFrame(rows, columns=META_COLUMNS + list(covariate_names))


def expand_ag(records: pd.DataFrame, covariate_names) -> pd.DataFrame:
    """Common-baseline expansion: one (start, stop] row per at-risk interval."""
    validate_records(records)
    rows = []
    dropped = 0
    for rec in records.sort_values(["id", "enum"]).itertuples(index=False):
        if rec.stop == rec.start:
            dropped += 1
            continue
        row = {
            "id": rec.id,
            "start": float(rec.start),
            "stop": float(rec.stop),
            "event": int(rec.status == 1),
            "stratum": 0,
        }
        row.update({c: getattr(rec, c) for c in covariate_names})
        rows.append(row)
    return _finish(rows, covariate_names, dropped, "expand_ag")


def expand_pwp(records: pd.DataFrame, covariate_names, timescale: str = "total") -> pd.DataFrame:
    """Conditional expansion stratified by event order.

    ``total`` keeps calendar (start, stop] intervals; ``gap`` resets each
    interval to (0, stop - start].
    """
    if timescale not in ("total", "gap"):
        raise ValueError(f"expand_pwp: timescale must be 'total' or 'gap', got {timescale!r}")
    validate_records(records)
    rows = []
    dropped = 0
    for rec in records.sort_values(["id", "enum"]).itertuples(index=False):
        if rec.stop == rec.start:
            dropped += 1
            continue
        if timescale == "gap":
            start, stop = 0.0, float(rec.stop - rec.start)
        else:
            start, stop = float(rec.start), float(rec.stop)
        row = {
            "id": rec.id,
            "start": start,
            "stop": stop,
            "event": int(rec.status == 1),
            "stratum": int(rec.enum),
        }
        row.update({c: getattr(rec, c) for c in covariate_names})
        rows.append(row)
    return _finish(rows, covariate_names, dropped, "expand_pwp")


def expand_wlw(records: pd.DataFrame, covariate_names, k_max: int = 4) -> pd.DataFrame:
    """Marginal expansion: every subject appears in every event-order stratum.

    Stratum k uses the time from study entry to the k-th recurrence, or to
    the end of follow-up (censored) when fewer than k occurred.
    """
    if k_max < 1:
        raise ValueError(f"expand_wlw: k_max must be >= 1, got {k_max}")
    validate_records(records)
    rows = []
    dropped = 0
    for pid, group in records.sort_values(["id", "enum"]).groupby("id", sort=True):
        entry = float(group["start"].iloc[0])
        followup = float(group["stop"].iloc[-1])
        event_times = [float(s) for s, st in zip(group["stop"], group["status"]) if st == 1]
        baseline = group.iloc[0]
        for k in range(1, k_max + 1):
            if k <= len(event_times):
                stop, event = event_times[k - 1], 1
            else:
                stop, event = followup, 0
            if stop == entry:
                dropped += 1
                continue
            row = {"id": pid, "start": entry, "stop": stop, "event": event, "stratum": k}
            row.update({c: baseline[c] for c in covariate_names})
            rows.append(row)
    return _finish(rows, covariate_names, dropped, "expand_wlw")


def expand_cox_first(records: pd.DataFrame, covariate_names) -> pd.DataFrame:
    """One row per patient: entry to first recurrence or end of follow-up."""
    validate_records(records)
    rows = []
    dropped = 0
    for pid, group in records.sort_values(["id", "enum"]).groupby("id", sort=True):
        entry = float(group["start"].iloc[0])
        event_rows = group[group["status"] == 1]
        if len(event_rows):
            stop, event = float(event_rows["stop"].iloc[0]), 1
        else:
            stop, event = float(group["stop"].iloc[-1]), 0
        if stop == entry:
            dropped += 1
            continue
        baseline = group.iloc[0]
        row = {"id": pid, "start": entry, "stop": stop, "event": event, "stratum": 0}
        row.update({c: baseline[c] for c in covariate_names})
        rows.append(row)
    return _finish(rows, covariate_names, dropped, "expand_cox_first")


def expand_cox_interval(records: pd.DataFrame, covariate_names) -> pd.DataFrame:
    """Naive per-interval Cox table: entry times ignored, rows independent."""
    validate_records(records)
    rows = []
    dropped = 0
    for rec in records.sort_values(["id", "enum"]).itertuples(index=False):
        if rec.stop == rec.start or rec.stop == 0:
            dropped += 1
            continue
        row = {
            "id": rec.id,
            "start": 0.0,
            "stop": float(rec.stop),
            "event": int(rec.status == 1),
            "stratum": 0,
        }
        row.update({c: getattr(rec, c) for c in covariate_names})
        rows.append(row)
    return _finish(rows, covariate_names, dropped, "expand_cox_interval")


_EXPANDERS = {
    "ag": expand_ag,
    "pwp": expand_pwp,
    "wlw": expand_wlw,
    "cox_first": expand_cox_first,
    "cox_interval": expand_cox_interval,
}


def fit_classical(table: pd.DataFrame, kind: str, **cox_options) -> CoxFit:
    """Fit one classical model on an expanded risk-interval table.

    Strata and cluster-robust variance follow the model's definition:
    AG and WLW cluster on patient; PWP additionally stratifies by event
    order and drops strata with fewer than two events; the two plain Cox
    variants use independent rows.
    """
    if kind not in _EXPANDERS:
        raise ValueError(f"fit_classical: unknown kind {kind!r}; choose from {sorted(_EXPANDERS)}")
    covariates = [c for c in table.columns if c not in META_COLUMNS]
    if not covariates:
        raise ValueError("fit_classical: table has no covariate columns")

    work = table
    if kind == "pwp":
        counts = table.groupby("stratum")["event"].sum()
        bad = counts[counts < 2].index.tolist()
        if bad:
            warnings.warn(f"pwp: dropping strata with fewer than 2 events: {bad}", stacklevel=2)
            work = table[~table["stratum"].isin(bad)]
            if work.empty:
                raise ValueError("pwp: no strata with at least 2 events")

    strata = work["stratum"].to_numpy() if kind in ("pwp", "wlw") else None
    cluster = work["id"].to_numpy() if kind in ("ag", "pwp", "wlw") else None
    fit = fit_cox(
        work[covariates].to_numpy(dtype=np.float64),
        work["stop"].to_numpy(),
        work["event"].to_numpy(),
        start=work["start"].to_numpy(),
        strata=strata,
        cluster=cluster,
        model_kind=kind,
        **cox_options,
    )
    return fit


def run_classical(records: pd.DataFrame, kind: str, covariate_names, *, pwp_timescale="total", wlw_k=4, **cox_options) -> CoxFit:
    """Expand the record table for ``kind`` and fit it."""
    if kind == "pwp":
        table = expand_pwp(records, covariate_names, timescale=pwp_timescale)
    elif kind == "wlw":
        table = expand_wlw(records, covariate_names, k_max=wlw_k)
    else:
        table = _EXPANDERS[kind](records, covariate_names)
    return fit_classical(table, kind, **cox_options)
