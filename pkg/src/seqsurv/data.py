"""Recurrent-event record ingestion, preprocessing, and sequence assembly.

The canonical input is comma-delimited text with a header row and the
columns ``id,treatment,number,size,recur,start,stop,status,rtumor,rsize,
enum`` (case-insensitive).  A literal dot marks a missing ``rtumor`` or
``rsize`` value.  Status codes: 0 censored, 1 recurrence, 2 death from the
disease, 3 death from another cause.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

COLUMNS = ["id", "treatment", "number", "size", "recur", "start", "stop", "status", "rtumor", "rsize", "enum"]

#: The ten numeric feature columns used for sequence tensors, fixed order.
FEATURE_COLUMNS = COLUMNS[1:]

INT_COLUMNS = ["id", "treatment", "number", "recur", "status", "enum"]
FLOAT_COLUMNS = ["size", "start", "stop", "rtumor", "rsize"]

TREATMENT_CODES = {"placebo": 1, "thiotepa": 2, "pyridoxine": 3, "vitamin b6": 3, "vitaminb6": 3}
TREATMENT_LABELS = {1: "placebo", 2: "thiotepa", 3: "pyridoxine"}

MISSING_MARKERS = {".", "", "na", "nan"}

VALID_STATUS = {0, 1, 2, 3}

#: Status codes counted as an event by default: recurrence and death from
#: the disease.  Codes 0 and 3 are censored.
DEFAULT_EVENT_CODES = (1, 2)


class RecordError(ValueError):
    """Raised when an input table violates the record schema."""


def _parse_treatment(raw: str, line: int):
    text = raw.strip().lower()
    if text in TREATMENT_CODES:
        return TREATMENT_CODES[text]
    try:
        return int(float(text))
    except ValueError:
        raise RecordError(f"row {line}: unknown treatment label {raw!r}") from None


def _parse_number(raw: str, column: str, line: int, allow_missing: bool) -> float:
    text = raw.strip()
    if text.lower() in MISSING_MARKERS:
        if allow_missing:
            return np.nan
        raise RecordError(f"row {line}: missing value in column {column!r}")
    try:
        return float(text)
    except ValueError:
        raise RecordError(f"row {line}: cannot parse {column!r} value {raw!r}") from None


def load_records(path) -> pd.DataFrame:
    """Load and validate a recurrent-event table from delimited text.

    Treatment labels are encoded placebo=1, thiotepa=2, pyridoxine=3
    (pre-encoded integers pass through).  Missing ``rtumor``/``rsize``
    become 0; a warning is issued when that happens on a recurrence row,
    where a measurement would be expected.  Rows come back sorted by
    (id, enum).
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    if raw.empty:
        raise RecordError(f"{path}: no data rows")
    raw.columns = [str(c).strip().lower() for c in raw.columns]
    # drop auto-generated index columns such as 'rownames' or unnamed ones
    drop = [c for c in raw.columns if c in ("", "rownames", "index") or c.startswith("unnamed")]
    raw = raw.drop(columns=drop)
    missing = [c for c in COLUMNS if c not in raw.columns]
    if missing:
        raise RecordError(f"{path}: missing required columns {missing}")

    out: dict[str, list] = {c: [] for c in COLUMNS}
    missing_on_recurrence = 0
    for pos, row in enumerate(raw.itertuples(index=False)):
        line = pos + 2  # 1-based, after the header
        rec = {c: getattr(row, c) for c in COLUMNS}
        treatment = _parse_treatment(rec["treatment"], line)
        status = int(_parse_number(rec["status"], "status", line, False))
        if status not in VALID_STATUS:
            raise RecordError(f"row {line}: status {status} not in {sorted(VALID_STATUS)}")
        values = {
            "id": int(_parse_number(rec["id"], "id", line, False)),
            "treatment": treatment,
            "number": _parse_number(rec["number"], "number", line, False),
            "size": _parse_number(rec["size"], "size", line, False),
            "recur": _parse_number(rec["recur"], "recur", line, False),
            "start": _parse_number(rec["start"], "start", line, False),
            "stop": _parse_number(rec["stop"], "stop", line, False),
            "status": status,
            "rtumor": _parse_number(rec["rtumor"], "rtumor", line, True),
            "rsize": _parse_number(rec["rsize"], "rsize", line, True),
            "enum": int(_parse_number(rec["enum"], "enum", line, False)),
        }
        if values["start"] < 0 or values["stop"] < 0:
            raise RecordError(f"row {line}: negative start/stop time")
        if values["stop"] < values["start"]:
            raise RecordError(f"row {line}: stop {values['stop']} earlier than start {values['start']}")
        for c in ("rtumor", "rsize"):
            if np.isnan(values[c]):
                if status == 1:
                    missing_on_recurrence += 1
                values[c] = 0.0
        for c in COLUMNS:
            out[c].append(values[c])

    if missing_on_recurrence:
        warnings.warn(
            f"{missing_on_recurrence} missing rtumor/rsize value(s) on recurrence rows replaced with 0",
            stacklevel=2,
        )

    df = pd.DataFrame(out)
    for c in INT_COLUMNS:
        df[c] = df[c].astype(np.int64)
    for c in FLOAT_COLUMNS:
        df[c] = df[c].astype(np.float64)

    dup = df.duplicated(subset=["id", "enum"])
    if dup.any():
        first = df.loc[dup, ["id", "enum"]].iloc[0]
        raise RecordError(f"duplicate (id, enum) pair: id={first['id']}, enum={first['enum']}")

    return df.sort_values(["id", "enum"], kind="stable").reset_index(drop=True)


def write_records(table: pd.DataFrame, path) -> None:
    """Write a record table in the canonical delimited-text format."""
    table[COLUMNS].to_csv(path, index=False)


def validate_records(table: pd.DataFrame) -> None:
    """Check schema invariants on an in-memory record table."""
    missing = [c for c in COLUMNS if c not in table.columns]
    if missing:
        raise RecordError(f"missing required columns {missing}")
    if len(table) == 0:
        raise RecordError("empty record table")
    if (table["start"] < 0).any() or (table["stop"] < table["start"]).any():
        raise RecordError("interval times must satisfy 0 <= start <= stop")
    if not table["status"].isin(sorted(VALID_STATUS)).all():
        raise RecordError(f"status codes outside {sorted(VALID_STATUS)}")
    if table.duplicated(subset=["id", "enum"]).any():
        raise RecordError("duplicate (id, enum) pairs")


@dataclass
class Scaler:
    """Per-feature z-score parameters (population standard deviation)."""

    feature_names: list[str]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, feature_names) -> "Scaler":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        # constant features divide by 1 so they map to exactly zero
        std = np.where(std == 0.0, 1.0, std)
        return cls(list(feature_names), mean, std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(list(d["feature_names"]), np.asarray(d["mean"], float), np.asarray(d["std"], float))


def standardize(table: pd.DataFrame, feature_names=FEATURE_COLUMNS, scaler: Scaler | None = None):
    """Z-score the named feature columns; returns (copy, scaler).

    Pass a previously fitted scaler to transform held-out data with the
    training statistics.
    """
    feature_names = list(feature_names)
    values = table[feature_names].to_numpy(dtype=np.float64)
    if scaler is None:
        scaler = Scaler.fit(values, feature_names)
    out = table.copy()
    out[feature_names] = scaler.transform(values)
    return out, scaler


@dataclass
class SequenceTensor:
    """Fixed-length standardized feature sequences with padding metadata."""

    data: np.ndarray  # (N, T, F) float64, zero on padded steps
    patient_ids: list[int]
    feature_names: list[str]
    valid_steps: np.ndarray  # (N,) number of non-padded steps
    scaler: Scaler = field(repr=False)

    @property
    def n_patients(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def subset(self, patient_ids) -> "SequenceTensor":
        """Row-select by patient id, keeping the stored order of `patient_ids`."""
        index = {pid: i for i, pid in enumerate(self.patient_ids)}
        rows = [index[p] for p in patient_ids]
        return SequenceTensor(
            data=self.data[rows],
            patient_ids=[self.patient_ids[i] for i in rows],
            feature_names=list(self.feature_names),
            valid_steps=self.valid_steps[rows],
            scaler=self.scaler,
        )

    def save(self, path) -> None:
        """One-file container: JSON header line plus little-endian float64 payload."""
        header = {
            "shape": list(self.data.shape),
            "feature_names": list(self.feature_names),
            "patient_ids": [int(p) for p in self.patient_ids],
            "valid_steps": [int(v) for v in self.valid_steps],
            "scaler": self.scaler.to_dict(),
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            fh.write(np.ascontiguousarray(self.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "SequenceTensor":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            shape = tuple(header["shape"])
            payload = fh.read(int(np.prod(shape)) * 8)
        data = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        return cls(
            data=data,
            patient_ids=list(header["patient_ids"]),
            feature_names=list(header["feature_names"]),
            valid_steps=np.asarray(header["valid_steps"], dtype=np.int64),
            scaler=Scaler.from_dict(header["scaler"]),
        )


def build_sequences(
    table: pd.DataFrame,
    n_steps: int = 3,
    feature_names=FEATURE_COLUMNS,
    scaler: Scaler | None = None,
) -> SequenceTensor:
    """Reshape per-patient intervals into an (N, T, F) standardized tensor.

    Each patient contributes their earliest ``n_steps`` intervals in enum
    order; shorter histories are zero-padded at the tail.  Standardization
    statistics are fitted on exactly the retained (non-padded) cells unless
    a scaler is supplied.
    """
    validate_records(table)
    feature_names = list(feature_names)
    ordered = table.sort_values(["id", "enum"], kind="stable")
    kept = ordered.groupby("id", sort=True).head(n_steps)

    if scaler is None:
        scaler = Scaler.fit(kept[feature_names].to_numpy(dtype=np.float64), feature_names)

    patient_ids = list(kept["id"].drop_duplicates())
    n = len(patient_ids)
    data = np.zeros((n, n_steps, len(feature_names)), dtype=np.float64)
    valid_steps = np.zeros(n, dtype=np.int64)
    for i, (_, group) in enumerate(kept.groupby("id", sort=True)):
        values = scaler.transform(group[feature_names].to_numpy(dtype=np.float64))
        k = len(values)
        data[i, :k, :] = values
        valid_steps[i] = k

    if not np.all(np.isfinite(data)):
        raise RecordError("sequence tensor contains non-finite values")
    return SequenceTensor(data, patient_ids, feature_names, valid_steps, scaler)


def derive_survival(table: pd.DataFrame, event_codes=DEFAULT_EVENT_CODES) -> pd.DataFrame:
    """Per-patient survival outcome: follow-up span and binary event.

    Time is the last interval's stop minus the first interval's start (enum
    order); the event indicator is 1 when the final status is in
    ``event_codes`` (default: recurrence or death from the disease).
    """
    validate_records(table)
    event_codes = set(int(c) for c in event_codes)
    ordered = table.sort_values(["id", "enum"], kind="stable")
    rows = []
    for pid, group in ordered.groupby("id", sort=True):
        first_start = float(group["start"].iloc[0])
        last_stop = float(group["stop"].iloc[-1])
        time = last_stop - first_start
        if time < 0:
            raise RecordError(f"patient {pid}: last stop earlier than first start")
        event = int(int(group["status"].iloc[-1]) in event_codes)
        rows.append({"id": int(pid), "time": time, "event": event})
    return pd.DataFrame(rows)


def split_patients(patient_ids, test_fraction: float = 0.2, seed: int = 0):
    """Seeded patient-level split; returns (train_ids, test_ids)."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    ids = list(patient_ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return train, test


def descriptive_stats(table: pd.DataFrame) -> dict:
    """Min/median/mean/max per numeric column plus per-patient treatment counts."""
    stats = {}
    for c in COLUMNS[1:]:
        col = table[c].to_numpy(dtype=np.float64)
        stats[c] = {
            "min": float(col.min()),
            "median": float(np.median(col)),
            "mean": float(col.mean()),
            "max": float(col.max()),
        }
    per_patient = table.sort_values(["id", "enum"]).groupby("id", sort=True)["treatment"].first()
    freq: dict[str, int] = {}
    for code, count in per_patient.value_counts().items():
        label = TREATMENT_LABELS.get(int(code), str(int(code)))
        freq[label] = int(count)
    return {"n_patients": int(table["id"].nunique()), "columns": stats, "treatment_frequency": freq}
