"""Experiment-log parsing and design-matrix encoding.

A log holds one row per attack-versus-model trial.  ``encode`` shuffles the
rows, splits off a test fraction, and builds the design matrix from
train-set statistics only:

* ``attack_strength`` / ``defence_strength`` are min-max scaled within each
  attack (resp. defence) family, because every attack measures its strength
  on its own metric.
* ``layers, epochs, t_train, t_predict, acc_ben, acc_adv`` are centred and
  scaled.
* ``dataset``, ``attack`` and ``defence`` become dummy columns with the
  lexicographically first level as reference.

Every transform is recorded in :class:`EncodingMeta` so the test split (and
any later log) is encoded with the same numbers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import IO, Iterable, Sequence

import numpy as np

__all__ = [
    "CSV_COLUMNS",
    "ExperimentRecord",
    "SurvivalDataset",
    "EncodingMeta",
    "SchemaError",
    "RecordValidationError",
    "LogParseError",
    "EncodingWarning",
    "parse_log",
    "write_csv",
    "encode",
    "apply_encoding",
    "decode_strengths",
    "from_arrays",
]

CSV_COLUMNS = (
    "dataset",
    "attack",
    "attack_strength",
    "defence",
    "defence_strength",
    "layers",
    "epochs",
    "t_train",
    "t_predict",
    "t_attack",
    "event",
    "acc_ben",
    "acc_adv",
)

CONTINUOUS = ("layers", "epochs", "t_train", "t_predict", "acc_ben", "acc_adv")
CATEGORICAL = ("dataset", "attack", "defence")
STRENGTHS = ("attack_strength", "defence_strength")

# log column -> ExperimentRecord attribute
_FIELD_OF = {"dataset": "dataset_name", "attack": "attack_name", "defence": "defence_name"}


class SchemaError(ValueError):
    """The log is missing a required column."""


class RecordValidationError(ValueError):
    """A row parsed but violates a record invariant."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class LogParseError(ValueError):
    """A value could not be parsed; carries the row and column."""

    def __init__(self, row: int, column: str | None, message: str):
        where = f"row {row}" + (f", column {column!r}" if column else "")
        super().__init__(f"{where}: {message}")
        self.row = row
        self.column = column


class EncodingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExperimentRecord:
    dataset_name: str
    attack_name: str
    attack_strength: float
    defence_name: str
    defence_strength: float
    layers: int
    epochs: int
    t_train: float
    t_predict: float
    t_attack: float
    event: bool
    acc_ben: float
    acc_adv: float

    def validate(self) -> None:
        for name in ("t_train", "t_predict", "t_attack"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name}={value!r} must be positive and finite")
        for name in ("acc_ben", "acc_adv"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value!r} must lie in [0, 1]")
        for name in STRENGTHS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name}={value!r} must be non-negative and finite")
        for name in ("layers", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def value(self, column: str):
        """Look up a value by its log column name."""
        return getattr(self, _FIELD_OF.get(column, column))

    def to_row(self) -> dict:
        return {col: self.value(col) for col in CSV_COLUMNS}


# ---------------------------------------------------------------------------
# parsing


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if isinstance(text, (int, float)) and text in (0, 1):
        return bool(text)
    key = str(text).strip().lower()
    if key in ("true", "1"):
        return True
    if key in ("false", "0"):
        return False
    raise ValueError(f"expected one of true/false/1/0, got {text!r}")


def _parse_int(text) -> int:
    if isinstance(text, bool):
        raise ValueError("boolean is not an integer")
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


_CONVERTERS = {
    "dataset": str,
    "attack": str,
    "defence": str,
    "event": _parse_bool,
    "layers": _parse_int,
    "epochs": _parse_int,
}


def _record_from_mapping(row: dict, index: int) -> ExperimentRecord:
    values = {}
    for col in CSV_COLUMNS:
        raw = row[col]
        convert = _CONVERTERS.get(col, float)
        try:
            if isinstance(raw, str) and convert is not str:
                raw = raw.strip()
            values[_FIELD_OF.get(col, col)] = convert(raw)
        except (TypeError, ValueError) as exc:
            raise LogParseError(index, col, str(exc)) from None
    record = ExperimentRecord(**values)
    try:
        record.validate()
    except ValueError as exc:
        raise RecordValidationError(index, str(exc)) from None
    return record


def _text_stream(source) -> IO[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def parse_log(source, format: str = "csv") -> list[ExperimentRecord]:
    """Parse a CSV or JSON-lines experiment log into validated records.

    Parameters
    ----------
    source : bytes, str, or a binary/text stream
        The raw log.  ``str`` is treated as content, not a path.
    format : {"csv", "jsonl", "json-lines"}

    Row indices in errors count data rows from 0, header excluded.
    """
    stream = _text_stream(source)
    try:
        return _parse_stream(stream, format)
    finally:
        # hand the caller's binary stream back instead of closing it
        if isinstance(stream, io.TextIOWrapper) and stream is not source:
            stream.detach()


def _parse_stream(stream: IO[str], format: str) -> list[ExperimentRecord]:
    fmt = format.lower().replace("-", "").replace("_", "")
    if fmt == "csv":
        reader = csv.DictReader(stream)
        header = reader.fieldnames or []
        for col in CSV_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing column {col!r}")
        records = []
        for index, row in enumerate(reader):
            if None in row or any(row[c] is None for c in CSV_COLUMNS):
                raise LogParseError(index, None, "wrong number of fields")
            records.append(_record_from_mapping(row, index))
        return records
    if fmt in ("jsonl", "jsonlines"):
        records = []
        index = 0
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogParseError(index, None, f"line {lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise LogParseError(index, None, f"line {lineno}: expected an object")
            for col in CSV_COLUMNS:
                if col not in obj:
                    raise SchemaError(f"missing column {col!r} (line {lineno})")
            records.append(_record_from_mapping(obj, index))
            index += 1
        return records
    raise ValueError(f"unknown log format {format!r}")


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records: Iterable[ExperimentRecord], stream: IO[str]) -> None:
    """Write records in the log CSV schema (floats at full precision)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        row = record.to_row()
        writer.writerow([_fmt_value(row[c]) for c in CSV_COLUMNS])


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class EncodingMeta:
    """Train-set statistics that define the design matrix."""

    feature_names: tuple[str, ...]
    centre: dict  # column -> (mean, scale)
    strength_bounds: dict  # "attack_strength"/"defence_strength" -> {family: (min, max)}
    strength_fallback: dict  # column -> (min, max) over all train rows, for unseen families
    levels: dict  # categorical column -> sorted train levels; levels[0] is the reference

    @property
    def dummy_names(self) -> tuple[str, ...]:
        return tuple(f"{col}[{lvl}]" for col in CATEGORICAL for lvl in self.levels[col][1:])

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "centre": {k: list(v) for k, v in self.centre.items()},
            "strength_bounds": {c: {f: list(b) for f, b in v.items()} for c, v in self.strength_bounds.items()},
            "strength_fallback": {k: list(v) for k, v in self.strength_fallback.items()},
            "levels": {k: list(v) for k, v in self.levels.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EncodingMeta":
        return cls(
            feature_names=tuple(doc["feature_names"]),
            centre={k: (float(v[0]), float(v[1])) for k, v in doc["centre"].items()},
            strength_bounds={
                c: {f: (float(b[0]), float(b[1])) for f, b in v.items()} for c, v in doc["strength_bounds"].items()
            },
            strength_fallback={k: (float(v[0]), float(v[1])) for k, v in doc["strength_fallback"].items()},
            levels={k: tuple(v) for k, v in doc["levels"].items()},
        )


@dataclass(frozen=True)
class SurvivalDataset:
    design: np.ndarray
    times: np.ndarray
    events: np.ndarray
    feature_names: tuple[str, ...]
    encoding_meta: EncodingMeta | None = None
    split_tag: str = "train"
    records: tuple[ExperimentRecord, ...] | None = None

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        if design.ndim == 1:
            design = design.reshape(-1, 1) if self.feature_names else design.reshape(-1, 0)
        times = np.asarray(self.times, dtype=float).reshape(-1)
        events = np.asarray(self.events, dtype=bool).reshape(-1)
        if not (design.shape[0] == times.size == events.size):
            raise ValueError("design rows, times and events must have equal length")
        if design.shape[1] != len(self.feature_names):
            raise ValueError("one feature name per design column is required")
        if times.size and (not np.all(np.isfinite(times)) or np.any(times <= 0)):
            raise ValueError("observed times must be positive and finite")
        if self.records is not None and len(self.records) != times.size:
            raise ValueError("records must align with design rows")
        for name, arr in (("design", design), ("times", times), ("events", events)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    def subset(self, mask) -> "SurvivalDataset":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        records = None if self.records is None else tuple(self.records[i] for i in idx)
        return replace(self, design=self.design[idx], times=self.times[idx], events=self.events[idx], records=records)

    def with_times(self, times) -> "SurvivalDataset":
        return replace(self, times=np.asarray(times, dtype=float))


def from_arrays(design, times, events, feature_names: Sequence[str] | None = None, split_tag="train") -> SurvivalDataset:
    """Wrap raw arrays (no encoding metadata) as a dataset."""
    design = np.asarray(design, dtype=float)
    if design.ndim == 1:
        design = design.reshape(-1, 1)
    if feature_names is None:
        feature_names = tuple(f"x{i}" for i in range(1, design.shape[1] + 1))
    return SurvivalDataset(design, times, events, tuple(feature_names), None, split_tag)


def _fit_meta(train: Sequence[ExperimentRecord]) -> EncodingMeta:
    centre = {}
    for col in CONTINUOUS:
        values = np.array([r.value(col) for r in train], dtype=float)
        if values.size == 0 or values.min() == values.max():
            # a constant column: exact centre, no spurious roundoff variance
            mean, std = (float(values[0]) if values.size else 0.0), 0.0
        else:
            mean, std = float(values.mean()), float(values.std())
        if not std > 0:
            warnings.warn(f"continuous column {col!r} has zero variance; scaled by 1", EncodingWarning, stacklevel=3)
            std = 1.0
        centre[col] = (mean, std)
    bounds, fallback = {}, {}
    for col in STRENGTHS:
        fam_col = col.split("_")[0]
        groups: dict[str, list[float]] = {}
        for r in train:
            groups.setdefault(r.value(fam_col), []).append(r.value(col))
        bounds[col] = {fam: (float(min(v)), float(max(v))) for fam, v in sorted(groups.items())}
        every = [r.value(col) for r in train]
        fallback[col] = (float(min(every)), float(max(every)))
    levels = {col: tuple(sorted({r.value(col) for r in train})) for col in CATEGORICAL}
    names = list(CONTINUOUS) + list(STRENGTHS)
    names += [f"{col}[{lvl}]" for col in CATEGORICAL for lvl in levels[col][1:]]
    return EncodingMeta(tuple(names), centre, bounds, fallback, levels)


def _minmax(value: float, lo: float, hi: float) -> float:
    span = hi - lo
    return (value - lo) / span if span > 0 else value - lo


def apply_encoding(records: Sequence[ExperimentRecord], meta: EncodingMeta, split_tag: str = "test") -> SurvivalDataset:
    """Encode records with previously fitted statistics."""
    p = len(meta.feature_names)
    design = np.zeros((len(records), p))
    col_index = {name: j for j, name in enumerate(meta.feature_names)}
    unseen: set[str] = set()
    for i, r in enumerate(records):
        for col in CONTINUOUS:
            mean, scale = meta.centre[col]
            design[i, col_index[col]] = (r.value(col) - mean) / scale
        for col in STRENGTHS:
            fam = r.value(col.split("_")[0])
            lo, hi = meta.strength_bounds[col].get(fam, meta.strength_fallback[col])
            design[i, col_index[col]] = _minmax(r.value(col), lo, hi)
        for col in CATEGORICAL:
            level = r.value(col)
            if level not in meta.levels[col]:
                unseen.add(f"{col}={level}")
            name = f"{col}[{level}]"
            if name in col_index:
                design[i, col_index[name]] = 1.0
    if unseen:
        warnings.warn(
            f"levels absent from the training split encoded as reference: {sorted(unseen)}",
            EncodingWarning,
            stacklevel=2,
        )
    times = np.array([r.t_attack for r in records], dtype=float)
    events = np.array([r.event for r in records], dtype=bool)
    return SurvivalDataset(design, times, events, meta.feature_names, meta, split_tag, tuple(records))


def split_indices(n: int, seed: int, test_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Seeded Fisher-Yates permutation of row indices -> (train, test), each sorted."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = min(int(round(n * test_fraction)), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def encode(
    records: Sequence[ExperimentRecord], seed: int = 0, test_fraction: float = 0.2
) -> tuple[SurvivalDataset, SurvivalDataset]:
    """Shuffle, split and encode records; returns ``(train, test)``."""
    if not records:
        raise ValueError("cannot encode an empty record list")
    train_idx, test_idx = split_indices(len(records), seed, test_fraction)
    train_records = [records[i] for i in train_idx]
    test_records = [records[i] for i in test_idx]
    meta = _fit_meta(train_records)
    train = apply_encoding(train_records, meta, "train")
    test = apply_encoding(test_records, meta, "test")
    return train, test


def decode_strengths(dataset: SurvivalDataset) -> dict[str, np.ndarray]:
    """Recover raw strengths from the scaled columns and family dummies.

    Rows whose family was absent from the training split carry all-zero
    dummies and therefore decode as the reference family; their raw value is
    not recoverable from the matrix alone.
    """
    meta = dataset.encoding_meta
    if meta is None:
        raise ValueError("dataset carries no encoding metadata")
    col_index = {name: j for j, name in enumerate(meta.feature_names)}
    out = {}
    for col in STRENGTHS:
        fam_col = col.split("_")[0]
        levels = meta.levels[fam_col]
        raw = np.empty(len(dataset))
        for i, row in enumerate(dataset.design):
            family = levels[0]
            for lvl in levels[1:]:
                if row[col_index[f"{fam_col}[{lvl}]"]] == 1.0:
                    family = lvl
                    break
            lo, hi = meta.strength_bounds[col].get(family, meta.strength_fallback[col])
            span = hi - lo
            raw[i] = lo + row[col_index[col]] * span if span > 0 else lo + row[col_index[col]]
        out[col] = raw
    return out


def record_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(ExperimentRecord))
