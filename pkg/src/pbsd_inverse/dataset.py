"""Feature schemas, validated building tables, standardization and splits."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from .errors import (
    DegenerateSplit,
    EmptyFile,
    MissingColumn,
    NonNumericCell,
    OutOfBounds,
    SchemaError,
    SchemaMismatch,
    UnexpectedColumn,
    ZeroVarianceColumn,
)

ROLES = ("geometry", "design", "mass")
TARGET_COLUMN = "EAL"
ID_COLUMN = "building_id"


@dataclass(frozen=True)
class Feature:
    name: str
    lower_bound: float
    upper_bound: float
    role: str = "design"
    unit: str = ""

    @property
    def span(self) -> float:
        return self.upper_bound - self.lower_bound


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    target_unit: str = "fraction"
    # reduced surrogate schemas may hold no design feature
    require_design: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if not names:
            raise SchemaError("schema has no features")
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        for f in self.features:
            if f.role not in ROLES:
                raise SchemaError(f"feature {f.name!r}: unknown role {f.role!r}")
            if not f.lower_bound < f.upper_bound:
                raise SchemaError(f"feature {f.name!r}: lower_bound must be < upper_bound")
        if self.require_design and not any(f.role == "design" for f in self.features):
            raise SchemaError("schema needs at least one design feature")
        if self.target_unit not in ("fraction", "currency"):
            raise SchemaError(f"unknown target unit {self.target_unit!r}")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def lower(self) -> np.ndarray:
        return np.array([f.lower_bound for f in self.features], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([f.upper_bound for f in self.features], dtype=float)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaMismatch(f"feature {name!r} not in schema") from None

    def indices(self, role: str) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.role == role]

    def subset(self, names: Sequence[str]) -> "FeatureSchema":
        """Schema restricted to ``names``, in the given order."""
        feats = tuple(self.features[self.index(n)] for n in names)
        return FeatureSchema(feats, self.target_unit, require_design=False)

    def to_dict(self) -> dict:
        return {
            "target_unit": self.target_unit,
            "features": [
                {
                    "name": f.name,
                    "unit": f.unit,
                    "lower_bound": f.lower_bound,
                    "upper_bound": f.upper_bound,
                    "role": f.role,
                }
                for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, require_design: bool = True) -> "FeatureSchema":
        try:
            feats = [
                Feature(
                    name=str(item["name"]),
                    lower_bound=float(item["lower_bound"]),
                    upper_bound=float(item["upper_bound"]),
                    role=str(item.get("role", "design")),
                    unit=str(item.get("unit", "")),
                )
                for item in data["features"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc
        return cls(tuple(feats), str(data.get("target_unit", "fraction")), require_design)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_schema(path) -> FeatureSchema:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise EmptyFile(path)
    return FeatureSchema.from_dict(yaml.safe_load(text))


def save_schema(schema: FeatureSchema, path) -> None:
    Path(path).write_text(yaml.safe_dump(schema.to_dict(), sort_keys=False), encoding="utf-8")


@dataclass(frozen=True)
class FeatureTable:
    schema: FeatureSchema
    rows: np.ndarray
    target: Optional[np.ndarray] = None
    ids: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, copy=True)
        if rows.ndim != 2 or rows.shape[1] != len(self.schema.features):
            raise SchemaMismatch(
                f"rows have shape {rows.shape}, schema has {len(self.schema.features)} features"
            )
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.target is not None:
            target = np.array(self.target, dtype=float, copy=True).reshape(-1)
            if target.shape[0] != rows.shape[0]:
                raise SchemaMismatch("target length does not match row count")
            target.setflags(write=False)
            object.__setattr__(self, "target", target)
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != rows.shape[0]:
                raise SchemaMismatch("id count does not match row count")
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    @property
    def names(self) -> list[str]:
        return self.schema.names

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.schema.index(name)]

    def take(self, index) -> "FeatureTable":
        index = np.asarray(index, dtype=int)
        return FeatureTable(
            self.schema,
            self.rows[index],
            None if self.target is None else self.target[index],
            None if self.ids is None else tuple(self.ids[i] for i in index),
        )

    def select(self, names: Sequence[str]) -> "FeatureTable":
        cols = [self.schema.index(n) for n in names]
        return FeatureTable(self.schema.subset(names), self.rows[:, cols], self.target, self.ids)

    def with_target(self, target) -> "FeatureTable":
        return FeatureTable(self.schema, self.rows, target, self.ids)

    def validate_bounds(self) -> None:
        lo, hi = self.schema.lower, self.schema.upper
        bad = (self.rows < lo) | (self.rows > hi) | ~np.isfinite(self.rows)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise OutOfBounds(int(r), self.schema.names[c], float(self.rows[r, c]))


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(row, column) from None
    if not np.isfinite(value):
        raise NonNumericCell(row, column)
    return value


def load_feature_table(path, schema: FeatureSchema) -> FeatureTable:
    """Read a building CSV and validate it against ``schema``.

    Columns may appear in any order. Besides the schema features, the header
    may carry an ``EAL`` target column and a ``building_id`` column. Row
    numbers in errors are 0-based data-row indices.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or all(not h.strip() for h in header):
            raise EmptyFile(path)
        header = [h.strip() for h in header]
        records = [r for r in reader if any(cell.strip() for cell in r)]
    if not records:
        raise EmptyFile(path)

    allowed = set(schema.names) | {TARGET_COLUMN, ID_COLUMN}
    for h in header:
        if h not in allowed:
            raise UnexpectedColumn(h)
    for name in schema.names:
        if name not in header:
            raise MissingColumn(name)
    pos = {h: i for i, h in enumerate(header)}

    rows = np.empty((len(records), len(schema.names)))
    target = np.empty(len(records)) if TARGET_COLUMN in pos else None
    ids = [] if ID_COLUMN in pos else None
    for r, rec in enumerate(records):
        if len(rec) != len(header):
            raise NonNumericCell(r, header[min(len(rec), len(header) - 1)])
        for c, name in enumerate(schema.names):
            rows[r, c] = _parse_float(rec[pos[name]].strip(), r, name)
        if target is not None:
            target[r] = _parse_float(rec[pos[TARGET_COLUMN]].strip(), r, TARGET_COLUMN)
        if ids is not None:
            ids.append(rec[pos[ID_COLUMN]].strip())

    table = FeatureTable(schema, rows, target, None if ids is None else tuple(ids))
    table.validate_bounds()
    return table


def save_feature_table(table: FeatureTable, path) -> None:
    """Write ``table`` as CSV; floats use shortest round-trip repr."""
    header = list(table.names)
    if table.ids is not None:
        header.insert(0, ID_COLUMN)
    if table.target is not None:
        header.append(TARGET_COLUMN)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(table.n):
            rec = [repr(float(v)) for v in table.rows[i]]
            if table.ids is not None:
                rec.insert(0, table.ids[i])
            if table.target is not None:
                rec.append(repr(float(table.target[i])))
            writer.writerow(rec)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


def split(table: FeatureTable, spec: SplitSpec) -> tuple[FeatureTable, FeatureTable]:
    """Seeded train/test partition; both sides keep the original row order."""
    n = table.n
    n_test = int(np.floor(spec.test_fraction * n + 0.5))
    if n < 2 or n_test < 1 or n_test > n - 1:
        raise DegenerateSplit(f"test_fraction={spec.test_fraction} on n={n} leaves an empty side")
    perm = np.random.default_rng(spec.seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return table.take(train_idx), table.take(test_idx)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = field(default=())

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(np.array(data["mean"], dtype=float), np.array(data["std"], dtype=float),
                   tuple(data.get("names", ())))


def fit_standardizer(table: FeatureTable) -> Standardizer:
    """Column means and sample (n-1) standard deviations."""
    rows = table.rows
    if rows.shape[0] < 2:
        raise ZeroVarianceColumn(table.names[0])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0, ddof=1)
    for name, s in zip(table.names, std):
        if not s > 0.0:
            raise ZeroVarianceColumn(name)
    return Standardizer(mean, std, tuple(table.names))


def apply(standardizer: Standardizer, table: FeatureTable) -> FeatureTable:
    """Standardized copy of ``table``.

    The result is in z-units and therefore no longer respects the schema
    bounds; it is meant for numerical work, not for saving.
    """
    if standardizer.names and tuple(standardizer.names) != tuple(table.names):
        raise SchemaMismatch("standardizer was fit on different features")
    z = standardizer.transform(table.rows)
    out = object.__new__(FeatureTable)
    z.setflags(write=False)
    object.__setattr__(out, "schema", table.schema)
    object.__setattr__(out, "rows", z)
    object.__setattr__(out, "target", table.target)
    object.__setattr__(out, "ids", table.ids)
    return out


def table_from_arrays(schema: FeatureSchema, rows: Iterable, target=None) -> FeatureTable:
    table = FeatureTable(schema, np.asarray(rows, dtype=float), target)
    table.validate_bounds()
    return table
