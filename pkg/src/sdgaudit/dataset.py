"""Categorical schemas, datasets and their full-contingency-table parameterization.

Cells of the record space are indexed row-major over attributes in
declaration order, so cell ``(x_1, ..., x_d)`` sits at
``np.ravel_multi_index((x_1, ..., x_d), schema.shape)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from sdgaudit.errors import SdgError

PROB_TOL = 1e-12
DEFAULT_CELL_CAP = 10**7


@dataclass(frozen=True)
class Attribute:
    name: str
    cardinality: int
    values: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.cardinality < 2:
            raise SdgError("bad-schema", f"attribute {self.name!r} needs cardinality >= 2")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(str(v) for v in self.values))
            if len(self.values) != self.cardinality:
                raise SdgError(
                    "bad-schema",
                    f"attribute {self.name!r} lists {len(self.values)} values "
                    f"for cardinality {self.cardinality}",
                )


@dataclass(frozen=True)
class Schema:
    """Ordered categorical attributes; defines the record space and its cell indexing."""

    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise SdgError("bad-schema", "schema has no attributes")
        names = [a.name for a in attrs]
        if len(set(names)) != len(names):
            raise SdgError("bad-schema", "attribute names must be unique")

    @classmethod
    def from_cardinalities(cls, cards: Sequence[int], names: Optional[Sequence[str]] = None) -> "Schema":
        if names is None:
            names = [chr(ord("A") + i) if i < 26 else f"X{i}" for i in range(len(cards))]
        return cls(tuple(Attribute(n, int(c)) for n, c in zip(names, cards)))

    @classmethod
    def from_json(cls, obj) -> "Schema":
        """Build from a list of ``{name, cardinality, values?}`` objects."""
        try:
            attrs = []
            for entry in obj:
                values = entry.get("values")
                card = entry.get("cardinality", len(values) if values else None)
                attrs.append(Attribute(str(entry["name"]), int(card), tuple(values) if values else None))
        except (KeyError, TypeError, AttributeError) as exc:
            raise SdgError("bad-schema", f"malformed schema entry: {exc}") from exc
        return cls(tuple(attrs))

    def to_json(self) -> list[dict]:
        out = []
        for a in self.attributes:
            entry = {"name": a.name, "cardinality": a.cardinality}
            if a.values is not None:
                entry["values"] = list(a.values)
            out.append(entry)
        return out

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.cardinality for a in self.attributes)

    @property
    def total_cells(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SdgError("schema-mismatch", f"unknown attribute {name!r}") from None

    def index(self, cell: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in cell), self.shape))

    def cell_of(self, i: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(int(i), self.shape))

    @property
    def fingerprint(self) -> str:
        payload = json.dumps([[a.name, a.cardinality] for a in self.attributes], separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def check_cap(self, cap: int = DEFAULT_CELL_CAP) -> None:
        if self.total_cells > cap:
            raise SdgError(
                "domain-too-large",
                f"{self.total_cells} cells exceeds the cap of {cap}; restrict the schema "
                "to the attributes of interest",
            )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Records as an ``(n, d)`` integer array of category indices."""

    schema: Schema
    records: np.ndarray

    def __post_init__(self):
        rec = np.asarray(self.records, dtype=np.int64)
        if rec.ndim == 1 and rec.size == 0:
            rec = rec.reshape(0, len(self.schema.attributes))
        if rec.ndim != 2 or rec.shape[1] != len(self.schema.attributes):
            raise SdgError("schema-mismatch", f"records of shape {rec.shape} do not fit the schema")
        if rec.size and ((rec < 0).any() or (rec >= np.asarray(self.schema.shape)).any()):
            raise SdgError("bad-record", "record component outside its attribute's range")
        rec = rec.copy()
        rec.flags.writeable = False
        object.__setattr__(self, "records", rec)

    @property
    def size(self) -> int:
        return int(self.records.shape[0])

    def __len__(self) -> int:
        return self.size

    def cell_indices(self) -> np.ndarray:
        if self.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(self.records.T), self.schema.shape)

    def counts(self) -> np.ndarray:
        return np.bincount(self.cell_indices(), minlength=self.schema.total_cells)

    @classmethod
    def from_counts(cls, schema: Schema, counts: np.ndarray) -> "Dataset":
        cells = np.repeat(np.arange(schema.total_cells), np.asarray(counts, dtype=np.int64))
        return cls(schema, np.stack(np.unravel_index(cells, schema.shape), axis=1))


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Normalized full contingency table over the schema's cells."""

    schema: Schema
    values: np.ndarray
    sample_size_hint: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.shape != (self.schema.total_cells,):
            raise SdgError("schema-mismatch", f"theta has {v.size} cells, schema has {self.schema.total_cells}")
        if not np.all(np.isfinite(v)) or (v < 0).any():
            raise SdgError("invalid-theta", "theta entries must be finite and nonnegative")
        total = v.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise SdgError("invalid-theta", f"theta sums to {total!r}, not 1")
        if total != 1.0:
            v = v / total
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def to_json(self) -> dict:
        out = {"schema_fingerprint": self.schema.fingerprint, "cells": self.values.tolist()}
        if self.sample_size_hint is not None:
            out["sample_size_hint"] = self.sample_size_hint
        return out

    @classmethod
    def from_json(cls, obj: Mapping, schema: Schema) -> "ThetaVector":
        if obj.get("schema_fingerprint") != schema.fingerprint:
            raise SdgError("schema-mismatch", "theta was serialized for a different schema")
        return cls(schema, np.asarray(obj["cells"], dtype=float), obj.get("sample_size_hint"))


def theta_of_dataset(d: Dataset) -> ThetaVector:
    if d.size == 0:
        raise SdgError("empty-dataset", "cannot compute the empirical distribution of no records")
    return ThetaVector(d.schema, d.counts() / d.size, sample_size_hint=d.size)


def largest_remainder_counts(values: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Hamilton apportionment of ``n`` over ``values``; ``seed`` only orders ties."""
    scaled = np.asarray(values, dtype=float) * n
    counts = np.floor(scaled).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        # rounding to 1e-12 makes nominally equal remainders tie exactly
        frac = np.round(scaled - counts, 12)
        tiebreak = np.random.default_rng(seed).permutation(frac.size)
        order = np.lexsort((tiebreak, -frac))
        counts[order[:short]] += 1
    return counts


def realize_dataset(theta: ThetaVector, n: int, seed: int = 0) -> Dataset:
    """Deterministic integer dataset of exactly ``n`` records whose counts round ``n * theta``."""
    if n <= 0:
        raise SdgError("empty-request", "realize_dataset needs n >= 1")
    return Dataset.from_counts(theta.schema, largest_remainder_counts(theta.values, n, seed))


def sample_iid(theta: ThetaVector, n: int, seed: int) -> Dataset:
    if n <= 0:
        raise SdgError("empty-request", "sample_iid needs n >= 1")
    rng = np.random.default_rng(seed)
    cells = rng.choice(theta.schema.total_cells, size=n, p=theta.values)
    return Dataset(theta.schema, np.stack(np.unravel_index(cells, theta.schema.shape), axis=1))


@dataclass(frozen=True)
class IngestConfig:
    delimiter: str = ","
    header: bool = True
    value_maps: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    pre_encoded: frozenset = frozenset()
    unknown_policy: str = "reject"

    def __post_init__(self):
        if self.unknown_policy not in ("reject", "drop-row"):
            raise SdgError("bad-config", f"unknown_policy must be reject or drop-row, got {self.unknown_policy!r}")
        object.__setattr__(self, "pre_encoded", frozenset(self.pre_encoded))

    def maps_for(self, schema: Schema) -> list[Optional[dict[str, int]]]:
        """Per-attribute token map; ``None`` means the column holds integer codes."""
        maps = []
        for a in schema.attributes:
            if a.name in self.value_maps:
                maps.append({str(k): int(v) for k, v in self.value_maps[a.name].items()})
            elif a.name in self.pre_encoded:
                maps.append(None)
            elif a.values is not None:
                maps.append({v: i for i, v in enumerate(a.values)})
            else:
                raise SdgError(
                    "bad-config",
                    f"attribute {a.name!r} has no value map, no labels, and is not declared pre-encoded",
                )
        return maps


def ingest_csv(path, schema: Schema, cfg: Optional[IngestConfig] = None) -> Dataset:
    """Read a CSV into a dataset, mapping raw tokens to category indices.

    Without a header the columns are taken positionally in schema order.
    Unmapped tokens (and out-of-range integer codes) either raise, naming
    the row, column and raw value, or drop the row, per ``unknown_policy``.
    """
    if cfg is None:
        cfg = IngestConfig(pre_encoded=frozenset(a.name for a in schema.attributes if a.values is None))
    maps = cfg.maps_for(schema)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=cfg.delimiter)
        if cfg.header:
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise SdgError("schema-mismatch", f"{path}: empty file, expected a header") from None
            missing = [n for n in schema.names if n not in header]
            if missing:
                raise SdgError("schema-mismatch", f"{path}: missing column(s) {missing}")
            cols = [header.index(n) for n in schema.names]
            first_line = 2
        else:
            cols = list(range(len(schema.attributes)))
            first_line = 1
        for lineno, row in enumerate(reader, start=first_line):
            if not row:
                continue
            if len(row) <= max(cols):
                raise SdgError("schema-mismatch", f"{path}:{lineno}: row has {len(row)} fields")
            rec = []
            for attr, col, mapping in zip(schema.attributes, cols, maps):
                raw = row[col].strip()
                code = _encode(raw, mapping, attr.cardinality)
                if code is None:
                    if cfg.unknown_policy == "drop-row":
                        rec = None
                        break
                    raise SdgError(
                        "unknown-value",
                        f"{path}: row {lineno}, column {attr.name!r}: unmapped value {raw!r}",
                    )
                rec.append(code)
            if rec is not None:
                rows.append(rec)
    return Dataset(schema, np.asarray(rows, dtype=np.int64).reshape(len(rows), len(schema.attributes)))


def _encode(raw: str, mapping, cardinality: int):
    if mapping is not None:
        code = mapping.get(raw)
    else:
        try:
            code = int(raw)
        except ValueError:
            return None
    if code is None or not 0 <= code < cardinality:
        return None
    return code


def write_csv(d: Dataset, path, delimiter: str = ",") -> None:
    """Write with a header; labelled attributes are written as their labels."""
    labels = [a.values for a in d.schema.attributes]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(d.schema.names)
        for rec in d.records.tolist():
            w.writerow([lab[c] if lab is not None else c for c, lab in zip(rec, labels)])


def concat(datasets: Iterable[Dataset]) -> Dataset:
    datasets = list(datasets)
    return Dataset(datasets[0].schema, np.concatenate([d.records for d in datasets], axis=0))
