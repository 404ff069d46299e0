"""Utility of a synthetic dataset: marginal RMSE and gap statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from sdgaudit.dataset import Dataset, theta_of_dataset
from sdgaudit.errors import SdgError
from sdgaudit.statspace import MarginalSpec, marginal_of_theta


@dataclass(frozen=True)
class DerivedStatSpec:
    """Difference in proportion between the two split categories, per group.

    ``condition`` restricts to records with ``attribute == category``.
    """

    name: str
    group_attr: str
    split_attr: str
    condition: Optional[tuple[str, int]] = None
    kind: str = "gap"

    def __post_init__(self):
        if self.kind != "gap":
            raise SdgError("bad-config", f"unsupported derived statistic kind {self.kind!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "group_attr": self.group_attr,
            "split_attr": self.split_attr,
            "condition": list(self.condition) if self.condition else None,
        }


@dataclass(frozen=True)
class UtilityReport:
    marginal_rmse: list
    derived_rmse: list
    n_real: int
    n_sym: int
    log: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "marginal_rmse": [{"marginal": list(m.attributes), "rmse": v} for m, v in self.marginal_rmse],
            "derived_rmse": [{"name": n, "rmse": v} for n, v in self.derived_rmse],
            "n_real": self.n_real,
            "n_sym": self.n_sym,
            "log": self.log,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "UtilityReport":
        return cls(
            [(MarginalSpec(tuple(e["marginal"])), float(e["rmse"])) for e in obj["marginal_rmse"]],
            [(e["name"], float(e["rmse"])) for e in obj["derived_rmse"]],
            int(obj["n_real"]),
            int(obj["n_sym"]),
            dict(obj.get("log", {})),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "target", "rmse"])
            for m, v in self.marginal_rmse:
                w.writerow(["marginal", "x".join(m.attributes), repr(v)])
            for n, v in self.derived_rmse:
                w.writerow(["derived", n, repr(v)])


def _same_schema(real: Dataset, sym: Dataset):
    if real.schema.fingerprint != sym.schema.fingerprint:
        raise SdgError("schema-mismatch", "real and synthetic data use different schemas")


def marginal_rmse(real: Dataset, sym: Dataset, m: MarginalSpec) -> float:
    _same_schema(real, sym)
    a = marginal_of_theta(theta_of_dataset(real), m)
    b = marginal_of_theta(theta_of_dataset(sym), m)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def group_gaps(d: Dataset, spec: DerivedStatSpec) -> np.ndarray:
    """Per-group gap ``P(split=0) - P(split=1)``; NaN where the group is empty."""
    s = d.schema
    split = s.axis(spec.split_attr)
    group = s.axis(spec.group_attr)
    if s.shape[split] != 2:
        raise SdgError("bad-config", f"split attribute {spec.split_attr!r} must be binary")
    rec = d.records
    if spec.condition is not None:
        attr, cat = spec.condition
        rec = rec[rec[:, s.axis(attr)] == int(cat)]
    n_groups = s.shape[group]
    total = np.bincount(rec[:, group], minlength=n_groups).astype(float)
    zeros = np.bincount(rec[rec[:, split] == 0, group], minlength=n_groups).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (2.0 * zeros - total) / total


def _gap_errors(real: Dataset, sym: Dataset, spec: DerivedStatSpec):
    _same_schema(real, sym)
    a = group_gaps(real, spec)
    b = group_gaps(sym, spec)
    ok = ~(np.isnan(a) | np.isnan(b))
    if not ok.any():
        raise SdgError("no-support", f"{spec.name}: no group has records in both datasets")
    return a[ok] - b[ok], int((~ok).sum())


def gap_rmse(real: Dataset, sym: Dataset, spec: DerivedStatSpec) -> float:
    err, _ = _gap_errors(real, sym, spec)
    return float(np.sqrt(np.mean(err**2)))


def utility_report(
    real: Dataset,
    sym: Dataset,
    marginals: Sequence[MarginalSpec],
    derived: Sequence[DerivedStatSpec] = (),
) -> UtilityReport:
    _same_schema(real, sym)
    mr = [(m, marginal_rmse(real, sym, m)) for m in marginals]
    dr = []
    skipped = {}
    for spec in derived:
        err, n_skipped = _gap_errors(real, sym, spec)
        dr.append((spec.name, float(np.sqrt(np.mean(err**2)))))
        skipped[spec.name] = n_skipped
    log = {"skipped_groups": skipped} if derived else {}
    return UtilityReport(mr, dr, real.size, sym.size, log)


def dumps(report: UtilityReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True)
