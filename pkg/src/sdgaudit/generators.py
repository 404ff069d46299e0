"""Synthetic data generators behind one interface, plus generator cards.

Every generator reduces a training distribution to a distribution over
records (``TrainedModel.fitted``); synthetic data are i.i.d. draws from it.

Kinds
-----
ipf
    Iterative proportional fitting on the safe workload only. Decomposable.
ipf-dishonest
    IPF on the safe workload plus ``leak_workload``.
empirical
    Returns the training distribution itself (maximally leaky reference).
mixture
    ``(1 - leak_fraction) * IPF(d) + leak_fraction * theta(d)``; a tunable leak.
blackbox
    External command, see :func:`run_blackbox`.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from sdgaudit import __version__
from sdgaudit.dataset import (
    Dataset,
    IngestConfig,
    Schema,
    ThetaVector,
    ingest_csv,
    realize_dataset,
    sample_iid,
    theta_of_dataset,
    write_csv,
)
from sdgaudit.errors import SdgError
from sdgaudit.statspace import (
    MarginalSpec,
    SafeSpace,
    SafeStatistics,
    Workload,
    marginal_of_theta,
    phi_fingerprint,
    phi_of_theta,
    workload_matrix,
)

KINDS = ("ipf", "ipf-dishonest", "empirical", "mixture", "blackbox")


@dataclass(frozen=True)
class IPFResult:
    theta: ThetaVector
    iters: int
    converged: bool
    max_residual: float


def fit_ipf(
    targets: Sequence[tuple[MarginalSpec, np.ndarray]],
    schema: Schema,
    tol: float = 1e-9,
    max_iters: int = 1000,
) -> IPFResult:
    """Fit a full table to target marginals by iterative proportional fitting.

    Starts from the uniform table and rescales one marginal at a time.
    Cells whose target group is zero are clamped to zero and stay there.
    Stops once every target is matched within ``tol`` in max-norm.
    """
    shape = schema.shape
    prepared = []
    for m, target in targets:
        axes = m.axes(schema)
        target = np.asarray(target, dtype=float)
        if target.size != int(np.prod(m.shape(schema))):
            raise SdgError("schema-mismatch", f"target for {m} has {target.size} entries")
        if (target < 0).any() or abs(target.sum() - 1.0) > 1e-9:
            raise SdgError("invalid-target", f"target for {m} is not a probability vector")
        kept = sorted(axes)
        # reorder the target into schema axis order so it broadcasts against the table
        t = np.transpose(target.reshape(m.shape(schema)), [axes.index(a) for a in kept])
        other = tuple(i for i in range(len(shape)) if i not in axes)
        prepared.append((m, other, np.expand_dims(t, other)))

    table = np.full(shape, 1.0 / schema.total_cells)
    residual = np.inf
    iters = 0
    blocked = False
    for iters in range(1, max_iters + 1):
        for _, other, t in prepared:
            current = table.sum(axis=other, keepdims=True)
            ratio = np.divide(t, current, out=np.zeros_like(t), where=current > 0)
            table *= ratio
        residual = 0.0
        blocked = False
        for _, other, t in prepared:
            current = table.sum(axis=other, keepdims=True)
            residual = max(residual, float(np.abs(current - t).max()))
            blocked |= bool(((current == 0) & (t > 0)).any())
        if residual < tol:
            break
    converged = residual < tol
    if not converged and blocked:
        raise SdgError(
            "inconsistent-targets",
            f"targets demand mass in cells other targets force to zero (residual {residual:.3g} after {iters} sweeps)",
        )
    table = np.clip(table, 0.0, None)
    table /= table.sum()
    return IPFResult(ThetaVector(schema, table.ravel()), iters, converged, residual)


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str
    workload: Optional[Workload] = None
    leak_workload: Optional[Workload] = None
    leak_fraction: float = 0.0
    ipf_tol: float = 1e-9
    ipf_max_iters: int = 1000
    train_seed_policy: str = "per-run-fresh"
    fixed_train_seed: int = 0
    command: Optional[str] = None
    blackbox_train_n: int = 100_000
    blackbox_timeout: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SdgError("bad-config", f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        if self.train_seed_policy not in ("per-run-fresh", "fixed"):
            raise SdgError("bad-config", f"unknown train_seed_policy {self.train_seed_policy!r}")
        if self.kind in ("ipf", "ipf-dishonest", "mixture") and self.workload is None:
            raise SdgError("bad-config", f"{self.kind} needs a workload")
        if self.kind == "ipf-dishonest":
            self._check_leak()
        if self.kind == "mixture" and not 0.0 <= self.leak_fraction <= 1.0:
            raise SdgError("bad-config", "leak_fraction must lie in [0, 1]")
        if self.kind == "blackbox" and not self.command:
            raise SdgError("bad-config", "blackbox generator needs a command")

    def _check_leak(self):
        if self.leak_workload is None or not self.leak_workload.marginals:
            raise SdgError("bad-config", "ipf-dishonest needs a non-empty leak_workload")
        safe = workload_matrix(self.workload)
        both = np.vstack([safe, workload_matrix(self.leak_workload)])
        if np.linalg.matrix_rank(both) <= np.linalg.matrix_rank(safe):
            raise SdgError("bad-config", "leak_workload lies entirely inside the span of the safe workload")

    def descriptor(self) -> dict:
        params: dict = {
            "train_seed_policy": self.train_seed_policy,
        }
        if self.train_seed_policy == "fixed":
            params["fixed_train_seed"] = self.fixed_train_seed
        if self.workload is not None:
            params["workload"] = self.workload.to_json()
        if self.kind in ("ipf", "ipf-dishonest", "mixture"):
            params.update(ipf_tol=self.ipf_tol, ipf_max_iters=self.ipf_max_iters)
        if self.kind == "ipf-dishonest":
            params["leak_workload"] = self.leak_workload.to_json()
        if self.kind == "mixture":
            params["leak_fraction"] = self.leak_fraction
        if self.kind == "blackbox":
            params.update(command=self.command, blackbox_train_n=self.blackbox_train_n)
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_descriptor(cls, obj: dict, schema: Schema, default_workload: Optional[Workload] = None) -> "GeneratorConfig":
        """Inverse of :meth:`descriptor`; also accepts the flat form ``{kind, ...params}``."""
        params = dict(obj.get("params", {}))
        params.update({k: v for k, v in obj.items() if k not in ("kind", "params")})
        kw = {}
        if "workload" in params:
            kw["workload"] = Workload.from_json(schema, params.pop("workload"))
        else:
            kw["workload"] = default_workload
        if "leak_workload" in params:
            kw["leak_workload"] = Workload.from_json(schema, params.pop("leak_workload"))
        allowed = {
            "leak_fraction", "ipf_tol", "ipf_max_iters", "train_seed_policy",
            "fixed_train_seed", "command", "blackbox_train_n", "blackbox_timeout",
        }
        unknown = set(params) - allowed
        if unknown:
            raise SdgError("bad-config", f"unknown generator parameter(s) {sorted(unknown)}")
        kw.update(params)
        if "kind" not in obj:
            raise SdgError("bad-config", "generator spec needs a kind")
        return cls(kind=obj["kind"], **kw)


@dataclass(frozen=True)
class TrainedModel:
    config: GeneratorConfig
    fitted: ThetaVector
    train_seed: int
    iters_used: int = 0
    converged: bool = True


TrainingData = Union[Dataset, ThetaVector]


def _as_theta(data: TrainingData) -> ThetaVector:
    return data if isinstance(data, ThetaVector) else theta_of_dataset(data)


def effective_train_seed(config: GeneratorConfig, train_seed: int) -> int:
    return config.fixed_train_seed if config.train_seed_policy == "fixed" else train_seed


def _ipf_on(theta: ThetaVector, workload: Workload, config: GeneratorConfig) -> IPFResult:
    targets = [(m, marginal_of_theta(theta, m)) for m in workload.marginals]
    return fit_ipf(targets, theta.schema, config.ipf_tol, config.ipf_max_iters)


def train(
    config: GeneratorConfig,
    data: TrainingData,
    safespace: Optional[SafeSpace] = None,
    train_seed: int = 0,
) -> TrainedModel:
    """Train a generator on a dataset or directly on a distribution.

    Blackbox generators are summarized by the empirical distribution of one
    external draw of ``blackbox_train_n`` records.
    """
    theta = _as_theta(data)
    if safespace is not None and safespace.schema.fingerprint != theta.schema.fingerprint:
        raise SdgError("schema-mismatch", "training data and safe space use different schemas")
    seed = effective_train_seed(config, train_seed)
    kind = config.kind
    if kind == "empirical":
        return TrainedModel(config, ThetaVector(theta.schema, theta.values), seed)
    if kind == "ipf":
        res = _ipf_on(theta, config.workload, config)
        return TrainedModel(config, res.theta, seed, res.iters, res.converged)
    if kind == "ipf-dishonest":
        res = _ipf_on(theta, config.workload.union(config.leak_workload), config)
        return TrainedModel(config, res.theta, seed, res.iters, res.converged)
    if kind == "mixture":
        res = _ipf_on(theta, config.workload, config)
        lam = config.leak_fraction
        mixed = (1.0 - lam) * res.theta.values + lam * theta.values
        return TrainedModel(config, ThetaVector(theta.schema, mixed / mixed.sum()), seed, res.iters, res.converged)
    out = run_blackbox(config, theta, config.blackbox_train_n, seed)
    return TrainedModel(config, theta_of_dataset(out), seed)


def generate(model: TrainedModel, n: int, sample_seed: int) -> Dataset:
    if n < 1:
        raise SdgError("empty-request", "generate needs n >= 1")
    return sample_iid(model.fitted, n, sample_seed)


def synthesize(
    config: GeneratorConfig,
    data: TrainingData,
    n: int,
    train_seed: int,
    sample_seed: int,
) -> Dataset:
    """One training run followed by one synthetic draw of ``n`` records.

    For blackbox generators this is a single external invocation whose
    output is used as-is.
    """
    if config.kind == "blackbox":
        return run_blackbox(config, _as_theta(data), n, effective_train_seed(config, train_seed) ^ sample_seed)
    return generate(train(config, data, train_seed=train_seed), n, sample_seed)


def run_blackbox(config: GeneratorConfig, data: TrainingData, n: int, seed: int) -> Dataset:
    """Invoke ``<command> --train <csv> --n <count> --seed <int> --out <csv>``.

    A distribution is first rendered as ``blackbox_train_n`` integer records
    (largest-remainder rounding). A nonzero exit status raises with the
    captured stderr.
    """
    if isinstance(data, ThetaVector):
        data = realize_dataset(data, config.blackbox_train_n, seed)
    schema = data.schema
    with tempfile.TemporaryDirectory(prefix="sdgaudit-bb-") as tmp:
        train_csv = os.path.join(tmp, "train.csv")
        out_csv = os.path.join(tmp, "synthetic.csv")
        write_csv(data, train_csv)
        cmd = shlex.split(config.command) + [
            "--train", train_csv, "--n", str(n), "--seed", str(seed), "--out", out_csv,
        ]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=config.blackbox_timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise SdgError("blackbox-failed", f"could not run {cmd[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise SdgError(
                "blackbox-failed",
                f"{cmd[0]!r} exited with status {proc.returncode}: {proc.stderr.strip()[-2000:]}",
            )
        if not os.path.exists(out_csv):
            raise SdgError("blackbox-failed", f"{cmd[0]!r} did not write {out_csv}")
        pre = frozenset(a.name for a in schema.attributes if a.values is None)
        return ingest_csv(out_csv, schema, IngestConfig(pre_encoded=pre))


@dataclass(frozen=True, eq=False)
class GeneratorCard:
    """Safe-statistic values, the safe space they live in, and the generator that used them."""

    schema: Schema
    workload: Workload
    psi: SafeStatistics
    generator: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.psi.safespace_fingerprint != phi_fingerprint(self.workload):
            raise SdgError("fingerprint-mismatch", "card psi does not belong to the card's safe space")

    @property
    def safespace_fingerprint(self) -> str:
        return self.psi.safespace_fingerprint

    def content(self) -> dict:
        """Everything except the free-form metadata; what the fingerprint covers."""
        return {
            "schema": self.schema.to_json(),
            "schema_fingerprint": self.schema.fingerprint,
            "workload": self.workload.to_json(),
            "safespace_fingerprint": self.safespace_fingerprint,
            "psi": self.psi.psi.tolist(),
            "generator": self.generator,
        }

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {**self.content(), "metadata": self.metadata}

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorCard":
        try:
            schema = Schema.from_json(obj["schema"])
            if obj.get("schema_fingerprint", schema.fingerprint) != schema.fingerprint:
                raise SdgError("bad-card", "schema_fingerprint does not match the embedded schema")
            workload = Workload.from_json(schema, obj["workload"])
            psi = SafeStatistics(obj["safespace_fingerprint"], np.asarray(obj["psi"], dtype=float))
            return cls(schema, workload, psi, dict(obj["generator"]), dict(obj.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SdgError):
                raise
            raise SdgError("bad-card", f"malformed generator card: {exc!r}") from exc


def make_card(
    d_real: Dataset,
    safespace: SafeSpace,
    config: GeneratorConfig,
    purpose: str = "",
    metadata: Optional[dict] = None,
) -> GeneratorCard:
    psi = phi_of_theta(safespace, theta_of_dataset(d_real))
    meta = {
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "tool_version": __version__,
        "schema_fingerprint": d_real.schema.fingerprint,
        "purpose": purpose,
    }
    meta.update(metadata or {})
    return GeneratorCard(d_real.schema, safespace.workload, psi, config.descriptor(), meta)


def model_to_json(model: TrainedModel) -> dict:
    return {
        "generator": model.config.descriptor(),
        "train_seed": model.train_seed,
        "iters_used": model.iters_used,
        "converged": model.converged,
        "fitted": model.fitted.to_json(),
    }


def model_from_json(obj: dict, schema: Schema) -> TrainedModel:
    config = GeneratorConfig.from_descriptor(obj["generator"], schema)
    return TrainedModel(
        config,
        ThetaVector.from_json(obj["fitted"], schema),
        int(obj["train_seed"]),
        int(obj.get("iters_used", 0)),
        bool(obj.get("converged", True)),
    )
