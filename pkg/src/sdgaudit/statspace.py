"""Marginal workloads and the safe/unsafe decomposition of theta-space.

The safe space is the row space of the workload's stacked 0/1 indicator
matrix. Because every marginal sums to one, the all-ones functional lies
in it, so every unsafe direction has entries summing to zero.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from sdgaudit.dataset import Schema, ThetaVector
from sdgaudit.errors import SdgError

DENSE_CELL_CAP = 5000
SAMPLED_CELL_CAP = 200_000
RANK_RTOL = 1e-10
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class MarginalSpec:
    attributes: tuple[str, ...]

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise SdgError("bad-workload", "a marginal needs at least one attribute")
        if len(set(attrs)) != len(attrs):
            raise SdgError("bad-workload", f"duplicate attribute in marginal {attrs}")

    @property
    def width(self) -> int:
        return len(self.attributes)

    def axes(self, schema: Schema) -> tuple[int, ...]:
        return tuple(schema.axis(a) for a in self.attributes)

    def shape(self, schema: Schema) -> tuple[int, ...]:
        return tuple(schema.shape[i] for i in self.axes(schema))

    def __str__(self):
        return "x".join(self.attributes)


@dataclass(frozen=True)
class Workload:
    schema: Schema
    marginals: tuple[MarginalSpec, ...]

    def __post_init__(self):
        ms = tuple(m if isinstance(m, MarginalSpec) else MarginalSpec(tuple(m)) for m in self.marginals)
        object.__setattr__(self, "marginals", ms)
        seen = set()
        for m in ms:
            m.axes(self.schema)
            key = frozenset(m.attributes)
            if key in seen:
                raise SdgError("bad-workload", f"marginal {m} listed twice")
            seen.add(key)

    @classmethod
    def all_kway(cls, schema: Schema, k: int, attributes: Optional[Sequence[str]] = None) -> "Workload":
        attrs = list(attributes) if attributes is not None else list(schema.names)
        return cls(schema, tuple(MarginalSpec(c) for c in itertools.combinations(attrs, k)))

    @classmethod
    def from_json(cls, schema: Schema, obj) -> "Workload":
        if not isinstance(obj, list) or not all(isinstance(m, list) for m in obj):
            raise SdgError("bad-workload", "workload must be a JSON list of attribute-name lists")
        return cls(schema, tuple(MarginalSpec(tuple(str(a) for a in m)) for m in obj))

    def to_json(self) -> list[list[str]]:
        return [list(m.attributes) for m in self.marginals]

    def canonical(self) -> "Workload":
        return Workload(self.schema, tuple(sorted(self.marginals, key=lambda m: m.attributes)))

    def union(self, other: "Workload") -> "Workload":
        have = {frozenset(m.attributes) for m in self.marginals}
        extra = tuple(m for m in other.marginals if frozenset(m.attributes) not in have)
        return Workload(self.schema, self.marginals + extra)

    @property
    def n_rows(self) -> int:
        return sum(int(np.prod(m.shape(self.schema))) for m in self.marginals)


def _check_schema(a: Schema, b: Schema):
    if a.fingerprint != b.fingerprint:
        raise SdgError("schema-mismatch", "objects belong to different schemas")


def marginal_of_table(table: np.ndarray, schema: Schema, m: MarginalSpec) -> np.ndarray:
    """Marginal of a cell vector (not necessarily normalized), flattened in ``m``'s attribute order."""
    axes = m.axes(schema)
    t = np.asarray(table, dtype=float).reshape(schema.shape)
    other = tuple(i for i in range(len(schema.shape)) if i not in axes)
    summed = t.sum(axis=other)
    # summed keeps the kept axes in schema order; permute to m's order
    kept = sorted(axes)
    return np.transpose(summed, [kept.index(a) for a in axes]).ravel()


def marginal_of_theta(theta: ThetaVector, m: MarginalSpec) -> np.ndarray:
    return marginal_of_table(theta.values, theta.schema, m)


def marginal_cell_map(schema: Schema, m: MarginalSpec) -> np.ndarray:
    """For each cell, the flat index of its value tuple within marginal ``m``."""
    axes = m.axes(schema)
    coords = np.unravel_index(np.arange(schema.total_cells), schema.shape)
    return np.ravel_multi_index(tuple(coords[a] for a in axes), m.shape(schema))


def workload_matrix(w: Workload) -> np.ndarray:
    blocks = []
    cols = np.arange(w.schema.total_cells)
    for m in w.marginals:
        rows = int(np.prod(m.shape(w.schema)))
        block = np.zeros((rows, w.schema.total_cells))
        block[marginal_cell_map(w.schema, m), cols] = 1.0
        blocks.append(block)
    return np.vstack(blocks)


def _fingerprint(*parts) -> str:
    payload = json.dumps(parts, separators=(",", ":"), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def phi_fingerprint(w: Workload) -> str:
    return _fingerprint(w.schema.fingerprint, sorted(list(m.attributes) for m in w.marginals))


@dataclass(frozen=True, eq=False)
class SafeSpace:
    schema: Schema
    workload: Workload
    phi_basis: np.ndarray
    perp_basis: np.ndarray
    perp_is_sampled: bool = False
    perp_seed: Optional[int] = None
    perp_count: Optional[int] = None

    def __post_init__(self):
        for arr in (self.phi_basis, self.perp_basis):
            arr.flags.writeable = False

    @property
    def dim_phi(self) -> int:
        return int(self.phi_basis.shape[1])

    @property
    def dim_perp(self) -> int:
        return int(self.perp_basis.shape[1])

    @property
    def phi_fingerprint(self) -> str:
        """Identifies the safe space alone; what safe-statistic coordinates are tied to."""
        return phi_fingerprint(self.workload)

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.phi_fingerprint, self.perp_seed, self.perp_count)

    def descriptor(self) -> dict:
        out = {
            "workload": self.workload.to_json(),
            "phi_fingerprint": self.phi_fingerprint,
            "fingerprint": self.fingerprint,
            "dim_phi": self.dim_phi,
            "dim_perp": self.dim_perp,
            "perp_is_sampled": self.perp_is_sampled,
        }
        if self.perp_is_sampled:
            out.update(perp_seed=self.perp_seed, perp_count=self.perp_count)
        return out


@dataclass(frozen=True, eq=False)
class SafeStatistics:
    safespace_fingerprint: str
    psi: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)


def _phi_basis(matrix: np.ndarray) -> np.ndarray:
    _, s, vt = np.linalg.svd(matrix, full_matrices=False)
    rank = int((s > RANK_RTOL * s[0]).sum()) if s.size else 0
    return vt[:rank].T.copy()


def build_safespace(w: Workload, cap: int = DENSE_CELL_CAP) -> SafeSpace:
    """Orthonormal bases of the safe space and of its full complement."""
    if w.schema.total_cells > cap:
        raise SdgError(
            "domain-too-large",
            f"{w.schema.total_cells} cells exceeds the dense basis cap of {cap}; "
            "use sample_perp_subspace to audit on a sampled complement",
        )
    if not w.marginals:
        raise SdgError("bad-workload", "empty workload")
    canon = w.canonical()
    phi = _phi_basis(workload_matrix(canon))
    q, _ = np.linalg.qr(phi, mode="complete")
    perp = q[:, phi.shape[1]:].copy()
    ss = SafeSpace(w.schema, canon, phi, perp)
    _assert_zero_sum(ss)
    return ss


def _assert_zero_sum(ss: SafeSpace):
    if ss.dim_perp and np.abs(ss.perp_basis.sum(axis=0)).max() > 1e-10:
        raise AssertionError("total mass functional is not inside the safe space")


def sample_perp_subspace(
    w: Workload,
    probe_specs: Sequence[MarginalSpec],
    count: int,
    seed: int,
    cap: int = SAMPLED_CELL_CAP,
) -> SafeSpace:
    """Complement subspace spanned by randomly chosen probe statistics.

    ``count`` indicator rows are drawn without replacement from the probe
    marginals, projected onto the complement of the safe space and
    orthonormalized; residuals below ``1e-10`` are discarded.
    """
    if w.schema.total_cells > cap:
        raise SdgError("domain-too-large", f"{w.schema.total_cells} cells exceeds the sampled-basis cap of {cap}")
    probes = Workload(w.schema, tuple(probe_specs))
    if not probes.marginals:
        raise SdgError("bad-workload", "no probe marginals given")
    canon = w.canonical()
    phi = _phi_basis(workload_matrix(canon))
    rows = workload_matrix(probes)
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(rows.shape[0], size=min(count, rows.shape[0]), replace=False))
    residual = rows[pick].T
    residual = residual - phi @ (phi.T @ residual)
    residual = residual[:, np.linalg.norm(residual, axis=0) >= RESIDUAL_TOL]
    if residual.shape[1] == 0:
        raise SdgError("probes-inside-phi", "every sampled probe statistic lies in the safe space")
    u, s, _ = np.linalg.svd(residual, full_matrices=False)
    perp = u[:, s > max(RESIDUAL_TOL, RANK_RTOL * s[0])]
    # re-project to remove any safe-space drift picked up by the factorization
    perp = perp - phi @ (phi.T @ perp)
    perp, _ = np.linalg.qr(perp)
    ss = SafeSpace(w.schema, canon, phi, perp.copy(), perp_is_sampled=True, perp_seed=seed, perp_count=count)
    _assert_zero_sum(ss)
    return ss


def _check_theta(ss: SafeSpace, theta: ThetaVector):
    _check_schema(ss.schema, theta.schema)


def phi_of_theta(ss: SafeSpace, theta: ThetaVector) -> SafeStatistics:
    _check_theta(ss, theta)
    return SafeStatistics(ss.phi_fingerprint, ss.phi_basis.T @ theta.values)


def perp_component(ss: SafeSpace, theta: ThetaVector) -> np.ndarray:
    _check_theta(ss, theta)
    return ss.perp_basis.T @ theta.values


def check_psi(ss: SafeSpace, psi: SafeStatistics) -> None:
    if psi.safespace_fingerprint != ss.phi_fingerprint:
        raise SdgError("fingerprint-mismatch", "safe statistics were computed for a different safe space")
    if psi.psi.shape != (ss.dim_phi,):
        raise SdgError("fingerprint-mismatch", f"psi has length {psi.psi.size}, safe space has dimension {ss.dim_phi}")


def marginals_from_psi(ss: SafeSpace, psi: SafeStatistics) -> list[tuple[MarginalSpec, np.ndarray]]:
    """Workload marginals implied by the safe statistics (exact: the complement is annihilated)."""
    check_psi(ss, psi)
    projected = ss.phi_basis @ psi.psi
    return [(m, marginal_of_table(projected, ss.schema, m)) for m in ss.workload.marginals]
