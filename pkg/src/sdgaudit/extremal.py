"""Extremal distribution pairs along unsafe directions.

Moving a start distribution along a unit vector of the complement leaves
every safe statistic unchanged; the extremal pair pushes it in both senses
until a cell hits zero (a ratio test against the simplex boundary).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sdgaudit.dataset import Dataset, ThetaVector, theta_of_dataset
from sdgaudit.errors import SdgError
from sdgaudit.generators import fit_ipf
from sdgaudit.statspace import SafeSpace, SafeStatistics, check_psi, marginals_from_psi, phi_of_theta

CLAMP_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class Direction:
    safespace_fingerprint: str
    beta: np.ndarray
    coords: np.ndarray

    def to_json(self) -> dict:
        return {"safespace_fingerprint": self.safespace_fingerprint, "coords": self.coords.tolist()}


def direction_from_coords(ss: SafeSpace, coords: np.ndarray) -> Direction:
    coords = np.asarray(coords, dtype=float)
    norm = np.linalg.norm(coords)
    if norm == 0:
        raise SdgError("zero-direction", "direction coordinates are all zero")
    coords = coords / norm
    return Direction(ss.fingerprint, ss.perp_basis @ coords, coords)


def random_direction(ss: SafeSpace, seed: int) -> Direction:
    """Isotropic unit vector in the (possibly sampled) complement."""
    if ss.dim_perp == 0:
        raise SdgError("phi-is-everything", "the safe space is the whole statistic space; nothing to audit")
    rng = np.random.default_rng(seed)
    while True:
        z = rng.standard_normal(ss.dim_perp)
        if np.linalg.norm(z) > 0:
            return direction_from_coords(ss, z)


@dataclass(frozen=True, eq=False)
class ExtremalPair:
    theta_minus: ThetaVector
    theta_plus: ThetaVector
    alpha_plus: float
    alpha_minus: float
    direction: Direction
    start: ThetaVector

    @property
    def s_plus(self) -> float:
        return self.alpha_plus

    @property
    def s_minus(self) -> float:
        return -self.alpha_minus

    @property
    def span(self) -> float:
        return self.s_plus - self.s_minus

    def to_json(self) -> dict:
        return {
            "safespace_fingerprint": self.direction.safespace_fingerprint,
            "alpha_plus": self.alpha_plus,
            "alpha_minus": self.alpha_minus,
            "direction_coords": self.direction.coords.tolist(),
            "theta_plus": self.theta_plus.values.tolist(),
            "theta_minus": self.theta_minus.values.tolist(),
        }


def max_step(start: np.ndarray, beta: np.ndarray) -> float:
    """Largest ``a`` with ``start + a * beta >= 0``; ``inf`` if ``beta >= 0``."""
    neg = beta < 0
    if not neg.any():
        return np.inf
    return float(np.min(start[neg] / -beta[neg]))


def _move(start: np.ndarray, beta: np.ndarray, a: float) -> np.ndarray:
    v = start + a * beta
    tiny = (v < 0) & (v >= -CLAMP_TOL)
    v[tiny] = 0.0
    # the blocking cell is zero by construction; remove rounding residue there
    v[np.abs(v) <= CLAMP_TOL * max(1.0, a)] = 0.0
    return v


def extremal_pair(start: ThetaVector, direction: Direction) -> ExtremalPair:
    beta = direction.beta
    if beta.shape != start.values.shape:
        raise SdgError("schema-mismatch", "direction and start live in different cell spaces")
    x = start.values
    alpha_plus = max_step(x, beta)
    alpha_minus = max_step(x, -beta)
    if not (np.isfinite(alpha_plus) and np.isfinite(alpha_minus)):
        raise SdgError("bad-direction", "direction does not sum to zero")
    if alpha_plus <= 0 or alpha_minus <= 0:
        raise SdgError(
            "degenerate-start",
            "start sits on the simplex boundary in a blocking cell; choose another start or direction",
        )
    hint = start.sample_size_hint
    plus = ThetaVector(start.schema, _move(x, beta, alpha_plus), hint)
    minus = ThetaVector(start.schema, _move(x, beta, -alpha_minus), hint)
    return ExtremalPair(minus, plus, alpha_plus, alpha_minus, direction, start)


def starting_theta(
    ss: SafeSpace,
    psi: SafeStatistics,
    mode: str = "max-entropy",
    d: Optional[Dataset] = None,
    tol: float = 1e-12,
    max_iters: int = 5000,
) -> ThetaVector:
    """A distribution whose safe statistics equal ``psi``.

    ``max-entropy`` fits IPF to the marginals implied by ``psi``;
    ``from-dataset`` uses the empirical distribution of ``d`` and checks it.
    """
    check_psi(ss, psi)
    if mode == "from-dataset":
        if d is None:
            raise SdgError("bad-config", "from-dataset start needs a dataset")
        theta = theta_of_dataset(d)
        got = phi_of_theta(ss, theta).psi
        if np.abs(got - psi.psi).max() > 1e-10:
            raise SdgError("psi-mismatch", "the starting dataset's safe statistics differ from the card")
        return theta
    if mode != "max-entropy":
        raise SdgError("bad-config", f"unknown start mode {mode!r}")
    targets = []
    for m, marg in marginals_from_psi(ss, psi):
        marg = np.where(marg < 1e-15, 0.0, marg)
        targets.append((m, marg / marg.sum()))
    return fit_ipf(targets, ss.schema, tol=tol, max_iters=max_iters).theta
