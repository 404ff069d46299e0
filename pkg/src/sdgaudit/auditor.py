"""Practical decomposability audit of a generator against its card.

Step 1 perturbs a start distribution along a random unsafe direction,
trains the generator on both extremes and regresses the change in every
unsafe coordinate of the synthetic output on the signed positions
``s+ - s-``. The normalized coefficients give a critical direction.
Step 2 repeats the extremal construction along that direction with fresh
training runs and compares the two samples of the projected statistic
with Welch's two-sided t-test.

Rejection is evidence of leakage. Non-rejection is only "no evidence of
violation", never a certificate that the generator is decomposable.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import special

from sdgaudit.dataset import Dataset, ThetaVector, theta_of_dataset, realize_dataset
from sdgaudit.errors import SdgError
from sdgaudit.extremal import (
    Direction,
    ExtremalPair,
    direction_from_coords,
    extremal_pair,
    random_direction,
    starting_theta,
)
from sdgaudit.generators import GeneratorCard, GeneratorConfig, synthesize
from sdgaudit.statspace import SafeSpace, build_safespace, marginal_of_theta

VIOLATION = "violation-detected"
NO_EVIDENCE = "no-evidence"


@dataclass(frozen=True)
class AuditConfig:
    K1: int = 10
    K2: int = 10
    n_sym: int = 100_000
    alpha_level: float = 0.05
    direction_seed: int = 0
    retries: int = 5
    start_mode: str = "auto"
    probes: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.K1 < 2 or self.K2 < 2:
            raise SdgError("bad-config", "K1 and K2 must be at least 2")
        if self.n_sym < 1:
            raise SdgError("bad-config", "n_sym must be at least 1")
        if not 0 < self.alpha_level < 1:
            raise SdgError("bad-config", "alpha_level must lie in (0, 1)")
        if self.start_mode not in ("auto", "max-entropy", "from-dataset"):
            raise SdgError("bad-config", f"unknown start_mode {self.start_mode!r}")
        if self.probes < 1 or self.retries < 0 or self.jobs < 1:
            raise SdgError("bad-config", "probes and jobs must be >= 1, retries >= 0")


@dataclass(frozen=True, eq=False)
class CoefficientEstimate:
    a_hat: np.ndarray
    probe_direction: Direction
    s_span: float


class TestStatSample(NamedTuple):
    value: float
    run_index: int
    side: str


class TTestResult(NamedTuple):
    statistic: float
    pvalue: float
    df: float
    degenerate: bool


@dataclass(frozen=True, eq=False)
class AuditReport:
    card_fingerprint: str
    coefficient: Optional[CoefficientEstimate]
    beta_star: Optional[Direction]
    samples_plus: tuple
    samples_minus: tuple
    t_statistic: float
    p_value: float
    verdict: str
    alpha_level: float
    log: dict = field(default_factory=dict)

    @property
    def summary(self) -> str:
        if self.verdict == VIOLATION:
            return (
                f"violation detected: the generator varies with statistics outside the card "
                f"(p = {self.p_value:.3g} < {self.alpha_level})"
            )
        return (
            f"no evidence of violation at level {self.alpha_level} (p = {self.p_value:.3g}); "
            "this does not certify that the generator is decomposable"
        )

    def samples(self) -> list[TestStatSample]:
        out = [TestStatSample(v, k, "plus") for k, v in enumerate(self.samples_plus)]
        out += [TestStatSample(v, k, "minus") for k, v in enumerate(self.samples_minus)]
        return out

    def to_json(self) -> dict:
        coef = None
        if self.coefficient is not None:
            coef = {
                "a_hat": self.coefficient.a_hat.tolist(),
                "probe_direction": self.coefficient.probe_direction.coords.tolist(),
                "s_span": self.coefficient.s_span,
            }
        return {
            "card_fingerprint": self.card_fingerprint,
            "coefficient": coef,
            "beta_star": None if self.beta_star is None else self.beta_star.coords.tolist(),
            "samples_plus": list(self.samples_plus),
            "samples_minus": list(self.samples_minus),
            "t_statistic": _json_float(self.t_statistic),
            "p_value": self.p_value,
            "alpha_level": self.alpha_level,
            "verdict": self.verdict,
            "summary": self.summary,
            "log": self.log,
        }


def _json_float(x: float):
    return x if np.isfinite(x) else str(x)


def g_stat(beta: Direction, d: Dataset) -> float:
    return float(beta.beta @ theta_of_dataset(d).values)


def two_sample_t_test(xs: Sequence[float], ys: Sequence[float]) -> TTestResult:
    """Welch's unequal-variance t-test, two-sided.

    The p-value is the regularized incomplete beta function
    ``I_{df/(df+t^2)}(df/2, 1/2)`` with Welch-Satterthwaite ``df``.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2 or y.size < 2:
        raise SdgError("too-few-samples", "each sample needs at least two values")
    vx = x.var(ddof=1) / x.size
    vy = y.var(ddof=1) / y.size
    diff = x.mean() - y.mean()
    se2 = vx + vy
    if se2 == 0:
        if diff == 0:
            return TTestResult(0.0, 1.0, np.nan, True)
        return TTestResult(float(np.copysign(np.inf, diff)), 0.0, np.nan, True)
    t = diff / np.sqrt(se2)
    df = se2**2 / (vx**2 / (x.size - 1) + vy**2 / (y.size - 1))
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(float(t), min(max(p, 0.0), 1.0), float(df), False)


class _Runner:
    """Executes independent generator runs, optionally on a thread pool."""

    def __init__(self, gen: GeneratorConfig, n_sym: int, jobs: int):
        self.gen = gen
        self.n_sym = n_sym
        self.jobs = jobs

    def thetas(self, data: ThetaVector, seeds: Sequence[tuple[int, int]]) -> list[np.ndarray]:
        def one(pair):
            train_seed, sample_seed = pair
            try:
                out = synthesize(self.gen, data, self.n_sym, train_seed, sample_seed)
            except SdgError as exc:
                raise SdgError(exc.code, f"run with train seed {train_seed}: {exc.message}") from exc
            return theta_of_dataset(out).values

        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                return list(pool.map(one, seeds))
        return [one(s) for s in seeds]


def _seed_pairs(seed: int, k: int) -> list[tuple[int, int]]:
    state = np.random.SeedSequence(seed).generate_state(2 * k, dtype=np.uint32)
    return [(int(state[2 * i]), int(state[2 * i + 1])) for i in range(k)]


def _realization_deviation(gen: GeneratorConfig, pair: ExtremalPair) -> Optional[float]:
    """Max marginal deviation introduced by rendering the extremes as integer records."""
    if gen.kind != "blackbox":
        return None
    worst = 0.0
    for theta in (pair.theta_plus, pair.theta_minus):
        realized = theta_of_dataset(realize_dataset(theta, gen.blackbox_train_n, 0))
        for m in (gen.workload.marginals if gen.workload is not None else ()):
            worst = max(worst, float(np.abs(marginal_of_theta(realized, m) - marginal_of_theta(theta, m)).max()))
    return worst


def estimate_coefficients(
    gen: GeneratorConfig,
    pair: ExtremalPair,
    ss: SafeSpace,
    cfg: AuditConfig,
    seed: Optional[int] = None,
    _runner: Optional[_Runner] = None,
) -> CoefficientEstimate:
    """Per-coordinate slope of the generator output along the unsafe basis.

    ``a_hat[i] = mean_k (b_i . theta(D+_k) - b_i . theta(D-_k)) / (s+ - s-)``
    over ``K1`` independent runs per side.
    """
    runner = _runner or _Runner(gen, cfg.n_sym, cfg.jobs)
    seed = cfg.direction_seed if seed is None else seed
    seeds = _seed_pairs(seed, 2 * cfg.K1)
    plus = np.array(runner.thetas(pair.theta_plus, seeds[: cfg.K1]))
    minus = np.array(runner.thetas(pair.theta_minus, seeds[cfg.K1:]))
    diff = (plus - minus) @ ss.perp_basis
    a_hat = diff.mean(axis=0) / pair.span
    return CoefficientEstimate(a_hat, pair.direction, pair.span)


def critical_direction(est: CoefficientEstimate, ss: SafeSpace) -> Direction:
    if not np.any(est.a_hat):
        raise SdgError("no-variation-signal", "all estimated coefficients are exactly zero")
    return direction_from_coords(ss, est.a_hat)


def _choose_start(card: GeneratorCard, ss: SafeSpace, d_start: Optional[Dataset], cfg: AuditConfig):
    mode = cfg.start_mode
    if mode == "auto":
        mode = "from-dataset" if d_start is not None else "max-entropy"
    return mode, starting_theta(ss, card.psi, mode, d_start)


def audit(
    card: GeneratorCard,
    gen: GeneratorConfig,
    d_start: Optional[Dataset] = None,
    cfg: AuditConfig = AuditConfig(),
    safespace: Optional[SafeSpace] = None,
) -> AuditReport:
    """Run the two-step audit and return a report with a full seed ledger.

    ``safespace`` defaults to the card's workload with its full complement;
    pass a sampled complement for large domains.
    """
    ss = safespace if safespace is not None else build_safespace(card.workload)
    if ss.phi_fingerprint != card.safespace_fingerprint:
        raise SdgError("fingerprint-mismatch", "safe space does not match the card")
    if d_start is not None and d_start.schema.fingerprint != card.schema.fingerprint:
        raise SdgError("schema-mismatch", "starting dataset uses a different schema than the card")

    state = [int(s) for s in np.random.SeedSequence(cfg.direction_seed).generate_state(cfg.retries + cfg.probes + 2)]
    step1_seed, step2_seed = state[0], state[1]
    direction_seeds = state[2:]
    log: dict = {
        "direction_seed": cfg.direction_seed,
        "config": {
            "K1": cfg.K1, "K2": cfg.K2, "n_sym": cfg.n_sym, "alpha_level": cfg.alpha_level,
            "retries": cfg.retries, "probes": cfg.probes, "start_mode": cfg.start_mode,
        },
        "generator": gen.descriptor(),
        "safespace": ss.descriptor(),
    }

    def finish(verdict_p, t, coef=None, beta_star=None, plus=(), minus=()):
        verdict = VIOLATION if verdict_p < cfg.alpha_level else NO_EVIDENCE
        return AuditReport(
            card.fingerprint, coef, beta_star, tuple(plus), tuple(minus), t, verdict_p, verdict, cfg.alpha_level, log
        )

    if ss.dim_perp == 0:
        log["note"] = "safe space is the whole statistic space; nothing can leak"
        return finish(1.0, 0.0)

    mode, start = _choose_start(card, ss, d_start, cfg)
    log["start_mode"] = mode
    runner = _Runner(gen, cfg.n_sym, cfg.jobs)

    # step 1: probe direction(s), extremal pairs, coefficient regression
    estimates = []
    attempts = []
    candidates = iter(direction_seeds)
    for probe in range(cfg.probes):
        pair = None
        for dseed in candidates:
            try:
                pair = extremal_pair(start, random_direction(ss, dseed))
                attempts.append({"seed": dseed, "ok": True})
                break
            except SdgError as exc:
                if exc.code != "degenerate-start":
                    raise
                attempts.append({"seed": dseed, "ok": False})
        if pair is None:
            log["step1_directions"] = attempts
            raise SdgError("no-interior-start", "every probe direction was blocked at the start; the start has empty cells")
        probe_seed = step1_seed + probe
        estimates.append(estimate_coefficients(gen, pair, ss, cfg, seed=probe_seed, _runner=runner))
        log.setdefault("step1", []).append(
            {
                "alpha_plus": pair.alpha_plus,
                "alpha_minus": pair.alpha_minus,
                "run_seed": probe_seed,
                "run_seeds": _seed_pairs(probe_seed, 2 * cfg.K1),
                "realization_deviation": _realization_deviation(gen, pair),
            }
        )
    log["step1_directions"] = attempts
    a_hat = np.mean([e.a_hat for e in estimates], axis=0)
    coef = CoefficientEstimate(a_hat, estimates[0].probe_direction, estimates[0].s_span)
    try:
        beta_star = critical_direction(coef, ss)
    except SdgError:
        log["no_variation_signal"] = True
        return finish(1.0, 0.0, coef)

    # step 2: fresh runs along the critical direction
    try:
        pair2 = extremal_pair(start, beta_star)
    except SdgError as exc:
        raise SdgError("no-interior-start", f"critical direction is blocked at the start: {exc.message}") from exc
    seeds = _seed_pairs(step2_seed, 2 * cfg.K2)
    plus = [float(beta_star.beta @ th) for th in runner.thetas(pair2.theta_plus, seeds[: cfg.K2])]
    minus = [float(beta_star.beta @ th) for th in runner.thetas(pair2.theta_minus, seeds[cfg.K2:])]
    log["step2"] = {
        "alpha_plus": pair2.alpha_plus,
        "alpha_minus": pair2.alpha_minus,
        "run_seed": step2_seed,
        "run_seeds": seeds,
        "realization_deviation": _realization_deviation(gen, pair2),
    }
    res = two_sample_t_test(plus, minus)
    if res.degenerate:
        log["degenerate_t_test"] = True
    log["welch_df"] = None if np.isnan(res.df) else res.df
    return finish(res.pvalue, res.statistic, coef, beta_star, plus, minus)


def dump_test_distributions(report: AuditReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["side", "run_index", "value"])
        for s in report.samples():
            w.writerow([s.side, s.run_index, repr(s.value)])


def read_test_distributions(path) -> tuple[list[float], list[float]]:
    plus, minus = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            (plus if row["side"] == "plus" else minus).append(float(row["value"]))
    return plus, minus


def report_digest(report: AuditReport) -> str:
    blob = json.dumps(report.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
