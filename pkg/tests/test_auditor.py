import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdgaudit import (
    AuditConfig,
    Dataset,
    GeneratorConfig,
    MarginalSpec,
    Schema,
    SdgError,
    ThetaVector,
    Workload,
    audit,
    build_safespace,
    critical_direction,
    direction_from_coords,
    estimate_coefficients,
    extremal_pair,
    g_stat,
    make_card,
    random_direction,
    realize_dataset,
    two_sample_t_test,
)
from sdgaudit.auditor import CoefficientEstimate, dump_test_distributions, read_test_distributions, report_digest

from oracles import welch_reference


class TestWelch:
    def test_frozen_example(self):
        res = two_sample_t_test([1, 1.1, 0.9, 1, 1], [2, 2.1, 1.9, 2, 2])
        assert res.statistic == pytest.approx(-22.360679774997884, rel=1e-12)
        assert res.df == pytest.approx(8.0, rel=1e-12)
        assert res.pvalue == pytest.approx(1.6924559265112233e-08, rel=1e-6)
        assert not res.degenerate

    def test_against_quadrature(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            nx, ny = rng.integers(2, 15, size=2)
            xs = rng.normal(0, rng.uniform(0.1, 3), nx)
            ys = rng.normal(rng.normal(0, 1), rng.uniform(0.1, 3), ny)
            t, df, p = welch_reference(xs, ys)
            res = two_sample_t_test(xs, ys)
            assert res.statistic == pytest.approx(t, rel=1e-9)
            assert res.df == pytest.approx(df, rel=1e-9)
            assert abs(res.pvalue - p) <= 1e-6

    def test_degenerate(self):
        same = two_sample_t_test([1.0, 1.0], [1.0, 1.0])
        assert same.pvalue == 1.0 and same.degenerate
        apart = two_sample_t_test([1.0, 1.0], [2.0, 2.0])
        assert apart.pvalue == 0.0 and apart.degenerate and apart.statistic == -np.inf

    def test_too_few(self):
        with pytest.raises(SdgError):
            two_sample_t_test([1.0], [1.0, 2.0])

    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
        st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
    )
    def test_symmetry_and_range(self, xs, ys):
        a, b = two_sample_t_test(xs, ys), two_sample_t_test(ys, xs)
        assert 0.0 <= a.pvalue <= 1.0
        assert a.pvalue == pytest.approx(b.pvalue, abs=1e-12)
        if np.isfinite(a.statistic):
            assert a.statistic == pytest.approx(-b.statistic, abs=1e-9)


class TestGStat:
    def test_brute_force(self):
        s = Schema.from_cardinalities((3, 2, 2))
        ss = build_safespace(Workload.all_kway(s, 2))
        d = random_direction(ss, 1)
        rng = np.random.default_rng(1)
        recs = np.column_stack([rng.integers(0, c, 50) for c in s.shape])
        brute = sum(d.beta[s.index(tuple(r))] for r in recs) / 50
        assert g_stat(d, Dataset(s, recs)) == pytest.approx(brute, abs=1e-14)

    def test_example_zero(self):
        s = Schema.from_cardinalities((2, 2))
        ss = build_safespace(Workload.all_kway(s, 1))
        d = direction_from_coords(ss, [1.0])
        assert g_stat(d, Dataset(s, [(0, 0), (0, 1), (1, 0), (1, 1)])) == pytest.approx(0.0, abs=1e-15)

    def test_linear_in_concatenation(self):
        s = Schema.from_cardinalities((3, 3))
        ss = build_safespace(Workload.all_kway(s, 1))
        d = random_direction(ss, 0)
        rng = np.random.default_rng(2)
        a = Dataset(s, rng.integers(0, 3, (30, 2)))
        b = Dataset(s, rng.integers(0, 3, (70, 2)))
        joint = Dataset(s, np.vstack([a.records, b.records]))
        assert g_stat(d, joint) == pytest.approx(0.3 * g_stat(d, a) + 0.7 * g_stat(d, b), abs=1e-14)


def uniform_setup(shape=(4, 3, 2)):
    s = Schema.from_cardinalities(shape)
    ss = build_safespace(Workload.all_kway(s, 2))
    return s, ss, ThetaVector(s, np.full(s.total_cells, 1 / s.total_cells))


class TestCoefficients:
    def test_empirical_recovers_probe_direction(self):
        s, ss, start = uniform_setup()
        pair = extremal_pair(start, random_direction(ss, 7))
        cfg = AuditConfig(K1=10, n_sym=20_000)
        est = estimate_coefficients(GeneratorConfig("empirical"), pair, ss, cfg, seed=3)
        b = ss.perp_basis
        var = 0.0
        for th in (pair.theta_plus.values, pair.theta_minus.values):
            var = var + ((b**2).T @ th - (b.T @ th) ** 2) / cfg.n_sym
        sd = np.sqrt(var / cfg.K1) / pair.span
        assert np.all(np.abs(est.a_hat - pair.direction.coords) <= 4 * sd + 1e-12)

    def test_honest_coefficients_are_zero_mean(self):
        s, ss, start = uniform_setup((3, 3, 2))
        w = Workload.all_kway(s, 2)
        pair = extremal_pair(start, random_direction(ss, 2))
        cfg = AuditConfig(K1=10, n_sym=20_000)
        est = estimate_coefficients(GeneratorConfig("ipf", workload=w), pair, ss, cfg, seed=0)
        # ipf output is identical on both extremes, so only sampling noise remains
        assert np.abs(est.a_hat).max() < 6 * np.sqrt(2 / (cfg.K1 * cfg.n_sym)) / pair.span

    def test_critical_direction_invariance(self):
        s, ss, _ = uniform_setup()
        rng = np.random.default_rng(0)
        a = rng.normal(size=ss.dim_perp)
        probe = random_direction(ss, 0)
        base = critical_direction(CoefficientEstimate(a, probe, 1.0), ss)
        for scale in (0.001, 3.0, 1e6):
            scaled = critical_direction(CoefficientEstimate(scale * a, probe, 1.0), ss)
            np.testing.assert_allclose(scaled.beta, base.beta, atol=1e-14)
        flipped = critical_direction(CoefficientEstimate(-a, probe, 1.0), ss)
        np.testing.assert_allclose(flipped.beta, -base.beta, atol=1e-14)
        assert abs(np.linalg.norm(base.beta) - 1) < 1e-12

    def test_no_variation_signal(self):
        s, ss, _ = uniform_setup()
        with pytest.raises(SdgError) as e:
            critical_direction(CoefficientEstimate(np.zeros(ss.dim_perp), random_direction(ss, 0), 1.0), ss)
        assert e.value.code == "no-variation-signal"


@pytest.fixture(scope="module")
def toy():
    s = Schema.from_cardinalities((3, 3, 2))
    w = Workload.all_kway(s, 2)
    ss = build_safespace(w)
    rng = np.random.default_rng(9)
    d = realize_dataset(ThetaVector(s, rng.dirichlet(np.ones(18) * 4)), 5000, 0)
    honest = GeneratorConfig("ipf", workload=w)
    card = make_card(d, ss, honest)
    return s, w, ss, d, card, honest


FAST = AuditConfig(K1=5, K2=10, n_sym=20_000, direction_seed=1)


class TestAudit:
    def test_dishonest_detected(self, toy):
        s, w, ss, d, card, _ = toy
        leak = GeneratorConfig("ipf-dishonest", workload=w, leak_workload=Workload.all_kway(s, 3))
        rep = audit(card, leak, d, FAST)
        assert rep.verdict == "violation-detected" and rep.p_value < 1e-6
        assert "violation detected" in rep.summary

    def test_honest_report(self, toy, tmp_path):
        s, w, ss, d, card, honest = toy
        rep = audit(card, honest, d, FAST)
        assert rep.verdict in ("no-evidence", "violation-detected")
        if rep.verdict == "no-evidence":
            assert "no evidence of violation" in rep.summary and "does not certify" in rep.summary
        assert len(rep.samples_plus) == len(rep.samples_minus) == 10
        assert rep.log["start_mode"] == "from-dataset"
        assert rep.coefficient.a_hat.shape == (ss.dim_perp,)
        path = tmp_path / "samples.csv"
        dump_test_distributions(rep, path)
        assert len(path.read_text().strip().splitlines()) == 21
        plus, minus = read_test_distributions(path)
        assert plus == list(rep.samples_plus) and minus == list(rep.samples_minus)
        # honest samples from both extremes overlap
        assert max(minus) >= min(plus) and max(plus) >= min(minus)
        se = np.sqrt(np.var(plus, ddof=1) / len(plus) + np.var(minus, ddof=1) / len(minus))
        assert abs(np.mean(plus) - np.mean(minus)) < 2 * se

    def test_reproducible_and_jobs_invariant(self, toy):
        s, w, ss, d, card, honest = toy
        cfg = AuditConfig(K1=3, K2=3, n_sym=2000, direction_seed=5)
        a = report_digest(audit(card, honest, d, cfg))
        assert a == report_digest(audit(card, honest, d, cfg))
        par = AuditConfig(K1=3, K2=3, n_sym=2000, direction_seed=5, jobs=2)
        assert report_digest(audit(card, honest, d, par)) == a
        other = AuditConfig(K1=3, K2=3, n_sym=2000, direction_seed=6)
        assert report_digest(audit(card, honest, d, other)) != a

    def test_max_entropy_start(self, toy):
        s, w, ss, d, card, honest = toy
        rep = audit(card, GeneratorConfig("empirical"), None, FAST)
        assert rep.log["start_mode"] == "max-entropy"
        assert rep.verdict == "violation-detected"

    def test_nothing_to_audit(self):
        s = Schema.from_cardinalities((2, 2))
        w = Workload.all_kway(s, 2)
        d = Dataset(s, [(0, 0), (1, 1)])
        rep = audit(make_card(d, build_safespace(w), GeneratorConfig("ipf", workload=w)), GeneratorConfig("empirical"), d)
        assert rep.verdict == "no-evidence" and "note" in rep.log

    def test_no_interior_start(self):
        s = Schema.from_cardinalities((2, 2))
        w = Workload.all_kway(s, 1)
        d = Dataset(s, [(0, 0), (0, 0)])
        card = make_card(d, build_safespace(w), GeneratorConfig("ipf", workload=w))
        with pytest.raises(SdgError) as e:
            audit(card, GeneratorConfig("empirical"), d, AuditConfig(K1=2, K2=2, n_sym=10))
        assert e.value.code == "no-interior-start"

    def test_fingerprint_mismatch(self, toy):
        s, w, ss, d, card, honest = toy
        other = build_safespace(Workload(s, (MarginalSpec(("A", "B")),)))
        with pytest.raises(SdgError) as e:
            audit(card, honest, d, FAST, safespace=other)
        assert e.value.code == "fingerprint-mismatch"

    def test_bad_config(self):
        for kwargs in ({"K1": 1}, {"alpha_level": 1.5}, {"start_mode": "x"}, {"n_sym": 0}):
            with pytest.raises(SdgError):
                AuditConfig(**kwargs)

    def test_json(self, toy):
        import json

        s, w, ss, d, card, honest = toy
        obj = json.loads(json.dumps(audit(card, honest, d, AuditConfig(K1=2, K2=2, n_sym=500)).to_json()))
        for key in ("card_fingerprint", "beta_star", "samples_plus", "p_value", "verdict", "log"):
            assert key in obj
        assert obj["log"]["step2"]["run_seeds"]
