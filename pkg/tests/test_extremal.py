import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdgaudit import (
    Dataset,
    MarginalSpec,
    Schema,
    SdgError,
    ThetaVector,
    Workload,
    build_safespace,
    direction_from_coords,
    extremal_pair,
    marginal_of_theta,
    phi_of_theta,
    random_direction,
    realize_dataset,
    sample_perp_subspace,
    starting_theta,
    theta_of_dataset,
)
from sdgaudit.extremal import max_step

from oracles import entropy, grid_max_step, marginal_indicator_rows, maxent_cvxpy


def two_by_two():
    s = Schema.from_cardinalities((2, 2))
    return build_safespace(Workload.all_kway(s, 1))


class TestDirection:
    def test_invariants_over_draws(self):
        ss = build_safespace(Workload.all_kway(Schema.from_cardinalities((3, 3, 2)), 2))
        m = np.vstack([marginal_indicator_rows((3, 3, 2), ax) for ax in ((0, 1), (0, 2), (1, 2))])
        for seed in range(1000):
            beta = random_direction(ss, seed).beta
            assert abs(np.linalg.norm(beta) - 1) < 1e-12
            assert abs(beta.sum()) < 1e-12
            assert np.abs(m @ beta).max() < 1e-12

    def test_deterministic(self):
        ss = two_by_two()
        assert np.array_equal(random_direction(ss, 3).beta, random_direction(ss, 3).beta)

    def test_isotropic_coords(self):
        ss = build_safespace(Workload.all_kway(Schema.from_cardinalities((3, 3)), 1))
        mean = np.mean([random_direction(ss, s).coords for s in range(4000)], axis=0)
        # each coordinate has variance 1/dim; mean over 4000 draws has sd 0.0079
        assert np.abs(mean).max() < 0.04

    def test_zero_and_full(self):
        ss = two_by_two()
        with pytest.raises(SdgError) as e:
            direction_from_coords(ss, [0.0])
        assert e.value.code == "zero-direction"
        full = build_safespace(Workload.all_kway(Schema.from_cardinalities((2, 2)), 2))
        with pytest.raises(SdgError) as e:
            random_direction(full, 0)
        assert e.value.code == "phi-is-everything"

    def test_sampled_space_direction(self):
        s = Schema.from_cardinalities((4, 4, 3))
        w = Workload.all_kway(s, 1)
        ss = sample_perp_subspace(w, Workload.all_kway(s, 2).marginals, 10, seed=1)
        beta = random_direction(ss, 0).beta
        assert np.abs(ss.phi_basis.T @ beta).max() < 1e-12


class TestExtremalPair:
    def test_hand_example(self):
        ss = two_by_two()
        d = direction_from_coords(ss, [1.0])
        sign = np.sign(d.beta[0])
        pair = extremal_pair(ThetaVector(ss.schema, np.full(4, 0.25)), d)
        assert pair.alpha_plus == pytest.approx(0.5, abs=1e-15)
        assert pair.alpha_minus == pytest.approx(0.5, abs=1e-15)
        hi, lo = [0.5, 0, 0, 0.5], [0, 0.5, 0.5, 0]
        if sign < 0:
            hi, lo = lo, hi
        np.testing.assert_allclose(pair.theta_plus.values, hi, atol=1e-15)
        np.testing.assert_allclose(pair.theta_minus.values, lo, atol=1e-15)
        assert pair.span == pytest.approx(1.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_grid_oracle_and_validity(self, seed):
        rng = np.random.default_rng(seed)
        s = Schema.from_cardinalities(tuple(rng.integers(2, 4, size=3)))
        ss = build_safespace(Workload.all_kway(s, 2))
        start = ThetaVector(s, rng.dirichlet(np.ones(s.total_cells) * 2))
        d = random_direction(ss, seed)
        pair = extremal_pair(start, d)
        assert pair.alpha_plus == pytest.approx(grid_max_step(start.values, d.beta), abs=1e-6)
        assert pair.alpha_minus == pytest.approx(grid_max_step(start.values, -d.beta), abs=1e-6)
        psi = phi_of_theta(ss, start).psi
        for th in (pair.theta_plus, pair.theta_minus):
            assert (th.values >= 0).all() and abs(th.values.sum() - 1) < 1e-12
            assert np.abs(phi_of_theta(ss, th).psi - psi).max() < 1e-10
            assert (th.values == 0).any()
        eps = 1e-6
        assert (start.values + (pair.alpha_plus + eps) * d.beta).min() < 0
        assert (start.values - (pair.alpha_minus + eps) * d.beta).min() < 0

    def test_max_step_unbounded(self):
        assert max_step(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == np.inf

    def test_degenerate_start(self):
        ss = two_by_two()
        with pytest.raises(SdgError) as e:
            extremal_pair(ThetaVector(ss.schema, [0.5, 0, 0, 0.5]), direction_from_coords(ss, [1.0]))
        assert e.value.code == "degenerate-start"


class TestStartingTheta:
    def setup_method(self):
        self.s = Schema.from_cardinalities((3, 2, 2))
        self.w = Workload.all_kway(self.s, 2)
        self.ss = build_safespace(self.w)
        rng = np.random.default_rng(4)
        self.d = realize_dataset(ThetaVector(self.s, rng.dirichlet(np.ones(12) * 2)), 500, 0)
        self.psi = phi_of_theta(self.ss, theta_of_dataset(self.d))

    def test_from_dataset(self):
        th = starting_theta(self.ss, self.psi, "from-dataset", self.d)
        np.testing.assert_array_equal(th.values, theta_of_dataset(self.d).values)

    def test_psi_mismatch(self):
        other = realize_dataset(ThetaVector(self.s, np.full(12, 1 / 12)), 500, 0)
        with pytest.raises(SdgError) as e:
            starting_theta(self.ss, self.psi, "from-dataset", other)
        assert e.value.code == "psi-mismatch"

    def test_max_entropy_matches_marginals_and_convex_oracle(self):
        th = starting_theta(self.ss, self.psi)
        real = theta_of_dataset(self.d)
        for m in self.w.marginals:
            assert np.abs(marginal_of_theta(th, m) - marginal_of_theta(real, m)).max() < 1e-10
        m = np.vstack([marginal_indicator_rows((3, 2, 2), ax) for ax in ((0, 1), (0, 2), (1, 2))])
        oracle = maxent_cvxpy(m, m @ real.values)
        assert entropy(th.values) >= entropy(oracle) - 1e-6
        assert entropy(th.values) >= entropy(real.values) - 1e-12

    def test_max_entropy_is_interior_for_positive_marginals(self):
        th = starting_theta(self.ss, self.psi)
        d = random_direction(self.ss, 0)
        pair = extremal_pair(th, d)
        assert pair.alpha_plus > 0 and pair.alpha_minus > 0

    def test_unknown_mode(self):
        with pytest.raises(SdgError):
            starting_theta(self.ss, self.psi, "middle")

    def test_dataset_dims(self):
        w1 = Workload(self.s, (MarginalSpec(("A",)),))
        ss1 = build_safespace(w1)
        with pytest.raises(SdgError):
            starting_theta(ss1, self.psi)
        assert isinstance(self.d, Dataset)
