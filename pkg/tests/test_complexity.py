"""Covering recursion, CNN specialization, parameter counts, entropy bounds,
and the brute-force cover validation.

The hand-unrolled recursion is the oracle for the closed forms; stored
parameter vectors are the oracle for the count formula; the cover check is
itself the constructive oracle for the recursion constants.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrates.cnn import param_vector
from convrates.complexity import (
    CoverCheckReport,
    LayeredComplexitySpec,
    _snap_to_grid,
    cnn_complexity_spec,
    cnn_lipschitz_bound,
    cnn_param_lipschitz,
    covering_recursion,
    empirical_cover_check,
    entropy_bound_cnn,
    param_count,
)
from convrates.errors import PreconditionError

from conftest import random_cnn


class TestCoveringRecursion:
    def test_all_ones_collapse(self):
        for L in range(0, 6):
            spec = LayeredComplexitySpec(np.ones(L + 1), np.ones(L + 1), 1.0, 10)
            assert covering_recursion(spec).param_lipschitz == L + 1

    def test_two_step_hand_unroll(self):
        # C2 = M*(lam0 + lam1) + lam2 for gammas (1, 1, M)
        lam = np.array([3.0, 5.0, 2.0])
        for M in (1.0, 2.0, 7.5):
            spec = LayeredComplexitySpec(np.array([1.0, 1.0, M]), lam, M, 4)
            assert covering_recursion(spec).param_lipschitz == M * (lam[0] + lam[1]) + lam[2]

    def test_closed_form_bound_random(self, rng):
        for _ in range(1000):
            L = int(rng.integers(0, 6))
            gammas = 1.0 + rng.exponential(1.0, L + 1)
            lambdas = rng.exponential(2.0, L + 1)
            spec = LayeredComplexitySpec(gammas, lambdas, 1.0, 3)
            res = covering_recursion(spec)
            assert res.param_lipschitz <= res.product_bound * (1 + 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(st.floats(1.0, 50.0), st.floats(0.0, 50.0)),
            min_size=1,
            max_size=8,
        )
    )
    def test_closed_form_bound_hypothesis(self, constants):
        gammas = np.array([g for g, _ in constants])
        lambdas = np.array([l for _, l in constants])
        res = covering_recursion(LayeredComplexitySpec(gammas, lambdas, 2.0, 5))
        assert res.param_lipschitz <= res.product_bound * (1 + 1e-12)

    def test_invalid_spec(self):
        with pytest.raises(PreconditionError):
            LayeredComplexitySpec(np.array([0.5, 1.0]), np.array([1.0, 1.0]), 1.0, 2)
        with pytest.raises(PreconditionError):
            LayeredComplexitySpec(np.array([1.0, 1.0]), np.array([-1.0, 1.0]), 1.0, 2)

    def test_entropy_bound_function(self):
        spec = LayeredComplexitySpec(np.array([1.0, 2.0]), np.array([1.0, 1.0]), 3.0, 7)
        res = covering_recursion(spec)
        eps = res.param_lipschitz * res.param_bound
        assert res.entropy_bound(eps) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(PreconditionError):
            res.entropy_bound(0.0)


class TestCnnSpecialization:
    def test_one_step_by_hand(self):
        # L=1, J=1, s=2, d=2, M=1: gammas (1,1), lambdas (3,2) -> C1 = 5
        spec = cnn_complexity_spec(2, 2, 1, 1, 1.0)
        assert np.array_equal(spec.gammas, [1.0, 1.0])
        assert np.array_equal(spec.lambdas, [3.0, 2.0])
        assert covering_recursion(spec).param_lipschitz == 5.0

    def test_recursion_matches_closed_form(self, rng):
        for _ in range(1000):
            d = int(rng.integers(2, 12))
            s = int(rng.integers(2, d + 1))
            J = int(rng.integers(1, 8))
            L = int(rng.integers(1, 12))
            M = float(1 + rng.exponential(3.0))
            res = covering_recursion(cnn_complexity_spec(d, s, J, L, M))
            exact = cnn_param_lipschitz(d, s, J, L, M)  # L*M*(sJ+1) + dJ
            assert res.param_lipschitz == pytest.approx(exact, rel=1e-14)
            # the product bound is the (dJ + sJL + L)M closed form, <= 3dJLM
            assert res.product_bound == pytest.approx(
                cnn_lipschitz_bound(d, s, J, L, M), rel=1e-14
            )
            assert res.param_lipschitz <= res.product_bound * (1 + 1e-14)
            assert res.product_bound <= 3 * d * J * L * M * (1 + 1e-14)

    def test_frozen_product_bound_example(self):
        # (dJ + sJL + L) * M at d=4, s=2, J=6, L=10, M=2
        assert cnn_lipschitz_bound(4, 2, 6, 10, 2) == 308
        # the recursion value itself is smaller: L*M*(sJ+1) + dJ
        res = covering_recursion(cnn_complexity_spec(4, 2, 6, 10, 2.0))
        assert res.param_lipschitz == 10 * 2 * 13 + 24 == 284

    def test_m_below_one_rejected(self):
        with pytest.raises(PreconditionError):
            cnn_complexity_spec(3, 2, 1, 1, 0.5)


class TestParamCount:
    def test_frozen_examples(self):
        assert param_count(4, 2, 6, 10) == 744  # 780 - 36
        assert param_count(2, 2, 1, 1) == 5
        for d in range(2, 9):
            assert param_count(d, 1, 1, 1) == 2 + d

    def test_two_algebraic_forms_agree(self, rng):
        for _ in range(200):
            d = int(rng.integers(2, 12))
            s = int(rng.integers(1, d + 1))
            J = int(rng.integers(1, 8))
            L = int(rng.integers(1, 10))
            alt = s * J + J + (L - 1) * (s * J * J + J) + d * J
            assert param_count(d, s, J, L) == alt

    def test_matches_stored_parameter_enumeration(self, rng):
        for _ in range(50):
            net = random_cnn(rng)
            assert param_count(net.d, net.s, net.J, net.depth) == param_vector(net).size


class TestEntropyBoundCnn:
    def test_zero_at_matching_eps(self):
        d, s, J, L, M = 3, 2, 2, 4, 2.0
        eps = 3 * d * J * L * M * M
        assert entropy_bound_cnn(d, s, J, L, M, eps) == pytest.approx(0.0, abs=1e-12)

    def test_frozen_example(self):
        # 3dJLM^2/eps = 28800 at these constants
        expected = 744 * math.log(28800.0)
        assert entropy_bound_cnn(4, 2, 6, 10, 2.0, 0.1) == pytest.approx(expected, rel=1e-14)

    def test_doubling_m(self):
        base = entropy_bound_cnn(4, 2, 3, 5, 2.0, 0.3)
        doubled = entropy_bound_cnn(4, 2, 3, 5, 4.0, 0.3)
        n = param_count(4, 2, 3, 5)
        assert doubled - base == pytest.approx(2 * n * math.log(2.0), rel=1e-12)

    def test_monotonicity(self):
        base = entropy_bound_cnn(4, 2, 3, 5, 2.0, 0.3)
        assert entropy_bound_cnn(4, 2, 3, 5, 2.0, 0.2) >= base
        assert entropy_bound_cnn(5, 2, 3, 5, 2.0, 0.3) >= base
        assert entropy_bound_cnn(4, 2, 4, 5, 2.0, 0.3) >= base
        assert entropy_bound_cnn(4, 2, 3, 6, 2.0, 0.3) >= base
        assert entropy_bound_cnn(4, 2, 3, 5, 2.5, 0.3) >= base

    def test_invalid_inputs(self):
        with pytest.raises(PreconditionError):
            entropy_bound_cnn(4, 2, 3, 5, 0.5, 0.3)
        with pytest.raises(PreconditionError):
            entropy_bound_cnn(4, 2, 3, 5, 2.0, 0.0)


class TestEmpiricalCoverCheck:
    def test_candidate_counting(self):
        report = empirical_cover_check(2, 2, 1, 1, 1.0, eps=0.5, grid_resolution=9, trials=3)
        assert report.n_params == 5
        assert report.candidate_count == 9**5 == 59049

    def test_snap_is_identity_on_grid(self):
        grid = np.linspace(-1, 1, 11)
        theta = grid[[0, 3, 7, 10, 5]]
        assert np.array_equal(_snap_to_grid(theta, grid), theta)

    def test_rounded_cover_at_half(self):
        report = empirical_cover_check(2, 2, 1, 1, 1.0, eps=0.5, trials=20, seed=3)
        assert report.passed
        assert report.worst_distance <= 0.5
        assert report.covering_radius <= report.target_radius

    def test_exhaustive_at_least_as_good(self):
        snap = empirical_cover_check(
            2, 2, 1, 1, 1.0, eps=1.0, grid_resolution=5, trials=5, seed=9
        )
        exh = empirical_cover_check(
            2, 2, 1, 1, 1.0, eps=1.0, grid_resolution=5, trials=5, seed=9, exhaustive=True
        )
        assert np.all(exh.distances <= snap.distances + 1e-12)

    def test_determinism_per_trial(self):
        a = empirical_cover_check(2, 2, 1, 1, 1.0, eps=0.5, trials=7, seed=5)
        b = empirical_cover_check(2, 2, 1, 1, 1.0, eps=0.5, trials=7, seed=5)
        assert np.array_equal(a.distances, b.distances)

    def test_parameter_guard(self):
        with pytest.raises(PreconditionError):
            empirical_cover_check(3, 2, 2, 2, 1.0, eps=0.5)
