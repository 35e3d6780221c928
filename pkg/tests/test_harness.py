import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from haar_bidomain.bidomain_model import CosineField, default_problem, unit_domain
from haar_bidomain.errors import DomainError
from haar_bidomain.harness import (
    DEFAULT_PROBES_1D,
    coefficient_decay_check,
    combine_norms,
    error_table,
    field_differences,
    fit_order,
    gating_exact,
    gating_only_problem,
    grid_validation,
    l2_norm,
    reference_run,
    successive_ratios,
    temporal_order,
    x_norm,
)
from haar_bidomain.stepper import SteppingConfig, run

vals = arrays(float, 12, elements=st.floats(-1e3, 1e3))


def cosine_problem(dim=1, T=0.02):
    return default_problem(dim, T=T, v0=CosineField(0.2, 0.1, (1,) * dim, unit_domain(dim)))


class TestNorms:
    @given(v=vals, ue=vals, w=vals, weight=st.floats(1e-4, 1.0))
    def test_x_norm_combines_components(self, v, ue, w, weight):
        parts = [l2_norm(v, weight), l2_norm(ue, weight), l2_norm(w, weight)]
        assert x_norm(v, ue, w, weight) == pytest.approx(math.sqrt(sum(p * p for p in parts)),
                                                         rel=1e-12, abs=1e-300)

    def test_l2_of_constant(self):
        assert l2_norm(np.full(8, 2.0), 1 / 8) == pytest.approx(2.0)
        assert combine_norms(3.0, 4.0, []) == 5.0


class TestComparisons:
    @pytest.fixture(scope="class")
    @classmethod
    def runs(cls):
        p = cosine_problem()
        return {dt: run(p, 3, SteppingConfig(dt=dt)) for dt in (1e-2, 5e-3, 1e-3)}

    def test_self_comparison_is_zero(self, runs):
        r = runs[1e-3]
        d = field_differences(r, r)
        assert not np.any(d["v"]) and not np.any(d["ue"]) and not np.any(d["w"])
        rep = error_table([r], r)
        assert not np.any(rep.abs_errors) and rep.x_norm[0] == 0.0

    def test_table_layout_and_bounds(self, runs):
        ref = runs[1e-3]
        rep = error_table([runs[1e-2], runs[5e-3]], ref, DEFAULT_PROBES_1D)
        assert rep.abs_errors.shape == (7, 2)
        assert rep.dts == (1e-2, 5e-3)
        assert np.all(rep.linf_v >= rep.abs_errors.max(axis=0))
        assert np.all(np.abs(rep.mapped_points[:, 0] - rep.probe_points[:, 0]) <= 1 / 32)

    def test_symmetry(self, runs):
        a, b = runs[1e-2], runs[5e-3]
        ab = error_table([a], b)
        ba = error_table([b], a)
        np.testing.assert_allclose(ab.abs_errors, ba.abs_errors, atol=1e-15)

    def test_mismatched_final_time(self, runs):
        other = run(cosine_problem(T=0.01), 3, SteppingConfig(dt=1e-3))
        with pytest.raises(DomainError):
            error_table([other], runs[1e-3])

    def test_label_count(self, runs):
        with pytest.raises(DomainError):
            error_table([runs[1e-2]], runs[1e-3], dts=[1, 2])

    def test_reference_must_be_finer(self):
        with pytest.raises(DomainError):
            reference_run(cosine_problem(), 3, 1e-3, [1e-2, 1e-3])

    def test_probe_dimension(self, runs):
        with pytest.raises(DomainError):
            error_table([runs[1e-2]], runs[1e-3], probe_points=[[0.1, 0.2]])


class TestFitting:
    def test_exact_power_law(self):
        h = np.array([1e-1, 1e-2, 1e-3])
        assert fit_order(h, 3 * h**2) == pytest.approx(2.0)

    def test_degenerate(self):
        assert fit_order([1, 2], [0, 0]) == 0.0
        np.testing.assert_array_equal(successive_ratios([4, 2, 0, 0]), [2.0, math.inf, 1.0])


class TestGridValidation:
    def test_needs_three_increasing_levels(self):
        with pytest.raises(DomainError):
            grid_validation(cosine_problem(), [3], 1e-3)
        with pytest.raises(DomainError):
            grid_validation(cosine_problem(), [2, 4, 3], 1e-3)

    def test_uniform_solution_has_no_error(self):
        rep = grid_validation(default_problem(2, T=0.01), [1, 2, 3], 1e-3)
        assert np.all(rep.errors <= 1e-13)
        assert rep.monotone

    def test_cosine_data_converges(self):
        rep = grid_validation(cosine_problem(1, T=0.01), [2, 3, 4, 5], 1e-3, jobs=2)
        assert rep.monotone and rep.errors[-1] == 0.0
        assert rep.good_enough in (2, 3, 4)
        assert all(g["all_converged"] for g in rep.extra["gmres"])


class TestTemporalOrder:
    def test_needs_three_steps(self):
        with pytest.raises(DomainError):
            temporal_order(cosine_problem(), 3, [1e-2, 1e-3])
        with pytest.raises(DomainError):
            temporal_order(cosine_problem(), 3, [1e-2, 5e-3, 1e-3], quantity="p")

    def test_gating_only_first_order(self):
        p = gating_only_problem(T=0.5)
        rep = temporal_order(p, 2, [1e-2, 1e-3, 1e-4], quantity="w", exact=gating_exact())
        assert rep.fitted_order == pytest.approx(1.0, abs=0.1)
        assert rep.monotone
        assert rep.errors[-1] <= 5e-5

    def test_non_monotone_is_flagged(self):
        p = gating_only_problem(T=0.02)
        middle = run(p, 1, SteppingConfig(dt=2e-3)).final.w

        def fake_exact(points, t):
            return middle

        rep = temporal_order(p, 1, [1e-2, 2e-3, 1e-3], quantity="w", exact=fake_exact)
        assert not rep.monotone
        assert rep.errors[1] == 0.0

    def test_reference_default(self):
        rep = temporal_order(cosine_problem(T=0.02), 2, [1e-2, 5e-3, 2e-3])
        assert rep.extra["dt_ref"] == pytest.approx(2e-4)
        assert rep.monotone and rep.values == (1e-2, 5e-3, 2e-3)


class TestCoefficientDecay:
    def test_lipschitz_kink(self):
        rep = coefficient_decay_check(lambda x, y: np.abs(x - y), 6)
        assert rep.fitted_order <= -2.75 and rep.good_enough
        assert rep.extra["lipschitz_estimate"] == pytest.approx(1.0, rel=1e-9)

    def test_exact_cell_integrals_agree(self):
        f = lambda x, y: np.abs(x - y)
        G = lambda x, y: -np.abs(x - y) ** 3 / 6
        a = coefficient_decay_check(f, 5)
        b = coefficient_decay_check(f, 5, antiderivative=G)
        # Gauss rules lose accuracy on the cells the kink crosses
        np.testing.assert_allclose(a.errors, b.errors, rtol=1e-3)

    def test_constant_has_no_details(self):
        rep = coefficient_decay_check(lambda x, y: np.ones(np.broadcast(x, y).shape), 4)
        assert np.all(rep.errors <= 1e-15)
        assert rep.fitted_order == -math.inf

    def test_smooth_sum(self):
        rep = coefficient_decay_check(lambda x, y: x + y, 5)
        assert rep.fitted_order <= -3

    def test_needs_two_levels(self):
        with pytest.raises(DomainError):
            coefficient_decay_check(lambda x, y: x, 1)
