import math

import numpy as np
import pytest
from scipy import stats as scipy_stats
from scipy.integrate import quad

from spectrasep.errors import StatisticsError, ValidationError
from spectrasep.stats import (
    BoxplotStats,
    bonferroni,
    boxplot_stats,
    group_tests,
    regularized_incomplete_beta,
    t_quantile,
    t_sf_two_sided,
    welch_t_test,
)


def t_density(u, dof):
    log_norm = (
        math.lgamma((dof + 1) / 2.0)
        - math.lgamma(dof / 2.0)
        - 0.5 * math.log(dof * math.pi)
    )
    return math.exp(log_norm) * (1.0 + u * u / dof) ** (-(dof + 1) / 2.0)


def two_sided_p_by_quadrature(t, dof):
    """Independent oracle: integrate the t density over [-|t|, |t|]."""
    inner, _ = quad(t_density, -abs(t), abs(t), args=(dof,), epsabs=1e-13, limit=300)
    return 1.0 - inner


class TestIncompleteBeta:
    def test_endpoints(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = rng.uniform(0.5, 250.0, 2)
            x = rng.uniform(0.0, 1.0)
            assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                scipy_stats.beta.cdf(x, a, b), abs=1e-12
            )


class TestWelch:
    def test_equal_means_give_t_zero_p_one(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        result = welch_t_test(a, a.copy())
        assert result.t_statistic == 0.0
        assert result.p_two_sided == 1.0

    def test_equal_sizes_and_variances_reduce_dof(self):
        rng = np.random.default_rng(1)
        n = 12
        a = rng.normal(0, 1, n)
        b = rng.permutation(a) + 0.5  # same variance, shifted
        result = welch_t_test(a, b)
        assert result.dof == pytest.approx(2 * n - 2, abs=1e-9)

    def test_p_matches_quadrature_grid(self):
        worst = 0.0
        for t in (0.05, 0.4, 1.0, 2.2, 4.7, 7.5, 10.0):
            for dof in (2.0, 3.4, 8.0, 27.5, 96.0, 311.0, 500.0):
                p = t_sf_two_sided(t, dof)
                worst = max(worst, abs(p - two_sided_p_by_quadrature(t, dof)))
        assert worst < 1e-8

    def test_fixture_p_matches_quadrature(self):
        rng = np.random.default_rng(2)
        a = rng.normal(0.0, 1.0, 25)
        b = rng.normal(0.7, 1.8, 40)
        result = welch_t_test(a, b)
        assert result.p_two_sided == pytest.approx(
            two_sided_p_by_quadrature(result.t_statistic, result.dof), abs=1e-8
        )

    def test_antisymmetry_and_invariances(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = rng.normal(0, 1, rng.integers(3, 40))
            b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2.5), rng.integers(3, 40))
            fwd = welch_t_test(a, b)
            rev = welch_t_test(b, a)
            assert fwd.t_statistic == pytest.approx(-rev.t_statistic, rel=1e-12)
            assert fwd.p_two_sided == pytest.approx(rev.p_two_sided, rel=1e-12)

            shift = welch_t_test(a + 3.7, b + 3.7)
            assert shift.t_statistic == pytest.approx(fwd.t_statistic, rel=1e-9)
            assert shift.dof == pytest.approx(fwd.dof, rel=1e-9)
            assert shift.p_two_sided == pytest.approx(fwd.p_two_sided, rel=1e-9)

            c = 2.5
            scale = welch_t_test(a * c, b * c)
            assert scale.t_statistic == pytest.approx(fwd.t_statistic, rel=1e-9)
            assert scale.p_two_sided == pytest.approx(fwd.p_two_sided, rel=1e-9)
            assert scale.ci95_mean_difference[0] == pytest.approx(
                c * fwd.ci95_mean_difference[0], rel=1e-9
            )
            assert scale.ci95_mean_difference[1] == pytest.approx(
                c * fwd.ci95_mean_difference[1], rel=1e-9
            )

    def test_ci_against_scipy(self):
        rng = np.random.default_rng(4)
        a = rng.normal(0, 1, 18)
        b = rng.normal(1, 2, 31)
        result = welch_t_test(a, b)
        se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        half = scipy_stats.t.ppf(0.975, result.dof) * se
        diff = a.mean() - b.mean()
        assert result.ci95_mean_difference[0] == pytest.approx(diff - half, abs=1e-9)
        assert result.ci95_mean_difference[1] == pytest.approx(diff + half, abs=1e-9)

    def test_undefined_cases(self):
        with pytest.raises(StatisticsError, match="at least 2"):
            welch_t_test([1.0], [1.0, 2.0])
        with pytest.raises(StatisticsError, match="zero variance"):
            welch_t_test([2.0, 2.0], [2.0, 2.0])

    def test_quantile_inverts_sf(self):
        for dof in (2.5, 10.0, 120.0):
            q = t_quantile(0.975, dof)
            assert t_sf_two_sided(q, dof) / 2.0 == pytest.approx(0.025, abs=1e-10)


class TestBonferroni:
    def test_paper_family(self):
        assert bonferroni(0.05, 4) == 0.0125

    def test_single_test_is_identity(self):
        assert bonferroni(0.03, 1) == 0.03

    def test_eight_tests(self):
        assert bonferroni(0.05, 8) == 0.00625

    def test_validation(self):
        with pytest.raises(StatisticsError):
            bonferroni(0.05, 0)
        with pytest.raises(StatisticsError):
            bonferroni(1.5, 4)


class TestBoxplot:
    def test_one_to_five(self):
        b = boxplot_stats([1, 2, 3, 4, 5])
        assert (b.q1, b.median, b.q3) == (2.0, 3.0, 4.0)
        assert (b.whisker_low, b.whisker_high) == (1.0, 5.0)
        assert b.outliers == ()

    def test_constant_data(self):
        b = boxplot_stats([2.5] * 9)
        assert b.q1 == b.median == b.q3 == 2.5
        assert b.outliers == ()

    def test_matches_sort_and_interpolate_oracle(self):
        rng = np.random.default_rng(5)
        values = rng.normal(0, 1, 83)
        values[:3] = [8.0, -9.0, 7.5]  # force outliers
        b = boxplot_stats(values)

        # oracle: type-7 quantiles by explicit sort and interpolation
        s = np.sort(values)
        def q7(p):
            h = (len(s) - 1) * p
            lo = int(math.floor(h))
            return s[lo] + (h - lo) * (s[min(lo + 1, len(s) - 1)] - s[lo])

        assert b.q1 == pytest.approx(q7(0.25), abs=1e-12)
        assert b.median == pytest.approx(q7(0.5), abs=1e-12)
        assert b.q3 == pytest.approx(q7(0.75), abs=1e-12)
        iqr = b.q3 - b.q1
        inside = s[(s >= b.q1 - 1.5 * iqr) & (s <= b.q3 + 1.5 * iqr)]
        assert b.whisker_low == inside.min()
        assert b.whisker_high == inside.max()
        assert set(b.outliers) == set(s[(s < inside.min()) | (s > inside.max())])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            boxplot_stats([])

    def test_box_ordering_invariant(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            b = boxplot_stats(rng.normal(0, 3, rng.integers(1, 60)))
            assert b.q1 <= b.median <= b.q3
            assert b.whisker_low >= b.q1 - 1.5 * (b.q3 - b.q1) or b.whisker_low == b.q1
            assert b.whisker_high <= b.q3 + 1.5 * (b.q3 - b.q1) or b.whisker_high == b.q3


class TestGroupTests:
    def _values(self, rng, n=60, shift=None):
        mask = np.zeros(n, dtype=bool)
        mask[: n // 3] = True
        values = {
            name: rng.normal(0.5, 0.05, n) for name in ("sto2", "npi", "thi", "twi")
        }
        if shift:
            values[shift[0]][mask] += shift[1]
        return values, mask

    def test_identical_groups_not_flagged(self):
        rng = np.random.default_rng(7)
        values, mask = self._values(rng)
        results = group_tests(values, mask)
        assert len(results) == 4
        assert not any(r.significant for r in results)

    def test_planted_shift_flagged_with_direction(self):
        rng = np.random.default_rng(8)
        values, mask = self._values(rng, shift=("twi", 0.2))
        results = group_tests(values, mask)
        by_name = {r.index_name: r for r in results}
        assert by_name["twi"].significant
        assert by_name["twi"].direction == "higher"
        assert by_name["twi"].alpha_per_test == 0.0125

    def test_exactly_four_results_per_grouping(self):
        rng = np.random.default_rng(9)
        for _ in range(2):
            values, mask = self._values(rng)
            assert len(group_tests(values, mask)) == 4

    def test_one_sided_group_rejected(self):
        values = {"sto2": np.ones(5)}
        with pytest.raises(StatisticsError):
            group_tests(values, np.ones(5, dtype=bool))
