import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from mmrec.errors import DegenerateTestError
from mmrec.stats import betainc_regularized, paired_t_test, t_two_sided_p


def test_worked_example():
    rep = paired_t_test([1, 2, 3, 4], [2, 3, 4, 6])
    assert rep.t == 5.0
    assert rep.df == 3 and rep.n == 4
    assert rep.p == pytest.approx(0.0154, abs=1e-3)
    assert rep.p == pytest.approx(2 * stats.t.sf(5.0, 3), abs=1e-8)
    assert rep.mean_a == 2.5 and rep.mean_b == 3.75


def test_zero_variance_is_degenerate():
    with pytest.raises(DegenerateTestError):
        paired_t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    with pytest.raises(DegenerateTestError):
        paired_t_test(list(range(10)), [x + 1 for x in range(10)])


def test_bad_lengths():
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0])


@pytest.mark.parametrize("df", [1, 2, 3, 5, 9, 30, 200])
def test_tail_matches_reference(df):
    for t in (0.0, 0.1, 0.7, 1.0, 2.262, 5.0, 12.0, 40.0):
        assert t_two_sided_p(t, df) == pytest.approx(2 * stats.t.sf(t, df), abs=1e-8)


@given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0.0, 1.0))
def test_betainc_matches_reference(a, b, x):
    assert betainc_regularized(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-8)


def test_p_equals_one_at_zero_t():
    assert t_two_sided_p(0.0, 9) == 1.0


def test_matches_reference_on_random_series():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 15))
        a = rng.normal(size=n)
        b = a + rng.normal(0.3, 1.0, size=n)
        rep = paired_t_test(a, b)
        ref = stats.ttest_rel(b, a)
        assert rep.t == pytest.approx(ref.statistic, rel=1e-10)
        assert rep.p == pytest.approx(ref.pvalue, abs=1e-8)


def test_antisymmetry_on_random_pairs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        a, b = rng.normal(size=n), rng.normal(size=n)
        ab, ba = paired_t_test(a, b), paired_t_test(b, a)
        assert ab.t == -ba.t
        assert ab.p == ba.p
        assert 0.0 <= ab.p <= 1.0


def test_row_format():
    row = paired_t_test([1, 2, 3, 4], [2, 3, 4, 6]).to_row()
    assert row[4:7] == ["4", "3", "5"]
    assert math.isclose(float(row[7]), 0.0154, abs_tol=1e-3)
