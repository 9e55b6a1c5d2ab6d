import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impdelay import MonotoneCurve
from impdelay.monotone import scan_right_inverse


def test_identity_is_its_own_inverse():
    A = MonotoneCurve([0.0, 1.0], [0.0, 1.0])
    B = A.right_inverse()
    s = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(B(s), s)


def test_jump_becomes_plateau():
    # A(t) = t for t < 0.5, t + 2 for t >= 0.5 on [0, 1]
    A = MonotoneCurve([0.0, 0.5, 0.5, 1.0], [0.0, 0.5, 2.5, 3.0])
    assert A(0.5) == 2.5 and A.lower(0.5) == 0.5
    assert A.jumps() == [(0.5, 0.5, 2.5)]
    B = A.right_inverse()
    np.testing.assert_allclose(B(np.array([0.5, 1.0, 2.0, 2.5])), [0.5, 0.5, 0.5, 0.5])
    assert B(2.75) == pytest.approx(0.75)
    assert B.plateaus() == [(0.5, 0.5, 2.5)]


def test_right_continuity_and_ends():
    A = MonotoneCurve([0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 2.0, 4.0])
    assert A(0.0) == 0.0  # first value kept at the left end
    assert A(1.0) == 4.0
    assert A.lower(1.0) == 2.0
    assert A.domain == (0.0, 1.0) and A.range == (0.0, 4.0)


@pytest.mark.parametrize(
    "xs, ys",
    [([0.0, 1.0], [1.0, 0.0]), ([1.0, 0.0], [0.0, 1.0]), ([0.0], [0.0]), ([0.0, 0.0], [0.0, 1.0])],
)
def test_invalid_curves(xs, ys):
    with pytest.raises(ValueError):
        MonotoneCurve(xs, ys)


def test_query_outside_domain():
    A = MonotoneCurve([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        A(1.1)


@st.composite
def curves(draw):
    n = draw(st.integers(2, 8))
    dx = draw(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=n - 1, max_size=n - 1))
    dy = draw(st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0]), min_size=n - 1, max_size=n - 1))
    dx[draw(st.integers(0, n - 2))] = 1.0
    dy[draw(st.integers(0, n - 2))] = 1.0
    # no point is both a jump and a plateau edge of zero length
    dx = [a if (a > 0 or b > 0) else 0.25 for a, b in zip(dx, dy)]
    return MonotoneCurve(np.concatenate([[0.0], np.cumsum(dx)]), np.concatenate([[0.0], np.cumsum(dy)]))


@given(curves(), st.floats(0, 1))
def test_right_inverse_is_scan_infimum(A, u):
    B = A.right_inverse()
    s0, s1 = A.range
    s = s0 + u * (s1 - s0)
    if s >= s1:
        return
    grid = np.linspace(*A.domain, 40001)
    assert B(s) == pytest.approx(scan_right_inverse(A, s, grid), abs=2 * (grid[1] - grid[0]))


@given(curves())
def test_inverse_of_inverse_and_composition(A):
    B = A.right_inverse()
    BB = B.right_inverse()
    np.testing.assert_array_equal(BB.xs, A.xs)
    t = np.linspace(*A.domain, 1000)
    jumps = [x for x, _, _ in A.jumps()]
    t = t[[all(abs(ti - j) > 1e-9 for j in jumps) for ti in t]]
    # B(A(t)) = t off jumps, except on plateaus where B picks the right end
    plateau = [(a, b) for _, a, b in A.plateaus()]
    # and B(S1) = T1 at the bottom of the range
    vals = A(t)
    back = B(vals)
    for ti, vi, bi in zip(t, vals, back):
        on = [b for a, b in plateau if a - 1e-12 <= ti <= b + 1e-12]
        want = A.domain[0] if vi == A.range[0] else (max(on) if on else ti)
        assert bi == pytest.approx(want, abs=1e-12)
