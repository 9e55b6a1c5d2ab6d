import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impdelay import ControlCone

vec3 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).map(np.array)

CONES = [
    ControlCone.nonnegative(3),
    ControlCone.whole_space(3),
    ControlCone.orthant(["+", "-", "free"]),
    ControlCone.generated([[1.0, 1.0, 0.0], [0.0, 1.0, 2.0]], [[-1.0, 0.0, 0.0]]),
]


@pytest.mark.parametrize("cone", CONES)
@given(w=vec3)
def test_projection_in_cone_and_idempotent(cone, w):
    p = cone.project(w)
    assert cone.contains(p, 1e-8)
    np.testing.assert_allclose(cone.project(p), p, atol=1e-9)
    # obtuse angle condition for the nearest point of a convex sub-cone
    assert np.linalg.norm(w - p) <= np.linalg.norm(w) + 1e-9


def _brute_linmax(cone, c, n=41):
    grid = np.linspace(-1, 1, n)
    best = -np.inf
    for w in itertools.product(grid, repeat=3):
        w = np.array(w)
        if abs(np.abs(w).sum() - 1) > 1e-9 or not cone.contains(w, 1e-9):
            continue
        best = max(best, float(c @ w))
    return best


@pytest.mark.parametrize("cone", CONES[:3])
@given(c=vec3)
def test_linmax_against_grid(cone, c):
    val, arg = cone.linmax(c)
    assert abs(np.abs(arg).sum() - 1) < 1e-12 and cone.contains(arg)
    assert val == pytest.approx(float(c @ arg))
    assert val >= _brute_linmax(cone, c, 21) - 1e-12


def test_generated_linmax_on_section():
    cone = CONES[3]
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = rng.normal(size=3)
        val, _ = cone.linmax(c)
        # random points of the unit section never beat it
        G = np.vstack(cone.subcones)
        for G in cone.subcones:
            lam = rng.dirichlet(np.ones(G.shape[0]), size=200)
            W = lam @ (G / np.abs(G).sum(axis=1, keepdims=True))
            assert (W @ c).max() <= val + 1e-12
        np.testing.assert_allclose(cone.linmax_batch(c[None])[0], val)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(m=2, signs=("+",)),
        dict(m=2, signs=("+", "?")),
        dict(m=2),
        dict(m=2, subcones=(np.array([[1.0, -1.0], [1.0, 1.0]]),)),
        dict(m=2, subcones=(np.array([[0.0, 0.0]]),)),
        dict(m=2, subcones=(np.array([[1.0, 0.0, 0.0]]),)),
    ],
)
def test_invalid_cones(kwargs):
    with pytest.raises(ValueError):
        ControlCone(**kwargs)


@pytest.mark.parametrize("cone", CONES)
def test_json_roundtrip(cone):
    back = ControlCone.from_json(cone.to_json())
    np.testing.assert_array_equal(back.rays(), cone.rays())
