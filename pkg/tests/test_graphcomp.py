import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impdelay import ControlCone, ExtendedControl, ImpulseControl, MonotoneCurve, VectorMeasure
from impdelay import build_extended, canonicalize, rectilinear_gc, reparameterize
from impdelay.graphcomp import tilde_concatenate, validate_extended_control

from cases import random_impulse_control


def test_single_atom_completion():
    mu = VectorMeasure.atoms(1.0, [0.5], [[2.0]])
    ec, meta = rectilinear_gc(mu, 1, 1.0)
    assert ec.S == pytest.approx(3.0)
    assert meta.jumps == [(0.5, 0.5, 2.5)]
    phi0 = ec.phi0_curve()
    np.testing.assert_allclose(phi0(np.linspace(0.5, 2.5, 9)), 0.5)
    assert phi0(0.25) == pytest.approx(0.25) and phi0(2.75) == pytest.approx(0.75)
    np.testing.assert_allclose(ec.phi_at(np.array([0.5, 1.5, 2.5, 3.0]))[:, 0, 0], [0, 1, 2, 2])
    assert validate_extended_control(ec, u=mu).ok


def test_zero_measure_gives_identity_time():
    ec, _ = rectilinear_gc(VectorMeasure.zero(2.0, 2), 2, 1.0)
    assert ec.S == pytest.approx(1.0)
    np.testing.assert_allclose(ec.phi0_knots, ec.mesh)
    assert ec.total_variation() == 0.0


def test_cone_is_checked():
    mu = VectorMeasure.atoms(1.0, [0.5], [[-1.0]])
    with pytest.raises(ValueError, match="cone"):
        rectilinear_gc(mu, 1, 1.0, ControlCone.nonnegative(1))


@given(st.integers(0, 10_000), st.booleans())
def test_length_is_h_plus_variation(seed, density):
    rng = np.random.default_rng(seed)
    c = random_impulse_control(rng, 3, 1, 2, 0.8, density=density)
    ec, meta = build_extended(c)
    tv = c.nu.total()
    assert ec.S == pytest.approx(c.h + tv, rel=1e-12)
    assert meta.S == pytest.approx(ec.S)
    assert ec.is_canonical(1e-12)
    rep = validate_extended_control(ec, cone=ControlCone.whole_space(2), L=1.0)
    assert rep.ok, rep.to_json()


def _random_ec(rng, K=6, N=2, m=2, h=1.0):
    mesh = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, K))])
    w0 = rng.uniform(0, 1, K) * (rng.random(K) < 0.7)
    w = rng.normal(size=(K, N, m))
    w0 *= h / (w0 * np.diff(mesh)).sum() if w0.any() else 0
    if not w0.any():
        w0[0] = h / (mesh[1] - mesh[0])
    return ExtendedControl(h, mesh, w0, w)


@given(st.integers(0, 10_000))
def test_canonicalize_properties(seed):
    rng = np.random.default_rng(seed)
    ec = _random_ec(rng)
    can = canonicalize(ec)
    assert can.is_canonical(1e-12)
    assert can.S == pytest.approx(ec.S * 0 + (ec.rate * ec.ds).sum())
    assert can.phi0_knots[-1] == pytest.approx(ec.phi0_knots[-1])
    np.testing.assert_allclose(can.phi_knots[-1], ec.phi_knots[-1], atol=1e-12)
    again = canonicalize(can)
    np.testing.assert_allclose(again.mesh, can.mesh, atol=1e-13)
    np.testing.assert_allclose(again.w, can.w, atol=1e-13)
    # doubling the parameter length (half speed) gives the same canonical form
    slow = ExtendedControl(ec.h, 2 * ec.mesh, ec.w0 / 2, ec.w / 2, ec.phi0_knots)
    other = canonicalize(slow)
    np.testing.assert_allclose(other.mesh, can.mesh, atol=1e-12)
    np.testing.assert_allclose(other.w, can.w, atol=1e-12)


@given(st.integers(0, 10_000))
def test_reparameterize_keeps_the_curve(seed):
    rng = np.random.default_rng(seed)
    ec = _random_ec(rng)
    S = ec.S
    xs = np.linspace(0, S, 5)
    ys = np.concatenate([[0.0], np.cumsum(rng.uniform(0.2, 2.0, 4))])
    delta = MonotoneCurve(xs, ys)
    re = reparameterize(ec, delta)
    s = np.linspace(0, S, 201)
    np.testing.assert_allclose(re.phi0_at(delta(s)), ec.phi0_at(s), atol=1e-12)
    np.testing.assert_allclose(re.phi_at(delta(s)), ec.phi_at(s), atol=1e-11)
    np.testing.assert_allclose(canonicalize(re).w, canonicalize(ec).w, atol=1e-10)


def test_reparameterize_doubling_halves_rates():
    ec = _random_ec(np.random.default_rng(1))
    re = reparameterize(ec, MonotoneCurve([0.0, ec.S], [0.0, 2 * ec.S]))
    np.testing.assert_allclose(re.w0, ec.w0 / 2)
    np.testing.assert_allclose(re.w, ec.w / 2)
    with pytest.raises(ValueError):
        reparameterize(ec, MonotoneCurve([0.0, ec.S / 2, ec.S], [0.0, 1.0, 1.0]))


def test_validation_flags_end_time():
    ec = ExtendedControl(1.0, np.array([0.0, 1.0]), np.array([0.9]), np.zeros((1, 1, 1)))
    rep = validate_extended_control(ec)
    assert not rep["Def3.1(i)"].passed
    assert rep["Def3.1(i)"].residual == pytest.approx(0.1)
    rep = validate_extended_control(ExtendedControl(1.0, [0.0, 1.0], [1.0], np.ones((1, 1, 1))), L=1.5)
    assert not rep["Lipschitz"].passed


def test_wrong_measure_detected():
    mu = VectorMeasure.atoms(1.0, [0.5], [[2.0]])
    ec, _ = rectilinear_gc(mu, 1, 1.0)
    rep = validate_extended_control(ec, u=VectorMeasure.atoms(1.0, [0.4], [[2.0]]))
    assert not rep.ok


def test_tilde_concatenate():
    s = np.linspace(0, 2, 5)
    z1, z2 = s.copy(), s[-1] + s
    st_, zt = tilde_concatenate(s, [z1, z2], chain_tol=1e-12)
    assert st_.size == 9 and st_[-1] == 4.0
    np.testing.assert_allclose(zt, np.linspace(0, 4, 9))
    with pytest.raises(ValueError, match="chain"):
        tilde_concatenate(s, [z1, z2 + 1], chain_tol=1e-12)


def test_tau_tilde_chains_blocks():
    c = random_impulse_control(np.random.default_rng(5), 3, 1, 1, 1.0)
    ec, _ = build_extended(c)
    tau = ec.tau_tilde()
    assert tau.domain == (0.0, 3 * ec.S) and tau.range == (0.0, 3.0)
    sig = ec.sigma_tilde()
    assert sig(3.0) == pytest.approx(3 * ec.S)


def test_json_roundtrip():
    ec = _random_ec(np.random.default_rng(2))
    back = ExtendedControl.from_json(ec.to_json())
    np.testing.assert_array_equal(back.w, ec.w)
    np.testing.assert_array_equal(back.phi0_knots, ec.phi0_knots)
