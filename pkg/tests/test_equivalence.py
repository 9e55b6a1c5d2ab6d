import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impdelay import ImpulseControl, ScalarMeasure, VectorMeasure
from impdelay import extended_to_impulse, gc_solution, impulse_to_extended, roundtrip, simulate_impulse
from impdelay import strict_sense_approximation
from impdelay.equivalence import InvalidImpulseControl, JumpArcSet, control_residuals
from impdelay.measures import AttachedFamily, StepFunction

from cases import random_impulse_control, scalar_delay, scenario, smooth_dyn


def test_single_atom_scenario():
    sc = scenario("single_atom")
    traj, arcs = simulate_impulse(sc.control, sc.dyn)
    assert traj.x(2.0)[0][0] == pytest.approx(3.0, abs=1e-12)
    rows = traj.jump_table()
    assert len(rows) == 1
    t, pre, post, vpre, vpost = rows[0]
    assert t == pytest.approx(0.5)
    assert post[0] - pre[0] == pytest.approx(2.0, abs=1e-12)
    assert vpost - vpre == pytest.approx(2.0, abs=1e-12)
    assert len(arcs) == 2 and arcs.params() == [pytest.approx(0.5)]
    z = arcs.zeta(1, arcs.params()[0], np.linspace(0, 1, 5))
    np.testing.assert_allclose(z[:, 0], [1.0, 1.5, 2.0, 2.5, 3.0], atol=1e-12)


@given(st.integers(0, 10_000), st.booleans())
def test_variation_is_nu_distribution(seed, sequential):
    rng = np.random.default_rng(seed)
    dyn = smooth_dyn(1, 2, 1, 3, 0.7)
    c = random_impulse_control(rng, 3, 1, 2, 0.7, sequential=sequential, density=True)
    traj, arcs = simulate_impulse(c, dyn, 4, None)
    # (x, v)(0) is the pre-jump value; v = nu([0, t]) for t > 0
    t = np.concatenate([np.linspace(0, c.T, 37)[1:], c.nu.atom_times[c.nu.atom_times > 0]])
    np.testing.assert_allclose(traj.v(t), c.nu.distribution(t), atol=1e-12)
    # theta increments over each active arc equal the nu atom
    for (l, r), a in arcs.arcs.items():
        if not a.active:
            continue
        inc = float(arcs.theta(l, r, 1.0) - arcs.theta(l, r, 0.0))
        tt = r + (l - 1) * c.h
        assert inc <= c.nu.atom_at(tt) + 1e-12 or r in (0.0, c.h)


@given(st.integers(0, 10_000), st.booleans())
def test_roundtrip_property(seed, sequential):
    rng = np.random.default_rng(seed)
    dyn = smooth_dyn(2, 1, 1, 2, 1.0)
    c = random_impulse_control(rng, 2, 1, 1, 1.0, sequential=sequential, density=not sequential)
    back, res = roundtrip(c, dyn, 4, None)
    assert max(res["mu"], res["nu"], res["attached"], res["validation"], res["endpoint"]) <= 1e-9


def test_invalid_control_rejected():
    mu = VectorMeasure.atoms(2.0, [0.5], [[1.0]])
    nu = ScalarMeasure(2.0, [0.5], [[0.5]], [0.0, 2.0], [[0.0]])
    att = AttachedFamily(1.0, 2, {0.5: (StepFunction.constant([1.0]), None)})
    bad = ImpulseControl(mu, nu, att, 2, 1, 1.0)
    with pytest.raises(InvalidImpulseControl) as err:
        impulse_to_extended(bad, scalar_delay())
    assert "(ii.1)" in str(err.value)


def test_non_canonical_input_is_flagged():
    sc = scenario("single_atom")
    ep = impulse_to_extended(sc.control, sc.dyn)
    ec = ep.ec
    from impdelay import ExtendedControl, integrate_acs

    slow = ExtendedControl(ec.h, 2 * ec.mesh, ec.w0 / 2, ec.w / 2, ec.phi0_knots)
    proc = extended_to_impulse(integrate_acs(slow, sc.dyn))
    assert proc.canonicalized
    res = control_residuals(proc.control, sc.control)
    assert max(res.values()) <= 1e-12


def test_strict_control_has_no_approximation_error():
    dyn = scalar_delay(f="-0.5*x0+0.3*x1", g="1+0.5*x0")
    mu = VectorMeasure.from_density(2.0, [0.0, 0.7, 2.0], [[1.0], [-0.5]])
    c = ImpulseControl.strict(mu, 2, 1, 1.0)
    ref = gc_solution(impulse_to_extended(c, dyn))
    t = np.linspace(0, 2, 21)
    for i in (1, 3):
        ap = strict_sense_approximation(c, dyn, i)
        assert ap.control.is_strict
        np.testing.assert_allclose(ap.trajectory.x(t), ref.x(t), atol=1e-12)


def test_approximation_converges_and_is_strict():
    sc = scenario("single_atom")
    # graph convergence: L1 error near the jump shrinks, values away from it agree
    t = np.linspace(0.3, 0.9, 61)
    ref = gc_solution(impulse_to_extended(sc.control, sc.dyn)).x(t)
    errs = []
    for i in (2, 4, 6, 8):
        ap = strict_sense_approximation(sc.control, sc.dyn, i)
        assert ap.control.is_strict and not ap.control.mu.has_atoms
        err = np.abs(ap.trajectory.x(t) - ref)[:, 0]
        assert err[t > 0.5 + 2.5 * 2.0**-i].max(initial=0.0) <= 1e-12
        errs.append(float(err.sum() * (t[1] - t[0])))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    with pytest.raises(ValueError):
        strict_sense_approximation(sc.control, sc.dyn, 0)


def test_plateau_with_constant_slope():
    # atom at 0.5 of mass (2, 0) run at constant slope (2, 0)
    dyn = smooth_dyn(1, 2, 1, 1, 1.0)
    mu = VectorMeasure.atoms(1.0, [0.5], [[2.0, 0.0]])
    c = ImpulseControl.from_measure(mu, 1, 1, 1.0)
    ep = impulse_to_extended(c, dyn)
    (k0, k1), = ep.ec.plateaus()
    np.testing.assert_allclose(ep.ec.w[k0:k1, 0], [[1.0, 0.0]])
    proc = extended_to_impulse(ep)
    w = proc.control.attached.get(0.5, 1)
    np.testing.assert_allclose(w.values, [[2.0, 0.0]])


def test_csv_outputs(tmp_path):
    sc = scenario("two_atom")
    traj, arcs = simulate_impulse(sc.control, sc.dyn)
    traj.write_csv(tmp_path / "x.csv", np.linspace(0, traj.T, 11))
    traj.write_jump_csv(tmp_path / "jumps.csv", arcs)
    names = arcs.write_csv(tmp_path)
    lines = (tmp_path / "jumps.csv").read_text().splitlines()
    assert len(lines) - 1 == len(traj.jump_table())
    refs = {ref for ln in lines[1:] for ref in ln.split(",")[-1].split(";") if ref}
    assert refs <= set(names)
    assert isinstance(JumpArcSet.from_process(traj.ep), JumpArcSet)


@pytest.mark.parametrize("name", ["single_atom", "two_atom"])
def test_approximations_keep_variation_and_converge(name):
    sc = scenario(name)
    ep = impulse_to_extended(sc.control, sc.dyn)
    xT = gc_solution(ep).x(sc.dyn.T)[0]
    errs = []
    for i in (4, 8, 12, 16):
        ap = strict_sense_approximation(ep, sc.dyn, i)
        assert ap.ep.beta_end == pytest.approx(sc.control.nu.total(), rel=1e-13)
        errs.append(float(np.abs(ap.trajectory.x(sc.dyn.T)[0] - xT).max()))
    assert errs[2] <= 1e-3 and errs[-1] <= errs[0] + 1e-12
