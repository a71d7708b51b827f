"""Averaged pair-interaction machinery: closed forms, quadrature, scaling.

Oracle identities, all derived by hand from the piecewise-linear bounce
path q*(th) = th on [0, pi], 2pi - th on [pi, 2pi]:

* averaged pair potential
      F(v) = (1 - v/pi) W(v) + (1/pi) int_0^v W(s) ds   on [0, pi],
  even and 2pi-periodic in v; for W = cos this is
      F(v) = ((pi - v) cos v + sin v) / pi.
* k-th phase derivative (k >= 1, interior)
      (1 - v/pi) W^(k)(v) - ((k-1)/pi) W^(k-1)(v),
  whose one-sided k=3 limit at v -> 0+ is -(2/pi) W''(0); evenness then
  forces a jump of size (4/pi)|W''(0)| across v = 0.
* wall-layer constant: the substitution u^2 = 1 - 2 q^(-a) turns the
  defining integral of K(a) into a Beta function,
      K(a) = 4a * 2^(-2-1/a) * B(2 + 1/a, 1/2),
  so K(2) = 3 sqrt(2) pi / 8.
"""

import io
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import beta as euler_beta

from choreo.average import (
    AveragedPotential,
    CollisionError,
    QuadraturePolicy,
    SmoothnessError,
    averaged_U,
    collision_test,
    export_w_avg_table,
    gamma_beta,
    k_alpha,
    sawtooth_path,
    scaling_probe,
    vertical_path,
    w_avg,
    w_avg_deriv,
)
from choreo.model import ConfinementPotential, InteractionPotential, SystemSpec

W_COS = InteractionPotential("cosine-test")
W_SQUARE = InteractionPotential("quartic-test", params={"a4": 0.0, "a2": 1.0})


def iss(shift):
    return InteractionPotential("inverse-square-shifted", params={"shift": shift})


def cos_avg(v):
    return ((math.pi - v) * math.cos(v) + math.sin(v)) / math.pi


def cos_avg_d1(v):
    return -(math.pi - v) * math.sin(v) / math.pi


def cos_avg_d2(v):
    return (-(math.pi - v) * math.cos(v) + math.sin(v)) / math.pi


def k_alpha_closed(a):
    return 4.0 * a * 2.0 ** (-2.0 - 1.0 / a) * euler_beta(2.0 + 1.0 / a, 0.5)


# -- saw-tooth closed form vs quadrature ---------------------------------


def test_w_avg_closed_form_grid():
    # acceptance-grade check: 1000 points, 1e-10, under a second
    path = sawtooth_path()
    grid = np.linspace(0.0, np.pi, 1000)
    t0 = time.perf_counter()
    vals = np.array([w_avg(v, 0.0, path, W_COS, method="quadrature") for v in grid])
    elapsed = time.perf_counter() - t0
    ref = np.array([cos_avg(v) for v in grid])
    assert np.max(np.abs(vals - ref)) < 1e-10
    assert elapsed < 1.0


def test_w_avg_spot_values():
    path = sawtooth_path()
    assert abs(w_avg(np.pi / 2, 0.0, path, W_COS) - 1.0 / np.pi) < 1e-13
    assert abs(w_avg(0.0, 0.0, path, W_COS) - 1.0) < 1e-13
    assert abs(w_avg(np.pi, 0.0, path, W_COS)) < 1e-13
    # both routes agree off the default
    for v in (0.3, 1.7, 2.9):
        a = w_avg(v, 0.0, path, W_COS, method="closed-form")
        b = w_avg(v, 0.0, path, W_COS, method="quadrature")
        assert abs(a - b) < 1e-12


def test_w_avg_general_length():
    # closed form carries the path slope; quadrature must agree
    path = sawtooth_path(length=2.0)
    for v in (0.4, 1.1, 2.6):
        a = w_avg(v, 0.0, path, W_COS, method="closed-form")
        b = w_avg(v, 0.0, path, W_COS, method="quadrature")
        assert abs(a - b) < 1e-12
    assert abs(path.omega0 - np.pi / 2.0) < 1e-15


@settings(deadline=None, max_examples=60)
@given(
    v=st.floats(0.02, 2.0 * np.pi - 0.02),
    shift=st.floats(0.5, 4.0),
    zeta=st.floats(0.0, 2.0),
)
def test_w_avg_parity_and_quadrature_agreement(v, shift, zeta):
    path = sawtooth_path()
    W = iss(shift)
    q = w_avg(v, zeta, path, W, method="quadrature")
    assert abs(q - w_avg(2.0 * np.pi - v, zeta, path, W, method="quadrature")) < 1e-12
    assert abs(q - w_avg(-v, zeta, path, W, method="quadrature")) < 1e-12
    assert abs(q - w_avg(v, zeta, path, W, method="closed-form")) < 1e-10


def test_panel_doubling_stability():
    st_path = sawtooth_path()
    base = QuadraturePolicy(subdiv=2)
    fine = QuadraturePolicy(subdiv=4)
    for v, zeta in ((0.9, 0.0), (2.2, 0.7)):
        a = w_avg(v, zeta, st_path, iss(0.5), policy=base, method="quadrature")
        b = w_avg(v, zeta, st_path, iss(0.5), policy=fine, method="quadrature")
        assert abs(a - b) < 1e-11
    vert = vertical_path(1e-4, 4.0)
    coarse = QuadraturePolicy(grade=64)
    dense = QuadraturePolicy(grade=128)
    a = w_avg(np.pi / 2, 0.0, vert, iss(0.5), policy=coarse)
    b = w_avg(np.pi / 2, 0.0, vert, iss(0.5), policy=dense)
    assert abs(a - b) < 1e-11


# -- derivative calculus --------------------------------------------------


def test_first_derivative_identity():
    path = sawtooth_path()
    for v in np.linspace(0.05, np.pi - 0.05, 40):
        d1 = w_avg_deriv(v, 0.0, 1, path, W_COS)
        assert abs(d1 - (1.0 - v / np.pi) * (-np.sin(v))) < 1e-12
    # non-vacuous cross-check: fourth-order difference of the quadrature
    h = 8e-5
    for v in np.linspace(0.3, np.pi - 0.3, 7):
        f = [
            w_avg(v + k * h, 0.0, path, W_COS, method="quadrature")
            for k in (-2, -1, 1, 2)
        ]
        fd = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
        assert abs(fd - cos_avg_d1(v)) < 1e-8


def test_second_derivative_values():
    path = sawtooth_path()
    assert abs(w_avg_deriv(0.0, 0.0, 2, path, W_COS) - (-1.0)) < 1e-13
    for v in (0.4, 1.3, 2.8):
        assert abs(w_avg_deriv(v, 0.0, 2, path, W_COS) - cos_avg_d2(v)) < 1e-12
    # at v = pi only the moving-kink boundary term survives
    W = iss(0.1)
    d2 = w_avg_deriv(np.pi, 0.0, 2, path, W)
    expected = -W.profile_deriv(np.pi, 0.0, 1) / np.pi
    assert abs(d2 - expected) < 1e-13


def test_third_derivative_one_sided_and_jump():
    path = sawtooth_path()
    up = w_avg_deriv(0.0, 0.0, 3, path, W_COS, one_sided=+1)
    dn = w_avg_deriv(0.0, 0.0, 3, path, W_COS, one_sided=-1)
    assert abs(up - 2.0 / np.pi) < 1e-13
    assert abs(dn + 2.0 / np.pi) < 1e-13
    assert abs((up - dn) - 4.0 / np.pi) < 1e-13
    # independent route: one-sided second-order differences of d2
    h = 1e-4
    d2 = lambda v: w_avg_deriv(v, 0.0, 2, path, W_COS)
    fd_up = (-3.0 * d2(0.0) + 4.0 * d2(h) - d2(2.0 * h)) / (2.0 * h)
    assert abs(2.0 * fd_up - 4.0 / np.pi) < 1e-6
    # matching point at pi carries the same size jump for W = cos
    up = w_avg_deriv(np.pi, 0.0, 3, path, W_COS, one_sided=+1)
    dn = w_avg_deriv(np.pi, 0.0, 3, path, W_COS, one_sided=-1)
    assert abs(abs(up - dn) - 4.0 / np.pi) < 1e-13


def test_smoothness_error_without_flag():
    path = sawtooth_path()
    with pytest.raises(SmoothnessError):
        w_avg_deriv(0.0, 0.0, 3, path, W_COS)
    with pytest.raises(SmoothnessError):
        w_avg_deriv(np.pi, 0.0, 4, path, W_COS)
    # interior orders need no flag; k <= 2 is continuous everywhere
    w_avg_deriv(1.0, 0.0, 5, path, W_COS)
    w_avg_deriv(np.pi, 0.0, 2, path, W_COS)


def test_c2_matching_at_turning_phases():
    path = sawtooth_path()
    W = iss(0.8)
    for m in (0.0, np.pi):
        d1 = w_avg_deriv(m, 0.0, 1, path, W)
        d2 = w_avg_deriv(m, 0.0, 2, path, W)
        for side in (+1, -1):
            eps = 1e-7
            v = m + side * eps
            assert abs(w_avg_deriv(v, 0.0, 1, path, W) - d1) < 1e-5
            assert abs(w_avg_deriv(v, 0.0, 2, path, W) - d2) < 1e-5
    # parity of odd orders across the even point
    assert (
        abs(
            w_avg_deriv(0.2, 0.0, 1, path, W)
            + w_avg_deriv(-0.2, 0.0, 1, path, W)
        )
        < 1e-14
    )


def test_delta_to_zero_c2_closeness():
    st_path = sawtooth_path()
    v = 2.0
    target = [w_avg_deriv(v, 0.0, k, st_path, W_COS) if k else
              w_avg(v, 0.0, st_path, W_COS) for k in range(3)]
    errs = []
    for delta in (1e-3, 1e-4, 1e-5):
        path = vertical_path(delta, 4.0)
        got = [w_avg_deriv(v, 0.0, k, path, W_COS) if k else
               w_avg(v, 0.0, path, W_COS) for k in range(3)]
        errs.append([abs(g - t) for g, t in zip(got, target)])
    errs = np.array(errs)
    for k in range(3):
        # decay toward the kinked-path values at the layer-width rate
        assert errs[0, k] > errs[1, k] > errs[2, k]
        assert errs[2, k] < 0.5 * errs[0, k]
    assert np.all(errs[2] < 0.06)


# -- averaged potential over all particles -------------------------------


def test_averaged_U_pair_sum():
    path = sawtooth_path()
    conf = ConfinementPotential(4.0, (np.pi,))
    spec = SystemSpec(N=2, d=1, delta=0.0, interaction=W_COS, confinement=conf)
    theta = np.array([0.9, 0.9 - np.pi])
    U = averaged_U(theta, None, path, spec)
    assert abs(U) < 1e-12
    theta = np.array([1.4, 0.3])
    U = averaged_U(theta, None, path, spec)
    assert abs(U - 2.0 * w_avg(1.1, 0.0, path, W_COS)) < 1e-13


def test_averaged_U_with_transverse_terms():
    path = sawtooth_path()
    conf = ConfinementPotential(4.0, (np.pi, np.pi))
    spec = SystemSpec(N=2, d=2, delta=0.0, interaction=iss(0.5), confinement=conf)
    theta = np.array([0.2, 1.5])
    xi = np.array([[1.1], [2.0]])
    U = averaged_U(theta, xi, path, spec)
    manual = (
        2.0 * w_avg(1.3, 0.9, path, spec.interaction)
        + conf.axis_V(1.1, 1, 0)
        + conf.axis_V(2.0, 1, 0)
    )
    assert abs(U - manual) < 1e-12


def test_averaged_U_invariances():
    rng = np.random.default_rng(7)
    path = sawtooth_path()
    conf = ConfinementPotential(4.0, (np.pi, np.pi))
    spec = SystemSpec(N=3, d=2, delta=0.0, interaction=iss(1.0), confinement=conf)
    theta = rng.uniform(0.0, 2.0 * np.pi, 3)
    xi = rng.uniform(1.0, 2.0, (3, 1))
    U = averaged_U(theta, xi, path, spec)
    for c in rng.uniform(-3.0, 3.0, 4):
        assert abs(averaged_U(theta + c, xi, path, spec) - U) < 1e-12
    perm = np.array([2, 0, 1])
    assert abs(averaged_U(theta[perm], xi[perm], path, spec) - U) < 1e-14


# -- collision set --------------------------------------------------------


def test_collision_examples():
    path = sawtooth_path()
    # distinct transverse offsets keep the pair clear at rho = 0
    res = collision_test(np.array([0.3, 1.1]), np.array([[0.5], [1.5]]), path, 0.0)
    assert not res.collides
    # identical phases and offsets collide immediately
    res = collision_test(np.array([0.4, 0.4]), np.array([[1.0], [1.0]]), path, 0.0)
    assert res.collides
    assert res.time == 0.0
    # same vertical line, any phase split: the bounce paths must cross
    res = collision_test(np.array([0.0, 2.1]), np.array([[1.0], [1.0]]), path, 0.0)
    assert res.collides
    assert res.min_distance <= 1e-15


def test_collision_error_propagates():
    path = sawtooth_path()
    W = InteractionPotential("inverse-power-with-core", params={"power": 2.0})
    with pytest.raises(CollisionError):
        w_avg(0.0, 0.0, path, W)
    with pytest.raises(CollisionError):
        w_avg(0.0, 0.0, path, W, method="quadrature")
    conf = ConfinementPotential(4.0, (np.pi,))
    spec = SystemSpec(N=2, d=1, delta=0.0, interaction=W, confinement=conf)
    with pytest.raises(CollisionError):
        averaged_U(np.array([0.7, 0.7]), None, path, spec)


# -- quadratic coefficients ----------------------------------------------


def test_gamma_beta_values():
    tab = gamma_beta(W_SQUARE, None, np.array([0.0, 0.0]))
    assert abs(tab.gamma[0, 1] - 2.0) < 1e-14
    assert abs(tab.beta[0, 1] + 2.0) < 1e-14
    tab = gamma_beta(W_SQUARE, None, np.array([0.0, np.pi]))
    assert abs(tab.gamma[0, 1] + 2.0) < 1e-14
    assert abs(tab.beta[0, 1] - 2.0) < 1e-14
    assert tab.theta_rel[0, 1] == np.pi
    W = iss(0.1)
    tab = gamma_beta(W, None, np.array([0.0, np.pi]))
    ref = 2.0 / (0.1 + np.pi**2) ** 2
    assert abs(tab.gamma[0, 1] - ref) < 1e-14
    assert abs(ref - 0.020122) < 5e-7
    assert abs(tab.beta[0, 1] - W.profile_deriv(np.pi, 0.0, 2)) < 1e-14


def test_gamma_beta_symmetry_and_consistency():
    rng = np.random.default_rng(3)
    xi = rng.uniform(0.0, 1.0, (4, 2))
    theta = np.array([0.0, np.pi, 0.0, np.pi])
    W = iss(0.7)
    tab = gamma_beta(W, xi, theta)
    assert np.allclose(tab.gamma, tab.gamma.T, atol=0.0)
    assert np.allclose(tab.beta, tab.beta.T, atol=0.0)
    assert np.allclose(tab.theta_rel, tab.theta_rel.T, atol=0.0)
    # in-phase gamma is the curvature of the averaged potential at 0
    path = sawtooth_path()
    zeta = float(np.linalg.norm(xi[0] - xi[2]))
    d2 = w_avg_deriv(0.0, zeta, 2, path, W)
    assert abs(tab.gamma[0, 2] - d2) < 1e-8
    # and agrees with a crude curvature estimate of the quadrature
    h = 1e-3
    f0 = w_avg(0.0, zeta, path, W, method="quadrature")
    fh = w_avg(h, zeta, path, W, method="quadrature")
    assert abs(2.0 * (fh - f0) / h**2 - tab.gamma[0, 2]) < 1e-3
    with pytest.raises(ValueError):
        gamma_beta(W, None, np.array([0.0, 1.0]))


# -- wall-layer constant --------------------------------------------------


def test_k_alpha_against_beta_closed_form():
    assert abs(k_alpha(2.0) - 3.0 * math.sqrt(2.0) * math.pi / 8.0) < 1e-10
    for a in (1.0, 2.0, 4.0, 8.0):
        val = k_alpha(a)
        assert val > 0.0
        assert abs(val - k_alpha_closed(a)) < 1e-9


def test_k_alpha_tail_insensitive():
    assert abs(k_alpha(4.0, tail_tol=1e-10) - k_alpha(4.0, tail_tol=5e-11)) < 1e-10


# -- fourth-derivative scaling in delta ------------------------------------


def test_scaling_probe_slope_and_prefactor():
    probe = scaling_probe(
        4.0, np.array([1e-3, 1e-4, 1e-5, 1e-6]), np.pi, iss(0.1)
    )
    assert abs(probe.slope_corrected + 0.25) < 0.05
    i = int(np.argmin(probe.deltas))
    assert abs(probe.ratio[i] - 1.0) < 0.10
    assert probe.r_squared_corrected > 0.99
    # raw fit drifts shallow at finite delta but must show the decay
    assert probe.slope < -0.15


def test_fourth_derivative_sign_pattern():
    # constant-curvature interaction: signs at 0 and pi must be opposite
    delta, alpha = 1e-5, 4.0
    path = vertical_path(delta, alpha, grid_size=8192, n_tab=8000)
    d4_0 = w_avg_deriv(0.0, 0.0, 4, path, W_SQUARE)
    d4_pi = w_avg_deriv(np.pi, 0.0, 4, path, W_SQUARE)
    assert d4_0 < 0.0 < d4_pi
    mag = delta ** (-1.0 / alpha) * k_alpha(alpha) * 2.0 / (2.0 * np.pi)
    assert 0.5 < d4_pi / mag < 1.5
    assert 0.5 < -d4_0 / mag < 1.5


# -- paths and export -----------------------------------------------------


def test_path_invariants():
    st_path = sawtooth_path()
    assert abs(st_path.value(0.0) - st_path.value(2.0 * np.pi)) < 1e-15
    assert abs(abs(st_path.deriv(1.0, 1)) - 1.0 / st_path.omega0) < 1e-15
    assert st_path.impact_phases == (0.0, np.pi)
    vert = vertical_path(1e-4, 4.0)
    assert abs(vert.value(0.0) - vert.value(2.0 * np.pi)) < 1e-12
    # chain rule: dq/dtheta equals momentum over omega0
    th = np.linspace(0.3, 2.0 * np.pi - 0.3, 11)
    h = 1e-6
    fd = (vert.value(th + h) - vert.value(th - h)) / (2.0 * h)
    assert np.max(np.abs(fd - vert.deriv(th, 1))) < 1e-6


def test_export_w_avg_table(tmp_path):
    out = tmp_path / "table.csv"
    path = sawtooth_path()
    export_w_avg_table(out, path, W_COS, np.array([0.5, 1.5, 2.5]))
    text = out.read_text().splitlines()
    assert text[0].startswith("#")
    assert "delta=" in text[0] and "alpha=" in text[0]
    assert text[1].split(",") == ["vartheta", "value", "d1", "d2", "d3", "d4"]
    rows = [line.split(",") for line in text[2:]]
    assert len(rows) == 3
    got = float(rows[1][1])
    assert abs(got - cos_avg(1.5)) < 1e-12
    d3 = float(rows[0][4])
    assert abs(d3 - w_avg_deriv(0.5, 0.0, 3, path, W_COS)) < 1e-12
