"""Vertical-motion checks against the exact alpha=2 solvable case and limits.

For alpha=2 and the sine profile with l=pi, the substitution u = cos q turns
the motion at energy E into simple harmonic motion: u'' = -2E u with
amplitude sqrt(1 - delta/E).  Hence T(E) = 2 pi / sqrt(2E) for every delta
(isochronous), a(delta) = 1 identically, the orbit is
q*(theta) = arccos(sqrt(1-2delta) cos theta) at E = 1/2, and the action is
I(E) = sqrt(2E) - sqrt(2 delta).  These closed forms anchor everything else.
"""

import csv

import numpy as np
import pytest

from choreo.vertical import (
    action_of_energy,
    export_orbit_csv,
    omega0_convergence,
    period_of_energy,
    solve_vertical_orbit,
)


# ------------------------------------------------------------- period law


def test_period_delta0_exact():
    assert period_of_energy(0.0, 4.0, 0.5) == pytest.approx(2 * np.pi, rel=1e-13)
    assert period_of_energy(0.0, 2.0, 2.0) == pytest.approx(np.pi, rel=1e-13)


def test_period_alpha2_isochronous():
    for delta in (1e-2, 1e-4):
        T = period_of_energy(delta, 2.0, 0.5)
        assert T == pytest.approx(2 * np.pi, rel=1e-8)
    T = period_of_energy(1e-2, 2.0, 0.3)
    assert T == pytest.approx(2 * np.pi / np.sqrt(0.6), rel=1e-8)


def test_no_motion_below_minimum():
    # alpha=2 sine profile: min of V is 1 at the channel center
    with pytest.raises(ValueError):
        period_of_energy(1e-2, 2.0, 0.5e-2)


def test_dT_dE_negative():
    delta, alpha, E = 1e-4, 4.0, 0.5
    h = 1e-3 * E
    dT = period_of_energy(delta, alpha, E + h) - period_of_energy(delta, alpha, E - h)
    assert dT < 0.0


# ------------------------------------------------------------- orbit solve


def test_orbit_alpha2_closed_form():
    delta = 1e-2
    orb = solve_vertical_orbit(delta, 2.0, grid_size=512)
    q_exact = np.arccos(np.sqrt(1.0 - 2.0 * delta) * np.cos(orb.theta))
    assert np.max(np.abs(orb.q - q_exact)) < 1e-6


def test_orbit_frequency_and_twist_alpha2():
    for delta in (1e-2, 1e-3):
        orb = solve_vertical_orbit(delta, 2.0, grid_size=256)
        assert orb.omega0 == pytest.approx(1.0, abs=1e-9)
        assert orb.a == pytest.approx(1.0, abs=1e-5)


def test_orbit_energy_invariant():
    orb = solve_vertical_orbit(1e-3, 4.0, grid_size=512)
    V = lambda q: 1e-3 / np.sin(q) ** 4
    H = 0.5 * orb.p**2 + V(orb.q)
    assert np.max(np.abs(H - 0.5)) < 1e-10


def test_orbit_symmetries():
    orb = solve_vertical_orbit(1e-3, 4.0, grid_size=512)
    n = len(orb.theta)
    # evenness: q*(2pi - theta) = q*(theta)
    q_rev = orb.q[(-np.arange(n)) % n]
    assert np.max(np.abs(orb.q - q_rev)) < 1e-9
    # reflection through the channel center: q*(pi - theta) = l - q*(theta)
    k = np.arange(n)
    mirror = (n // 2 - k) % n
    assert n % 2 == 0
    assert np.max(np.abs(orb.q[mirror] + orb.q - np.pi)) < 1e-9


def test_orbit_turning_scaling():
    # q_min / delta^(1/alpha) -> 2^(1/alpha) / Q'(0), sine profile Q'(0)=1
    delta, alpha = 1e-8, 2.0
    orb = solve_vertical_orbit(delta, alpha, grid_size=64)
    ratio = orb.turning_points[0] / delta ** (1.0 / alpha)
    assert abs(ratio - np.sqrt(2.0)) < 0.02 * np.sqrt(2.0)


def test_orbit_sawtooth_limit():
    orb = solve_vertical_orbit(1e-6, 4.0, grid_size=512)
    mid = np.argmin(np.abs(orb.theta - np.pi / 2))
    assert abs(orb.q[mid] - np.pi / 2) < 1e-3
    # pointwise saw-tooth limit on the rising branch
    for frac in (0.25, 0.5, 0.75):
        j = np.argmin(np.abs(orb.theta - frac * np.pi))
        assert abs(orb.q[j] - frac * np.pi) < 5e-2


def test_a_positive_alpha4():
    for delta in (1e-3, 1e-4, 1e-5):
        orb = solve_vertical_orbit(delta, 4.0, grid_size=64)
        assert orb.a > 0.0


# ------------------------------------------------------------- frequency


def test_omega0_convergence_table():
    deltas = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    table = omega0_convergence(deltas, 4.0)
    devs = np.array([abs(w - 1.0) for _, w in table])
    assert np.all(np.diff(devs) < 0.0)
    # boundary-layer exponent: |omega0 - 1| ~ delta^(1/alpha)
    slope = np.polyfit(np.log(deltas), np.log(devs), 1)[0]
    assert abs(slope - 0.25) < 0.1


def test_omega0_delta0_entry():
    table = omega0_convergence([1e-3, 0.0], 4.0)
    assert table[-1][1] == 1.0


# ------------------------------------------------------------- action


def test_action_alpha2_closed_form():
    for delta in (1e-2, 1e-3):
        for E in (0.3, 0.5, 1.0):
            I = action_of_energy(delta, 2.0, E)
            assert I == pytest.approx(np.sqrt(2 * E) - np.sqrt(2 * delta), abs=1e-7)


def test_action_strictly_increasing():
    Es = np.linspace(0.2, 1.5, 9)
    Is = [action_of_energy(1e-3, 4.0, E) for E in Es]
    assert np.all(np.diff(Is) > 0.0)


# ------------------------------------------------------------- export


def test_orbit_csv_export(tmp_path):
    orb = solve_vertical_orbit(1e-3, 4.0, grid_size=128)
    path = tmp_path / "orbit.csv"
    export_orbit_csv(orb, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["theta", "q", "p"]
    assert len(rows) == 1 + 128
    got = np.array([[float(x) for x in r] for r in rows[1:]])
    assert np.allclose(got[:, 1], orb.q)
