"""Single-particle vertical motion in a steep channel: orbit, period, twist.

The channel potential is delta * Q(q)^(-alpha) with Q the smooth width
profile (sine by default).  At fixed energy the motion is a libration
between two turning points; everything here reduces to 1D quadratures with
the turning-point singularity absorbed by the substitution q = q_t + u^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .model import ConfinementPotential

_QUAD_OPTS = dict(limit=200, epsabs=1e-13, epsrel=1e-12)


def _profile(alpha, conf, length):
    if conf is None:
        conf = ConfinementPotential(alpha=alpha, lengths=(length,))
    return conf


def _turning_points(delta, alpha, conf, E, axis):
    """Roots of delta*V(q) = E on both sides of the channel center."""
    l = conf.lengths[axis]
    c = 0.5 * l
    Vmin = delta * conf.axis_V(c, axis, 0)
    if E <= Vmin:
        raise ValueError(f"no motion: E={E} is at or below the potential minimum {Vmin}")
    f = lambda q: delta * conf.axis_V(q, axis, 0) - E
    lo = brentq(f, 1e-14 * l, c, xtol=1e-15)
    hi = brentq(f, c, l * (1.0 - 1e-14), xtol=1e-15)
    return lo, hi


def period_of_energy(delta, alpha, E, conf=None, axis=0):
    """Libration period T(E); exactly 2 l / sqrt(2E) for the hard wall."""
    conf = _profile(alpha, conf, np.pi)
    l = conf.lengths[axis]
    if delta == 0.0:
        return 2.0 * l / np.sqrt(2.0 * E)
    lo, hi = _turning_points(delta, alpha, conf, E, axis)
    c = 0.5 * (lo + hi)

    def speed(q):
        return np.sqrt(2.0 * (E - delta * conf.axis_V(q, axis, 0)))

    left, _ = quad(lambda u: 2.0 * u / speed(lo + u * u),
                   0.0, np.sqrt(c - lo), **_QUAD_OPTS)
    right, _ = quad(lambda v: 2.0 * v / speed(hi - v * v),
                    0.0, np.sqrt(hi - c), **_QUAD_OPTS)
    return 2.0 * (left + right)


def action_of_energy(delta, alpha, E, conf=None, axis=0):
    """Action I(E) = (1/2pi) * contour integral of p dq = (1/pi) * int p dq."""
    conf = _profile(alpha, conf, np.pi)
    l = conf.lengths[axis]
    if delta == 0.0:
        return l * np.sqrt(2.0 * E) / np.pi
    lo, hi = _turning_points(delta, alpha, conf, E, axis)
    c = 0.5 * (lo + hi)

    def speed(q):
        return np.sqrt(max(2.0 * (E - delta * conf.axis_V(q, axis, 0)), 0.0))

    left, _ = quad(lambda u: 2.0 * u * speed(lo + u * u),
                   0.0, np.sqrt(c - lo), **_QUAD_OPTS)
    right, _ = quad(lambda v: 2.0 * v * speed(hi - v * v),
                    0.0, np.sqrt(hi - c), **_QUAD_OPTS)
    return (left + right) / np.pi


def omega_of_energy(delta, alpha, E, conf=None, axis=0):
    return 2.0 * np.pi / period_of_energy(delta, alpha, E, conf=conf, axis=axis)


def twist_coefficient(delta, alpha, E=0.5, conf=None, axis=0):
    """a = d omega / d I = omega'(E) * omega(E), since dI/dE = 1/omega."""
    h = 1e-4 * E
    w = [omega_of_energy(delta, alpha, E + k * h, conf=conf, axis=axis)
         for k in (-2, -1, 0, 1, 2)]
    dw = (w[0] - 8.0 * w[1] + 8.0 * w[3] - w[4]) / (12.0 * h)
    return dw * w[2]


@dataclass
class VerticalOrbit:
    delta: float
    alpha: float
    theta: np.ndarray          # uniform grid on [0, 2pi)
    q: np.ndarray
    p: np.ndarray
    omega0: float              # 2pi / T at E = 1/2
    a: float                   # twist d omega / d I at E = 1/2
    turning_points: tuple      # (q_min, q_max)


def solve_vertical_orbit(delta, alpha, grid_size=512, conf=None, axis=0,
                         E=0.5, n_tab=2000):
    """Periodic orbit at energy E, reparameterized by angle theta = omega0 t.

    theta = 0 at the lower turning point; the rising branch covers [0, pi]
    and the falling branch is its time-reversal mirror.
    """
    if delta <= 0.0:
        raise ValueError("the smooth orbit needs delta > 0; delta=0 is the saw-tooth")
    conf = _profile(alpha, conf, np.pi)
    lo, hi = _turning_points(delta, alpha, conf, E, axis)
    c = 0.5 * (lo + hi)

    def speed(q):
        val = 2.0 * (E - delta * conf.axis_V(q, axis, 0))
        return np.sqrt(np.maximum(val, 0.0))

    # time along the rising branch, accumulated on both half-intervals with
    # the turning substitution q = turning +- u^2; the integrand limit at the
    # turning point is 2/sqrt(2 delta |V'|)
    def limit_at(qt):
        return 2.0 / np.sqrt(2.0 * delta * abs(conf.axis_V(qt, axis, 1)))

    u = np.linspace(0.0, np.sqrt(c - lo), n_tab)
    q_left = lo + u * u
    f_left = np.empty_like(u)
    f_left[1:] = 2.0 * u[1:] / speed(q_left[1:])
    f_left[0] = limit_at(lo)
    t_left = cumulative_simpson(f_left, x=u, initial=0.0)

    v = np.linspace(0.0, np.sqrt(hi - c), n_tab)
    q_rt = hi - v * v
    f_rt = np.empty_like(v)
    f_rt[1:] = 2.0 * v[1:] / speed(q_rt[1:])
    f_rt[0] = limit_at(hi)
    s = cumulative_simpson(f_rt, x=v, initial=0.0)  # time from hi inward
    q_right = q_rt[::-1]
    t_right = t_left[-1] + (s[-1] - s)[::-1]

    q_half = np.concatenate([q_left, q_right[1:]])
    t_half = np.concatenate([t_left, t_right[1:]])
    T = 2.0 * t_half[-1]
    omega0 = 2.0 * np.pi / T

    theta_half = omega0 * t_half
    theta_half[-1] = np.pi  # exact endpoint
    spline = CubicSpline(theta_half, q_half)

    theta = 2.0 * np.pi * np.arange(grid_size) / grid_size
    folded = np.where(theta <= np.pi, theta, 2.0 * np.pi - theta)
    q_grid = spline(folded)
    q_grid = np.clip(q_grid, lo, hi)
    p_grid = speed(q_grid) * np.where((theta > 0) & (theta < np.pi), 1.0, -1.0)
    p_grid[theta == 0.0] = 0.0

    a = twist_coefficient(delta, alpha, E=E, conf=conf, axis=axis)
    return VerticalOrbit(delta=delta, alpha=alpha, theta=theta, q=q_grid,
                         p=p_grid, omega0=omega0, a=a, turning_points=(lo, hi))


def omega0_convergence(deltas, alpha, conf=None, axis=0):
    """Table of (delta, omega0(delta)) at E = 1/2."""
    out = []
    for d in deltas:
        out.append((d, omega_of_energy(d, alpha, 0.5, conf=conf, axis=axis)))
    return out


def export_orbit_csv(orbit: VerticalOrbit, path):
    with open(path, "w") as fh:
        fh.write("theta,q,p\n")
        for th, q, p in zip(orbit.theta, orbit.q, orbit.p):
            fh.write(f"{th:.17g},{q:.17g},{p:.17g}\n")
