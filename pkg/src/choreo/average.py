"""Averaged pair interactions along a shared periodic bounce path.

Two particles sliding along the same 2pi-periodic vertical path q*, with
phase offset vartheta and transverse separation zeta, feel on average

    w_avg(vartheta, zeta) =
        (1/2pi) int_0^2pi W(q*(th + vartheta) - q*(th), zeta) dth.

This module evaluates w_avg and its phase derivatives, assembles the full
averaged potential over N particles, classifies colliding phase
configurations, and measures how the fourth phase derivative blows up as
the wall softening delta shrinks.

Two evaluation routes are kept deliberately separate: a closed-form branch
reduction valid for the piecewise-linear path (delta = 0), and composite
Gauss-Legendre quadrature with panel boundaries wherever either argument
of q* crosses an impact phase, graded toward those boundaries on the
wall-layer scale delta^(1/alpha).  Evaluators are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from .model import ConfinementPotential, DomainViolation, InteractionPotential
from .vertical import solve_vertical_orbit

TWO_PI = 2.0 * np.pi


class CollisionError(ValueError):
    """Averaged integrand blew past the configured bound (near-collision)."""


class SmoothnessError(ValueError):
    """Derivative of order >= 3 requested exactly at a matching phase."""


_GL_CACHE: dict = {}


def _gl(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


# -- periodic paths --------------------------------------------------------


@dataclass(frozen=True)
class PeriodicPath:
    """Sampled 2pi-periodic vertical path with impact-phase metadata.

    theta holds uniform sample phases on [0, 2pi), q the path samples
    (one column per spatial axis of the path; the bounce paths used here
    are one-dimensional).  Evaluation wraps modulo 2pi, so the closure
    q*(2pi) = q*(0) holds by construction.
    """

    theta: np.ndarray
    q: np.ndarray
    omega0: float
    impact_phases: tuple
    source: str
    delta: float
    alpha: float | None = None
    axis: int = 0
    length: float = np.pi
    conf: ConfinementPotential | None = None
    momentum: np.ndarray | None = None

    def _memo(self) -> dict:
        memo = self.__dict__.get("_spline_memo")
        if memo is None:
            memo = {}
            object.__setattr__(self, "_spline_memo", memo)
        return memo

    def _spline(self, which: str) -> CubicSpline:
        memo = self._memo()
        if which not in memo:
            th = np.append(self.theta, TWO_PI)
            if which == "q":
                ys = np.append(self.q[:, 0], self.q[0, 0])
            else:
                ys = np.append(self.momentum, self.momentum[0])
            memo[which] = CubicSpline(th, ys, bc_type="periodic")
        return memo[which]

    def value(self, th):
        """Vertical coordinate q*(th), vectorized, 2pi-periodic."""
        fold = np.mod(th, TWO_PI)
        if self.source == "saw-tooth":
            lam = self.length / np.pi
            return np.where(fold <= np.pi, lam * fold, lam * (TWO_PI - fold))
        return self._spline("q")(fold)

    def deriv(self, th, order: int):
        """dq*/dth (order 1) or its derivative (order 2).

        The saw-tooth branch returns right-limits at the impact phases.
        Smooth paths use the momentum samples for order 1 and the exact
        force relation q'' = -delta V'(q) / omega0^2 for order 2.
        """
        fold = np.mod(th, TWO_PI)
        if self.source == "saw-tooth":
            lam = self.length / np.pi
            if order == 1:
                return np.where(fold < np.pi, lam, -lam)
            if order == 2:
                return np.zeros_like(np.asarray(fold, dtype=float))
            raise ValueError("path derivatives available up to order 2")
        if order == 1:
            return self._spline("p")(fold) / self.omega0
        if order == 2:
            qv = self._spline("q")(fold)
            force = self.conf.axis_V(qv, self.axis, 1)
            return -self.delta * force / self.omega0**2
        raise ValueError("path derivatives available up to order 2")


def sawtooth_path(length: float = np.pi, axis: int = 0,
                  alpha: float | None = None, n_samples: int = 1024) -> PeriodicPath:
    """Piecewise-linear bounce path between walls a distance `length` apart."""
    if length <= 0:
        raise ValueError("wall spacing must be positive")
    theta = np.linspace(0.0, TWO_PI, n_samples, endpoint=False)
    lam = length / np.pi
    q = np.where(theta <= np.pi, lam * theta, lam * (TWO_PI - theta))
    return PeriodicPath(
        theta=theta, q=q[:, None], omega0=np.pi / length,
        impact_phases=(0.0, np.pi), source="saw-tooth", delta=0.0,
        alpha=alpha, axis=axis, length=length,
    )


def vertical_path(delta: float, alpha: float, conf: ConfinementPotential | None = None,
                  axis: int = 0, grid_size: int = 2048, n_tab: int = 4000,
                  E: float = 0.5) -> PeriodicPath:
    """Smooth bounce path of the softened wall at energy E."""
    if delta <= 0:
        raise ValueError("delta must be positive; use sawtooth_path for the hard wall")
    if conf is None:
        conf = ConfinementPotential(alpha, (np.pi,))
    orbit = solve_vertical_orbit(delta, alpha, grid_size=grid_size, conf=conf,
                                 axis=axis, E=E, n_tab=n_tab)
    return PeriodicPath(
        theta=orbit.theta, q=orbit.q[:, None], omega0=orbit.omega0,
        impact_phases=(0.0, np.pi), source="vertical-orbit", delta=delta,
        alpha=alpha, axis=axis, length=conf.lengths[axis], conf=conf,
        momentum=orbit.p,
    )


# -- quadrature policy -----------------------------------------------------


@dataclass(frozen=True)
class QuadraturePolicy:
    """Panel layout for the averaging integrals.

    grade counts geometric cuts placed from each panel end toward the
    impact phases; None picks 0 for kinked paths and 64 for smooth ones.
    grade_width is the absolute grading scale, defaulting to the wall
    layer width delta^(1/alpha).
    """

    nodes: int = 32
    subdiv: int = 2
    grade: int | None = None
    grade_width: float | None = None
    blowup: float = 1e12

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("need at least 2 quadrature nodes per panel")
        if self.subdiv < 1:
            raise ValueError("subdiv must be >= 1")
        if self.blowup <= 0:
            raise ValueError("blow-up bound must be positive")


# -- averaged pair potential ----------------------------------------------


@dataclass(frozen=True)
class AveragedPotential:
    """w_avg evaluator bound to one path, interaction, and panel policy."""

    path: PeriodicPath
    W: InteractionPotential
    policy: QuadraturePolicy = QuadraturePolicy()
    delta: float | None = None

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", self.path.delta)
        elif abs(self.delta - self.path.delta) > 1e-15 * max(1.0, self.path.delta):
            raise ValueError("delta differs from the delta the path was built at")
        if not self.W.even:
            raise ValueError("averaging requires a reflection-even interaction")

    # the closed-form branch reduction is exact only for the kinked path
    @property
    def has_closed_form(self) -> bool:
        return self.path.source == "saw-tooth" and self.path.delta == 0.0

    def _guard(self, arr):
        a = np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(a)) or np.max(np.abs(a)) > self.policy.blowup:
            raise CollisionError("averaged integrand exceeds the blow-up bound")

    @staticmethod
    def _fold(vartheta: float):
        """Reduce to [0, pi] using periodicity and evenness.

        Returns (folded angle, reflection sign); odd-order derivatives pick
        up the sign.
        """
        t = math.fmod(float(vartheta), TWO_PI)
        if t < 0.0:
            t += TWO_PI
        if t > np.pi:
            return TWO_PI - t, -1.0
        return t, 1.0

    # -- closed forms ------------------------------------------------------

    def _closed_value(self, vartheta: float, zeta: float) -> float:
        te, _ = self._fold(vartheta)
        lam = self.path.length / np.pi
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            w_end = float(self.W.profile_deriv(lam * te, zeta, 0))
            self._guard(w_end)
            if te > 0.0:
                x, w = _gl(64)
                s = 0.5 * te * (x + 1.0)
                vals = self.W.profile_deriv(lam * s, zeta, 0)
                self._guard(vals)
                integral = 0.5 * te * float(np.dot(w, vals))
            else:
                integral = 0.0
        return (1.0 - te / np.pi) * w_end + integral / np.pi

    def _closed_deriv(self, vartheta: float, zeta: float, order: int,
                      one_sided: int | None) -> float:
        t = math.fmod(float(vartheta), TWO_PI)
        if t < 0.0:
            t += TWO_PI
        tol = 1e-12
        near0 = t < tol or TWO_PI - t < tol
        nearpi = abs(t - np.pi) < tol
        lam = self.path.length / np.pi

        def interior(te: float) -> float:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                wk = float(self.W.profile_deriv(lam * te, zeta, order))
                wk1 = float(self.W.profile_deriv(lam * te, zeta, order - 1))
            self._guard([wk, wk1])
            return ((1.0 - te / np.pi) * lam**order * wk
                    - (order - 1) / np.pi * lam ** (order - 1) * wk1)

        if near0 or nearpi:
            if order >= 3 and one_sided is None:
                raise SmoothnessError(
                    "order >= 3 is one-sided at matching phases; pass one_sided=+1 or -1")
            m = 0.0 if near0 else np.pi
            val = interior(m)
            side = 1 if one_sided is None else int(one_sided)
            # approaching 0 from below or pi from above mirrors the branch
            if (near0 and side < 0) or (nearpi and side > 0):
                val *= (-1.0) ** order
            return val
        te, sgn = self._fold(t)
        return sgn**order * interior(te)

    # -- composite quadrature ----------------------------------------------

    def _breakpoints(self, vartheta: float) -> np.ndarray:
        pts = {0.0, TWO_PI}
        for m in self.path.impact_phases:
            pts.add(float(np.mod(m, TWO_PI)))
            pts.add(float(np.mod(m - vartheta, TWO_PI)))
        out = sorted(pts)
        keep = [out[0]]
        for x in out[1:]:
            if x - keep[-1] > 1e-12:
                keep.append(x)
        return np.asarray(keep)

    def _panels(self, vartheta: float):
        pol = self.policy
        grade = pol.grade
        if grade is None:
            grade = 0 if self.delta == 0.0 else 64
        lw = pol.grade_width
        if lw is None:
            if self.delta > 0.0 and self.path.alpha:
                lw = self.delta ** (1.0 / self.path.alpha)
            else:
                lw = 0.05
        x, w = _gl(pol.nodes)
        nodes, weights = [], []
        breaks = self._breakpoints(vartheta)
        for a, b in zip(breaks[:-1], breaks[1:]):
            width = b - a
            if grade > 0:
                offs = np.geomspace(min(lw, width / 4.0), width / 2.0, grade)
                cuts = np.concatenate(([a], a + offs, b - offs[::-1], [b]))
                cuts = np.unique(cuts)
            else:
                cuts = np.linspace(a, b, pol.subdiv + 1)
            for c, d in zip(cuts[:-1], cuts[1:]):
                if d - c <= 1e-14:
                    continue
                half = 0.5 * (d - c)
                nodes.append(0.5 * (c + d) + half * x)
                weights.append(half * w)
        return np.concatenate(nodes), np.concatenate(weights)

    def _quad_value(self, vartheta: float, zeta: float) -> float:
        th, wt = self._panels(vartheta)
        u = self.path.value(th + vartheta) - self.path.value(th)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            vals = self.W.profile_deriv(u, zeta, 0)
        self._guard(vals)
        return float(np.dot(wt, vals)) / TWO_PI

    def _quad_deriv(self, vartheta: float, zeta: float, order: int) -> float:
        th, wt = self._panels(vartheta)
        u = self.path.value(th + vartheta) - self.path.value(th)
        q1 = self.path.deriv(th + vartheta, 1)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            w1 = self.W.profile_deriv(u, zeta, 1)
            if order == 1:
                integrand = w1 * q1
            else:
                w2 = self.W.profile_deriv(u, zeta, 2)
                q2 = self.path.deriv(th + vartheta, 2)
                integrand = w2 * q1 * q1 + w1 * q2
        self._guard(integrand)
        return float(np.dot(wt, integrand)) / TWO_PI

    # -- public evaluation ---------------------------------------------------

    def value(self, vartheta: float, zeta: float = 0.0, method: str = "auto") -> float:
        if method not in ("auto", "closed-form", "quadrature"):
            raise ValueError(f"unknown method {method!r}")
        if method == "closed-form" or (method == "auto" and self.has_closed_form):
            if not self.has_closed_form:
                raise ValueError("closed form exists only for the kinked path")
            return self._closed_value(vartheta, zeta)
        return self._quad_value(vartheta, zeta)

    def deriv(self, vartheta: float, zeta: float = 0.0, order: int = 1,
              one_sided: int | None = None, method: str = "auto",
              fd_h: float = 0.05, fd_levels: int = 3) -> float:
        if order == 0:
            return self.value(vartheta, zeta, method)
        if not 1 <= order <= 5:
            raise ValueError("derivative order must be in 0..5")
        if self.has_closed_form:
            if method == "quadrature":
                raise ValueError(
                    "phase derivatives of a kinked path come from the closed form; "
                    "differentiating under the integral drops the moving kinks")
            return self._closed_deriv(vartheta, zeta, order, one_sided)
        if order <= 2:
            return self._quad_deriv(vartheta, zeta, order)
        return self._fd_deriv(vartheta, zeta, order, fd_h, fd_levels)

    def _fd_deriv(self, vartheta: float, zeta: float, order: int,
                  h0: float, levels: int) -> float:
        """Orders 3..5 via Richardson ladders over the order-2 quadrature.

        Direct high-order differencing of the delta-singular integrand is
        unstable; second derivatives under the integral are cheap and
        smooth, so the ladder acts on those.
        """
        cache: dict = {}

        def f2(v: float) -> float:
            key = round(v, 15)
            if key not in cache:
                cache[key] = self._quad_deriv(v, zeta, 2)
            return cache[key]

        vals = []
        for j in range(levels):
            h = h0 / 2.0**j
            if order == 3:
                d = (f2(vartheta + h) - f2(vartheta - h)) / (2.0 * h)
            elif order == 4:
                d = (f2(vartheta + h) - 2.0 * f2(vartheta) + f2(vartheta - h)) / h**2
            else:
                d = (f2(vartheta + 2 * h) - 2.0 * f2(vartheta + h)
                     + 2.0 * f2(vartheta - h) - f2(vartheta - 2 * h)) / (2.0 * h**3)
            vals.append(d)
        m = 1
        while len(vals) > 1:
            fac = 4.0**m
            vals = [(fac * vals[i + 1] - vals[i]) / (fac - 1.0)
                    for i in range(len(vals) - 1)]
            m += 1
        return vals[0]


def w_avg(vartheta: float, zeta: float, path: PeriodicPath, W: InteractionPotential,
          delta: float | None = None, policy: QuadraturePolicy | None = None,
          method: str = "auto") -> float:
    """Averaged pair interaction at phase offset vartheta, transverse gap zeta."""
    avg = AveragedPotential(path, W, policy or QuadraturePolicy(), delta)
    return avg.value(vartheta, zeta, method)


def w_avg_deriv(vartheta: float, zeta: float, order: int, path: PeriodicPath,
                W: InteractionPotential, delta: float | None = None,
                policy: QuadraturePolicy | None = None, one_sided: int | None = None,
                method: str = "auto", fd_h: float = 0.05, fd_levels: int = 3) -> float:
    """Phase derivative of w_avg, orders 0..5."""
    avg = AveragedPotential(path, W, policy or QuadraturePolicy(), delta)
    return avg.deriv(vartheta, zeta, order, one_sided, method, fd_h, fd_levels)


# -- averaged potential over all particles ---------------------------------


def averaged_U(theta, xi, path: PeriodicPath, spec,
               policy: QuadraturePolicy | None = None, method: str = "auto") -> float:
    """Total averaged potential: ordered pair sum plus transverse confinement.

    theta holds the N vertical phases; xi the N x (d-1) transverse
    positions on the axes the path does not occupy (None when d = 1).
    Translation invariant in theta by construction.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    N = spec.N
    if theta.shape != (N,):
        raise ValueError("theta must hold one phase per particle")
    if xi is None:
        xi = np.zeros((N, spec.d - 1))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape != (N, spec.d - 1):
        raise ValueError("xi must be N x (d-1)")
    conf = spec.confinement
    axes = [i for i in range(spec.d) if i != path.axis]
    total = 0.0
    for n in range(N):
        for j, ax in enumerate(axes):
            x = xi[n, j]
            if not 0.0 < x < conf.lengths[ax]:
                raise DomainViolation("transverse position outside the box")
            total += float(conf.axis_V(x, ax, 0))
    avg = AveragedPotential(path, spec.interaction, policy or QuadraturePolicy(), None)
    for n in range(N):
        for m in range(n + 1, N):
            zeta = float(np.linalg.norm(xi[n] - xi[m]))
            # the ordered double sum counts each unordered pair twice
            total += 2.0 * avg.value(theta[n] - theta[m], zeta, method)
    return total


# -- collision set ----------------------------------------------------------


@dataclass(frozen=True)
class CollisionResult:
    collides: bool
    time: float
    pair: tuple
    min_distance: float


def collision_test(theta, xi, path: PeriodicPath, rho: float,
                   n_grid: int = 4096) -> CollisionResult:
    """Scan one synchronous period for a pair approach within rho.

    Uses a fine phase grid with local refinement: sign changes of the
    vertical separation are driven to an exact crossing, other minima are
    polished by bounded scalar minimization.  Returns the closest approach
    and the time at which it happens.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    N = theta.shape[0]
    if xi is None:
        xi = np.zeros((N, 0))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    s = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    ds = TWO_PI / n_grid
    best = (math.inf, 0.0, (0, 1))
    for n in range(N):
        for m in range(n + 1, N):
            dxi = float(np.linalg.norm(xi[n] - xi[m]))

            def g(ss):
                return float(path.value(ss + theta[n]) - path.value(ss + theta[m]))

            f = path.value(s + theta[n]) - path.value(s + theta[m])
            zero = np.flatnonzero(f == 0.0)
            if zero.size:
                vmin, s_at = 0.0, float(s[zero[0]])
            else:
                cross = np.flatnonzero(f * np.roll(f, -1) < 0.0)
                if cross.size:
                    i = int(cross[0])
                    s_at = brentq(g, s[i], s[i] + ds, xtol=1e-14)
                    vmin = 0.0
                else:
                    i0 = int(np.argmin(np.abs(f)))
                    res = minimize_scalar(
                        lambda ss: abs(g(ss)), bounds=(s[i0] - ds, s[i0] + ds),
                        method="bounded", options={"xatol": 1e-12})
                    vmin = min(float(res.fun), float(abs(f[i0])))
                    s_at = float(res.x)
            d = math.hypot(vmin, dxi)
            if d < best[0]:
                best = (d, s_at / path.omega0, (n, m))
    return CollisionResult(best[0] <= rho, best[1], best[2], best[0])


# -- quadratic expansion coefficients ---------------------------------------


@dataclass(frozen=True)
class CoeffTable:
    """Pairwise quadratic/quartic coefficients at synchronous phases."""

    gamma: np.ndarray
    beta: np.ndarray
    theta_rel: np.ndarray


def gamma_beta(W: InteractionPotential, xi, theta, tol: float = 1e-9) -> CoeffTable:
    """Curvature coefficients for pairs locked in or out of phase.

    Every pairwise phase difference must be 0 or pi (mod 2pi).  In phase,
    gamma is the bare curvature of W in the vertical separation; out of
    phase the average flattens it to -(1/pi) dW at separation pi.
    """
    if not W.even:
        raise ValueError("coefficients defined for reflection-even interactions")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    N = theta.shape[0]
    if xi is None:
        xi = np.zeros((N, 1))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    gamma = np.zeros((N, N))
    beta = np.zeros((N, N))
    trel = np.zeros((N, N))
    for n in range(N):
        for m in range(n + 1, N):
            dt = float(np.mod(theta[n] - theta[m], TWO_PI))
            zeta = float(np.linalg.norm(xi[n] - xi[m]))
            if min(dt, TWO_PI - dt) < tol:
                g = float(W.profile_deriv(0.0, zeta, 2))
                b = -g
                rel = 0.0
            elif abs(dt - np.pi) < tol:
                g = -float(W.profile_deriv(np.pi, zeta, 1)) / np.pi
                b = float(W.profile_deriv(np.pi, zeta, 2))
                rel = np.pi
            else:
                raise ValueError("pairwise phase differences must be 0 or pi")
            gamma[n, m] = gamma[m, n] = g
            beta[n, m] = beta[m, n] = b
            trel[n, m] = trel[m, n] = rel
    return CoeffTable(gamma, beta, trel)


# -- wall-layer constant -----------------------------------------------------


def k_alpha(alpha: float, tail_tol: float = 1e-10) -> float:
    """Positive constant governing the delta^(-1/alpha) derivative blow-up.

    Defined by int_{2^(1/a)}^inf 4 a^2 / (q^(2a+2) sqrt(1 - 2 q^-a)) dq.
    The substitution u^2 = 1 - 2 q^-a removes the endpoint singularity and
    maps the infinite tail to u -> 1; the tail is truncated where its
    analytic bound drops below a quarter of tail_tol.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    a = float(alpha)
    Q = 2.0 * 2.0 ** (1.0 / a)

    def tail_bound(qq: float) -> float:
        return (4.0 * a * a * qq ** (-2.0 * a - 1.0)
                / ((2.0 * a + 1.0) * math.sqrt(1.0 - 2.0 * qq**-a)))

    while tail_bound(Q) > 0.25 * tail_tol:
        Q *= 1.25
    umax = math.sqrt(1.0 - 2.0 * Q**-a)
    c = 1.0 + 1.0 / a
    val, _ = quad(lambda u: (1.0 - u * u) ** c, 0.0, umax,
                  epsabs=1e-13, epsrel=1e-13, limit=200)
    return a * 2.0 ** (1.0 - 1.0 / a) * val


# -- fourth-derivative scaling probe ----------------------------------------


@dataclass(frozen=True)
class ScalingProbe:
    """Measured fourth-derivative blow-up against its wall-layer prediction.

    ratio compares the frequency-rescaled measurement d4 / omega0^3 with
    the small-delta prediction (the rescaling strips the leading
    finite-delta frequency shift; both definitions agree in the limit,
    but the rescaled one converges a decade earlier).  ratio_uncorrected
    leaves the finite-delta frequency in.  Slopes are log-log fits.
    """

    alpha: float
    vartheta: float
    zeta: float
    deltas: np.ndarray
    d4: np.ndarray
    omega0: np.ndarray
    predicted: np.ndarray
    slope: float
    slope_corrected: float
    r_squared: float
    r_squared_corrected: float
    ratio: np.ndarray
    ratio_uncorrected: np.ndarray


def _loglog_fit(x, y):
    lx, ly = np.log10(x), np.log10(np.abs(y))
    slope, intercept = np.polyfit(lx, ly, 1)
    fit = slope * lx + intercept
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def scaling_probe(alpha: float, deltas, vartheta: float, W: InteractionPotential,
                  zeta: float = 0.0, conf: ConfinementPotential | None = None,
                  axis: int = 0, grid_size: int = 20000, n_tab: int = 20000,
                  fd_h: float = 0.05, fd_levels: int = 3,
                  policy: QuadraturePolicy | None = None) -> ScalingProbe:
    """Fit the growth of the fourth phase derivative as delta shrinks.

    vartheta must be a matching phase (0 or pi mod 2pi); the prediction is
    sign(vartheta) * delta^(-1/alpha) K(alpha) Q'(0) d2W(vartheta, zeta) / 2pi
    with a minus sign in phase and a plus sign in anti-phase.
    """
    if alpha <= 2.0:
        raise ValueError("the scaling regime needs alpha > 2")
    deltas = np.sort(np.asarray(deltas, dtype=float))[::-1]
    if np.log10(deltas[0] / deltas[-1]) < 3.0 - 1e-9:
        raise ValueError("delta grid must span at least 3 decades")
    t = float(np.mod(vartheta, TWO_PI))
    if min(t, TWO_PI - t) < 1e-9:
        sign = -1.0
    elif abs(t - np.pi) < 1e-9:
        sign = 1.0
    else:
        raise ValueError("vartheta must be 0 or pi (mod 2pi)")
    if conf is None:
        conf = ConfinementPotential(alpha, (np.pi,))
    d4 = np.empty_like(deltas)
    om = np.empty_like(deltas)
    for i, delta in enumerate(deltas):
        path = vertical_path(delta, alpha, conf=conf, axis=axis,
                             grid_size=grid_size, n_tab=n_tab)
        avg = AveragedPotential(path, W, policy or QuadraturePolicy(), None)
        d4[i] = avg.deriv(vartheta, zeta, 4, fd_h=fd_h, fd_levels=fd_levels)
        om[i] = path.omega0
    qp0 = float(conf.axis_Q(0.0, axis, 1))
    w2 = float(W.profile_deriv(np.pi if sign > 0 else 0.0, zeta, 2))
    predicted = sign * deltas ** (-1.0 / alpha) * k_alpha(alpha) * qp0 * w2 / TWO_PI
    slope, r2 = _loglog_fit(deltas, d4)
    slope_c, r2_c = _loglog_fit(deltas, d4 / om**3)
    if min(r2, r2_c) < 0.99:
        warnings.warn(f"scaling fit quality low: R^2 = {min(r2, r2_c):.4f}",
                      stacklevel=2)
    return ScalingProbe(
        alpha=alpha, vartheta=vartheta, zeta=zeta, deltas=deltas, d4=d4,
        omega0=om, predicted=predicted, slope=slope, slope_corrected=slope_c,
        r_squared=r2, r_squared_corrected=r2_c, ratio=d4 / om**3 / predicted,
        ratio_uncorrected=d4 / predicted,
    )


# -- export ------------------------------------------------------------------


def export_w_avg_table(filename, path: PeriodicPath, W: InteractionPotential,
                       thetas, zeta: float = 0.0,
                       policy: QuadraturePolicy | None = None,
                       delta: float | None = None,
                       alpha: float | None = None) -> None:
    """Write (vartheta, value, d1..d4) rows; delta and alpha in a comment."""
    avg = AveragedPotential(path, W, policy or QuadraturePolicy(), delta)
    if alpha is None:
        alpha = path.alpha if path.alpha is not None else float("nan")
    with open(filename, "w") as fh:
        fh.write(f"# delta={avg.delta:.17g} alpha={alpha:.17g}\n")
        fh.write("vartheta,value,d1,d2,d3,d4\n")
        for v in np.atleast_1d(np.asarray(thetas, dtype=float)):
            cols = [avg.value(v, zeta)]
            for k in range(1, 5):
                cols.append(avg.deriv(v, zeta, k, one_sided=+1))
            fh.write(",".join("%.17g" % c for c in [v] + cols) + "\n")
