"""Hard-wall billiard geometry and the soft-wall boundary layer.

Domains are given implicitly by Q(q) = 0 with Q > 0 inside, so the chord
to the next impact is a root of a scalar function along the ray and the
reflection is the usual Householder flip of the normal component.

Periodic orbits are found as critical points of the cyclic length
functional over boundary parameters.  Their linear stability is read off
the return map, differentiated by central differences with Richardson
refinement; the map is evaluated in extended precision there so that the
symplectic product of each multiplier pair survives to well below 1e-8.

The boundary layer solver integrates the rescaled wall dynamics

    dq/dt = p,    dp/dt = alpha * grad(Q) / Q**(alpha + 1)

inside the slab Q <= start height, recording the crossing of the layer
edge Q = K on approach, the turning point, and the exit state.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, root

from .reduce import ConvergenceError

TWO_PI = 2.0 * np.pi

__all__ = [
    "TangencyError",
    "EllipseDomain",
    "SuperellipseDomain",
    "BoxDomain",
    "MapStep",
    "billiard_map",
    "BilliardOrbit",
    "find_periodic",
    "write_orbits_ndjson",
    "Wall",
    "flat_wall",
    "corrugated_wall",
    "LayerRun",
    "boundary_layer_run",
]


class TangencyError(RuntimeError):
    """A ray grazed the boundary too shallowly to continue reliably."""


def _unit(v):
    return v / np.sqrt(v @ v)


class _ImplicitDomain:
    """Shared ray machinery for domains with a smooth implicit boundary."""

    def ray_exit(self, q, d):
        """Chord parameter of the far boundary crossing of q + t*d, t > 0.

        Safeguarded Newton: a sign-changing bracket is found by doubling
        the step, then Newton iterates are confined to the bracket and
        fall back to bisection whenever they leave it.
        """
        eps = np.finfo(q.dtype).eps
        diam = q.dtype.type(self.diameter)
        lo = q.dtype.type(1e-12) * diam
        if self.value(q + lo * d) <= 0:
            raise TangencyError("chord shorter than the geometric resolution")
        hi = lo
        for _ in range(200):
            hi = hi * 2
            if self.value(q + hi * d) < 0:
                break
            lo = hi
            if hi > 16 * diam:
                raise RuntimeError("ray does not leave the domain")
        x = 0.5 * (lo + hi)
        for _ in range(200):
            fx = self.value(q + x * d)
            if fx > 0:
                lo = x
            elif fx < 0:
                hi = x
            else:
                return x
            dfx = self.grad(q + x * d) @ d
            step_ok = dfx != 0
            if step_ok:
                xn = x - fx / dfx
                step_ok = lo < xn < hi
            x = xn if step_ok else 0.5 * (lo + hi)
            if hi - lo <= 256 * eps * (abs(x) + diam):
                break
        return x

    def normal(self, q):
        """Unit inward normal (Q grows toward the interior)."""
        return _unit(self.grad(q))


class EllipseDomain(_ImplicitDomain):
    """Axis-aligned ellipse, Q(q) = 1 - sum((q_i / a_i)^2)."""

    def __init__(self, semi_axes):
        ax = np.asarray(semi_axes, dtype=float)
        if ax.ndim != 1 or ax.size < 1 or np.any(ax <= 0):
            raise ValueError("semi_axes must be positive")
        self.semi_axes = ax
        self.diameter = 2.0 * float(ax.max())

    def value(self, q):
        u = q / self.semi_axes
        return 1 - u @ u

    def grad(self, q):
        return -2 * q / self.semi_axes**2

    def boundary_point(self, phi):
        c, s = np.cos(phi), np.sin(phi)
        return np.array([self.semi_axes[0] * c, self.semi_axes[1] * s])

    def boundary_tangent(self, phi):
        c, s = np.cos(phi), np.sin(phi)
        return np.array([-self.semi_axes[0] * s, self.semi_axes[1] * c])

    def boundary_param(self, q):
        return np.arctan2(q[1] / self.semi_axes[1], q[0] / self.semi_axes[0])


class SuperellipseDomain(_ImplicitDomain):
    """Q(q) = 1 - sum(|q_i / a_i|^p) for an even power p >= 2.

    The trigonometric chart is singular where a coordinate vanishes
    (curvature degenerates there for p > 2); orbit searches should seed
    away from the axes.
    """

    def __init__(self, semi_axes, power=4):
        ax = np.asarray(semi_axes, dtype=float)
        if ax.ndim != 1 or ax.size < 1 or np.any(ax <= 0):
            raise ValueError("semi_axes must be positive")
        if power < 2 or power % 2:
            raise ValueError("power must be an even integer >= 2")
        self.semi_axes = ax
        self.power = int(power)
        self.diameter = 2.0 * float(ax.max())

    def value(self, q):
        u = np.abs(q / self.semi_axes)
        return 1 - np.sum(u**self.power)

    def grad(self, q):
        p = self.power
        u = q / self.semi_axes
        return -p * np.sign(u) * np.abs(u) ** (p - 1) / self.semi_axes

    def boundary_point(self, phi):
        e = 2.0 / self.power
        c, s = np.cos(phi), np.sin(phi)
        x = self.semi_axes[0] * np.sign(c) * np.abs(c) ** e
        y = self.semi_axes[1] * np.sign(s) * np.abs(s) ** e
        return np.array([x, y])

    def boundary_tangent(self, phi):
        e = 2.0 / self.power
        c, s = np.cos(phi), np.sin(phi)
        dx = -self.semi_axes[0] * e * np.abs(c) ** (e - 1) * s
        dy = self.semi_axes[1] * e * np.abs(s) ** (e - 1) * c
        return np.array([dx, dy])

    def boundary_param(self, q):
        h = self.power / 2.0
        u = q / self.semi_axes
        return np.arctan2(np.sign(u[1]) * np.abs(u[1]) ** h,
                          np.sign(u[0]) * np.abs(u[0]) ** h)


class BoxDomain:
    """Rectangular box [0, l_1] x ... x [0, l_d] with exact wall arithmetic."""

    def __init__(self, lengths):
        ls = np.asarray(lengths, dtype=float)
        if ls.ndim != 1 or ls.size < 1 or np.any(ls <= 0):
            raise ValueError("lengths must be positive")
        self.lengths = ls
        self.diameter = float(np.linalg.norm(ls))

    def value(self, q):
        return float(np.minimum(q, self.lengths - q).min())

    def grad(self, q):
        lo = np.asarray(q, dtype=float)
        hi = self.lengths - lo
        g = np.zeros_like(lo)
        i_lo, i_hi = int(np.argmin(lo)), int(np.argmin(hi))
        if lo[i_lo] <= hi[i_hi]:
            g[i_lo] = 1.0
        else:
            g[i_hi] = -1.0
        return g

    def ray_exit(self, q, d):
        teps = 1e-12 * self.diameter
        best = np.inf
        for i in range(q.size):
            if d[i] > 0:
                t = (self.lengths[i] - q[i]) / d[i]
            elif d[i] < 0:
                t = -q[i] / d[i]
            else:
                continue
            if teps < t < best:
                best = t
        if not np.isfinite(best):
            raise RuntimeError("ray does not leave the box")
        return best


@dataclass(frozen=True)
class MapStep:
    """One bounce: next impact point, reflected momentum, chord data."""

    point: np.ndarray
    momentum: np.ndarray
    length: float
    incidence: float


def billiard_map(domain, point, momentum, boundary_tol=1e-9, tangency_tol=1e-8):
    """Advance one bounce from a boundary point with an inward momentum.

    Parameters
    ----------
    domain : domain object
        Provides ``value``, ``grad`` and ``ray_exit``.
    point : ndarray
        Current impact point, on the boundary to within `boundary_tol`.
    momentum : ndarray
        Incoming momentum; must point strictly into the domain.  Its
        magnitude is preserved exactly by the reflection.

    Returns
    -------
    MapStep
        Next impact point, reflected momentum, chord length, and the
        sine of the impact angle there.

    Raises
    ------
    ValueError
        Off-boundary start or non-inward momentum.
    TangencyError
        Exit angle below `tangency_tol`.
    """
    q = np.asarray(point, dtype=float)
    p = np.asarray(momentum, dtype=float)
    if abs(domain.value(q)) > boundary_tol:
        raise ValueError("start point is not on the boundary")
    speed = np.sqrt(p @ p)
    if speed == 0:
        raise ValueError("momentum must be nonzero")
    g = domain.grad(q)
    if g @ p <= 0:
        raise ValueError("momentum must point into the domain")
    d = p / speed
    t_star = domain.ray_exit(q, d)
    hit = q + t_star * d
    n = _unit(domain.grad(hit))
    incidence = abs(d @ n)
    if incidence < tangency_tol:
        raise TangencyError("exit angle below the tangency threshold")
    p_out = p - 2 * (p @ n) * n
    return MapStep(point=hit, momentum=p_out, length=float(t_star),
                   incidence=float(incidence))


@dataclass(frozen=True, eq=False)
class BilliardOrbit:
    """A periodic billiard orbit together with its linear stability."""

    points: np.ndarray
    params: np.ndarray
    times: np.ndarray
    length: float
    omega0: float
    jacobian: np.ndarray
    multipliers: tuple
    trace: float
    classification: str
    degenerate: bool
    reflection_residual: float
    min_incidence: float

    def to_record(self):
        return {
            "points": [[float(x) for x in row] for row in self.points],
            "params": [float(x) for x in self.params],
            "times": [float(t) for t in self.times],
            "length": float(self.length),
            "omega0": float(self.omega0),
            "multipliers": [[float(lam.real), float(lam.imag)]
                            for lam in self.multipliers],
            "trace": float(self.trace),
            "classification": self.classification,
            "degenerate": bool(self.degenerate),
            "reflection_residual": float(self.reflection_residual),
            "min_incidence": float(self.min_incidence),
        }


def write_orbits_ndjson(orbits, out):
    """Write one JSON record per orbit, newline delimited."""
    if hasattr(out, "write"):
        for orbit in orbits:
            out.write(json.dumps(orbit.to_record()) + "\n")
    else:
        with open(out, "w", encoding="utf-8") as fh:
            for orbit in orbits:
                fh.write(json.dumps(orbit.to_record()) + "\n")


def _chart_step(domain, x):
    """One bounce in boundary coordinates (parameter, outgoing tangential).

    Works in whatever float dtype `x` carries; the stability Jacobian
    calls this with extended precision to keep difference noise small.
    """
    phi, beta = x[0], x[1]
    q = domain.boundary_point(phi)
    t_hat = _unit(domain.boundary_tangent(phi))
    n_hat = _unit(domain.grad(q))
    d = beta * t_hat + np.sqrt(1 - beta * beta) * n_hat
    t_star = domain.ray_exit(q, d)
    hit = q + t_star * d
    phi2 = domain.boundary_param(hit)
    beta2 = d @ _unit(domain.boundary_tangent(phi2))
    return np.array([phi2, beta2], dtype=x.dtype)


def _chart_jacobian(domain, x, h_rel):
    """Per-bounce Jacobian: central differences plus Richardson in h, h/2."""
    ld = np.longdouble
    x = np.asarray(x, dtype=ld)
    ref = _chart_step(domain, x)

    def probe(y):
        out = _chart_step(domain, y)
        # keep the angle on the branch nearest the unperturbed image
        out[0] -= ld(TWO_PI) * np.rint((out[0] - ref[0]) / ld(TWO_PI))
        return out

    J = np.empty((2, 2), dtype=ld)
    for j in range(2):
        h = ld(h_rel) * max(ld(1), abs(x[j]))
        cols = []
        for hh in (h, h / 2):
            e = np.zeros(2, dtype=ld)
            e[j] = hh
            cols.append((probe(x + e) - probe(x - e)) / (2 * hh))
        J[:, j] = (4 * cols[1] - cols[0]) / 3
    return J


def _length_gradient(domain, k):
    def fun(phis):
        pts = np.array([domain.boundary_point(p) for p in phis])
        grads = np.empty(k)
        for i in range(k):
            u_in = _unit(pts[i] - pts[i - 1])
            u_out = _unit(pts[(i + 1) % k] - pts[i])
            grads[i] = (u_in - u_out) @ domain.boundary_tangent(phis[i])
        return grads

    return fun


def find_periodic(domain, k, hint=None, seeds=6, seed=0, h_rel=1e-6,
                  class_tol=1e-6, min_angle_deg=5.0, workers=None):
    """Locate a k-bounce periodic orbit and classify its stability.

    The orbit is a critical point of the cyclic length functional over
    boundary parameters, found by a quasi-Newton root solve of its
    gradient.  Multipliers come from the chained per-bounce Jacobians of
    the boundary return map; their trace against 2 decides elliptic,
    hyperbolic, or parabolic (the last flagged degenerate).

    Parameters
    ----------
    domain : smooth 2D domain
        Must expose ``boundary_point``, ``boundary_tangent``,
        ``boundary_param``.
    k : int
        Number of bounces, at least 2.
    hint : sequence of k floats, optional
        Starting boundary parameters.  Without it, rotated rings with a
        deterministic jitter are tried (`seeds` of them, optionally in
        parallel with `workers` threads).
    min_angle_deg : float
        Impacts closer to tangency than this are rejected as non-regular.

    Raises
    ------
    ConvergenceError
        No regular critical configuration was found.
    """
    if int(k) != k or k < 2:
        raise ValueError("need at least two bounces")
    k = int(k)
    for attr in ("boundary_point", "boundary_tangent", "boundary_param"):
        if not hasattr(domain, attr):
            raise TypeError("domain does not expose a smooth boundary chart")
    grad_fun = _length_gradient(domain, k)
    sin_min = math.sin(math.radians(min_angle_deg))

    def attempt(x0):
        sol = root(grad_fun, x0, method="hybr", tol=1e-13)
        phis = sol.x
        if np.max(np.abs(grad_fun(phis))) > 1e-10:
            return None
        pts = np.array([domain.boundary_point(p) for p in phis])
        chords = np.array([np.linalg.norm(pts[(i + 1) % k] - pts[i])
                           for i in range(k)])
        if chords.min() < 1e-6 * domain.diameter:
            return None
        incid = []
        for i in range(k):
            u_out = _unit(pts[(i + 1) % k] - pts[i])
            incid.append(abs(u_out @ domain.normal(pts[i])))
        if min(incid) < sin_min:
            return None
        return phis

    if hint is not None:
        phis = attempt(np.asarray(hint, dtype=float))
        if phis is None:
            raise ConvergenceError("no regular periodic orbit near the hint")
    else:
        rng = np.random.default_rng(seed)
        starts = []
        for s in range(seeds):
            base = TWO_PI * (np.arange(k) + s / seeds) / k
            starts.append(base + 0.05 * rng.standard_normal(k))
        if workers is not None and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(attempt, starts))
        else:
            results = [attempt(x0) for x0 in starts]
        phis = next((r for r in results if r is not None), None)
        if phis is None:
            raise ConvergenceError("no regular periodic orbit found from "
                                   f"{seeds} seeds")

    pts = np.array([domain.boundary_point(p) for p in phis])
    chords = np.array([np.linalg.norm(pts[(i + 1) % k] - pts[i])
                       for i in range(k)])
    length = float(chords.sum())
    times = np.concatenate([[0.0], np.cumsum(chords[:-1])])

    refl = 0.0
    incidences = []
    betas = np.empty(k)
    for i in range(k):
        n_hat = domain.normal(pts[i])
        u_in = _unit(pts[i] - pts[i - 1])
        u_out = _unit(pts[(i + 1) % k] - pts[i])
        refl = max(refl, float(np.linalg.norm(
            u_out - (u_in - 2 * (u_in @ n_hat) * n_hat))))
        incidences.append(abs(float(u_out @ n_hat)))
        betas[i] = u_out @ _unit(domain.boundary_tangent(phis[i]))

    jac = np.eye(2, dtype=np.longdouble)
    for i in range(k):
        jac = _chart_jacobian(domain, [phis[i], betas[i]], h_rel) @ jac
    jac64 = np.asarray(jac, dtype=float)
    multipliers = tuple(np.linalg.eigvals(jac64))
    trace = float(np.trace(jac64))

    if abs(trace) < 2.0 - class_tol:
        classification = "elliptic"
    elif abs(trace) > 2.0 + class_tol:
        classification = "hyperbolic"
    else:
        classification = "parabolic"

    return BilliardOrbit(
        points=pts,
        params=np.mod(np.asarray(phis, dtype=float), TWO_PI),
        times=times,
        length=length,
        omega0=TWO_PI / length,
        jacobian=jac64,
        multipliers=multipliers,
        trace=trace,
        classification=classification,
        degenerate=classification == "parabolic",
        reflection_residual=refl,
        min_incidence=float(min(incidences)),
    )


@dataclass(frozen=True)
class Wall:
    """Wall profile for the rescaled layer, Q(q) = q_perp + corrugation.

    The last coordinate is the distance-like direction.  A macroscopic
    corrugation lives at the unscaled length scale and flattens as the
    softness parameter goes to zero; otherwise the profile is taken
    directly in layer units and is independent of it.
    """

    kind: str
    eps: float = 0.0
    wavenumber: float = 1.0
    macroscopic: bool = False

    def rescaled(self, delta, alpha):
        """Return (value, grad) callables in layer units."""
        if self.kind == "flat":
            amp, wn = 0.0, 1.0
        elif self.macroscopic:
            h = delta ** (1.0 / alpha) if delta > 0 else 0.0
            amp, wn = (self.eps / h, self.wavenumber * h) if h > 0 else (0.0, 1.0)
        else:
            amp, wn = self.eps, self.wavenumber

        def value(q):
            if amp == 0.0 or q.size == 1:
                return q[-1]
            return q[-1] + amp * np.sum(1 - np.cos(wn * q[:-1]))

        def grad(q):
            g = np.zeros_like(q)
            g[-1] = 1.0
            if amp != 0.0 and q.size > 1:
                g[:-1] = amp * wn * np.sin(wn * q[:-1])
            return g

        return value, grad


def flat_wall(dim=None):
    """A perfectly flat wall; `dim` is accepted for symmetry and ignored."""
    return Wall(kind="flat")


def corrugated_wall(eps, wavenumber=1.0, macroscopic=False):
    """Sinusoidally corrugated wall of amplitude `eps` in layer units."""
    return Wall(kind="corrugated", eps=float(eps), wavenumber=float(wavenumber),
                macroscopic=macroscopic)


@dataclass(frozen=True, eq=False)
class LayerRun:
    """One passage through the wall layer in rescaled coordinates."""

    alpha: float
    K_layer: float
    start_height: float
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    t_exit: float
    q_exit: np.ndarray
    p_exit: np.ndarray
    q_entry: np.ndarray
    p_entry: np.ndarray
    p_ideal: np.ndarray
    deviation: float
    entry_deviation: float
    min_Q: float
    energy_drift: float


def boundary_layer_run(alpha, p0, wall=None, delta=0.0, K_layer=32.0,
                       start_height=None, anchor=None, guard=1e-3,
                       rtol=1e-11, atol=1e-13, max_time=None):
    """Integrate one reflection through the rescaled wall layer.

    The incoming ray {anchor + t*p0} is launched where it crosses the
    height Q = start_height (default: the layer edge K_layer) and the
    system dq/dt = p, dp/dt = alpha*grad(Q)/Q^(alpha+1) is integrated
    until the trajectory climbs back out through the start height.

    Returns
    -------
    LayerRun
        Exit state, momentum at the first downward crossing of the layer
        edge, deviation of the exit momentum from the ideal reflection
        about the wall normal at the turning point, the deviation of the
        layer-edge momentum from the free incoming one, the turning
        height, and the relative energy drift.

    Raises
    ------
    ValueError
        Entry direction nearly tangential (normal component of p0 below
        `guard` in angle) or inconsistent heights.
    TangencyError
        No exit before `max_time`.
    """
    p0 = np.asarray(p0, dtype=float)
    if p0.ndim != 1 or p0.size < 1:
        raise ValueError("p0 must be a nonempty vector")
    if alpha <= 0 or K_layer <= 0 or delta < 0:
        raise ValueError("alpha and K_layer must be positive, delta >= 0")
    d = p0.size
    start_h = float(K_layer if start_height is None else start_height)
    if start_h < K_layer:
        raise ValueError("start_height must not be below K_layer")
    if wall is None:
        wall = flat_wall(d)
    value, gradf = wall.rescaled(delta, alpha)
    anchor = np.zeros(d) if anchor is None else np.asarray(anchor, dtype=float)
    if value(anchor) >= start_h:
        raise ValueError("anchor must sit below the start height")

    def height(t):
        return value(anchor + t * p0) - start_h

    t_far = -1.0
    for _ in range(200):
        if height(t_far) > 0:
            break
        t_far *= 2
    else:
        raise ValueError("incoming ray never reaches the start height")
    t0 = brentq(height, t_far, 0.0, xtol=1e-13)
    q_start = anchor + t0 * p0

    g = gradf(q_start)
    cosv = (g @ p0) / (np.linalg.norm(g) * np.linalg.norm(p0))
    if cosv >= 0:
        raise ValueError("p0 must move toward the wall at the start point")
    if abs(cosv) < guard:
        raise ValueError("entry direction is nearly tangential to the layer")

    def rhs(t, y):
        q, p = y[:d], y[d:]
        v = value(q)
        return np.concatenate([p, alpha * gradf(q) / v ** (alpha + 1)])

    def exit_ev(t, y):
        return value(y[:d]) - start_h

    exit_ev.terminal = True
    exit_ev.direction = 1.0

    def edge_ev(t, y):
        return value(y[:d]) - K_layer

    edge_ev.terminal = False
    edge_ev.direction = -1.0

    def turn_ev(t, y):
        return gradf(y[:d]) @ y[d:]

    turn_ev.terminal = False
    turn_ev.direction = 1.0

    y0 = np.concatenate([q_start, p0])
    h0 = 0.5 * (p0 @ p0) + value(q_start) ** (-alpha)
    if max_time is None:
        fall = start_h / (np.linalg.norm(p0) * abs(cosv))
        max_time = 50.0 * fall + 100.0
    sol = solve_ivp(rhs, (0.0, float(max_time)), y0, method="DOP853",
                    events=[exit_ev, edge_ev, turn_ev], rtol=rtol, atol=atol)
    if sol.t_events[0].size == 0:
        raise TangencyError("no exit from the layer before max_time")

    y_exit = sol.y_events[0][0]
    q_exit, p_exit = y_exit[:d], y_exit[d:]
    if sol.t_events[1].size:
        y_edge = sol.y_events[1][0]
        q_entry, p_entry = y_edge[:d], y_edge[d:]
    else:
        q_entry, p_entry = q_start.copy(), p0.copy()

    if sol.t_events[2].size:
        turns = sol.y_events[2]
        heights = np.array([value(y[:d]) for y in turns])
        i_min = int(np.argmin(heights))
        min_q = float(heights[i_min])
        q_turn = turns[i_min][:d]
    else:
        heights = np.array([value(c) for c in sol.y[:d].T])
        i_min = int(np.argmin(heights))
        min_q = float(heights[i_min])
        q_turn = sol.y[:d, i_min]

    n_hat = _unit(gradf(q_turn))
    p_ideal = p0 - 2 * (p0 @ n_hat) * n_hat
    h_exit = 0.5 * (p_exit @ p_exit) + value(q_exit) ** (-alpha)

    return LayerRun(
        alpha=float(alpha),
        K_layer=float(K_layer),
        start_height=start_h,
        t=sol.t,
        q=sol.y[:d].T,
        p=sol.y[d:].T,
        t_exit=float(sol.t_events[0][0]),
        q_exit=q_exit,
        p_exit=p_exit,
        q_entry=q_entry,
        p_entry=p_entry,
        p_ideal=p_ideal,
        deviation=float(np.linalg.norm(p_exit - p_ideal)),
        entry_deviation=float(np.linalg.norm(p_entry - p0)),
        min_Q=min_q,
        energy_drift=float(abs(h_exit - h0) / max(1.0, abs(h0))),
    )
