"""Potentials, system definitions, energies, and exact gradients.

The Hamiltonian is

    H = sum_n |p_n|^2 / 2 + delta * sum_n V(q_n) + delta * sum_{n != m} W(q_n - q_m)

with the interaction counted once per ordered pair (each unordered pair twice).
V confines every axis through a steep wall profile 1/Q_i(x)^alpha and W is a
radial pair potential, even under reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline


class DomainViolation(ValueError):
    """State outside the admissible domain (wall crossed or core reached)."""


INTERACTION_KINDS = (
    "inverse-power-with-core",
    "inverse-square-shifted",
    "cosine-test",
    "quartic-test",
    "user-tabulated",
)


def _rising(k: float, n: int) -> float:
    out = 1.0
    for j in range(n):
        out *= k + j
    return out


@dataclass(frozen=True)
class InteractionPotential:
    """Radial pair potential W(r) with optional hard core and cutoff.

    Parameters
    ----------
    kind : str
        One of ``inverse-power-with-core`` (strength/(r-rho)^power),
        ``inverse-square-shifted`` (strength/(shift + r^2)),
        ``cosine-test`` (strength*cos r), ``quartic-test`` (a4 r^4 + a2 r^2),
        ``user-tabulated`` (natural cubic spline through r_samples/w_samples).
    rho : float
        Core radius; repelling kinds diverge as r -> rho+.
    params : dict
        Kind-specific coefficients, see above.
    cutoff_level : float or None
        When set, values are blended to a constant cap above this level:
        identical to the base wherever the base is below ``cutoff_level + 1``,
        bounded by ``cutoff_level + 2`` everywhere.
    """

    kind: str
    rho: float = 0.0
    params: dict = field(default_factory=dict)
    cutoff_level: float | None = None

    def __post_init__(self):
        if self.kind not in INTERACTION_KINDS:
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        if self.rho < 0:
            raise ValueError("core radius must be >= 0")
        if self.kind == "user-tabulated":
            if "r_samples" not in self.params or "w_samples" not in self.params:
                raise ValueError("user-tabulated needs r_samples and w_samples")

    # -- base (un-cut) radial derivatives -------------------------------

    def _spline(self) -> CubicSpline:
        memo = self.__dict__.get("_spline_memo")
        if memo is None:
            memo = CubicSpline(np.asarray(self.params["r_samples"], dtype=float),
                               np.asarray(self.params["w_samples"], dtype=float),
                               bc_type="natural")
            object.__setattr__(self, "_spline_memo", memo)
        return memo

    def _base_deriv(self, r, order: int):
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.kind == "inverse-power-with-core":
            A = p.get("strength", 1.0)
            k = p.get("power", 2.0)
            s = r - self.rho
            return A * (-1.0) ** order * _rising(k, order) * s ** (-k - order)
        if self.kind == "inverse-square-shifted":
            A = p.get("strength", 1.0)
            c = p.get("shift", 0.1)
            if order == 0:
                return A / (c + r * r)
            a = math.sqrt(c)
            z = (r - 1j * a) ** (-(order + 1))
            return A * (-1.0) ** order * math.factorial(order) * z.imag / a
        if self.kind == "cosine-test":
            A = p.get("strength", 1.0)
            return A * np.cos(r + order * np.pi / 2)
        if self.kind == "quartic-test":
            a4 = p.get("a4", 1.0)
            a2 = p.get("a2", 0.0)
            if order == 0:
                return a4 * r ** 4 + a2 * r ** 2
            if order == 1:
                return 4 * a4 * r ** 3 + 2 * a2 * r
            if order == 2:
                return 12 * a4 * r ** 2 + 2 * a2 * np.ones_like(r)
            if order == 3:
                return 24 * a4 * r
            if order == 4:
                return np.full_like(r, 24 * a4)
            return np.zeros_like(r)
        # user-tabulated
        if order > 3:
            raise NotImplementedError("tabulated potentials expose derivatives up to 3")
        return self._spline()(r, nu=order)

    # -- cutoff blend ----------------------------------------------------

    @staticmethod
    def _blend(s):
        # C2 ramp: value s - s^3 + s^4/2 on [0,1], flat 1/2 beyond
        return s - s ** 3 + 0.5 * s ** 4

    @staticmethod
    def _blend_d1(s):
        return 1.0 - 3.0 * s ** 2 + 2.0 * s ** 3

    @staticmethod
    def _blend_d2(s):
        return -6.0 * s + 6.0 * s ** 2

    def _cap_chain(self, w):
        """Return (g(w), g'(w), g''(w)) for the cutoff map g."""
        K = self.cutoff_level
        w = np.asarray(w, dtype=float)
        s = np.clip(w - (K + 1.0), 0.0, 1.0)
        lo = w <= K + 1.0
        hi = w >= K + 2.0
        g = np.where(lo, w, K + 1.0 + self._blend(s))
        g = np.where(hi, K + 1.5, g)
        g1 = np.where(lo, 1.0, self._blend_d1(s))
        g1 = np.where(hi, 0.0, g1)
        g2 = np.where(lo | hi, 0.0, self._blend_d2(s))
        return g, g1, g2

    # -- public evaluation ------------------------------------------------

    def radial_deriv(self, r, order: int):
        """d^order W / dr^order, vectorized over r. Orders 0..5."""
        if order < 0 or order > 5:
            raise ValueError("order must be in 0..5")
        if self.cutoff_level is None:
            return self._base_deriv(r, order)
        if order > 2:
            raise NotImplementedError("cutoff potentials expose derivatives up to 2")
        w = self._base_deriv(r, 0)
        g, g1, g2 = self._cap_chain(w)
        if order == 0:
            return g
        w1 = self._base_deriv(r, 1)
        if order == 1:
            return g1 * w1
        w2 = self._base_deriv(r, 2)
        return g2 * w1 * w1 + g1 * w2

    def radial_value(self, r):
        return self.radial_deriv(r, 0)

    def pair_value(self, dq) -> float:
        return float(self.radial_value(np.linalg.norm(dq)))

    def force_factor(self, r):
        """W'(r)/r, finite at r=0 for the smooth even kinds."""
        r = np.asarray(r, dtype=float)
        tiny = r < 1e-12
        safe = np.where(tiny, 1.0, r)
        out = self.radial_deriv(safe, 1) / safe
        if np.any(tiny):
            lim = self.radial_deriv(np.asarray(1e-7), 2)  # W'(r)/r -> W''(0)
            out = np.where(tiny, lim, out)
        return out

    @property
    def even(self) -> bool:
        return True  # every kind is a function of |r|

    # -- effective vertical profile W_eff(u) = W(sqrt(u^2 + zeta^2)) -----

    def profile_deriv(self, u, zeta: float, order: int):
        """Derivatives in the vertical separation u at fixed transverse offset.

        zeta is the norm of the transverse offset.  Orders 0..5 via the chain
        rule through r(u) = sqrt(u^2 + zeta^2).
        """
        u = np.asarray(u, dtype=float)
        if zeta == 0.0:
            sign = np.where(u < 0, -1.0, 1.0)
            return sign ** order * self.radial_deriv(np.abs(u), order)
        r = np.hypot(u, zeta)
        f = [self.radial_deriv(r, j) for j in range(order + 1)]
        if order == 0:
            return f[0]
        z2 = zeta * zeta
        r1 = u / r
        if order == 1:
            return f[1] * r1
        r2 = z2 / r ** 3
        if order == 2:
            return f[2] * r1 ** 2 + f[1] * r2
        r3 = -3.0 * z2 * u / r ** 5
        if order == 3:
            return f[3] * r1 ** 3 + 3 * f[2] * r1 * r2 + f[1] * r3
        r4 = -3.0 * z2 * (r * r - 5 * u * u) / r ** 7
        if order == 4:
            return (f[4] * r1 ** 4 + 6 * f[3] * r1 ** 2 * r2
                    + f[2] * (3 * r2 ** 2 + 4 * r1 * r3) + f[1] * r4)
        r5 = 45.0 * z2 * u / r ** 7 - 105.0 * z2 * u ** 3 / r ** 9
        return (f[5] * r1 ** 5 + 10 * f[4] * r1 ** 3 * r2
                + f[3] * (15 * r1 * r2 ** 2 + 10 * r1 ** 2 * r3)
                + f[2] * (10 * r2 * r3 + 5 * r1 * r4) + f[1] * r5)

    def profile_value(self, u, zeta: float):
        return self.profile_deriv(u, zeta, 0)


def cutoff(W: InteractionPotential, K: float) -> InteractionPotential:
    """Bounded variant of W: identical wherever W < K+1, capped below K+2."""
    if not np.isfinite(K):
        raise ValueError("cutoff level must be finite")
    return replace(W, cutoff_level=float(K))


@dataclass(frozen=True)
class ConfinementPotential:
    """Per-axis steep wall potential V_i(x) = 1/Q_i(x)^alpha.

    The default distance profile is Q_i(x) = (l_i/pi) sin(pi x / l_i), which
    vanishes at both walls, has unit slope at x=0, and is symmetric about the
    axis midpoint.
    """

    alpha: float
    lengths: tuple
    vertical_symmetric: bool = True
    kind: str = "sine"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind != "sine":
            raise ValueError(f"unknown confinement kind {self.kind!r}")
        object.__setattr__(self, "lengths", tuple(float(l) for l in self.lengths))
        if any(l <= 0 for l in self.lengths):
            raise ValueError("box lengths must be positive")

    @property
    def d(self) -> int:
        return len(self.lengths)

    def axis_Q(self, x, axis: int, order: int = 0):
        l = self.lengths[axis]
        x = np.asarray(x, dtype=float)
        w = np.pi / l
        if order == 0:
            return np.sin(w * x) / w
        if order == 1:
            return np.cos(w * x)
        if order == 2:
            return -w * np.sin(w * x)
        if order == 3:
            return -w * w * np.cos(w * x)
        raise ValueError("Q derivatives available up to order 3")

    def axis_V(self, x, axis: int, order: int = 0):
        """1/Q^alpha on one axis and its first two derivatives."""
        a = self.alpha
        Q = self.axis_Q(x, axis, 0)
        if order == 0:
            return Q ** (-a)
        Q1 = self.axis_Q(x, axis, 1)
        if order == 1:
            return -a * Q ** (-a - 1) * Q1
        Q2 = self.axis_Q(x, axis, 2)
        if order == 2:
            return a * (a + 1) * Q ** (-a - 2) * Q1 ** 2 - a * Q ** (-a - 1) * Q2
        raise ValueError("V derivatives available up to order 2")

    def value(self, q):
        """Total confinement of one particle, q shape (d,) or (..., d)."""
        q = np.asarray(q, dtype=float)
        tot = 0.0
        for i in range(self.d):
            tot = tot + self.axis_V(q[..., i], i, 0)
        return tot

    def grad(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        for i in range(self.d):
            out[..., i] = self.axis_V(q[..., i], i, 1)
        return out

    def inside(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        for i in range(self.d):
            if np.any(q[..., i] <= 0.0) or np.any(q[..., i] >= self.lengths[i]):
                return False
        return True


@dataclass(frozen=True)
class SystemSpec:
    """Full problem definition for the N-particle system."""

    N: int
    d: int
    delta: float
    interaction: InteractionPotential
    confinement: ConfinementPotential
    h: float | None = None

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise ValueError("need N >= 1 and d >= 1")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.confinement.d != self.d:
            raise ValueError("confinement dimension does not match d")
        if self.h is not None and self.delta > 0:
            if abs(self.delta - 1.0 / (2.0 * self.h)) > 1e-12 * self.delta:
                raise ValueError("delta and h inconsistent: delta = 1/(2h)")
        if self.h is None and self.delta > 0:
            object.__setattr__(self, "h", 1.0 / (2.0 * self.delta))


@dataclass
class PhaseState:
    """Positions and momenta of all particles at one time instant."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p shapes differ")

    def copy(self) -> "PhaseState":
        return PhaseState(q=self.q.copy(), p=self.p.copy(), t=self.t)


def _pair_distances(q: np.ndarray):
    N = q.shape[0]
    iu = np.triu_indices(N, k=1)
    diff = q[iu[0]] - q[iu[1]]
    return np.linalg.norm(diff, axis=-1), diff, iu


def interaction_energy(W: InteractionPotential, q) -> float:
    """Ordered double pair sum: every unordered pair contributes twice."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[0] < 2:
        return 0.0
    r, _, _ = _pair_distances(q)
    return float(2.0 * np.sum(W.radial_value(r)))


def _check_domain(spec: SystemSpec, q: np.ndarray):
    if not spec.confinement.inside(q):
        raise DomainViolation("position outside the confinement domain")
    if spec.N > 1:
        r, _, _ = _pair_distances(q)
        if np.any(r <= spec.interaction.rho):
            raise DomainViolation("pair distance at or inside the core radius")


def eval_energy(spec: SystemSpec, state: PhaseState) -> float:
    """Total energy of a state; raises DomainViolation outside the domain."""
    kinetic = 0.5 * float(np.sum(state.p * state.p))
    if spec.delta == 0.0:
        return kinetic
    _check_domain(spec, state.q)
    conf = float(np.sum(spec.confinement.value(state.q)))
    inter = interaction_energy(spec.interaction, state.q)
    return kinetic + spec.delta * (conf + inter)


def eval_gradient(spec: SystemSpec, state: PhaseState):
    """(dH/dq, dH/dp), both shaped like q. Analytic in every potential kind."""
    gp = state.p.copy()
    gq = np.zeros_like(state.q)
    if spec.delta == 0.0:
        return gq, gp
    _check_domain(spec, state.q)
    gq += spec.confinement.grad(state.q)
    if spec.N > 1:
        r, diff, iu = _pair_distances(state.q)
        ff = spec.interaction.force_factor(r)  # W'(r)/r
        contrib = 2.0 * ff[:, None] * diff
        np.add.at(gq, iu[0], contrib)
        np.add.at(gq, iu[1], -contrib)
    return spec.delta * gq, gp
