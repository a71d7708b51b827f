"""Translation-symmetry reduction of the phase torus.

A fixed orthogonal frame with uniform first row splits the N phases into a
collective angle and N-1 deviation coordinates (and the momenta into the
total action plus its complement).  On top of the frame sit a multi-start
torus minimizer for the averaged potential, dense and circulant Hessian
spectra at its critical points, and an exhaustive low-order resonance scan.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .average import (
    AveragedPotential,
    CollisionError,
    QuadraturePolicy,
    averaged_U,
    collision_test,
)
from .model import DomainViolation, InteractionPotential

TWO_PI = 2.0 * math.pi

_PENALTY = 1e14


class ConvergenceError(RuntimeError):
    """Raised when no descent start reaches the requested gradient norm."""


# -- collective frame ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReductionFrame:
    """Orthogonal change of variables isolating the uniform phase shift.

    The deviation part of a configuration is measured from theta_min, which
    is kept on the zero-mean gauge so the collective angle carries the whole
    translation degree of freedom.
    """

    N: int
    R: np.ndarray
    theta_min: np.ndarray

    def to_reduced(self, theta):
        theta = np.asarray(theta, dtype=float)
        v = self.R @ (theta - self.theta_min) / math.sqrt(self.N)
        return float(v[0]), v[1:]

    def from_reduced(self, phi, psi):
        v = np.concatenate(([phi], np.asarray(psi, dtype=float)))
        return self.theta_min + math.sqrt(self.N) * (self.R.T @ v)

    def to_reduced_momenta(self, I0):
        w = math.sqrt(self.N) * (self.R @ np.asarray(I0, dtype=float))
        return float(w[0]), w[1:]

    def from_reduced_momenta(self, P, J):
        w = np.concatenate(([P], np.asarray(J, dtype=float)))
        return (self.R.T @ w) / math.sqrt(self.N)


def build_frame(N: int, theta_min=None) -> ReductionFrame:
    """Helmert-type frame: row 0 uniform, row k supported on the first k+1 slots."""
    if N < 2:
        raise ValueError("the reduction needs at least two particles")
    R = np.zeros((N, N))
    R[0] = 1.0 / math.sqrt(N)
    for k in range(1, N):
        a = 1.0 / math.sqrt(k * (k + 1))
        R[k, :k] = a
        R[k, k] = -k * a
    if theta_min is None:
        theta_min = np.zeros(N)
    theta_min = np.asarray(theta_min, dtype=float)
    if theta_min.shape != (N,):
        raise ValueError("theta_min must hold one phase per particle")
    if abs(theta_min.sum()) > 1e-10 * max(1.0, np.max(np.abs(theta_min))):
        raise ValueError("theta_min must sit on the zero-mean gauge")
    return ReductionFrame(N=N, R=R, theta_min=theta_min)


# -- derivatives of the averaged potential in the phases ----------------------


def _pair_kernel(path, W, policy, method):
    return AveragedPotential(path, W, policy or QuadraturePolicy(), None), method


def _as_xi(theta, xi):
    N = theta.shape[0]
    if xi is None:
        return np.zeros((N, 0))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[0] != N:
        raise ValueError("xi must hold one row per particle")
    return xi


def averaged_gradient(theta, xi, path, W: InteractionPotential,
                      policy: QuadraturePolicy | None = None,
                      method: str = "auto") -> np.ndarray:
    """Phase gradient of the ordered-pair-sum averaged potential."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    xi = _as_xi(theta, xi)
    avg, method = _pair_kernel(path, W, policy, method)
    N = theta.shape[0]
    g = np.zeros(N)
    for n in range(N):
        for m in range(n + 1, N):
            zeta = float(np.linalg.norm(xi[n] - xi[m]))
            d1 = avg.deriv(theta[n] - theta[m], zeta, 1, method=method)
            g[n] += 2.0 * d1
            g[m] -= 2.0 * d1
    return g


def averaged_hessian(theta, xi, path, W: InteractionPotential,
                     policy: QuadraturePolicy | None = None,
                     method: str = "auto", ordered: bool = True) -> np.ndarray:
    """Phase Hessian of the averaged pair sum.

    ordered=True differentiates the physical ordered double sum; ordered=False
    keeps the half (unordered) normalization under which the equidistant
    Hessian is the circulant matrix with entries -w_avg''(2 pi k / N).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    xi = _as_xi(theta, xi)
    avg, method = _pair_kernel(path, W, policy, method)
    N = theta.shape[0]
    fac = 2.0 if ordered else 1.0
    H = np.zeros((N, N))
    for n in range(N):
        for m in range(n + 1, N):
            zeta = float(np.linalg.norm(xi[n] - xi[m]))
            d2 = fac * avg.deriv(theta[n] - theta[m], zeta, 2, method=method)
            H[n, m] -= d2
            H[m, n] -= d2
            H[n, n] += d2
            H[m, m] += d2
    return H


def reduced_potential(psi, frame: ReductionFrame, path, spec, xi=None,
                      phi: float = 0.0, policy: QuadraturePolicy | None = None,
                      method: str = "auto") -> float:
    """Averaged potential expressed in the deviation coordinates."""
    theta = frame.from_reduced(phi, psi)
    return averaged_U(theta, xi, path, spec, policy=policy, method=method)


# -- Hessian spectra ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mode: str


def circulant_eigenvalues(u) -> np.ndarray:
    """Eigenvalues of the circulant phase Hessian from its off-diagonal row.

    u[k] (k = 1..N-1) are the off-diagonal entries; u[0] is ignored because
    the diagonal is fixed by the zero row sum.  Index j of the result matches
    the Fourier mode exp(2 pi i j n / N).  Values are computed for j <= N/2
    and mirrored, so the pairing lambda_j = lambda_{N-j} is bit-exact.
    """
    u = np.asarray(u, dtype=float)
    N = u.shape[0]
    if N < 2:
        raise ValueError("need at least two particles")
    scale = max(1.0, float(np.max(np.abs(u))))
    for k in range(1, N):
        if abs(u[k] - u[N - k]) > 1e-9 * scale:
            raise ValueError("off-diagonal entries must satisfy u[k] = u[N-k]")
    lam = np.zeros(N)
    for j in range(1, N // 2 + 1):
        s = 0.0
        for k in range(1, (N + 1) // 2):
            s += 2.0 * u[k] * (math.cos(TWO_PI * j * k / N) - 1.0)
        if N % 2 == 0:
            s += ((-1) ** j - 1) * u[N // 2]
        lam[j] = s
        lam[N - j] = s
    return lam


def hessian_spectrum(theta, path, W: InteractionPotential, mode: str = "dense",
                     xi=None, policy: QuadraturePolicy | None = None,
                     method: str = "auto", spacing_tol: float = 1e-9) -> SpectrumResult:
    """Spectrum of the half-pair-sum phase Hessian.

    dense: symmetric eigensolve at any configuration, eigenvalues ascending.
    circulant: closed form at equidistant phases (uniform transverse offsets),
    eigenvalues indexed by Fourier mode.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    N = theta.shape[0]
    if mode == "dense":
        H = averaged_hessian(theta, xi, path, W, policy=policy, method=method,
                             ordered=False)
        w, V = np.linalg.eigh(H)
        return SpectrumResult(eigenvalues=w, eigenvectors=V, mode="dense")
    if mode != "circulant":
        raise ValueError(f"unknown mode {mode!r}")
    if xi is not None:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if np.max(np.abs(xi - xi[0])) > 0.0:
            raise ValueError("circulant mode needs identical transverse offsets")
    phases = np.sort(np.mod(theta, TWO_PI))
    gaps = np.diff(np.concatenate([phases, [phases[0] + TWO_PI]]))
    if np.max(np.abs(gaps - TWO_PI / N)) > spacing_tol:
        raise ValueError("circulant mode needs equidistant phases")
    avg = AveragedPotential(path, W, policy or QuadraturePolicy(), None)
    u = np.zeros(N)
    for k in range(1, N // 2 + 1):
        u[k] = -avg.deriv(TWO_PI * k / N, 0.0, 2, method=method)
        u[N - k] = u[k]
    lam = circulant_eigenvalues(u)
    n = np.arange(N)
    vec = np.exp(2j * np.pi * np.outer(n, n) / N) / math.sqrt(N)
    return SpectrumResult(eigenvalues=lam, eigenvectors=vec, mode="circulant")


def group_degenerate(eigenvalues, rtol: float = 1e-8):
    """Cluster sorted eigenvalues into near-equal groups (indices, ascending)."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    if lam.size == 0:
        return []
    tol = rtol * max(1.0, float(np.max(np.abs(lam))))
    groups, current = [], [0]
    for i in range(1, lam.size):
        if lam[i] - lam[i - 1] <= tol:
            current.append(i)
        else:
            groups.append(tuple(current))
            current = [i]
    groups.append(tuple(current))
    return groups


# -- torus minimization -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MinimumReport:
    """Converged critical point of the averaged potential, zero-mean gauge."""

    theta_min: np.ndarray
    xi_min: np.ndarray
    value: float
    grad_norm: float
    hessian_reduced: np.ndarray
    eigenvalues: np.ndarray
    theta_eigenvalues: np.ndarray
    classification: str
    simultaneous_impacts: bool
    degenerate_groups: tuple
    all_simple: bool
    n_starts: int
    provenance: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "theta_min": [float(x) for x in self.theta_min],
            "xi_min": [[float(x) for x in row] for row in self.xi_min],
            "value": float(self.value),
            "grad_norm": float(self.grad_norm),
            "hessian_reduced": [[float(x) for x in row] for row in self.hessian_reduced],
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "theta_eigenvalues": [float(x) for x in self.theta_eigenvalues],
            "classification": self.classification,
            "simultaneous_impacts": bool(self.simultaneous_impacts),
            "degenerate_groups": [list(g) for g in self.degenerate_groups],
            "all_simple": bool(self.all_simple),
            "n_starts": int(self.n_starts),
            "provenance": self.provenance,
        }


def write_reports_ndjson(reports, out):
    """Append one JSON object per report, newline-delimited."""
    if hasattr(out, "write"):
        for rep in reports:
            out.write(json.dumps(rep.to_record()) + "\n")
        return
    with open(out, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_record()) + "\n")


def _config_hash(spec, path, policy) -> str:
    blob = {
        "N": spec.N, "d": spec.d, "delta": spec.delta,
        "interaction": {
            "kind": spec.interaction.kind, "rho": spec.interaction.rho,
            "params": {k: spec.interaction.params[k]
                       for k in sorted(spec.interaction.params)
                       if not k.startswith("_") and np.isscalar(spec.interaction.params[k])},
            "cutoff_level": spec.interaction.cutoff_level,
        },
        "confinement": {
            "alpha": spec.confinement.alpha,
            "lengths": list(spec.confinement.lengths),
            "kind": spec.confinement.kind,
        },
        "path": {"source": path.source, "length": path.length, "axis": path.axis,
                 "delta": path.delta, "alpha": path.alpha},
        "policy": asdict(policy),
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _lattice_starts(N: int, seed: int, cap: int | None = None):
    """Ordering permutations of the equidistant phases, padded with jitter."""
    base = TWO_PI * np.arange(N) / N
    base -= base.mean()
    if cap is None:
        cap = min(3 ** (N - 1), 48)
    exact = [np.array((base[0],) + p)
             for p in itertools.islice(itertools.permutations(base[1:]), cap)]
    rng = np.random.default_rng(seed)
    starts = list(exact)
    i = 0
    while len(starts) < cap:
        starts.append(exact[i % len(exact)] + rng.normal(0.0, 0.02, N))
        i += 1
    return starts


@dataclass
class _StartOutcome:
    psi: np.ndarray
    value: float
    grad_norm: float
    converged: bool
    penalty_hits: int


def minimize_averaged(path, spec, xi=None, starts=None, gtol: float = 1e-9,
                      max_iter: int = 500, max_polish: int = 60,
                      rho: float | None = None,
                      policy: QuadraturePolicy | None = None,
                      method: str = "auto", seed: int = 0,
                      workers: int | None = None,
                      n_starts: int | None = None,
                      degeneracy_rtol: float = 1e-8) -> MinimumReport:
    """Locate a minimum of the averaged potential on the phase torus.

    Quasi-Newton descent over the deviation coordinates (the zero-mean gauge
    is built into the parametrization), followed by a modified-Newton polish
    with analytic gradients.  Starts that sit on the collision set are
    discarded; evaluations that strike it during descent are rejected as
    barrier steps, and a descent that keeps striking it without converging is
    reported as convergence to a collision.  Multi-starts run on a thread
    pool; each start owns its evaluator state.
    """
    N = spec.N
    frame = build_frame(N)
    if xi is None:
        xi = np.zeros((N, spec.d - 1))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape != (N, spec.d - 1):
        raise ValueError("xi must be N x (d-1)")
    W = spec.interaction
    rho_eff = rho if rho is not None else (W.rho if W.rho > 0.0 else None)
    pol = policy or QuadraturePolicy()

    if starts is None:
        starts = _lattice_starts(N, seed, cap=n_starts)
    starts = [frame.to_reduced(np.asarray(s, dtype=float))[1] for s in starts]

    sqrtN = math.sqrt(N)

    def theta_of(psi):
        return frame.from_reduced(0.0, psi)

    def evaluate(psi, hits):
        theta = theta_of(psi)
        try:
            if rho_eff is not None and collision_test(theta, xi, path, rho_eff).collides:
                raise CollisionError("iterate inside the collision set")
            val = averaged_U(theta, xi, path, spec, policy=pol, method=method)
            gth = averaged_gradient(theta, xi, path, W, policy=pol, method=method)
        except (CollisionError, DomainViolation):
            hits[0] += 1
            return _PENALTY, np.zeros_like(psi)
        return val, sqrtN * (frame.R @ gth)[1:]

    target = max(1e-15, 1e-4 * gtol)

    def run_start(psi0):
        hits = [0]
        val0, g0 = evaluate(psi0, hits)
        if val0 >= _PENALTY:
            return None  # inadmissible start
        res = scipy_minimize(lambda p: evaluate(p, hits), psi0, jac=True,
                             method="L-BFGS-B",
                             options={"maxiter": max_iter, "ftol": 1e-15,
                                      "gtol": 0.1 * gtol})
        psi = np.asarray(res.x, dtype=float)
        val, g = evaluate(psi, hits)
        if val >= _PENALTY:
            psi, val, g = psi0, val0, g0
        for _ in range(max_polish):
            gn = float(np.linalg.norm(g))
            if gn <= target:
                break
            try:
                Hth = averaged_hessian(theta_of(psi), xi, path, W,
                                       policy=pol, method=method)
            except (CollisionError, DomainViolation):
                break
            Hred = N * (frame.R @ Hth @ frame.R.T)[1:, 1:]
            Hred = 0.5 * (Hred + Hred.T)
            w, V = np.linalg.eigh(Hred)
            floor = 1e-12 * max(1.0, float(np.max(np.abs(w))))
            step = -V @ ((V.T @ g) / np.maximum(np.abs(w), floor))
            limit = 1.0 + float(np.linalg.norm(psi))
            sn = float(np.linalg.norm(step))
            if sn > limit:
                step *= limit / sn
            alpha, accepted = 1.0, False
            for _ in range(25):
                v2, g2 = evaluate(psi + alpha * step, hits)
                if v2 < _PENALTY and np.linalg.norm(g2) < gn:
                    psi, val, g = psi + alpha * step, v2, g2
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
        gn = float(np.linalg.norm(g))
        return _StartOutcome(psi=psi, value=val, grad_norm=gn,
                             converged=gn <= gtol, penalty_hits=hits[0])

    pool_size = workers or min(len(starts), os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=max(1, pool_size)) as pool:
        outcomes = [o for o in pool.map(run_start, starts) if o is not None]

    if not outcomes:
        raise CollisionError("every start sits on the collision set")
    converged = [o for o in outcomes if o.converged]
    if not converged:
        if any(o.penalty_hits for o in outcomes):
            raise CollisionError(
                "descent kept striking the collision set without converging")
        best_gn = min(o.grad_norm for o in outcomes)
        raise ConvergenceError(
            f"no start reached gradient norm {gtol:g} "
            f"(best {best_gn:.3g} after {max_iter} iterations)")
    # near-ties in value (flat minima resolve values only to roundoff) go to
    # the start with the smaller gradient
    vmin = min(o.value for o in converged)
    vtol = 1e-10 * max(1.0, abs(vmin))
    best = min((o for o in converged if o.value <= vmin + vtol),
               key=lambda o: o.grad_norm)

    theta_star = theta_of(best.psi)
    theta_star = theta_star - theta_star.mean()
    try:
        value = averaged_U(theta_star, xi, path, spec, policy=pol, method=method)
        gth = averaged_gradient(theta_star, xi, path, W, policy=pol, method=method)
        Hth = averaged_hessian(theta_star, xi, path, W, policy=pol, method=method)
    except (CollisionError, DomainViolation) as exc:
        raise CollisionError("the reported minimum sits on the collision set") from exc
    if rho_eff is not None:
        probe = collision_test(theta_star, xi, path, rho_eff)
        if probe.collides:
            raise CollisionError(
                f"converged configuration collides: pair {probe.pair} "
                f"at time {probe.time:.6g}")

    grad_norm = float(np.linalg.norm(sqrtN * (frame.R @ gth)[1:]))
    Hred = N * (frame.R @ Hth @ frame.R.T)[1:, 1:]
    Hred = 0.5 * (Hred + Hred.T)
    eigs, _ = np.linalg.eigh(Hred)
    theta_eigs = np.linalg.eigvalsh(0.5 * (Hth + Hth.T))

    ztol = 1e-8 * max(1.0, float(np.max(np.abs(eigs))))
    if eigs.min() < -ztol:
        classification = "saddle"
    elif eigs.min() < ztol:
        classification = "degenerate"
    else:
        classification = "nondegenerate-min"

    simultaneous = True
    for n in range(N):
        for m in range(n + 1, N):
            if abs(math.remainder(theta_star[n] - theta_star[m], math.pi)) > 1e-9:
                simultaneous = False
    groups = tuple(group_degenerate(eigs, rtol=degeneracy_rtol))
    provenance = {
        "config_hash": _config_hash(spec, path, pol),
        "policy": asdict(pol),
        "path_source": path.source,
        "delta": path.delta,
        "n_starts": len(starts),
        "seed": seed,
    }
    return MinimumReport(
        theta_min=theta_star, xi_min=xi, value=float(value), grad_norm=grad_norm,
        hessian_reduced=Hred, eigenvalues=eigs, theta_eigenvalues=theta_eigs,
        classification=classification, simultaneous_impacts=simultaneous,
        degenerate_groups=groups, all_simple=all(len(g) == 1 for g in groups),
        n_starts=len(starts), provenance=provenance)


# -- resonance scan -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResonanceReport:
    omega: tuple
    relations: tuple
    residuals: tuple
    tol: float
    max_order: int


def _l1_vectors(dim: int, bound: int):
    if dim == 0:
        yield ()
        return
    for head in range(-bound, bound + 1):
        for tail in _l1_vectors(dim - 1, bound - abs(head)):
            yield (head,) + tail


def resonance_scan(omega, max_order: int = 4, tol: float = 1e-9) -> ResonanceReport:
    """Exhaustive integer-relation search m . omega = 0 to within tol.

    The order bound applies to the components conjugate to omega[1:]; the
    coefficient of the leading frequency ranges over every integer that could
    balance them, so the search is exhaustive within the stated bound.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if not np.all(np.isfinite(omega)):
        raise ValueError("omega must be finite")
    rest = omega[1:]
    if rest.size and abs(omega[0]) > 0.0:
        bound0 = int(math.ceil((max_order * float(np.max(np.abs(rest))) + tol)
                               / abs(omega[0])))
    else:
        bound0 = 0
    found = {}
    for mhat in _l1_vectors(rest.size, max_order):
        order = sum(abs(x) for x in mhat)
        if order == 0:
            continue
        s = float(np.dot(mhat, rest))
        for m0 in range(-bound0, bound0 + 1):
            r = abs(m0 * omega[0] + s)
            if r < tol:
                m = (m0,) + mhat
                lead = next(x for x in m if x != 0)
                if lead < 0:
                    m = tuple(-x for x in m)
                if m not in found or r < found[m]:
                    found[m] = r
    relations = tuple(sorted(found, key=lambda m: (sum(abs(x) for x in m[1:]), m)))
    residuals = tuple(found[m] for m in relations)
    return ResonanceReport(omega=tuple(float(x) for x in omega),
                           relations=relations, residuals=residuals,
                           tol=tol, max_order=max_order)
