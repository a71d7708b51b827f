"""Twist-condition bookkeeping for weakly coupled identical oscillators.

Holds the single-orbit normal-form data (the frequency vector and the
quadratic action matrix), checks the two determinant conditions built from
it, assembles the big quadratic form governing the transverse actions of N
copies, and verifies the determinant identity that ties the two together.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .reduce import build_frame


@dataclass(frozen=True, eq=False)
class TwistData:
    """Normal-form coefficients of one orbit: action Hessian and frequencies.

    a is the leading (phase-direction) diagonal entry, b couples the phase
    action to the d-1 transverse actions, A_hat is the transverse block, and
    omega = (omega_0, transverse frequencies).
    """

    a: float
    b: np.ndarray
    A_hat: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        A_hat = np.atleast_2d(np.asarray(self.A_hat, dtype=float))
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A_hat", A_hat)
        object.__setattr__(self, "omega", omega)
        k = b.shape[0]
        if A_hat.shape != (k, k):
            raise ValueError("A_hat must be square with one row per entry of b")
        if omega.shape != (k + 1,):
            raise ValueError("omega must hold one more frequency than b has entries")
        scale = max(1.0, float(np.max(np.abs(A_hat))) if A_hat.size else 1.0)
        if A_hat.size and np.max(np.abs(A_hat - A_hat.T)) > 1e-12 * scale:
            raise ValueError("A_hat must be symmetric")

    @property
    def d(self) -> int:
        return self.omega.shape[0]

    @property
    def A(self) -> np.ndarray:
        """Full action matrix [[a, b], [b^T, A_hat]]."""
        d = self.d
        A = np.zeros((d, d))
        A[0, 0] = self.a
        A[0, 1:] = self.b
        A[1:, 0] = self.b
        A[1:, 1:] = self.A_hat
        return A

    @property
    def A_omega(self) -> np.ndarray:
        """Frequency-bordered action matrix [[0, omega], [omega^T, A]]."""
        d = self.d
        Aw = np.zeros((d + 1, d + 1))
        Aw[0, 1:] = self.omega
        Aw[1:, 0] = self.omega
        Aw[1:, 1:] = self.A
        return Aw


def billiard_twist_data(a: float, omega, A_hat) -> TwistData:
    """TwistData with the steep-limit coupling b = (a/omega_0) * omega_hat."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    return TwistData(a=a, b=a / omega[0] * omega[1:], A_hat=A_hat, omega=omega)


@dataclass(frozen=True, eq=False)
class TwistCheck:
    det_A: float
    det_A_omega: float
    twist_ok: bool
    isoenergetic_ok: bool
    tol: float


def _hadamard(M: np.ndarray) -> float:
    norms = np.linalg.norm(M, axis=1)
    return float(np.prod(np.where(norms > 0.0, norms, 1.0)))


def twist_check(td: TwistData, tol: float = 1e-12) -> TwistCheck:
    """Evaluate both determinant conditions.

    A determinant passes when it exceeds tol relative to its Hadamard bound
    (the product of row norms), so the verdict is scale-invariant.
    """
    det_A = float(np.linalg.det(td.A))
    det_Aw = float(np.linalg.det(td.A_omega))
    return TwistCheck(
        det_A=det_A, det_A_omega=det_Aw,
        twist_ok=abs(det_A) > tol * max(1.0, _hadamard(td.A)),
        isoenergetic_ok=abs(det_Aw) > tol * max(1.0, _hadamard(td.A_omega)),
        tol=tol)


@dataclass(frozen=True, eq=False)
class TimeOneData:
    S: np.ndarray
    M: np.ndarray
    nu: np.ndarray | None = None
    degenerate: bool = False


def _s_matrix(td: TwistData, N: int) -> np.ndarray:
    w0 = float(td.omega[0])
    if w0 == 0.0:
        raise ValueError("the leading frequency must be nonzero")
    what = td.omega[1:]
    return (np.outer(what, td.b) + np.outer(td.b, what)
            - td.a / w0 * np.outer(what, what)) / (w0 * N)


def build_M(td: TwistData, N: int, frame=None) -> TimeOneData:
    """Assemble the quadratic form in the N-1 slow and N(d-1) fast actions.

    Block layout: (a/N) identity; cross blocks R_n b / sqrt(N) built from the
    frame columns with the uniform row removed; A_hat - S on the transverse
    diagonal and -S elsewhere.  With a single particle there are no slow
    actions and no coupling, so M collapses to A_hat and is flagged.
    """
    if N < 1:
        raise ValueError("need at least one particle")
    k = td.d - 1
    if N == 1:
        return TimeOneData(S=np.zeros((k, k)), M=td.A_hat.copy(), degenerate=True)
    if frame is None:
        frame = build_frame(N)
    S = _s_matrix(td, N)
    size = (N - 1) + N * k
    M = np.zeros((size, size))
    M[:N - 1, :N - 1] = td.a / N * np.eye(N - 1)
    sqrtN = math.sqrt(N)
    for n in range(N):
        cross = np.outer(frame.R[1:, n], td.b) / sqrtN
        c0 = (N - 1) + n * k
        M[:N - 1, c0:c0 + k] = cross
        M[c0:c0 + k, :N - 1] = cross.T
    for n in range(N):
        r0 = (N - 1) + n * k
        for m in range(N):
            c0 = (N - 1) + m * k
            M[r0:r0 + k, c0:c0 + k] = (td.A_hat - S) if n == m else -S
    return TimeOneData(S=S, M=M)


def detm_identity_check(td: TwistData, N: int, frame=None) -> float:
    """Relative gap between det M and its single-orbit determinant expression.

    Returns NaN for N = 1, where the identity does not apply.
    """
    tod = build_M(td, N, frame)
    if tod.degenerate:
        return math.nan
    res = twist_check(td)
    lhs = float(np.linalg.det(tod.M))
    rhs = -(res.det_A / N) ** (N - 1) * res.det_A_omega / td.omega[0] ** 2
    denom = max(abs(lhs), abs(rhs))
    return abs(lhs - rhs) / denom if denom > 0.0 else 0.0


class TimeOneHamiltonian:
    """Evaluator for the effective one-period Hamiltonian.

    Quadratic in the slow momenta J and the per-particle transverse actions;
    psi enters only through the supplied potential.  The Hessian in the
    stacked actions (J, I^(1), ..., I^(N)) is exactly the matrix M.
    """

    def __init__(self, td: TwistData, N: int, frame, data: TimeOneData,
                 h: float, u_hat):
        self.td = td
        self.N = N
        self.frame = frame
        self.data = data
        self.h = h
        self.u_hat = u_hat
        w0 = float(td.omega[0])
        self.linear = data.nu + h / (w0 * N) * (td.b - td.a / w0 * td.omega[1:])

    def __call__(self, J, psi, I_hat) -> float:
        td, N = self.td, self.N
        J = np.atleast_1d(np.asarray(J, dtype=float))
        I_hat = np.atleast_2d(np.asarray(I_hat, dtype=float))
        if J.shape != (N - 1,) or I_hat.shape != (N, td.d - 1):
            raise ValueError("J must have length N-1 and I_hat shape (N, d-1)")
        bI = I_hat @ td.b                     # per-particle b . I^(n)
        RJ = self.frame.R[1:].T @ J           # per-particle R_n . J
        total_I = I_hat.sum(axis=0)
        value = td.a / (2.0 * N) * float(J @ J)
        value += float(bI @ RJ) / math.sqrt(N)
        value += float(self.linear @ total_I)
        value += 0.5 * float(np.einsum("nj,jk,nk->", I_hat, td.A_hat, I_hat))
        value -= 0.5 * float(total_I @ (self.data.S @ total_I))
        if self.u_hat is not None:
            value += float(self.u_hat(np.asarray(psi, dtype=float)))
        return value


def nu_vector(omega, delta: float):
    """Per-period rotation remainders: K = floor(omega_0 / (2 pi sqrt(delta)))
    and nu_j = 2 pi frac(K omega_j / omega_0), each in [0, 2 pi)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    K = int(math.floor(omega[0] / (2.0 * math.pi * math.sqrt(delta))))
    ratios = K * omega[1:] / omega[0]
    nu = 2.0 * math.pi * (ratios - np.floor(ratios))
    nu = np.where(nu >= 2.0 * math.pi, 0.0, nu)
    return K, nu


def assemble_timeone(td: TwistData, N: int, frame=None, nu=None, h: float = 0.0,
                     u_hat=None, delta: float | None = None) -> TimeOneHamiltonian:
    """Build the one-period Hamiltonian evaluator.

    nu may be given directly or derived from delta via nu_vector; omitted
    entirely it defaults to zero (pure quadratic diagnostics).
    """
    if frame is None and N >= 2:
        frame = build_frame(N)
    if nu is None:
        if delta is not None:
            _, nu = nu_vector(td.omega, delta)
        else:
            nu = np.zeros(td.d - 1)
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if nu.shape != (td.d - 1,):
        raise ValueError("nu must hold one entry per transverse frequency")
    base = build_M(td, N, frame)
    data = TimeOneData(S=base.S, M=base.M, nu=nu, degenerate=base.degenerate)
    return TimeOneHamiltonian(td, N, frame, data, h, u_hat)


def detm_random_sweep(n_draws: int = 100, seed: int = 0, Ns=(2, 3, 4, 5),
                      ds=(2, 3, 4), out=None, workers: int | None = None):
    """Randomized identity regression; one NDJSON record per draw.

    Entries uniform in [-2, 2], a in [0.1, 2], leading frequency in
    [0.3, 2]; draws with |det A| < 1e-6 are resampled so the relative
    residual stays meaningful.
    """
    rng = np.random.default_rng(seed)
    draws = []
    while len(draws) < n_draws:
        N = int(rng.choice(Ns))
        d = int(rng.choice(ds))
        a = float(rng.uniform(0.1, 2.0))
        b = rng.uniform(-2.0, 2.0, d - 1)
        A_hat = rng.uniform(-2.0, 2.0, (d - 1, d - 1))
        A_hat = 0.5 * (A_hat + A_hat.T)
        omega = np.concatenate([[rng.uniform(0.3, 2.0)],
                                rng.uniform(-2.0, 2.0, d - 1)])
        td = TwistData(a=a, b=b, A_hat=A_hat, omega=omega)
        if abs(np.linalg.det(td.A)) < 1e-6:
            continue
        draws.append((N, td))

    def check(item):
        N, td = item
        res = twist_check(td)
        det_M = float(np.linalg.det(build_M(td, N).M))
        return {
            "N": N, "d": td.d, "a": td.a, "b": td.b.tolist(),
            "A_hat": td.A_hat.tolist(), "omega": td.omega.tolist(),
            "det_A": res.det_A, "det_A_omega": res.det_A_omega,
            "det_M": det_M, "residual": detm_identity_check(td, N),
        }

    with ThreadPoolExecutor(max_workers=workers or min(8, n_draws)) as pool:
        records = list(pool.map(check, draws))
    if out is not None:
        if hasattr(out, "write"):
            for rec in records:
                out.write(json.dumps(rec) + "\n")
        else:
            with open(out, "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec) + "\n")
    return records
