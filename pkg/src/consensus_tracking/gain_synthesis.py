"""Optimal feedforward-feedback tracking gains.

The optimal law is

    u = -R^{-1} B1' (P x + P1 z + P2 w)

where ``P`` is the stabilizing solution of the control Riccati equation

    A'P + PA - PSP + C'QC = 0,      S = B1 R^{-1} B1'

and the feedforward matrices solve the linear Sylvester equations obtained
by substituting the affine costate ``lambda = P x + P1 z + P2 w`` into the
Hamiltonian system:

    (A - SP)' P1 + P1 F = C'QH
    (A - SP)' P2 + P2 K = -P B2
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NotSolvable,
    ResonantSpectra,
    SingularSystem,
)
from .system_model import check_solvability, is_detectable, is_hurwitz, is_stabilizable

__all__ = [
    "GainSet",
    "care_residual",
    "solve_care",
    "solve_care_newton",
    "solve_care_hamiltonian",
    "solve_reference_equation",
    "solve_disturbance_equation",
    "sylvester_kron_oracle",
    "eigenvalue_gap",
    "compute_gains",
    "printed_form_residuals",
    "derivation_residual",
    "save_gains",
    "load_gains",
]

CARE_RTOL = 1e-9
SYLVESTER_RTOL = 1e-10
RESONANCE_TOL = 1e-10


def _sym(X):
    return 0.5 * (X + X.T)


def care_residual(A, S, Qc, P):
    """Frobenius norm of ``A'P + PA - PSP + Qc``."""
    return float(np.linalg.norm(A.T @ P + P @ A - P @ S @ P + Qc, "fro"))


def _initial_stabilizing(A, S):
    """Bass-type stabilizing start: ``(A + bI) Z + Z (A + bI)' = S``, ``X0 = Z^-1``.

    The closed loop ``A - S X0`` then has eigenvalues ``-conj(lambda(A)) - 2b``.
    """
    n = A.shape[0]
    # a barely stable A makes the first Lyapunov solve ill-posed
    if is_hurwitz(A, margin=np.sqrt(np.finfo(float).eps) * max(1.0, np.linalg.norm(A, 2))):
        return np.zeros((n, n))
    beta = np.max(np.abs(np.linalg.eigvals(A).real)) + 1.0
    Ab = A + beta * np.eye(n)
    # solve_continuous_lyapunov solves a X + X a' = q; Ab is anti-stable so negate
    Z = la.solve_continuous_lyapunov(-Ab, -S)
    X0 = _sym(np.linalg.pinv(_sym(Z)))
    if not is_hurwitz(A - S @ X0):
        raise NoConvergence("could not construct a stabilizing initial gain")
    return X0


def solve_care_newton(A, S, Qc, tol=CARE_RTOL, maxiter=100):
    """Newton-Kleinman iteration with Lyapunov inner solves.

    Each step solves ``(A - S X)' X+ + X+ (A - S X) = -(Qc + X S X)``; the
    iterates stay stabilizing and converge quadratically to the stabilizing
    solution.
    """
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    Qc = np.asarray(Qc, dtype=float)
    scale = max(1.0, np.linalg.norm(Qc, "fro"))
    X = _initial_stabilizing(A, S)
    res = care_residual(A, S, Qc, X)
    tiny = 4 * np.finfo(float).eps
    for _ in range(maxiter):
        Ak = A - S @ X
        X_new = _sym(la.solve_continuous_lyapunov(Ak.T, -(Qc + X @ S @ X)))
        res_new = care_residual(A, S, Qc, X_new)
        if res <= tol * scale and res_new >= res:
            return X
        step = np.linalg.norm(X_new - X, "fro")
        X, res = X_new, res_new
        if res <= tol * scale and step <= tiny * max(1.0, np.linalg.norm(X, "fro")):
            return X
    if res <= tol * scale:
        return X
    raise NoConvergence(f"Newton iteration stalled at residual {res:.3e}", residual=res)


def solve_care_hamiltonian(A, S, Qc):
    """Stable invariant subspace of ``[[A, -S], [-Qc, -A']]`` via ordered real Schur."""
    A = np.asarray(A, dtype=float)
    S = np.asarray(S, dtype=float)
    Qc = np.asarray(Qc, dtype=float)
    n = A.shape[0]
    Ham = np.block([[A, -S], [-Qc, -A.T]])
    _, Z, sdim = la.schur(Ham, output="real", sort="lhp")
    if sdim != n:
        raise NotSolvable(
            f"Hamiltonian has {2 * n - 2 * sdim} eigenvalues on or near the imaginary axis")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1.0 / np.finfo(float).eps:
        raise NoConvergence("stable invariant subspace is not a graph (U11 singular)")
    return _sym(np.linalg.solve(U11.T, U21.T).T)


def solve_care(A, S, Qc, method="newton", check=True, tol=CARE_RTOL):
    """Stabilizing solution ``P`` of ``A'P + PA - PSP + Qc = 0``.

    Parameters
    ----------
    A, S, Qc : array_like
        ``S`` and ``Qc`` symmetric positive semidefinite.
    method : {"newton", "hamiltonian"}
    check : bool
        Run the PBH stabilizability/detectability tests first.

    Raises
    ------
    NotSolvable
        ``(A, S)`` not stabilizable or ``(A, Qc)`` not detectable.
    NoConvergence
        Residual above ``tol * max(1, ||Qc||_F)`` or ``A - SP`` not Hurwitz.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Qc = np.atleast_2d(np.asarray(Qc, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or S.shape != (n, n) or Qc.shape != (n, n):
        raise DimensionMismatch("A, S and Qc must be square of equal size")
    if check:
        if not is_stabilizable(A, S):
            raise NotSolvable("(A, B1) is not stabilizable")
        if not is_detectable(A, Qc):
            raise NotSolvable("(A, Qc^(1/2)) is not detectable")
    if method == "newton":
        P = solve_care_newton(A, S, Qc, tol=tol)
    elif method == "hamiltonian":
        P = solve_care_hamiltonian(A, S, Qc)
    else:
        raise ValueError(f"unknown CARE method {method!r}")
    res = care_residual(A, S, Qc, P)
    if res > tol * max(1.0, np.linalg.norm(Qc, "fro")):
        raise NoConvergence(f"Riccati residual {res:.3e} above tolerance", residual=res)
    if not is_hurwitz(A - S @ P):
        raise NoConvergence("solution is not stabilizing", residual=res)
    return P


def sylvester_kron_oracle(M, N, Qrhs):
    """Solve ``M X + X N = Qrhs`` by a dense solve of the vectorized system.

    Uses ``vec(M X + X N) = (I kron M + N' kron I) vec(X)`` with column-major
    ``vec``.  Intended as an independent check, O((mn)^3).
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    m, n = M.shape[0], N.shape[0]
    Qrhs = np.asarray(Qrhs, dtype=float).reshape(m, n)
    big = np.kron(np.eye(n), M) + np.kron(N.T, np.eye(m))
    if np.linalg.cond(big) > 1.0 / np.finfo(float).eps:
        raise SingularSystem("vectorized Sylvester operator is singular")
    x = np.linalg.solve(big, Qrhs.reshape(-1, order="F"))
    return x.reshape(m, n, order="F")


def eigenvalue_gap(M, N):
    """``min |lambda_i(M) + mu_j(N)|``; the Sylvester operator ``M'X + XN`` is
    singular exactly when this is zero."""
    lam = np.linalg.eigvals(M)
    mu = np.linalg.eigvals(N)
    return float(np.min(np.abs(lam[:, None] + mu[None, :])))


def _solve_feedforward(Acl, N, rhs, what):
    """Solve ``Acl' X + X N = rhs`` with a resonance guard and one refinement step."""
    gap = eigenvalue_gap(Acl, N)
    if gap <= RESONANCE_TOL:
        raise ResonantSpectra(
            f"{what}: closed-loop and exosystem eigenvalues sum to {gap:.2e}", min_gap=gap)
    M = Acl.T
    X = la.solve_sylvester(M, N, rhs)
    R = rhs - (M @ X + X @ N)
    scale = max(1.0, np.linalg.norm(rhs, "fro"))
    if np.linalg.norm(R, "fro") > 0.1 * SYLVESTER_RTOL * scale:
        X = X + la.solve_sylvester(M, N, R)
    res = float(np.linalg.norm(M @ X + X @ N - rhs, "fro"))
    if res > SYLVESTER_RTOL * scale:
        raise NoConvergence(f"{what}: Sylvester residual {res:.3e} above tolerance", residual=res)
    return X


def solve_reference_equation(A, S, P, F, CtQH):
    """``P1`` from ``(A - SP)' P1 + P1 F = C'QH``."""
    A, S, P, F = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, S, P, F))
    CtQH = np.asarray(CtQH, dtype=float).reshape(A.shape[0], F.shape[0])
    return _solve_feedforward(A - S @ P, F, CtQH, "reference equation")


def solve_disturbance_equation(A, S, P, K, PB2):
    """``P2`` from ``(A - SP)' P2 + P2 K = -P B2``."""
    A, S, P, K = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, S, P, K))
    PB2 = np.asarray(PB2, dtype=float).reshape(A.shape[0], K.shape[0])
    return _solve_feedforward(A - S @ P, K, -PB2, "disturbance equation")


@dataclass(frozen=True)
class GainSet:
    """Solved Riccati/Sylvester matrices and the three gains of the optimal law.

    ``residuals`` holds ``care``, ``reference`` and ``disturbance`` Frobenius
    residual norms, plus ``care_method_gap`` when the two Riccati solvers were
    cross-checked.
    """

    P: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    S: np.ndarray
    Kx: np.ndarray
    Kz: np.ndarray
    Kw: np.ndarray
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("P", "P1", "P2", "S", "Kx", "Kz", "Kw"):
            arr = np.array(getattr(self, name), dtype=float, ndmin=2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "residuals", {k: float(v) for k, v in self.residuals.items()})

    def to_dict(self):
        return {
            **{k: getattr(self, k).tolist() for k in ("P", "P1", "P2", "S", "Kx", "Kz", "Kw")},
            "residuals": dict(self.residuals),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.array(d[k], dtype=float, ndmin=2)
                      for k in ("P", "P1", "P2", "S", "Kx", "Kz", "Kw")},
                   residuals=d.get("residuals", {}))


def save_gains(path, gains):
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(path, "w") as fh:
        json.dump(gains.to_dict(), fh, indent=2)
        fh.write("\n")


def load_gains(path):
    with open(path) as fh:
        return GainSet.from_dict(json.load(fh))


def _check_cost_dims(plant, exo, cost):
    if plant.n_dist != exo.n_dist:
        raise DimensionMismatch(f"B2 has {plant.n_dist} columns but K is {exo.n_dist}x{exo.n_dist}")
    if plant.n_output != exo.n_output:
        raise DimensionMismatch("plant and reference outputs differ in size")
    if cost.Q.shape[0] != plant.n_output or cost.R.shape[0] != plant.n_input:
        raise DimensionMismatch("cost weights do not match plant dimensions")


def compute_gains(plant, exo, cost, cross_check=True):
    """Solve for ``P``, ``P1``, ``P2`` and assemble the :class:`GainSet`.

    Raises :class:`NotSolvable` when the existence conditions fail and
    propagates solver errors (``ResonantSpectra``, ``NoConvergence``).
    """
    _check_cost_dims(plant, exo, cost)
    report = check_solvability(plant, cost)
    if not report.ok:
        raise NotSolvable(f"existence conditions fail: {report}")
    A, B1, B2, C = plant.A, plant.B1, plant.B2, plant.C
    Q, R = cost.Q, cost.R
    RinvB1t = np.linalg.solve(R, B1.T)
    S = _sym(B1 @ RinvB1t)
    Qc = _sym(C.T @ Q @ C)
    P = solve_care(A, S, Qc, method="newton", check=False)
    residuals = {"care": care_residual(A, S, Qc, P)}
    if cross_check:
        P_ham = solve_care_hamiltonian(A, S, Qc)
        gap = float(np.linalg.norm(P - P_ham, "fro"))
        residuals["care_method_gap"] = gap
        if gap > 1e-8 * max(1.0, np.linalg.norm(P, "fro")):
            warnings.warn(f"Riccati solvers disagree by {gap:.2e}", RuntimeWarning, stacklevel=2)
    CtQH = C.T @ Q @ exo.H
    P1 = solve_reference_equation(A, S, P, exo.F, CtQH)
    P2 = solve_disturbance_equation(A, S, P, exo.K, P @ B2)
    Acl = A - S @ P
    residuals["reference"] = float(np.linalg.norm(Acl.T @ P1 + P1 @ exo.F - CtQH, "fro"))
    residuals["disturbance"] = float(np.linalg.norm(Acl.T @ P2 + P2 @ exo.K + P @ B2, "fro"))
    return GainSet(P=P, P1=P1, P2=P2, S=S,
                   Kx=RinvB1t @ P, Kz=RinvB1t @ P1, Kw=RinvB1t @ P2,
                   residuals=residuals)


def printed_form_residuals(gains, plant, exo, cost):
    """Residuals of the quadratic feedforward forms ``P1 F - P1 S P1 - C'QH + A'P1``
    and ``A'P2 + P2 K - P2 S P2 + P B2`` evaluated at the solved matrices.

    These quadratic forms are not what the costate substitution produces, so
    nonzero values are expected; they are reported for transparency.
    """
    A, C, B2 = plant.A, plant.C, plant.B2
    S, P, P1, P2 = gains.S, gains.P, gains.P1, gains.P2
    CtQH = C.T @ cost.Q @ exo.H
    # P1 S P1 and P2 S P2 only conform when the exosystem order equals the plant order
    ref = P1 @ exo.F - P1 @ S @ P1 - CtQH + A.T @ P1 if P1.shape[0] == P1.shape[1] else None
    dist = A.T @ P2 + P2 @ exo.K - P2 @ S @ P2 + P @ B2 if P2.shape[0] == P2.shape[1] else None
    return {
        "reference_quadratic": None if ref is None else float(np.linalg.norm(ref, "fro")),
        "disturbance_quadratic": None if dist is None else float(np.linalg.norm(dist, "fro")),
    }


def derivation_residual(gains, plant, exo, cost, x, z, w):
    """Coefficient identity from matching ``d lambda/dt`` against the costate
    equation, applied to arbitrary ``(x, z, w)``; zero for exact gains."""
    A, C, B2 = plant.A, plant.C, plant.B2
    Q = cost.Q
    S, P, P1, P2 = gains.S, gains.P, gains.P1, gains.P2
    Acl = A - S @ P
    care = A.T @ P + P @ A - P @ S @ P + C.T @ Q @ C
    ref = Acl.T @ P1 + P1 @ exo.F - C.T @ Q @ exo.H
    dist = Acl.T @ P2 + P2 @ exo.K + P @ B2
    return care @ np.asarray(x) + ref @ np.asarray(z) + dist @ np.asarray(w)
