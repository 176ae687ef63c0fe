"""Agent-level and stacked LTI descriptions of a disturbed multi-agent network.

Each agent ``i`` obeys

    dx_i/dt = A_ii x_i + sum_j A_ij x_j + B1_i u_i + B2_i w_i + m_i
    y_i     = C_i x_i + n_i

and stacking the agents gives one plant ``(A, B1, B2, C)`` with block
couplings in ``A`` and block-diagonal input/output maps.  The disturbance
``w`` and the reference ``z`` are generated by linear exosystems
(``K`` and ``(F, H)`` respectively).

All model types are frozen dataclasses holding read-only float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la

from .errors import DimensionMismatch, InvalidModel, NegativeWeight, UnknownNeighbor

__all__ = [
    "AgentDynamics",
    "ConsensusGraph",
    "PlantModel",
    "ExosystemModel",
    "CostSpec",
    "ObservabilityReport",
    "SolvabilityReport",
    "assemble_plant",
    "consensus_to_agents",
    "leader_injection",
    "check_observability",
    "check_solvability",
    "matrix_rank",
    "is_stabilizable",
    "is_detectable",
    "is_hurwitz",
    "psd_sqrt",
]


# ---------------------------------------------------------------------------
# small numerical helpers

def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if ndim == 1 and arr.ndim == 0:
        arr = arr.reshape(1)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidModel(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _intensity(value, n, name):
    """Accept a scalar (meaning value * I) or an n x n matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(n)
    return _frozen(arr, 2, name)


def matrix_rank(M, tol=None):
    """Numerical rank with threshold ``max(M.shape) * eps * sigma_max``.

    Complex input is kept complex (PBH matrices at complex eigenvalues).
    """
    M = np.atleast_2d(np.asarray(M))
    if not np.iscomplexobj(M):
        M = M.astype(float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if tol is None:
        tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    return int(np.sum(s > tol))


def is_hurwitz(A, margin=0.0):
    """True when every eigenvalue of ``A`` has real part below ``-margin``."""
    A = np.atleast_2d(A)
    if A.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def _unstable_eigs(A):
    lam = np.linalg.eigvals(A)
    # marginal eigenvalues computed as -1e-17 still count as non-stable
    tol = 1e-10 * max(1.0, np.linalg.norm(A, 2))
    return lam[lam.real >= -tol]


def is_stabilizable(A, B):
    """PBH test: rank [lambda I - A, B] = n for every eigenvalue with Re >= 0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n = A.shape[0]
    for lam in _unstable_eigs(A):
        if matrix_rank(np.hstack([lam * np.eye(n) - A, B])) < n:
            return False
    return True


def is_detectable(A, C):
    """Dual PBH test: rank [lambda I - A; C] = n for every eigenvalue with Re >= 0."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    return is_stabilizable(A.T, C.T)


def psd_sqrt(M):
    """Symmetric square root of a symmetric PSD matrix (negative eigenvalues clipped)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _check_psd(M, name, strict=False):
    M = np.asarray(M)
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")
    scale = max(1.0, np.abs(M).max())
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidModel(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(M)
    if strict and not np.all(w > 0):
        raise InvalidModel(f"{name} must be positive definite")
    if not strict and np.any(w < -1e-12 * scale):
        raise InvalidModel(f"{name} must be positive semidefinite")


def _is_block_diagonal(M, n_blocks):
    if n_blocks == 1:
        return True
    r, c = M.shape
    if r % n_blocks or c % n_blocks:
        return False
    br, bc = r // n_blocks, c // n_blocks
    mask = np.kron(np.eye(n_blocks, dtype=bool), np.ones((br, bc), dtype=bool))
    return bool(np.all(M[~mask] == 0.0))


# ---------------------------------------------------------------------------
# agent-level description

@dataclass(frozen=True)
class AgentDynamics:
    """One agent's blocks. ``couplings`` maps neighbour id ``j`` to ``A_ij``."""

    index: int
    A_ii: np.ndarray
    B1_i: np.ndarray
    B2_i: np.ndarray
    C_i: np.ndarray
    couplings: dict = field(default_factory=dict)

    def __post_init__(self):
        A_ii = _frozen(self.A_ii, 2, "A_ii")
        p = A_ii.shape[0]
        if A_ii.shape != (p, p):
            raise DimensionMismatch(f"agent {self.index}: A_ii must be square, got {A_ii.shape}")
        B1 = _frozen(self.B1_i, 2, "B1_i")
        B2 = _frozen(self.B2_i, 2, "B2_i")
        C = _frozen(self.C_i, 2, "C_i")
        if B1.shape[0] != p or B2.shape[0] != p or C.shape[1] != p:
            raise DimensionMismatch(f"agent {self.index}: input/output blocks do not match p={p}")
        if min(p, B1.shape[1], B2.shape[1], C.shape[0]) < 1:
            raise DimensionMismatch(f"agent {self.index}: all dimensions must be >= 1")
        coup = {}
        for j, Aij in dict(self.couplings).items():
            if j == self.index:
                raise InvalidModel(f"agent {self.index} cannot couple to itself")
            Aij = _frozen(Aij, 2, f"A_{self.index}{j}")
            if Aij.shape != (p, p):
                raise DimensionMismatch(
                    f"coupling A_{self.index}{j} has shape {Aij.shape}, expected {(p, p)}")
            coup[int(j)] = Aij
        object.__setattr__(self, "A_ii", A_ii)
        object.__setattr__(self, "B1_i", B1)
        object.__setattr__(self, "B2_i", B2)
        object.__setattr__(self, "C_i", C)
        object.__setattr__(self, "couplings", coup)

    @property
    def dims(self):
        """``(p, q, r, s)``: state, input, disturbance and output sizes."""
        return (self.A_ii.shape[0], self.B1_i.shape[1], self.B2_i.shape[1], self.C_i.shape[0])


@dataclass(frozen=True)
class ConsensusGraph:
    """Leader-following consensus weights.

    ``a`` is the N x N neighbour weight matrix (zero diagonal), ``a0`` the
    leader pinning gains and ``av`` the disturbance gains.
    """

    a: np.ndarray
    a0: np.ndarray
    av: np.ndarray

    def __post_init__(self):
        a = _frozen(self.a, 2, "a")
        N = a.shape[0]
        if a.shape != (N, N):
            raise DimensionMismatch(f"weight matrix must be square, got {a.shape}")
        a0 = _frozen(self.a0, 1, "a0")
        av = _frozen(self.av, 1, "av")
        if a0.shape != (N,) or av.shape != (N,):
            raise DimensionMismatch("leader and disturbance gains must have length N")
        if np.any(a < 0) or np.any(a0 < 0) or np.any(av < 0):
            raise NegativeWeight("consensus weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise InvalidModel("weight matrix must have a zero diagonal")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "av", av)

    @property
    def N(self):
        return self.a.shape[0]


# ---------------------------------------------------------------------------
# stacked description

@dataclass(frozen=True)
class PlantModel:
    """Stacked plant ``dx = (A x + B1 u + B2 w) dt + dm``, ``y = C x + n``.

    ``Qm`` and ``Qn`` are white-noise intensities; scalars are expanded to
    multiples of the identity.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray
    x0: np.ndarray
    Qm: np.ndarray
    Qn: np.ndarray
    n_agents: int = 1

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B1 = _frozen(self.B1, 2, "B1")
        B2 = _frozen(self.B2, 2, "B2")
        C = _frozen(self.C, 2, "C")
        x0 = _frozen(self.x0, 1, "x0")
        if B1.shape[0] != n or B2.shape[0] != n:
            raise DimensionMismatch("B1 and B2 must have as many rows as A")
        if C.shape[1] != n:
            raise DimensionMismatch("C must have as many columns as A")
        if x0.shape != (n,):
            raise DimensionMismatch(f"x0 must have length {n}")
        Qm = _intensity(self.Qm, n, "Qm")
        Qn = _intensity(self.Qn, C.shape[0], "Qn")
        if Qm.shape != (n, n) or Qn.shape != (C.shape[0],) * 2:
            raise DimensionMismatch("noise intensities have wrong shape")
        _check_psd(Qm, "Qm")
        _check_psd(Qn, "Qn", strict=True)
        N = int(self.n_agents)
        if N < 1:
            raise InvalidModel("n_agents must be >= 1")
        for name, M in (("B1", B1), ("B2", B2), ("C", C)):
            if not _is_block_diagonal(M, N):
                raise InvalidModel(f"{name} must be block-diagonal over {N} agents")
        for name, val in (("A", A), ("B1", B1), ("B2", B2), ("C", C), ("x0", x0),
                          ("Qm", Qm), ("Qn", Qn)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "n_agents", N)

    @property
    def n_state(self):
        return self.A.shape[0]

    @property
    def n_input(self):
        return self.B1.shape[1]

    @property
    def n_dist(self):
        return self.B2.shape[1]

    @property
    def n_output(self):
        return self.C.shape[0]

    @cached_property
    def Qm_sqrt(self):
        return psd_sqrt(self.Qm)

    @cached_property
    def Qn_sqrt(self):
        return psd_sqrt(self.Qn)


@dataclass(frozen=True)
class ExosystemModel:
    """Disturbance generator ``dw = K w dt + dm_w`` and reference generator
    ``dz = F z dt + dm_z``, ``y_ref = H z + n_z``."""

    K: np.ndarray
    w0: np.ndarray
    Qmw: np.ndarray
    F: np.ndarray
    H: np.ndarray
    z0: np.ndarray
    Qmz: np.ndarray
    Qnz: np.ndarray

    def __post_init__(self):
        K = _frozen(self.K, 2, "K")
        F = _frozen(self.F, 2, "F")
        H = _frozen(self.H, 2, "H")
        w0 = _frozen(self.w0, 1, "w0")
        z0 = _frozen(self.z0, 1, "z0")
        r, l = K.shape[0], F.shape[0]
        if K.shape != (r, r) or F.shape != (l, l):
            raise DimensionMismatch("K and F must be square")
        if H.shape[1] != l:
            raise DimensionMismatch(f"H must have {l} columns")
        if w0.shape != (r,) or z0.shape != (l,):
            raise DimensionMismatch("exosystem initial states have wrong length")
        Qmw = _intensity(self.Qmw, r, "Qmw")
        Qmz = _intensity(self.Qmz, l, "Qmz")
        Qnz = _intensity(self.Qnz, H.shape[0], "Qnz")
        if Qmw.shape != (r, r) or Qmz.shape != (l, l) or Qnz.shape != (H.shape[0],) * 2:
            raise DimensionMismatch("exosystem noise intensities have wrong shape")
        _check_psd(Qmw, "Qmw")
        _check_psd(Qmz, "Qmz")
        _check_psd(Qnz, "Qnz", strict=True)
        for name, val in (("K", K), ("F", F), ("H", H), ("w0", w0), ("z0", z0),
                          ("Qmw", Qmw), ("Qmz", Qmz), ("Qnz", Qnz)):
            object.__setattr__(self, name, val)

    @property
    def n_dist(self):
        return self.K.shape[0]

    @property
    def n_ref(self):
        return self.F.shape[0]

    @property
    def n_output(self):
        return self.H.shape[0]

    @cached_property
    def Qmw_sqrt(self):
        return psd_sqrt(self.Qmw)

    @cached_property
    def Qmz_sqrt(self):
        return psd_sqrt(self.Qmz)

    @cached_property
    def Qnz_sqrt(self):
        return psd_sqrt(self.Qnz)


@dataclass(frozen=True)
class CostSpec:
    """Weights of ``integral e'Qe + u'Ru dt``; both must be positive definite."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _frozen(self.Q, 2, "Q")
        R = _frozen(self.R, 2, "R")
        _check_psd(Q, "Q", strict=True)
        _check_psd(R, "R", strict=True)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


# ---------------------------------------------------------------------------
# operations

def assemble_plant(agents, x0, Qm, Qn):
    """Stack per-agent blocks into one :class:`PlantModel`.

    Agents are placed in order of their ``index``; indices must be exactly
    ``1..N``.  ``A`` gets ``A_ii`` on the diagonal and ``A_ij`` off it (zero
    where no coupling is declared); ``B1``, ``B2`` and ``C`` are block-diagonal.

    Raises
    ------
    DimensionMismatch
        Agents disagree on ``(p, q, r, s)`` or ``x0`` has the wrong length.
    UnknownNeighbor
        A coupling refers to an agent id that does not exist.
    """
    agents = sorted(agents, key=lambda ag: ag.index)
    if not agents:
        raise InvalidModel("need at least one agent")
    N = len(agents)
    ids = [ag.index for ag in agents]
    if ids != list(range(1, N + 1)):
        raise InvalidModel(f"agent ids must be 1..{N}, got {ids}")
    dims = {ag.dims for ag in agents}
    if len(dims) != 1:
        raise DimensionMismatch(f"agents disagree on (p, q, r, s): {sorted(dims)}")
    p, _, _, _ = dims.pop()

    A = np.zeros((N * p, N * p))
    for ag in agents:
        i = ag.index - 1
        A[i * p:(i + 1) * p, i * p:(i + 1) * p] = ag.A_ii
        for j, Aij in ag.couplings.items():
            if not 1 <= j <= N:
                raise UnknownNeighbor(f"agent {ag.index} couples to unknown agent {j}")
            A[i * p:(i + 1) * p, (j - 1) * p:j * p] = Aij
    B1 = la.block_diag(*[ag.B1_i for ag in agents])
    B2 = la.block_diag(*[ag.B2_i for ag in agents])
    C = la.block_diag(*[ag.C_i for ag in agents])
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (N * p,):
        raise DimensionMismatch(f"x0 must have length {N * p}, got {x0.shape[0]}")
    return PlantModel(A=A, B1=B1, B2=B2, C=C, x0=x0, Qm=Qm, Qn=Qn, n_agents=N)


def consensus_to_agents(graph, p):
    """Recast a leader-following consensus protocol as coupled agents.

    The protocol ``dx_i = sum_j a_ij (x_j - x_i) + av_i v_i + a0_i (x0 - x_i)``
    becomes ``A_ii = -(sum_j a_ij + a0_i) I_p`` and ``A_ij = a_ij I_p``.  The
    disturbance enters through ``B2_i = av_i I_p``; the leader term is the
    separate injection returned by :func:`leader_injection`.  Control and
    output maps are identities so the agents plug into the tracking design.
    """
    if not isinstance(graph, ConsensusGraph):
        graph = ConsensusGraph(*graph)
    p = int(p)
    if p < 1:
        raise DimensionMismatch("p must be >= 1")
    I = np.eye(p)
    agents = []
    for i in range(graph.N):
        row = graph.a[i]
        couplings = {j + 1: row[j] * I for j in range(graph.N) if j != i and row[j] != 0}
        agents.append(AgentDynamics(
            index=i + 1,
            A_ii=-(row.sum() + graph.a0[i]) * I,
            B1_i=I,
            B2_i=graph.av[i] * I,
            C_i=I,
            couplings=couplings,
        ))
    return agents


def leader_injection(graph, p):
    """Block-diagonal ``diag(a0_i I_p)`` multiplying the replicated leader state."""
    return np.kron(np.diag(graph.a0), np.eye(int(p)))


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    rank: int
    n: int
    singular_values: np.ndarray

    def __bool__(self):
        return self.observable


def check_observability(F, H):
    """Rank of ``[H; HF; ...; HF^(l-1)]`` against the reference order ``l``."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    l = F.shape[0]
    H = np.asarray(H, dtype=float).reshape(-1, l)
    blocks = [H]
    for _ in range(l - 1):
        blocks.append(blocks[-1] @ F)
    O = np.vstack(blocks)
    rank = matrix_rank(O)
    sv = np.linalg.svd(O, compute_uv=False)
    return ObservabilityReport(observable=rank == l, rank=rank, n=l, singular_values=sv)


@dataclass(frozen=True)
class SolvabilityReport:
    """Existence conditions for the stabilizing Riccati solution."""

    stabilizable: bool
    detectable: bool
    Q_positive_definite: bool
    R_positive_definite: bool

    @property
    def ok(self):
        return (self.stabilizable and self.detectable
                and self.Q_positive_definite and self.R_positive_definite)

    def __bool__(self):
        return self.ok


def _is_pd(M):
    M = np.asarray(M)
    return bool(np.allclose(M, M.T) and np.all(np.linalg.eigvalsh(0.5 * (M + M.T)) > 0))


def check_solvability(plant, cost):
    """Stabilizability of ``(A, B1)``, detectability of ``(A, Q^(1/2) C)``, and
    positive definiteness of ``Q`` and ``R``."""
    if cost.Q.shape[0] != plant.n_output or cost.R.shape[0] != plant.n_input:
        raise DimensionMismatch("cost weights do not match plant dimensions")
    return SolvabilityReport(
        stabilizable=is_stabilizable(plant.A, plant.B1),
        detectable=is_detectable(plant.A, psd_sqrt(cost.Q) @ plant.C),
        Q_positive_definite=_is_pd(cost.Q),
        R_positive_definite=_is_pd(cost.R),
    )
