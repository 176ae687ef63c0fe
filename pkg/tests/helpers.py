"""Shared model builders for the test suite."""

import numpy as np

from consensus_tracking import CostSpec, ExosystemModel, PlantModel
from consensus_tracking.gain_synthesis import solve_care

SQRT2 = np.sqrt(2.0)


def scalar_models(a=-1.0, b1=1.0, b2=1.0, c=1.0, k=-1.0, f=-1.0, h=1.0,
                  q=1.0, r=1.0, noise=1.0, x0=0.0, w0=0.0, z0=0.0):
    """One-dimensional plant, exosystems and cost."""
    plant = PlantModel(A=[[a]], B1=[[b1]], B2=[[b2]], C=[[c]], x0=[x0],
                       Qm=noise, Qn=noise)
    exo = ExosystemModel(K=[[k]], w0=[w0], Qmw=noise, F=[[f]], H=[[h]], z0=[z0],
                         Qmz=noise, Qnz=noise)
    return plant, exo, CostSpec(Q=[[q]], R=[[r]])


def random_feedforward_instance(rng, max_cond=1e4):
    """Random stabilizable plant with its closed loop ``A - SP`` and a random
    exosystem matrix, retried until the Kronecker operator is well conditioned.

    The forward error of any backward-stable solve is about
    ``cond * eps * |X|``; ``max_cond = 1e4`` keeps that near 1e-11 for the
    solution sizes drawn here, so two solvers can be compared at 1e-10.

    Returns ``(A, S, P, N, rhs)``.
    """
    while True:
        n = int(rng.integers(1, 6))
        l = int(rng.integers(1, 6))
        A = rng.standard_normal((n, n))
        B1 = rng.standard_normal((n, int(rng.integers(1, n + 1))))
        C = rng.standard_normal((int(rng.integers(1, n + 1)), n))
        S = B1 @ B1.T
        Qc = C.T @ C + 1e-2 * np.eye(n)
        try:
            P = solve_care(A, S, Qc)
        except ArithmeticError:
            continue
        N = rng.standard_normal((l, l))
        Acl = A - S @ P
        op = np.kron(np.eye(l), Acl.T) + np.kron(N.T, np.eye(n))
        if np.linalg.cond(op) > max_cond:
            continue
        rhs = rng.standard_normal((n, l))
        return A, S, P, N, rhs
