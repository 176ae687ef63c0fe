"""Steady-state Kalman-Bucy filter over the augmented state ``xi = [x; w; z]``.

The plant, disturbance generator and reference generator are stacked into

    d xi = (Abar xi + Bbar u) dt + noise,     [y; y_ref] = Cbar xi + noise

with ``Abar = [[A, B2, 0], [0, K, 0], [0, 0, F]]`` and
``Cbar = [[C, 0, 0], [0, 0, H]]``.  The filter gain comes from the dual
(filter) Riccati equation, and the estimate is propagated by explicit Euler
at the simulation step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionMismatch, NonfiniteInput, NotDetectable
from .gain_synthesis import care_residual, solve_care
from .system_model import is_detectable, is_hurwitz, is_stabilizable, psd_sqrt

__all__ = [
    "AugmentedModel",
    "EstimatorGain",
    "EstimateState",
    "build_augmented",
    "solve_filter_gain",
    "filter_step",
]


def _ro(a):
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AugmentedModel:
    Abar: np.ndarray
    Bbar: np.ndarray
    Cbar: np.ndarray
    Qbar: np.ndarray
    Rbar: np.ndarray
    # (n_state, n_dist, n_ref): sizes of the x, w and z blocks in that order
    blocks: tuple

    def __post_init__(self):
        for name in ("Abar", "Bbar", "Cbar", "Qbar", "Rbar"):
            object.__setattr__(self, name, _ro(getattr(self, name)))

    @property
    def n(self):
        return self.Abar.shape[0]

    def split(self, xi):
        """Split a stacked vector into ``(x, w, z)``."""
        nx, nw, _ = self.blocks
        xi = np.asarray(xi)
        return xi[:nx], xi[nx:nx + nw], xi[nx + nw:]


@dataclass(frozen=True)
class EstimatorGain:
    Sigma: np.ndarray
    L: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "Sigma", _ro(self.Sigma))
        object.__setattr__(self, "L", _ro(self.L))


@dataclass(frozen=True)
class EstimateState:
    xi_hat: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        xi = _ro(np.ravel(self.xi_hat))
        if not np.all(np.isfinite(xi)):
            raise NonfiniteInput("estimate has non-finite entries")
        object.__setattr__(self, "xi_hat", xi)


def build_augmented(plant, exo):
    """Stack plant and exosystems into one :class:`AugmentedModel`."""
    nx, nu, nw, ny = plant.n_state, plant.n_input, plant.n_dist, plant.n_output
    nz = exo.n_ref
    if exo.n_dist != nw:
        raise DimensionMismatch(f"B2 has {nw} columns but K is {exo.n_dist}x{exo.n_dist}")
    if exo.n_output != ny:
        raise DimensionMismatch("plant and reference outputs differ in size")
    Abar = np.block([
        [plant.A, plant.B2, np.zeros((nx, nz))],
        [np.zeros((nw, nx)), exo.K, np.zeros((nw, nz))],
        [np.zeros((nz, nx + nw)), exo.F],
    ])
    Bbar = np.vstack([plant.B1, np.zeros((nw + nz, nu))])
    Cbar = np.block([
        [plant.C, np.zeros((ny, nw + nz))],
        [np.zeros((ny, nx + nw)), exo.H],
    ])
    return AugmentedModel(
        Abar=Abar, Bbar=Bbar, Cbar=Cbar,
        Qbar=la.block_diag(plant.Qm, exo.Qmw, exo.Qmz),
        Rbar=la.block_diag(plant.Qn, exo.Qnz),
        blocks=(nx, nw, nz),
    )


def _weak_block_warning(model, min_margin=1e-6):
    # PBH margin of the disturbance block eigenvalues; tiny means w is barely seen in y
    nx, nw, _ = model.blocks
    if nw == 0:
        return
    K = model.Abar[nx:nx + nw, nx:nx + nw]
    n = model.n
    scale = max(1.0, np.linalg.norm(model.Abar, 2), np.linalg.norm(model.Cbar, 2))
    for lam in np.linalg.eigvals(K):
        pbh = np.vstack([lam * np.eye(n) - model.Abar, model.Cbar])
        if np.linalg.svd(pbh, compute_uv=False)[-1] < min_margin * scale:
            warnings.warn("disturbance block is weakly observable from the measurements",
                          RuntimeWarning, stacklevel=3)
            return


def solve_filter_gain(model):
    """Steady-state covariance and gain from the filter Riccati equation

        Abar S + S Abar' - S Cbar' Rbar^-1 Cbar S + Qbar = 0,

    solved as the dual control problem ``solve_care(Abar', Cbar' Rbar^-1 Cbar, Qbar)``.
    Returns ``L = Sigma Cbar' Rbar^-1``.

    Raises
    ------
    NotDetectable
        ``(Abar, Cbar)`` has an unobservable mode with ``Re >= 0``.
    """
    Abar, Cbar, Qbar, Rbar = model.Abar, model.Cbar, model.Qbar, model.Rbar
    if not is_detectable(Abar, Cbar):
        raise NotDetectable("(Abar, Cbar) is not detectable")
    if not is_stabilizable(Abar, psd_sqrt(Qbar)):
        warnings.warn("(Abar, Qbar^(1/2)) is not stabilizable; filter may be marginal",
                      RuntimeWarning, stacklevel=2)
    _weak_block_warning(model)
    Sdual = Cbar.T @ np.linalg.solve(Rbar, Cbar)
    Sdual = 0.5 * (Sdual + Sdual.T)
    Sigma = solve_care(Abar.T, Sdual, Qbar, check=False)
    L = Sigma @ Cbar.T @ np.linalg.inv(Rbar)
    if not is_hurwitz(Abar - L @ Cbar):
        raise NotDetectable("filter error dynamics are not stable")
    return EstimatorGain(Sigma=Sigma, L=L, residual=care_residual(Abar.T, Sdual, Qbar, Sigma))


def filter_step(state, gain, model, u, y_meas, dt):
    """One explicit Euler step of ``dxi/dt = Abar xi + Bbar u + L (y_meas - Cbar xi)``.

    ``y_meas`` stacks the plant measurement and the reference measurement.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    y_meas = np.asarray(y_meas, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y_meas))):
        raise NonfiniteInput("control or measurement has non-finite entries")
    xi = state.xi_hat
    innovation = y_meas - model.Cbar @ xi
    dxi = model.Abar @ xi + model.Bbar @ u + gain.L @ innovation
    return EstimateState(xi_hat=xi + dt * dxi, t=state.t + dt)
