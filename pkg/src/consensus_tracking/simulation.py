"""Closed-loop stochastic simulation of the tracking law and its baseline.

Two control laws are compared on identical noise realizations:

``kalman``
    ``u = -(Kx x_hat + Kz z_hat + Kw w_hat)`` with estimates from the
    steady-state filter over ``[x; w; z]``.
``classic``
    the same gains fed by static inversion of the raw measurements,
    ``x_hat = C^-1 y`` and ``z_hat = H^-1 y_ref``, and an open-loop copy of
    the disturbance generator started from ``w(0)``.

Plant and exosystems are integrated by Euler-Maruyama.  With the default
``measurement_noise="intensity"`` the measurement noise is sampled white
noise, ``n_k ~ N(0, Qn / dt)``, so ``Qn`` is a continuous-time intensity like
the process noises.  ``measurement_noise="sampled"`` draws ``n_k ~ N(0, Qn)``.

The realized tracking error is ``e = H z - C x`` (true outputs); the
estimated error is ``e_hat = H z_hat - C x_hat``.
"""

from __future__ import annotations

import csv
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import DIVERGENCE_BOUND, rollout
from .errors import NonfiniteState, NotInvertible, RequiresNoiseFree
from .state_estimation import EstimateState, build_augmented, filter_step

__all__ = [
    "MODES",
    "SimConfig",
    "Trace",
    "CostReport",
    "ModeStats",
    "MonteCarloSummary",
    "step_plant",
    "step_exosystems",
    "measure",
    "control_kalman",
    "control_classic",
    "simulate",
    "costate_series",
    "costate_residual",
    "monte_carlo",
    "write_trace_csv",
    "read_trace_csv",
]

MODES = ("kalman", "classic", "noise_free")
TRACE_SERIES = ("x", "xhat", "w", "what", "z", "zhat", "u", "y", "ytilde", "e", "ehat")


@dataclass(frozen=True)
class SimConfig:
    """Run parameters.

    ``mode="noise_free"`` runs the kalman law with every noise source off;
    ``noise=False`` does the same for any mode.  Runs are reproducible from
    ``(seed, stream, dt, T, mode)``; ``stream`` indexes Monte Carlo replicas.
    """

    dt: float = 1e-3
    T: float = 300.0
    seed: int = 0
    mode: str = "kalman"
    record_stride: int = 1
    stream: int = 0
    noise: bool = True
    measurement_noise: str = "intensity"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("horizon T must be at least dt")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be a positive integer")
        if int(self.seed) < 0 or int(self.stream) < 0:
            raise ValueError("seed and stream must be nonnegative")
        if self.measurement_noise not in ("intensity", "sampled"):
            raise ValueError("measurement_noise must be 'intensity' or 'sampled'")
        if self.T / self.dt > np.iinfo(np.int64).max // 2:
            raise ValueError("T/dt too large")

    @property
    def n_steps(self):
        return int(np.floor(self.T / self.dt + 1e-9))

    @property
    def law(self):
        return "classic" if self.mode == "classic" else "kalman"

    @property
    def noisy(self):
        return self.noise and self.mode != "noise_free"


@dataclass(frozen=True)
class CostReport:
    J_realized: float
    J_estimated: float
    terminal_error_norm: float


@dataclass(frozen=True)
class Trace:
    """Recorded closed-loop series, one row per recorded sample."""

    times: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    w: np.ndarray
    what: np.ndarray
    z: np.ndarray
    zhat: np.ndarray
    u: np.ndarray
    y: np.ndarray
    ytilde: np.ndarray
    e: np.ndarray
    ehat: np.ndarray
    J_running: np.ndarray
    mode: str = "kalman"
    noisy: bool = True
    seed: int = 0
    stream: int = 0

    def __len__(self):
        return len(self.times)

    def columns(self):
        """Header names and the stacked ``(n_samples, n_columns)`` array."""
        names = ["t"]
        blocks = [self.times[:, None]]
        for key in TRACE_SERIES:
            arr = getattr(self, key)
            names += [f"{key}{i + 1}" for i in range(arr.shape[1])]
            blocks.append(arr)
        names.append("J_running")
        blocks.append(self.J_running[:, None])
        return names, np.hstack(blocks)


# ---------------------------------------------------------------------------
# single-step operations

def step_plant(x, u, w, plant, dt, noise_draw):
    """Euler-Maruyama step of ``dx = (A x + B1 u + B2 w) dt + Qm^(1/2) dW``.

    Works column-wise, so ``x``, ``u``, ``w`` and ``noise_draw`` may carry a
    trailing batch axis.
    """
    x_next = (x + (plant.A @ x + plant.B1 @ u + plant.B2 @ w) * dt
              + plant.Qm_sqrt @ noise_draw * np.sqrt(dt))
    if not np.all(np.abs(x_next) <= DIVERGENCE_BOUND):
        raise NonfiniteState("plant state diverged")
    return x_next


def step_exosystems(w, z, exo, dt, noise_draws):
    """Euler-Maruyama step of both generators; ``noise_draws = (draw_w, draw_z)``."""
    draw_w, draw_z = noise_draws
    w_next = w + exo.K @ w * dt + exo.Qmw_sqrt @ draw_w * np.sqrt(dt)
    z_next = z + exo.F @ z * dt + exo.Qmz_sqrt @ draw_z * np.sqrt(dt)
    if not (np.all(np.abs(w_next) <= DIVERGENCE_BOUND)
            and np.all(np.abs(z_next) <= DIVERGENCE_BOUND)):
        raise NonfiniteState("exosystem state diverged")
    return w_next, z_next


def measure(x, z, plant, exo, noise_draws):
    """``(C x + Qn^(1/2) d_y, H z + Qnz^(1/2) d_ref)`` for draws ``(d_y, d_ref)``."""
    draw_y, draw_ref = noise_draws
    y = plant.C @ x + plant.Qn_sqrt @ draw_y
    y_ref = exo.H @ z + exo.Qnz_sqrt @ draw_ref
    return y, y_ref


def _split_estimate(xi_hat, gains):
    nx, nw = gains.Kx.shape[1], gains.Kw.shape[1]
    return xi_hat[:nx], xi_hat[nx:nx + nw], xi_hat[nx + nw:]


def control_kalman(xi_hat, gains):
    """``u = -(Kx x_hat + Kz z_hat + Kw w_hat)`` with ``xi_hat = [x_hat; w_hat; z_hat]``."""
    x_hat, w_hat, z_hat = _split_estimate(np.asarray(xi_hat, dtype=float), gains)
    return -(gains.Kx @ x_hat + gains.Kz @ z_hat + gains.Kw @ w_hat)


def _inverse(M, name):
    M = np.atleast_2d(M)
    if M.shape[0] != M.shape[1] or np.linalg.cond(M) > 1.0 / np.finfo(float).eps:
        raise NotInvertible(f"{name} must be square and invertible for the classic law")
    return np.linalg.inv(M)


def control_classic(y, y_ref, w_openloop, gains, plant, exo):
    """``u = -(Kx C^-1 y + Kz H^-1 y_ref + Kw w_openloop)``.

    Raises :class:`NotInvertible` unless ``C`` and ``H`` are square and
    invertible.
    """
    x_inv = _inverse(plant.C, "C") @ y
    z_inv = _inverse(exo.H, "H") @ y_ref
    return -(gains.Kx @ x_inv + gains.Kz @ z_inv + gains.Kw @ np.asarray(w_openloop))


# ---------------------------------------------------------------------------
# closed loop

class _ClosedLoop:
    """One closed-loop step and one observation as functions of ``(s, eta)``.

    ``s = [x, w, z, aux]`` where ``aux`` is the filter estimate
    ``[x_hat; w_hat; z_hat]`` (kalman law) or the open-loop disturbance copy
    (classic law).  ``eta = [eta_x, eta_w, eta_z, eta_y, eta_ref]`` are
    standard normal draws.  Both maps are linear, so their matrices can be
    read off column by column.
    """

    def __init__(self, plant, exo, gains, estimator, config, estimate0=None):
        self.plant, self.exo, self.gains, self.estimator = plant, exo, gains, estimator
        self.model = build_augmented(plant, exo)
        self.dt = config.dt
        self.law = config.law
        intensity = config.measurement_noise == "intensity"
        self.meas_scale = 1.0 / np.sqrt(config.dt) if intensity else 1.0
        nx, nw, nz, ny = plant.n_state, exo.n_dist, exo.n_ref, plant.n_output
        self.sizes = (nx, nw, nz, ny, plant.n_input)
        if self.law == "classic":
            self.C_inv = _inverse(plant.C, "C")
            self.H_inv = _inverse(exo.H, "H")
            aux0 = exo.w0
        elif estimate0 is None:
            aux0 = np.concatenate([plant.x0, exo.w0, exo.z0])
        else:
            aux0 = np.asarray(estimate0, dtype=float)
            if aux0.shape != (nx + nw + nz,):
                raise ValueError(f"estimate0 must have length {nx + nw + nz}")
        self.s0 = np.concatenate([plant.x0, exo.w0, exo.z0, aux0])
        self.n_noise = nx + nw + nz + 2 * ny

    def _unpack(self, s, eta):
        nx, nw, nz, ny, _ = self.sizes
        o = np.cumsum([0, nx, nw, nz])
        x, w, z, aux = s[:o[1]], s[o[1]:o[2]], s[o[2]:o[3]], s[o[3]:]
        n = np.cumsum([0, nx, nw, nz, ny, ny])
        draws = [eta[n[i]:n[i + 1]] for i in range(5)]
        return x, w, z, aux, draws

    def _outputs(self, x, z, draws):
        return measure(x, z, self.plant, self.exo,
                       (self.meas_scale * draws[3], self.meas_scale * draws[4]))

    def _estimates(self, aux, y, y_ref):
        if self.law == "classic":
            return self.C_inv @ y, aux, self.H_inv @ y_ref
        return self.model.split(aux)

    def _control(self, aux, y, y_ref):
        if self.law == "classic":
            return control_classic(y, y_ref, aux, self.gains, self.plant, self.exo)
        return control_kalman(aux, self.gains)

    def step(self, s, eta):
        x, w, z, aux, draws = self._unpack(s, eta)
        y, y_ref = self._outputs(x, z, draws)
        u = self._control(aux, y, y_ref)
        x_next = step_plant(x, u, w, self.plant, self.dt, draws[0])
        w_next, z_next = step_exosystems(w, z, self.exo, self.dt, (draws[1], draws[2]))
        if self.law == "classic":
            aux_next = aux + self.exo.K @ aux * self.dt
        else:
            est = filter_step(EstimateState(aux), self.estimator, self.model,
                              u, np.concatenate([y, y_ref]), self.dt)
            aux_next = est.xi_hat
        return np.concatenate([x_next, w_next, z_next, aux_next])

    def observe(self, s, eta):
        """Record vector in :data:`TRACE_SERIES` order."""
        x, w, z, aux, draws = self._unpack(s, eta)
        y, y_ref = self._outputs(x, z, draws)
        u = self._control(aux, y, y_ref)
        x_hat, w_hat, z_hat = self._estimates(aux, y, y_ref)
        C, H = self.plant.C, self.exo.H
        e = H @ z - C @ x
        e_hat = H @ z_hat - C @ x_hat
        return np.concatenate([x, x_hat, w, w_hat, z, z_hat, u, y, y_ref, e, e_hat])

    def record_slices(self):
        nx, nw, nz, ny, nu = self.sizes
        widths = dict(x=nx, xhat=nx, w=nw, what=nw, z=nz, zhat=nz, u=nu,
                      y=ny, ytilde=ny, e=ny, ehat=ny)
        out, o = {}, 0
        for key in TRACE_SERIES:
            out[key] = slice(o, o + widths[key])
            o += widths[key]
        return out

    def linear_maps(self):
        """``(M, G, Os, On)`` with ``step = M s + G eta`` and ``observe = Os s + On eta``."""
        d, m = self.s0.size, self.n_noise
        zs, ze = np.zeros(d), np.zeros(m)
        eye_d, eye_m = np.eye(d), np.eye(m)
        M = np.column_stack([self.step(eye_d[j], ze) for j in range(d)])
        G = np.column_stack([self.step(zs, eye_m[j]) for j in range(m)])
        Os = np.column_stack([self.observe(eye_d[j], ze) for j in range(d)])
        On = np.column_stack([self.observe(zs, eye_m[j]) for j in range(m)])
        return M, G, Os, On


def _rollout_stepwise(loop, eta, Cidx, Wr, We, dt, n, stride, noisy):
    """Pure-Python rollout calling the step operations directly; same outputs as
    the compiled kernel up to rounding.  Meant for short verification runs."""
    zero_eta = np.zeros(loop.n_noise)
    s = loop.s0.copy()
    S, Jr_rec, Je_rec = [], [], []
    jr = je = fr_prev = fe_prev = 0.0
    c = None
    for k in range(n + 1):
        eta_k = eta[k] if noisy else zero_eta
        c = loop.observe(s, eta_k)[Cidx]
        fr, fe = c @ Wr @ c, c @ We @ c
        if k > 0:
            jr += 0.5 * dt * (fr + fr_prev)
            je += 0.5 * dt * (fe + fe_prev)
        fr_prev, fe_prev = fr, fe
        if k % stride == 0:
            S.append(s.copy())
            Jr_rec.append(jr)
            Je_rec.append(je)
        if k == n:
            break
        s = loop.step(s, eta_k)
    return np.array(S), np.array(Jr_rec), np.array(Je_rec), jr, je, c, -1


def simulate(plant, exo, gains, estimator, config, cost, estimate0=None, engine="compiled"):
    """Roll out the closed loop and return ``(Trace, CostReport)``.

    Parameters
    ----------
    plant, exo : PlantModel, ExosystemModel
    gains : GainSet
    estimator : EstimatorGain
        Steady-state filter gain (ignored by the classic law).
    config : SimConfig
    cost : CostSpec
        Weights for the realized and estimated quadratic costs.
    estimate0 : array_like, optional
        Initial filter estimate; defaults to the true initial ``[x0; w0; z0]``.
    engine : {"compiled", "stepwise"}
        ``stepwise`` calls the single-step operations in a Python loop.

    The costs are trapezoidal integrals over ``[0, n_steps * dt]`` evaluated
    at every step regardless of ``record_stride``.

    Raises
    ------
    NonfiniteState
        Any state entry leaves ``[-1e12, 1e12]``.
    """
    loop = _ClosedLoop(plant, exo, gains, estimator, config, estimate0)
    n, stride, dt = config.n_steps, int(config.record_stride), config.dt
    noisy = config.noisy
    m = loop.n_noise
    if noisy:
        rng = np.random.default_rng([int(config.seed), int(config.stream)])
        eta = rng.standard_normal((n + 1, m))
    else:
        eta = np.zeros((0, m))

    # running costs see c = [e, e_hat, u]
    sl = loop.record_slices()
    Cidx = np.r_[np.arange(sl["e"].start, sl["e"].stop),
                 np.arange(sl["ehat"].start, sl["ehat"].stop),
                 np.arange(sl["u"].start, sl["u"].stop)]
    ny, nu = plant.n_output, plant.n_input
    Wr = np.zeros((2 * ny + nu,) * 2)
    We = np.zeros_like(Wr)
    Wr[:ny, :ny] = cost.Q
    We[ny:2 * ny, ny:2 * ny] = cost.Q
    Wr[2 * ny:, 2 * ny:] = We[2 * ny:, 2 * ny:] = cost.R

    M, G, Os, On = loop.linear_maps()
    if engine == "compiled":
        S, Jr_rec, Je_rec, jr, je, c_last, diverged_at = rollout(
            M, G, eta, loop.s0, np.ascontiguousarray(Os[Cidx]),
            np.ascontiguousarray(On[Cidx]), Wr, We, dt, n, stride, noisy)
    elif engine == "stepwise":
        S, Jr_rec, Je_rec, jr, je, c_last, diverged_at = _rollout_stepwise(
            loop, eta, Cidx, Wr, We, dt, n, stride, noisy)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if diverged_at >= 0:
        raise NonfiniteState(f"closed loop diverged at t = {diverged_at * dt:.6g} s")

    rec_idx = np.arange(0, n + 1, stride)
    R = S @ Os.T
    if noisy:
        R += eta[rec_idx] @ On.T
    series = {key: np.ascontiguousarray(R[:, sl[key]]) for key in TRACE_SERIES}
    trace = Trace(times=rec_idx * dt, J_running=Jr_rec, mode=config.mode, noisy=noisy,
                  seed=int(config.seed), stream=int(config.stream), **series)
    report = CostReport(J_realized=float(jr), J_estimated=float(je),
                        terminal_error_norm=float(np.linalg.norm(c_last[:ny])))
    return trace, report


# ---------------------------------------------------------------------------
# costate verification

def costate_series(trace, gains):
    """``lambda(t) = P x_hat + P1 z_hat + P2 w_hat`` for every recorded sample."""
    return trace.xhat @ gains.P.T + trace.zhat @ gains.P1.T + trace.what @ gains.P2.T


def costate_residual(trace, gains, plant, exo, cost):
    """Largest norm of ``dlambda/dt + C'QC x_hat - C'QH z_hat + A' lambda`` along
    a noise-free trace, with ``dlambda/dt`` from central differences."""
    if trace.noisy:
        raise RequiresNoiseFree("costate residual needs a noise-free trace")
    if len(trace) < 3:
        return 0.0
    lam = costate_series(trace, gains)
    t = trace.times
    lam_dot = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])[:, None]
    CtQC = plant.C.T @ cost.Q @ plant.C
    CtQH = plant.C.T @ cost.Q @ exo.H
    rhs = trace.xhat @ CtQC.T - trace.zhat @ CtQH.T + lam @ plant.A
    return float(np.max(np.linalg.norm(lam_dot + rhs[1:-1], axis=1)))


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass(frozen=True)
class ModeStats:
    J_realized: np.ndarray
    J_estimated: np.ndarray

    @property
    def mean(self):
        return float(np.mean(self.J_realized))

    @property
    def std(self):
        if len(self.J_realized) < 2:
            return 0.0
        return float(np.std(self.J_realized, ddof=1))


@dataclass(frozen=True)
class MonteCarloSummary:
    n_seeds: int
    seed: int
    stats: dict = field(default_factory=dict)

    def __getitem__(self, mode):
        return self.stats[mode]


def _mc_job(args):
    plant, exo, gains, estimator, cfg, cost = args
    _, rep = simulate(plant, exo, gains, estimator, cfg, cost)
    return rep.J_realized, rep.J_estimated


def monte_carlo(plant, exo, gains, estimator, config, cost, n_seeds,
                modes=("kalman", "classic"), workers=1):
    """Realized and estimated costs per mode over ``n_seeds`` paired replicas.

    Replica ``i`` draws its noise from the stream seeded by
    ``(config.seed, i)``, shared by all modes so the comparison is paired.
    Replica 0 is the run :func:`simulate` performs for ``stream=0``.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    n = config.n_steps
    jobs = [(mode, i) for mode in modes for i in range(n_seeds)]
    args = [(plant, exo, gains, estimator,
             replace(config, mode=mode, stream=i, record_stride=max(1, n)), cost)
            for mode, i in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mc_job, args))
    else:
        results = [_mc_job(a) for a in args]
    stats = {}
    for mode in modes:
        rows = [res for (md, _), res in zip(jobs, results) if md == mode]
        stats[mode] = ModeStats(J_realized=np.array([r[0] for r in rows]),
                                J_estimated=np.array([r[1] for r in rows]))
    return MonteCarloSummary(n_seeds=n_seeds, seed=int(config.seed), stats=stats)


# ---------------------------------------------------------------------------
# CSV

def write_trace_csv(path, trace):
    """Write a trace with a header row and 9 significant digits per value."""
    names, data = trace.columns()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, data, fmt="%.9g", delimiter=",")


_COLUMN = re.compile(r"^([A-Za-z_]+?)(\d+)$")


def read_trace_csv(path):
    """Inverse of :func:`write_trace_csv` (metadata fields take defaults)."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = {}
    for idx, name in enumerate(header):
        match = _COLUMN.match(name)
        if match and match.group(1) in TRACE_SERIES:
            cols.setdefault(match.group(1), []).append(idx)
    series = {key: data[:, cols.get(key, [])] for key in TRACE_SERIES}
    return Trace(times=data[:, header.index("t")],
                 J_running=data[:, header.index("J_running")], **series)
