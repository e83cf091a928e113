"""Replica generation by ramping the pump through the superradiant threshold.

Two engines produce spin configurations:

``semiclassical``
    Mean-field Bloch equations for the unit vectors ``m_i = S_i / S`` of every
    ensemble, integrated through an exponential pump ramp and a quench. The
    transverse field splits the levels by ``omega_z``; the cavity couples the
    ``x`` components through ``J``. A Landau-Lifshitz relaxation whose rate
    follows the collapse coefficients pulls each vector toward its local
    field minimum.

``descent``
    Projected gradient flow of ``E(s) = -sum_{i != j} J_ij s_i s_j`` on the box
    ``[-1, 1]^n``. Box minima of this multilinear energy sit on corners and
    coincide with single-flip-stable Ising states.

Time in the integrator is measured in units of ``1 / omega_z``.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .coupling import CouplingMatrix, PhysicalParams, critical_pump
from .errors import ConvergenceError, IntegratorError

DEFAULT_REPLICAS = {16: 200, 12: 150, 8: 100}
ENGINES = ("semiclassical", "descent")


def default_replicas(n: int) -> int:
    return DEFAULT_REPLICAS.get(n, 200)


@dataclass(frozen=True)
class RampSchedule:
    """Pump schedule in units of the critical power.

    ``t_R`` and ``t_q`` are in seconds. ``tau_fraction`` sets the exponential
    time constant ``tau = tau_fraction * t_R``; ``numpy.inf`` gives a linear ramp.
    """

    t_R: float = 5e-3
    t_q: float = 300e-6
    ramp_target: float = 4.0
    quench_target: float = 5.0
    tau_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.t_R > 0 or not self.t_q >= 0:
            raise ValueError("t_R must be positive and t_q non-negative")
        if self.ramp_target < 1 or self.quench_target < 1:
            raise ValueError("targets must be at least 1")
        if not self.tau_fraction > 0:
            raise ValueError("tau_fraction must be positive")

    @property
    def duration(self) -> float:
        return self.t_R + self.t_q

    def ramp_fraction(self, t):
        """Shape ``(e^{t/tau} - 1) / (e^{t_R/tau} - 1)`` of the ramp, in [0, 1]."""
        t = np.asarray(t, dtype=float)
        if np.isinf(self.tau_fraction):
            return t / self.t_R
        tau = self.tau_fraction * self.t_R
        return np.expm1(t / tau) / np.expm1(self.t_R / tau)

    def __call__(self, t):
        """``Omega^2(t) / Omega_c^2``."""
        t = np.asarray(t, dtype=float)
        ramp = self.ramp_target * self.ramp_fraction(np.clip(t, 0.0, self.t_R))
        out = np.where(t <= self.t_R, ramp, self.quench_target)
        out = np.where((t < 0) | (t > self.duration), 0.0, out)
        return out[()] if out.ndim == 0 else out

    def as_dict(self) -> dict:
        return {"t_R": self.t_R, "t_q": self.t_q, "ramp_target": self.ramp_target,
                "quench_target": self.quench_target, "tau_fraction": self.tau_fraction}


def ramp_schedule(t_R: float, t_q: float, targets: tuple[float, float] = (4.0, 5.0),
                  tau_fraction: float = 1.0 / 3.0) -> RampSchedule:
    """Build a :class:`RampSchedule` (durations in seconds)."""
    return RampSchedule(t_R, t_q, targets[0], targets[1], tau_fraction)


@dataclass(frozen=True)
class SpinConfiguration:
    s: np.ndarray
    raw_amplitudes: np.ndarray
    seed: int
    t_R: float

    @property
    def n(self) -> int:
        return len(self.s)


@dataclass
class ReplicaEnsemble:
    """Stack of unit-norm replica configurations sharing one coupling matrix.

    ``spins`` has shape ``(n_reps, n)``.
    """

    spins: np.ndarray
    seeds: np.ndarray
    J_ref: str = ""
    t_R: float = float("nan")
    raw_amplitudes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.spins = np.atleast_2d(np.asarray(self.spins, dtype=float))
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        if len(self.seeds) != len(self.spins):
            raise ValueError("one seed per replica required")

    @property
    def n_reps(self) -> int:
        return self.spins.shape[0]

    @property
    def n(self) -> int:
        return self.spins.shape[1]

    @property
    def configs(self) -> list[SpinConfiguration]:
        raw = self.spins if self.raw_amplitudes is None else self.raw_amplitudes
        return [SpinConfiguration(self.spins[k], raw[k], int(self.seeds[k]), self.t_R)
                for k in range(self.n_reps)]

    @classmethod
    def from_configs(cls, configs, J_ref: str = "") -> "ReplicaEnsemble":
        configs = list(configs)
        if len({c.n for c in configs}) > 1:
            raise ValueError("configurations differ in size")
        return cls(np.array([c.s for c in configs]), np.array([c.seed for c in configs]), J_ref,
                   configs[0].t_R if configs else float("nan"),
                   np.array([c.raw_amplitudes for c in configs]))


def replica_rng(seed: int) -> np.random.Generator:
    """Counter-based stream owned by one replica."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def _normalize(x: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ConvergenceError("spin amplitudes vanished; no symmetry breaking occurred")
    return x / norm


# ---------------------------------------------------------------------------
# semiclassical engine

# Dormand-Prince 5(4) tableau
_A = np.zeros((7, 7))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _A[6] - _B4  # 5th-order weights equal the last row (FSAL)

_OK, _BUDGET, _UNDERFLOW = 0, 1, 2


@dataclass(frozen=True)
class _Drive:
    """Dimensionless coefficients of the Bloch equations."""

    lam_per_ratio: float  # Lambda / omega_z per unit Omega^2/Omega_c^2
    gamma_per_ratio: float  # relaxation rate / omega_z per unit Omega^2/Omega_c^2


def _drive(Jm: CouplingMatrix, phys: PhysicalParams, damping_scale: float) -> _Drive:
    oc2 = critical_pump(Jm, phys)
    lam = phys.g0 ** 2 * oc2 * phys.S / (phys.Delta_A ** 2 * abs(phys.Delta_C)) / phys.omega_z
    eig = np.clip(Jm.eigvals, 0.0, None)
    # S <c_i^2> with c_i the collapse coefficients at Omega^2 = Omega_c^2
    c2 = eig * phys.kappa * phys.g0 ** 2 * oc2 / (4 * phys.Delta_C ** 2 * phys.Delta_A ** 2)
    gamma = damping_scale * phys.S * float(np.mean(c2)) / phys.omega_z
    return _Drive(float(lam), float(gamma))


@njit(cache=True, nogil=True)
def _ratio(t, quench, target, tau, t_R):
    if quench:
        return target
    if t <= 0.0:
        return 0.0
    if t >= t_R:
        t = t_R
    if np.isinf(tau):
        return target * t / t_R
    return target * np.expm1(t / tau) / np.expm1(t_R / tau)


@njit(cache=True, nogil=True)
def _bloch(m, J, lam, gam, out):
    """Right-hand side for one replica; ``m`` and ``out`` have shape (3, n).

    Precession ``B x m`` with ``B = (-2 lam J m_x, 0, 1)`` plus relaxation
    ``gam * m x (m x B)`` toward the local energy minimum.
    """
    n = m.shape[1]
    for i in range(n):
        h = 0.0
        for j in range(n):
            h += J[i, j] * m[0, j]
        bx = -2.0 * lam * h
        mx, my, mz = m[0, i], m[1, i], m[2, i]
        mb = mx * bx + mz
        out[0, i] = -my + gam * (mx * mb - bx)
        out[1, i] = mx - bx * mz + gam * (my * mb)
        out[2, i] = bx * my + gam * (mz * mb - 1.0)


@njit(cache=True, nogil=True)
def _dopri(m, J, t0, t1, quench, target, tau, t_R, lam_c, gam_c, rtol, atol, max_steps,
           A, C, E):
    """Adaptive Dormand-Prince integration of one replica in place.

    Steps are rejected when the scaled error exceeds one or any unit vector's
    norm drifts by more than 1e-9; accepted states are renormalized.
    """
    n = m.shape[1]
    k = np.zeros((7, 3, n))
    ys = np.empty((3, n))
    t = t0
    dt = min(1e-2, t1 - t0)
    steps = 0
    while t < t1:
        steps += 1
        if steps > max_steps:
            return _BUDGET
        h = min(dt, t1 - t)
        for s in range(7):
            for c in range(3):
                for i in range(n):
                    acc = m[c, i]
                    for q in range(s):
                        acc += h * A[s, q] * k[q, c, i]
                    ys[c, i] = acc
            r = _ratio(t + C[s] * h, quench, target, tau, t_R)
            _bloch(ys, J, lam_c * r, gam_c * r, k[s])
        enorm = 0.0
        drift = 0.0
        for i in range(n):
            nrm = 0.0
            for c in range(3):
                err = 0.0
                for s in range(7):
                    err += h * E[s] * k[s, c, i]
                sc = atol + rtol * max(abs(m[c, i]), abs(ys[c, i]))
                enorm = max(enorm, abs(err) / sc)
                nrm += ys[c, i] * ys[c, i]
            drift = max(drift, abs(np.sqrt(nrm) - 1.0))
        ok = enorm <= 1.0 and drift <= 1e-9
        if ok:
            for i in range(n):
                nrm = np.sqrt(ys[0, i] ** 2 + ys[1, i] ** 2 + ys[2, i] ** 2)
                for c in range(3):
                    m[c, i] = ys[c, i] / nrm
            t = t1 if h >= t1 - t else t + h
        if enorm > 0.0:
            fac = 0.9 * enorm ** -0.2
        else:
            fac = 5.0
        fac = min(5.0, max(0.2, fac))
        if not ok:
            fac = min(fac, 0.5)
        dt = h * fac
        if dt < 1e-14:
            return _UNDERFLOW
    return _OK


def _semiclassical_batch(J, drive: _Drive, schedule: RampSchedule, xi, omega_z,
                         rtol=1e-8, atol=1e-12, max_steps=10_000_000):
    """Integrate a batch of initial tilts ``xi`` (reps, n); return unit vectors (reps, 3, n)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    J = np.ascontiguousarray(J, dtype=float)
    m = np.zeros((xi.shape[0], 3, xi.shape[1]))
    m[:, 0] = xi
    m[:, 2] = -1.0
    m /= np.sqrt(np.sum(m * m, axis=1, keepdims=True))
    tR = schedule.t_R * omega_z
    tq = schedule.t_q * omega_z
    tau = schedule.tau_fraction * tR
    segments = [(0.0, tR, False, schedule.ramp_target)]
    if tq > 0:
        segments.append((tR, tR + tq, True, schedule.quench_target))
    for r in range(m.shape[0]):
        for t0, t1, quench, target in segments:
            status = _dopri(m[r], J, t0, t1, quench, target, tau, tR, drive.lam_per_ratio,
                            drive.gamma_per_ratio, rtol, atol, max_steps, _A, _C, _E)
            if status == _BUDGET:
                raise IntegratorError(f"replica {r}: step budget {max_steps} exhausted")
            if status == _UNDERFLOW:
                raise IntegratorError(f"replica {r}: step size underflow")
    return m


# ---------------------------------------------------------------------------
# descent engine


def _offdiag(J: np.ndarray) -> np.ndarray:
    J0 = np.array(J, dtype=float)
    np.fill_diagonal(J0, 0.0)
    return J0


def projected_gradient(J: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Projected gradient of ``E = -s.J0.s`` on the box; zero at box minima and saddles."""
    g = -2.0 * (s @ _offdiag(J).T)
    g = np.where((s >= 1.0) & (g < 0), 0.0, g)
    g = np.where((s <= -1.0) & (g > 0), 0.0, g)
    return g


def _descend_batch(J: np.ndarray, s0: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000):
    J0 = _offdiag(J)
    norm = np.linalg.norm(J0, 2)
    step = 0.25 / norm if norm > 0 else 1.0
    s = np.clip(np.atleast_2d(np.asarray(s0, dtype=float)), -1.0, 1.0)
    for _ in range(max_iter):
        h = 2.0 * (s @ J0.T)
        s_new = np.clip(s + step * h, -1.0, 1.0)
        g = projected_gradient(J, s_new)
        s = s_new
        if np.all(np.max(np.abs(g), axis=1) < tol):
            return s
    raise ConvergenceError(f"descent did not reach a fixed point in {max_iter} iterations")


# ---------------------------------------------------------------------------
# public drivers


def _initial_noise(n: int, seed: int, epsilon: float, engine: str, descent_init: str) -> np.ndarray:
    rng = replica_rng(seed)
    if engine == "descent" and descent_init == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    return rng.normal(0.0, epsilon, n)


def _run(Jm: CouplingMatrix, phys: PhysicalParams, schedule: RampSchedule, engine: str,
         xi: np.ndarray, damping_scale: float, rtol: float):
    if engine == "semiclassical":
        drive = _drive(Jm, phys, damping_scale)
        m = _semiclassical_batch(Jm.J, drive, schedule, xi, phys.omega_z, rtol=rtol)
        return m[:, 0]
    if engine == "descent":
        return _descend_batch(Jm.J, xi)
    raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")


def evolve_replica(Jm: CouplingMatrix, phys: PhysicalParams, schedule: RampSchedule,
                   engine: str = "semiclassical", seed: int = 0, epsilon: float = 1e-3,
                   xi: np.ndarray | None = None, damping_scale: float = 1.0,
                   descent_init: str = "uniform", rtol: float = 1e-8) -> SpinConfiguration:
    """Evolve one replica and return its normalized ``x`` projections.

    Parameters
    ----------
    engine : {"semiclassical", "descent"}
    seed : int
        Seeds the replica's own noise stream.
    epsilon : float
        Standard deviation of the initial transverse tilt.
    xi : ndarray, optional
        Explicit initial noise vector, overriding the seeded draw.
    descent_init : {"uniform", "normal"}
        Descent start point: uniform in the box or the small tilt ``xi``.
    """
    if xi is None:
        xi = _initial_noise(Jm.n, seed, epsilon, engine, descent_init)
    raw = _run(Jm, phys, schedule, engine, np.asarray(xi, dtype=float)[None, :], damping_scale, rtol)[0]
    return SpinConfiguration(_normalize(raw), raw, int(seed), schedule.t_R)


def generate_ensemble(Jm: CouplingMatrix, phys: PhysicalParams, schedule: RampSchedule,
                      n_reps: int | None = None, base_seed: int = 0,
                      engine: str = "semiclassical", epsilon: float = 1e-3,
                      damping_scale: float = 1.0, descent_init: str = "uniform",
                      threads: int = 1, rtol: float = 1e-8) -> ReplicaEnsemble:
    """Run ``n_reps`` replicas with seeds ``base_seed + k``.

    Replicas are split into ``threads`` contiguous batches. Every replica
    keeps its own step control, so results do not depend on the batching.
    """
    n_reps = default_replicas(Jm.n) if n_reps is None else int(n_reps)
    if n_reps < 2:
        raise ValueError("an ensemble needs at least two replicas")
    seeds = base_seed + np.arange(n_reps)
    xi = np.array([_initial_noise(Jm.n, int(s), epsilon, engine, descent_init) for s in seeds])
    chunks = np.array_split(np.arange(n_reps), max(1, min(int(threads), n_reps)))

    def work(idx):
        try:
            return _run(Jm, phys, schedule, engine, xi[idx], damping_scale, rtol)
        except (IntegratorError, ConvergenceError) as exc:
            raise type(exc)(f"replicas {idx[0]}..{idx[-1]}: {exc}") from exc

    if len(chunks) == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(work, chunks))
    raw = np.concatenate(parts, axis=0)
    meta = {"engine": engine, "epsilon": epsilon, "damping_scale": damping_scale,
            "schedule": schedule.as_dict(), "base_seed": int(base_seed)}
    if engine == "descent":
        meta["descent_init"] = descent_init
    return ReplicaEnsemble(_normalize(raw), seeds, Jm.digest(), schedule.t_R, raw, meta)


def binarize(x):
    """Map every spin to ``sign(s_i)/sqrt(n)`` with zero sent to ``+``."""
    if isinstance(x, ReplicaEnsemble):
        return ReplicaEnsemble(binarize(x.spins), x.seeds, x.J_ref, x.t_R, x.raw_amplitudes, dict(x.meta))
    if isinstance(x, SpinConfiguration):
        return SpinConfiguration(binarize(x.s), x.raw_amplitudes, x.seed, x.t_R)
    arr = np.asarray(x, dtype=float)
    n = arr.shape[-1]
    return np.where(arr < 0, -1.0, 1.0) / np.sqrt(n)


def ensemble_digest(ens: ReplicaEnsemble) -> str:
    return hashlib.sha256(np.ascontiguousarray(ens.spins).tobytes()).hexdigest()
