"""Spin positions, atomic densities and the cavity-mediated coupling matrix.

Lengths are micrometres, frequencies are angular (rad/s). The coupling
matrix is dimensionless in the sense that the pump-dependent prefactor is
left to the dynamics; its entries carry the waist-squared scale of the
contact term.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .cavity_optics import CavityGeometry, greens_47_nonlocal, local_weight
from .errors import ConstraintError, NumericalRangeError, QuadratureWarning

MIN_SEPARATION_UM = 40.0
MAX_RADIUS_UM = 150.0
MAX_ATTEMPTS = 1000


# ---------------------------------------------------------------------------
# positions and densities


@dataclass(frozen=True)
class PositionGroupParams:
    """Layout of a randomized rectilinear trap array (all lengths in µm)."""

    n_x: int
    n_y: int
    d_x: float
    d_y: float
    w_cx: float
    w_cy: float
    w_x: float
    w_y: float

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("n_x and n_y must be at least 1")
        if min(self.w_cx, self.w_cy, self.w_x, self.w_y) < 0:
            raise ValueError("widths must be non-negative")

    @property
    def n(self) -> int:
        return self.n_x * self.n_y


GROUPS = {
    "A": PositionGroupParams(4, 4, 62.0, 62.0, 14.0, 14.0, 6.0, 6.0),
    "B": PositionGroupParams(3, 4, 85.0, 62.0, 18.0, 14.0, 18.0, 6.0),
    "C": PositionGroupParams(2, 4, 130.0, 62.0, 26.0, 14.0, 50.0, 6.0),
    "D": PositionGroupParams(4, 2, 62.0, 124.0, 14.0, 14.0, 6.0, 6.0),
}

J1_X = (-97.15, -36.3, 25.2, 85.1)
J1_Y = (-93.4, -28.9, 32.3, 97.3)


@dataclass(frozen=True)
class DensityProfile:
    """Gaussian ensemble density with optional first-order split components.

    ``rho = a00 g + a10 (sqrt2 x'/sigma_x) g + a01 (sqrt2 y'/sigma_y) g`` with
    ``g`` an area-normalized anisotropic Gaussian and ``(x', y')`` measured
    from the site.
    """

    sigma_x: float = 5.2
    sigma_y: float = 5.4
    a00: float = 1.0
    a01: float = 0.0
    a10: float = 0.0

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("sigmas must be positive")
        norm = self.a00 ** 2 + self.a01 ** 2 + self.a10 ** 2
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"a00^2 + a01^2 + a10^2 = {norm}, expected 1")

    def amplitude_table(self) -> np.ndarray:
        """2x2 table ``A[lx, ly]`` of component amplitudes."""
        return np.array([[self.a00, self.a01], [self.a10, 0.0]])


@dataclass(frozen=True)
class SpinSite:
    position: tuple[float, float]
    density: DensityProfile = DensityProfile()

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


def site_positions(sites) -> np.ndarray:
    return np.array([s.position for s in sites], dtype=float).reshape(-1, 2)


def _check_constraints(pos: np.ndarray) -> bool:
    if np.any(np.hypot(pos[:, 0], pos[:, 1]) > MAX_RADIUS_UM):
        return False
    if len(pos) > 1:
        d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
        iu = np.triu_indices(len(pos), 1)
        if np.min(d[iu]) < MIN_SEPARATION_UM:
            return False
    return True


def sample_positions(params: PositionGroupParams, rng_seed, density: DensityProfile | None = None,
                     max_attempts: int = MAX_ATTEMPTS) -> list[SpinSite]:
    """Draw one randomized trap layout satisfying the separation and radius limits.

    Sites are ordered row-major: index ``j * n_x + i`` is column ``i`` of row ``j``.
    """
    rng = np.random.default_rng(rng_seed)
    density = DensityProfile() if density is None else density
    ix = np.arange(params.n_x) - (params.n_x - 1) / 2.0
    iy = np.arange(params.n_y) - (params.n_y - 1) / 2.0
    for _ in range(max_attempts):
        xc = rng.uniform(-params.w_cx / 2, params.w_cx / 2)
        yc = rng.uniform(-params.w_cy / 2, params.w_cy / 2)
        x = xc + ix * params.d_x + rng.uniform(-params.w_x / 2, params.w_x / 2, params.n_x)
        y = yc + iy * params.d_y + rng.uniform(-params.w_y / 2, params.w_y / 2, params.n_y)
        X, Y = np.meshgrid(x, y)
        pos = np.column_stack([X.ravel(), Y.ravel()])
        if _check_constraints(pos):
            return [SpinSite((px, py), density) for px, py in pos]
    raise ConstraintError(f"no admissible layout after {max_attempts} attempts")


def j1_fixture(density: DensityProfile | None = None) -> list[SpinSite]:
    """The 4x4 reference layout used throughout the examples, row-major."""
    density = DensityProfile() if density is None else density
    return [SpinSite((x, y), density) for y in J1_Y for x in J1_X]


# ---------------------------------------------------------------------------
# physical parameters


_RB87_MASS = 86.909180527 * constants.atomic_mass


@dataclass(frozen=True)
class PhysicalParams:
    """Drive and cavity parameters. Frequencies are angular (rad/s).

    ``E_r`` is the recoil energy in joules; ``omega_z`` defaults to ``2 E_r / hbar``.
    """

    N_A: float = 6e4
    g0: float = 2 * np.pi * 1.35e6
    kappa: float = 2 * np.pi * 140e3
    Delta_A: float = -2 * np.pi * 97.2e9
    Delta_C: float = -2 * np.pi * 20e6
    lambda_pump: float = 780.24e-9
    E_r: float | None = None
    omega_z: float | None = None

    def __post_init__(self):
        if not self.Delta_A < 0 or not self.Delta_C < 0:
            raise ValueError("Delta_A and Delta_C must be negative (red detuning)")
        if not self.kappa > 0 or not self.N_A > 0:
            raise ValueError("kappa and N_A must be positive")
        if self.E_r is None:
            k = 2 * np.pi / self.lambda_pump
            object.__setattr__(self, "E_r", (constants.hbar * k) ** 2 / (2 * _RB87_MASS))
        if self.omega_z is None:
            object.__setattr__(self, "omega_z", 2 * self.E_r / constants.hbar)

    @property
    def S(self) -> float:
        return self.N_A / 2.0

    @property
    def E_r_angular(self) -> float:
        return self.E_r / constants.hbar

    @classmethod
    def preset(cls, name: str = "default") -> "PhysicalParams":
        """``"default"`` uses the coupling estimated for this geometry; ``"main_text"`` the larger one."""
        if name == "default":
            return cls()
        if name == "main_text":
            return cls(g0=2 * np.pi * 1.47e6)
        raise KeyError(name)


# ---------------------------------------------------------------------------
# coupling matrix


@dataclass
class CouplingMatrix:
    J: np.ndarray
    sites: list
    geom: CavityGeometry
    include_local: bool
    J_local: np.ndarray | None = None
    J_nonlocal: np.ndarray | None = None
    quadrature: dict = field(default_factory=dict)
    flags: np.ndarray | None = None
    eigvals: np.ndarray = field(init=False)
    eigvecs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.J.ndim != 2 or self.J.shape[0] != self.J.shape[1]:
            raise ValueError("J must be square")
        if not np.array_equal(self.J, self.J.T):
            raise ValueError("J must be exactly symmetric")
        w, V = np.linalg.eigh(self.J)
        order = np.argsort(w)[::-1]
        self.eigvals = w[order]
        self.eigvecs = V[:, order]

    @property
    def n(self) -> int:
        return self.J.shape[0]

    @property
    def lambda_max(self) -> float:
        return float(self.eigvals[0])

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.J).tobytes()).hexdigest()


def _symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _axis_overlap(p, s):
    """Exact 1D overlaps ``int g_i g_j P_l P_l'`` for ``l, l' in {0, 1}``.

    ``p`` and ``s`` hold site centers and widths along one axis. Returns an
    array of shape ``(2, 2, n, n)``.
    """
    p1, p2 = p[:, None], p[None, :]
    s1, s2 = s[:, None], s[None, :]
    var = s1 ** 2 + s2 ** 2
    pref = np.exp(-((p1 - p2) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)
    prec = 1 / s1 ** 2 + 1 / s2 ** 2
    mu = (p1 / s1 ** 2 + p2 / s2 ** 2) / prec
    out = np.empty((2, 2) + pref.shape)
    out[0, 0] = pref
    out[1, 0] = pref * np.sqrt(2) * (mu - p1) / s1
    out[0, 1] = pref * np.sqrt(2) * (mu - p2) / s2
    out[1, 1] = pref * 2 * ((mu - p1) * (mu - p2) + 1 / prec) / (s1 * s2)
    return out


def _local_part(sites, geom) -> np.ndarray:
    pos = site_positions(sites)
    sx = np.array([s.density.sigma_x for s in sites])
    sy = np.array([s.density.sigma_y for s in sites])
    A = np.stack([s.density.amplitude_table() for s in sites])
    Ox = _axis_overlap(pos[:, 0], sx)
    Oy = _axis_overlap(pos[:, 1], sy)
    overlap = np.einsum("iab,jcd,acij,bdij->ij", A, A, Ox, Oy)
    return local_weight(geom) * _symmetrize(overlap)


def _nodes(p, s, q):
    """Gauss-Hermite nodes and the two polynomial weight sets per site."""
    t, w = np.polynomial.hermite.hermgauss(q)
    X = p[:, None] + np.sqrt(2) * s[:, None] * t[None, :]
    W = np.stack([np.broadcast_to(w / np.sqrt(np.pi), X.shape), 2 * t * w / np.sqrt(np.pi)
                  * np.ones_like(X)])
    return X, W  # (n, q), (2, n, q)


def _nonlocal_part(sites, geom, q: int) -> np.ndarray:
    """Family-averaged nonlocal coupling by separable Gauss-Hermite quadrature.

    The closed-form kernel is a sum of terms ``Im[exp(i a) Ex(x, x') Ey(y, y')]``
    so each term factorizes over the axes and the 4D tensor rule reduces to
    products of 2D contractions.
    """
    pos = site_positions(sites) / geom.w0
    sx = np.array([s.density.sigma_x for s in sites]) / geom.w0
    sy = np.array([s.density.sigma_y for s in sites]) / geom.w0
    A = np.stack([s.density.amplitude_table() for s in sites])
    X, Wx = _nodes(pos[:, 0], sx, q)
    Y, Wy = _nodes(pos[:, 1], sy, q)
    n = len(sites)
    N = geom.N
    total = np.zeros((n, n))
    for nu in range(1, (N - 1) // 2 + 1):
        th = 2 * nu * np.pi / N
        sn, cs = np.sin(th), np.cos(th)
        T = np.zeros((n, n), dtype=complex)
        for i in range(n):
            Ex = np.exp(1j * (cs * (X[i][:, None] ** 2 + X[:, None, :] ** 2)
                              - 2 * X[i][:, None] * X[:, None, :]) / sn)  # (n, q, q)
            Ey = np.exp(1j * (cs * (Y[i][:, None] ** 2 + Y[:, None, :] ** 2)
                              - 2 * Y[i][:, None] * Y[:, None, :]) / sn)
            Sx = np.einsum("la,jab,mjb->lmj", Wx[:, i], Ex, Wx)
            Sy = np.einsum("la,jab,mjb->lmj", Wy[:, i], Ey, Wy)
            T[i] = np.einsum("ab,jcd,acj,bdj->j", A[i], A, Sx, Sy)
        total += np.imag(np.exp(1j * (1 + geom.eta) * th) * T) / (np.pi * sn)
    return _symmetrize(total) / N


def assemble_J(sites, geom: CavityGeometry | None = None, nodes: int = 24,
               include_local: bool = True, check_convergence: bool = True,
               rtol: float = 1e-4) -> CouplingMatrix:
    """Integrate the family Green's function against every pair of densities.

    Parameters
    ----------
    sites : sequence of SpinSite
    geom : CavityGeometry
        Ideal degeneracy (``phi = 0``) and odd ``N``.
    nodes : int
        Gauss-Hermite nodes per axis per site.
    include_local : bool
        Add the contact term ``w0^2/(2N) int rho_i rho_j``.
    check_convergence : bool
        Repeat the nonlocal quadrature with twice the nodes and flag entries
        that move by more than ``rtol * max|J|``.
    """
    geom = CavityGeometry() if geom is None else geom
    if geom.phi != 0:
        raise NotImplementedError("coupling assembly uses the ideal-degeneracy closed form")
    nonlocal_ = _nonlocal_part(sites, geom, nodes)
    flags = None
    delta = None
    if check_convergence:
        fine = _nonlocal_part(sites, geom, 2 * nodes)
        delta = np.abs(fine - nonlocal_)
        scale = max(np.max(np.abs(fine)), 1e-300)
        flags = delta > rtol * scale
        if flags.any():
            warnings.warn(f"{int(flags.sum())} coupling entries not converged at {nodes} nodes",
                          QuadratureWarning, stacklevel=2)
    local = _local_part(sites, geom) if include_local else np.zeros_like(nonlocal_)
    J = _symmetrize(local + nonlocal_)
    quad = {"method": "gauss-hermite", "nodes": nodes, "refined_nodes": 2 * nodes if check_convergence else None,
            "max_refinement_change": None if delta is None else float(delta.max())}
    return CouplingMatrix(J, list(sites), geom, include_local, local, nonlocal_, quad, flags)


def point_source_couplings(positions, geom: CavityGeometry | None = None) -> np.ndarray:
    """Closed-form couplings between point sources with the diagonal removed.

    ``positions`` has shape ``(..., n, 2)`` in µm; the result ``(..., n, n)``.
    """
    geom = CavityGeometry() if geom is None else geom
    pos = np.asarray(positions, dtype=float)
    J = greens_47_nonlocal(pos[..., :, None, :], pos[..., None, :, :], geom)
    J = 0.5 * (J + np.swapaxes(J, -1, -2))
    n = pos.shape[-2]
    J[..., np.arange(n), np.arange(n)] = 0.0
    return J


def point_source_J(sites, geom: CavityGeometry | None = None) -> CouplingMatrix:
    """Point-source coupling matrix with zero diagonal."""
    geom = CavityGeometry() if geom is None else geom
    J = point_source_couplings(site_positions(sites), geom)
    return CouplingMatrix(J, list(sites), geom, False, None, J, {"method": "point-source"})


# ---------------------------------------------------------------------------
# threshold and dissipation


def critical_pump(Jm: CouplingMatrix, phys: PhysicalParams) -> float:
    """Squared critical pump Rabi frequency (rad^2/s^2)."""
    lam = Jm.lambda_max
    if not lam > 0:
        raise NumericalRangeError("largest coupling eigenvalue must be positive for a threshold")
    return (2 * phys.E_r_angular * phys.Delta_A ** 2 * (phys.Delta_C ** 2 + phys.kappa ** 2)
            / (phys.N_A * lam * phys.g0 ** 2 * abs(phys.Delta_C)))


@dataclass(frozen=True)
class CollapseRates:
    coefficients: np.ndarray  # one per eigenmode of J, rad^(1/2)/s^(1/2) scale
    eigvecs: np.ndarray
    per_spin_rate: float  # rad/s

    def __iter__(self):
        return iter(zip(self.coefficients, self.eigvecs.T))

    def __len__(self):
        return len(self.coefficients)


def collapse_rates(Jm: CouplingMatrix, phys: PhysicalParams, Omega: float,
                   tol: float = 1e-8) -> CollapseRates:
    """Collapse-operator coefficients of the coupling eigenmodes at pump ``Omega``.

    ``c_i = sqrt(lambda_i kappa) g0 Omega / (2 |Delta_C| Delta_A)``. Eigenvalues
    below ``-tol * max|lambda|`` are rejected; smaller negative ones are
    treated as zero.
    """
    lam = Jm.eigvals
    floor = tol * max(np.max(np.abs(lam)), 1e-300)
    if np.any(lam < -floor):
        raise NumericalRangeError("coupling matrix has negative eigenvalues; collapse rates undefined")
    lam = np.clip(lam, 0.0, None)
    coef = np.sqrt(lam * phys.kappa) * phys.g0 * Omega / (2 * abs(phys.Delta_C) * phys.Delta_A)
    rate = phys.N_A * phys.kappa * phys.omega_z / abs(phys.Delta_C)
    return CollapseRates(coef, Jm.eigvecs.copy(), float(rate))
