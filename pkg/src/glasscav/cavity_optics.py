"""Mode structure of a confocal-family M/N cavity at its midplane.

All transverse coordinates passed to the kernels are in units of the
waist ``w0`` unless a function says otherwise. Field images live on a
square pixel grid whose coordinates are referenced to the cavity axis
through a pixel center and a waist expressed in pixels.

The discrete fractional Fourier transform used here is spectral: the
harmonic-oscillator Hamiltonian is diagonalized on the pixel grid with a
Fourier-spectral Laplacian and each eigenvector picks up its Gouy phase.
That makes the transform exactly unitary and an exact one-parameter
group, which is what the cavity round-trip identities rely on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import gcd

import numpy as np
from scipy import optimize

from .errors import (
    ConvergenceError,
    DegenerateImageError,
    GridResolutionWarning,
    SingularArgumentError,
    UnsupportedGeometryError,
)

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class CavityGeometry:
    """Degenerate-cavity geometry.

    Parameters
    ----------
    M, N : int
        Degeneracy indices, ``gcd(M, N) == 1``.
    eta : int
        Selected mode family, ``0 <= eta < N``.
    Q0_parity : {"odd", "even"}
        Parity of the longitudinal index, which decides which midplane
        quadrature survives for even ``M``.
    w0 : float
        Waist in micrometres.
    L, R_mirror : float
        Cavity length and mirror radius in centimetres.
    phi : float
        Mode cutoff; zero means ideal degeneracy.
    """

    M: int = 4
    N: int = 7
    eta: int = 0
    Q0_parity: str = "odd"
    w0: float = 35.0
    L: float = 1.22
    R_mirror: float = 1.0
    phi: float = 0.0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise UnsupportedGeometryError("M and N must be positive integers")
        if gcd(int(self.M), int(self.N)) != 1:
            raise UnsupportedGeometryError(f"M/N = {self.M}/{self.N} is not irreducible")
        if not 0 <= self.eta < self.N:
            raise UnsupportedGeometryError(f"eta must lie in [0, {self.N})")
        if self.Q0_parity not in ("odd", "even"):
            raise UnsupportedGeometryError("Q0_parity must be 'odd' or 'even'")
        if not self.phi >= 0:
            raise UnsupportedGeometryError("phi must be non-negative")
        if not self.w0 > 0:
            raise UnsupportedGeometryError("w0 must be positive")
        if not (self.L > 0 and self.R_mirror > 0):
            raise UnsupportedGeometryError("L and R_mirror must be positive")

    @property
    def fsr(self) -> float:
        """Free spectral range in Hz."""
        return SPEED_OF_LIGHT / (2.0 * self.L * 1e-2)

    @property
    def degenerate_length(self) -> float:
        """Length (cm) at which the M/N families become degenerate."""
        return 2.0 * self.R_mirror * np.sin(self.M * np.pi / (2.0 * self.N)) ** 2


@dataclass
class ComplexFieldImage:
    """Complex midplane field on a square pixel grid.

    ``grid[j, i]`` is the field at ``x = (i - center[0]) * pixel_pitch`` and
    ``y = (j - center[1]) * pixel_pitch`` (micrometres).
    """

    grid: np.ndarray
    pixel_pitch: float
    center: tuple[float, float]
    w0_px: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=complex)
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError("field images must be square 2D arrays")
        if not self.pixel_pitch > 0 or not self.w0_px > 0:
            raise ValueError("pixel_pitch and w0_px must be positive")
        self.center = (float(self.center[0]), float(self.center[1]))
        self.w0_px = float(self.w0_px)
        self.pixel_pitch = float(self.pixel_pitch)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Return 1D ``x`` and ``y`` pixel-center coordinates in micrometres."""
        ny, nx = self.grid.shape
        x = (np.arange(nx) - self.center[0]) * self.pixel_pitch
        y = (np.arange(ny) - self.center[1]) * self.pixel_pitch
        return x, y

    def with_grid(self, grid: np.ndarray) -> "ComplexFieldImage":
        return replace(self, grid=np.asarray(grid, dtype=complex), meta=dict(self.meta))

    def power(self) -> float:
        return float(np.sum(np.abs(self.grid) ** 2))


# ---------------------------------------------------------------------------
# analytic kernels


def mehler_kernel(r, r_prime, phi):
    """Harmonic-oscillator propagator in waist units.

    Parameters
    ----------
    r, r_prime : array_like, shape (..., 2)
        Transverse positions in units of ``w0``. Leading dimensions broadcast.
    phi : complex
        Imaginary-time argument with ``Re(phi) >= 0``.

    Returns
    -------
    complex or ndarray
        ``e^phi / (2 pi sinh phi) * exp[-(r - r')^2 / (2 tanh(phi/2))
        - (r + r')^2 tanh(phi/2) / 2]``.
    """
    phi = complex(phi)
    if phi.real < 0:
        raise SingularArgumentError("Re(phi) must be non-negative")
    sh = np.sinh(phi)
    if abs(sh) < 1e-300 or (phi.real == 0 and abs(np.sin(phi.imag)) < 1e-14):
        raise SingularArgumentError(f"sinh(phi) vanishes at phi={phi}")
    r = np.asarray(r, dtype=float)
    rp = np.asarray(r_prime, dtype=float)
    dif2 = np.sum((r - rp) ** 2, axis=-1)
    sum2 = np.sum((r + rp) ** 2, axis=-1)
    th = np.tanh(phi / 2.0)
    # (r + r')^2 tanh/2 - written with both tanh and its inverse so that a
    # purely imaginary phi near i*pi stays finite
    expo = -dif2 / (2.0 * th) - sum2 * th / 2.0
    out = np.exp(phi) / (2.0 * np.pi * sh) * np.exp(expo)
    return out[()] if np.ndim(out) == 0 else out


def family_greens(r, r_prime, geom: CavityGeometry, phi: float | None = None,
                  include_local: bool = True):
    """Green's function of the ``geom.eta`` mode family.

    ``(1/N) sum_s exp(-i eta 2 pi s / N) K(r, r', phi - 2 pi i s / N)`` with
    ``K`` the Mehler kernel. The ``s = 0`` term is the local part; it becomes
    a delta function at ``phi = 0`` and may be dropped with
    ``include_local=False``.

    Parameters
    ----------
    r, r_prime : array_like, shape (..., 2)
        Positions in waist units.
    geom : CavityGeometry
    phi : float, optional
        Overrides ``geom.phi``.
    include_local : bool
        Whether to include the ``s = 0`` term.
    """
    phi = geom.phi if phi is None else float(phi)
    N, eta = geom.N, geom.eta
    if include_local and phi == 0:
        raise SingularArgumentError(
            "the s=0 term is a delta function at phi=0; pass include_local=False "
            "and add the local weight explicitly"
        )
    total = 0j
    for s in range(0 if include_local else 1, N):
        w = np.exp(-1j * eta * 2.0 * np.pi * s / N)
        total = total + w * mehler_kernel(r, r_prime, phi - 2j * np.pi * s / N)
    return total / N


def greens_47_nonlocal(r_i, r_j, geom: CavityGeometry):
    """Closed-form nonlocal Green's function at ideal degeneracy.

    Positions are physical (micrometres). The value at the origin is
    ``(N - 1) / (2 pi)``, i.e. ``3 / pi`` for ``N = 7``. The local contact
    term is not included.

    Parameters
    ----------
    r_i, r_j : array_like, shape (..., 2)
    geom : CavityGeometry
        Odd ``N`` is required; the ``N = 7`` case is the standard one.
    """
    N = geom.N
    if N % 2 == 0 or N < 3:
        raise UnsupportedGeometryError("closed form is implemented for odd N >= 3")
    ri = np.asarray(r_i, dtype=float) / geom.w0
    rj = np.asarray(r_j, dtype=float) / geom.w0
    a2 = np.sum(ri * ri, axis=-1) + np.sum(rj * rj, axis=-1)
    ab = np.sum(ri * rj, axis=-1)
    out = 0.0
    for nu in range(1, (N - 1) // 2 + 1):
        th = 2.0 * nu * np.pi / N
        s, c = np.sin(th), np.cos(th)
        out = out + np.sin((1 + geom.eta) * th + (c * a2 - 2.0 * ab) / s) / (np.pi * s)
    return out


def local_weight(geom: CavityGeometry) -> float:
    """Weight of the contact term in physical units (µm^2).

    The ``s = 0`` Mehler term tends to ``delta(r - r') / 2`` in waist units,
    so after the ``1/N`` family average the contact weight is
    ``w0^2 / (2N)``.
    """
    return geom.w0 ** 2 / (2.0 * geom.N)


def midplane_interaction_matrix(r, r_prime, geom: CavityGeometry, include_local: bool = True):
    """2x2 quadrature-resolved midplane interaction for even ``M``.

    Returns an array of shape ``(..., 2, 2)`` with a single non-zero
    diagonal entry equal to ``Re family_greens``; the surviving quadrature
    is set by ``geom.Q0_parity``.
    """
    if geom.M % 2:
        raise UnsupportedGeometryError("odd-M cavities couple both quadratures")
    G = np.real(family_greens(r, r_prime, geom, include_local=include_local))
    out = np.zeros(np.shape(G) + (2, 2))
    k = 0 if geom.Q0_parity == "odd" else 1
    out[..., k, k] = G
    return out


def family_frequency(Q0: int, eta: int, L: float, M: int, N: int) -> float:
    """Resonance frequency (Hz) of family ``eta`` for cavity length ``L`` (cm)."""
    if not L > 0:
        raise ValueError("L must be positive")
    return SPEED_OF_LIGHT / (2.0 * L * 1e-2) * (Q0 + (M / N) * (1 + eta))


# ---------------------------------------------------------------------------
# spectral fractional Fourier transform

# eigenvectors whose discrete eigenvalue misses k + 1/2 by more than this are
# treated as poorly resolved by the grid
_EIG_TOL = 1e-6
# fraction of image power allowed in poorly resolved modes before warning
_POWER_TOL = 1e-6


@lru_cache(maxsize=32)
def _oscillator_basis(n: int, center: float, w0_px: float):
    """Eigenpairs of ``-D^2/2 + u^2/2`` on ``n`` pixels, ``u = sqrt2 (j - c)/w0_px``.

    The derivative is spectral (FFT) so the low eigenvalues match ``k + 1/2``
    to near machine precision while the grid resolves them.
    """
    h = np.sqrt(2.0) / w0_px
    u = (np.arange(n) - center) * h
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    F = np.fft.fft(np.eye(n), axis=0)
    D2 = np.real(np.fft.ifft(-(k ** 2)[:, None] * F, axis=0))
    D2 = 0.5 * (D2 + D2.T)
    H = -0.5 * D2 + np.diag(0.5 * u ** 2)
    w, V = np.linalg.eigh(H)
    # fix the eigenvector signs deterministically: largest component positive
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[idx, np.arange(n)])
    V.setflags(write=False)
    good = np.abs(w - (np.arange(n) + 0.5)) < _EIG_TOL * (np.arange(n) + 1.0)
    good.setflags(write=False)
    return V, good


def _bases(image: ComplexFieldImage):
    ny, nx = image.grid.shape
    Vx, gx = _oscillator_basis(nx, round(image.center[0], 12), round(image.w0_px, 12))
    Vy, gy = _oscillator_basis(ny, round(image.center[1], 12), round(image.w0_px, 12))
    return Vx, gx, Vy, gy


def _check_resolution(C: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> None:
    total = np.sum(np.abs(C) ** 2)
    if total == 0:
        return
    bad = np.sum(np.abs(C[~gy, :]) ** 2) + np.sum(np.abs(C[gy][:, ~gx]) ** 2)
    if bad > _POWER_TOL * total:
        warnings.warn(
            f"{bad / total:.2e} of the field power sits in oscillator modes the "
            "grid does not resolve; the transform is inaccurate there",
            GridResolutionWarning,
            stacklevel=3,
        )


def frft_apply(image: ComplexFieldImage, alpha: float) -> ComplexFieldImage:
    """Fractional Fourier transform of angle ``alpha`` about the cavity axis.

    The oscillator eigenmode of order ``n = kx + ky`` is multiplied by
    ``exp(i alpha (n - 1))``, so the 2D ground state picks up ``exp(-i alpha)``.
    With this convention ``alpha = -pi/2`` equals the unitary Fourier
    transform with kernel ``exp(-2 i u.v) / pi`` (waist units) times ``i``.

    Warns with :class:`GridResolutionWarning` if a noticeable fraction of the
    power lies in modes that the pixel grid cannot represent.
    """
    Vx, gx, Vy, gy = _bases(image)
    C = Vy.T @ image.grid @ Vx
    _check_resolution(C, gx, gy)
    ny, nx = image.grid.shape
    px = np.exp(1j * alpha * (np.arange(nx) - 0.5))
    py = np.exp(1j * alpha * (np.arange(ny) - 0.5))
    out = Vy @ (C * py[:, None] * px[None, :]) @ Vx.T
    return image.with_grid(out)


def _family_filter(ny: int, nx: int, geom: CavityGeometry) -> np.ndarray:
    """Eigenvalues of the symmetry average in the oscillator basis."""
    if geom.M % 2:
        raise UnsupportedGeometryError("the symmetry average is defined for even M")
    N, M = geom.N, geom.M
    n = np.arange(ny)[:, None] + np.arange(nx)[None, :]
    acc = np.zeros((ny, nx), dtype=complex)
    for l in range(N):
        a = l * M * np.pi / N
        acc += np.exp(1j * a * (1 - geom.eta)) * np.exp(1j * a * (n - 1))
    return acc / N


def symmetry_average(image: ComplexFieldImage, geom: CavityGeometry) -> ComplexFieldImage:
    """Average of the ``N`` round-trip images weighted by the family phase.

    Equivalent to ``(1/N) sum_l exp(i l M pi (1 - eta) / N) F_{l M pi / N}`` and
    therefore a projector onto modes with ``n = eta (mod N)``. The sum is
    evaluated in the oscillator eigenbasis, which is exact to rounding.
    """
    Vx, gx, Vy, gy = _bases(image)
    C = Vy.T @ image.grid @ Vx
    _check_resolution(C, gx, gy)
    ny, nx = image.grid.shape
    out = Vy @ (C * _family_filter(ny, nx, geom)) @ Vx.T
    return image.with_grid(out)


def symmetry_average_explicit(image: ComplexFieldImage, geom: CavityGeometry) -> ComplexFieldImage:
    """Reference implementation of :func:`symmetry_average` as a sum of transforms."""
    acc = np.zeros_like(image.grid)
    for l in range(geom.N):
        a = l * geom.M * np.pi / geom.N
        acc += np.exp(1j * a * (1 - geom.eta)) * frft_apply(image, a).grid
    return image.with_grid(acc / geom.N)


@dataclass(frozen=True)
class CalibrationResult:
    w0_px: float
    x_c: float
    y_c: float
    cost: float
    n_restarts: int

    def __iter__(self):
        return iter((self.w0_px, self.x_c, self.y_c))


def calibration_cost(image: ComplexFieldImage, geom: CavityGeometry, w0_px: float,
                     x_c: float, y_c: float) -> float:
    """``C = 1/2 sum |F~[I] - I|^2`` for a trial center and waist."""
    trial = replace(image, center=(x_c, y_c), w0_px=w0_px)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridResolutionWarning)
        filt = symmetry_average(trial, geom).grid
    return 0.5 * float(np.sum(np.abs(filt - image.grid) ** 2))


def calibrate_center_waist(image: ComplexFieldImage, geom: CavityGeometry,
                           initial: tuple[float, float, float] | None = None,
                           xtol: float = 1e-4, ftol: float = 1e-8,
                           max_restarts: int = 4, maxiter: int = 2000) -> CalibrationResult:
    """Find the waist (pixels) and center that make the image family-symmetric.

    Nelder-Mead on ``(w0_px, x_c, y_c)`` scaled by the initial waist, restarted
    from the incumbent until a restart no longer improves the cost.

    Parameters
    ----------
    image : ComplexFieldImage
        Its ``w0_px`` and ``center`` are the default initial guess.
    initial : (w0_px, x_c, y_c), optional
    xtol : float
        Relative parameter tolerance (in units of the initial waist).
    ftol : float
        Cost tolerance relative to the image power.
    """
    power = image.power()
    if power == 0 or not np.isfinite(power):
        raise DegenerateImageError("degenerate image: cannot calibrate an all-zero or non-finite field")
    w_init, xc_init, yc_init = (image.w0_px, *image.center) if initial is None else initial
    scale = float(w_init)

    def unpack(p):
        return w_init * (1.0 + p[0]), xc_init + scale * p[1], yc_init + scale * p[2]

    def cost(p):
        w, xc, yc = unpack(p)
        if w <= 0:
            return np.inf
        return calibration_cost(image, geom, w, xc, yc) / power

    x = np.zeros(3)
    best = cost(x)
    restarts = 0
    step = 0.02
    for restarts in range(max_restarts + 1):
        simplex = np.vstack([x, x + step * np.eye(3)])
        res = optimize.minimize(
            cost, x, method="Nelder-Mead",
            options=dict(xatol=xtol, fatol=ftol, maxiter=maxiter, initial_simplex=simplex),
        )
        if res.nit >= maxiter and not res.success:
            raise ConvergenceError(f"calibration did not converge: {res.message}")
        improved = res.fun < best - ftol
        if res.fun <= best:
            x, best = res.x, res.fun
        if not improved:
            break
        step = max(step / 2, 10 * xtol)
    w, xc, yc = unpack(x)
    return CalibrationResult(float(w), float(xc), float(yc), float(best * power), restarts)
