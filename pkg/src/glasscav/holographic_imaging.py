"""Synthesis of midplane emission images and spin recovery by least squares.

The emitted field of ensemble ``i`` is its density convolved with the family
Green's function: a contact copy of the density plus three defocused,
chirped images. For Gaussian densities (and their first-order split
components) every defocused image factorizes over the two axes and has a
closed form, so synthesis and fitting never integrate numerically.

Fitting uses variable projection: the three component amplitudes per site
enter linearly and are eliminated by linear least squares at every step,
while positions and the two global widths are refined by a trust-region
least-squares solver on the projected residual.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, optimize

from .cavity_optics import CavityGeometry, ComplexFieldImage, local_weight
from .coupling import DensityProfile, SpinSite, site_positions
from .errors import (
    ConvergenceError,
    DegenerateImageError,
    GridCoverageError,
    RankDeficiencyWarning,
)

DEFAULT_GRID = 256
DEFAULT_W0_PX = 9.0
_COMPONENTS = ((0, 0), (0, 1), (1, 0))  # (lx, ly): a00, a01, a10


def _axis_profiles(u, p, sigma, geom: CavityGeometry, deriv: bool = False):
    """1D building blocks for a site centered at ``p`` along one axis.

    Returns the contact profiles ``g * P_l`` (shape (2, len(u)), per µm) and,
    per defocused term ``nu``, the complex transforms ``F_l(u)`` (shape
    (n_nu, 2, len(u))) in waist units. Inputs are in µm. With ``deriv`` the
    derivatives of both with respect to ``p`` and to ``sigma`` (per µm) are
    appended in that order.
    """
    w0 = geom.w0
    d = u - p
    g = np.exp(-(d ** 2) / (2 * sigma ** 2)) / (np.sqrt(2 * np.pi) * sigma)
    contact = np.stack([g, g * np.sqrt(2) * d / sigma])
    x = u / w0
    pw, sw = p / w0, sigma / w0
    nus = range(1, (geom.N - 1) // 2 + 1)
    F = np.empty((len(nus), 2, len(u)), dtype=complex)
    dFp = np.empty_like(F)
    dFs = np.empty_like(F)
    for k, nu in enumerate(nus):
        th = 2 * nu * np.pi / geom.N
        sn, cs = np.sin(th), np.cos(th)
        b, c = cs / sn, 2.0 / sn
        A = 1.0 / (2 * sw ** 2) - 1j * b
        B = pw / sw ** 2 - 1j * c * x
        C = -pw ** 2 / (2 * sw ** 2)
        base = np.sqrt(np.pi / A) * np.exp(B ** 2 / (4 * A) + C) / (np.sqrt(2 * np.pi) * sw)
        base = base * np.exp(1j * b * x ** 2)
        shift = B / (2 * A) - pw
        F[k, 0] = base
        F[k, 1] = base * (np.sqrt(2) / sw) * shift
        if deriv:
            # position: only B and C move
            dbase = base * shift / sw ** 2
            dFp[k, 0] = dbase / w0
            dFp[k, 1] = (np.sqrt(2) / sw) * (dbase * shift + base * (1 / (2 * A * sw ** 2) - 1)) / w0
            # width: A, B, C and the prefactor move
            dA, dB, dC = -1 / sw ** 3, -2 * pw / sw ** 3, pw ** 2 / sw ** 3
            dlog = -0.5 * dA / A + B * dB / (2 * A) - B ** 2 * dA / (4 * A ** 2) + dC - 1 / sw
            dbs = base * dlog
            dshift = dB / (2 * A) - B * dA / (2 * A ** 2)
            dFs[k, 0] = dbs / w0
            dFs[k, 1] = (np.sqrt(2) * (dbs * shift + base * dshift) / sw
                         - np.sqrt(2) * base * shift / sw ** 2) / w0
    if not deriv:
        return contact, F
    dcp = np.stack([g * d / sigma ** 2, np.sqrt(2) / sigma * g * (d ** 2 / sigma ** 2 - 1)])
    gs = g * (d ** 2 / sigma ** 3 - 1 / sigma)
    dcs = np.stack([gs, np.sqrt(2) * d * (gs / sigma - g / sigma ** 2)])
    return contact, F, dcp, dFp, dcs, dFs


def _factor_stack(x, y, pos, sigma_x, sigma_y, geom: CavityGeometry, contact: bool = True,
                  deriv: bool = False):
    """Separable factors of the three component images of one site.

    Component ``k`` equals ``Ys[k] @ Xs[k].T``; the defocused terms
    ``Im(ph Fy Fx)`` are split as ``Re(ph Fy) Im(Fx) + Im(ph Fy) Re(Fx)``.
    With ``deriv`` the factors differentiated with respect to position and
    width are returned too, as ``{"y": dYs, "x": dXs, "sy": ..., "sx": ...}``.
    """
    px = _axis_profiles(x, pos[0], sigma_x, geom, deriv)
    py = _axis_profiles(y, pos[1], sigma_y, geom, deriv)
    nnu = px[1].shape[0]
    th = 2 * np.arange(1, nnu + 1) * np.pi / geom.N
    coef = np.exp(1j * (1 + geom.eta) * th) / (np.pi * np.sin(th) * geom.N)
    wloc = local_weight(geom)

    def ystack(cy, Fy):
        out = []
        for _, ly in _COMPONENTS:
            fy = coef[:, None] * Fy[:, ly]
            cols = [fy.real, fy.imag]
            if contact:
                cols.insert(0, wloc * cy[ly][None, :])
            out.append(np.concatenate(cols).T)
        return out

    def xstack(cx, Fx):
        out = []
        for lx, _ in _COMPONENTS:
            fx = Fx[:, lx]
            cols = [fx.imag, fx.real]
            if contact:
                cols.insert(0, cx[lx][None, :])
            out.append(np.concatenate(cols).T)
        return out

    Ys, Xs = ystack(py[0], py[1]), xstack(px[0], px[1])
    if not deriv:
        return Ys, Xs
    return Ys, Xs, {"y": ystack(py[2], py[3]), "x": xstack(px[2], px[3]),
                    "sy": ystack(py[4], py[5]), "sx": xstack(px[4], px[5])}


def _site_basis(x, y, pos, sigma_x, sigma_y, geom: CavityGeometry):
    """Field images (3, ny, nx) of the three unit-amplitude components of one site."""
    Ys, Xs = _factor_stack(x, y, pos, sigma_x, sigma_y, geom)
    return np.stack([Y @ X.T for Y, X in zip(Ys, Xs)])


def _nonlocal_site_basis(x, y, pos, sigma_x, sigma_y, geom):
    Ys, Xs = _factor_stack(x, y, pos, sigma_x, sigma_y, geom, contact=False)
    return np.stack([Y @ X.T for Y, X in zip(Ys, Xs)])


def _amplitudes(density: DensityProfile) -> np.ndarray:
    return np.array([density.a00, density.a01, density.a10])


def emitted_field(spins, sites, geom: CavityGeometry, x, y) -> np.ndarray:
    """Noise-free field ``sum_i s_i int rho_i(r') G(r, r') dr'`` on the grid ``x`` by ``y`` (µm)."""
    spins = np.asarray(spins, dtype=float)
    out = np.zeros((len(y), len(x)))
    for s, site in zip(spins, sites):
        d = site.density
        basis = _site_basis(x, y, site.position, d.sigma_x, d.sigma_y, geom)
        out += s * np.tensordot(_amplitudes(d), basis, axes=1)
    return out


def synthesize_field(config, sites, geom: CavityGeometry | None = None, phys=None,
                     noise: float | None = None, seed: int = 0, grid_size: int = DEFAULT_GRID,
                     w0_px: float = DEFAULT_W0_PX, scale: float = 1.0) -> ComplexFieldImage:
    """Steady-state midplane image emitted by a spin configuration.

    Parameters
    ----------
    config : SpinConfiguration or array_like
        Spin amplitudes ``<S_i^x>`` (normalized or not).
    sites : sequence of SpinSite
    geom : CavityGeometry
    phys : PhysicalParams, optional
        Unused beyond provenance; the drive prefactor is folded into ``scale``.
    noise : float or None
        Signal-to-noise ratio in dB for additive complex Gaussian pixel noise.
    grid_size, w0_px : int, float
        Square grid size and waist in pixels; the cavity axis sits at the
        grid's geometric center.
    """
    geom = CavityGeometry() if geom is None else geom
    spins = np.asarray(getattr(config, "s", config), dtype=float)
    if len(spins) != len(sites):
        raise ValueError(f"{len(spins)} spins for {len(sites)} sites")
    pitch = geom.w0 / w0_px
    c = (grid_size - 1) / 2.0
    coords = (np.arange(grid_size) - c) * pitch
    half = c * pitch
    for site in sites:
        margin = 3 * max(site.density.sigma_x, site.density.sigma_y)
        if np.max(np.abs(site.position)) + margin > half:
            raise GridCoverageError(f"site at {site.position} lies outside the imaged region")
    img = scale * emitted_field(spins, sites, geom, coords, coords).astype(complex)
    meta = {"snr_db": noise, "seed": int(seed)}
    if noise is not None:
        p_sig = np.mean(np.abs(img) ** 2)
        sd = np.sqrt(p_sig / 10 ** (noise / 10.0))
        rng = np.random.default_rng(seed)
        img = img + sd / np.sqrt(2) * (rng.standard_normal(img.shape) + 1j * rng.standard_normal(img.shape))
    return ComplexFieldImage(img, pitch, (c, c), w0_px, meta)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    """Per-site amplitudes and shape parameters recovered from an image."""

    A: np.ndarray
    positions: np.ndarray
    a00: np.ndarray
    a01: np.ndarray
    a10: np.ndarray
    sigma_x: float
    sigma_y: float
    residual: float
    s: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.A)

    def sites(self) -> list[SpinSite]:
        return [SpinSite(tuple(p), DensityProfile(self.sigma_x, self.sigma_y, a, b, c))
                for p, a, b, c in zip(self.positions, self.a00, self.a01, self.a10)]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        d = dict(d)
        for k in ("A", "positions", "a00", "a01", "a10", "s"):
            d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)


class _Model:
    """Design matrix of the image model on a (possibly downsampled) grid."""

    def __init__(self, image: ComplexFieldImage, geom: CavityGeometry, downsample: int):
        self.geom = geom
        pitch = geom.w0 / image.w0_px
        ny, nx = image.grid.shape
        self.jx = np.arange(0, nx, downsample)
        self.jy = np.arange(0, ny, downsample)
        self.x = (self.jx - image.center[0]) * pitch
        self.y = (self.jy - image.center[1]) * pitch
        data = image.grid[np.ix_(self.jy, self.jx)]
        self.re = data.real.ravel()
        self.im_power = float(np.sum(data.imag ** 2))
        self.power = float(np.sum(np.abs(data) ** 2))

    def site(self, pos, sx, sy):
        return _site_basis(self.x, self.y, pos, sx, sy, self.geom).reshape(3, -1)

    def site_derivatives(self, pos, sx, sy, b, r):
        """Derivatives of one site's images w.r.t. (x, y, sigma_x, sigma_y).

        Returns the derivatives of ``site image . b`` (4, npix) and the
        inner products of every component's derivative with ``r`` (3, 4).
        """
        Ys, Xs, dd = _factor_stack(self.x, self.y, pos, sx, sy, self.geom, deriv=True)
        comp = np.stack([np.stack([Y @ dX.T, dY @ X.T, Y @ dSx.T, dSy @ X.T]).reshape(4, -1)
                         for Y, X, dX, dY, dSx, dSy in zip(Ys, Xs, dd["x"], dd["y"], dd["sx"], dd["sy"])])
        return np.tensordot(b, comp, axes=1), comp @ r
    def design(self, pos, sx, sy):
        return np.concatenate([self.site(p, sx, sy) for p in pos]).T  # (npix, 3n)


def _unpack(theta, n):
    return theta[:2 * n].reshape(n, 2), theta[2 * n], theta[2 * n + 1]


class _Projector:
    """Least-squares solves against a fixed design matrix via its Gram matrix."""

    def __init__(self, Phi):
        self.Phi = Phi
        G = Phi.T @ Phi
        G[np.diag_indices_from(G)] *= 1.0 + 1e-13
        self.cho = linalg.cho_factor(G)

    def coef(self, v):
        return linalg.cho_solve(self.cho, self.Phi.T @ v)

    def perp(self, D):
        """Component of ``D`` orthogonal to the columns of ``Phi``."""
        return D - self.Phi @ self.coef(D)


def fit_spins(image: ComplexFieldImage, initial_sites, geom: CavityGeometry | None = None,
              sigma0: tuple[float, float] | None = None, downsample: int = 2,
              max_iter: int = 500, ftol: float = 1e-10, xtol: float = 1e-10) -> FitResult:
    """Fit the emission model to a calibrated image.

    Parameters
    ----------
    image : ComplexFieldImage
        Calibrated image: ``center`` and ``w0_px`` locate the cavity axis.
    initial_sites : sequence of SpinSite
        Starting positions (and widths, unless ``sigma0`` is given).
    downsample : int
        Use every ``downsample``-th pixel along each axis.
    max_iter : int
        Budget of model evaluations; exhausting it raises ConvergenceError.
    ftol, xtol : float
        Relative cost and step tolerances of the trust-region solver.

    Returns
    -------
    FitResult
        ``s`` holds the normalized ``A_i a00_i``; ``residual`` is
        ``sum |fit - I|^2 / sum |I|^2`` on the fitted pixels; ``history``
        lists the cost at every accepted iterate.
    """
    geom = CavityGeometry() if geom is None else geom
    if not np.any(image.grid) or not np.all(np.isfinite(image.grid)):
        raise DegenerateImageError("degenerate image: cannot fit an all-zero or non-finite field")
    n = len(initial_sites)
    pos0 = site_positions(initial_sites)
    if sigma0 is None:
        sigma0 = (initial_sites[0].density.sigma_x, initial_sites[0].density.sigma_y)
    if n > 1:
        d = np.hypot(*(pos0[:, None] - pos0[None]).transpose(2, 0, 1))
        d[np.diag_indices(n)] = np.inf
        if d.min() < 2 * max(sigma0):
            warnings.warn("two sites overlap within 2 sigma; amplitudes poorly determined",
                          RankDeficiencyWarning, stacklevel=2)
    model = _Model(image, geom, downsample)
    data = model.re
    last = {}

    def evaluate(theta):
        # residual, linear coefficients and projector, cached for the Jacobian
        key = theta.tobytes()
        if last.get("key") != key:
            pos, sx, sy = _unpack(theta, n)
            Phi = model.design(pos, sx, sy)
            proj = _Projector(Phi)
            b = proj.coef(data)
            last.update(key=key, r=data - Phi @ b, b=b, proj=proj)
        return last["r"], last["b"], last["proj"]

    history = []

    def jacobian(theta):
        # full variable-projection Jacobian, including the residual-coupling term
        r, b, proj = evaluate(theta)
        history.append(float(r @ r))
        pos, sx, sy = _unpack(theta, n)
        D = np.zeros((len(data), 2 * n + 2))
        U = np.zeros((3 * n, 2 * n + 2))
        for i in range(n):
            d, u = model.site_derivatives(pos[i], sx, sy, b[3 * i:3 * i + 3], r)
            D[:, 2 * i:2 * i + 2] = d[:2].T
            D[:, 2 * n:] += d[2:].T
            U[3 * i:3 * i + 3, 2 * i:2 * i + 2] = u[:, :2]
            U[3 * i:3 * i + 3, 2 * n:] = u[:, 2:]
        return -(proj.perp(D) + proj.Phi @ linalg.cho_solve(proj.cho, U))

    theta0 = np.concatenate([pos0.ravel(), [sigma0[0], sigma0[1]]])
    lower = np.full(theta0.shape, -np.inf)
    lower[2 * n:] = 1e-3 * min(sigma0)
    try:
        sol = optimize.least_squares(lambda th: evaluate(th)[0], theta0, jac=jacobian,
                                     bounds=(lower, np.inf), method="trf", x_scale="jac",
                                     ftol=ftol, xtol=xtol, gtol=None, max_nfev=max_iter)
    except linalg.LinAlgError as exc:
        raise ConvergenceError(f"design matrix became singular: {exc}") from exc
    if sol.status <= 0:
        raise ConvergenceError(f"fit did not converge within {max_iter} evaluations")
    theta = sol.x
    r, b, _ = evaluate(theta)
    cost = float(r @ r)
    if not history or history[-1] != cost:
        history.append(cost)
    pos, sx, sy = _unpack(theta, n)
    B = b.reshape(n, 3)
    norm = np.sqrt(np.sum(B ** 2, axis=1))
    sign = np.where(B[:, 0] < 0, -1.0, 1.0)
    A = sign * norm
    safe = np.where(norm > 0, A, 1.0)
    a = B / safe[:, None]
    s00 = B[:, 0]
    nrm = np.linalg.norm(s00)
    s = s00 / nrm if nrm > 0 else s00
    residual = (cost + model.im_power) / model.power
    return FitResult(A, pos.copy(), a[:, 0], a[:, 1], a[:, 2], float(sx), float(sy),
                     float(residual), s, int(sol.njev), True, history)


def fitted_field(fit: FitResult, image: ComplexFieldImage, geom: CavityGeometry,
                 nonlocal_only: bool = False) -> np.ndarray:
    """Evaluate the fitted model on the full pixel grid of ``image``."""
    pitch = geom.w0 / image.w0_px
    ny, nx = image.grid.shape
    x = (np.arange(nx) - image.center[0]) * pitch
    y = (np.arange(ny) - image.center[1]) * pitch
    builder = _nonlocal_site_basis if nonlocal_only else _site_basis
    out = np.zeros((ny, nx))
    for i in range(fit.n):
        basis = builder(x, y, fit.positions[i], fit.sigma_x, fit.sigma_y, geom)
        amp = fit.A[i] * np.array([fit.a00[i], fit.a01[i], fit.a10[i]])
        out += np.tensordot(amp, basis, axes=1)
    return out


def local_spin_map(image: ComplexFieldImage, fit: FitResult, geom: CavityGeometry | None = None
                   ) -> ComplexFieldImage:
    """Image with the fitted defocused (nonlocal) fields removed.

    What remains is the contact image of each ensemble, whose sign is the
    fitted spin sign, plus any fit residual and noise.
    """
    geom = CavityGeometry() if geom is None else geom
    if not fit.converged:
        raise ConvergenceError("local map requires a converged fit")
    return image.with_grid(image.grid - fitted_field(fit, image, geom, nonlocal_only=True))
