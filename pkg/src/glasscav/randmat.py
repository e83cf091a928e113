"""Random-matrix diagnostics for disordered coupling ensembles."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .cavity_optics import CavityGeometry
from .coupling import CouplingMatrix, point_source_couplings

SEMICIRCLE_RADIUS = 2.0
HELLINGER_EDGES = np.linspace(-3.05, 3.05, 62)
MC_TRIPLES = 100_000
EXHAUSTIVE_MAX_N = 20
STATISTICS = ("hellinger", "p_neg", "p_frustrated_triple", "pearson")


def _as_array(J) -> np.ndarray:
    return np.asarray(J.J if isinstance(J, CouplingMatrix) else J, dtype=float)


def eigen_spectrum_normalized(J) -> np.ndarray:
    """Sorted eigenvalues divided by their standard deviation (no mean shift).

    Accepts a single matrix or a stack ``(..., n, n)``; normalization is per matrix.
    """
    J = _as_array(J)
    if J.shape[-1] < 2:
        raise ValueError("need at least a 2x2 matrix")
    ev = np.linalg.eigvalsh(J)
    sd = ev.std(axis=-1, keepdims=True)
    if np.any(sd == 0):
        raise ValueError("spectrum has zero spread")
    return ev / sd


def _semicircle_cdf(x):
    x = np.clip(x, -SEMICIRCLE_RADIUS, SEMICIRCLE_RADIUS)
    return (x * np.sqrt(4.0 - x * x) / 2.0 + 2.0 * np.arcsin(x / 2.0)) / (2.0 * np.pi) + 0.5


def semicircle_bin_probabilities(edges: np.ndarray = HELLINGER_EDGES) -> np.ndarray:
    """Semicircle mass per bin plus a final (always empty) overflow entry."""
    return np.append(np.diff(_semicircle_cdf(np.asarray(edges, dtype=float))), 0.0)


def _binned(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Counts per bin with everything outside the range pooled in one overflow bin."""
    counts = np.histogram(values, edges)[0]
    return np.append(counts, values.size - counts.sum())


def hellinger_distance(p, q) -> float:
    """``sqrt(1/2 sum (sqrt p - sqrt q)^2)`` for two normalized probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must share a binning")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("empty distribution")
    p = p / p.sum()
    q = q / q.sum()
    bc = float(np.sum(np.sqrt(p * q)))
    return float(np.sqrt(max(0.0, 1.0 - bc)))


def hellinger_to_semicircle(spectra, edges: np.ndarray = HELLINGER_EDGES) -> float:
    """Hellinger distance between pooled normalized eigenvalues and the semicircle."""
    ev = np.asarray(spectra, dtype=float).ravel()
    if ev.size == 0:
        raise ValueError("empty spectrum")
    return hellinger_distance(_binned(ev, edges), semicircle_bin_probabilities(edges))


# ---------------------------------------------------------------------------
# sign statistics


@dataclass(frozen=True)
class FrustrationStats:
    p_neg: float
    p_frustrated_triple: float
    pearson: float


def _triples(n: int, rng: np.random.Generator | None) -> np.ndarray:
    if n <= EXHAUSTIVE_MAX_N or rng is None:
        return np.array(list(combinations(range(n), 3)), dtype=np.int64).reshape(-1, 3)
    t = np.sort(np.array([rng.choice(n, 3, replace=False) for _ in range(MC_TRIPLES)]), axis=1)
    return t


def _shared_vertex_pairs(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    keep = (i != j) & (j != k) & (i != k)
    return i[keep], j[keep], k[keep]


def _per_draw(J: np.ndarray, triples: np.ndarray, pairs) -> np.ndarray:
    """Per-draw (p_neg, p_frustrated, sums for the pooled Pearson correlation)."""
    n = J.shape[-1]
    iu = np.triu_indices(n, 1)
    off = J[:, iu[0], iu[1]]
    p_neg = (off < 0).mean(axis=1)
    a, b, c = triples.T
    prod = J[:, a, b] * J[:, b, c] * J[:, c, a]
    p_fr = (prod < 0).mean(axis=1)
    i, j, k = pairs
    x = J[:, i, j]
    y = J[:, j, k]
    sums = np.stack([np.full(len(J), x.shape[1], dtype=float), x.sum(1), y.sum(1),
                     (x * x).sum(1), (y * y).sum(1), (x * y).sum(1)], axis=1)
    return np.column_stack([p_neg, p_fr, sums])


def _pearson_from_sums(s: np.ndarray) -> float:
    m, sx, sy, sxx, syy, sxy = s
    cov = sxy / m - sx * sy / m ** 2
    vx = sxx / m - (sx / m) ** 2
    vy = syy / m - (sy / m) ** 2
    if vx <= 0 or vy <= 0:
        return float("nan")
    return float(cov / np.sqrt(vx * vy))


def frustration_stats(J, seed: int = 0) -> FrustrationStats:
    """Bond-sign and triangle statistics pooled over a matrix ensemble.

    ``J`` may be one matrix or a stack ``(draws, n, n)``; only off-diagonal
    entries enter. Triples are exhaustive up to ``n = 20`` and sampled above.
    """
    J = _as_array(J)
    if J.ndim == 2:
        J = J[None]
    n = J.shape[-1]
    if n < 3:
        raise ValueError("need n >= 3 for triangle statistics")
    trip = _triples(n, np.random.default_rng(seed))
    stats = _per_draw(J, trip, _shared_vertex_pairs(n))
    return FrustrationStats(float(stats[:, 0].mean()), float(stats[:, 1].mean()),
                            _pearson_from_sums(stats[:, 2:].sum(axis=0)))


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    """Statistics on a grid of system sizes and disorder widths (in waists)."""

    n_values: list
    w_values: list
    draws: int
    seed: int
    values: dict = field(default_factory=dict)  # (n, w) -> {stat: (value, stderr)}

    def cell(self, n: int, w: float) -> dict:
        return {k: v[0] for k, v in self.values[(n, w)].items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["n", "w_over_w0", "statistic", "value", "stderr"])
        for n in self.n_values:
            for w in self.w_values:
                for name in STATISTICS:
                    v, e = self.values[(n, w)][name]
                    wr.writerow([n, repr(float(w)), name, repr(float(v)), repr(float(e))])
        return buf.getvalue()


def _cell_key(n: int, w: float) -> int:
    return int(n) * 1_000_000_000 + int(round(float(w) * 1e6))


def _draw_positions(n: int, w: float, seed: int, draws: range, w0: float) -> np.ndarray:
    out = np.empty((len(draws), n, 2))
    key = _cell_key(n, w)
    for r, d in enumerate(draws):
        rng = np.random.default_rng([seed, key, d])
        out[r] = rng.normal(0.0, w * w0, (n, 2))
    return out


def _chunk(n, w, seed, draws, geom, trip, pairs):
    J = point_source_couplings(_draw_positions(n, w, seed, draws, geom.w0), geom)
    counts = np.empty((len(draws), len(HELLINGER_EDGES)), dtype=np.int64)
    ev = np.linalg.eigvalsh(J)
    sd = ev.std(axis=1, keepdims=True)
    # guard against a spectrum with no spread
    ev = np.where(sd > 0, ev / np.where(sd > 0, sd, 1.0), 0.0)
    for r in range(len(draws)):
        counts[r] = _binned(ev[r], HELLINGER_EDGES)
    return counts, _per_draw(J, trip, pairs)


def sweep_cell(n: int, w: float, draws: int, seed: int = 0, geom: CavityGeometry | None = None,
               threads: int = 1, n_boot: int = 200) -> dict:
    """All statistics for one ``(n, w/w0)`` cell with standard errors.

    Position draws use independent streams keyed by ``(seed, cell, draw)``, so
    the result does not depend on ``threads``.
    """
    if draws < 2:
        raise ValueError("need at least two draws per cell")
    if n < 3 or w < 0:
        raise ValueError("need n >= 3 and w >= 0")
    geom = CavityGeometry() if geom is None else geom
    trip = _triples(n, np.random.default_rng([seed, _cell_key(n, w)]))
    pairs = _shared_vertex_pairs(n)
    bounds = np.linspace(0, draws, max(1, threads) * 4 + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        parts = list(ex.map(lambda r: _chunk(n, w, seed, r, geom, trip, pairs), chunks))
    counts = np.concatenate([p[0] for p in parts])
    per = np.concatenate([p[1] for p in parts])

    sc = semicircle_bin_probabilities()
    hell = hellinger_distance(counts.sum(0), sc)
    rng = np.random.default_rng([seed, _cell_key(n, w), 1])
    weights = rng.multinomial(draws, np.full(draws, 1.0 / draws), size=n_boot).astype(float)
    boot_counts = weights @ counts
    hell_b = [hellinger_distance(c, sc) for c in boot_counts]
    boot_sums = weights @ per[:, 2:]
    pear_b = np.array([_pearson_from_sums(s) for s in boot_sums])
    pear_b = pear_b[np.isfinite(pear_b)]
    pear_se = float(np.std(pear_b, ddof=1)) if pear_b.size > 1 else float("nan")
    sqrt_d = np.sqrt(draws)
    return {
        "hellinger": (hell, float(np.std(hell_b, ddof=1))),
        "p_neg": (float(per[:, 0].mean()), float(per[:, 0].std(ddof=1) / sqrt_d)),
        "p_frustrated_triple": (float(per[:, 1].mean()), float(per[:, 1].std(ddof=1) / sqrt_d)),
        "pearson": (_pearson_from_sums(per[:, 2:].sum(0)), pear_se),
    }


def sweep_w(n_values, w_values, draws: int, seed: int = 0, geom: CavityGeometry | None = None,
            threads: int = 1) -> SweepResult:
    """Sweep the disorder width for each system size.

    Sites are drawn from an isotropic 2D Gaussian of per-axis standard
    deviation ``w * w0`` about the cavity axis and coupled by the point-source
    Green's function.
    """
    n_values = [int(n) for n in np.atleast_1d(n_values)]
    w_values = [float(w) for w in np.atleast_1d(w_values)]
    res = SweepResult(n_values, w_values, int(draws), int(seed))
    for n in n_values:
        for w in w_values:
            res.values[(n, w)] = sweep_cell(n, w, draws, seed, geom, threads)
    return res


def goe_matrix(n: int, seed: int = 0) -> np.ndarray:
    """Sample of the Gaussian orthogonal ensemble with zero diagonal."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    J = (a + a.T) / np.sqrt(2.0)
    np.fill_diagonal(J, 0.0)
    return J
