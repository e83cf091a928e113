"""Replica statistics: overlaps, Parisi function, ultrametricity, entropy.

Every function accepts either a :class:`~glasscav.replica_dynamics.ReplicaEnsemble`
or a plain ``(n_reps, n)`` array of unit-norm configurations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.cluster import hierarchy
from scipy.optimize import lsq_linear
from scipy.spatial.distance import squareform

from .replica_dynamics import ReplicaEnsemble


def _spins(ensemble) -> np.ndarray:
    s = ensemble.spins if isinstance(ensemble, ReplicaEnsemble) else ensemble
    s = np.asarray(s, dtype=float)
    if s.ndim != 2:
        raise ValueError("expected a (n_reps, n) array of configurations")
    return s


# ---------------------------------------------------------------------------
# overlaps and histograms


@dataclass
class Histogram:
    """Binned probability distribution with per-bin standard errors."""

    bin_edges: np.ndarray
    probabilities: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.probabilities)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if len(self.bin_edges) != len(self.probabilities) + 1:
            raise ValueError("need one more edge than bins")

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bins(self) -> int:
        return len(self.probabilities)


def overlap_matrix(ensemble, binarize: bool = False) -> np.ndarray:
    """``Q_ab = s^a . s^b`` for unit-norm configurations.

    With ``binarize`` each configuration is replaced by ``sign(s) / sqrt(n)``
    first, so overlaps lie on the lattice ``{-1, -1 + 2/n, ..., 1}``.
    """
    s = _spins(ensemble)
    if binarize:
        s = np.where(s < 0, -1.0, 1.0) / np.sqrt(s.shape[1])
    norms = np.sum(s * s, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise ValueError("configurations must have unit norm")
    Q = s @ s.T
    Q = 0.5 * (Q + Q.T)
    np.fill_diagonal(Q, 1.0)
    return np.clip(Q, -1.0, 1.0)


def _offdiag_values(Q: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(Q.shape[0], 1)
    return Q[iu]


def _overlap_counts(q: np.ndarray, bins: int, symmetrize: bool) -> np.ndarray:
    """Histogram counts of overlap values on [-1, 1].

    With ``symmetrize`` the counts are built from ``|q|`` on the positive half
    and mirrored, so the result is exactly invariant under replica sign flips.
    """
    if not symmetrize:
        return np.histogram(q, bins=bins, range=(-1.0, 1.0))[0].astype(float)
    if bins % 2:
        raise ValueError("symmetrized histograms need an even number of bins")
    half = np.histogram(np.abs(q), bins=bins // 2, range=(0.0, 1.0))[0].astype(float)
    return np.concatenate([half[::-1], half]) / 2.0


def overlap_distribution(Q: np.ndarray, bins: int = 50, symmetrize: bool = True,
                         n_boot: int = 0, seed: int = 0) -> Histogram:
    """Distribution of off-diagonal overlaps.

    Parameters
    ----------
    Q : ndarray
        Overlap matrix from at least two replicas.
    bins : int
        Number of bins on [-1, 1].
    symmetrize : bool
        Average ``P(q)`` with ``P(-q)``.
    n_boot : int
        If positive, bootstrap standard errors over replicas (pairs of copies
        of the same replica are skipped).
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] < 2:
        raise ValueError("need at least two replicas")
    q = _offdiag_values(Q)
    counts = _overlap_counts(q, bins, symmetrize)
    p = counts / counts.sum()
    edges = np.linspace(-1.0, 1.0, bins + 1)
    stderr = np.zeros_like(p)
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        m = Q.shape[0]
        boots = np.empty((n_boot, bins))
        for k in range(n_boot):
            idx = rng.integers(0, m, m)
            a, b = np.triu_indices(m, 1)
            keep = idx[a] != idx[b]
            c = _overlap_counts(Q[idx[a][keep], idx[b][keep]], bins, symmetrize)
            boots[k] = c / max(c.sum(), 1)
        stderr = boots.std(axis=0, ddof=1)
    return Histogram(edges, p, stderr)


def parisi_distribution(histograms, n_boot: int = 1000, seed: int = 0) -> Histogram:
    """Unweighted disorder average of overlap histograms.

    The standard error is bootstrapped over realizations.
    """
    hs = list(histograms)
    if len(hs) < 2:
        raise ValueError("need at least two realizations")
    edges = hs[0].bin_edges
    for h in hs[1:]:
        if h.bin_edges.shape != edges.shape or not np.allclose(h.bin_edges, edges):
            raise ValueError("histograms do not share a common binning")
    P = np.array([h.probabilities for h in hs])
    mean = P.mean(axis=0)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(hs), (n_boot, len(hs)))
    boots = P[idx].mean(axis=1)
    stderr = boots.std(axis=0, ddof=1)
    # bins where every realization agrees keep that value exactly, with zero spread
    same = np.all(P == P[0], axis=0)
    mean[same] = P[0, same]
    stderr[same] = 0.0
    return Histogram(edges, mean, stderr)


# ---------------------------------------------------------------------------
# Parisi function


@dataclass(frozen=True)
class ParisiFit:
    """``q(x) = min(a x^2 + b x + c, q_EA)`` with the breakpoint at ``x_star``."""

    q_EA: float
    a: float
    b: float
    c: float
    x_star: float
    residual: float
    degenerate: bool = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        quad = self.a * x ** 2 + self.b * x + self.c
        return np.where(x >= self.x_star, self.q_EA, np.minimum(quad, self.q_EA))


@dataclass
class ParisiResult:
    x: np.ndarray
    q: np.ndarray
    fit: ParisiFit


def _abs_q_cdf(hist: Histogram):
    """Piecewise-linear CDF of ``|q|`` on [0, 1] from a histogram on [-1, 1] or [0, 1]."""
    edges, p = hist.bin_edges, hist.probabilities
    centers = hist.bin_centers
    if edges[0] < 0:
        # fold onto |q|; edges symmetric about zero assumed
        pos = centers > 0
        e_pos = edges[edges >= 0]
        folded = p[pos] + p[~pos][::-1]
        return e_pos, folded
    return edges, p


def parisi_function(source, n_points: int = 200, x_grid: int = 401) -> ParisiResult:
    """Generalized inverse of the cumulative ``|q|`` distribution and its fit.

    Parameters
    ----------
    source : Histogram or array_like
        A (symmetrized) overlap histogram, whose mass is spread uniformly
        within each bin, or raw overlap samples, used exactly.
    n_points : int
        Number of ``x`` samples (bin midpoints of [0, 1]).
    x_grid : int
        Number of candidate breakpoints in the grid search.
    """
    x = (np.arange(n_points) + 0.5) / n_points
    if isinstance(source, Histogram):
        edges, mass = _abs_q_cdf(source)
        if mass.sum() <= 0:
            raise ValueError("empty overlap distribution")
        mass = mass / mass.sum()
        occupied = np.flatnonzero(mass > 0)
        if occupied.size == 1:
            # a single atom; an atom in the top bin is the |q| = 1 goalpost
            k = occupied[0]
            v = edges[-1] if k == len(mass) - 1 else 0.5 * (edges[k] + edges[k + 1])
            return _degenerate(x, float(v))
        cdf = np.concatenate([[0.0], np.cumsum(mass)])
        k = np.clip(np.searchsorted(cdf, x, side="right") - 1, 0, len(mass) - 1)
        frac = np.clip((x - cdf[k]) / np.where(mass[k] > 0, mass[k], 1.0), 0.0, 1.0)
        q = edges[k] + frac * (edges[k + 1] - edges[k])
    else:
        samples = np.sort(np.abs(np.asarray(source, dtype=float).ravel()))
        if samples.size == 0:
            raise ValueError("no overlap samples")
        if np.all(samples == samples[0]):
            return _degenerate(x, float(samples[0]))
        k = np.floor(x * samples.size).astype(int)
        q = samples[np.clip(k, 0, samples.size - 1)]
    q = np.maximum.accumulate(q)
    return ParisiResult(x, q, fit_parisi(x, q, x_grid))


def _degenerate(x: np.ndarray, v: float) -> ParisiResult:
    fit = ParisiFit(v, 0.0, 0.0, v, 0.0, 0.0, degenerate=True)
    return ParisiResult(x, np.full_like(x, v), fit)


def fit_parisi(x: np.ndarray, q: np.ndarray, x_grid: int = 401) -> ParisiFit:
    """Least-squares quadratic-then-plateau fit, non-decreasing by construction.

    For each breakpoint ``x*`` the curve on ``[0, x*]`` is written as
    ``c + d0 x + (d1 - d0) x^2 / (2 x*)`` with slopes ``d0, d1 >= 0`` at the
    ends, and ``q_EA`` is its value at ``x*``; the coefficients solve a
    bounded linear least-squares problem.
    """
    best = None
    for xs in np.linspace(1.0 / x_grid, 1.0, x_grid):
        t = np.minimum(x, xs)
        M = np.column_stack([np.ones_like(t), t - t ** 2 / (2 * xs), t ** 2 / (2 * xs)])
        res = lsq_linear(M, q, bounds=([-np.inf, 0, 0], [np.inf, np.inf, np.inf]))
        cost = float(np.sum((M @ res.x - q) ** 2))
        if best is None or cost < best[0] - 1e-15:
            best = (cost, xs, res.x)
    cost, xs, (c, d0, d1) = best
    a = (d1 - d0) / (2 * xs)
    q_ea = c + d0 * xs + a * xs ** 2
    return ParisiFit(float(q_ea), float(a), float(d0), float(c), float(xs), cost)


# ---------------------------------------------------------------------------
# ultrametricity


@dataclass
class KResult:
    values: np.ndarray
    histogram: Histogram
    mean: float
    fwhm: float
    sigma_d: float


def _kde_fwhm(values: np.ndarray, n_eff: int, grid: int = 4001) -> float:
    """FWHM of the main peak of a Gaussian KDE with Silverman's bandwidth.

    The bandwidth uses ``n_eff`` independent observations: the replicas, not
    the strongly dependent triples built from them.
    """
    sd = float(np.std(values))
    if sd == 0 or values.size < 2:
        return 0.0
    h = sd * (n_eff * 3.0 / 4.0) ** (-0.2)
    counts, edges = np.histogram(values, bins=2048)
    centers = 0.5 * (edges[1:] + edges[:-1])
    w = counts / counts.sum()
    xs = np.linspace(values.min() - 5 * h, values.max() + 5 * h, grid)
    keep = w > 0
    dens = np.exp(-0.5 * ((xs[:, None] - centers[keep][None, :]) / h) ** 2) @ w[keep]
    i = int(np.argmax(dens))
    half = dens[i] / 2
    left = i
    while left > 0 and dens[left] > half:
        left -= 1
    right = i
    while right < grid - 1 and dens[right] > half:
        right += 1

    def cross(j0, j1):
        return xs[j0] + (half - dens[j0]) * (xs[j1] - xs[j0]) / (dens[j1] - dens[j0])

    xl = cross(left, left + 1) if dens[left] <= half else xs[left]
    xr = cross(right - 1, right) if dens[right] <= half else xs[right]
    return float(xr - xl)


def k_correlator(Q: np.ndarray, bins: int = 50, chunk: int = 200_000) -> KResult:
    """Ultrametricity correlator over every replica triple.

    For each triple the distances ``d = 1 - |q|`` are sorted and
    ``K = (d_max - d_mid) / sigma_d`` with ``sigma_d`` the standard deviation
    of all pairwise distances. Zero spread gives ``K = 0`` everywhere.
    """
    Q = np.asarray(Q, dtype=float)
    m = Q.shape[0]
    if m < 3:
        raise ValueError("need at least three replicas")
    D = 1.0 - np.abs(Q)
    sd = float(np.std(_offdiag_values(D)))
    trip = np.array(list(combinations(range(m), 3)), dtype=np.int64)
    K = np.empty(len(trip))
    for start in range(0, len(trip), chunk):
        t = trip[start:start + chunk]
        d = np.stack([D[t[:, 0], t[:, 1]], D[t[:, 1], t[:, 2]], D[t[:, 0], t[:, 2]]])
        d.sort(axis=0)
        K[start:start + chunk] = (d[2] - d[1]) / sd if sd > 0 else 0.0
    hi = max(float(K.max()), 1e-12)
    counts = np.histogram(K, bins=bins, range=(0.0, hi))[0].astype(float)
    hist = Histogram(np.linspace(0.0, hi, bins + 1), counts / counts.sum())
    return KResult(K, hist, float(K.mean()), _kde_fwhm(K, m), sd)


# ---------------------------------------------------------------------------
# clustering


@dataclass
class Dendrogram:
    """Agglomerative merge tree in scipy linkage format plus the leaf order."""

    linkage: np.ndarray
    order: np.ndarray
    method: str
    use_abs: bool = True

    @property
    def heights(self) -> np.ndarray:
        return self.linkage[:, 2]

    def depth(self, decimals: int = 9) -> int:
        """Number of distinct non-zero merge heights."""
        h = np.round(self.heights, decimals)
        return int(np.unique(h[h > 0]).size)

    def root_split(self) -> np.ndarray:
        """Labels (0 or 1) of the two subtrees joined at the root."""
        return hierarchy.fcluster(self.linkage, 2, criterion="maxclust") - 1

    def to_json(self) -> str:
        merges = [{"left": int(a), "right": int(b), "height": float(h), "size": int(c)}
                  for a, b, h, c in self.linkage]
        return json.dumps({"method": self.method, "use_abs": self.use_abs,
                           "order": self.order.tolist(), "merges": merges}, indent=1)


def cluster_replicas(Q: np.ndarray, linkage: str = "average", use_abs: bool = True) -> Dendrogram:
    """Hierarchical clustering on ``d = 1 - |q|`` (or ``1 - q``)."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape[0] < 2:
        raise ValueError("need at least two replicas")
    D = 1.0 - (np.abs(Q) if use_abs else Q)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    Z = hierarchy.linkage(squareform(np.clip(D, 0.0, None), checks=False), method=linkage)
    return Dendrogram(Z, hierarchy.leaves_list(Z), linkage, use_abs)


# ---------------------------------------------------------------------------
# entropy and magnetization


def _class_counts(spins: np.ndarray) -> np.ndarray:
    """Counts of sign patterns up to global flip, one entry per class."""
    signs = np.where(spins < 0, -1, 1).astype(np.int8)
    signs = signs * signs[:, :1]  # canonical representative: first spin up
    _, counts = np.unique(signs, axis=0, return_counts=True)
    return counts


def _entropy_from_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    # each class splits evenly between a pattern and its mirror image
    return float(1.0 - np.sum(p * np.log2(p)))


@dataclass(frozen=True)
class EntropyResult:
    plugin: float
    jackknife: float


def shannon_entropy_jackknife(ensemble) -> EntropyResult:
    """Plug-in and jackknife Shannon entropy (bits) of Z2-symmetrized sign patterns."""
    counts = _class_counts(_spins(ensemble))
    total = int(counts.sum())
    if total < 2:
        raise ValueError("need at least two replicas")
    h = _entropy_from_counts(counts)
    # leave-one-out: removing any member of class k gives the same entropy
    loo = 0.0
    for k, c in enumerate(counts):
        reduced = counts.copy()
        reduced[k] -= 1
        loo += c * _entropy_from_counts(reduced)
    loo /= total
    return EntropyResult(h, total * h - (total - 1) * loo)


def entropy_from_class_counts(counts) -> EntropyResult:
    """Entropy estimates from Z2-class counts directly."""
    counts = np.asarray(counts, dtype=np.int64)
    counts = counts[counts > 0]
    total = int(counts.sum())
    h = _entropy_from_counts(counts)
    loo = sum(c * _entropy_from_counts(np.where(np.arange(len(counts)) == k, counts - 1, counts))
              for k, c in enumerate(counts)) / total
    return EntropyResult(h, total * h - (total - 1) * loo)


@dataclass
class MagnetizationStats:
    m: np.ndarray
    histogram: Histogram
    mean: float
    mean_abs: float
    stderr: float


def magnetization_stats(ensemble, bins: int | None = None) -> MagnetizationStats:
    """``m = (1/n) sum_i sign(s_i)`` per replica and its distribution."""
    s = _spins(ensemble)
    n = s.shape[1]
    total = np.where(s < 0, -1, 1).sum(axis=1)
    m = total / n
    bins = n + 1 if bins is None else bins
    # m lives on the lattice {-1, -1 + 2/n, ..., 1}; center one bin on each value
    half = 1.0 / n if bins == n + 1 else 0.0
    edges = np.linspace(-1.0 - half, 1.0 + half, bins + 1)
    counts = np.histogram(m, bins=edges)[0].astype(float)
    se = float(m.std(ddof=1) / np.sqrt(len(m))) if len(m) > 1 else 0.0
    # integer sums keep the mean exact, e.g. zero for a flip-paired ensemble
    return MagnetizationStats(m, Histogram(edges, counts / counts.sum()), int(total.sum()) / (n * len(m)),
                              int(np.abs(total).sum()) / (n * len(m)), se)


def bootstrap_errors(statistic, ensemble, n_boot: int = 1000, seed: int = 0) -> np.ndarray:
    """Standard deviation of ``statistic`` over replica resamples with replacement."""
    s = _spins(ensemble)
    rng = np.random.default_rng(seed)
    m = s.shape[0]
    vals = [np.asarray(statistic(s[rng.integers(0, m, m)]), dtype=float) for _ in range(n_boot)]
    return np.std(np.array(vals), axis=0, ddof=1)


# ---------------------------------------------------------------------------
# synthetic ensembles


def paramagnet_ensemble(n: int, n_reps: int, seed: int = 0) -> np.ndarray:
    """Independent uniformly random sign configurations, unit normalized."""
    rng = np.random.default_rng(seed)
    return rng.choice([-1.0, 1.0], size=(n_reps, n)) / np.sqrt(n)


def hierarchical_ensemble(weights, branching, copies: int = 1) -> np.ndarray:
    """Ensemble with exactly ultrametric overlaps built from orthonormal directions.

    ``weights`` gives the squared overlap carried by each tree level (summing to
    one); ``branching`` the number of children per level. Replicas sharing the
    first ``k`` levels overlap by ``sum(weights[:k])``.
    """
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(branching) or not np.isclose(weights.sum(), 1.0):
        raise ValueError("one weight per level, summing to one")
    leaves = list(np.ndindex(*branching))
    # one orthonormal direction per tree node
    nodes = {}
    for leaf in leaves:
        for k in range(1, len(branching) + 1):
            nodes.setdefault(leaf[:k], len(nodes))
    dim = len(nodes)
    out = []
    for leaf in leaves:
        v = np.zeros(dim)
        for k in range(1, len(branching) + 1):
            v[nodes[leaf[:k]]] = np.sqrt(weights[k - 1])
        out.extend([v] * copies)
    return np.array(out)
