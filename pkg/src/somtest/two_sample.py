"""Two-sample tests: the SOM chi-squared test and the baselines it is compared with.

Every test maps two samples to a :class:`TestResult`. Larger statistics are
always more extreme and p-values lie in ``(0, 1]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import classifiers
from .exceptions import DegenerateTestError, ShapeError
from .som import CountGrid, MapGeometry, SomModel, TrainSchedule, init_map, project_counts, train
from .stats import NullDescriptor, chi2_sf, normal_sf, permutation_pvalue

__all__ = [
    "CountGrid",
    "TestResult",
    "METHODS",
    "chi2_from_counts",
    "relative_difference",
    "som_two_sample_test",
    "knn_coincidence_test",
    "c2st_test",
    "c2st_pvalue",
    "mmd_block_test",
    "run_test",
]

METHODS = ("som_chi2", "knn_coincidence", "c2st_nn", "c2st_knn", "mmd_b")

# smallest positive normal double; tail functions can underflow below it
_P_FLOOR = float(np.finfo(float).tiny)


@dataclass(frozen=True, eq=False)
class TestResult:
    method: str
    statistic: float
    null: NullDescriptor
    p_value: float
    model: Optional[SomModel] = None
    counts: Optional[CountGrid] = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.p_value <= 1:
            raise ValueError(f"p_value must lie in (0, 1], got {self.p_value}")
        if (self.model is not None) != (self.method == "som_chi2"):
            raise ValueError("a model is attached exactly when method is som_chi2")

    def reject(self, alpha: float) -> bool:
        return self.p_value <= alpha


def _finish_p(p: float) -> float:
    return min(1.0, max(_P_FLOOR, float(p)))


def _pair(X, Z):
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    if X.ndim != 2 or Z.ndim != 2:
        raise ShapeError("samples must be 2-D matrices")
    if X.shape[0] == 0 or Z.shape[0] == 0:
        raise ValueError("both samples must be non-empty")
    if X.shape[1] != Z.shape[1]:
        raise ShapeError(f"samples have {X.shape[1]} and {Z.shape[1]} features")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
        raise ValueError("samples contain non-finite values")
    return X, Z


def chi2_from_counts(grid: CountGrid) -> tuple[float, int]:
    """Chi-squared statistic and degrees of freedom for two count histograms.

    Empty cells are skipped. Sample sizes enter through the scale factors
    ``sqrt(n_z / n_x)`` and ``sqrt(n_x / n_z)``; one degree of freedom is
    removed only when both samples have the same size.
    """
    R = grid.R.astype(float)
    S = grid.S.astype(float)
    n_x, n_z = grid.n_x, grid.n_z
    if n_x == 0 or n_z == 0:
        raise ValueError("both samples must contain at least one point")
    k1 = math.sqrt(n_z / n_x)
    k2 = math.sqrt(n_x / n_z)
    total = R + S
    occupied = total > 0
    stat = float(np.sum((k1 * R[occupied] - k2 * S[occupied]) ** 2 / total[occupied]))
    k = int(np.count_nonzero(occupied))
    dof = k - (1 if n_x == n_z else 0)
    if dof <= 0:
        raise DegenerateTestError(
            f"chi-squared test has {dof} degrees of freedom ({k} occupied cells, equal sizes)"
        )
    return stat, dof


def relative_difference(grid: CountGrid) -> np.ndarray:
    """Per-neuron contrast ``(q - p) / (q + p)`` of the normalized densities.

    ``-1`` marks cells holding only the first sample, ``+1`` cells holding
    only the second, and ``0`` empty or balanced cells.
    """
    if grid.n_x == 0 or grid.n_z == 0:
        raise ValueError("relative difference needs two non-empty samples")
    p = grid.R / grid.n_x
    q = grid.S / grid.n_z
    total = p + q
    out = np.zeros(p.shape, dtype=float)
    np.divide(q - p, total, out=out, where=total > 0)
    return out


def som_two_sample_test(
    X, Z, geometry: MapGeometry = MapGeometry(), schedule: TrainSchedule = TrainSchedule()
) -> TestResult:
    """Chi-squared comparison of two samples projected on a SOM.

    The map is trained on the pooled sample, each sample is projected
    separately and the per-neuron counts are compared with
    :func:`chi2_from_counts`. The trained model and the counts are
    attached to the result.
    """
    X, Z = _pair(X, Z)
    pooled = np.vstack([X, Z])
    model = init_map(geometry, pooled, schedule.init, schedule.seed)
    model = train(model, pooled, schedule)
    grid = project_counts(model, X, Z)
    stat, dof = chi2_from_counts(grid)
    p = chi2_sf(stat, dof) if stat > 0 else 1.0
    return TestResult(
        "som_chi2", stat, NullDescriptor.chi_squared(dof), _finish_p(p), model=model, counts=grid
    )


def _neighbor_table(pooled: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other points of every pooled row.

    Distance ties are resolved in favor of the lower index.
    """
    n = pooled.shape[0]
    table = np.empty((n, k), dtype=np.intp)
    step = max(1, (1 << 22) // n)
    for start in range(0, n, step):
        stop = min(n, start + step)
        d = cdist(pooled[start:stop], pooled, "sqeuclidean")
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        table[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return table


def _coincidences(labels: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Same-label neighbor count for one label vector or a stack of them."""
    labels = np.atleast_2d(labels)
    same = labels[:, :, None] == labels[:, table]
    return same.sum(axis=(1, 2))


def knn_coincidence_test(
    X, Z, k: int = 5, n_perm: int = 1000, seed: int = 0, exact: bool = False
) -> TestResult:
    """Nearest-neighbor coincidence test with a permutation null.

    The statistic counts, over every point of the pooled sample, how many
    of its ``k`` nearest neighbors (self excluded) carry the same sample
    label. The null comes from ``n_perm`` random relabelings and the
    add-one p-value. With ``exact=True`` every assignment of the labels is
    enumerated instead and the p-value is the exact fraction of
    assignments at least as extreme as the observed one.
    """
    X, Z = _pair(X, Z)
    pooled = np.vstack([X, Z])
    n_x, n = X.shape[0], pooled.shape[0]
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the pooled size {n}")
    labels = np.concatenate([np.ones(n_x, dtype=np.int8), -np.ones(n - n_x, dtype=np.int8)])
    table = _neighbor_table(pooled, k)
    observed = float(_coincidences(labels, table)[0])

    if exact:
        n_assign = math.comb(n, n_x)
        if n_assign > 200_000:
            raise ValueError(f"exact enumeration would need {n_assign} label assignments")
        stack = np.full((n_assign, n), -1, dtype=np.int8)
        for row, positives in enumerate(itertools.combinations(range(n), n_x)):
            stack[row, list(positives)] = 1
        ref = _coincidences(stack, table).astype(float)
        p = np.count_nonzero(ref >= observed) / n_assign
        null = NullDescriptor.permutation(ref, exact=True)
    else:
        if int(n_perm) != n_perm or n_perm < 1:
            raise ValueError(f"n_perm must be a positive integer, got {n_perm}")
        rng = np.random.default_rng(seed)
        ref = np.empty(n_perm, dtype=float)
        chunk = max(1, (1 << 22) // (n * k))
        for start in range(0, n_perm, chunk):
            stop = min(n_perm, start + chunk)
            stack = rng.permuted(np.tile(labels, (stop - start, 1)), axis=1)
            ref[start:stop] = _coincidences(stack, table)
        p = permutation_pvalue(observed, ref)
        null = NullDescriptor.permutation(ref)
    return TestResult("knn_coincidence", observed, null, _finish_p(p))


def _stratified_split(labels: np.ndarray, test_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    train_idx, test_idx = [], []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(round(test_fraction * members.size))
        n_test = min(max(n_test, 1), members.size - 1)
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def c2st_test(
    X, Z, classifier: str = "nn", test_fraction: float = 0.5, seed: int = 0, k: int = 5,
    epochs: int = 200,
) -> TestResult:
    """Classifier two-sample test on a stratified train/test split.

    The held-out accuracy is compared with its null distribution
    ``N(1/2, 1 / (4 n_test))``.
    """
    X, Z = _pair(X, Z)
    if X.shape[0] < 4 or Z.shape[0] < 4:
        raise ValueError("each sample needs at least 4 rows for a train/test split")
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if classifier not in ("nn", "knn"):
        raise ValueError(f"classifier must be 'nn' or 'knn', got {classifier!r}")
    pooled = np.vstack([X, Z])
    labels = np.concatenate([np.ones(X.shape[0]), -np.ones(Z.shape[0])])
    rng = np.random.default_rng(seed)
    tr, te = _stratified_split(labels, test_fraction, rng)
    if classifier == "nn":
        model = classifiers.mlp_fit(pooled[tr], labels[tr], epochs=epochs, seed=seed)
        acc = classifiers.mlp_accuracy(model, pooled[te], labels[te])
    else:
        k_eff = min(k, tr.size)
        acc = classifiers.knn_accuracy(pooled[tr], labels[tr], pooled[te], labels[te], k=k_eff)
    method = "c2st_nn" if classifier == "nn" else "c2st_knn"
    variance = 1.0 / (4.0 * te.size)
    return TestResult(method, float(acc), NullDescriptor.normal(0.5, variance),
                      _finish_p(c2st_pvalue(acc, te.size)))


def c2st_pvalue(accuracy: float, n_test: int) -> float:
    """Upper-tail p-value of a held-out accuracy under ``N(1/2, 1 / (4 n_test))``."""
    if n_test < 1:
        raise ValueError(f"n_test must be >= 1, got {n_test}")
    z = (accuracy - 0.5) / math.sqrt(1.0 / (4.0 * n_test))
    return normal_sf(z)


def median_bandwidth(pooled: np.ndarray, rng, max_points: int = 1000) -> float:
    """Median pairwise distance of (a subsample of) the pooled data; 1.0 if that is zero."""
    if pooled.shape[0] > max_points:
        pooled = pooled[rng.choice(pooled.shape[0], max_points, replace=False)]
    if pooled.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def _block_mmd2(xb: np.ndarray, zb: np.ndarray, sigma: float) -> float:
    """Unbiased squared MMD of paired points; diagonal of every kernel matrix is dropped."""
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * cdist(xb, xb, "sqeuclidean"))
    kzz = np.exp(-gamma * cdist(zb, zb, "sqeuclidean"))
    kxz = np.exp(-gamma * cdist(xb, zb, "sqeuclidean"))
    h = kxx + kzz - kxz - kxz.T
    b = xb.shape[0]
    return float((h.sum() - np.trace(h)) / (b * (b - 1)))


def mmd_block_test(
    X, Z, block_size: Optional[int] = None, bandwidth: Optional[float] = None, seed: int = 0
) -> TestResult:
    """Block-averaged MMD test (MMD-B) with a Gaussian kernel.

    Both samples are shuffled and cut into ``n // block_size`` paired
    blocks. The statistic is the studentized mean of the per-block
    unbiased squared MMD estimates, referred to a standard normal.
    ``block_size`` defaults to ``floor(sqrt(n))``.
    """
    X, Z = _pair(X, Z)
    n = X.shape[0]
    if Z.shape[0] != n:
        raise ValueError(f"MMD-B needs balanced samples, got {n} and {Z.shape[0]}")
    if block_size is None:
        block_size = max(2, math.isqrt(n))
    if int(block_size) != block_size or block_size < 2:
        raise ValueError(f"block_size must be an integer >= 2, got {block_size}")
    n_blocks = n // block_size
    if n_blocks < 2:
        raise DegenerateTestError(f"MMD-B needs at least 2 blocks, got {n_blocks}")
    rng = np.random.default_rng(seed)
    if bandwidth is None:
        sigma = median_bandwidth(np.vstack([X, Z]), rng)
    else:
        if not bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
        sigma = float(bandwidth)
    X = X[rng.permutation(n)]
    Z = Z[rng.permutation(n)]
    values = np.array([
        _block_mmd2(X[j * block_size:(j + 1) * block_size], Z[j * block_size:(j + 1) * block_size], sigma)
        for j in range(n_blocks)
    ])
    sd = float(np.std(values, ddof=1))
    if not sd > 1e-15 * max(1.0, float(np.max(np.abs(values)))):
        raise DegenerateTestError("block MMD estimates have zero variance")
    stat = math.sqrt(n_blocks) * float(values.mean()) / sd
    return TestResult("mmd_b", stat, NullDescriptor.normal(0.0, 1.0), _finish_p(normal_sf(stat)))


def run_test(method: str, X, Z, seed: int = 0, geometry: MapGeometry = MapGeometry(),
             schedule: Optional[TrainSchedule] = None, **options) -> TestResult:
    """Dispatch to a test by method id, seeding every random choice from ``seed``."""
    if method == "som_chi2":
        if schedule is None:
            schedule = TrainSchedule(seed=seed)
        return som_two_sample_test(X, Z, geometry, schedule)
    if method == "knn_coincidence":
        return knn_coincidence_test(X, Z, seed=seed, **options)
    if method == "c2st_nn":
        return c2st_test(X, Z, "nn", seed=seed, **options)
    if method == "c2st_knn":
        return c2st_test(X, Z, "knn", seed=seed, **options)
    if method == "mmd_b":
        return mmd_block_test(X, Z, seed=seed, **options)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
