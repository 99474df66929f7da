"""Synthetic generators, information measures and Monte-Carlo power runs."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import PowerRunError
from .som import MapGeometry, TrainSchedule, bmus, init_map, train
from .two_sample import METHODS, run_test

__all__ = [
    "FAMILIES",
    "GeneratorSpec",
    "PowerReport",
    "wishart",
    "sample_pair",
    "kl_knn_estimate",
    "kbest_scores",
    "kbest_order",
    "rejection_rate",
    "power_run",
    "som_classifier_cv",
]

FAMILIES = ("gauss_location", "gauss_scale", "gauss_fair_location", "gauss_fair_scale")


@dataclass(frozen=True)
class GeneratorSpec:
    family: str = "gauss_location"
    dim: int = 1
    shift: float = 1.0
    wishart_dof: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if self.wishart_dof is not None and self.wishart_dof < self.dim:
            raise ValueError(f"wishart_dof={self.wishart_dof} must be >= dim={self.dim}")

    @property
    def dof(self) -> int:
        return self.dim if self.wishart_dof is None else int(self.wishart_dof)

    def with_seed(self, seed: int) -> "GeneratorSpec":
        return GeneratorSpec(self.family, self.dim, self.shift, self.wishart_dof, seed)


def wishart(rng: np.random.Generator, dim: int, dof: int) -> np.ndarray:
    """One draw from Wishart(I, dof) by the Bartlett decomposition."""
    if dof < dim:
        raise ValueError(f"Wishart needs dof >= dim, got dof={dof}, dim={dim}")
    a = np.zeros((dim, dim))
    a[np.diag_indices(dim)] = np.sqrt(rng.chisquare(dof - np.arange(dim)))
    lower = np.tril_indices(dim, -1)
    a[lower] = rng.standard_normal(len(lower[0]))
    w = a @ a.T
    return 0.5 * (w + w.T)


def sample_pair(spec: GeneratorSpec, n: int, m: int, under_null: bool = False):
    """Draw ``(X, Z)`` with ``n`` and ``m`` rows from the family in ``spec``.

    Random draws happen in a fixed order (covariances, then X, then Z), so
    the first sample is the same whether or not ``under_null`` is set.
    """
    if n < 1 or m < 1:
        raise ValueError(f"sample sizes must be >= 1, got n={n}, m={m}")
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    if spec.family == "gauss_scale":
        cov1 = wishart(rng, d, spec.dof) / spec.dof
        cov2 = wishart(rng, d, spec.dof) / spec.dof
        L1 = np.linalg.cholesky(cov1)
        L2 = L1 if under_null else np.linalg.cholesky(cov2)
        X = rng.standard_normal((n, d)) @ L1.T
        Z = rng.standard_normal((m, d)) @ L2.T
        return X, Z

    X = rng.standard_normal((n, d))
    Z = rng.standard_normal((m, d))
    if under_null:
        return X, Z
    if spec.family == "gauss_location":
        Z += spec.shift
    elif spec.family == "gauss_fair_location":
        Z[:, 0] += spec.shift
    else:  # gauss_fair_scale
        Z[:, 0] *= spec.shift
    return X, Z


def kl_knn_estimate(X, Z, neighbor: int = 1) -> float:
    """Nearest-neighbor estimate of ``KL(P || Q)`` from samples of P (X) and Q (Z).

    Uses ``(d / n) * sum(log(nu_k / rho_k)) + log(m / (n - 1))`` where
    ``rho_k`` is the distance from each x to its k-th nearest other point
    of X and ``nu_k`` to its k-th nearest point of Z.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    n, d = X.shape
    m = Z.shape[0]
    if n < 2:
        raise ValueError("kl_knn_estimate needs at least two rows in X")
    if m < neighbor or n - 1 < neighbor:
        raise ValueError(f"not enough points for neighbor={neighbor}")
    if Z.shape[1] != d:
        raise ValueError(f"X has {d} features, Z has {Z.shape[1]}")
    rho = cKDTree(X).query(X, k=neighbor + 1)[0][:, neighbor]
    nu = cKDTree(Z).query(X, k=neighbor)[0]
    if neighbor > 1:
        nu = nu[:, neighbor - 1]
    rho = np.maximum(rho, 1e-12)
    nu = np.maximum(np.ravel(nu), 1e-12)
    return float(d / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))


def kbest_scores(X, Z) -> np.ndarray:
    """One-way ANOVA F-score of every feature between the two samples.

    Features with zero pooled variance score 0.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, m = X.shape[0], Z.shape[0]
    # two-group between sum of squares; exactly zero when the means coincide
    between = n * m / (n + m) * (X.mean(axis=0) - Z.mean(axis=0)) ** 2
    within = ((X - X.mean(axis=0)) ** 2).sum(axis=0) + ((Z - Z.mean(axis=0)) ** 2).sum(axis=0)
    dof_within = n + m - 2
    scores = np.zeros(X.shape[1])
    total = between + within
    for j in range(X.shape[1]):
        if total[j] <= 0:
            continue
        scores[j] = np.inf if within[j] == 0 else between[j] / (within[j] / dof_within)
    return scores


def kbest_order(X, Z) -> np.ndarray:
    """Feature indices (0-based) by decreasing F-score; ties keep the lower index first."""
    scores = kbest_scores(X, Z)
    return np.argsort(-scores, kind="stable")


@dataclass(frozen=True)
class PowerReport:
    method: str
    alpha: float
    n_reps: int
    sample_size: int
    dim: int
    type1_rate: float
    type2_rate: float
    mean_runtime: float

    @classmethod
    def columns(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def row(self) -> list:
        return [getattr(self, name) for name in self.columns()]


def _rep_seed(seed: int, rep: int, under_null: bool) -> int:
    child = np.random.SeedSequence([seed, rep, int(under_null)])
    return int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _one_rep(args):
    method, spec, n, m, under_null, rep, seed, options = args
    rep_seed = _rep_seed(seed, rep, under_null)
    X, Z = sample_pair(spec.with_seed(rep_seed), n, m, under_null)
    start = time.perf_counter()
    try:
        result = run_test(method, X, Z, seed=rep_seed, **options)
    except Exception as exc:
        raise PowerRunError(
            f"{method} failed on repetition {rep} (under_null={under_null}, seed={rep_seed}): {exc}"
        ) from exc
    return result.p_value, time.perf_counter() - start


def rejection_rate(method: str, spec: GeneratorSpec, n: int, m: int, alpha: float,
                   n_reps: int, seed: int = 0, under_null: bool = True,
                   workers: int = 1, **options):
    """Run ``n_reps`` repetitions and return ``(rate, p_values, runtimes)``.

    Repetition ``r`` draws its data and test seed from ``(seed, r,
    under_null)`` only, so results do not depend on ``workers``.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be >= 1, got {n_reps}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    jobs = [(method, spec, n, m, under_null, r, seed, options) for r in range(n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_one_rep, jobs))
    else:
        out = [_one_rep(job) for job in jobs]
    p_values = np.array([p for p, _ in out])
    runtimes = np.array([t for _, t in out])
    return float(np.mean(p_values <= alpha)), p_values, runtimes


def power_run(method: str, spec: GeneratorSpec, n: int, m: int, alpha: float = 0.1,
              n_reps: int = 200, seed: int = 0, workers: int = 1, **options) -> PowerReport:
    """Empirical type I and type II error rates of ``method`` on ``spec``.

    ``mean_runtime`` is the mean wall-clock time of one test call (data
    generation excluded), over null and alternative repetitions.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    type1, _, t_null = rejection_rate(method, spec, n, m, alpha, n_reps, seed, True, workers, **options)
    power, _, t_alt = rejection_rate(method, spec, n, m, alpha, n_reps, seed, False, workers, **options)
    return PowerReport(
        method=method,
        alpha=float(alpha),
        n_reps=int(n_reps),
        sample_size=int(n),
        dim=int(spec.dim),
        type1_rate=type1,
        type2_rate=1.0 - power,
        mean_runtime=float(np.concatenate([t_null, t_alt]).mean()),
    )


def _stratified_folds(labels: np.ndarray, folds: int, rng) -> np.ndarray:
    assignment = np.empty(labels.shape[0], dtype=int)
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        assignment[members] = np.arange(members.size) % folds
    return assignment


def som_classifier_cv(data, labels, geometry: MapGeometry = MapGeometry(),
                      schedule: TrainSchedule = TrainSchedule(), folds: int = 50,
                      seed: int = 0) -> float:
    """Mean held-out accuracy of a majority-rule SOM classifier.

    Each neuron takes the most frequent training label mapped to it (ties
    go to the lower label). Neurons without training rows are unknown and
    held-out rows landing on them count as errors. Folds are stratified by
    label.
    """
    data = np.asarray(data, dtype=float)
    labels = np.asarray(labels).ravel()
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] != labels.shape[0]:
        raise ValueError(f"{data.shape[0]} rows but {labels.shape[0]} labels")
    if int(folds) != folds or folds < 2:
        raise ValueError(f"folds must be an integer >= 2, got {folds}")
    classes, codes = np.unique(labels, return_inverse=True)
    if folds > data.shape[0] or np.any(np.bincount(codes) < folds):
        raise ValueError(f"{folds} folds need at least {folds} rows of every class")
    rng = np.random.default_rng(seed)
    assignment = _stratified_folds(codes, folds, rng)
    k = geometry.n_neurons
    accuracies = []
    for fold in range(folds):
        held = assignment == fold
        tr_X, tr_c = data[~held], codes[~held]
        model = init_map(geometry, tr_X, schedule.init, schedule.seed)
        model = train(model, tr_X, schedule)
        votes = np.zeros((k, classes.size), dtype=int)
        np.add.at(votes, (bmus(model, tr_X), tr_c), 1)
        neuron_label = np.where(votes.sum(axis=1) > 0, np.argmax(votes, axis=1), -1)
        predicted = neuron_label[bmus(model, data[held])]
        accuracies.append(np.mean(predicted == codes[held]))
    return float(np.mean(accuracies))
