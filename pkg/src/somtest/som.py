"""Self-Organizing Map training, projection and serialization.

All arithmetic happens on z-scored data: the feature means and scales are
computed once when the map is initialized and stored with the model, so
projections of new samples are standardized the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import MalformedDocumentError, ShapeError

__all__ = [
    "MapGeometry",
    "SomModel",
    "TrainSchedule",
    "CountGrid",
    "init_map",
    "bmu",
    "bmus",
    "train",
    "project_counts",
    "serialize",
    "deserialize",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1

# max number of float64 cells materialized per distance chunk
_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True)
class MapGeometry:
    """Planar, non-wrapping rectangular grid of ``width * height`` neurons.

    Neuron ``i`` sits at grid position ``(i % width, i // width)``.
    """

    width: int = 10
    height: int = 10
    grid: str = "rectangular"

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise ValueError(f"width must be a positive integer, got {self.width}")
        if int(self.height) != self.height or self.height < 1:
            raise ValueError(f"height must be a positive integer, got {self.height}")
        if self.grid != "rectangular":
            raise ValueError(f"only rectangular grids are supported, got {self.grid!r}")

    @property
    def n_neurons(self) -> int:
        return self.width * self.height

    def positions(self) -> np.ndarray:
        idx = np.arange(self.n_neurons)
        return np.column_stack([idx % self.width, idx // self.width]).astype(float)

    def grid_distances(self) -> np.ndarray:
        """``(K, K)`` matrix of Euclidean distances between grid positions."""
        pos = self.positions()
        return cdist(pos, pos)


@dataclass(frozen=True)
class TrainSchedule:
    """Training hyper-parameters.

    ``delta0`` defaults to ``max(width, height) / 2`` and ``delta_final`` to
    ``min(1, delta0)``; both are resolved against the geometry by
    :meth:`radii`.
    """

    epochs: int = 10
    mode: str = "batch"
    alpha0: float = 0.1
    delta0: Optional[float] = None
    delta_final: Optional[float] = None
    init: str = "pca"
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.mode not in ("online", "batch"):
            raise ValueError(f"mode must be 'online' or 'batch', got {self.mode!r}")
        if not 0 < self.alpha0 <= 1:
            raise ValueError(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        if self.init not in ("random", "pca"):
            raise ValueError(f"init must be 'random' or 'pca', got {self.init!r}")
        for name in ("delta0", "delta_final"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.delta0 is not None and self.delta_final is not None:
            if self.delta_final > self.delta0:
                raise ValueError("delta_final must not exceed delta0")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def radii(self, geometry: MapGeometry) -> np.ndarray:
        """Neighborhood radius for each epoch, decaying linearly."""
        d0 = self.delta0 if self.delta0 is not None else max(geometry.width, geometry.height) / 2
        d1 = self.delta_final if self.delta_final is not None else min(1.0, d0)
        if d1 > d0:
            raise ValueError(f"delta_final={d1} exceeds delta0={d0}")
        if self.epochs == 1:
            return np.array([d0], dtype=float)
        return d0 + (d1 - d0) * np.arange(self.epochs) / (self.epochs - 1)


@dataclass(frozen=True, eq=False)
class SomModel:
    geometry: MapGeometry
    codebook: np.ndarray
    feature_means: np.ndarray
    feature_scales: np.ndarray

    def __post_init__(self):
        codebook = np.array(self.codebook, dtype=float)
        means = np.array(self.feature_means, dtype=float).ravel()
        scales = np.array(self.feature_scales, dtype=float).ravel()
        if codebook.ndim != 2:
            raise ShapeError(f"codebook must be 2-D, got shape {codebook.shape}")
        if codebook.shape[0] != self.geometry.n_neurons:
            raise ShapeError(
                f"codebook has {codebook.shape[0]} rows, geometry needs {self.geometry.n_neurons}"
            )
        if codebook.shape[1] < 1:
            raise ShapeError("codebook needs at least one feature column")
        if means.shape != (codebook.shape[1],) or scales.shape != (codebook.shape[1],):
            raise ShapeError("feature_means/feature_scales length must equal codebook width")
        if not np.all(np.isfinite(codebook)):
            raise ValueError("codebook entries must be finite")
        if not (np.all(np.isfinite(scales)) and np.all(scales > 0)):
            raise ValueError("feature_scales must be finite and strictly positive")
        for arr in (codebook, means, scales):
            arr.flags.writeable = False
        object.__setattr__(self, "codebook", codebook)
        object.__setattr__(self, "feature_means", means)
        object.__setattr__(self, "feature_scales", scales)

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]

    def standardize(self, data) -> np.ndarray:
        data = _as_matrix(data, self.dim)
        return (data - self.feature_means) / self.feature_scales

    def codebook_original_units(self) -> np.ndarray:
        return self.codebook * self.feature_scales + self.feature_means


def _as_matrix(data, dim: Optional[int] = None, allow_empty: bool = True) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        # a flat vector is a single row unless the model is one-dimensional
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D data matrix, got shape {arr.shape}")
    if arr.shape[0] == 0 and allow_empty and dim is not None:
        return arr.reshape(0, dim)
    if dim is not None and arr.shape[1] != dim:
        raise ShapeError(f"data has {arr.shape[1]} features, model expects {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("data contains non-finite values")
    return arr


def _nearest_rows(points: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the nearest codebook row per point; ties go to the lowest index."""
    n = points.shape[0]
    out = np.empty(n, dtype=np.intp)
    step = max(1, _CHUNK_CELLS // max(1, codebook.shape[0]))
    for start in range(0, n, step):
        d2 = cdist(points[start:start + step], codebook, "sqeuclidean")
        out[start:start + step] = np.argmin(d2, axis=1)
    return out


def init_map(geometry: MapGeometry, data, init: str = "pca", seed: int = 0) -> SomModel:
    """Create an untrained map fitted to ``data``.

    Parameters
    ----------
    geometry : MapGeometry
        Grid shape.
    data : array_like, shape (n, d)
        Training data; at least two finite rows.
    init : {'pca', 'random'}
        ``'random'`` draws every codebook entry uniformly between the
        standardized per-feature minimum and maximum. ``'pca'`` lays the
        codebook on a regular grid spanning +/- 2 standard deviations
        along the two leading principal components (width follows the
        first component).
    seed : int
        Seed for the random initialization.

    Returns
    -------
    SomModel
    """
    data = _as_matrix(data)
    if data.shape[0] < 2:
        raise ValueError("init_map needs at least two data rows")
    if data.shape[1] < 1:
        raise ShapeError("init_map needs at least one feature")
    means = data.mean(axis=0)
    scales = data.std(axis=0)
    scales[scales == 0] = 1.0
    z = (data - means) / scales
    k, d = geometry.n_neurons, data.shape[1]

    if init == "random":
        rng = np.random.default_rng(seed)
        lo, hi = z.min(axis=0), z.max(axis=0)
        codebook = lo + (hi - lo) * rng.random((k, d))
    elif init == "pca":
        if np.all(z == z[0]):
            raise ValueError("pca initialization needs data that is not all identical")
        axes = _principal_axes(z)
        gx = np.linspace(-2.0, 2.0, geometry.width) if geometry.width > 1 else np.zeros(1)
        gy = np.linspace(-2.0, 2.0, geometry.height) if geometry.height > 1 else np.zeros(1)
        pos = geometry.positions().astype(int)
        codebook = (
            z.mean(axis=0)
            + gx[pos[:, 0], None] * axes[0]
            + gy[pos[:, 1], None] * axes[1]
        )
    else:
        raise ValueError(f"unknown init {init!r}")
    return SomModel(geometry, codebook, means, scales)


def _principal_axes(z: np.ndarray) -> np.ndarray:
    """First two principal directions scaled by their standard deviation."""
    d = z.shape[1]
    cov = np.atleast_2d(np.cov(z, rowvar=False, bias=True))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    axes = np.zeros((2, d))
    for j in range(min(2, d)):
        if evals[j] <= 1e-12 * max(evals[0], 1e-300):
            continue
        v = evecs[:, j]
        # fix sign so the largest-magnitude component is positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        axes[j] = np.sqrt(evals[j]) * v
    return axes


def bmu(model: SomModel, x) -> int:
    """Best matching unit of a single observation (original units)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.dim:
        raise ShapeError(f"x has length {x.shape[0]}, model expects {model.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    return int(bmus(model, x[None, :])[0])


def bmus(model: SomModel, data) -> np.ndarray:
    """Vectorized :func:`bmu` over the rows of ``data``."""
    z = model.standardize(data)
    if z.shape[0] == 0:
        return np.empty(0, dtype=np.intp)
    return _nearest_rows(z, model.codebook)


def _neighborhood(grid_d2: np.ndarray, delta: float) -> np.ndarray:
    return np.exp(-grid_d2 / (2.0 * delta * delta))


def train(model: SomModel, data, schedule: TrainSchedule) -> SomModel:
    """Train ``model`` on ``data`` and return a new model.

    Online mode visits the rows in a seeded random order each epoch and
    applies ``w_i += alpha0 * h(i, b) * (x - w_i)``. Batch mode replaces
    each weight by the neighborhood-weighted mean of the data, keeping the
    old weight when the weights sum to zero. The neighborhood is
    ``exp(-g^2 / (2 delta^2))`` with ``g`` the grid distance to the BMU
    and ``delta`` decaying linearly over the epochs.
    """
    z = model.standardize(data)
    if z.shape[0] == 0:
        raise ValueError("train needs a non-empty dataset")
    geometry = model.geometry
    grid_d2 = geometry.grid_distances() ** 2
    codebook = np.array(model.codebook, dtype=float)
    radii = schedule.radii(geometry)

    if schedule.mode == "online":
        rng = np.random.default_rng(schedule.seed)
        alpha = schedule.alpha0
        for delta in radii:
            h_all = _neighborhood(grid_d2, delta)
            for row in rng.permutation(z.shape[0]):
                x = z[row]
                b = int(np.argmin(((codebook - x) ** 2).sum(axis=1)))
                codebook += (alpha * h_all[:, b])[:, None] * (x - codebook)
    else:
        k = geometry.n_neurons
        for delta in radii:
            h_all = _neighborhood(grid_d2, delta)
            winners = _nearest_rows(z, codebook)
            counts = np.bincount(winners, minlength=k).astype(float)
            sums = np.zeros_like(codebook)
            np.add.at(sums, winners, z)
            # h is symmetric, so h[i, b] weights neuron i by data mapped to b
            num = h_all @ sums
            den = h_all @ counts
            live = den > 0
            codebook[live] = num[live] / den[live, None]
    return replace(model, codebook=codebook)


@dataclass(frozen=True, eq=False)
class CountGrid:
    """Per-neuron counts of two samples projected on the same map."""

    R: np.ndarray
    S: np.ndarray
    geometry: Optional[MapGeometry] = field(default=None)

    def __post_init__(self):
        R = np.asarray(self.R)
        S = np.asarray(self.S)
        if R.ndim != 1 or R.shape != S.shape:
            raise ShapeError(f"R and S must be equal-length vectors, got {R.shape} and {S.shape}")
        for name, arr in (("R", R), ("S", S)):
            if arr.size and (np.any(arr < 0) or np.any(arr != np.round(arr))):
                raise ValueError(f"{name} must hold non-negative integer counts")
        if self.geometry is not None and R.shape[0] != self.geometry.n_neurons:
            raise ShapeError("count vectors do not match the geometry")
        object.__setattr__(self, "R", R.astype(np.int64))
        object.__setattr__(self, "S", S.astype(np.int64))

    @property
    def n_x(self) -> int:
        return int(self.R.sum())

    @property
    def n_z(self) -> int:
        return int(self.S.sum())


def project_counts(model: SomModel, X, Z) -> CountGrid:
    """Count how many rows of ``X`` and of ``Z`` land on each neuron."""
    k = model.geometry.n_neurons
    R = np.bincount(bmus(model, X), minlength=k)
    S = np.bincount(bmus(model, Z), minlength=k)
    return CountGrid(R, S, model.geometry)


def model_to_dict(model: SomModel) -> dict:
    return {
        "format": "somtest-model",
        "version": MODEL_FORMAT_VERSION,
        "width": model.geometry.width,
        "height": model.geometry.height,
        "dim": model.dim,
        "codebook": model.codebook.tolist(),
        "feature_means": model.feature_means.tolist(),
        "feature_scales": model.feature_scales.tolist(),
    }


def model_from_dict(doc) -> SomModel:
    if not isinstance(doc, dict):
        raise MalformedDocumentError("model document must be a JSON object")
    required = ("version", "width", "height", "dim", "codebook", "feature_means", "feature_scales")
    missing = [key for key in required if key not in doc]
    if missing:
        raise MalformedDocumentError(f"model document is missing {', '.join(missing)}")
    if doc["version"] != MODEL_FORMAT_VERSION:
        raise MalformedDocumentError(
            f"model version {doc['version']!r} is not supported (expected {MODEL_FORMAT_VERSION})"
        )
    try:
        geometry = MapGeometry(int(doc["width"]), int(doc["height"]))
        dim = int(doc["dim"])
        codebook = np.array(doc["codebook"], dtype=float)
        means = np.array(doc["feature_means"], dtype=float)
        scales = np.array(doc["feature_scales"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MalformedDocumentError(f"model document has invalid values: {exc}") from exc
    if codebook.ndim != 2 or codebook.shape != (geometry.n_neurons, dim):
        raise ShapeError(
            f"codebook shape {codebook.shape} does not match "
            f"{geometry.width}x{geometry.height} neurons by {dim} features"
        )
    if means.shape != (dim,) or scales.shape != (dim,):
        raise ShapeError("feature_means/feature_scales do not have length dim")
    return SomModel(geometry, codebook, means, scales)


def serialize(model: SomModel) -> bytes:
    """Encode a model as a JSON document (floats round-trip exactly)."""
    return json.dumps(model_to_dict(model), indent=1).encode("utf-8")


def deserialize(blob) -> SomModel:
    if isinstance(blob, (bytes, bytearray)):
        blob = blob.decode("utf-8")
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise MalformedDocumentError(f"model document is not valid JSON: {exc}") from exc
    return model_from_dict(doc)
