"""CSV ingestion and the plot-ready JSON documents written by the CLI."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import CsvFormatError, MalformedDocumentError, ShapeError
from .som import CountGrid, MapGeometry, SomModel
from .two_sample import TestResult, relative_difference

FORMAT_VERSION = 1

RANKING_CRITERION = (
    "absolute Pearson correlation across neurons between the codebook plane "
    "and the relative-difference grid; zero-variance planes score 0"
)


@dataclass
class Dataset:
    values: np.ndarray
    columns: list
    labels: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def load_csv(path) -> Dataset:
    """Read a numeric CSV with a header line.

    A final column named ``label`` is split off as per-row labels.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CsvFormatError(f"{path}: file is empty")
        header = [name.strip() for name in header]
        if len(set(header)) != len(header):
            dup = sorted({h for h in header if header.count(h) > 1})
            raise CsvFormatError(f"{path}: duplicate header names {dup}")
        rows = []
        for line_no, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise CsvFormatError(
                    f"{path}: line {line_no} has {len(cells)} cells, header has {len(header)}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(c for c in cells if not _is_number(c))
                raise CsvFormatError(f"{path}: line {line_no} has non-numeric cell {bad!r}") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    values = np.array(rows, dtype=float)
    labels = None
    columns = header
    if header[-1] == "label":
        labels = values[:, -1]
        values = values[:, :-1]
        columns = header[:-1]
    if values.shape[1] == 0:
        raise CsvFormatError(f"{path}: no feature columns")
    if not np.all(np.isfinite(values)):
        raise CsvFormatError(f"{path}: non-finite values")
    return Dataset(values, columns, labels)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def rank_codebook_planes(model: SomModel, grid: CountGrid):
    """Order features by how closely their codebook plane follows the density contrast.

    Returns ``(order, scores)``: 0-based feature indices sorted by
    decreasing score (ties keep the lower index first) and the score of
    every feature in original index order.
    """
    if grid.R.shape[0] != model.geometry.n_neurons:
        raise ShapeError("count grid and model have different neuron counts")
    if grid.n_x == 0 and grid.n_z == 0:
        raise ValueError("cannot rank codebook planes on an all-empty grid")
    diff = relative_difference(grid)
    scores = np.zeros(model.dim)
    dc = diff - diff.mean()
    dn = math.sqrt(float(dc @ dc))
    if dn > 0:
        for f in range(model.dim):
            plane = model.codebook[:, f] - model.codebook[:, f].mean()
            pn = math.sqrt(float(plane @ plane))
            if pn > 0:
                scores[f] = min(1.0, abs(float(plane @ dc)) / (pn * dn))
    order = np.argsort(-scores, kind="stable")
    return order, scores


def _geometry_header(kind: str, geometry: MapGeometry) -> dict:
    return {"format_version": FORMAT_VERSION, "kind": kind,
            "width": geometry.width, "height": geometry.height}


def count_grid_document(grid: CountGrid, geometry: MapGeometry) -> dict:
    doc = _geometry_header("count_grid", geometry)
    doc.update(n_x=grid.n_x, n_z=grid.n_z, R=grid.R.tolist(), S=grid.S.tolist())
    return doc


def relative_difference_document(grid: CountGrid, geometry: MapGeometry) -> dict:
    doc = _geometry_header("relative_difference", geometry)
    doc["values"] = relative_difference(grid).tolist()
    return doc


def codebook_planes_document(model: SomModel, grid: CountGrid, feature_names=None) -> dict:
    order, scores = rank_codebook_planes(model, grid)
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(model.dim)]
    planes = model.codebook_original_units().T
    doc = _geometry_header("codebook_planes", model.geometry)
    doc.update(
        ranking_criterion=RANKING_CRITERION,
        feature_names=names,
        order=[int(j) for j in order],
        scores=[float(s) for s in scores],
        planes=[planes[j].tolist() for j in range(model.dim)],
    )
    return doc


def result_document(result: TestResult, alpha: Optional[float] = None,
                    model_path: Optional[str] = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "test_result",
        "method": result.method,
        "statistic": float(result.statistic),
        "null": result.null.to_dict(),
        "p_value": float(result.p_value),
    }
    if alpha is not None:
        doc["alpha"] = float(alpha)
        doc["reject"] = bool(result.reject(alpha))
    if result.counts is not None:
        doc["counts"] = {"R": result.counts.R.tolist(), "S": result.counts.S.tolist()}
    if model_path is not None:
        doc["model_path"] = model_path
    return doc


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_document(path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedDocumentError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise MalformedDocumentError(f"{path}: expected a {kind!r} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise MalformedDocumentError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    return doc


def load_count_grid(path) -> CountGrid:
    doc = read_document(path, "count_grid")
    try:
        geometry = MapGeometry(doc["width"], doc["height"])
        return CountGrid(np.array(doc["R"]), np.array(doc["S"]), geometry)
    except KeyError as exc:
        raise MalformedDocumentError(f"{path}: missing field {exc}") from exc
