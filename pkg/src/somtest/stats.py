"""Tail probabilities and the permutation p-value shared by every test."""

import math

import numpy as np
from scipy import special

__all__ = ["chi2_sf", "normal_sf", "permutation_pvalue", "NullDescriptor"]


def chi2_sf(x: float, dof: int) -> float:
    """Upper-tail probability ``P(chi2_dof >= x)``.

    Evaluated as the regularized upper incomplete gamma function
    ``Q(dof / 2, x / 2)``.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"chi2_sf needs a finite statistic, got {x}")
    if x < 0:
        raise ValueError(f"chi2_sf needs x >= 0, got {x}")
    if int(dof) != dof or dof < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")
    if x == 0.0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


def normal_sf(z: float) -> float:
    """Standard normal upper tail ``P(N(0, 1) >= z)``."""
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"normal_sf needs a finite argument, got {z}")
    # ndtr(-z) goes through erfc for large |z| and keeps full relative accuracy
    return float(special.ndtr(-z))


def permutation_pvalue(observed: float, permuted) -> float:
    """One-sided permutation p-value with the add-one correction.

    ``p = (1 + #{permuted >= observed}) / (1 + len(permuted))``; larger
    statistics are more extreme.
    """
    permuted = np.asarray(permuted, dtype=float).ravel()
    if permuted.size == 0:
        raise ValueError("permutation_pvalue needs at least one permuted statistic")
    if not (math.isfinite(observed) and np.all(np.isfinite(permuted))):
        raise ValueError("permutation statistics must be finite")
    n_ge = int(np.count_nonzero(permuted >= observed))
    return (1 + n_ge) / (1 + permuted.size)


class NullDescriptor:
    """Null distribution attached to a test result.

    Build instances with :meth:`chi_squared`, :meth:`normal` or
    :meth:`permutation`.
    """

    __slots__ = ("kind", "params")

    def __init__(self, kind: str, **params):
        self.kind = kind
        self.params = params

    @classmethod
    def chi_squared(cls, dof: int) -> "NullDescriptor":
        if dof < 1:
            raise ValueError(f"dof must be >= 1, got {dof}")
        return cls("chi_squared", dof=int(dof))

    @classmethod
    def normal(cls, mean: float, variance: float) -> "NullDescriptor":
        if not variance > 0:
            raise ValueError(f"variance must be > 0, got {variance}")
        return cls("normal", mean=float(mean), variance=float(variance))

    @classmethod
    def permutation(cls, reference_stats, exact: bool = False) -> "NullDescriptor":
        stats = [float(s) for s in np.asarray(reference_stats, dtype=float).ravel()]
        if not stats:
            raise ValueError("a permutation null needs reference statistics")
        return cls("permutation", reference_stats=stats, exact=bool(exact))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, doc: dict) -> "NullDescriptor":
        doc = dict(doc)
        kind = doc.pop("kind")
        if kind == "chi_squared":
            return cls.chi_squared(doc["dof"])
        if kind == "normal":
            return cls.normal(doc["mean"], doc["variance"])
        if kind == "permutation":
            return cls.permutation(doc["reference_stats"], doc.get("exact", False))
        raise ValueError(f"unknown null kind {kind!r}")

    def __eq__(self, other):
        return isinstance(other, NullDescriptor) and self.to_dict() == other.to_dict()

    def __repr__(self):
        if self.kind == "permutation":
            return f"NullDescriptor(permutation, n={len(self.params['reference_stats'])})"
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"NullDescriptor({self.kind}, {args})"
