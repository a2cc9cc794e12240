"""Dense matrix helpers shared by every other module.

Matrices are plain 2-D ``float64`` numpy arrays and masks are 2-D boolean
arrays of the same shape as the matrix they select from.  All reductions
go through :func:`math.fsum`, which returns the correctly rounded sum of
its inputs; the result is therefore independent of traversal order and
bit-reproducible across runs and platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when operands have incompatible shapes."""


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array with at least one entry."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_mask(m, shape=None, name="mask"):
    """Return ``m`` as a boolean 2-D array, checking entries are 0/1."""
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} entries must be 0 or 1")
        arr = arr.astype(bool)
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def exact_sum(values) -> float:
    """Correctly rounded sum of an array of any shape."""
    return math.fsum(np.ravel(values).tolist())


def frobenius_sq(a) -> float:
    """Squared Frobenius norm ``sum_ij a_ij**2``."""
    a = np.asarray(a, dtype=np.float64)
    return exact_sum(a * a)


def masked_residual_sq(p, w, h, m) -> float:
    """Squared Frobenius norm of ``m * (p - w @ h)``.

    Unobserved entries (``m == 0``) contribute exactly zero regardless of
    the value stored in ``p``.  With an all-ones mask the result is
    bitwise equal to ``frobenius_sq(p - w @ h)``.
    """
    p = np.asarray(p, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if w.ndim != 2 or h.ndim != 2 or w.shape[1] != h.shape[0]:
        raise DimensionError(f"cannot multiply {w.shape} by {h.shape}")
    if p.shape != (w.shape[0], h.shape[1]):
        raise DimensionError(f"target shape {p.shape} does not match product {(w.shape[0], h.shape[1])}")
    m = as_mask(m, p.shape)
    r = np.where(m, p - w @ h, 0.0)
    return frobenius_sq(r)


@dataclass(frozen=True)
class RowScaling:
    """Per-row ``(min, max)`` recorded by :func:`minmax_scale_rows`."""

    mins: np.ndarray
    maxs: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins


def minmax_scale_rows(a):
    """Scale every row of ``a`` onto ``[0, 1]``.

    Constant rows (zero range) map to all zeros.

    Returns
    -------
    scaled : ndarray
    scaling : RowScaling
    """
    a = as_matrix(a)
    mins = a.min(axis=1)
    maxs = a.max(axis=1)
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    scaled = (a - mins[:, None]) / safe[:, None]
    scaled[span == 0] = 0.0
    # rounding can push (max - min) / span a hair past 1
    np.clip(scaled, 0.0, 1.0, out=scaled)
    return scaled, RowScaling(mins=mins, maxs=maxs)


def diag_select(v, a, side="left"):
    """Return ``D(v) @ a`` (``side='left'``) or ``a @ D(v)`` (``side='right'``).

    ``v`` is a 0/1 vector; the product zeroes the deselected rows or columns
    of ``a`` and leaves the rest untouched.
    """
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v)
    if v.ndim != 1:
        raise DimensionError("selection vector must be 1-D")
    if not np.all((v == 0) | (v == 1)):
        raise ValueError("selection vector entries must be 0 or 1")
    keep = v.astype(bool)
    if side == "left":
        if a.shape[0] != keep.size:
            raise DimensionError(f"vector length {keep.size} does not match {a.shape[0]} rows")
        return np.where(keep[:, None], a, 0.0)
    if side == "right":
        if a.shape[1] != keep.size:
            raise DimensionError(f"vector length {keep.size} does not match {a.shape[1]} columns")
        return np.where(keep[None, :], a, 0.0)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")
