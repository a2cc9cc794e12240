"""Nonnegativity-constrained least squares by block principal pivoting.

Solves ``min_{X >= 0} ||A X - B||_F`` column by column.  Every column of
``B`` is an independent problem, but all columns are iterated together and
columns that share a passive set share one factorization of the reduced
normal equations.

References
----------
J. Kim and H. Park, "Fast nonnegative matrix factorization: an active-set-like
method and comparisons", SIAM J. Sci. Comput. 33(6), 2011.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .matrix import DimensionError, as_matrix

DEFAULT_TOL = 1e-10
COND_LIMIT = 1e12
RIDGE_SCALE = 1e-10
# full exchanges allowed without progress before falling back to single exchange
BACKUP_PATIENCE = 3


class NlsError(RuntimeError):
    """Base class for solver failures."""


class SingularSystemError(NlsError):
    """A reduced normal-equation system could not be solved."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"singular normal equations for column {column}")


class NlsNotConverged(NlsError):
    """The exchange budget ran out; carries the best iterate."""

    def __init__(self, x, kkt_residual, iterations):
        self.x = x
        self.kkt_residual = kkt_residual
        self.iterations = iterations
        super().__init__(
            f"block principal pivoting did not converge in {iterations} iterations "
            f"(KKT residual {kkt_residual:.3e})"
        )


class RegularizationWarning(UserWarning):
    """Normal equations were ill conditioned and a ridge term was added."""


@dataclass(frozen=True)
class NlsSolution:
    x: np.ndarray
    kkt_residual: float
    iterations: int
    regularized: bool = False


class RowSolution(NamedTuple):
    w: np.ndarray
    unobserved: bool
    kkt_residual: float


def kkt_residual(gram, rhs, x) -> float:
    """Largest KKT violation of ``x`` for ``min_{x>=0} 1/2 x'Gx - rhs'x``.

    Measures negativity of ``x``, negativity of the gradient
    ``y = G x - rhs`` where ``x`` is zero, and complementarity ``|x * y|``.
    """
    y = _apply(gram, x) - rhs
    neg_x = np.maximum(-x, 0.0)
    neg_y = np.where(x <= 0, np.maximum(-y, 0.0), 0.0)
    comp = np.abs(x * y)
    return float(max(neg_x.max(initial=0.0), neg_y.max(initial=0.0), comp.max(initial=0.0)))


def _apply(gram, x):
    if gram.ndim == 2:
        return gram @ x
    return np.einsum("jab,bj->aj", gram, x)


def _regularize(gram):
    """Add a trace-scaled ridge to ill-conditioned Gram matrices."""
    k = gram.shape[-1]
    sv = np.linalg.svd(gram, compute_uv=False)
    smax = sv[..., 0]
    smin = sv[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(smin > 0, smax / np.where(smin > 0, smin, 1.0), np.inf)
    bad = cond > COND_LIMIT
    if not np.any(bad):
        return gram, None
    trace = np.trace(gram, axis1=-2, axis2=-1)
    eps = RIDGE_SCALE * trace / k
    if gram.ndim == 2:
        gram = gram + eps * np.eye(k)
    else:
        gram = gram.copy()
        idx = np.arange(k)
        rows = np.flatnonzero(bad)
        gram[rows[:, None], idx, idx] += eps[rows][:, None]
    warnings.warn(
        "normal equations are ill conditioned; adding ridge regularization",
        RegularizationWarning,
        stacklevel=3,
    )
    return gram, bad


def _polish(gram, rhs, x, cols, snap):
    """Replace ridge solutions by the unregularized least squares on their passive set.

    Kept only where the result stays feasible, so the residual never grows.
    """
    for j in cols:
        idx = np.flatnonzero(x[:, j] > 0)
        if idx.size == 0:
            continue
        g = gram if gram.ndim == 2 else gram[j]
        sol = np.linalg.lstsq(g[np.ix_(idx, idx)], rhs[idx, j], rcond=None)[0]
        if np.all(sol >= -snap):
            x[:, j] = 0.0
            x[idx, j] = np.maximum(sol, 0.0)
    return x


def _solve_passive(gram, rhs, passive, cols):
    """Solve the reduced systems ``G[F, F] x_F = rhs_F`` for columns ``cols``."""
    k = rhs.shape[0]
    out = np.zeros((k, cols.size))
    if gram.ndim == 2:
        patterns, inverse = np.unique(passive[:, cols].T, axis=0, return_inverse=True)
        inverse = np.ravel(inverse)
        for g, pattern in enumerate(patterns):
            members = np.flatnonzero(inverse == g)
            idx = np.flatnonzero(pattern)
            if idx.size == 0:
                continue
            try:
                sol = np.linalg.solve(gram[np.ix_(idx, idx)], rhs[np.ix_(idx, cols[members])])
            except np.linalg.LinAlgError:
                raise SingularSystemError(int(cols[members[0]])) from None
            out[np.ix_(idx, members)] = sol
        return out

    pas = passive[:, cols].T
    sub = np.where(pas[:, :, None] & pas[:, None, :], gram[cols], 0.0)
    # inactive variables get a unit diagonal and zero right-hand side
    sub[:, np.arange(k), np.arange(k)] += ~pas
    r = np.where(pas, rhs[:, cols].T, 0.0)
    try:
        sol = np.linalg.solve(sub, r[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        for c in range(cols.size):
            try:
                np.linalg.solve(sub[c], r[c])
            except np.linalg.LinAlgError:
                raise SingularSystemError(int(cols[c])) from None
        raise
    return sol.T


def solve_nls_normal(gram, rhs, tol=DEFAULT_TOL, max_iter=None) -> NlsSolution:
    """Block principal pivoting on normal equations.

    Parameters
    ----------
    gram : ndarray, shape (k, k) or (n, k, k)
        ``A'A``, either shared by all columns or one matrix per column.
    rhs : ndarray, shape (k, n)
        ``A'B``.
    tol : float
        KKT tolerance.  Values within ``tol / 100`` of zero are treated as
        zero when testing feasibility.
    max_iter : int, optional
        Exchange budget per column, default ``5 * k``.

    Returns
    -------
    NlsSolution
    """
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.ndim != 2:
        raise DimensionError("rhs must be 2-D (k, n)")
    k, n = rhs.shape
    if gram.shape[-2:] != (k, k) or gram.ndim not in (2, 3) or (gram.ndim == 3 and gram.shape[0] != n):
        raise DimensionError(f"gram shape {gram.shape} does not match rhs shape {rhs.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 5 * k

    original = gram
    gram, ridged = _regularize(gram)
    regularized = ridged is not None
    snap = tol * 1e-2

    x = np.zeros((k, n))
    y = -rhs.copy()
    passive = np.zeros((k, n), dtype=bool)
    nonopt = (y < -snap) & ~passive
    infeas = np.zeros((k, n), dtype=bool)
    bad = nonopt.sum(axis=0)
    patience = np.full(n, BACKUP_PATIENCE)
    best_bad = np.full(n, k + 1)
    todo = bad > 0

    it = 0
    while np.any(todo):
        it += 1
        if it > max_iter:
            xb = np.where(x > 0, x, 0.0)
            raise NlsNotConverged(xb, kkt_residual(gram, rhs, xb), it - 1)

        improved = todo & (bad < best_bad)
        stalled = todo & ~improved & (patience >= 1)
        single = todo & ~improved & ~stalled
        patience[improved] = BACKUP_PATIENCE
        best_bad[improved] = bad[improved]
        patience[stalled] -= 1

        flip = improved | stalled
        passive[:, flip] = (passive[:, flip] | nonopt[:, flip]) & ~infeas[:, flip]
        for j in np.flatnonzero(single):
            i = np.flatnonzero(nonopt[:, j] | infeas[:, j]).max()
            passive[i, j] = not passive[i, j]

        cols = np.flatnonzero(todo)
        x[:, cols] = _solve_passive(gram, rhs, passive, cols)
        xc = x[:, cols]
        if gram.ndim == 2:
            yc = gram @ xc - rhs[:, cols]
        else:
            yc = np.einsum("jab,bj->aj", gram[cols], xc) - rhs[:, cols]
        pc = passive[:, cols]
        yc[pc] = 0.0
        xc[~pc] = 0.0
        x[:, cols] = xc
        y[:, cols] = yc

        nonopt[:, cols] = (yc < -snap) & ~pc
        infeas[:, cols] = (xc < -snap) & pc
        bad[cols] = nonopt[:, cols].sum(axis=0) + infeas[:, cols].sum(axis=0)
        todo = bad > 0

    x = np.where(x > 0, x, 0.0)
    if regularized:
        cols = np.arange(n) if original.ndim == 2 else np.flatnonzero(ridged)
        x = _polish(original, rhs, x, cols, snap)
    return NlsSolution(x=x, kkt_residual=kkt_residual(original, rhs, x), iterations=it,
                       regularized=regularized)


def solve_nls_bpp(a, b, tol=DEFAULT_TOL, max_iter=None) -> NlsSolution:
    """Solve ``min_{X >= 0} ||A X - B||_F``.

    ``b`` may be a vector, in which case ``x`` in the result has shape
    ``(k, 1)``.

    Raises
    ------
    SingularSystemError
        If a reduced system is singular even after regularization.
    NlsNotConverged
        If the exchange budget is exhausted.

    Examples
    --------
    >>> solve_nls_bpp(np.eye(3), [1.0, -2.0, 3.0]).x.ravel()
    array([1., 0., 3.])
    """
    a = as_matrix(a, "A")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    b = as_matrix(b, "B")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"A has {a.shape[0]} rows but B has {b.shape[0]}")
    return solve_nls_normal(a.T @ a, a.T @ b, tol=tol, max_iter=max_iter)


def solve_nls_rowwise_masked(h, p_row, m_row, tol=DEFAULT_TOL, max_iter=None) -> RowSolution:
    """Nonnegative row ``w`` minimizing ``||(p_row - w H) D(m_row)||``.

    Only the observed columns enter the fit.  A row with no observed
    entries is unconstrained; it is returned as zeros with
    ``unobserved=True``.
    """
    h = as_matrix(h, "H")
    p_row = np.asarray(p_row, dtype=np.float64).ravel()
    m_row = np.asarray(m_row).ravel()
    if p_row.size != h.shape[1] or m_row.size != h.shape[1]:
        raise DimensionError(f"row length must equal {h.shape[1]} columns of H")
    if not np.all((m_row == 0) | (m_row == 1)):
        raise ValueError("mask entries must be 0 or 1")
    obs = m_row.astype(bool)
    if not obs.any():
        return RowSolution(np.zeros(h.shape[0]), True, 0.0)
    sol = solve_nls_bpp(h[:, obs].T, p_row[obs], tol=tol, max_iter=max_iter)
    return RowSolution(sol.x[:, 0], False, sol.kkt_residual)
