"""Coupled nonnegative low-rank approximation of several profile views.

Every view ``P_v`` (features x entities) is approximated as ``W_v H`` with a
shared nonnegative embedding ``H`` (k x entities).  The objective is

    ||M * (P_d - W_d H)||^2 + alpha_b ||P_b - W_b H||^2 + alpha_s ||P_s - W_s H||^2

where the mask ``M`` on the diagnosis view is optional.  Minimization is by
block coordinate descent; each block update is an exact NLS solve.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .matrix import DimensionError, as_mask, as_matrix, frobenius_sq, masked_residual_sq
from .nls import DEFAULT_TOL, NlsError, solve_nls_normal

VIEWS = ("d", "b", "s")


class FitError(RuntimeError):
    """An NLS subproblem failed during a sweep."""

    def __init__(self, sweep, block, cause):
        self.sweep = sweep
        self.block = block
        super().__init__(f"sweep {sweep}, block {block}: {cause}")


def _unwrap(p):
    return getattr(p, "matrix", p)


@dataclass(frozen=True)
class CoupledProblem:
    """Views to factor jointly.  Any nonempty subset of views may be given."""

    p_d: Optional[np.ndarray] = None
    p_b: Optional[np.ndarray] = None
    p_s: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    alpha_b: float = 1.0
    alpha_s: float = 1.0
    k: int = 2
    seed: int = 0

    def __post_init__(self):
        present = {}
        for v in VIEWS:
            p = _unwrap(getattr(self, f"p_{v}"))
            if p is not None:
                p = as_matrix(p, f"p_{v}")
                if np.any(p < 0):
                    raise ValueError(f"p_{v} must be nonnegative")
                present[v] = p
            object.__setattr__(self, f"p_{v}", p)
        if not present:
            raise ValueError("at least one view is required")
        n = {p.shape[1] for p in present.values()}
        if len(n) != 1:
            raise DimensionError(f"views disagree on entity count: {sorted(n)}")
        if self.mask is not None:
            if self.p_d is None:
                raise ValueError("a mask requires the diagnosis view")
            object.__setattr__(self, "mask", as_mask(self.mask, self.p_d.shape))
        if self.alpha_b < 0 or self.alpha_s < 0:
            raise ValueError("balancing factors must be nonnegative")
        limit = min(min(p.shape) for p in present.values())
        if not 1 <= self.k <= limit:
            raise ValueError(f"k must be in [1, {limit}], got {self.k}")

    @property
    def views(self) -> dict:
        return {v: getattr(self, f"p_{v}") for v in VIEWS if getattr(self, f"p_{v}") is not None}

    @property
    def n(self) -> int:
        return next(iter(self.views.values())).shape[1]

    def weight(self, view) -> float:
        return {"d": 1.0, "b": self.alpha_b, "s": self.alpha_s}[view]

    def without_mask(self) -> "CoupledProblem":
        return dataclasses.replace(self, mask=None)


class TraceEntry(NamedTuple):
    iteration: int
    objective: float
    rel_change: float


@dataclass
class FactorModel:
    h: np.ndarray
    w_d: Optional[np.ndarray] = None
    w_b: Optional[np.ndarray] = None
    w_s: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)
    converged: bool = False
    seed: int = 0
    alpha_b: float = 1.0
    alpha_s: float = 1.0
    # rows of W_d / columns of H that no observation constrains
    unobserved_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    unobserved_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def k(self) -> int:
        return self.h.shape[0]

    def w(self, view):
        return getattr(self, f"w_{view}")

    @property
    def objective(self) -> float:
        return self.trace[-1].objective if self.trace else float("nan")


@dataclass(frozen=True)
class FitOptions:
    max_outer: int = 500
    rel_tol: float = 1e-6
    nls_tol: float = DEFAULT_TOL


def _view_scale(p, mask, k):
    mean = p[mask].mean() if mask is not None and mask.any() else p.mean()
    scale = np.sqrt(mean / k)
    return scale if scale > 0 else 1.0


def init_factors(problem: CoupledProblem) -> FactorModel:
    """Scaled uniform random initialization, deterministic in ``problem.seed``.

    Each factor draws from its own child stream of the seed, so the draws
    for one view do not depend on which other views are present.  ``H``
    uses the scale of the first present view in (d, b, s) order.
    """
    h_seq, *w_seqs = np.random.SeedSequence(problem.seed).spawn(1 + len(VIEWS))
    views = problem.views
    scales = {
        v: _view_scale(p, problem.mask if v == "d" else None, problem.k) for v, p in views.items()
    }
    first = next(iter(views))
    h = np.random.default_rng(h_seq).uniform(0.0, scales[first], size=(problem.k, problem.n))
    ws = {}
    for v, seq in zip(VIEWS, w_seqs):
        if v in views:
            ws[f"w_{v}"] = np.random.default_rng(seq).uniform(
                0.0, scales[v], size=(views[v].shape[0], problem.k)
            )
    return FactorModel(h=h, seed=problem.seed, alpha_b=problem.alpha_b,
                       alpha_s=problem.alpha_s, **ws)


def objective(problem: CoupledProblem, model: FactorModel) -> float:
    """Weighted sum of per-view squared residuals; masked on the diagnosis view."""
    total = 0.0
    for v, p in problem.views.items():
        w = model.w(v)
        if w is None:
            raise ValueError(f"model has no factor for view {v!r}")
        if v == "d" and problem.mask is not None:
            r = masked_residual_sq(p, w, model.h, problem.mask)
        else:
            if w.shape[1] != model.h.shape[0] or (w.shape[0], model.h.shape[1]) != p.shape:
                raise DimensionError(f"factors for view {v!r} do not match {p.shape}")
            r = frobenius_sq(p - w @ model.h)
        total += r if v == "d" else problem.weight(v) * r
    return total


def _update_w(p, h, tol):
    return solve_nls_normal(h @ h.T, h @ p.T, tol=tol).x.T


def _update_w_masked(p, mask, h, tol):
    """Row-by-row W_d update; row ``i`` only sees its observed columns."""
    w = np.zeros((p.shape[0], h.shape[0]))
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size:
        m = mask[rows]
        grams = (h[None, :, :] * m[:, None, :]) @ h.T
        rhs = h @ np.where(m, p[rows], 0.0).T
        w[rows] = solve_nls_normal(grams, rhs, tol=tol).x.T
    empty = np.setdiff1d(np.arange(p.shape[0]), rows)
    return w, empty


def _update_h(problem, ws, tol):
    gram = 0.0
    rhs = 0.0
    for v, p in problem.views.items():
        a = problem.weight(v)
        if v == "d" and problem.mask is not None:
            continue
        gram = gram + (ws[v].T @ ws[v] if v == "d" else a * (ws[v].T @ ws[v]))
        rhs = rhs + (ws[v].T @ p if v == "d" else a * (ws[v].T @ p))

    if problem.mask is None:
        return solve_nls_normal(gram, rhs, tol=tol).x, np.zeros(0, dtype=int)

    # column j stacks D(M[:, j]) W_d over the always-present weighted views
    m = problem.mask
    wd = ws["d"]
    grams = (wd.T[None, :, :] * m.T[:, None, :]) @ wd + gram
    rhs = wd.T @ np.where(m, problem.p_d, 0.0) + rhs
    k, n = wd.shape[1], m.shape[1]
    # a column is unconstrained when nothing observed reaches it
    other = any(problem.weight(v) > 0 for v in problem.views if v != "d")
    cols = np.arange(n) if other else np.flatnonzero(m.any(axis=0))
    h = np.zeros((k, n))
    if cols.size:
        h[:, cols] = solve_nls_normal(grams[cols], rhs[:, cols], tol=tol).x
    return h, np.setdiff1d(np.arange(n), cols)


BlockCallback = Callable[[int, str, FactorModel], None]


def fit(problem: CoupledProblem, opts: FitOptions = FitOptions(), *,
        init: Optional[FactorModel] = None,
        callback: Optional[BlockCallback] = None) -> FactorModel:
    """Block coordinate descent in the fixed order W_d, W_b, W_s, H.

    When ``problem.mask`` is set this solves the masked objective (see
    :func:`fit_masked`); otherwise the plain coupled objective.

    Parameters
    ----------
    problem : CoupledProblem
    opts : FitOptions
        Stops when the relative objective change of a sweep drops below
        ``rel_tol`` or after ``max_outer`` sweeps.
    init : FactorModel, optional
        Starting factors; default :func:`init_factors`.
    callback : callable, optional
        Called as ``callback(sweep, block, model)`` after every block update,
        with ``block`` one of ``'w_d', 'w_b', 'w_s', 'h'``.

    Returns
    -------
    FactorModel
        ``trace`` holds one entry per sweep.
    """
    model = init if init is not None else init_factors(problem)
    model = dataclasses.replace(model, trace=[], converged=False)
    ws = {v: model.w(v) for v in problem.views}
    h = model.h
    masked = problem.mask is not None
    f_prev = objective(problem, model)
    tol = opts.nls_tol

    for sweep in range(1, opts.max_outer + 1):
        for v, p in problem.views.items():
            block = f"w_{v}"
            try:
                if v == "d" and masked:
                    ws[v], empty_rows = _update_w_masked(p, problem.mask, h, tol)
                    model.unobserved_rows = empty_rows
                else:
                    ws[v] = _update_w(p, h, tol)
            except NlsError as e:
                raise FitError(sweep, block, e) from e
            setattr(model, block, ws[v])
            if callback is not None:
                callback(sweep, block, model)
        try:
            h, empty_cols = _update_h(problem, ws, tol)
        except NlsError as e:
            raise FitError(sweep, "h", e) from e
        model.h = h
        model.unobserved_cols = empty_cols
        if callback is not None:
            callback(sweep, "h", model)

        f = objective(problem, model)
        rel = (f_prev - f) / f_prev if f_prev > 0 else 0.0
        model.trace.append(TraceEntry(sweep, f, rel))
        if abs(rel) < opts.rel_tol:
            model.converged = True
            break
        f_prev = f
    return model


def fit_masked(problem: CoupledProblem, opts: FitOptions = FitOptions(), **kwargs) -> FactorModel:
    """Fit the masked objective.

    ``W_b`` and ``W_s`` update as in the unmasked case.  ``W_d`` is updated
    row by row using only each row's observed entries, and every column of
    ``H`` is fit to its observed diagnosis rows together with the weighted
    browsing and search rows.
    """
    if problem.mask is None:
        raise ValueError("fit_masked requires a mask")
    return fit(problem, opts, **kwargs)


def fit_restarts(problem: CoupledProblem, restarts: int = 1,
                 opts: FitOptions = FitOptions()) -> FactorModel:
    """Best of ``restarts`` fits with seeds ``seed, seed + 1, ...`` by final objective."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        model = fit(dataclasses.replace(problem, seed=problem.seed + r), opts)
        if best is None or model.objective < best.objective:
            best = model
    return best


def match_components(h_ref, h):
    """Permutation ``perm`` such that ``h[perm]`` best aligns with ``h_ref``.

    Rows are matched by maximizing total cosine similarity with the
    Hungarian algorithm.
    """
    def unit(a):
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        return a / np.where(norms > 0, norms, 1.0)

    sim = unit(np.asarray(h_ref)) @ unit(np.asarray(h)).T
    _, perm = linear_sum_assignment(-sim)
    return perm
