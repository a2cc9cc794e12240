"""Hard cluster assignment and cluster-quality evaluation.

Point sets follow the profile convention: a ``(features, n)`` array whose
columns are the points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .matrix import as_matrix


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray
    k: int
    # entities labelled by convention rather than by data (all-zero H column)
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)
        flagged = np.zeros(labels.size, dtype=bool) if self.flagged is None else np.asarray(self.flagged, bool)
        object.__setattr__(self, "flagged", flagged)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass(frozen=True)
class ClusterReport:
    assignment: Assignment
    davies_bouldin: float
    silhouette: float

    @property
    def sizes(self) -> np.ndarray:
        return self.assignment.sizes


def assign_argmax(h) -> Assignment:
    """Label each column of ``h`` by its largest entry, ties to the lowest index.

    All-zero columns get label 0 and are flagged.
    """
    h = as_matrix(h, "H")
    if np.any(h < 0):
        raise ValueError("H must be nonnegative")
    return Assignment(np.argmax(h, axis=0), h.shape[0], flagged=~np.any(h > 0, axis=0))


def _points(points):
    return as_matrix(points, "points").T


def _clusters(labels):
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("need at least two nonempty clusters")
    return present


def _pairwise(x):
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
    return np.sqrt(sq)


def davies_bouldin(points, assignment: Assignment) -> float:
    """Davies-Bouldin index with Euclidean distances; empty clusters ignored."""
    x = _points(points)
    labels = assignment.labels
    if labels.size != x.shape[0]:
        raise ValueError("assignment size does not match number of points")
    present = _clusters(labels)
    centroids = np.array([x[labels == c].mean(axis=0) for c in present])
    scatter = np.array([
        np.sqrt(((x[labels == c] - centroids[i]) ** 2).sum(axis=1)).mean()
        for i, c in enumerate(present)
    ])
    sep = _pairwise(centroids)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (scatter[:, None] + scatter[None, :]) / sep
    # coincident centroids with zero scatter contribute nothing
    ratio[(sep == 0) & (scatter[:, None] + scatter[None, :] == 0)] = 0.0
    np.fill_diagonal(ratio, -np.inf)
    return float(ratio.max(axis=1).mean())


def silhouette_samples(points, assignment: Assignment) -> np.ndarray:
    """Per-point silhouette; members of singleton clusters score 0."""
    x = _points(points)
    labels = assignment.labels
    if labels.size != x.shape[0]:
        raise ValueError("assignment size does not match number of points")
    present = _clusters(labels)
    dist = _pairwise(x)
    onehot = labels[:, None] == present[None, :]
    counts = onehot.sum(axis=0)
    totals = dist @ onehot
    own = np.searchsorted(present, labels)
    n_own = counts[own]
    a = totals[np.arange(labels.size), own] / np.maximum(n_own - 1, 1)
    mean_other = totals / counts
    mean_other[np.arange(labels.size), own] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[n_own == 1] = 0.0
    return s


def silhouette(points, assignment: Assignment) -> float:
    """Mean silhouette coefficient under Euclidean distance."""
    return float(silhouette_samples(points, assignment).mean())


def evaluate(points, assignment: Assignment) -> ClusterReport:
    return ClusterReport(assignment, davies_bouldin(points, assignment), silhouette(points, assignment))


class KMeansResult(NamedTuple):
    assignment: Assignment
    centers: np.ndarray
    wcss: float


def _sqdist(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = _sqdist(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, _sqdist(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(x, centers, max_iter):
    labels = None
    for _ in range(max_iter):
        d2 = _sqdist(x, centers)
        new = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(centers.shape[0]):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point worst served by its center
                far = d2[np.arange(x.shape[0]), labels].argmax()
                centers[c] = x[far]
                labels = labels.copy()
                labels[far] = c
    d2 = _sqdist(x, centers)
    labels = d2.argmin(axis=1)
    wcss = float(d2[np.arange(x.shape[0]), labels].sum())
    return labels, centers, wcss


def kmeans(points, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by WCSS."""
    x = _points(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, centers, wcss = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if best is None or wcss < best[2]:
            best = (labels, centers, wcss)
    labels, centers, wcss = best
    return KMeansResult(Assignment(labels, k), centers.T, wcss)


@dataclass(frozen=True)
class GapResult:
    k: int
    ks: np.ndarray
    gap: np.ndarray
    sk: np.ndarray
    log_w: np.ndarray
    log_w_ref: np.ndarray


def gap_statistic(points, k_range: Sequence[int], b_refs: int = 20, seed: int = 0,
                  restarts: int = 3) -> GapResult:
    """Choose a cluster count by the gap statistic.

    ``W_k`` is the pooled within-cluster sum of squares from :func:`kmeans`.
    Reference sets are drawn uniformly over the bounding box of the data.
    The chosen ``k`` is the smallest with ``Gap(k) >= Gap(k') - s_k'`` for
    the next candidate ``k'``, falling back to the largest candidate.

    References
    ----------
    R. Tibshirani, G. Walther and T. Hastie, "Estimating the number of
    clusters in a data set via the gap statistic", JRSS B 63(2), 2001.
    """
    x = _points(points)
    ks = np.array(sorted(set(int(k) for k in k_range)))
    if ks.size == 0:
        raise ValueError("k_range is empty")
    if b_refs < 1:
        raise ValueError("b_refs must be >= 1")
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.all(lo == hi):
        raise ValueError("all points are identical")

    rng = np.random.default_rng(seed)
    refs = [rng.uniform(lo, hi, size=x.shape) for _ in range(b_refs)]
    log_w = np.empty(ks.size)
    log_ref = np.empty((ks.size, b_refs))
    with np.errstate(divide="ignore"):
        for i, k in enumerate(ks):
            log_w[i] = np.log(kmeans(x.T, k, seed=seed, restarts=restarts).wcss)
            for b, ref in enumerate(refs):
                log_ref[i, b] = np.log(kmeans(ref.T, k, seed=seed + 1 + b, restarts=restarts).wcss)
    gap = log_ref.mean(axis=1) - log_w
    sk = log_ref.std(axis=1) * np.sqrt(1.0 + 1.0 / b_refs)

    chosen = int(ks[-1])
    for i in range(ks.size - 1):
        if gap[i] >= gap[i + 1] - sk[i + 1]:
            chosen = int(ks[i])
            break
    return GapResult(chosen, ks, gap, sk, log_w, log_ref.mean(axis=1))
