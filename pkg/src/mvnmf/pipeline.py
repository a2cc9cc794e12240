"""Glue from record corpora to fitted embeddings and cluster reports."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cluster import Assignment, ClusterReport, assign_argmax, davies_bouldin, silhouette
from .nmf import VIEWS, CoupledProblem, FactorModel, FitOptions, fit_restarts
from .profile import ProfileMatrix, build_view


def entity_union(corpora: dict) -> list:
    """Entities of all views in (d, b, s) order of first appearance."""
    seen = {}
    for v in VIEWS:
        if v in corpora:
            for e in corpora[v].entities:
                seen.setdefault(e, None)
    return list(seen)


def build_profiles(corpora: dict, tables: dict, entities=None, tfidf: Optional[dict] = None) -> dict:
    """One :class:`ProfileMatrix` per view, all aligned on ``entities``."""
    entities = entity_union(corpora) if entities is None else list(entities)
    tfidf = tfidf or {}
    return {
        v: build_view(corpora[v].reindex(entities), tables.get(v, ()), tfidf.get(v, True))
        for v in VIEWS if v in corpora
    }


def default_mask(profile: ProfileMatrix) -> np.ndarray:
    """Hide the diagnosis columns of entities with no recorded items."""
    mask = np.ones(profile.shape, dtype=bool)
    mask[:, profile.empty] = False
    return mask


def make_problem(profiles: dict, k: int, mask=None, alpha_b=1.0, alpha_s=1.0, seed=0,
                 views=VIEWS) -> CoupledProblem:
    kw = {f"p_{v}": profiles[v].matrix for v in views if v in profiles}
    if "d" not in views:
        mask = None
    return CoupledProblem(mask=mask, alpha_b=alpha_b, alpha_s=alpha_s, k=k, seed=seed, **kw)


def stacked_points(problem: CoupledProblem) -> np.ndarray:
    """Raw profile columns with each view scaled by the square root of its weight."""
    blocks = []
    for v, p in problem.views.items():
        if v == "d" and problem.mask is not None:
            p = np.where(problem.mask, p, 0.0)
        blocks.append(np.sqrt(problem.weight(v)) * p)
    return np.vstack(blocks)


@dataclass(frozen=True)
class RunResult:
    model: FactorModel
    assignment: Assignment
    report: Optional[ClusterReport]


def cluster_embedding(model: FactorModel) -> RunResult:
    """Argmax labels of H with Davies-Bouldin and silhouette in H space.

    ``report`` is ``None`` when fewer than two clusters are populated.
    """
    assignment = assign_argmax(model.h)
    if np.unique(assignment.labels).size < 2:
        return RunResult(model, assignment, None)
    report = ClusterReport(assignment, davies_bouldin(model.h, assignment), silhouette(model.h, assignment))
    return RunResult(model, assignment, report)


def run(problem: CoupledProblem, opts: FitOptions = FitOptions(), restarts: int = 1) -> RunResult:
    return cluster_embedding(fit_restarts(problem, restarts, opts))
