"""Build per-entity profile matrices from item records.

A view profile stacks a TF-IDF block computed from item description text
with one block per embedding table (the mean embedding of the items an
entity holds).  Every block is min-max scaled per feature across entities
before stacking, so the result lies in ``[0, 1]``.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .matrix import RowScaling, as_matrix, minmax_scale_rows

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list:
    """Lowercase ``text`` and split on runs of non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class RecordCorpus:
    """Items recorded per entity for one view.

    ``items`` holds one sequence per entity, aligned with ``entities``;
    repeats are allowed.
    """

    entities: tuple
    vocabulary: tuple
    items: tuple
    descriptions: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "items", tuple(tuple(i) for i in self.items))
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("entity ids must be unique")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("item ids must be unique")
        if len(self.items) != len(self.entities):
            raise ValueError("need exactly one item list per entity")
        known = set(self.vocabulary)
        for e, held in zip(self.entities, self.items):
            for item in held:
                if item not in known:
                    raise ValueError(f"entity {e!r} holds unknown item {item!r}")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    def empty(self) -> np.ndarray:
        """Boolean flag per entity: no recorded items."""
        return np.array([len(held) == 0 for held in self.items], dtype=bool)

    def reindex(self, entities: Sequence[str]) -> "RecordCorpus":
        """Reorder onto ``entities``; entities not in this corpus get no items."""
        lookup = dict(zip(self.entities, self.items))
        extra = set(self.entities) - set(entities)
        if extra:
            raise ValueError(f"entities missing from the new order: {sorted(extra)[:5]}")
        return RecordCorpus(entities, self.vocabulary,
                            [lookup.get(e, ()) for e in entities], self.descriptions)


@dataclass(frozen=True)
class EmbeddingTable:
    """Precomputed item embeddings, one column per item."""

    items: tuple
    vectors: np.ndarray
    name: str = "emb"

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        vectors = as_matrix(self.vectors, "embedding table")
        if vectors.shape[1] != len(self.items):
            raise ValueError(f"table has {vectors.shape[1]} columns for {len(self.items)} items")
        if len(set(self.items)) != len(self.items):
            raise ValueError("embedding table item ids must be unique")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", {item: j for j, item in enumerate(self.items)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def column(self, item) -> int:
        try:
            return self._index[item]
        except KeyError:
            raise KeyError(f"no embedding for item {item!r}") from None


@dataclass(frozen=True)
class ProfileMatrix:
    """Scaled, stacked profile for one view (features x entities)."""

    matrix: np.ndarray
    row_blocks: tuple
    scaling: RowScaling
    empty: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape

    def block(self, name) -> np.ndarray:
        for b, start, stop in self.row_blocks:
            if b == name:
                return self.matrix[start:stop]
        raise KeyError(name)


def tfidf_terms(corpus: RecordCorpus) -> list:
    """Sorted term list over the descriptions of every vocabulary item."""
    if not corpus.vocabulary:
        raise ValueError("corpus has an empty vocabulary")
    terms = set()
    for item in corpus.vocabulary:
        terms.update(tokenize(corpus.descriptions.get(item, "")))
    if not terms:
        raise ValueError("item descriptions contain no terms")
    return sorted(terms)


def tfidf_subprofile(corpus: RecordCorpus) -> np.ndarray:
    """TF-IDF matrix (terms x entities) of each entity's concatenated item text.

    ``tf`` is the raw term count, ``idf(t) = ln((1 + N) / (1 + df_t)) + 1``
    and each entity column is L2 normalized.  Entities without items, or
    whose items have no terms, get a zero column.
    """
    terms = tfidf_terms(corpus)
    row = {t: i for i, t in enumerate(terms)}
    n = corpus.n_entities
    tf = np.zeros((len(terms), n))
    item_tokens = {item: Counter(tokenize(corpus.descriptions.get(item, ""))) for item in corpus.vocabulary}
    for j, held in enumerate(corpus.items):
        counts = Counter()
        for item in held:
            counts.update(item_tokens[item])
        for t, c in counts.items():
            tf[row[t], j] = c
    df = np.count_nonzero(tf, axis=1)
    idf = np.array([math.log((1 + n) / (1 + d)) + 1.0 for d in df])
    out = tf * idf[:, None]
    norms = np.sqrt((out * out).sum(axis=0))
    nz = norms > 0
    out[:, nz] /= norms[nz]
    return out


def embedding_subprofile(corpus: RecordCorpus, table: EmbeddingTable) -> np.ndarray:
    """Mean embedding (dim x entities) of the distinct items each entity holds.

    Repeated items count once.  Entities with no items get a zero column.
    """
    onehot = np.zeros((len(table.items), corpus.n_entities))
    for j, held in enumerate(corpus.items):
        for item in set(held):
            onehot[table.column(item), j] = 1.0
    counts = onehot.sum(axis=0)
    out = table.vectors @ onehot
    nz = counts > 0
    out[:, nz] /= counts[nz]
    return out


def assemble_profile(subprofiles: Sequence[np.ndarray], names: Optional[Sequence[str]] = None,
                     empty=None) -> ProfileMatrix:
    """Min-max scale each sub-profile per row, then stack them vertically.

    Parameters
    ----------
    subprofiles : sequence of ndarray
        Blocks sharing the entity (column) count.
    names : sequence of str, optional
        Block names recorded in ``row_blocks``; default ``block0, block1, ...``.
    empty : array of bool, optional
        Entities without data.  They are left out of the row ranges and
        their columns are zero in the output.
    """
    if not subprofiles:
        raise ValueError("need at least one sub-profile")
    blocks = [as_matrix(s, "sub-profile") for s in subprofiles]
    n = blocks[0].shape[1]
    for b in blocks:
        if b.shape[1] != n:
            raise ValueError(f"sub-profiles disagree on entity count: {b.shape[1]} != {n}")
    if names is None:
        names = [f"block{i}" for i in range(len(blocks))]
    if len(names) != len(blocks):
        raise ValueError("one name per sub-profile is required")
    empty = np.zeros(n, dtype=bool) if empty is None else np.asarray(empty, dtype=bool)
    if empty.shape != (n,):
        raise ValueError("empty flags must have one entry per entity")

    stacked = np.vstack(blocks)
    out = np.zeros_like(stacked)
    keep = ~empty
    if keep.any():
        scaled, scaling = minmax_scale_rows(stacked[:, keep])
        out[:, keep] = scaled
    else:
        zeros = np.zeros(stacked.shape[0])
        scaling = RowScaling(mins=zeros, maxs=zeros)

    row_blocks, start = [], 0
    for name, b in zip(names, blocks):
        row_blocks.append((name, start, start + b.shape[0]))
        start += b.shape[0]
    return ProfileMatrix(matrix=out, row_blocks=tuple(row_blocks), scaling=scaling, empty=empty)


def build_view(corpus: RecordCorpus, tables: Sequence[EmbeddingTable] = (),
               include_tfidf: bool = True) -> ProfileMatrix:
    """Profile for one view: TF-IDF block first, then one block per table."""
    subs, names = [], []
    if include_tfidf:
        subs.append(tfidf_subprofile(corpus))
        names.append("tfidf")
    for i, table in enumerate(tables):
        subs.append(embedding_subprofile(corpus, table))
        names.append(table.name if table.name not in names else f"{table.name}{i}")
    if not subs:
        raise ValueError("a view needs TF-IDF or at least one embedding table")
    return assemble_profile(subs, names, empty=corpus.empty())
