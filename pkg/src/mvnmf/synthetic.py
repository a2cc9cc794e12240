"""Synthetic multi-view records with planted clusters.

Each view has its own item vocabulary split evenly into one topic per
cluster.  An entity draws a Poisson number of items; each draw comes from
its own cluster's topic, or with the off-topic share from anywhere in the
vocabulary.  Item descriptions use topic-specific words plus shared filler
words, and embedding tables place items around per-topic centers.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import save_corpus, save_descriptions, save_embedding_table, save_labels, save_mask
from .profile import EmbeddingTable, RecordCorpus, tfidf_terms

# beyond this the row-wise diagnosis solves have fewer observed entries than ranks
MAX_MASK_FRACTION = 0.9
VIEW_NAMES = {"d": "diagnosis", "b": "browsing", "s": "search"}
FILLER = ("general", "other", "unspecified", "routine", "care", "health", "info", "visit")


@dataclass(frozen=True)
class SyntheticSpec:
    n_entities: int = 500
    n_clusters: int = 5
    vocab_sizes: dict = field(default_factory=lambda: {"d": 200, "b": 150, "s": 150})
    embedding_dims: dict = field(default_factory=lambda: {"d": [8, 8, 8], "b": [8, 8], "s": [8, 8]})
    mask_fraction: float = 0.1
    noise_level: float = 1.0
    # share of entities with no diagnosis records at all
    unobserved_fraction: float = 0.05
    items_per_entity: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_entities < 1 or self.n_clusters < 1:
            raise ValueError("n_entities and n_clusters must be positive")
        if self.n_clusters > self.n_entities:
            raise ValueError("n_clusters must not exceed n_entities")
        if not 0.0 <= self.mask_fraction <= MAX_MASK_FRACTION:
            raise ValueError(f"mask_fraction must lie in [0, {MAX_MASK_FRACTION}]")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if not 0.0 <= self.unobserved_fraction < 1.0:
            raise ValueError("unobserved_fraction must lie in [0, 1)")
        if self.items_per_entity <= 0:
            raise ValueError("items_per_entity must be positive")
        if set(self.vocab_sizes) != set(self.embedding_dims) or not set(self.vocab_sizes) <= set(VIEW_NAMES):
            raise ValueError("vocab_sizes and embedding_dims must cover the same views among d, b, s")
        for v, size in self.vocab_sizes.items():
            if size < self.n_clusters:
                raise ValueError(f"view {v!r} needs at least one item per cluster")
            if any(int(d) < 1 for d in self.embedding_dims[v]):
                raise ValueError("embedding dims must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def off_topic(self) -> float:
        """Probability that an item draw ignores the entity's cluster."""
        return self.noise_level / (1.0 + self.noise_level)


@dataclass(frozen=True)
class SyntheticData:
    spec: SyntheticSpec
    entities: tuple
    corpora: dict
    tables: dict
    labels: np.ndarray
    mask: np.ndarray


def _descriptions(view, items, topics, n_clusters, rng):
    words = {c: [f"{view}{c}w{j}" for j in range(12)] for c in range(n_clusters)}
    out = {}
    for item, t in zip(items, topics):
        topical = list(rng.choice(words[t], size=3, replace=False))
        filler = FILLER[rng.integers(len(FILLER))]
        if view == "b":
            out[item] = "/" + "/".join(topical) + f"/{filler}"
        elif view == "s":
            out[item] = f"{filler} " + " ".join(topical) + "?"
        else:
            out[item] = ", ".join(topical) + f", {filler}"
    return out


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Generate corpora, embedding tables, ground truth and a diagnosis mask.

    The mask matches the diagnosis profile built with TF-IDF plus every
    diagnosis table: ``mask_fraction`` of entries are hidden at random and
    columns of entities without diagnoses are hidden entirely.
    """
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n_entities, spec.n_clusters
    entities = tuple(f"e{i:05d}" for i in range(n))
    labels = rng.permutation(np.arange(n) % c)
    n_empty = int(round(spec.unobserved_fraction * n)) if "d" in spec.vocab_sizes else 0
    empty = np.zeros(n, dtype=bool)
    empty[rng.choice(n, size=n_empty, replace=False)] = True

    corpora, tables = {}, {}
    for v in ("d", "b", "s"):
        if v not in spec.vocab_sizes:
            continue
        size = spec.vocab_sizes[v]
        items = [f"{v}{j:04d}" for j in range(size)]
        topics = np.arange(size) % c
        by_topic = [np.flatnonzero(topics == t) for t in range(c)]
        descriptions = _descriptions(v, items, topics, c, rng)

        held = []
        counts = rng.poisson(spec.items_per_entity, size=n)
        for i in range(n):
            if v == "d" and empty[i]:
                held.append([])
                continue
            off = rng.random(counts[i]) < spec.off_topic
            own = rng.choice(by_topic[labels[i]], size=counts[i])
            anywhere = rng.integers(size, size=counts[i])
            held.append([items[j] for j in np.where(off, anywhere, own)])
        corpora[v] = RecordCorpus(entities, items, held, descriptions)

        tables[v] = []
        for t, dim in enumerate(spec.embedding_dims[v]):
            centers = rng.standard_normal((int(dim), c))
            jitter = spec.noise_level * rng.standard_normal((int(dim), size))
            tables[v].append(EmbeddingTable(items, centers[:, topics] + jitter, name=f"emb{t}"))

    if "d" in corpora:
        rows = len(tfidf_terms(corpora["d"])) + sum(int(d) for d in spec.embedding_dims["d"])
        mask = rng.random((rows, n)) >= spec.mask_fraction
        mask[:, corpora["d"].empty()] = False
    else:
        mask = np.ones((0, n), dtype=bool)
    return SyntheticData(spec, entities, corpora, tables, labels, mask)


def write_synthetic(data: SyntheticData, outdir) -> Path:
    """Write every dataset file plus ``dataset.json``, a ready-to-use run config."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    views = {}
    for v, corpus in data.corpora.items():
        name = VIEW_NAMES[v]
        save_corpus(out / f"{name}.tsv", corpus)
        save_descriptions(out / f"{name}_desc.tsv", corpus)
        paths = []
        for table in data.tables[v]:
            p = f"{name}_{table.name}.txt"
            save_embedding_table(out / p, table)
            paths.append(p)
        views[v] = {"corpus": f"{name}.tsv", "descriptions": f"{name}_desc.tsv", "tables": paths}
    config = {"views": views, "truth": "truth.csv", "k": data.spec.n_clusters}
    if "d" in data.corpora:
        save_mask(out / "mask.txt", data.mask)
        config["mask"] = "mask.txt"
    save_labels(out / "truth.csv", data.entities, data.labels)
    (out / "spec.json").write_text(json.dumps(data.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "dataset.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return out / "dataset.json"
