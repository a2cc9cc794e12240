"""Text file formats for matrices, masks, corpora, embedding tables and models.

Matrix files hold a ``rows cols`` header line followed by ``rows`` lines of
whitespace-separated values.  Values are written with ``repr`` so a saved
file loads back to the identical array.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .nmf import VIEWS, FactorModel, TraceEntry
from .profile import EmbeddingTable, RecordCorpus


class FormatError(ValueError):
    """A file does not follow its format; carries path and line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def _fmt(v) -> str:
    return repr(float(v))


def _read_lines(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def _parse_grid(path, parse):
    lines = _read_lines(path)
    if not lines:
        raise FormatError(path, 1, "missing 'rows cols' header")
    head = lines[0].split()
    try:
        rows, cols = (int(t) for t in head)
    except ValueError:
        raise FormatError(path, 1, f"bad header {lines[0]!r}, expected 'rows cols'") from None
    if rows < 1 or cols < 1:
        raise FormatError(path, 1, "dimensions must be positive")
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != rows:
        raise FormatError(path, len(lines) + 1, f"expected {rows} rows, found {len(body)}")
    out = []
    for i, line in enumerate(body, start=2):
        toks = line.split()
        if len(toks) != cols:
            raise FormatError(path, i, f"expected {cols} values, found {len(toks)}")
        try:
            out.append([parse(t) for t in toks])
        except ValueError as e:
            raise FormatError(path, i, str(e)) from None
    return out


def _finite(tok):
    v = float(tok)
    if not np.isfinite(v):
        raise ValueError(f"non-finite value {tok!r}")
    return v


def _bit(tok):
    if tok not in ("0", "1"):
        raise ValueError(f"mask entries must be 0 or 1, got {tok!r}")
    return tok == "1"


def load_matrix(path) -> np.ndarray:
    return np.array(_parse_grid(path, _finite), dtype=np.float64)


def save_matrix(path, a) -> None:
    a = np.asarray(a, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            f.write(" ".join(_fmt(v) for v in row) + "\n")


def load_mask(path) -> np.ndarray:
    return np.array(_parse_grid(path, _bit), dtype=bool)


def save_mask(path, m) -> None:
    m = np.asarray(m, dtype=bool)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{m.shape[0]} {m.shape[1]}\n")
        for row in m:
            f.write(" ".join("1" if v else "0" for v in row) + "\n")


def load_descriptions(path) -> dict:
    """``item_id<TAB>description`` lines, in file order."""
    out = {}
    for i, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        item, sep, text = line.partition("\t")
        if not sep or not item:
            raise FormatError(path, i, "expected 'item_id<TAB>description'")
        if item in out:
            raise FormatError(path, i, f"duplicate item {item!r}")
        out[item] = text
    return out


def load_corpus(path, descriptions_path) -> RecordCorpus:
    """Read ``entity_id<TAB>item_id`` records.

    A line holding only an entity id declares an entity with no items.
    Entities keep their order of first appearance; the vocabulary is the
    item order of the descriptions file.
    """
    descriptions = load_descriptions(descriptions_path)
    held = {}
    for i, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) > 2 or not fields[0]:
            raise FormatError(path, i, "expected 'entity_id<TAB>item_id'")
        entity = fields[0]
        items = held.setdefault(entity, [])
        if len(fields) == 2 and fields[1]:
            if fields[1] not in descriptions:
                raise FormatError(path, i, f"unknown item id {fields[1]!r}")
            items.append(fields[1])
    return RecordCorpus(list(held), list(descriptions), list(held.values()), descriptions)


def save_corpus(path, corpus: RecordCorpus) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for entity, items in zip(corpus.entities, corpus.items):
            if not items:
                f.write(f"{entity}\n")
            for item in items:
                f.write(f"{entity}\t{item}\n")


def save_descriptions(path, corpus: RecordCorpus) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for item in corpus.vocabulary:
            f.write(f"{item}\t{corpus.descriptions.get(item, '')}\n")


def items_sidecar(path) -> Path:
    """Item-order file paired with an embedding matrix file."""
    return Path(path).with_suffix(".items")


def load_embedding_table(path, items_path=None, name=None) -> EmbeddingTable:
    """Embedding matrix (dim x items) plus a sidecar listing item ids one per line."""
    vectors = load_matrix(path)
    sidecar = Path(items_path) if items_path is not None else items_sidecar(path)
    items = [line for line in _read_lines(sidecar) if line]
    if len(items) != vectors.shape[1]:
        raise FormatError(sidecar, len(items) + 1,
                          f"{len(items)} item ids for {vectors.shape[1]} embedding columns")
    return EmbeddingTable(items, vectors, name=name or Path(path).stem)


def save_embedding_table(path, table: EmbeddingTable) -> None:
    save_matrix(path, table.vectors)
    with open(items_sidecar(path), "w", encoding="utf-8") as f:
        f.write("".join(f"{item}\n" for item in table.items))


def save_model(directory, model: FactorModel, entities=None) -> None:
    """Write factor matrices and ``meta.txt`` (settings plus the objective trace)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_matrix(d / "h.txt", model.h)
    views = [v for v in VIEWS if model.w(v) is not None]
    for v in views:
        save_matrix(d / f"w_{v}.txt", model.w(v))
    lines = [
        f"k={model.k}",
        f"alpha_b={_fmt(model.alpha_b)}",
        f"alpha_s={_fmt(model.alpha_s)}",
        f"seed={model.seed}",
        f"views={','.join(views)}",
        f"converged={'true' if model.converged else 'false'}",
        "iter,objective,rel_change",
    ]
    lines += [f"{t.iteration},{_fmt(t.objective)},{_fmt(t.rel_change)}" for t in model.trace]
    (d / "meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if entities is not None:
        (d / "entities.txt").write_text("".join(f"{e}\n" for e in entities), encoding="utf-8")


def load_model(directory) -> FactorModel:
    d = Path(directory)
    meta_path = d / "meta.txt"
    lines = _read_lines(meta_path)
    meta, trace = {}, []
    in_trace = False
    for i, line in enumerate(lines, start=1):
        if in_trace:
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(meta_path, i, "expected 'iter,objective,rel_change'")
            trace.append(TraceEntry(int(parts[0]), float(parts[1]), float(parts[2])))
        elif line == "iter,objective,rel_change":
            in_trace = True
        else:
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(meta_path, i, "expected 'key=value'")
            meta[key] = value
    ws = {f"w_{v}": load_matrix(d / f"w_{v}.txt") for v in meta.get("views", "").split(",") if v}
    model = FactorModel(
        h=load_matrix(d / "h.txt"),
        trace=trace,
        converged=meta.get("converged") == "true",
        seed=int(meta.get("seed", 0)),
        alpha_b=float(meta.get("alpha_b", 1.0)),
        alpha_s=float(meta.get("alpha_s", 1.0)),
        **ws,
    )
    if int(meta.get("k", model.k)) != model.k:
        raise FormatError(meta_path, 1, "k does not match H")
    return model


def load_entities(path) -> list:
    return [line for line in _read_lines(path) if line]


def save_labels(path, entities, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["entity_id", "cluster"])
        w.writerows(zip(entities, (int(c) for c in labels)))


def load_labels(path) -> dict:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["entity_id", "cluster"]:
        raise FormatError(path, 1, "expected header 'entity_id,cluster'")
    out = {}
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise FormatError(path, i, "expected 'entity_id,cluster'")
        try:
            out[row[0]] = int(row[1])
        except ValueError:
            raise FormatError(path, i, f"bad cluster id {row[1]!r}") from None
    return out


def save_embedding_csv(path, entities, h) -> None:
    """Entities x k table of H for downstream consumers."""
    h = np.asarray(h)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["entity_id"] + [f"h{i}" for i in range(h.shape[0])])
        for e, col in zip(entities, h.T):
            w.writerow([e] + [_fmt(v) for v in col])


def save_report(path, items) -> None:
    """Flat ``key=value`` text report, one pair per line in the given order."""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in items:
            if isinstance(value, float) or isinstance(value, np.floating):
                value = _fmt(value)
            f.write(f"{key}={value}\n")


def load_report(path) -> dict:
    out = {}
    for line in _read_lines(path):
        key, _, value = line.partition("=")
        out[key] = value
    return out
