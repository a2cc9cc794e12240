"""Command-line driver.

Subcommands: ``generate``, ``fit``, ``select-k`` and ``eval``.  Settings come
from a JSON config file (``--config``); flags override it.  Exit status is
0 on success, 1 on an input error and 2 when ``fit`` stops before
converging (outputs are still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
from sklearn.metrics import adjusted_rand_score

from . import __version__
from . import io as mio
from .cluster import assign_argmax, davies_bouldin, gap_statistic, silhouette
from .nls import NlsError
from .nmf import VIEWS, FitError, FitOptions, fit_restarts
from .pipeline import build_profiles, default_mask, entity_union, make_problem, stacked_points
from .synthetic import SyntheticSpec, generate_synthetic, write_synthetic

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class InputError(Exception):
    """Bad configuration or unreadable input; maps to exit status 1."""


@dataclass
class RunConfig:
    views: dict = field(default_factory=dict)
    synthetic: Optional[dict] = None
    use_views: list = field(default_factory=lambda: list(VIEWS))
    entities: Optional[str] = None
    mask: object = True
    truth: Optional[str] = None
    points: Optional[str] = None
    k: Optional[int] = None
    k_range: Optional[list] = None
    alpha_b: float = 1.0
    alpha_s: float = 1.0
    rel_tol: float = 1e-6
    max_outer: int = 500
    restarts: int = 1
    seed: int = 0
    b_refs: int = 20
    out: str = "run"

    def validate(self, need_k=True):
        if need_k and (self.k is None) == (self.k_range is None):
            raise InputError("set exactly one of k or k_range")
        if self.k is not None and self.k < 1:
            raise InputError("k must be positive")
        if self.k_range is not None:
            if len(self.k_range) != 2 or self.k_range[0] < 1 or self.k_range[0] > self.k_range[1]:
                raise InputError(f"bad k_range {self.k_range}")
        if self.alpha_b < 0 or self.alpha_s < 0:
            raise InputError("alpha_b and alpha_s must be nonnegative")
        if self.restarts < 1 or self.max_outer < 1 or self.rel_tol <= 0:
            raise InputError("restarts and max_outer must be >= 1 and rel_tol > 0")
        bad = set(self.use_views) - set(VIEWS)
        if bad or not self.use_views:
            raise InputError(f"use_views must be a nonempty subset of {list(VIEWS)}")

    def echo(self) -> dict:
        """Settings that determine the outputs (everything but ``out``)."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.pop("out")
        return d


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InputError(f"{p}: invalid JSON: {e}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"{p}: unknown config keys {sorted(unknown)}")
    base = p.parent.resolve()
    for key in ("entities", "truth", "points"):
        data[key] = _resolve(base, data.get(key))
    if isinstance(data.get("mask"), str):
        data["mask"] = _resolve(base, data["mask"])
    views = {}
    for v, spec in data.get("views", {}).items():
        if v not in VIEWS:
            raise InputError(f"{p}: unknown view {v!r}")
        views[v] = dict(spec)
        views[v]["corpus"] = _resolve(base, spec.get("corpus"))
        views[v]["descriptions"] = _resolve(base, spec.get("descriptions"))
        views[v]["tables"] = [_resolve(base, t) for t in spec.get("tables", [])]
    data["views"] = views
    if "out" in data:
        data["out"] = _resolve(base, data["out"])
    return RunConfig(**data)


def _parse_k_range(text):
    try:
        a, b = text.split("..")
        return [int(a), int(b)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "k", None) is not None:
        cfg.k, cfg.k_range = args.k, None
    if getattr(args, "k_range", None) is not None:
        cfg.k, cfg.k_range = None, args.k_range
    for name in ("seed", "alpha_b", "alpha_s", "restarts", "max_outer", "rel_tol", "b_refs", "truth"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "mask", None) is not None:
        if args.mask is False:
            cfg.mask = False
        elif cfg.mask is False:
            cfg.mask = True
    if getattr(args, "views", None):
        cfg.use_views = args.views.split(",")
    if getattr(args, "points", None):
        cfg.points = str(Path(args.points).resolve())
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def _load_data(cfg: RunConfig):
    """Corpora, tables, entities and ground truth from files or the generator."""
    if cfg.synthetic is not None:
        try:
            data = generate_synthetic(SyntheticSpec.from_dict(cfg.synthetic))
        except (TypeError, ValueError) as e:
            raise InputError(f"bad synthetic spec: {e}") from None
        return data.corpora, data.tables, list(data.entities), data.mask, dict(zip(data.entities, data.labels))
    if not cfg.views:
        raise InputError("config defines no views and no synthetic spec")
    corpora, tables = {}, {}
    for v, spec in cfg.views.items():
        if v not in cfg.use_views:
            continue
        if not spec.get("corpus") or not spec.get("descriptions"):
            raise InputError(f"view {v!r} needs corpus and descriptions paths")
        corpora[v] = mio.load_corpus(spec["corpus"], spec["descriptions"])
        tables[v] = [mio.load_embedding_table(t) for t in spec["tables"]]
    if not corpora:
        raise InputError("none of the selected views are configured")
    entities = mio.load_entities(cfg.entities) if cfg.entities else entity_union(corpora)
    mask = mio.load_mask(cfg.mask) if isinstance(cfg.mask, str) else None
    truth = mio.load_labels(cfg.truth) if cfg.truth else None
    return corpora, tables, entities, mask, truth


def _prepare(cfg: RunConfig):
    corpora, tables, entities, mask, truth = _load_data(cfg)
    corpora = {v: c for v, c in corpora.items() if v in cfg.use_views}
    if not corpora:
        raise InputError("none of the selected views are available")
    tfidf = {v: cfg.views.get(v, {}).get("tfidf", True) for v in corpora}
    profiles = build_profiles(corpora, tables, entities, tfidf)
    if cfg.mask is False or "d" not in profiles:
        mask = None
    elif mask is None:
        mask = default_mask(profiles["d"])
    elif mask.shape != profiles["d"].shape:
        raise InputError(f"mask shape {mask.shape} does not match diagnosis profile {profiles['d'].shape}")
    return profiles, entities, mask, truth


def _write_manifest(outdir: Path, command: str, cfg: RunConfig):
    lines = [
        f"command={command}",
        f"config={json.dumps(cfg.echo(), sort_keys=True)}",
        f"seed={cfg.seed}",
        f"mvnmf={__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        f"scipy={scipy.__version__}",
    ]
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_gap(path: Path, gap):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["k", "gap", "sk", "log_w", "log_w_ref"])
        for row in zip(gap.ks, gap.gap, gap.sk, gap.log_w, gap.log_w_ref):
            w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def _select_k(cfg: RunConfig, points):
    lo, hi = cfg.k_range
    if hi > points.shape[1]:
        raise InputError(f"k_range upper bound {hi} exceeds {points.shape[1]} points")
    return gap_statistic(points, range(lo, hi + 1), b_refs=cfg.b_refs, seed=cfg.seed)


def _cluster_items(h, entities, truth):
    assignment = assign_argmax(h)
    items = [("n_entities", h.shape[1])]
    if np.unique(assignment.labels).size >= 2:
        items += [("davies_bouldin", davies_bouldin(h, assignment)),
                  ("silhouette", silhouette(h, assignment))]
    else:
        items += [("davies_bouldin", "nan"), ("silhouette", "nan")]
    items += [("sizes", ",".join(str(int(s)) for s in assignment.sizes)),
              ("flagged", int(assignment.flagged.sum()))]
    if truth is not None:
        missing = [e for e in entities if e not in truth]
        if missing:
            raise InputError(f"ground truth lacks entity {missing[0]!r}")
        items.append(("adjusted_rand", float(adjusted_rand_score([truth[e] for e in entities],
                                                                  assignment.labels))))
    return assignment, items


def cmd_generate(args) -> int:
    if args.spec is not None:
        p = Path(args.spec)
        if not p.is_file():
            raise InputError(f"spec file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InputError(f"{p}: invalid JSON: {e}") from None
    else:
        raw = {}
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise InputError(f"bad synthetic spec: {e}") from None
    write_synthetic(generate_synthetic(spec), args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = apply_flags(load_config(args.config), args)
    cfg.validate()
    profiles, entities, mask, truth = _prepare(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    probe = make_problem(profiles, 1, mask=mask, alpha_b=cfg.alpha_b, alpha_s=cfg.alpha_s,
                         seed=cfg.seed, views=cfg.use_views)
    k = cfg.k
    if cfg.k_range is not None:
        gap = _select_k(cfg, stacked_points(probe))
        _write_gap(out / "gap.csv", gap)
        k = gap.k
    try:
        problem = make_problem(profiles, k, mask=mask, alpha_b=cfg.alpha_b, alpha_s=cfg.alpha_s,
                               seed=cfg.seed, views=cfg.use_views)
    except ValueError as e:
        raise InputError(str(e)) from None
    model = fit_restarts(problem, cfg.restarts, FitOptions(max_outer=cfg.max_outer, rel_tol=cfg.rel_tol))

    mio.save_model(out / "model", model, entities)
    assignment, items = _cluster_items(model.h, entities, truth)
    mio.save_labels(out / "labels.csv", entities, assignment.labels)
    mio.save_embedding_csv(out / "embedding.csv", entities, model.h)
    head = [
        ("command", "fit"),
        ("k", k),
        ("views", ",".join(problem.views)),
        ("masked", "true" if problem.mask is not None else "false"),
        ("objective", model.objective),
        ("sweeps", len(model.trace)),
        ("converged", "true" if model.converged else "false"),
        ("unobserved_cols", int(model.unobserved_cols.size)),
    ]
    mio.save_report(out / "report.txt", head + items)
    _write_manifest(out, "fit", cfg)
    return EXIT_OK if model.converged else EXIT_NOT_CONVERGED


def cmd_select_k(args) -> int:
    cfg = apply_flags(load_config(args.config), args)
    cfg.validate(need_k=False)
    if cfg.k_range is None:
        raise InputError("select-k needs --k-range or k_range in the config")
    if cfg.points is not None:
        points = mio.load_matrix(cfg.points)
    else:
        profiles, _, mask, _ = _prepare(cfg)
        points = stacked_points(make_problem(profiles, 1, mask=mask, alpha_b=cfg.alpha_b,
                                             alpha_s=cfg.alpha_s, views=cfg.use_views))
    try:
        gap = _select_k(cfg, points)
    except ValueError as e:
        raise InputError(str(e)) from None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_gap(out / "gap.csv", gap)
    mio.save_report(out / "report.txt", [("command", "select-k"), ("k", gap.k),
                                          ("k_range", f"{cfg.k_range[0]}..{cfg.k_range[1]}"),
                                          ("b_refs", cfg.b_refs), ("n_points", points.shape[1])])
    _write_manifest(out, "select-k", cfg)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.out is None:
        raise InputError("eval needs --out")
    cfg = apply_flags(load_config(args.config), args)
    model_dir = Path(args.model)
    model = mio.load_model(model_dir)
    ent_path = model_dir / "entities.txt"
    entities = mio.load_entities(ent_path) if ent_path.is_file() else [str(i) for i in range(model.h.shape[1])]
    if len(entities) != model.h.shape[1]:
        raise InputError(f"{ent_path} lists {len(entities)} entities for {model.h.shape[1]} columns")
    truth = mio.load_labels(cfg.truth) if cfg.truth else None
    assignment, items = _cluster_items(model.h, entities, truth)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mio.save_labels(out / "labels.csv", entities, assignment.labels)
    mio.save_report(out / "report.txt", [("command", "eval"), ("k", model.k)] + items)
    _write_manifest(out, "eval", cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvnmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    def fitting(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--k", type=int)
        g.add_argument("--k-range", type=_parse_k_range, metavar="A..B")
        p.add_argument("--alpha-b", type=float)
        p.add_argument("--alpha-s", type=float)
        p.add_argument("--mask", dest="mask", action="store_true", default=None)
        p.add_argument("--no-mask", dest="mask", action="store_false")
        p.add_argument("--views", help="comma-separated subset of d,b,s")
        p.add_argument("--b-refs", type=int)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--spec", "--config", dest="spec", help="JSON synthetic spec")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit the coupled factorization and cluster")
    common(f)
    fitting(f)
    f.add_argument("--restarts", type=int)
    f.add_argument("--max-outer", type=int)
    f.add_argument("--rel-tol", type=float)
    f.add_argument("--truth", help="ground-truth labels CSV")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("select-k", help="choose k by the gap statistic")
    common(s)
    fitting(s)
    s.add_argument("--points", help="matrix file of points (features x n) instead of profiles")
    s.set_defaults(func=cmd_select_k)

    e = sub.add_parser("eval", help="cluster report for a saved model")
    common(e)
    e.add_argument("--model", required=True, help="model directory written by fit")
    e.add_argument("--truth", help="ground-truth labels CSV")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, mio.FormatError, KeyError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"mvnmf: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, NlsError) as e:
        print(f"mvnmf: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
