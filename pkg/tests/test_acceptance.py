"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line for its criterion.  Run alone
with ``pytest tests/test_acceptance.py -v``.
"""
import contextlib
import json
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from mvnmf.cluster import Assignment, assign_argmax, davies_bouldin, gap_statistic, silhouette
from mvnmf.matrix import minmax_scale_rows
from mvnmf.nls import RegularizationWarning, kkt_residual, solve_nls_bpp
from mvnmf.nmf import CoupledProblem, FitOptions, fit, fit_masked, init_factors, objective
from mvnmf.pipeline import build_profiles, make_problem
from mvnmf.profile import (
    EmbeddingTable,
    RecordCorpus,
    assemble_profile,
    build_view,
    embedding_subprofile,
    tfidf_subprofile,
    tfidf_terms,
)
from mvnmf.synthetic import SyntheticSpec, generate_synthetic
from oracles import enumerate_nnls, hand_tfidf, naive_davies_bouldin, naive_silhouette, planted_blobs


@pytest.fixture
def criterion(capsys):
    """Context manager factory that prints the criterion outcome and re-raises failures."""

    @contextlib.contextmanager
    def run(number, title):
        start = time.perf_counter()
        try:
            yield
        except BaseException as e:
            with capsys.disabled():
                print(f"\ncriterion {number} FAIL  {title}: {str(e).splitlines()[0] if str(e) else type(e).__name__}")
            raise
        with capsys.disabled():
            print(f"\ncriterion {number} PASS  {title} ({time.perf_counter() - start:.1f} s)")

    return run


def planted(seed, rows=60, cols=80, k=5):
    rng = np.random.default_rng(seed)
    return rng.random((rows, k)) @ rng.random((k, cols))


def test_1_nls_bpp_correctness(criterion):
    with criterion(1, "NLS-BPP matches enumeration; KKT <= 1e-8 at k=20"):
        start = time.perf_counter()
        for seed in range(200):
            rng = np.random.default_rng(seed)
            k = int(rng.integers(1, 4))
            m = int(rng.integers(1, 7))
            a, b = rng.standard_normal((m, k)), rng.standard_normal(m)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RegularizationWarning)
                sol = solve_nls_bpp(a, b)
            _, r_ref = enumerate_nnls(a, b)
            diff = abs(np.linalg.norm(a @ sol.x.ravel() - b) - r_ref)
            assert diff <= 1e-9, f"small problem {seed}: residual gap {diff:.3e}"
        for seed in range(50):
            rng = np.random.default_rng(10_000 + seed)
            a, b = rng.standard_normal((100, 20)), rng.standard_normal(100)
            sol = solve_nls_bpp(a, b)
            res = kkt_residual(a.T @ a, a.T @ b[:, None], sol.x)
            assert res <= 1e-8, f"k=20 problem {seed}: KKT residual {res:.3e}"
        elapsed = time.perf_counter() - start
        assert elapsed < 10, f"runtime {elapsed:.1f} s"


def test_2_bcd_descent(criterion):
    with criterion(2, "objective nonincreasing across every block update"):
        start = time.perf_counter()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            pr = CoupledProblem(p_d=rng.random((30, 100)), p_b=rng.random((20, 100)), p_s=rng.random((25, 100)),
                                alpha_b=float(rng.uniform(0.1, 2)), alpha_s=float(rng.uniform(0.1, 2)),
                                k=8, seed=seed)
            values = [objective(pr, init_factors(pr))]
            fit(pr, FitOptions(max_outer=30, rel_tol=1e-12),
                callback=lambda sweep, block, m: values.append(objective(pr, m)))
            for i, (a, b) in enumerate(zip(values, values[1:])):
                assert b <= a + 1e-10 * abs(a), f"instance {seed}, update {i}: {a!r} -> {b!r}"
        elapsed = time.perf_counter() - start
        assert elapsed < 30, f"runtime {elapsed:.1f} s"


def test_3_planted_recovery(criterion):
    with criterion(3, "planted rank-5 recovery, best of 5 seeds <= 1e-3"):
        start = time.perf_counter()
        p = planted(0)
        errs = []
        for s in range(5):
            m = fit(CoupledProblem(p_d=p, k=5, seed=s), FitOptions(max_outer=500))
            errs.append(np.linalg.norm(p - m.w_d @ m.h) / np.linalg.norm(p))
        assert min(errs) <= 1e-3, f"best relative error {min(errs):.3e}"
        elapsed = time.perf_counter() - start
        assert elapsed < 20, f"runtime {elapsed:.1f} s"


def test_4_masked_correctness(criterion):
    with criterion(4, "masked fit: all-ones, masked-entry independence, 20% completion"):
        rng = np.random.default_rng(4)
        views = dict(p_d=rng.random((30, 50)), p_b=rng.random((20, 50)), p_s=rng.random((15, 50)))
        pr = CoupledProblem(**views, k=4, seed=2)
        plain = fit(pr)
        ones = fit_masked(CoupledProblem(**views, mask=np.ones((30, 50), dtype=bool), k=4, seed=2))
        rel = abs(ones.objective - plain.objective) / plain.objective
        assert rel <= 1e-9, f"(a) relative objective gap {rel:.3e}"

        mask = rng.random((30, 50)) >= 0.3
        masked = CoupledProblem(**views, mask=mask, k=4, seed=2)
        dirty = views["p_d"].copy()
        dirty[~mask] = rng.random((~mask).sum()) * 100
        perturbed = CoupledProblem(**{**views, "p_d": dirty}, mask=mask, k=4, seed=2)
        a, b = fit_masked(masked), fit_masked(perturbed)
        assert objective(masked, a) == objective(perturbed, a), "(b) objective reads masked entries"
        for name in ("h", "w_d", "w_b", "w_s"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), f"(b) {name} changed"

        p = planted(1)
        crng = np.random.default_rng(5)
        hidden = crng.random(p.shape) < 0.2
        best = min((fit_masked(CoupledProblem(p_d=p, mask=~hidden, k=5, seed=s)) for s in range(5)),
                   key=lambda m: m.objective)
        approx = best.w_d @ best.h
        held = np.linalg.norm((p - approx)[hidden]) / np.linalg.norm(p[hidden])
        assert held <= 0.05, f"(c) held-out relative error {held:.3e}"


def test_5_metric_oracles(criterion):
    with criterion(5, "Davies-Bouldin and silhouette equal naive loop oracle (1e-12 rel)"):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(3, 21))
            k = int(rng.integers(2, min(5, n) + 1))
            x = rng.standard_normal((int(rng.integers(1, 5)), n))
            labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
            rng.shuffle(labels)
            a = Assignment(labels, k)
            pts = [tuple(float(v) for v in col) for col in x.T]
            db, db_ref = davies_bouldin(x, a), naive_davies_bouldin(pts, list(labels))
            s, s_ref = silhouette(x, a), naive_silhouette(pts, list(labels))
            assert abs(db - db_ref) <= 1e-12 * abs(db_ref), f"instance {seed}: DB {db!r} vs {db_ref!r}"
            assert abs(s - s_ref) <= 1e-12 * max(abs(s_ref), 1e-300) or s == s_ref, \
                f"instance {seed}: silhouette {s!r} vs {s_ref!r}"


def test_6_gap_statistic(criterion):
    with criterion(6, "gap statistic picks 3 for three blobs (>= 95%) and 1 for one blob"):
        hits = 0
        for trial in range(20):
            x, _ = planted_blobs(trial)
            hits += gap_statistic(x, range(1, 7), b_refs=20, seed=trial).k == 3
        assert hits >= 19, f"three blobs chosen in {hits}/20 trials"
        for trial in range(20):
            x, _ = planted_blobs(trial, centers=1)
            k = gap_statistic(x, range(1, 7), b_refs=20, seed=trial).k
            assert k == 1, f"single blob trial {trial} chose k={k}"


def test_7_views_improve_clustering(criterion):
    with criterion(7, "three views beat diagnosis only in >= 80% of 10 trials"):
        start = time.perf_counter()
        wins, scores = 0, []
        for trial in range(10):
            data = generate_synthetic(SyntheticSpec(seed=trial))
            profiles = build_profiles(data.corpora, data.tables, data.entities)
            ari = {}
            for views in (("d", "b", "s"), ("d",)):
                pr = make_problem(profiles, 5, mask=data.mask, seed=trial, views=views)
                ari[views] = adjusted_rand_score(data.labels, assign_argmax(fit_masked(pr).h).labels)
            scores.append((ari[("d",)], ari[("d", "b", "s")]))
            wins += ari[("d", "b", "s")] > ari[("d",)]
        assert wins >= 8, f"wins {wins}/10, (diagnosis, all) ARI: {scores}"
        elapsed = time.perf_counter() - start
        assert elapsed < 120, f"runtime {elapsed:.1f} s"


def test_8_profile_oracles(criterion):
    with criterion(8, "TF-IDF and profile assembly equal hand-computed oracles"):
        def text_corpus(texts):
            items = [f"i{j}" for j in range(len(texts))]
            return RecordCorpus([f"e{j}" for j in range(len(texts))], items, [[i] for i in items],
                                dict(zip(items, texts)))

        assert np.array_equal(tfidf_subprofile(text_corpus(["prediabetes"])), [[1.0]])
        assert np.array_equal(tfidf_subprofile(text_corpus(["asthma", "gout"])), np.eye(2))
        toy = ["severe pain", "chronic pain", "severe anxiety"]
        terms, expected = hand_tfidf(toy)
        assert tfidf_terms(text_corpus(toy)) == terms, "toy term list"
        assert np.array_equal(tfidf_subprofile(text_corpus(toy)), expected), "toy TF-IDF matrix"

        e = np.array([[1.0, -2.0, 0.5], [4.0, 0.0, 3.0]])
        table = EmbeddingTable(["A", "B", "C"], e)
        held = [["B"], ["A", "C"], ["A", "A", "B"]]
        out = embedding_subprofile(RecordCorpus(["x", "y", "z"], ["A", "B", "C"], held), table)
        assert np.array_equal(out[:, 0], e[:, 1]), "single item"
        assert np.array_equal(out[:, 1], (e[:, 0] + e[:, 2]) / 2), "two items"
        assert np.array_equal(out[:, 2], e @ np.array([1.0, 1.0, 0.0]) / 2), "duplicate items"

        rng = np.random.default_rng(0)
        s1, s2 = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        prof = assemble_profile([s1, s2], ["x", "y"])
        assert prof.row_blocks == (("x", 0, 2), ("y", 2, 4))
        stacked = np.vstack([s1, s2])
        blockwise = np.vstack([minmax_scale_rows(stacked[:2])[0], minmax_scale_rows(stacked[2:])[0]])
        assert np.array_equal(prof.matrix, blockwise), "scale/concat order"

        corpus = RecordCorpus(["p0", "p1", "p2"], ["d1", "d2"], [["d1"], ["d1", "d2"], []],
                              {"d1": "type 2 diabetes", "d2": "obesity"})
        tables = [EmbeddingTable(["d1", "d2"], rng.standard_normal((d, 2)), name=f"t{d}") for d in (3, 4, 5)]
        view = build_view(corpus, tables)
        assert view.shape == (len(tfidf_terms(corpus)) + 12, 3), "row count"
        assert np.array_equal(view.matrix[:, 2], np.zeros(view.shape[0])), "empty entity column"


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "mvnmf.cli", *args], cwd=cwd, capture_output=True, text=True)


def _tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_9_cli_determinism(criterion, tmp_path):
    with criterion(9, "repeated CLI runs give byte-identical outputs"):
        spec = dict(n_entities=200, n_clusters=4, seed=7)
        (tmp_path / "spec.json").write_text(json.dumps(spec))
        for rep in ("a", "b"):
            runs = [
                ("generate", "--spec", "spec.json", "--out", f"{rep}/data"),
                ("fit", "--config", "a/data/dataset.json", "--out", f"{rep}/fit", "--restarts", "2"),
                ("fit", "--config", "a/data/dataset.json", "--out", f"{rep}/gapfit", "--k-range", "2..5",
                 "--b-refs", "5", "--max-outer", "50"),
                ("select-k", "--config", "a/data/dataset.json", "--out", f"{rep}/sel", "--k-range", "1..5",
                 "--b-refs", "5"),
                ("eval", "--model", "a/fit/model", "--truth", "a/data/truth.csv", "--out", f"{rep}/eval"),
            ]
            for args in runs:
                proc = _cli(*args, cwd=tmp_path)
                assert proc.returncode in (0, 2), f"{args[0]} exited {proc.returncode}: {proc.stderr.strip()}"
        for name in ("data", "fit", "gapfit", "sel", "eval"):
            a, b = _tree(tmp_path / "a" / name), _tree(tmp_path / "b" / name)
            assert a.keys() == b.keys() and a, f"{name}: file sets differ"
            for f in a:
                assert a[f] == b[f], f"{name}/{f} differs between runs"
