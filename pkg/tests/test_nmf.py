import dataclasses

import numpy as np
import pytest

from mvnmf.matrix import DimensionError
from mvnmf.nmf import (
    CoupledProblem,
    FactorModel,
    FitOptions,
    fit,
    fit_masked,
    fit_restarts,
    init_factors,
    match_components,
    objective,
)
from oracles import loop_masked_residual_sq


def random_views(seed, n=40, rows=(15, 10, 12)):
    rng = np.random.default_rng(seed)
    return {f"p_{v}": rng.random((r, n)) for v, r in zip("dbs", rows)}


def relative_error(p, model):
    return np.linalg.norm(p - model.w_d @ model.h) / np.linalg.norm(p)


class TestProblem:
    def test_views_must_share_entities(self):
        with pytest.raises(DimensionError):
            CoupledProblem(p_d=np.ones((3, 4)), p_b=np.ones((3, 5)), k=1)

    def test_rank_bounds(self):
        with pytest.raises(ValueError):
            CoupledProblem(p_d=np.ones((3, 4)), k=4)
        with pytest.raises(ValueError):
            CoupledProblem(p_d=np.ones((3, 4)), k=0)

    def test_rejects_negative_data_and_alphas(self):
        with pytest.raises(ValueError):
            CoupledProblem(p_d=-np.ones((3, 4)), k=1)
        with pytest.raises(ValueError):
            CoupledProblem(p_d=np.ones((3, 4)), alpha_b=-1.0, k=1)

    def test_mask_needs_diagnosis_view(self):
        with pytest.raises(ValueError):
            CoupledProblem(p_b=np.ones((3, 4)), mask=np.ones((3, 4)), k=1)
        with pytest.raises(DimensionError):
            CoupledProblem(p_d=np.ones((3, 4)), mask=np.ones((3, 3)), k=1)

    def test_any_subset_of_views(self):
        pr = CoupledProblem(p_s=np.ones((3, 4)), k=2)
        assert list(pr.views) == ["s"]


class TestInit:
    def test_same_seed_identical(self):
        pr = CoupledProblem(**random_views(0), k=3, seed=5)
        a, b = init_factors(pr), init_factors(pr)
        for name in ("h", "w_d", "w_b", "w_s"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_different_seeds_differ(self):
        views = random_views(0)
        a = init_factors(CoupledProblem(**views, k=3, seed=1))
        b = init_factors(CoupledProblem(**views, k=3, seed=2))
        assert not np.array_equal(a.h, b.h)

    def test_objective_finite_positive(self):
        pr = CoupledProblem(**random_views(0), k=3)
        f = objective(pr, init_factors(pr))
        assert np.isfinite(f) and f > 0

    def test_scale_and_nonnegativity(self):
        pr = CoupledProblem(**random_views(1), k=4)
        m = init_factors(pr)
        bound = np.sqrt(pr.p_d.mean() / 4)
        assert m.h.min() >= 0 and m.h.max() <= bound


class TestObjective:
    def setup_method(self):
        self.views = random_views(3, n=8, rows=(5, 4, 3))
        self.pr = CoupledProblem(**self.views, alpha_b=0.7, alpha_s=1.9, k=2)

    def test_perfect_factors(self):
        rng = np.random.default_rng(0)
        h = rng.random((2, 8))
        ws = {f"w_{v}": rng.random((r, 2)) for v, r in zip("dbs", (5, 4, 3))}
        pr = CoupledProblem(**{f"p_{v}": ws[f"w_{v}"] @ h for v in "dbs"}, k=2)
        assert objective(pr, FactorModel(h=h, **ws)) == pytest.approx(0.0, abs=1e-25)

    def test_zero_factors(self):
        zero = FactorModel(h=np.zeros((2, 8)), w_d=np.zeros((5, 2)), w_b=np.zeros((4, 2)), w_s=np.zeros((3, 2)))
        expected = (np.sum(self.views["p_d"] ** 2) + 0.7 * np.sum(self.views["p_b"] ** 2)
                    + 1.9 * np.sum(self.views["p_s"] ** 2))
        assert objective(self.pr, zero) == pytest.approx(expected, rel=1e-13)

    def test_matches_loop_oracle_with_mask(self):
        mask = np.random.default_rng(4).random((5, 8)) > 0.3
        pr = dataclasses.replace(self.pr, mask=mask)
        model = init_factors(pr)
        ones = np.ones((4, 8))
        ones_s = np.ones((3, 8))
        expected = (loop_masked_residual_sq(pr.p_d, model.w_d, model.h, mask)
                    + 0.7 * loop_masked_residual_sq(pr.p_b, model.w_b, model.h, ones)
                    + 1.9 * loop_masked_residual_sq(pr.p_s, model.w_s, model.h, ones_s))
        assert objective(pr, model) == pytest.approx(expected, rel=1e-12)

    def test_scale_coupling_identity(self):
        c = 3.5
        model = init_factors(self.pr)
        scaled_pr = dataclasses.replace(self.pr, p_b=c * self.pr.p_b, alpha_b=self.pr.alpha_b / c**2)
        scaled = dataclasses.replace(model, w_b=c * model.w_b)
        assert objective(scaled_pr, scaled) == pytest.approx(objective(self.pr, model), rel=1e-12)

    def test_dimension_mismatch(self):
        model = init_factors(self.pr)
        with pytest.raises(DimensionError):
            objective(self.pr, dataclasses.replace(model, w_b=np.ones((3, 2))))


class TestFit:
    def test_trace_nonincreasing_and_nonnegative(self):
        for seed in range(4):
            pr = CoupledProblem(**random_views(seed), alpha_b=0.5, alpha_s=2.0, k=4, seed=seed)
            model = fit(pr, FitOptions(max_outer=60))
            obj = [t.objective for t in model.trace]
            for a, b in zip(obj, obj[1:]):
                assert b <= a * (1 + 1e-10)
            for f in (model.h, model.w_d, model.w_b, model.w_s):
                assert f.min() >= 0

    def test_every_block_update_descends(self):
        pr = CoupledProblem(**random_views(9), k=5, seed=2)
        values = [objective(pr, init_factors(pr))]
        model = fit(pr, FitOptions(max_outer=25),
                    callback=lambda sweep, block, m: values.append(objective(pr, m)))
        assert len(values) == 1 + 4 * len(model.trace)
        for a, b in zip(values, values[1:]):
            assert b <= a + 1e-10 * abs(a)

    def test_block_order(self):
        pr = CoupledProblem(**random_views(9), k=2)
        blocks = []
        fit(pr, FitOptions(max_outer=2), callback=lambda s, b, m: blocks.append((s, b)))
        assert blocks == [(1, "w_d"), (1, "w_b"), (1, "w_s"), (1, "h"),
                          (2, "w_d"), (2, "w_b"), (2, "w_s"), (2, "h")]

    def test_zero_alphas_reduce_to_single_view(self):
        views = random_views(5)
        full = fit(CoupledProblem(**views, alpha_b=0.0, alpha_s=0.0, k=3, seed=7), FitOptions(max_outer=50))
        single = fit(CoupledProblem(p_d=views["p_d"], k=3, seed=7), FitOptions(max_outer=50))
        np.testing.assert_array_equal(full.h, single.h)
        np.testing.assert_array_equal(full.w_d, single.w_d)
        assert [t.objective for t in full.trace] == [t.objective for t in single.trace]

    def test_planted_single_view_recovery(self):
        rng = np.random.default_rng(0)
        p = rng.random((60, 5)) @ rng.random((5, 80))
        errs = [relative_error(p, fit(CoupledProblem(p_d=p, k=5, seed=s))) for s in range(5)]
        assert min(errs) <= 1e-3

    def test_max_outer_one(self):
        pr = CoupledProblem(**random_views(1), k=4)
        model = fit(pr, FitOptions(max_outer=1))
        assert len(model.trace) == 1 and not model.converged

    def test_stationarity_at_convergence(self):
        pr = CoupledProblem(**random_views(2), k=3, seed=1)
        opts = FitOptions(rel_tol=1e-7)
        model = fit(pr, opts)
        assert model.converged
        f = model.objective
        again = fit(pr, FitOptions(max_outer=1), init=model)
        assert abs(again.objective - f) < 10 * opts.rel_tol * abs(f)

    def test_restarts_pick_lowest_objective(self):
        pr = CoupledProblem(**random_views(3), k=4, seed=10)
        best = fit_restarts(pr, 3, FitOptions(max_outer=30))
        singles = [fit(dataclasses.replace(pr, seed=10 + r), FitOptions(max_outer=30)).objective for r in range(3)]
        assert best.objective == min(singles)


class TestFitMasked:
    def test_requires_mask(self):
        with pytest.raises(ValueError):
            fit_masked(CoupledProblem(**random_views(0), k=2))

    def test_all_ones_mask_matches_unmasked(self):
        views = random_views(6)
        pr = CoupledProblem(**views, k=4, seed=3)
        plain = fit(pr)
        masked = fit_masked(dataclasses.replace(pr, mask=np.ones_like(views["p_d"], dtype=bool)))
        assert masked.objective == pytest.approx(plain.objective, rel=1e-9)
        perm = match_components(plain.h, masked.h)
        np.testing.assert_allclose(masked.h[perm], plain.h, atol=1e-6)
        np.testing.assert_allclose(masked.w_d[:, perm], plain.w_d, atol=1e-6)

    def test_masked_entries_never_read(self):
        views = random_views(7)
        mask = np.random.default_rng(1).random(views["p_d"].shape) > 0.25
        pr = CoupledProblem(**views, mask=mask, k=3, seed=4)
        dirty = views["p_d"].copy()
        dirty[~mask] = np.random.default_rng(2).random((~mask).sum()) * 50
        pr2 = dataclasses.replace(pr, p_d=dirty)
        a, b = fit_masked(pr), fit_masked(pr2)
        assert objective(pr, a) == objective(pr2, a)
        np.testing.assert_array_equal(a.h, b.h)
        np.testing.assert_array_equal(a.w_d, b.w_d)

    def test_fully_masked_column_constrained_by_browsing(self):
        views = random_views(8)
        mask = np.ones(views["p_d"].shape, dtype=bool)
        mask[:, 5] = False
        model = fit_masked(CoupledProblem(**views, mask=mask, k=3), FitOptions(max_outer=40))
        assert np.all(np.isfinite(model.h[:, 5])) and model.h[:, 5].sum() > 0
        assert model.unobserved_cols.size == 0

    def test_unobserved_rows_and_columns_single_view(self):
        p = random_views(8)["p_d"]
        mask = np.ones(p.shape, dtype=bool)
        mask[:, 2] = False
        mask[4, :] = False
        model = fit_masked(CoupledProblem(p_d=p, mask=mask, k=3), FitOptions(max_outer=20))
        np.testing.assert_array_equal(model.h[:, 2], 0.0)
        np.testing.assert_array_equal(model.w_d[4], 0.0)
        assert list(model.unobserved_cols) == [2]
        assert list(model.unobserved_rows) == [4]

    def test_planted_completion(self):
        rng = np.random.default_rng(21)
        p = rng.random((40, 3)) @ rng.random((3, 60))
        while True:
            mask = rng.random(p.shape) >= 0.2
            if mask.sum(axis=0).min() >= 5 and mask.sum(axis=1).min() >= 5:
                break
        best = None
        for s in range(5):
            m = fit_masked(CoupledProblem(p_d=p, mask=mask, k=3, seed=s))
            if best is None or m.objective < best.objective:
                best = m
        approx = best.w_d @ best.h
        observed_rel = np.linalg.norm((p - approx)[mask]) / np.linalg.norm(p[mask])
        held_rel = np.linalg.norm((p - approx)[~mask]) / np.linalg.norm(p[~mask])
        assert observed_rel <= 1e-3
        assert held_rel <= 0.05


def test_match_components_recovers_permutation():
    h = np.random.default_rng(0).random((4, 30))
    perm = np.array([2, 0, 3, 1])
    assert list(perm[match_components(h, h[perm])]) == [0, 1, 2, 3]
