import numpy as np
import pytest

from hfprune import fileio
from hfprune import model as M
from hfprune import pruning
from hfprune.criteria import CriterionKind
from hfprune.numerics import ShapeError
from hfprune.pruning import InfeasibleRatio, PrunePlan
from hfprune.scoring import ImportanceReport
from conftest import make_config


def report_from_scores(scores_per_layer) -> ImportanceReport:
    return ImportanceReport(
        criterion=CriterionKind.IE,
        layer_scores=[np.asarray(s, dtype=np.float64) for s in scores_per_layer],
        token_count=1, sequence_count=1, calib_digest="test", version="t")


class TestMakePlan:
    def test_rho_zero_removes_nothing(self):
        plan = pruning.make_plan(report_from_scores([np.arange(10)]), 0.0)
        assert plan.removed[0].size == 0
        assert plan.kept[0].tolist() == list(range(10))

    def test_floor_of_fractional_k(self):
        plan = pruning.make_plan(report_from_scores([np.arange(10)]), 0.25)
        assert plan.removed[0].size == 2  # floor(2.5)

    def test_lowest_scores_removed(self):
        plan = pruning.make_plan(report_from_scores([[3, 1, 2, 1]]), 0.5)
        assert plan.removed[0].tolist() == [1, 3]

    def test_tie_broken_by_lower_index(self):
        plan = pruning.make_plan(report_from_scores([[1, 1, 2, 3]]), 0.25)
        assert plan.removed[0].tolist() == [0]

    def test_nested_ratios_are_monotone(self, rng):
        report = report_from_scores([rng.standard_normal(40) ** 2])
        small = set(pruning.make_plan(report, 0.2).removed[0].tolist())
        large = set(pruning.make_plan(report, 0.45).removed[0].tolist())
        assert small <= large

    def test_rho_out_of_range(self):
        report = report_from_scores([np.arange(4)])
        for rho in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError):
                pruning.make_plan(report, rho)

    def test_partition_invariant(self, rng):
        report = report_from_scores([rng.random(17), rng.random(9)])
        plan = pruning.make_plan(report, 0.3)
        for rm, kp, dh in zip(plan.removed, plan.kept, (17, 9)):
            both = np.concatenate([rm, kp])
            assert sorted(both.tolist()) == list(range(dh))
            assert rm.size == int(0.3 * dh)


class TestApplyPlan:
    def test_empty_plan_is_byte_identity(self, tiny_model):
        report = report_from_scores([np.arange(dh) for dh
                                     in tiny_model.config.d_hidden])
        plan = pruning.make_plan(report, 0.0)
        pruned = pruning.apply_plan(tiny_model, plan)
        assert fileio.model_bytes(pruned) == fileio.model_bytes(tiny_model)

    def test_pruned_equals_masked_forward(self, rng, tiny_model):
        report = report_from_scores([rng.random(dh) for dh
                                     in tiny_model.config.d_hidden])
        plan = pruning.make_plan(report, 0.3)
        pruned = pruning.apply_plan(tiny_model, plan)
        for _ in range(5):
            tokens = rng.integers(0, 64, size=10)
            masked = M.masked_logits(tiny_model, tokens,
                                     dict(enumerate(plan.removed)))
            assert np.max(np.abs(M.logits_only(pruned, tokens) - masked)) <= 1e-5

    def test_down_to_one_neuron(self, rng):
        model = M.random_model(make_config(n_layers=1, d_hidden=8), rng)
        plan = PrunePlan(rho=0.875, report_digest="x",
                         removed=[np.arange(1, 8, dtype=np.int64)],
                         kept=[np.array([0], dtype=np.int64)])
        pruned = pruning.apply_plan(model, plan)
        assert pruned.config.d_hidden == (1,)
        logits = M.logits_only(pruned, rng.integers(0, 64, size=4))
        from hfprune import numerics as nm
        for row in logits:
            nm.validate_prob_vector(nm.softmax_stable(row))

    def test_removing_everything_rejected(self, rng):
        model = M.random_model(make_config(n_layers=1, d_hidden=4), rng)
        plan = PrunePlan(rho=0.99, report_digest="x",
                         removed=[np.arange(4, dtype=np.int64)],
                         kept=[np.array([], dtype=np.int64)])
        with pytest.raises(ShapeError):
            pruning.apply_plan(model, plan)

    def test_round_trips_through_file(self, rng, tiny_model, tmp_path):
        report = report_from_scores([rng.random(dh) for dh
                                     in tiny_model.config.d_hidden])
        pruned = pruning.apply_plan(tiny_model, pruning.make_plan(report, 0.25))
        path = tmp_path / "pruned.hfpw"
        fileio.save_model(pruned, path)
        loaded = fileio.load_model(path)
        assert loaded.config.d_hidden == pruned.config.d_hidden
        assert fileio.model_bytes(loaded) == path.read_bytes()

    def test_layer_count_mismatch(self, tiny_model):
        plan = PrunePlan(rho=0.0, report_digest="x",
                         removed=[np.array([], dtype=np.int64)],
                         kept=[np.arange(24, dtype=np.int64)])
        with pytest.raises(ShapeError):
            pruning.apply_plan(tiny_model, plan)


class TestRhoFromOverall:
    def test_zero(self, tiny_model):
        assert pruning.rho_from_overall(tiny_model, 0.0) == 0.0

    def test_formula(self, tiny_model):
        counts = M.param_counts(tiny_model)
        rho = pruning.rho_from_overall(tiny_model, 0.2)
        assert rho == pytest.approx(0.2 * counts["total"] / counts["mlp"])

    def test_matches_mlp_share_arithmetic(self):
        # a 68.3% MLP share maps a 20% overall target to roughly 0.293
        assert 0.20 / 0.683 == pytest.approx(0.293, abs=5e-4)

    def test_infeasible(self, rng):
        # MLP share ~50%: overall 0.6 cannot be met from MLP alone
        cfg = M.ModelConfig(d_model=32, n_layers=1, n_heads=4, d_hidden=(24,),
                            vocab_size=64, max_seq=16)
        model = M.random_model(cfg, rng)
        share = M.param_counts(model)["mlp"] / M.param_counts(model)["total"]
        assert share < 0.6
        with pytest.raises(InfeasibleRatio):
            pruning.rho_from_overall(model, 0.6)


class TestPlanJson:
    def test_round_trip(self, rng, tiny_model):
        report = report_from_scores([rng.random(dh) for dh
                                     in tiny_model.config.d_hidden])
        plan = pruning.make_plan(report, 0.25)
        again = PrunePlan.from_json(plan.to_json(), tiny_model.config.d_hidden)
        assert again.rho == plan.rho
        assert again.report_digest == plan.report_digest
        for a, b in zip(again.removed, plan.removed):
            assert np.array_equal(a, b)
        for a, b in zip(again.kept, plan.kept):
            assert np.array_equal(a, b)

    def test_random_plan_is_seeded(self):
        a = pruning.random_plan((16, 16), 0.25, np.random.default_rng(5))
        b = pruning.random_plan((16, 16), 0.25, np.random.default_rng(5))
        for ra, rb in zip(a.removed, b.removed):
            assert np.array_equal(ra, rb)
            assert ra.size == 4
