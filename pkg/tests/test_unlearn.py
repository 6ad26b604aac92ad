"""Unlearning methods: coefficients, masks, fast-slow updates, baselines."""

import numpy as np
import pytest

from unlearnlab.data import Dataset, ForgetSplit, generate_blobs, make_random_subset_split
from unlearnlab.metrics import accuracy
from unlearnlab.model import (
    ModelConfig,
    flatten,
    init_params,
    per_sample_losses,
    weighted_loss,
)
from unlearnlab.trainer import TrainConfig, sgd_train
from unlearnlab.unlearn import (
    UnlearnConfig,
    adaptive_coefficients,
    fisher_diagonals,
    ft_unlearn,
    ga_unlearn,
    joint_unlearn,
    relabel_forget,
    rl_unlearn,
    run_unlearning,
    salun_unlearn,
    saliency_mask,
    sfr_on,
)


@pytest.fixture(scope="module")
def testbed():
    dataset = generate_blobs(seed=31, n_per_class=50, class_count=3, dim=4, spread=0.6)
    split = make_random_subset_split(dataset, fraction=0.2, test_fraction=0.2, seed=7)
    cfg = ModelConfig(layer_sizes=(4, 10, 3), seed=2)
    tcfg = TrainConfig(lr=0.3, epochs=40, batch_size=32, momentum=0.9, schedule="cosine", seed=3)
    pretrained = sgd_train(init_params(cfg), tcfg, cfg, dataset, split.train_idx)
    return dataset, split, cfg, pretrained.params


class TestFisherDiagonals:
    def test_two_modes_diverge_on_opposing_gradients(self):
        # Two mirrored samples at the zero model: per-sample bias gradients
        # are exact opposites, so squaring after averaging cancels them while
        # averaging the squares does not.
        cfg = ModelConfig(layer_sizes=(1, 2))
        dataset = Dataset(np.array([[1.0], [-1.0], [1.0]]), np.array([0, 1, 0]), class_count=2)
        theta = np.zeros(4)
        both = ForgetSplit(np.array([0, 1]), np.array([2]), np.array([], dtype=int))
        fd_mean = fisher_diagonals(theta, cfg, dataset, both, mode="per_sample_mean")
        fd_square = fisher_diagonals(theta, cfg, dataset, both, mode="batch_square")
        assert fd_mean.forget == pytest.approx([0.25, 0.25, 0.25, 0.25], abs=1e-15)
        assert fd_square.forget == pytest.approx([0.25, 0.25, 0.0, 0.0], abs=1e-15)

    def test_zero_gradient_model(self):
        cfg = ModelConfig(layer_sizes=(1, 2))
        theta = flatten([(np.array([[50.0, -50.0]]), np.zeros(2))])
        dataset = Dataset(np.array([[1.0], [1.0]]), np.array([0, 0]), class_count=2)
        split = ForgetSplit(np.array([0]), np.array([1]), np.array([], dtype=int))
        fd = fisher_diagonals(theta, cfg, dataset, split, mode="per_sample_mean")
        assert np.abs(fd.forget).max() <= 1e-40
        assert np.abs(fd.remain).max() <= 1e-40

    def test_nonnegative_on_random_models(self, testbed):
        dataset, split, cfg, theta0 = testbed
        for mode in ("per_sample_mean", "batch_square"):
            fd = fisher_diagonals(theta0, cfg, dataset, split, mode=mode)
            assert (fd.forget >= 0).all() and (fd.remain >= 0).all()

    def test_sample_cap_is_seeded(self, testbed):
        dataset, split, cfg, theta0 = testbed
        a = fisher_diagonals(theta0, cfg, dataset, split, sample_cap=10, seed=5)
        b = fisher_diagonals(theta0, cfg, dataset, split, sample_cap=10, seed=5)
        assert np.array_equal(a.remain, b.remain)


class TestSaliencyMask:
    def test_gamma_zero_is_all_ones(self):
        from unlearnlab.unlearn import FisherDiagonals

        fd = FisherDiagonals(np.array([0.0, 1.0, 5.0]), np.array([1.0, 2.0, 0.0]))
        assert np.array_equal(saliency_mask(fd, 0.0), np.ones(3))

    def test_direct_threshold(self):
        from unlearnlab.unlearn import FisherDiagonals

        fd = FisherDiagonals(np.array([4.0, 1.0]), np.array([1.0, 4.0]))
        assert np.array_equal(saliency_mask(fd, 1.0), [1.0, 0.0])

    def test_monotone_in_gamma(self):
        from unlearnlab.unlearn import FisherDiagonals

        rng = np.random.default_rng(0)
        fd = FisherDiagonals(rng.uniform(0, 5, 50), rng.uniform(0, 5, 50))
        previous = saliency_mask(fd, 0.0)
        for gamma in (0.5, 1.0, 2.0, 10.0):
            current = saliency_mask(fd, gamma)
            assert np.all(current <= previous)
            previous = current

    def test_huge_gamma_empties_mask(self):
        from unlearnlab.unlearn import FisherDiagonals

        rng = np.random.default_rng(1)
        fd = FisherDiagonals(rng.uniform(0.1, 5, 20), rng.uniform(0.1, 5, 20))
        assert np.array_equal(saliency_mask(fd, 1e12), np.zeros(20))


class TestAdaptiveCoefficients:
    def test_equal_losses_give_unit_weights(self):
        coeffs = adaptive_coefficients(np.full(6, 0.7), t=0, big_t=10, lambda_temp=1.3)
        assert coeffs == pytest.approx(np.ones(6), abs=1e-12)

    def test_final_step_zeroes_everything(self):
        coeffs = adaptive_coefficients(np.array([0.1, 2.0]), t=10, big_t=10, lambda_temp=1.0)
        assert np.array_equal(coeffs, np.zeros(2))

    def test_direct_evaluation(self):
        coeffs = adaptive_coefficients(np.array([1.0, 2.0]), t=0, big_t=5, lambda_temp=1.0)
        assert coeffs == pytest.approx([4.0 / 3.0, 2.0 / 3.0], abs=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_sum_invariant(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        losses = rng.uniform(0, 5, n)
        big_t = int(rng.integers(1, 50))
        t = int(rng.integers(0, big_t + 1))
        lam = float(rng.uniform(0, 3))
        coeffs = adaptive_coefficients(losses, t, big_t, lam)
        assert coeffs.sum() == pytest.approx((1 - t / big_t) * n, abs=1e-9)
        assert (coeffs >= 0).all()

    def test_rejects_negative_losses(self):
        with pytest.raises(ValueError):
            adaptive_coefficients(np.array([-0.1]), 0, 1, 1.0)


class TestFastSlow:
    def test_alpha_zero_is_identity(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method="sfr_on", alpha=0.0, beta_f=0.5, beta_r=0.1,
                             t_in=3, t_out=5, seed=0)
        ckpt = sfr_on(theta0, cfg, dataset, split, ucfg)
        assert np.array_equal(ckpt.params, theta0)

    def test_empty_mask_without_repair_is_identity(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method="sfr_on", alpha=1.0, beta_f=0.5, beta_r=0.1,
                             t_in=0, t_out=5, gamma=1e12, seed=0)
        ckpt = sfr_on(theta0, cfg, dataset, split, ucfg)
        assert np.array_equal(ckpt.params, theta0)

    def test_masked_coordinates_get_no_fast_update(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method="sfr_on", alpha=1.0, beta_f=0.5, beta_r=0.1,
                             t_in=0, t_out=4, gamma=1.0, seed=9)
        fd = fisher_diagonals(theta0, cfg, dataset, split, mode=ucfg.fisher_mode, seed=ucfg.seed)
        mask = saliency_mask(fd, ucfg.gamma)
        assert 0.0 < mask.mean() < 1.0
        ckpt = sfr_on(theta0, cfg, dataset, split, ucfg)
        moved = ckpt.params - theta0
        assert np.array_equal(moved[mask == 0.0], np.zeros(int((mask == 0.0).sum())))
        assert np.abs(moved[mask == 1.0]).max() > 0.0

    def test_masked_coordinates_can_move_during_repair(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method="sfr_on", alpha=1.0, beta_f=0.5, beta_r=0.1,
                             t_in=3, t_out=4, gamma=1.0, seed=9)
        fd = fisher_diagonals(theta0, cfg, dataset, split, mode=ucfg.fisher_mode, seed=ucfg.seed)
        mask = saliency_mask(fd, ucfg.gamma)
        ckpt = sfr_on(theta0, cfg, dataset, split, ucfg)
        moved = ckpt.params - theta0
        assert np.abs(moved[mask == 0.0]).max() > 0.0

    def test_deterministic(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method="sfr_on", alpha=0.8, beta_f=0.4, beta_r=0.05,
                             t_in=2, t_out=6, seed=13)
        a = sfr_on(theta0, cfg, dataset, split, ucfg)
        b = sfr_on(theta0, cfg, dataset, split, ucfg)
        assert np.array_equal(a.params, b.params)

    def test_provenance_records_batch_losses(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method="sfr_on", t_out=7, t_in=1, seed=0)
        ckpt = sfr_on(theta0, cfg, dataset, split, ucfg)
        assert len(ckpt.provenance["forget_batch_loss"]) == 7


class TestBaselines:
    def test_ft_zero_epochs_identity(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ckpt = ft_unlearn(theta0, cfg, dataset, split, epochs=0, lr=0.1, batch_size=16)
        assert np.array_equal(ckpt.params, theta0)

    def test_ft_never_touches_forget(self, testbed):
        dataset, split, cfg, theta0 = testbed
        touched = []
        ft_unlearn(theta0, cfg, dataset, split, epochs=2, lr=0.05, batch_size=16,
                   on_batch=lambda b: touched.extend(int(i) for i in b))
        assert not set(touched) & set(int(i) for i in split.forget_idx)

    def test_ft_remain_loss_non_increasing_on_convex_toy(self):
        dataset = generate_blobs(seed=41, n_per_class=40, class_count=3, dim=4, spread=0.5)
        split = make_random_subset_split(dataset, fraction=0.2, test_fraction=0.1, seed=1)
        cfg = ModelConfig(layer_sizes=(4, 3), seed=0)
        ckpt = ft_unlearn(init_params(cfg), cfg, dataset, split, epochs=15, lr=0.2,
                          batch_size=10_000)
        assert np.all(np.diff(ckpt.provenance["epoch_mean_loss"]) <= 1e-9)

    def test_ga_increases_forget_loss(self):
        dataset = generate_blobs(seed=42, n_per_class=40, class_count=3, dim=4, spread=0.6)
        split = make_random_subset_split(dataset, fraction=0.2, test_fraction=0.1, seed=2)
        cfg = ModelConfig(layer_sizes=(4, 8, 3), seed=1)
        half_trained = sgd_train(
            init_params(cfg), TrainConfig(lr=0.2, epochs=8, batch_size=32, seed=0),
            cfg, dataset, split.train_idx,
        ).params
        fx = dataset.features[split.forget_idx]
        fy = dataset.labels[split.forget_idx]
        before = per_sample_losses(half_trained, cfg, fx, fy).mean()
        ckpt = ga_unlearn(half_trained, cfg, dataset, split, epochs=2, lr=0.05,
                          batch_size=len(split.forget_idx))
        after = per_sample_losses(ckpt.params, cfg, fx, fy).mean()
        assert after > before

    def test_ga_zero_epochs_and_zero_lr(self, testbed):
        dataset, split, cfg, theta0 = testbed
        assert np.array_equal(
            ga_unlearn(theta0, cfg, dataset, split, epochs=0, lr=0.1, batch_size=8).params, theta0
        )
        assert np.array_equal(
            ga_unlearn(theta0, cfg, dataset, split, epochs=3, lr=0.0, batch_size=8).params, theta0
        )

    def test_relabel_never_keeps_original(self, testbed):
        dataset, split, cfg, _ = testbed
        for seed in range(5):
            relabeled, new = relabel_forget(dataset, split, seed)
            assert not np.any(new == dataset.labels[split.forget_idx])
            assert np.array_equal(
                relabeled.labels[split.remain_idx], dataset.labels[split.remain_idx]
            )

    def test_relabel_deterministic(self, testbed):
        dataset, split, _, _ = testbed
        _, a = relabel_forget(dataset, split, 3)
        _, b = relabel_forget(dataset, split, 3)
        assert np.array_equal(a, b)

    def test_relabel_needs_two_classes(self):
        dataset = Dataset(np.zeros((4, 1)), np.zeros(4, dtype=int), class_count=1)
        split = ForgetSplit(np.array([0, 1]), np.array([2, 3]), np.array([], dtype=int))
        with pytest.raises(ValueError, match="two classes"):
            relabel_forget(dataset, split, 0)

    def test_rl_drops_forget_accuracy(self, testbed):
        dataset, split, cfg, theta0 = testbed
        fa_before = accuracy(theta0, cfg, dataset, split.forget_idx)
        ckpt = rl_unlearn(theta0, cfg, dataset, split, epochs=8, lr=0.05, batch_size=32, seed=0)
        assert accuracy(ckpt.params, cfg, dataset, split.forget_idx) < fa_before

    def test_salun_full_mask_equals_rl(self, testbed):
        dataset, split, cfg, theta0 = testbed
        a = salun_unlearn(theta0, cfg, dataset, split, epochs=3, lr=0.05, batch_size=32,
                          seed=4, top_k_percent=100.0)
        b = rl_unlearn(theta0, cfg, dataset, split, epochs=3, lr=0.05, batch_size=32, seed=4)
        assert np.array_equal(a.params, b.params)

    def test_salun_frozen_coordinates_never_change(self, testbed):
        dataset, split, cfg, theta0 = testbed
        from unlearnlab.unlearn import salun_mask

        mask = salun_mask(theta0, cfg, dataset, split, top_k_percent=30.0)
        ckpt = salun_unlearn(theta0, cfg, dataset, split, epochs=4, lr=0.05, batch_size=32,
                             seed=4, top_k_percent=30.0)
        frozen = mask == 0.0
        assert np.array_equal(ckpt.params[frozen], theta0[frozen])
        assert not np.array_equal(ckpt.params[~frozen], theta0[~frozen])

    def test_joint_zero_lr_identity(self, testbed):
        dataset, split, cfg, theta0 = testbed
        ckpt = joint_unlearn(theta0, cfg, dataset, split, steps=5, lr=0.0,
                             batch_f=8, batch_r=8)
        assert np.array_equal(ckpt.params, theta0)

    def test_joint_with_zero_remain_weight_matches_ga(self, testbed):
        dataset, split, cfg, theta0 = testbed
        n_f = len(split.forget_idx)
        joint = joint_unlearn(theta0, cfg, dataset, split, steps=3, lr=0.05,
                              batch_f=n_f, batch_r=4, seed=2, remain_weight=0.0)
        ga = ga_unlearn(theta0, cfg, dataset, split, epochs=3, lr=0.05, batch_size=n_f, seed=2)
        assert np.allclose(joint.params, ga.params, atol=1e-9)


class TestDispatch:
    @pytest.mark.parametrize("method", ["sfr_on", "ft", "ga", "rl", "salun", "joint"])
    def test_each_method_runs_and_is_deterministic(self, testbed, method):
        dataset, split, cfg, theta0 = testbed
        ucfg = UnlearnConfig(method=method, alpha=0.5, beta_f=0.05, beta_r=0.02,
                             t_in=1, t_out=2, batch_f=8, batch_r=16, seed=5)
        a = run_unlearning(theta0, cfg, dataset, split, ucfg)
        b = run_unlearning(theta0, cfg, dataset, split, ucfg)
        assert np.array_equal(a.params, b.params)
        assert a.provenance["method"] == method

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            UnlearnConfig(method="nosuch")

    def test_config_roundtrip(self):
        ucfg = UnlearnConfig(method="sfr_on", alpha=0.7, seed=3)
        assert UnlearnConfig.from_dict(ucfg.to_dict()) == ucfg
