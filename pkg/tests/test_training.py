"""Tests for the hybrid loss, stratified resplitting, training and checkpoints."""

import json
import math

import numpy as np
import pytest
import torch
from torch.func import functional_call

from conftest import tiny_model_config
from dataset import ManipulationDataset
from exceptions import CheckpointError, ConfigurationError, NumericError
from model import build_model
from training import (
    PROB_FLOOR, TrainConfig, hybrid_loss, load_checkpoint, model_from_checkpoint,
    restore_model_state, resplit, save_checkpoint, train,
)


def toy_dataset(n_per_class=20, size=16, feature_size=4, seed=0):
    """Two classes separated by brightness; masks mark the bright images."""
    gen = torch.Generator().manual_seed(seed)
    images, labels, masks = [], [], []
    for label, level in ((0, 0.15), (1, 0.85)):
        noise = 0.05 * torch.randn(n_per_class, 3, size, size, generator=gen)
        images.append((level + noise).clamp(0, 1))
        labels += [label] * n_per_class
        masks.append(torch.full((n_per_class, feature_size, feature_size), float(label)))
    return ManipulationDataset(torch.cat(images), labels, torch.cat(masks))


def toy_config(**overrides):
    params = dict(
        input_height=16, input_width=16, backbone_stage_channels=[8, 8], num_classes=2,
        embed_dim=8, num_heads=2, mlp_ratio=1.0, patch_size=1,
    )
    params.update(overrides)
    return tiny_model_config(**params)


def quick_train_config(**overrides):
    params = dict(learning_rate=1e-2, batch_size=8, epochs=3, resplit_interval=2, val_fraction=0.2, seed=0)
    params.update(overrides)
    return TrainConfig(**params)


class TestHybridLoss:

    def test_uniform_probabilities_and_half_mask(self):
        probabilities = torch.full((11,), 1.0 / 11)
        predicted = torch.full((4, 4), 0.5)
        gt = torch.zeros(4, 4)
        gt[:2] = 1.0

        loss = hybrid_loss(probabilities, 3, predicted, gt)
        assert loss.ce.item() == pytest.approx(math.log(11), abs=1e-4)
        assert loss.ce.item() == pytest.approx(2.3979, abs=1e-4)
        assert loss.mse.item() == pytest.approx(0.25)
        assert loss.total.item() == pytest.approx(2.6479, abs=1e-4)
        assert not loss.clamped

    def test_perfect_prediction_is_zero(self):
        probabilities = torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        mask = torch.tensor([[[0.0, 1.0]], [[1.0, 1.0]]])
        loss = hybrid_loss(probabilities, torch.tensor([1, 0]), mask, mask.clone())
        assert loss.total.item() == pytest.approx(0.0, abs=1e-7)

    def test_weights(self):
        probabilities = torch.tensor([[0.5, 0.5]])
        loss = hybrid_loss(probabilities, torch.tensor([0]), torch.ones(1, 2, 2), torch.zeros(1, 2, 2),
                           lambda_cls=2.0, lambda_loc=0.5)
        assert loss.total.item() == pytest.approx(2.0 * math.log(2) + 0.5)

    def test_missing_mask_disables_localization_term(self):
        loss = hybrid_loss(torch.tensor([[0.25, 0.75]]), torch.tensor([1]), torch.rand(1, 2, 2), None)
        assert loss.mse.item() == 0.0
        assert loss.total.item() == pytest.approx(-math.log(0.75))

    def test_zero_probability_is_clamped(self):
        loss = hybrid_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([1]))
        assert loss.clamped
        assert math.isfinite(loss.ce.item())
        assert loss.ce.item() == pytest.approx(-math.log(PROB_FLOOR), rel=1e-5)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ConfigurationError, match='Mask shape mismatch'):
            hybrid_loss(torch.tensor([[0.5, 0.5]]), torch.tensor([0]), torch.zeros(1, 2, 2), torch.zeros(1, 4, 4))

    @pytest.mark.parametrize('seed', range(10))
    def test_gradients_match_finite_differences(self, seed):
        config = tiny_model_config(
            input_height=16, input_width=16, backbone_stage_channels=[4], embed_dim=8,
            num_heads=2, num_blocks=1, mlp_ratio=1.0, num_classes=3, patch_size=2,
        )
        model = build_model(config, seed=seed).double()
        assert sum(p.numel() for p in model.parameters()) <= 5000

        gen = torch.Generator().manual_seed(seed)
        images = torch.rand(2, 3, 16, 16, generator=gen, dtype=torch.float64)
        gt_masks = torch.rand(2, 8, 8, generator=gen, dtype=torch.float64)
        targets = torch.tensor([0, 2])
        names = [name for name, _ in model.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for _, p in model.named_parameters())

        def loss_of(*values):
            output = functional_call(model, dict(zip(names, values)), (images,))
            return hybrid_loss(output.probabilities, targets, output.predicted_mask, gt_masks).total

        assert torch.autograd.gradcheck(loss_of, params, eps=1e-6, atol=1e-5, rtol=1e-3)


class TestResplit:

    def test_stratified_sizes(self):
        labels = np.repeat(np.arange(3), 4400)
        train_idx, val_idx = resplit(labels, 400 / 4400, seed=0)
        for label in range(3):
            assert np.sum(labels[val_idx] == label) == 400
            assert np.sum(labels[train_idx] == label) == 4000

    def test_partition_and_determinism(self):
        labels = np.random.default_rng(1).integers(0, 5, size=300)
        train_idx, val_idx = resplit(labels, 0.1, seed=4, epoch_seed=2)

        assert len(np.intersect1d(train_idx, val_idx)) == 0
        assert np.array_equal(np.sort(np.concatenate([train_idx, val_idx])), np.arange(300))

        again = resplit(labels, 0.1, seed=4, epoch_seed=2)
        assert np.array_equal(again[0], train_idx) and np.array_equal(again[1], val_idx)

        other = resplit(labels, 0.1, seed=4, epoch_seed=3)
        assert not np.array_equal(other[1], val_idx)

    def test_every_class_keeps_a_training_sample(self):
        labels = np.array([0, 0, 1, 1, 1])
        train_idx, val_idx = resplit(labels, 0.9, seed=0)
        assert set(labels[train_idx]) == {0, 1}
        assert set(labels[val_idx]) == {0, 1}

    def test_single_sample_class_stays_in_training(self, caplog):
        labels = np.array([0, 0, 0, 0, 1])
        train_idx, val_idx = resplit(labels, 0.25, seed=0)
        assert 4 in train_idx and 4 not in val_idx
        assert 'Class 1 has 1 training sample' in caplog.text


class TestTrain:

    def test_zero_epochs_leaves_weights_untouched(self):
        model = build_model(toy_config(), seed=0)
        before = {k: v.clone() for k, v in model.state_dict().items()}

        checkpoint = train(model, toy_dataset(), quick_train_config(epochs=0))

        assert checkpoint.epoch == 0
        assert checkpoint.best_model_state is None
        assert checkpoint.history == []
        for key, value in before.items():
            assert torch.equal(model.state_dict()[key], value), key

    def test_same_seed_same_history(self):
        runs = []
        for _ in range(2):
            model = build_model(toy_config(), seed=3)
            runs.append(train(model, toy_dataset(), quick_train_config(seed=3)))
        assert runs[0].history == runs[1].history

    def test_learns_separable_task(self):
        model = build_model(toy_config(architecture='backbone'), seed=0)
        checkpoint = train(model, toy_dataset(), quick_train_config(epochs=20))
        assert checkpoint.best_val_accuracy == 1.0
        assert checkpoint.history[-1]['train_loss'] < checkpoint.history[0]['train_loss']

    def test_metrics_file_has_one_record_per_epoch(self, tmp_path):
        metrics = tmp_path / 'metrics.jsonl'
        metrics.write_text('stale\n')
        train(build_model(toy_config(), seed=0), toy_dataset(), quick_train_config(), metrics_path=str(metrics))

        records = [json.loads(line) for line in metrics.read_text().splitlines()]
        assert [r['epoch'] for r in records] == [1, 2, 3]
        assert set(records[0]) == {'epoch', 'train_loss', 'train_ce', 'train_mse', 'val_accuracy'}
        assert all(r['train_mse'] > 0 for r in records)

    def test_resume_continues_epoch_counter(self, tmp_path):
        dataset = toy_dataset()
        straight = train(build_model(toy_config(), seed=0), dataset, quick_train_config(epochs=4))

        metrics = str(tmp_path / 'metrics.jsonl')
        first = train(build_model(toy_config(), seed=0), dataset, quick_train_config(epochs=2), metrics_path=metrics)
        resumed = train(build_model(toy_config(), seed=0), dataset, quick_train_config(epochs=4),
                        metrics_path=metrics, resume=first)

        assert resumed.epoch == 4
        assert [r['epoch'] for r in resumed.history] == [1, 2, 3, 4]
        with open(metrics) as f:
            assert [json.loads(line)['epoch'] for line in f] == [1, 2, 3, 4]
        for key, value in straight.model_state.items():
            assert torch.allclose(resumed.model_state[key].float(), value.float(), atol=1e-6), key

    def test_localization_requires_masks(self):
        dataset = toy_dataset()
        dataset.has_mask[0] = False
        with pytest.raises(ConfigurationError, match='ground-truth mask'):
            train(build_model(toy_config(), seed=0), dataset, quick_train_config())

    def test_non_finite_loss(self):
        dataset = toy_dataset()
        dataset.images[:] = float('nan')
        with pytest.raises(NumericError, match='epoch 1, batch 0'):
            train(build_model(toy_config(architecture='backbone'), seed=0), dataset, quick_train_config())

    def test_invalid_train_config(self):
        with pytest.raises(ConfigurationError) as info:
            TrainConfig(learning_rate=0, batch_size=0, val_fraction=1.0)
        assert len(info.value.issues) == 3


class TestCheckpoint:

    def test_round_trip_gives_identical_logits(self, tmp_path):
        model = build_model(toy_config(), seed=0)
        checkpoint = train(model, toy_dataset(), quick_train_config(epochs=2))
        path = save_checkpoint(checkpoint, str(tmp_path / 'checkpoint.pt'))

        restored = model_from_checkpoint(load_checkpoint(path), best=False)
        model.eval()
        images = toy_dataset(n_per_class=3, seed=9).images
        with torch.no_grad():
            assert torch.equal(restored(images).logits, model(images).logits)

    def test_truncated_file(self, tmp_path):
        model = build_model(toy_config(), seed=0)
        path = save_checkpoint(train(model, toy_dataset(), quick_train_config(epochs=0)), str(tmp_path / 'c.pt'))
        data = (tmp_path / 'c.pt').read_bytes()
        (tmp_path / 'c.pt').write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match='corrupt or truncated'):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match='not found'):
            load_checkpoint(str(tmp_path / 'nothing.pt'))

    def test_not_a_checkpoint(self, tmp_path):
        path = str(tmp_path / 'weights.pt')
        torch.save({'weights': torch.zeros(2)}, path)
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(path)
        assert 'model_state' in info.value.missing

    def test_architecture_mismatch_lists_keys(self):
        source = build_model(toy_config(architecture='backbone_vit'), seed=0)
        target = build_model(toy_config(architecture='backbone'), seed=0)
        with pytest.raises(CheckpointError) as info:
            restore_model_state(target, source.state_dict())
        assert any(k.startswith('patch_embedding.') for k in info.value.unexpected)

    def test_shape_mismatch(self):
        source = build_model(toy_config(patch_size=2), seed=0)
        target = build_model(toy_config(patch_size=1), seed=0)
        with pytest.raises(CheckpointError, match='shape mismatches: .*position_embeddings'):
            restore_model_state(target, source.state_dict())
