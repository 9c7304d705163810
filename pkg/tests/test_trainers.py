import numpy as np
import pytest
import torch

from dataloader.dataset_class import EmbeddingSet, validation_indices
from models.mlp import build_projector, project
from models.student import student_forward
from trainers.projector import train_projection
from trainers.student import train_student
from trainers.train_config import (StudentLossWeights, StudentTrainConfig, TrainConfig, make_lr_scheduler,
                                   make_optimizer)
from utils.errors import DimensionMismatch, InsufficientSamples, InvalidTargetDim, ValidationError


def small_projection_config(**kwargs):
    defaults = dict(epochs=6, pairs_per_epoch=256, batch_pairs=64, learning_rate=1e-2, seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestTrainConfig:

    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(epochs=-1), dict(distance="euclidean"),
                                        dict(val_fraction=1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            TrainConfig(**kwargs)

    def test_from_config(self):
        cfg = StudentTrainConfig.from_config({"epochs": 3})
        assert cfg.epochs == 3 and cfg.learning_rate == 1e-3
        assert StudentTrainConfig.from_config(None) == StudentTrainConfig()
        assert StudentLossWeights.from_config({"lambda_": 0.5}).lambda_ == 0.5

    def test_loss_weights(self):
        with pytest.raises(ValidationError):
            StudentLossWeights(gamma=-1.0)
        with pytest.raises(ValidationError):
            StudentLossWeights(population_target="both")

    def test_optimizers(self):
        params = [torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))]
        assert isinstance(make_optimizer(params, TrainConfig(optimizer="sgd")), torch.optim.SGD)
        assert isinstance(make_optimizer(params, TrainConfig(optimizer="adamw")), torch.optim.AdamW)
        with pytest.raises(NotImplementedError):
            make_optimizer(params, TrainConfig(optimizer="rmsprop"))

    def test_schedules(self):
        params = [torch.nn.Parameter(torch.zeros(2, dtype=torch.float64))]
        optimizer = make_optimizer(params, TrainConfig(learning_rate=0.1))
        scheduler, per_epoch = make_lr_scheduler(optimizer, TrainConfig(lr_schedule="cosine"), 10)
        assert not per_epoch
        for _ in range(10):
            optimizer.step()
            scheduler.step()
        assert optimizer.param_groups[0]["lr"] == pytest.approx(0.0, abs=1e-12)

        optimizer = make_optimizer(params, TrainConfig(learning_rate=0.1))
        scheduler, per_epoch = make_lr_scheduler(optimizer, TrainConfig(lr_schedule="step", lr_step_size=2,
                                                                        lr_gamma=0.5), 10)
        assert per_epoch
        for _ in range(4):
            optimizer.step()
            scheduler.step()
        assert optimizer.param_groups[0]["lr"] == pytest.approx(0.025)

        with pytest.raises(NotImplementedError):
            make_lr_scheduler(optimizer, TrainConfig(lr_schedule="cyclic"), 10)


@pytest.fixture
def spread(rng):
    '''Twenty classes of twelve records on the unit sphere of R^12.'''
    centers = np.repeat(rng.standard_normal((20, 12)), 12, axis=0)
    points = centers + 0.3 * rng.standard_normal((240, 12))
    labels = np.repeat([f"id{c}" for c in range(20)], 12)
    return EmbeddingSet(labels, points / np.linalg.norm(points, axis=1, keepdims=True))


@pytest.fixture
def flat_cap(rng):
    '''A three-dimensional Gaussian cloud on a small cap of the unit sphere of R^12.'''
    basis = np.linalg.qr(rng.standard_normal((12, 4)))[0]
    points = 6.0 * basis[:, 0] + rng.standard_normal((300, 3)) @ basis[:, 1:].T
    labels = np.repeat(["a", "b", "c"], 100)
    return EmbeddingSet(labels, points / np.linalg.norm(points, axis=1, keepdims=True))


class TestProjection:

    def test_training_reduces_stress(self, spread):
        cfg = small_projection_config(epochs=10, pairs_per_epoch=1024, val_fraction=0.25, learning_rate=3e-3)
        out = train_projection(spread, 3, cfg, width=32, num_blocks=1)
        assert len(out.train_losses) == 10
        assert len(out.val_losses) == 11
        assert out.val_losses[-1] <= 0.9 * out.val_losses[0]
        assert out.train_losses[-1] < out.train_losses[0]
        assert out.network.out_features == 3
        assert not out.network.training

    def test_embeddable_data(self, flat_cap):
        cfg = small_projection_config(epochs=60, pairs_per_epoch=1024, val_fraction=0.2, reg_lambda=0.0,
                                      distance="chord")
        out = train_projection(flat_cap, 3, cfg, width=32, num_blocks=1)
        assert out.val_losses[-1] <= 0.1 * out.val_losses[0]

    def test_seeded(self, clustered):
        a = train_projection(clustered, 3, small_projection_config(epochs=2), width=16, num_blocks=1)
        b = train_projection(clustered, 3, small_projection_config(epochs=2), width=16, num_blocks=1)
        assert np.array_equal(project(a.network, clustered.vectors), project(b.network, clustered.vectors))
        assert a.val_losses == b.val_losses

    def test_zero_epochs_returns_initialization(self, clustered):
        out = train_projection(clustered, 3, small_projection_config(epochs=0, seed=5), width=16, num_blocks=1)
        assert out.train_losses == [] and len(out.val_losses) == 1
        init = build_projector(12, 3, width=16, num_blocks=1, seed=5)
        assert np.array_equal(project(out.network, clustered.vectors), project(init, clustered.vectors))

    def test_target_dim(self, clustered):
        with pytest.raises(InvalidTargetDim):
            train_projection(clustered, 12, small_projection_config())

    def test_too_few_records(self, clustered):
        data = EmbeddingSet(clustered.labels[:3], clustered.vectors[:3])
        with pytest.raises(InsufficientSamples):
            train_projection(data, 3, small_projection_config())


class TestStudent:

    def targets(self, data, rng):
        w = rng.standard_normal((12, 3))
        return data.vectors @ w

    def student_config(self, **kwargs):
        defaults = dict(epochs=8, batch_size=16, learning_rate=5e-3, seed=0)
        defaults.update(kwargs)
        return StudentTrainConfig(**defaults)

    def test_population_mean_is_target_mean(self, clustered, rng):
        y = self.targets(clustered, rng)
        out = train_student(clustered, y, self.student_config(epochs=2), hidden_sizes=[16, 16], dropout_rate=0.2)
        np.testing.assert_allclose(out.population.mean, y.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(out.network.population_mean.numpy(), y.mean(axis=0), rtol=1e-12)
        assert np.all(np.diag(out.population.covariance) > 0)

    def test_training_reduces_loss(self, clustered, rng):
        y = self.targets(clustered, rng)
        out = train_student(clustered, y, self.student_config(), hidden_sizes=[16, 16], dropout_rate=0.1)
        assert len(out.train_losses) == 8 and len(out.val_losses) == 9
        assert out.val_losses[-1] < out.val_losses[0]
        assert out.network.dropout_rates == [0.1, 0.1]

    def test_seeded(self, clustered, rng):
        y = self.targets(clustered, rng)
        a = train_student(clustered, y, self.student_config(epochs=2), hidden_sizes=[16, 16])
        b = train_student(clustered, y, self.student_config(epochs=2), hidden_sizes=[16, 16])
        for u, v in zip(student_forward(a.network, clustered.vectors), student_forward(b.network, clustered.vectors)):
            assert np.array_equal(u, v)

    def test_mismatched_targets(self, clustered, rng):
        with pytest.raises(DimensionMismatch):
            train_student(clustered, rng.standard_normal((10, 3)), self.student_config(epochs=1))

    def test_too_few_records(self):
        with pytest.raises(InsufficientSamples):
            train_student(np.zeros((1, 4)), np.zeros((1, 2)), self.student_config(epochs=1))

    def test_constant_targets(self, clustered):
        c = np.array([0.5, -1.0])
        y = np.tile(c, (len(clustered), 1))
        out = train_student(clustered, y, self.student_config(epochs=300, learning_rate=1e-2), hidden_sizes=[16, 16],
                            dropout_rate=0.0)
        mu, logvar = student_forward(out.network, clustered.vectors)
        assert np.abs(mu - c).max() < 1e-2
        # the head starts at 1% of a unit variance
        assert np.exp(logvar).mean() < 1e-2

    def test_held_out_records(self, clustered, rng):
        y = self.targets(clustered, rng)
        out = train_student(clustered, y, self.student_config(epochs=1, val_fraction=0.25), hidden_sizes=[16, 16])
        assert np.array_equal(out.val_indices, validation_indices(len(clustered), 0.25, 0))
        assert len(out.val_indices) == 12

    def test_standardizes_inputs(self, clustered, rng):
        y = self.targets(clustered, rng)
        out = train_student(clustered, y, self.student_config(epochs=0), hidden_sizes=[16, 16])
        np.testing.assert_allclose(out.network.input_mean.numpy(), clustered.vectors.mean(axis=0), rtol=1e-12)
        assert float(out.network.input_scale) == pytest.approx(np.sqrt(clustered.vectors.var(axis=0).mean()))
        # the log-variance head starts at 1% of the mean target variance
        assert out.network.config.logvar_init == pytest.approx(np.log(1e-2 * y.var(axis=0).mean()))
