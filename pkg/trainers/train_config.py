from dataclasses import dataclass
from typing import Optional

import torch
from diffusers.optimization import get_scheduler
from diffusers.utils import logging

from utils.errors import ValidationError

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

DISTANCE_CONVENTIONS = ("one_minus_cos", "one_plus_cos", "chord")


@dataclass
class TrainConfig:
    '''
    Hyper-parameters shared by the projector and the student.
    Defaults follow the projector recipe: Adam, lr 3e-4, lambda 3e-4, cosine annealing, 256 pairs per batch.
    '''
    learning_rate: float = 3e-4
    batch_pairs: int = 256
    batch_size: int = 64
    epochs: int = 100
    reg_lambda: float = 3e-4
    optimizer: str = "adam"  # 'adam', 'adamw', 'sgd'
    lr_schedule: str = "cosine"  # 'constant', 'cosine', 'step'
    seed: int = 0
    pairs_per_epoch: int = 16384
    val_fraction: float = 0.1
    distance: str = "one_minus_cos"
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    num_warmup_steps: int = 0
    lr_step_size: int = 20
    lr_gamma: float = 0.5
    max_grad_norm: Optional[float] = 1.0
    show_progress: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}.")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be non-negative, got {self.epochs}.")
        if self.distance not in DISTANCE_CONVENTIONS:
            raise ValidationError(f"distance must be one of {DISTANCE_CONVENTIONS}, got {self.distance}.")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError(f"val_fraction must lie in (0, 1), got {self.val_fraction}.")

    @classmethod
    def from_config(cls, config):
        if isinstance(config, cls):
            return config
        if config is None:
            return cls()
        return cls(**dict(config))


@dataclass
class StudentTrainConfig(TrainConfig):
    # reg_lambda is unused by the student, its regularizers live in StudentLossWeights
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    lr_schedule: str = "cosine"
    reg_lambda: float = 0.0


@dataclass
class StudentLossWeights:
    lambda_: float = 0.1
    gamma: float = 1e-3
    delta: float = 1e-3
    population_target: str = "teacher"  # 'teacher' or 'student'

    def __post_init__(self):
        for name in ("lambda_", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValidationError(f"Loss weight {name} must be non-negative, got {getattr(self, name)}.")
        if self.population_target not in ("teacher", "student"):
            raise ValidationError(f"population_target must be 'teacher' or 'student', got {self.population_target}.")

    @classmethod
    def from_config(cls, config):
        if isinstance(config, cls):
            return config
        if config is None:
            return cls()
        return cls(**dict(config))


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    elif cfg.optimizer == "adamw":
        return torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    elif cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=cfg.momentum,
                               nesterov=cfg.nesterov and cfg.momentum > 0, weight_decay=cfg.weight_decay)
    else:
        raise NotImplementedError(f"Optimizer: {cfg.optimizer} not implemented.")


def make_lr_scheduler(optimizer, cfg: TrainConfig, num_training_steps):
    '''
    Returns (scheduler, per_epoch). Step decay is stepped once per epoch, the others once per batch.
    '''
    if cfg.lr_schedule == "step":
        return torch.optim.lr_scheduler.StepLR(optimizer, step_size=cfg.lr_step_size, gamma=cfg.lr_gamma), True
    if cfg.lr_schedule not in ("constant", "cosine"):
        raise NotImplementedError(f"Learning rate schedule: {cfg.lr_schedule} not implemented.")
    scheduler = get_scheduler(cfg.lr_schedule, optimizer,
                              num_warmup_steps=cfg.num_warmup_steps,
                              num_training_steps=max(num_training_steps, 1),
                              num_cycles=0.5)  # half a cosine period: anneal to zero without restarting
    return scheduler, False
