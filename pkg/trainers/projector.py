from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
from diffusers.utils import BaseOutput, logging
from tqdm.auto import tqdm

from dataloader.dataset_class import EmbeddingSet, sample_pairs, split_records
from losses.loss import MDSLoss, high_dim_distance
from models.mlp import MlpNetwork, build_projector
from trainers.train_config import TrainConfig, make_lr_scheduler, make_optimizer
from utils.errors import InsufficientSamples, InvalidTargetDim

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name


@dataclass
class ProjectionTrainingOutput(BaseOutput):
    """
    Args:
        network (`MlpNetwork`): the trained projector.
        train_losses (`List[float]`): mean training loss per pair for every epoch.
        val_losses (`List[float]`): loss on the fixed validation pairs, entry 0 is before training.
    """

    network: MlpNetwork
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)


def train_projection(data: EmbeddingSet, out_dim: int, cfg: TrainConfig = None, width=512, num_blocks=2, loss_fn=None):
    '''
    Fit the projector by minimizing the MDS stress between cosine distances of `data` and
    Euclidean distances of the projections. Pairs are resampled every epoch from the training
    records; the validation pairs are drawn once from the held-out records.
    loss_fn defaults to MDSLoss(cfg.reg_lambda, cfg.distance).
    '''
    cfg = TrainConfig.from_config(cfg)
    if out_dim >= data.dim:
        raise InvalidTargetDim(f"Projection dimension {out_dim} must be smaller than the embedding dimension {data.dim}.")
    if len(data) < 4:
        raise InsufficientSamples(f"Need at least 4 records to train a projector, got {len(data)}.")

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = split_records(len(data), cfg.val_fraction, rng)
    n_val_pairs = max(1, int(round(cfg.val_fraction * cfg.pairs_per_epoch)))
    val_i, val_j = sample_pairs(val_idx, n_val_pairs, rng)

    net = build_projector(data.dim, out_dim, width=width, num_blocks=num_blocks, seed=cfg.seed)
    x = torch.from_numpy(data.vectors)
    if loss_fn is None:
        loss_fn = MDSLoss(reg_lambda=cfg.reg_lambda, convention=cfg.distance)
    d_val = high_dim_distance(x[val_i], x[val_j], loss_fn.convention)

    @torch.no_grad()
    def validate():
        net.eval()
        return float(loss_fn(net, x[val_i], x[val_j], d_high=d_val)) / n_val_pairs

    val_losses = [validate()]
    train_losses = []
    if cfg.epochs == 0:
        logger.info("epochs=0, returning the seeded initialization.")
        return ProjectionTrainingOutput(network=net, train_losses=train_losses, val_losses=val_losses)

    steps_per_epoch = int(np.ceil(cfg.pairs_per_epoch / cfg.batch_pairs))
    optimizer = make_optimizer(net.parameters(), cfg)
    lr_scheduler, per_epoch = make_lr_scheduler(optimizer, cfg, steps_per_epoch * cfg.epochs)

    logger.info(f"Training projector {data.dim} -> {out_dim} on {len(train_idx)} records, "
                f"{cfg.epochs} epochs x {steps_per_epoch} steps.")
    progress_bar = tqdm(range(cfg.epochs), disable=not cfg.show_progress, desc="projector")
    for epoch in progress_bar:
        net.train()
        pair_i, pair_j = sample_pairs(train_idx, cfg.pairs_per_epoch, rng)
        epoch_loss = 0.0
        for start in range(0, cfg.pairs_per_epoch, cfg.batch_pairs):
            xi = x[pair_i[start:start + cfg.batch_pairs]]
            xj = x[pair_j[start:start + cfg.batch_pairs]]
            loss = loss_fn(net, xi, xj)
            optimizer.zero_grad()
            loss.backward()
            if cfg.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.max_grad_norm)
            optimizer.step()
            if not per_epoch:
                lr_scheduler.step()
            epoch_loss += loss.item()
        if per_epoch:
            lr_scheduler.step()

        train_losses.append(epoch_loss / cfg.pairs_per_epoch)
        val_losses.append(validate())
        logs = {"loss": train_losses[-1], "val_loss": val_losses[-1], "lr": optimizer.param_groups[0]["lr"]}
        progress_bar.set_postfix(**logs)
        logger.debug(f"epoch {epoch}: {logs}")

    logger.info(f"Projector validation loss {val_losses[0]:.4e} -> {val_losses[-1]:.4e}.")
    net.eval()
    return ProjectionTrainingOutput(network=net, train_losses=train_losses, val_losses=val_losses)
