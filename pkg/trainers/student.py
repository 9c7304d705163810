from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
from diffusers.utils import BaseOutput, logging
from tqdm.auto import tqdm

from dataloader.dataset_class import EmbeddingSet, teacher2dataloader
from losses.loss import StudentLoss
from models.student import StudentNetwork
from trainers.train_config import StudentLossWeights, StudentTrainConfig, make_lr_scheduler, make_optimizer
from utils.errors import DimensionMismatch, InsufficientSamples
from utils.stats_utils import GaussianModel, Parameterization

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

VARIANCE_FLOOR = 1e-12
# initial aleatoric variance as a fraction of the mean target variance
LOGVAR_INIT_FRACTION = 1e-2


@dataclass
class StudentTrainingOutput(BaseOutput):
    """
    Args:
        network (`StudentNetwork`): the trained student.
        population (`GaussianModel`): axis-aligned population Gaussian (mu_g, diag(exp(l_g))).
        train_losses (`List[float]`): mean training objective per example for every epoch.
        val_losses (`List[float]`): deterministic-pass objective on the held-out records, entry 0 is before training.
        val_indices (`np.ndarray`): sorted indices of the held-out records.
    """

    network: StudentNetwork
    population: GaussianModel
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    val_indices: Optional[np.ndarray] = None


def _as_array(data):
    return np.asarray(getattr(data, "vectors", data), dtype=np.float64)


def train_student(inputs, targets, cfg: StudentTrainConfig = None, weights: StudentLossWeights = None,
                  hidden_sizes: Sequence[int] = (512, 512, 512), dropout_rate=0.2, loss_fn=None):
    '''
    Distill a frozen teacher into a heteroscedastic dropout student.

    inputs: EmbeddingSet or (N, p) teacher embeddings
    targets: EmbeddingSet or (N, m) teacher outputs for the same records
    mu_g is fixed to the empirical target mean before training; l_g starts at the log of the
    empirical target variance and is optimized jointly with the network.
    Inputs are standardized by their mean and RMS spread, and the log-variance head starts at
    LOGVAR_INIT_FRACTION of the mean target variance, so training does not depend on the units of either.
    '''
    cfg = StudentTrainConfig.from_config(cfg)
    weights = StudentLossWeights.from_config(weights)
    x, y = _as_array(inputs), _as_array(targets)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0:
        raise InsufficientSamples("Cannot train a student without data.")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} inputs do not match {y.shape[0]} targets.")
    if x.shape[0] < 2:
        raise InsufficientSamples(f"Need at least 2 records to train a student, got {x.shape[0]}.")

    target_var = np.maximum(y.var(axis=0), VARIANCE_FLOOR)
    # constant targets fall back to a unit reference variance
    reference = float(y.var(axis=0).mean())
    reference = reference if reference > VARIANCE_FLOOR else 1.0
    net = StudentNetwork(in_dim=x.shape[1], hidden_sizes=list(hidden_sizes), out_dim=y.shape[1],
                         dropout_rate=dropout_rate, logvar_init=float(np.log(LOGVAR_INIT_FRACTION * reference)),
                         seed=cfg.seed)
    net.set_input_normalization(x.mean(axis=0), np.sqrt(max(float(x.var(axis=0).mean()), VARIANCE_FLOOR)))
    mu_g = y.mean(axis=0)
    net.set_population(mu_g, np.log(target_var))

    generator = torch.Generator(device="cpu").manual_seed(cfg.seed)
    mask_generator = torch.Generator(device="cpu").manual_seed(cfg.seed + 1)
    train_loader, val_loader = teacher2dataloader(x, y, cfg.batch_size, val_fraction=cfg.val_fraction, generator=generator)
    if loss_fn is None:
        loss_fn = StudentLoss.from_weights(weights, reduction="sum")

    @torch.no_grad()
    def validate():
        net.eval()
        total, count = 0.0, 0
        for xb, yb in val_loader:
            mu, logvar = net(xb, return_dict=False)
            total += float(loss_fn(mu, logvar, yb, net.population_mean, net.population_logvar))
            count += xb.shape[0]
        return total / count

    val_losses = [validate()]
    train_losses = []
    if cfg.epochs > 0:
        optimizer = make_optimizer(net.parameters(), cfg)
        lr_scheduler, per_epoch = make_lr_scheduler(optimizer, cfg, len(train_loader) * cfg.epochs)

        logger.info(f"Training student {x.shape[1]} -> {y.shape[1]} on {len(train_loader.dataset)} records, "
                    f"{cfg.epochs} epochs, dropout {dropout_rate}.")
        progress_bar = tqdm(range(cfg.epochs), disable=not cfg.show_progress, desc="student")
        for epoch in progress_bar:
            net.train()
            epoch_loss, count = 0.0, 0
            for xb, yb in train_loader:
                # one independent dropout mask per example
                masks = net.sample_masks(mask_generator, batch_size=xb.shape[0])
                mu, logvar = net(xb, dropout_masks=masks, return_dict=False)
                loss = loss_fn(mu, logvar, yb, net.population_mean, net.population_logvar)
                optimizer.zero_grad()
                (loss / xb.shape[0]).backward()
                if cfg.max_grad_norm:
                    torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.max_grad_norm)
                optimizer.step()
                if not per_epoch:
                    lr_scheduler.step()
                epoch_loss += loss.item()
                count += xb.shape[0]
            if per_epoch:
                lr_scheduler.step()

            train_losses.append(epoch_loss / count)
            val_losses.append(validate())
            logs = {"loss": train_losses[-1], "val_loss": val_losses[-1], "lr": optimizer.param_groups[0]["lr"]}
            progress_bar.set_postfix(**logs)
            logger.debug(f"epoch {epoch}: {logs}")
        logger.info(f"Student validation loss {val_losses[0]:.4e} -> {val_losses[-1]:.4e}.")

    net.eval()
    population = GaussianModel(net.population_mean.numpy().copy(),
                               np.diag(np.exp(net.population_logvar.detach().numpy())),
                               Parameterization.AXIS_ALIGNED)
    val_indices = np.sort(np.asarray(val_loader.dataset.indices, dtype=np.int64))
    return StudentTrainingOutput(network=net, population=population, train_losses=train_losses, val_losses=val_losses,
                                 val_indices=val_indices)
