import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from diffusers.configuration_utils import ConfigMixin, register_to_config
from diffusers.models.modeling_utils import ModelMixin
from diffusers.utils import BaseOutput

from models.mlp import MlpNetwork, as_tensor, init_linear_
from utils.errors import DimensionMismatch, ValidationError


@dataclass
class StudentOutput(BaseOutput):
    """
    Args:
        mu (`torch.Tensor` of shape `(batch_size, out_dim)`): predicted mean of the teacher target.
        logvar (`torch.Tensor` of shape `(batch_size, out_dim)`): predicted per-dimension log variance.
    """

    mu: torch.Tensor
    logvar: torch.Tensor


class StudentNetwork(ModelMixin, ConfigMixin):
    r"""
    Dropout trunk with a mean head and a log-variance head over the last hidden layer.
    Also holds the population Gaussian: `population_mean` (frozen buffer) and `population_logvar` (trained),
    and the input standardization `(x - input_mean) / input_scale` (frozen buffers, identity until set).

    Args:
        in_dim: width of the teacher embedding.
        hidden_sizes: trunk widths.
        out_dim: width of the teacher target.
        residual: per trunk layer, defaults to residual connections on every equal-width layer.
        dropout_rate: Bernoulli drop probability after every trunk layer.
        logvar_init: initial output of the log-variance head.
        logvar_clamp: predicted log variances are clamped to [-logvar_clamp, logvar_clamp].
    """

    @register_to_config
    def __init__(
        self,
        in_dim: int = 512,
        hidden_sizes: Sequence[int] = (512, 512, 512),
        out_dim: int = 8,
        residual: Optional[Sequence[bool]] = None,
        dropout_rate: float = 0.2,
        negative_slope: float = 0.01,
        logvar_init: float = math.log(0.1 ** 2),
        logvar_clamp: float = 20.0,
        seed: int = 0,
    ):
        super().__init__()
        hidden_sizes = [int(h) for h in hidden_sizes]
        layer_sizes = [in_dim] + hidden_sizes
        if residual is None:
            residual = [layer_sizes[i] == layer_sizes[i + 1] for i in range(len(hidden_sizes))]
        self.register_to_config(hidden_sizes=hidden_sizes, residual=[bool(r) for r in residual])

        self.trunk = MlpNetwork(
            layer_sizes=layer_sizes,
            residual=residual,
            dropout_rates=[dropout_rate] * len(hidden_sizes),
            negative_slope=negative_slope,
            activate_last=True,
            seed=seed,
        )
        self.mu_head = nn.Linear(hidden_sizes[-1], out_dim, dtype=torch.float64)
        self.logvar_head = nn.Linear(hidden_sizes[-1], out_dim, dtype=torch.float64)

        self.register_buffer("input_mean", torch.zeros(in_dim, dtype=torch.float64))
        self.register_buffer("input_scale", torch.ones(1, dtype=torch.float64))
        self.register_buffer("population_mean", torch.zeros(out_dim, dtype=torch.float64))
        self.population_logvar = nn.Parameter(torch.zeros(out_dim, dtype=torch.float64))
        self.reset_heads(seed)

    def reset_heads(self, seed):
        generator = torch.Generator(device="cpu").manual_seed(int(seed) + 1)
        init_linear_(self.mu_head, generator, self.config.negative_slope)
        init_linear_(self.logvar_head, generator, self.config.negative_slope, weight_scale=1e-2)
        with torch.no_grad():
            self.logvar_head.bias.fill_(self.config.logvar_init)

    @property
    def in_features(self):
        return self.config.in_dim

    @property
    def out_features(self):
        return self.config.out_dim

    @property
    def dropout_rates(self):
        return list(self.trunk.config.dropout_rates)

    def set_population(self, mean, logvar):
        with torch.no_grad():
            self.population_mean.copy_(as_tensor(mean))
            self.population_logvar.copy_(as_tensor(logvar))

    def set_input_normalization(self, mean, scale):
        with torch.no_grad():
            self.input_mean.copy_(as_tensor(mean))
            self.input_scale.fill_(float(scale))

    def sample_masks(self, generator: torch.Generator, batch_size: Optional[int] = None) -> List[Optional[torch.Tensor]]:
        return self.trunk.sample_masks(generator, batch_size)

    def forward(self, sample: torch.Tensor, dropout_masks=None, return_dict: bool = True):
        if sample.shape[-1] != self.in_features:
            raise DimensionMismatch(f"Input width {sample.shape[-1]} does not match student input {self.in_features}.")
        sample = (sample - self.input_mean) / self.input_scale
        h = self.trunk(sample, dropout_masks=dropout_masks, return_dict=False)[0]
        mu = self.mu_head(h)
        clamp = self.config.logvar_clamp
        logvar = self.logvar_head(h).clamp(-clamp, clamp)

        if not return_dict:
            return (mu, logvar)
        return StudentOutput(mu=mu, logvar=logvar)


def pass_generator(base_seed, t):
    '''
    Independent torch generator for draw `t`, derived from (base_seed, t) only.
    '''
    state = np.random.SeedSequence([int(base_seed), int(t)]).generate_state(2, dtype=np.uint32)
    return torch.Generator(device="cpu").manual_seed(int(state[0]) << 32 | int(state[1]))


@torch.no_grad()
def student_forward(net: StudentNetwork, x, mode="deterministic", seed=None):
    '''
    mode 'deterministic': dropout off, activations scaled by the keep probability.
    mode 'sample': one Bernoulli mask per layer drawn from `seed`, shared by every row of a batch.
    Returns (mu, logvar) as numpy arrays.
    '''
    x = as_tensor(x)
    single = x.ndim == 1
    if single:
        x = x.unsqueeze(0)
    if x.shape[-1] != net.in_features:
        raise DimensionMismatch(f"Input width {x.shape[-1]} does not match student input {net.in_features}.")

    net.eval()
    if mode == "deterministic":
        masks = None
    elif mode == "sample":
        if seed is None:
            raise ValidationError("mode='sample' needs a seed.")
        masks = net.sample_masks(pass_generator(seed, 0))
    else:
        raise NotImplementedError(f"Forward mode: {mode} not implemented.")

    mu, logvar = net(x, dropout_masks=masks, return_dict=False)
    mu, logvar = mu.numpy(), logvar.numpy()
    if single:
        return mu[0], logvar[0]
    return mu, logvar
