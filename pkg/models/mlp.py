import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from diffusers.configuration_utils import ConfigMixin, register_to_config
from diffusers.models.modeling_utils import ModelMixin
from diffusers.utils import BaseOutput

from utils.errors import DimensionMismatch, ValidationError


@dataclass
class MlpOutput(BaseOutput):
    """
    Args:
        sample (`torch.Tensor` of shape `(batch_size, layer_sizes[-1])`): output of the last layer.
    """

    sample: torch.Tensor


def init_linear_(layer: nn.Linear, generator: torch.Generator, negative_slope=0.01, weight_scale=1.0):
    # fan-in scaled uniform, the gain matches the leaky rectifier
    fan_in = layer.in_features
    gain = math.sqrt(2.0 / (1.0 + negative_slope ** 2))
    bound = weight_scale * gain * math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            bias_bound = 1.0 / math.sqrt(fan_in)
            layer.bias.uniform_(-bias_bound, bias_bound, generator=generator)


class MlpNetwork(ModelMixin, ConfigMixin):
    r"""
    Fully-connected network with leaky rectifiers, optional residual connections and per-layer dropout.

    Dropout follows the classical (non-inverted) convention: a sampled mask multiplies the activations as is,
    the deterministic pass scales them by the keep probability instead.

    Args:
        layer_sizes: widths from input to output, `len(layer_sizes) - 1` linear layers.
        residual: one flag per linear layer, only allowed on activated layers with equal in/out width.
        dropout_rates: one rate in [0, 1) per activated layer.
        negative_slope: slope of the leaky rectifier.
        activate_last: also activate (and drop out) the last linear layer, used when the network is a trunk.
        seed: seed of the weight initialization.
    """

    @register_to_config
    def __init__(
        self,
        layer_sizes: Sequence[int] = (512, 512, 512, 512, 8),
        residual: Optional[Sequence[bool]] = None,
        dropout_rates: Optional[Sequence[float]] = None,
        negative_slope: float = 0.01,
        activate_last: bool = False,
        seed: int = 0,
    ):
        super().__init__()

        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
            raise ValidationError(f"layer_sizes must hold at least two positive widths, got {layer_sizes}.")
        num_linear = len(layer_sizes) - 1
        num_activated = num_linear if activate_last else num_linear - 1

        residual = [bool(r) for r in residual] if residual is not None else [False] * num_linear
        dropout_rates = [float(p) for p in dropout_rates] if dropout_rates is not None else [0.0] * num_activated
        if len(residual) != num_linear:
            raise ValidationError(f"Expected {num_linear} residual flags, got {len(residual)}.")
        if len(dropout_rates) != num_activated:
            raise ValidationError(f"Expected {num_activated} dropout rates, got {len(dropout_rates)}.")
        for i, flag in enumerate(residual):
            if flag and (i >= num_activated or layer_sizes[i] != layer_sizes[i + 1]):
                raise ValidationError(f"Residual connection on layer {i} needs an activated layer of equal width, "
                                 f"got {layer_sizes[i]} -> {layer_sizes[i + 1]}.")
        if any(not 0.0 <= p < 1.0 for p in dropout_rates):
            raise ValidationError(f"Dropout rates must lie in [0, 1), got {dropout_rates}.")
        self.register_to_config(layer_sizes=layer_sizes, residual=residual, dropout_rates=dropout_rates)

        self.num_activated = num_activated
        self.layers = nn.ModuleList(
            [nn.Linear(layer_sizes[i], layer_sizes[i + 1], dtype=torch.float64) for i in range(num_linear)]
        )
        self.reset_parameters(seed)

    @property
    def in_features(self):
        return self.config.layer_sizes[0]

    @property
    def out_features(self):
        return self.config.layer_sizes[-1]

    def reset_parameters(self, seed):
        generator = torch.Generator(device="cpu").manual_seed(int(seed))
        for layer in self.layers:
            init_linear_(layer, generator, self.config.negative_slope)

    def sample_masks(self, generator: torch.Generator, batch_size: Optional[int] = None) -> List[Optional[torch.Tensor]]:
        '''
        One Bernoulli keep-mask per activated layer. With batch_size None the mask is shared by the
        whole batch (a draw of the network weights), otherwise every example gets its own mask.
        '''
        masks = []
        for width, rate in zip(self.config.layer_sizes[1:self.num_activated + 1], self.config.dropout_rates):
            if rate == 0:
                masks.append(None)
                continue
            shape = (width,) if batch_size is None else (batch_size, width)
            keep = torch.full(shape, 1.0 - rate, dtype=torch.float64)
            masks.append(torch.bernoulli(keep, generator=generator))
        return masks

    def forward(self, sample: torch.Tensor, dropout_masks: Optional[List[Optional[torch.Tensor]]] = None,
                return_dict: bool = True):
        if sample.shape[-1] != self.in_features:
            raise DimensionMismatch(f"Input width {sample.shape[-1]} does not match network input {self.in_features}.")
        h = sample
        for i, layer in enumerate(self.layers):
            out = layer(h)
            if i < self.num_activated:
                out = F.leaky_relu(out, self.config.negative_slope)
                rate = self.config.dropout_rates[i]
                if dropout_masks is not None and dropout_masks[i] is not None:
                    out = out * dropout_masks[i]
                elif rate > 0:
                    out = out * (1.0 - rate)
                if self.config.residual[i]:
                    out = h + out
            h = out

        if not return_dict:
            return (h,)
        return MlpOutput(sample=h)


def build_projector(in_dim, out_dim, width=512, num_blocks=2, negative_slope=0.01, seed=0):
    '''
    input -> width -> [residual block] x num_blocks -> out_dim, no dropout.
    '''
    layer_sizes = [in_dim, width] + [width] * num_blocks + [out_dim]
    residual = [False] + [True] * num_blocks + [False]
    return MlpNetwork(layer_sizes=layer_sizes, residual=residual, negative_slope=negative_slope, seed=seed)


def as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@torch.no_grad()
def project(net, x, batch_size: int = 4096):
    '''
    Deterministic forward pass (dropout off). Accepts a single vector or a (N, p) batch and returns numpy.
    '''
    if hasattr(net, "project") and not isinstance(net, nn.Module):
        return net.project(x)
    x = as_tensor(x)
    single = x.ndim == 1
    if single:
        x = x.unsqueeze(0)
    if x.shape[-1] != net.in_features:
        raise DimensionMismatch(f"Input width {x.shape[-1]} does not match network input {net.in_features}.")
    net.eval()
    outputs = [net(chunk, return_dict=False)[0] for chunk in torch.split(x, batch_size)]
    out = torch.cat(outputs).numpy()
    return out[0] if single else out
