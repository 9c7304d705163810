from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from diffusers.pipelines.pipeline_utils import DiffusionPipeline
from diffusers.utils import BaseOutput
from einops import rearrange

from models.mlp import as_tensor
from models.student import StudentNetwork, pass_generator
from utils.errors import DimensionMismatch, ValidationError


@dataclass(eq=False)
class UncertaintyEstimate:
    '''
    Monte-Carlo aggregate of T stochastic student passes for one input.

    mu_hat: (m,) mean of the predicted means
    epistemic: (m, m) covariance of the predicted means across passes
    aleatoric: (m, m) mean of the predicted diagonal covariances
    '''
    mu_hat: np.ndarray
    epistemic: np.ndarray
    aleatoric: np.ndarray
    num_passes: int

    @property
    def sigma_hat(self):
        return self.epistemic + self.aleatoric

    @property
    def dim(self):
        return self.mu_hat.shape[0]


@dataclass
class UncertaintyPipelineOutput(BaseOutput):
    """
    Args:
        mu_hat (`np.ndarray` of shape `(batch_size, m)`)
        epistemic (`np.ndarray` of shape `(batch_size, m, m)`)
        aleatoric (`np.ndarray` of shape `(batch_size, m, m)`)
        num_passes (`int`)
    """

    mu_hat: np.ndarray
    epistemic: np.ndarray
    aleatoric: np.ndarray
    num_passes: int

    @property
    def sigma_hat(self):
        return self.epistemic + self.aleatoric

    def estimates(self) -> List[UncertaintyEstimate]:
        return [
            UncertaintyEstimate(self.mu_hat[i], self.epistemic[i], self.aleatoric[i], self.num_passes)
            for i in range(self.mu_hat.shape[0])
        ]


class MCDropoutPipeline(DiffusionPipeline):
    '''
    Monte-Carlo dropout inference. Pass t draws one Bernoulli mask per layer from the stream
    derived from (base_seed, t); the mask is shared by every input of that pass.
    '''

    model_cpu_offload_seq = "student"

    def __init__(self, student: StudentNetwork):
        super().__init__()

        self.register_modules(student=student)

    @torch.no_grad()
    def __call__(
        self,
        inputs,
        num_passes: int = 1000,
        base_seed: int = 0,
        chunk_size: int = 1024,
        return_dict: bool = True,
    ) -> Union[UncertaintyPipelineOutput, Tuple]:
        if num_passes < 1:
            raise ValidationError(f"num_passes must be at least 1, got {num_passes}.")
        x = as_tensor(inputs)
        if x.ndim == 1:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.student.in_features:
            raise DimensionMismatch(f"Input width {x.shape[-1]} does not match student input {self.student.in_features}.")

        self.student.eval()
        masks = [self.student.sample_masks(pass_generator(base_seed, t)) for t in range(num_passes)]

        mu_hat, epistemic, aleatoric = [], [], []
        for chunk in torch.split(x, chunk_size):
            mus, logvars = [], []
            for t in self.progress_bar(range(num_passes)):
                mu, logvar = self.student(chunk, dropout_masks=masks[t], return_dict=False)
                mus.append(mu)
                logvars.append(logvar)
            mus = rearrange(torch.stack(mus), "t b m -> b t m")
            variances = torch.exp(torch.stack(logvars))

            # deviations from the first pass, so identical passes give an exactly zero spread
            shifted = mus - mus[:, :1]
            shift_mean = shifted.mean(dim=1, keepdim=True)
            dev = shifted - shift_mean
            cov = torch.einsum("bti,btj->bij", dev, dev) / num_passes
            mu_hat.append(mus[:, 0] + shift_mean[:, 0])
            epistemic.append(0.5 * (cov + cov.transpose(-1, -2)))
            aleatoric.append(torch.diag_embed(variances.mean(dim=0)))

        mu_hat = torch.cat(mu_hat).numpy()
        epistemic = torch.cat(epistemic).numpy()
        aleatoric = torch.cat(aleatoric).numpy()

        if not return_dict:
            return (mu_hat, epistemic, aleatoric)

        return UncertaintyPipelineOutput(mu_hat=mu_hat, epistemic=epistemic, aleatoric=aleatoric, num_passes=num_passes)


def mc_infer_batch(net: StudentNetwork, inputs, num_passes=1000, base_seed=0, chunk_size=1024,
                   show_progress=False) -> UncertaintyPipelineOutput:
    pipeline = MCDropoutPipeline(student=net)
    pipeline.set_progress_bar_config(disable=not show_progress)
    return pipeline(inputs, num_passes=num_passes, base_seed=base_seed, chunk_size=chunk_size)


def mc_infer(net: StudentNetwork, x, num_passes=1000, base_seed=0) -> UncertaintyEstimate:
    x = as_tensor(x)
    if x.ndim != 1:
        raise DimensionMismatch(f"mc_infer takes a single vector, got shape {tuple(x.shape)}; use mc_infer_batch.")
    return mc_infer_batch(net, x, num_passes=num_passes, base_seed=base_seed).estimates()[0]
