import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from diffusers.pipelines.pipeline_utils import DiffusionPipeline
from diffusers.utils import BaseOutput, logging

from models.student import StudentNetwork
from pipelines.pipeline_uncertainty import MCDropoutPipeline
from utils.capacity_utils import (DEFAULT_MIN_SAMPLES, DEFAULT_POPULATION_FRACTION, CapacityReport, ClassSpread,
                                  ClassStatistics, PopulationStatistics, Selector, capacity_sweep, class_statistics,
                                  population_statistics, select_canonical_class)
from utils.errors import CheckpointError, InvalidProbability, ValidationError
from utils.stats_utils import Parameterization

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name


@dataclass
class InferenceConfig:
    mc_passes: int = 1000
    chunk_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.mc_passes < 1:
            raise ValidationError(f"mc_passes must be at least 1, got {self.mc_passes}.")
        if self.chunk_size < 1:
            raise ValidationError(f"chunk_size must be at least 1, got {self.chunk_size}.")


@dataclass
class CapacityConfig:
    fars: List[float] = field(default_factory=lambda: [0.01])
    population_fraction: float = DEFAULT_POPULATION_FRACTION
    shannon_pairing: bool = False
    selector: str = "max"  # 'min', 'mean', 'median', 'max'
    param: str = "full"  # 'sphere', 'axis', 'full'
    min_samples: int = DEFAULT_MIN_SAMPLES
    class_spread: str = "uncertainty"  # 'uncertainty' or 'total'

    def __post_init__(self):
        if len(self.fars) == 0:
            raise ValidationError("At least one FAR is required.")
        if any(not 0.0 < q < 1.0 for q in self.fars):
            raise InvalidProbability(f"Every FAR must lie in (0, 1), got {list(self.fars)}.")
        if not 0.0 < self.population_fraction < 1.0:
            raise InvalidProbability(f"population_fraction must lie in (0, 1), got {self.population_fraction}.")
        if self.min_samples < 1:
            raise ValidationError(f"min_samples must be at least 1, got {self.min_samples}.")
        try:
            Selector.parse(self.selector)
            Parameterization.parse(self.param)
            ClassSpread(self.class_spread)
        except ValueError as err:
            raise ValidationError(str(err)) from err


@dataclass(eq=False)
class CapacityStatistics:
    '''
    Per-record Monte-Carlo estimates, the cached input of every capacity computation.

    labels: (N,) class ids, mu_hat: (N, m), epistemic and aleatoric: (N, m, m)
    '''
    labels: np.ndarray
    mu_hat: np.ndarray
    epistemic: np.ndarray
    aleatoric: np.ndarray
    num_passes: int

    @property
    def sigma_hat(self):
        return self.epistemic + self.aleatoric

    @property
    def dim(self):
        return self.mu_hat.shape[1]

    def summarize(self, selector=Selector.MAX, min_samples=DEFAULT_MIN_SAMPLES, spread=ClassSpread.UNCERTAINTY):
        '''Returns (classes, canonical, population, dropped class ids).'''
        classes, dropped = class_statistics(self.mu_hat, self.sigma_hat, self.labels, min_samples, spread,
                                            return_dropped=True)
        canonical = select_canonical_class(classes, selector)
        return classes, canonical, population_statistics(classes, canonical), dropped

    def sweep(self, cfg: CapacityConfig = None, selector=None, param=None, fars=None) -> List[CapacityReport]:
        cfg = cfg if cfg is not None else CapacityConfig()
        selector = Selector.parse(selector if selector is not None else cfg.selector)
        param = Parameterization.parse(param if param is not None else cfg.param)
        fars = sorted(fars if fars is not None else cfg.fars)
        _, canonical, pop, _ = self.summarize(selector, cfg.min_samples, cfg.class_spread)
        return capacity_sweep(pop, canonical, fars, cfg.population_fraction, param,
                              shannon_pairing=cfg.shannon_pairing, selector=selector)


def save_statistics(stats: CapacityStatistics, path):
    np.savez(path, labels=np.asarray(stats.labels, dtype=str), mu_hat=stats.mu_hat, epistemic=stats.epistemic,
             aleatoric=stats.aleatoric, num_passes=np.asarray(stats.num_passes))
    logger.info(f"Saved statistics of {len(stats.labels)} records to {path}.")


def load_statistics(path) -> CapacityStatistics:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Statistics cache not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as f:
            stats = CapacityStatistics(f["labels"].astype(object), f["mu_hat"], f["epistemic"], f["aleatoric"],
                                       int(f["num_passes"]))
    except (KeyError, ValueError, OSError) as err:
        raise CheckpointError(f"{path} is not a statistics cache: {err}") from err
    n, m = stats.mu_hat.shape
    if stats.epistemic.shape != (n, m, m) or stats.aleatoric.shape != (n, m, m) or len(stats.labels) != n:
        raise CheckpointError(f"{path} holds inconsistent array shapes.")
    return stats


@dataclass
class CapacityPipelineOutput(BaseOutput):
    """
    Args:
        reports (`List[CapacityReport]`): one per FAR, ascending.
        statistics (`CapacityStatistics`): the Monte-Carlo estimates the reports were computed from.
        classes (`List[ClassStatistics]`)
        canonical (`ClassStatistics`)
        population (`PopulationStatistics`)
        dropped_classes (`List[str]`): classes with fewer than min_samples records.
    """

    reports: List[CapacityReport]
    statistics: CapacityStatistics
    classes: List[ClassStatistics]
    canonical: ClassStatistics
    population: PopulationStatistics
    dropped_classes: List[str] = field(default_factory=list)


class CapacityPipeline(DiffusionPipeline):
    r'''
    Capacity of a representation from a trained student: Monte-Carlo uncertainty for every record,
    per-class and population Gaussians, then the volume ratio at each FAR.

    Parameters:
        student ([`StudentNetwork`]):
            Dropout student distilled from the teacher embeddings.
    '''

    model_cpu_offload_seq = "student"

    def __init__(self, student: StudentNetwork):
        super().__init__()

        self.register_modules(student=student)

    def estimate(self, inputs, labels, num_passes=1000, base_seed=0, chunk_size=1024) -> CapacityStatistics:
        mc = MCDropoutPipeline(student=self.student)
        mc.set_progress_bar_config(**getattr(self, "_progress_bar_config", {}))
        out = mc(inputs, num_passes=num_passes, base_seed=base_seed, chunk_size=chunk_size)
        return CapacityStatistics(np.asarray(labels, dtype=object), out.mu_hat, out.epistemic, out.aleatoric, num_passes)

    @torch.no_grad()
    def __call__(
        self,
        inputs=None,
        labels=None,
        inference: InferenceConfig = None,
        capacity: CapacityConfig = None,
        statistics: Optional[CapacityStatistics] = None,
        return_dict: bool = True,
    ) -> Union[CapacityPipelineOutput, Tuple]:
        r'''
        Args:
            inputs (`np.ndarray` of shape `(N, p)`): teacher embeddings, ignored when `statistics` is given.
            labels (`Sequence[str]` of length `N`)
            inference (`InferenceConfig`): Monte-Carlo passes, chunking and base seed.
            capacity (`CapacityConfig`): FARs, radii, selector, parameterization, class filtering.
            statistics (`CapacityStatistics`, *optional*): cached estimates; skips Monte-Carlo inference.
        '''
        inference = inference if inference is not None else InferenceConfig()
        capacity = capacity if capacity is not None else CapacityConfig()
        if statistics is None:
            if inputs is None or labels is None:
                raise ValidationError("Either inputs with labels or cached statistics are required.")
            logger.info(f"Monte-Carlo inference with {inference.mc_passes} passes on {len(labels)} records.")
            statistics = self.estimate(inputs, labels, inference.mc_passes, inference.seed, inference.chunk_size)

        selector = Selector.parse(capacity.selector)
        classes, canonical, population, dropped = statistics.summarize(selector, capacity.min_samples,
                                                                       capacity.class_spread)
        reports = capacity_sweep(population, canonical, sorted(capacity.fars), capacity.population_fraction,
                                 Parameterization.parse(capacity.param), shannon_pairing=capacity.shannon_pairing,
                                 selector=selector)
        logger.info(f"{len(classes)} classes, canonical {canonical.class_id} ({selector.value}), "
                    f"log10 capacity {[round(r.log10_capacity, 3) for r in reports]}.")

        if not return_dict:
            return (reports, statistics)

        return CapacityPipelineOutput(reports=reports, statistics=statistics, classes=classes, canonical=canonical,
                                      population=population, dropped_classes=list(dropped))
