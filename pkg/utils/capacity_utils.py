import enum
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from diffusers.utils import logging

from .errors import InsufficientClasses, InvalidProbability, NoUsableClasses, ValidationError
from .stats_utils import Parameterization, chi2_inverse_cdf, chi2_inverse_sf, cholesky_logdet, reduce_covariance

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

DEFAULT_POPULATION_FRACTION = 0.99
DEFAULT_MIN_SAMPLES = 5
LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)
SWEEP_COLUMNS = ["far", "r_y", "r_z", "log10_capacity", "parameterization", "selector"]


class Selector(str, enum.Enum):
    MIN = "min"
    MEAN = "mean"
    MEDIAN = "median"
    MAX = "max"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class ClassSpread(str, enum.Enum):
    UNCERTAINTY = "uncertainty"
    TOTAL = "total"


@dataclass(eq=False)
class ClassStatistics:
    class_id: str
    n_samples: int
    mu_c: np.ndarray
    sigma_c_avg: np.ndarray
    sigma_z_c: np.ndarray
    log_det_z: float

    @property
    def dim(self):
        return self.mu_c.shape[0]


@dataclass(eq=False)
class PopulationStatistics:
    '''
    enclosing_cov is the numerator covariance sigma_y + sigma_z(canonical).
    '''
    mu_y: np.ndarray
    scatter_b: np.ndarray
    sigma_y: np.ndarray
    enclosing_cov: np.ndarray
    num_classes: int

    @property
    def dim(self):
        return self.mu_y.shape[0]


@dataclass(eq=False)
class CapacityReport:
    far: Optional[float]
    population_fraction: Optional[float]
    r_y: float
    r_z: float
    d: int
    log_capacity: float
    capacity: float
    saturated: bool
    parameterization: str
    canonical_selector: Optional[str]
    canonical_class_id: Optional[str]

    @property
    def log10_capacity(self):
        return self.log_capacity / math.log(10.0)

    def to_dict(self):
        out = asdict(self)
        out["log10_capacity"] = self.log10_capacity
        return out

    def to_row(self):
        return {
            "far": self.far,
            "r_y": self.r_y,
            "r_z": self.r_z,
            "log10_capacity": self.log10_capacity,
            "parameterization": self.parameterization,
            "selector": self.canonical_selector,
        }


def class_statistics(mu_hat, sigma_hat, labels, min_samples=DEFAULT_MIN_SAMPLES, spread=ClassSpread.UNCERTAINTY,
                     return_dropped=False):
    '''
    Per-class Gaussians from per-sample uncertainty estimates.

    mu_hat: (N, m) aggregated means, sigma_hat: (N, m, m) aggregated covariances, labels: (N,)
    spread 'uncertainty': sigma_z = mean of member sigma_hat
    spread 'total': additionally the scatter of member means about the class mean
    Classes with fewer than `min_samples` members are dropped.
    '''
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    labels = np.asarray([str(l) for l in labels], dtype=object)
    spread = ClassSpread(spread)
    if mu_hat.ndim != 2 or sigma_hat.shape != mu_hat.shape + (mu_hat.shape[1],) or len(labels) != len(mu_hat):
        raise ValidationError(f"Inconsistent shapes: mu_hat {mu_hat.shape}, sigma_hat {sigma_hat.shape}, {len(labels)} labels.")

    classes, dropped = [], []
    for label in sorted(set(labels)):
        idx = np.flatnonzero(labels == label)
        if len(idx) < min_samples:
            dropped.append(label)
            continue
        mu_c = mu_hat[idx].mean(axis=0)
        sigma_c_avg = sigma_hat[idx].mean(axis=0)
        sigma_z = sigma_c_avg
        if spread is ClassSpread.TOTAL:
            centered = mu_hat[idx] - mu_c
            sigma_z = sigma_z + centered.T @ centered / len(idx)
        sigma_z = 0.5 * (sigma_z + sigma_z.T)
        classes.append(ClassStatistics(label, len(idx), mu_c, sigma_c_avg, sigma_z, cholesky_logdet(sigma_z).log_det))

    if dropped:
        logger.info(f"Dropped {len(dropped)} classes with fewer than {min_samples} samples.")
    if not classes:
        raise NoUsableClasses(f"No class has at least {min_samples} samples.")
    if return_dropped:
        return classes, dropped
    return classes


def class_statistics_from_estimates(estimates_by_label: Mapping[str, Sequence], min_samples=DEFAULT_MIN_SAMPLES,
                                    spread=ClassSpread.UNCERTAINTY, return_dropped=False):
    '''
    Same as `class_statistics` with UncertaintyEstimate objects grouped by label.
    '''
    mu_hat, sigma_hat, labels = [], [], []
    for label, estimates in estimates_by_label.items():
        for est in estimates:
            mu_hat.append(est.mu_hat)
            sigma_hat.append(est.sigma_hat)
            labels.append(label)
    if not labels:
        raise NoUsableClasses("No uncertainty estimates were given.")
    return class_statistics(np.stack(mu_hat), np.stack(sigma_hat), labels, min_samples, spread, return_dropped)


def select_canonical_class(classes: Sequence[ClassStatistics], selector=Selector.MAX) -> ClassStatistics:
    '''
    Rank by log_det_z; ties go to the smallest class_id.
    median: lower middle for even counts; mean: closest log_det_z to the mean log_det_z.
    '''
    if not classes:
        raise NoUsableClasses("Cannot select a canonical class from an empty list.")
    selector = Selector.parse(selector)
    if selector is Selector.MIN:
        return min(classes, key=lambda c: (c.log_det_z, c.class_id))
    if selector is Selector.MAX:
        return min(classes, key=lambda c: (-c.log_det_z, c.class_id))
    if selector is Selector.MEDIAN:
        ranked = sorted(classes, key=lambda c: (c.log_det_z, c.class_id))
        return ranked[(len(ranked) - 1) // 2]
    mean = float(np.mean([c.log_det_z for c in classes]))
    return min(classes, key=lambda c: (abs(c.log_det_z - mean), c.class_id))


def between_class_scatter(means):
    means = np.asarray(means, dtype=np.float64)
    centered = means - means.mean(axis=0)
    return centered.T @ centered / means.shape[0]


def population_statistics(classes: Sequence[ClassStatistics], canonical: ClassStatistics) -> PopulationStatistics:
    if len(classes) < 2:
        raise InsufficientClasses(f"Population statistics need at least 2 classes, got {len(classes)}.")
    means = np.stack([c.mu_c for c in classes])
    scatter_b = between_class_scatter(means)
    # sigma_z_c is the averaged member covariance unless the member-mean spread was folded in
    enclosing = scatter_b + canonical.sigma_z_c
    enclosing = 0.5 * (enclosing + enclosing.T)
    return PopulationStatistics(
        mu_y=means.mean(axis=0),
        scatter_b=scatter_b,
        sigma_y=enclosing - canonical.sigma_z_c,
        enclosing_cov=enclosing,
        num_classes=len(classes),
    )


def far_to_radius(q, d):
    '''r_z with P(chi2_d > r_z^2) = q.'''
    if not 0.0 < q < 1.0:
        raise InvalidProbability(f"FAR must lie in (0, 1), got {q}.")
    return math.sqrt(chi2_inverse_sf(q, d))


def fraction_to_radius(frac, d):
    '''r_y with P(chi2_d <= r_y^2) = frac.'''
    if not 0.0 < frac < 1.0:
        raise InvalidProbability(f"Population fraction must lie in (0, 1), got {frac}.")
    return math.sqrt(chi2_inverse_cdf(frac, d))


def log_capacity_from_covariances(enclosing_cov, class_cov, r_y, r_z, param=Parameterization.FULL_ELLIPSOID):
    '''
    Log of the volume ratio of the enclosing and class hyper-ellipsoids; the unit-ball volume cancels.
    '''
    param = Parameterization.parse(param)
    enclosing_cov = np.asarray(enclosing_cov, dtype=np.float64)
    d = enclosing_cov.shape[0]
    log_det_num = cholesky_logdet(reduce_covariance(enclosing_cov, param)).log_det
    log_det_den = cholesky_logdet(reduce_covariance(class_cov, param)).log_det
    radius_term = 0.0 if r_y == r_z else d * (math.log(r_y) - math.log(r_z))
    return 0.5 * log_det_num - 0.5 * log_det_den + radius_term


def capacity(pop: PopulationStatistics, canonical: ClassStatistics, r_y, r_z, param=Parameterization.FULL_ELLIPSOID,
             far=None, population_fraction=None, selector=None) -> CapacityReport:
    param = Parameterization.parse(param)
    if not r_y > 0:
        raise ValidationError(f"r_y must be positive, got {r_y}.")
    if r_z > 0:
        log_cap = log_capacity_from_covariances(pop.enclosing_cov, canonical.sigma_z_c, r_y, r_z, param)
    else:
        log_cap = math.inf
    saturated = log_cap > LOG_FLOAT_MAX
    return CapacityReport(
        far=far,
        population_fraction=population_fraction,
        r_y=float(r_y),
        r_z=float(r_z),
        d=pop.dim,
        log_capacity=float(log_cap),
        capacity=math.inf if saturated else math.exp(log_cap),
        saturated=bool(saturated),
        parameterization=param.value,
        canonical_selector=None if selector is None else Selector.parse(selector).value,
        canonical_class_id=canonical.class_id,
    )


def capacity_sweep(pop: PopulationStatistics, canonical: ClassStatistics, fars: Sequence[float],
                   frac=DEFAULT_POPULATION_FRACTION, param=Parameterization.FULL_ELLIPSOID,
                   shannon_pairing=False, selector=None) -> List[CapacityReport]:
    '''
    One report per FAR. With `shannon_pairing` the population radius is the class radius (frac = 1 - q).
    '''
    fars = [float(q) for q in fars]
    if any(not 0.0 < q < 1.0 for q in fars):
        raise InvalidProbability(f"Every FAR must lie in (0, 1), got {fars}.")
    if any(b < a for a, b in zip(fars, fars[1:])):
        raise InvalidProbability(f"FARs must be sorted ascending, got {fars}.")
    d = pop.dim
    if not shannon_pairing:
        r_y = fraction_to_radius(frac, d)

    reports = []
    for q in fars:
        r_z = far_to_radius(q, d)
        if shannon_pairing:
            r_y, frac_q = r_z, 1.0 - q
        else:
            frac_q = frac
        reports.append(capacity(pop, canonical, r_y, r_z, param, far=q, population_fraction=frac_q, selector=selector))
    return reports


def sweep_frame(reports: Sequence[CapacityReport]) -> pd.DataFrame:
    frame = pd.DataFrame([r.to_row() for r in reports], columns=SWEEP_COLUMNS)
    return frame.sort_values(["parameterization", "selector", "far"], kind="stable").reset_index(drop=True)


def capacity_vs_tar(runs: Mapping[str, Dict[str, float]]) -> pd.DataFrame:
    '''
    runs: name -> {"log10_capacity": ..., "tar": ...}; one row per run, sorted by capacity.
    '''
    frame = pd.DataFrame([{"run": name, **values} for name, values in runs.items()],
                         columns=["run", "log10_capacity", "tar"])
    return frame.sort_values("log10_capacity", kind="stable").reset_index(drop=True)
