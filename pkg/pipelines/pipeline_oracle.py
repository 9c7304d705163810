import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from diffusers.utils import BaseOutput, logging

from dataloader.synthetic import LatentGroundTruth, ToySpec, generate_toy
from utils.capacity_utils import (DEFAULT_POPULATION_FRACTION, CapacityReport, ClassStatistics, PopulationStatistics,
                                  Selector, capacity, capacity_sweep, far_to_radius, fraction_to_radius,
                                  log_capacity_from_covariances, select_canonical_class)
from utils.hull_utils import convex_hull_area_2d
from utils.stats_utils import GaussianModel, Parameterization, cholesky_logdet, ellipsoid_log_volume, estimate_gaussian

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name


@dataclass
class ToyCapacityOutput(BaseOutput):
    """
    Args:
        estimated_capacity (`float`): fitted population Gaussian over the fitted canonical class.
        ground_truth_capacity (`float`): same ratio on the generative covariances.
        hull_capacity (`float`): pooled-sample hull area over the canonical class hull area.
        estimated_population_cov, ground_truth_population_cov, estimated_class_cov, ground_truth_class_cov (`np.ndarray`)
        areas (`Dict[str, float]`): ellipse (radius 1) and hull areas of the population and the canonical class.
        selected_classes (`Dict[str, str]`): min/mean/median/max class ids of the fitted classes.
    """

    estimated_capacity: float
    ground_truth_capacity: float
    hull_capacity: float
    estimated_population_cov: np.ndarray
    ground_truth_population_cov: np.ndarray
    estimated_class_cov: np.ndarray
    ground_truth_class_cov: np.ndarray
    areas: Dict[str, float] = field(default_factory=dict)
    selected_classes: Dict[str, str] = field(default_factory=dict)
    class_id: str = ""


def _as_class_statistics(label, n, mean, cov):
    cov = np.asarray(cov, dtype=np.float64)
    return ClassStatistics(label, n, np.asarray(mean, dtype=np.float64), cov, cov, cholesky_logdet(cov).log_det)


def _population(enclosing, canonical: ClassStatistics, scatter, num_classes):
    enclosing = np.asarray(enclosing, dtype=np.float64)
    return PopulationStatistics(np.zeros(enclosing.shape[0]), np.asarray(scatter, dtype=np.float64),
                                enclosing - canonical.sigma_z_c, enclosing, num_classes)


def area(cov):
    '''Area of the radius-1 ellipse of a 2x2 covariance.'''
    return math.exp(ellipsoid_log_volume(GaussianModel(np.zeros(2), cov), 1.0))


def analytic_toy_capacity(population_cov, class_cov):
    '''Area ratio of the radius-1 ellipses, i.e. sqrt(det population_cov / det class_cov).'''
    return math.exp(log_capacity_from_covariances(population_cov, class_cov, 1.0, 1.0))


def toy_capacity_experiment(spec: ToySpec = None, selector=Selector.MAX, far=0.01) -> ToyCapacityOutput:
    '''
    Population covariance over canonical class covariance with r_y = r_z, on the fitted Gaussians
    (population from the fitted class means) and on the generative parameters; plus the convex-hull ratio.
    '''
    spec = spec if spec is not None else ToySpec()
    selector = Selector.parse(selector)
    data = generate_toy(spec)
    groups = data.samples.indices_by_class()
    r = far_to_radius(far, 2)

    fitted = {}
    for label, idx in groups.items():
        g = estimate_gaussian(data.samples.vectors[idx])
        fitted[label] = _as_class_statistics(label, len(idx), g.mean, g.covariance)
    fitted_classes = list(fitted.values())
    canonical = select_canonical_class(fitted_classes, selector)
    est_pop_cov = estimate_gaussian(np.stack([c.mu_c for c in fitted_classes])).covariance
    estimated = capacity(_population(est_pop_cov, canonical, est_pop_cov, len(fitted_classes)), canonical, r, r,
                         far=far, selector=selector)

    true_classes = [_as_class_statistics(label, spec.samples_per_class, g.mean, g.covariance)
                    for label, g in data.classes.items()]
    true_canonical = select_canonical_class(true_classes, selector)
    true_pop_cov = data.population.covariance
    ground_truth = capacity(_population(true_pop_cov, true_canonical, true_pop_cov, len(true_classes)), true_canonical,
                            r, r, far=far, selector=selector)

    hull_areas = [
        _as_class_statistics(label, len(idx), np.zeros(2), np.eye(2) * convex_hull_area_2d(data.samples.vectors[idx]))
        for label, idx in groups.items()
    ]
    # log_det of area * I is 2 log(area), so the selector ranks hull areas
    hull_canonical = select_canonical_class(hull_areas, selector)
    population_hull = convex_hull_area_2d(data.samples.vectors)
    class_hull = float(hull_canonical.sigma_z_c[0, 0])

    selected = {s.value: select_canonical_class(fitted_classes, s).class_id for s in Selector}
    areas = {
        "estimated_population": area(est_pop_cov),
        "ground_truth_population": area(true_pop_cov),
        "estimated_class": area(canonical.sigma_z_c),
        "ground_truth_class": area(true_canonical.sigma_z_c),
        "population_hull": population_hull,
        "class_hull": class_hull,
    }
    logger.info(f"Toy capacity: estimated {estimated.capacity:.3f}, ground truth {ground_truth.capacity:.3f}, "
                f"hull {population_hull / class_hull:.3f}.")
    return ToyCapacityOutput(
        estimated_capacity=estimated.capacity,
        ground_truth_capacity=ground_truth.capacity,
        hull_capacity=population_hull / class_hull,
        estimated_population_cov=est_pop_cov,
        ground_truth_population_cov=true_pop_cov,
        estimated_class_cov=canonical.sigma_z_c,
        ground_truth_class_cov=true_canonical.sigma_z_c,
        areas=areas,
        selected_classes=selected,
        class_id=canonical.class_id,
    )


def oracle_statistics(ground_truth: LatentGroundTruth, selector=Selector.MAX, numerator="population"):
    '''
    Capacity-engine inputs built from the generative parameters only.
    numerator 'population': between-class covariance alone, so between = k * within gives k^(d/2) at r_y = r_z
    numerator 'enclosing': between-class covariance plus the canonical class covariance
    '''
    classes = [_as_class_statistics(label, ground_truth.samples_per_class, ground_truth.centers[label], cov)
               for label, cov in sorted(ground_truth.class_covs.items())]
    canonical = select_canonical_class(classes, selector)
    between = ground_truth.between_cov
    if numerator == "enclosing":
        enclosing = between + canonical.sigma_z_c
    elif numerator == "population":
        enclosing = between
    else:
        raise NotImplementedError(f"Oracle numerator: {numerator} not implemented.")
    return _population(enclosing, canonical, between, len(classes)), canonical


def oracle_capacity(ground_truth: LatentGroundTruth, far=0.01, frac=DEFAULT_POPULATION_FRACTION, selector=Selector.MAX,
                    param=Parameterization.FULL_ELLIPSOID, numerator="population", shannon_pairing=False) -> CapacityReport:
    pop, canonical = oracle_statistics(ground_truth, selector, numerator)
    d = pop.dim
    r_z = far_to_radius(far, d)
    r_y = r_z if shannon_pairing else fraction_to_radius(frac, d)
    return capacity(pop, canonical, r_y, r_z, param, far=far,
                    population_fraction=1.0 - far if shannon_pairing else frac, selector=selector)


def oracle_sweep(ground_truth: LatentGroundTruth, fars: Sequence[float], frac=DEFAULT_POPULATION_FRACTION,
                 selector=Selector.MAX, param=Parameterization.FULL_ELLIPSOID, numerator="population",
                 shannon_pairing=False) -> List[CapacityReport]:
    pop, canonical = oracle_statistics(ground_truth, selector, numerator)
    return capacity_sweep(pop, canonical, fars, frac, param, shannon_pairing=shannon_pairing, selector=selector)
