import math

import numpy as np
import pytest

from dataloader.synthetic import (TOY_MAX_CLASS_COV, TOY_POPULATION_COV, LatentGroundTruth, SyntheticTeacherSpec,
                                  ToySpec, generate_synthetic_teacher)
from pipelines.pipeline_oracle import (analytic_toy_capacity, area, oracle_capacity, oracle_statistics, oracle_sweep,
                                       toy_capacity_experiment)
from utils.capacity_utils import Selector


def isotropic_truth(d=2, between=100.0, n_classes=4):
    centers = {f"{c:04d}": np.full(d, float(c)) for c in range(n_classes)}
    covs = {label: np.eye(d) for label in centers}
    return LatentGroundTruth(between * np.eye(d), centers, covs, 10)


class TestToy:

    def test_analytic_capacity(self):
        assert analytic_toy_capacity(TOY_POPULATION_COV, TOY_MAX_CLASS_COV) == pytest.approx(2.27, abs=0.01)

    def test_fitted_table_covariances(self):
        population = [[10.84, 0.56], [0.56, 11.57]]
        largest_class = [[4.96, 0.47], [0.47, 6.54]]
        assert analytic_toy_capacity(population, largest_class) == pytest.approx(1.97, abs=0.01)
        assert area(population) == pytest.approx(35.15, abs=0.05)
        assert area(largest_class) == pytest.approx(17.84, abs=0.05)

    def test_seeds_bracket_the_ground_truth(self):
        truth = analytic_toy_capacity(TOY_POPULATION_COV, TOY_MAX_CLASS_COV)
        runs = [toy_capacity_experiment(ToySpec(seed=seed), far=0.01) for seed in range(20)]
        assert abs(np.median([r.estimated_capacity for r in runs]) - truth) <= 0.3 * truth
        assert sum(r.hull_capacity > truth for r in runs) >= 16

    def test_area(self):
        assert area(np.diag([4.0, 1.0])) == pytest.approx(2.0 * math.pi)

    def test_default_experiment(self):
        out = toy_capacity_experiment(far=0.01)
        # the largest generated class is at most the template scaled by the top of the jitter range
        assert 2.2 < out.ground_truth_capacity < 2.5
        assert 1.5 < out.estimated_capacity < 3.0
        assert out.hull_capacity > 1.0
        assert set(out.selected_classes) == {s.value for s in Selector}
        assert out.selected_classes["max"] == out.class_id
        assert out.areas["ground_truth_population"] == pytest.approx(area(TOY_POPULATION_COV))

    def test_selector_order(self):
        spec = ToySpec(n_classes=20, samples_per_class=40)
        smallest = toy_capacity_experiment(spec, selector="min")
        largest = toy_capacity_experiment(spec, selector="max")
        assert smallest.estimated_capacity > largest.estimated_capacity
        assert smallest.ground_truth_capacity > largest.ground_truth_capacity

    def test_capacity_does_not_depend_on_far(self):
        spec = ToySpec(n_classes=10, samples_per_class=20)
        a = toy_capacity_experiment(spec, far=1e-2)
        b = toy_capacity_experiment(spec, far=1e-4)
        assert a.estimated_capacity == pytest.approx(b.estimated_capacity, rel=1e-12)


class TestOracle:

    def test_isotropic_default_is_between_over_within(self):
        truth = isotropic_truth()
        report = oracle_capacity(truth, far=0.01, frac=0.99)
        assert report.capacity == pytest.approx(100.0, rel=1e-9)
        assert report.r_y == pytest.approx(report.r_z, rel=1e-9)

    def test_isotropic_shannon_pairing(self):
        truth = isotropic_truth()
        report = oracle_capacity(truth, far=0.01, shannon_pairing=True)
        assert report.capacity == pytest.approx(100.0, rel=1e-10)
        assert report.r_y == report.r_z
        enclosing = oracle_capacity(truth, far=0.01, numerator="enclosing", shannon_pairing=True)
        assert enclosing.capacity == pytest.approx(101.0, rel=1e-10)

    def test_isotropic_population_fraction(self):
        truth = isotropic_truth()
        enclosing = oracle_capacity(truth, far=0.01, frac=0.99, numerator="enclosing")
        assert enclosing.capacity == pytest.approx(101.0, rel=1e-9)
        # r_z^2 doubles from 1e-2 to 1e-4, the area ratio halves
        assert oracle_capacity(truth, far=1e-4, frac=0.99).capacity == pytest.approx(50.0, rel=1e-9)

    def test_sweep_is_monotone(self):
        truth = isotropic_truth(d=4)
        for numerator in ("population", "enclosing"):
            reports = oracle_sweep(truth, [1e-6, 1e-4, 1e-2], numerator=numerator)
            capacities = [r.log_capacity for r in reports]
            assert capacities[0] < capacities[1] < capacities[2]

    def test_statistics(self):
        truth = isotropic_truth()
        pop, canonical = oracle_statistics(truth, selector="min")
        assert canonical.class_id == "0000"
        np.testing.assert_allclose(pop.enclosing_cov, 100.0 * np.eye(2))
        np.testing.assert_allclose(pop.scatter_b, 100.0 * np.eye(2))
        pop, _ = oracle_statistics(truth, selector="min", numerator="enclosing")
        np.testing.assert_allclose(pop.enclosing_cov, 101.0 * np.eye(2))

    def test_unknown_numerator(self):
        with pytest.raises(NotImplementedError):
            oracle_capacity(isotropic_truth(), numerator="hull")

    def test_synthetic_teacher_truth(self):
        spec = SyntheticTeacherSpec(latent_dim=3, ambient_dim=8, n_classes=5, samples_per_class=4,
                                    between_scale=1.0, within_scale=0.01)
        truth = generate_synthetic_teacher(spec).ground_truth
        # sqrt(det(I) / det(0.01 I)) in three dimensions
        assert oracle_capacity(truth, far=0.01, shannon_pairing=True).capacity == pytest.approx(1e3, rel=1e-9)
        enclosing = oracle_capacity(truth, far=0.01, numerator="enclosing", shannon_pairing=True)
        assert enclosing.capacity == pytest.approx(101.0 ** 1.5, rel=1e-9)

    def test_does_not_depend_on_the_lift(self):
        spec = SyntheticTeacherSpec(latent_dim=3, ambient_dim=8, n_classes=5, samples_per_class=4)
        a = generate_synthetic_teacher(spec).ground_truth
        b = generate_synthetic_teacher(SyntheticTeacherSpec(latent_dim=3, ambient_dim=8, n_classes=5,
                                                            samples_per_class=4, lift_seed=11)).ground_truth
        assert oracle_capacity(a).log_capacity == oracle_capacity(b).log_capacity
