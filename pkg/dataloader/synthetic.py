import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from diffusers.utils import logging

from dataloader.dataset_class import EmbeddingSet, write_embeddings
from utils.errors import ValidationError
from utils.stats_utils import GaussianModel, random_rotation

logger = logging.get_logger(__name__)  # pylint: disable=invalid-name

TOY_POPULATION_COV = [[10.34, 0.71], [0.71, 11.79]]
TOY_MAX_CLASS_COV = [[4.18, 0.97], [0.97, 5.86]]
HELDOUT_SEED_OFFSET = 1000003


def _check_psd(name, cov, dim=None):
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or (dim is not None and cov.shape[0] != dim):
        raise ValidationError(f"{name} must be a square matrix of size {dim}, got shape {cov.shape}.")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-12):
        raise ValidationError(f"{name} must be symmetric.")
    if np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, float(np.abs(cov).max())):
        raise ValidationError(f"{name} must be positive semi-definite.")
    return cov


def _check_jitter(jitter):
    if len(jitter) != 2 or not 0 < jitter[0] <= jitter[1]:
        raise ValidationError(f"class_cov_jitter must be a range [lo, hi] with 0 < lo <= hi, got {list(jitter)}.")


def label_for(c):
    return f"{c:04d}"


@dataclass
class ToySpec:
    '''
    Two-dimensional toy population. The class template is the largest class covariance divided by the
    top of the jitter range, so the largest jittered class sits near TOY_MAX_CLASS_COV in area.
    '''
    population_cov: List[List[float]] = field(default_factory=lambda: [list(r) for r in TOY_POPULATION_COV])
    class_cov_template: List[List[float]] = field(
        default_factory=lambda: [[v / 1.5 for v in row] for row in TOY_MAX_CLASS_COV])
    n_classes: int = 100
    samples_per_class: int = 100
    seed: int = 0
    class_cov_jitter: List[float] = field(default_factory=lambda: [0.5, 1.5])
    rotate_classes: bool = True

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValidationError(f"The toy needs at least 2 classes, got {self.n_classes}.")
        if self.samples_per_class < 1:
            raise ValidationError(f"samples_per_class must be positive, got {self.samples_per_class}.")
        _check_psd("population_cov", self.population_cov, 2)
        _check_psd("class_cov_template", self.class_cov_template, 2)
        _check_jitter(self.class_cov_jitter)


@dataclass
class LiftSpec:
    '''
    gain: slope of the squashing, tanh(gain * a) / gain; small gains keep the lift close to an isometry
    offset: distance of the lifted cloud from the origin in units of its RMS radius; after unit
        normalization the cloud covers a cap of angular radius about atan(1 / offset)
    '''
    kind: str = "tanh"  # 'tanh' or 'identity'
    gain: float = 0.1
    offset: float = 8.0
    normalize: bool = True


@dataclass
class SyntheticTeacherSpec:
    '''
    Latent m-dim Gaussian classes lifted into a p-dim "teacher" space.
    Missing covariances default to between_scale * I and within_scale * I.
    `seed` draws the identities and their samples, `lift_seed` the lift: two draws that differ only in
    `seed` are different people seen by the same teacher.
    '''
    latent_dim: int = 8
    ambient_dim: int = 64
    n_classes: int = 100
    samples_per_class: int = 50
    between_class_cov: Optional[List[List[float]]] = None
    within_class_cov: Optional[List[List[float]]] = None
    between_scale: float = 1.0
    within_scale: float = 0.05
    class_cov_jitter: List[float] = field(default_factory=lambda: [1.0, 1.0])
    lift: LiftSpec = field(default_factory=LiftSpec)
    seed: int = 0
    lift_seed: int = 0

    def __post_init__(self):
        if isinstance(self.lift, dict):
            self.lift = LiftSpec(**self.lift)
        if self.lift.kind == "identity":
            if self.latent_dim != self.ambient_dim:
                raise ValidationError("The identity lift needs latent_dim == ambient_dim.")
        elif self.lift.kind == "tanh":
            if not self.latent_dim < self.ambient_dim:
                raise ValidationError(f"latent_dim {self.latent_dim} must be smaller than ambient_dim {self.ambient_dim}.")
        else:
            raise ValidationError(f"Lift kind must be 'tanh' or 'identity', got {self.lift.kind}.")
        if not self.lift.gain > 0 or self.lift.offset < 0:
            raise ValidationError(f"Lift gain must be positive and offset non-negative, got {self.lift.gain}, {self.lift.offset}.")
        if self.latent_dim < 1 or self.n_classes < 2 or self.samples_per_class < 1:
            raise ValidationError("latent_dim, samples_per_class must be positive and n_classes at least 2.")
        _check_psd("between_class_cov", self.between_cov(), self.latent_dim)
        _check_psd("within_class_cov", self.within_cov(), self.latent_dim)
        _check_jitter(self.class_cov_jitter)

    def between_cov(self):
        if self.between_class_cov is not None:
            return np.asarray(self.between_class_cov, dtype=np.float64)
        return self.between_scale * np.eye(self.latent_dim)

    def within_cov(self):
        if self.within_class_cov is not None:
            return np.asarray(self.within_class_cov, dtype=np.float64)
        return self.within_scale * np.eye(self.latent_dim)


@dataclass(eq=False)
class LatentGroundTruth:
    between_cov: np.ndarray
    centers: Dict[str, np.ndarray]
    class_covs: Dict[str, np.ndarray]
    samples_per_class: int

    def to_dict(self):
        return {
            "between_cov": self.between_cov.tolist(),
            "samples_per_class": self.samples_per_class,
            "centers": {k: v.tolist() for k, v in self.centers.items()},
            "class_covs": {k: v.tolist() for k, v in self.class_covs.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            between_cov=np.asarray(d["between_cov"], dtype=np.float64),
            centers={k: np.asarray(v, dtype=np.float64) for k, v in d["centers"].items()},
            class_covs={k: np.asarray(v, dtype=np.float64) for k, v in d["class_covs"].items()},
            samples_per_class=int(d["samples_per_class"]),
        )


@dataclass(eq=False)
class ToyData:
    samples: EmbeddingSet
    population: GaussianModel
    classes: Dict[str, GaussianModel]


@dataclass(eq=False)
class SyntheticTeacherData:
    embeddings: EmbeddingSet
    latent: EmbeddingSet
    ground_truth: LatentGroundTruth
    lift: "SyntheticLift"


def _class_streams(seed, n_classes):
    # stream 0 draws the centers, stream c + 1 everything belonging to class c
    children = np.random.SeedSequence(int(seed)).spawn(n_classes + 1)
    return [np.random.default_rng(s) for s in children]


def _jittered_cov(template, jitter, rotate, rng):
    cov = rng.uniform(jitter[0], jitter[1]) * template if jitter[0] < jitter[1] else jitter[0] * template
    if rotate:
        rot = random_rotation(template.shape[0], rng)
        cov = rot @ cov @ rot.T
    return 0.5 * (cov + cov.T)


def _sample_classes(between, template, n_classes, samples_per_class, jitter, rotate, seed):
    streams = _class_streams(seed, n_classes)
    dim = between.shape[0]
    centers = streams[0].multivariate_normal(np.zeros(dim), between, size=n_classes, method="eigh")
    labels, samples, class_covs, class_centers = [], [], {}, {}
    for c in range(n_classes):
        rng = streams[c + 1]
        cov = _jittered_cov(template, jitter, rotate, rng)
        label = label_for(c)
        samples.append(rng.multivariate_normal(centers[c], cov, size=samples_per_class, method="eigh"))
        labels.extend([label] * samples_per_class)
        class_covs[label] = cov
        class_centers[label] = centers[c]
    return np.asarray(labels), np.concatenate(samples), class_centers, class_covs


def generate_toy(spec: ToySpec = None) -> ToyData:
    spec = spec if spec is not None else ToySpec()
    pop_cov = np.asarray(spec.population_cov, dtype=np.float64)
    template = np.asarray(spec.class_cov_template, dtype=np.float64)
    labels, samples, centers, covs = _sample_classes(pop_cov, template, spec.n_classes, spec.samples_per_class,
                                                     spec.class_cov_jitter, spec.rotate_classes, spec.seed)
    classes = {label: GaussianModel(centers[label], covs[label]) for label in centers}
    return ToyData(EmbeddingSet(labels, samples), GaussianModel(np.zeros(2), pop_cov), classes)


class SyntheticLift:
    '''
    Smooth injective map from the latent space into the ambient space:
    random orthonormal expansion, elementwise tanh, a constant offset along an extra orthogonal
    direction (keeps vectors away from the origin), then optional unit normalization.
    '''

    def __init__(self, spec: SyntheticTeacherSpec, rng: np.random.Generator):
        self.kind = spec.lift.kind
        self.gain = spec.lift.gain
        self.offset = spec.lift.offset
        self.normalize = spec.lift.normalize
        m, p = spec.latent_dim, spec.ambient_dim
        if self.kind == "identity":
            self.frame = np.eye(p)
            self.scale = 1.0
            return
        frame = random_rotation(p, rng)
        self.frame = frame[:, :m]
        self.offset_direction = frame[:, m]
        # unit variance per ambient coordinate before the squashing, so the RMS radius is sqrt(p)
        total = np.trace(spec.between_cov() + spec.within_cov())
        self.scale = float(np.sqrt(max(total, 1e-12) / p))
        self.offset = self.offset * np.sqrt(p)

    def __call__(self, latent):
        latent = np.asarray(latent, dtype=np.float64)
        if self.kind == "identity":
            return latent.copy()
        a = latent @ self.frame.T / self.scale
        ambient = np.tanh(self.gain * a) / self.gain + self.offset * self.offset_direction
        if self.normalize:
            ambient = ambient / np.linalg.norm(ambient, axis=-1, keepdims=True)
        return ambient


def generate_synthetic_teacher(spec: SyntheticTeacherSpec = None) -> SyntheticTeacherData:
    spec = spec if spec is not None else SyntheticTeacherSpec()
    between = spec.between_cov()
    labels, latent, centers, covs = _sample_classes(between, spec.within_cov(), spec.n_classes, spec.samples_per_class,
                                                    spec.class_cov_jitter, False, spec.seed)
    lift = SyntheticLift(spec, np.random.default_rng(np.random.SeedSequence(int(spec.lift_seed))))
    ground_truth = LatentGroundTruth(between, centers, covs, spec.samples_per_class)
    logger.info(f"Synthetic teacher: {spec.n_classes} classes x {spec.samples_per_class} samples, "
                f"latent {spec.latent_dim} -> ambient {spec.ambient_dim} ({spec.lift.kind} lift).")
    return SyntheticTeacherData(EmbeddingSet(labels, lift(latent)), EmbeddingSet(labels, latent), ground_truth, lift)


def heldout_spec(spec: SyntheticTeacherSpec, offset=HELDOUT_SEED_OFFSET) -> SyntheticTeacherSpec:
    '''Fresh identities and samples behind the same lift.'''
    return replace(spec, seed=int(spec.seed) + int(offset))


def sidecar_path(path):
    root, _ = os.path.splitext(path)
    return root + ".truth.json"


def write_synthetic_teacher(data: SyntheticTeacherData, path, spec: SyntheticTeacherSpec = None):
    write_embeddings(data.embeddings, path)
    sidecar = {"ground_truth": data.ground_truth.to_dict()}
    if spec is not None:
        sidecar["spec"] = asdict(spec)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
    return sidecar_path(path)


def read_ground_truth(path) -> LatentGroundTruth:
    with open(path, "r", encoding="utf-8") as f:
        return LatentGroundTruth.from_dict(json.load(f)["ground_truth"])
