import os
import sys
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader, Dataset, random_split

parent_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(parent_dir)
from utils.errors import DimensionMismatch, InsufficientSamples, ValidationError

LABEL_COLUMN = "label"


@dataclass(eq=False)
class EmbeddingSet:
    '''
    Labeled collection of fixed-width real vectors.

    labels: (N,) identity-class ids, non-empty strings
    vectors: (N, dim) float64
    '''
    labels: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim == 1:
            vectors = vectors[None, :]
        labels = np.asarray([str(l) for l in np.asarray(self.labels).reshape(-1)], dtype=object)
        if len(labels) == 0 or vectors.shape[0] == 0:
            raise InsufficientSamples("An embedding set needs at least one record.")
        if vectors.ndim != 2 or vectors.shape[0] != len(labels):
            raise DimensionMismatch(f"{len(labels)} labels do not match vectors of shape {vectors.shape}.")
        if vectors.shape[1] < 1:
            raise DimensionMismatch("Embedding vectors must have at least one component.")
        if any(len(l) == 0 for l in labels):
            raise ValidationError("Embedding labels must be non-empty strings.")
        self.labels = labels
        self.vectors = vectors

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def classes(self):
        return sorted(set(self.labels))

    def indices_by_class(self) -> Dict[str, np.ndarray]:
        groups = pd.Series(np.arange(len(self)), dtype=np.int64).groupby(pd.Series(self.labels)).indices
        return {label: np.asarray(groups[label], dtype=np.int64) for label in sorted(groups)}

    def subset(self, idx):
        idx = np.asarray(idx)
        return EmbeddingSet(self.labels[idx], self.vectors[idx])

    def with_vectors(self, vectors):
        '''Same records, new vectors (e.g. projected targets).'''
        return EmbeddingSet(self.labels.copy(), vectors)

    def shuffled_labels(self, rng: np.random.Generator):
        return EmbeddingSet(rng.permutation(self.labels), self.vectors.copy())

    def to_frame(self):
        frame = pd.DataFrame(self.vectors, columns=[f"f{i}" for i in range(self.dim)])
        frame.insert(0, LABEL_COLUMN, self.labels)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame):
        expected = [LABEL_COLUMN] + [f"f{i}" for i in range(frame.shape[1] - 1)]
        if list(frame.columns) != expected:
            raise ValidationError(f"Embedding header must be 'label,f0,...,f{frame.shape[1] - 2}', "
                                  f"got {','.join(map(str, frame.columns))}.")
        if frame[LABEL_COLUMN].isna().any():
            raise ValidationError("Embedding labels must be non-empty strings.")
        try:
            vectors = frame.iloc[:, 1:].to_numpy(dtype=np.float64)
        except ValueError as err:
            raise ValidationError(f"Embedding values must be decimal floats: {err}") from err
        if np.isnan(vectors).any():
            raise ValidationError("Embedding table has missing values.")
        return cls(frame[LABEL_COLUMN].to_numpy(), vectors)


def read_embeddings(path) -> EmbeddingSet:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Embedding file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={LABEL_COLUMN: str}, keep_default_na=False, na_values=[""],
                            float_precision="round_trip", encoding="utf-8")
    except pd.errors.ParserError as err:
        raise ValidationError(f"Could not parse embedding file {path}: {err}") from err
    return EmbeddingSet.from_frame(frame)


def write_embeddings(data: EmbeddingSet, path):
    # 17 significant digits round-trip float64 exactly
    data.to_frame().to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def sample_pairs(indices, n_pairs, rng: np.random.Generator):
    '''
    Uniform random pairs (i, j), i != j, drawn from `indices`.
    '''
    indices = np.asarray(indices)
    n = len(indices)
    if n < 2:
        raise InsufficientSamples(f"Need at least 2 records to form pairs, got {n}.")
    first = rng.integers(0, n, size=n_pairs)
    second = rng.integers(0, n - 1, size=n_pairs)
    second = second + (second >= first)
    return indices[first], indices[second]


def split_records(n, val_fraction, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = min(max(2, int(round(val_fraction * n))), n - 2)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class TeacherTargetDataset(Dataset):
    def __init__(self, inputs, targets):
        """
        Args:
            inputs (numpy.ndarray): teacher embeddings, (N, p).
            targets (numpy.ndarray): teacher low-dimensional outputs, (N, m).
        """
        self.inputs = torch.as_tensor(np.asarray(inputs, dtype=np.float64))
        self.targets = torch.as_tensor(np.asarray(targets, dtype=np.float64))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionMismatch(f"{self.inputs.shape[0]} inputs do not match {self.targets.shape[0]} targets.")

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, idx):
        return self.inputs[idx], self.targets[idx]


def split_sizes(n, val_fraction):
    val_size = min(max(1, int(round(val_fraction * n))), n - 1)
    return [n - val_size, val_size]


def validation_indices(n, val_fraction, seed):
    '''
    Records held out by `teacher2dataloader` with a generator seeded by `seed`, i.e. the records a student
    trained with that seed never fitted.
    '''
    generator = torch.Generator(device="cpu").manual_seed(int(seed))
    _, val = random_split(range(n), split_sizes(n, val_fraction), generator=generator)
    return np.sort(np.asarray(val.indices, dtype=np.int64))


def teacher2dataloader(inputs, targets, batch_size, val_fraction=0.1, num_workers=0, generator=None, return_dataset=False):
    full_dataset = TeacherTargetDataset(inputs, targets)
    train_dataset, val_dataset = random_split(full_dataset, split_sizes(len(full_dataset), val_fraction),
                                              generator=generator)

    if return_dataset:
        return train_dataset, val_dataset

    train_loader = DataLoader(train_dataset, batch_size=batch_size, shuffle=True, num_workers=num_workers, generator=generator)
    val_loader = DataLoader(val_dataset, batch_size=batch_size, shuffle=False, num_workers=num_workers)

    return train_loader, val_loader
