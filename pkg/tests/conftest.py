import os
import sys

import numpy as np
import pytest
import torch

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from dataloader.dataset_class import EmbeddingSet
from models.student import StudentNetwork


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clustered(rng):
    '''Six classes of eight records on the unit sphere of R^12.'''
    centers = rng.standard_normal((6, 12))
    labels, vectors = [], []
    for c, center in enumerate(centers):
        points = center + 0.1 * rng.standard_normal((8, 12))
        vectors.append(points / np.linalg.norm(points, axis=1, keepdims=True))
        labels.extend([f"id{c}"] * 8)
    return EmbeddingSet(np.asarray(labels), np.concatenate(vectors))


@pytest.fixture
def tiny_student():
    torch.manual_seed(0)
    return StudentNetwork(in_dim=12, hidden_sizes=[16, 16], out_dim=3, dropout_rate=0.3, seed=7)
