import os
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from diffusers.utils import BaseOutput
from scipy import stats

parent_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(parent_dir)
from dataloader.dataset_class import EmbeddingSet
from utils.errors import InsufficientClasses, InsufficientSamples, InvalidProbability

DEFAULT_FAR_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class VerificationPairs(BaseOutput):
    genuine_i: np.ndarray
    genuine_j: np.ndarray
    impostor_i: np.ndarray
    impostor_j: np.ndarray


@dataclass
class VerificationOutput(BaseOutput):
    """
    Args:
        roc (`pd.DataFrame`): columns far, tar, threshold; one row per requested FAR.
        genuine_scores, impostor_scores (`np.ndarray`): squared Euclidean distances.
        pairs (`VerificationPairs`): the sampled pair indices, reusable on other embeddings of the same records.
    """

    roc: pd.DataFrame
    genuine_scores: np.ndarray
    impostor_scores: np.ndarray
    pairs: VerificationPairs


def sample_verification_pairs(labels, pair_count, rng: np.random.Generator) -> VerificationPairs:
    '''
    pair_count genuine pairs (same label, distinct records) and pair_count impostor pairs (different labels).
    '''
    labels = np.asarray(labels)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise InsufficientClasses(f"Verification needs at least 2 classes, got {len(classes)}.")
    eligible = np.flatnonzero(counts[inverse] >= 2)
    if len(eligible) == 0:
        raise InsufficientSamples("Verification needs at least one class with 2 or more records.")

    members = [np.flatnonzero(inverse == c) for c in range(len(classes))]
    genuine_i = rng.choice(eligible, size=pair_count)
    genuine_j = np.empty_like(genuine_i)
    for k, i in enumerate(genuine_i):
        others = members[inverse[i]]
        pick = rng.integers(0, len(others) - 1)
        candidate = others[pick]
        genuine_j[k] = candidate if candidate != i else others[-1]

    impostor_i = rng.integers(0, len(labels), size=pair_count)
    impostor_j = rng.integers(0, len(labels), size=pair_count)
    clash = inverse[impostor_i] == inverse[impostor_j]
    while clash.any():
        impostor_j[clash] = rng.integers(0, len(labels), size=int(clash.sum()))
        clash = inverse[impostor_i] == inverse[impostor_j]
    return VerificationPairs(genuine_i, genuine_j, impostor_i, impostor_j)


def pair_scores(vectors, i, j):
    diff = vectors[i] - vectors[j]
    return np.einsum("ij,ij->i", diff, diff)


def tar_at_far(genuine_scores, impostor_scores, far_grid: Sequence[float]) -> pd.DataFrame:
    '''
    Distance scores, accept when score <= threshold; the threshold is the impostor-score quantile at each FAR.
    '''
    far_grid = np.asarray(sorted(float(q) for q in far_grid))
    if np.any((far_grid <= 0) | (far_grid >= 1)):
        raise InvalidProbability(f"Every FAR must lie in (0, 1), got {far_grid.tolist()}.")
    thresholds = np.quantile(impostor_scores, far_grid)
    tar = np.array([(genuine_scores <= t).mean() for t in thresholds])
    return pd.DataFrame({"far": far_grid, "tar": tar, "threshold": thresholds})


def verification_eval(embeddings: EmbeddingSet, pair_count=10000, far_grid=DEFAULT_FAR_GRID, seed=0,
                      pairs: Optional[VerificationPairs] = None) -> VerificationOutput:
    if pairs is None:
        pairs = sample_verification_pairs(embeddings.labels, pair_count, np.random.default_rng(seed))
    genuine = pair_scores(embeddings.vectors, pairs.genuine_i, pairs.genuine_j)
    impostor = pair_scores(embeddings.vectors, pairs.impostor_i, pairs.impostor_j)
    return VerificationOutput(roc=tar_at_far(genuine, impostor, far_grid), genuine_scores=genuine,
                              impostor_scores=impostor, pairs=pairs)


def score_correlation(vectors_a, vectors_b, i, j):
    '''Spearman rank correlation of pairwise squared distances under two embeddings of the same records.'''
    rho = stats.spearmanr(pair_scores(np.asarray(vectors_a), i, j), pair_scores(np.asarray(vectors_b), i, j))[0]
    return float(rho)


def compare_roc(teacher: EmbeddingSet, student: EmbeddingSet, pair_count=10000, far_grid=DEFAULT_FAR_GRID, seed=0):
    '''
    TAR@FAR of two embeddings of the same records on shared pairs, plus the score rank correlation.
    Returns (roc frame with far, tar_teacher, tar_student; spearman).
    '''
    ref = verification_eval(teacher, pair_count, far_grid, seed)
    other = verification_eval(student, far_grid=far_grid, pairs=ref.pairs)
    roc = pd.DataFrame({"far": ref.roc["far"], "tar_teacher": ref.roc["tar"], "tar_student": other.roc["tar"]})
    scores_a = np.concatenate([ref.genuine_scores, ref.impostor_scores])
    scores_b = np.concatenate([other.genuine_scores, other.impostor_scores])
    return roc, float(stats.spearmanr(scores_a, scores_b)[0])
