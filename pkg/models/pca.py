from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from utils.errors import DimensionMismatch, InsufficientSamples, InvalidTargetDim


@dataclass(eq=False)
class LinearProjector:
    '''
    Linear projection y = V^T (x - mean), the principal-component baseline of the learned projector.

    components: (p, m) orthonormal columns ordered by decreasing variance
    mean: (p,)
    explained_variance: (m,) biased variances along each component
    '''
    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray

    @property
    def in_features(self):
        return self.components.shape[0]

    @property
    def out_features(self):
        return self.components.shape[1]

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_features:
            raise DimensionMismatch(f"Input width {x.shape[-1]} does not match projector input {self.in_features}.")
        return x

    def project(self, x):
        x = self._check(x)
        return (x - self.mean) @ self.components

    def reconstruct(self, y):
        y = np.asarray(y, dtype=np.float64)
        return y @ self.components.T + self.mean


def fit_pca(data, m) -> LinearProjector:
    '''
    data: EmbeddingSet or (N, p) array
    '''
    x = np.asarray(getattr(data, "vectors", data), dtype=np.float64)
    n, p = x.shape
    if m < 1 or m > p:
        raise InvalidTargetDim(f"PCA target dimension must lie in [1, {p}], got {m}.")
    if n < m + 1:
        raise InsufficientSamples(f"PCA to {m} dimensions needs at least {m + 1} samples, got {n}.")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = la.eigh(0.5 * (cov + cov.T))
    order = np.argsort(eigvals)[::-1][:m]
    components = eigvecs[:, order]
    # deterministic sign: largest-magnitude loading of each component is positive
    signs = np.sign(components[np.abs(components).argmax(axis=0), np.arange(m)])
    signs[signs == 0] = 1.0
    return LinearProjector(components * signs, mean, np.clip(eigvals[order], 0.0, None))
