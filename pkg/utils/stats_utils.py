import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as la
from scipy import special

from .errors import DimensionMismatch, InsufficientSamples, InvalidProbability, NotPositiveDefinite, ValidationError

JITTER_LADDER = (1e-12, 1e-10, 1e-8, 1e-6)
CHI2_TOL = 1e-12
CHI2_MAX_ITER = 200


class Parameterization(str, enum.Enum):
    """Support shape of a fitted hyper-ellipsoid."""
    ISOTROPIC = "sphere"
    AXIS_ALIGNED = "axis"
    FULL_ELLIPSOID = "full"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {
            "isotropic": cls.ISOTROPIC,
            "axisaligned": cls.AXIS_ALIGNED,
            "axis_aligned": cls.AXIS_ALIGNED,
            "diagonal": cls.AXIS_ALIGNED,
            "fullellipsoid": cls.FULL_ELLIPSOID,
            "full_ellipsoid": cls.FULL_ELLIPSOID,
        }
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"Unknown parameterization: {value}.") from None


def reduce_covariance(cov, param: Union[Parameterization, str] = Parameterization.FULL_ELLIPSOID):
    '''
    Project a covariance onto a parameterization.
    Isotropic keeps trace/d on the diagonal, axis-aligned keeps the diagonal, full keeps everything.
    '''
    param = Parameterization.parse(param)
    cov = np.asarray(cov, dtype=np.float64)
    if param is Parameterization.FULL_ELLIPSOID:
        return 0.5 * (cov + cov.T)
    if param is Parameterization.AXIS_ALIGNED:
        return np.diag(np.diag(cov))
    d = cov.shape[0]
    return np.eye(d) * (np.trace(cov) / d)


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    lower: np.ndarray
    log_det: float
    jitter: float = 0.0

    @property
    def dim(self):
        return self.lower.shape[0]

    def solve_lower(self, b):
        return la.solve_triangular(self.lower, b, lower=True, check_finite=False)


def cholesky_logdet(cov) -> CholeskyFactor:
    '''
    Lower Cholesky factor and log-determinant of a symmetric PSD matrix.
    Escalating diagonal jitter (scaled by the mean diagonal) is added when the plain factorization fails.
    '''
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"Expected a square matrix, got shape {cov.shape}.")
    cov = 0.5 * (cov + cov.T)

    try:
        lower = la.cholesky(cov, lower=True, check_finite=True)
        if np.all(np.diag(lower) > 0):
            return CholeskyFactor(lower, 2.0 * float(np.log(np.diag(lower)).sum()), 0.0)
    except la.LinAlgError:
        pass
    except ValueError as err:
        raise NotPositiveDefinite(f"Covariance contains non-finite entries: {err}") from err

    scale = float(np.mean(np.diag(cov)))
    if not scale > 0:
        # all-zero diagonal, jitter on an absolute scale
        scale = 1.0
    di = np.diag_indices_from(cov)
    for jit in JITTER_LADDER:
        cov_jit = cov.copy()
        cov_jit[di] += scale * jit
        try:
            lower = la.cholesky(cov_jit, lower=True)
        except la.LinAlgError:
            continue
        if np.all(np.diag(lower) > 0):
            return CholeskyFactor(lower, 2.0 * float(np.log(np.diag(lower)).sum()), scale * jit)

    raise NotPositiveDefinite(
        f"Covariance of dimension {cov.shape[0]} is not positive definite after jitter {scale * JITTER_LADDER[-1]:.3e}."
    )


@dataclass(frozen=True, eq=False)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    parameterization: Parameterization = Parameterization.FULL_ELLIPSOID
    jitter: float = field(default=0.0, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"Mean of length {mean.shape[0]} does not match covariance of shape {cov.shape}.")
        param = Parameterization.parse(self.parameterization)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", reduce_covariance(cov, param))
        object.__setattr__(self, "parameterization", param)

    @property
    def dim(self):
        return self.mean.shape[0]

    @cached_property
    def factor(self) -> CholeskyFactor:
        return cholesky_logdet(self.covariance)

    @property
    def log_det(self):
        return self.factor.log_det

    def reduced(self, param):
        return GaussianModel(self.mean, self.covariance, param)


def estimate_gaussian(samples, param=Parameterization.FULL_ELLIPSOID) -> GaussianModel:
    '''
    Fit a Gaussian with the biased (1/N) sample covariance, reduced to `param`.
    Degenerate covariances are jittered onto the PSD cone with the same ladder as `cholesky_logdet`.
    '''
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        x = samples.astype(np.float64, copy=False)
    else:
        rows = [np.asarray(s, dtype=np.float64).reshape(-1) for s in samples]
        if len({r.shape[0] for r in rows}) > 1:
            raise DimensionMismatch("All samples must share the same dimension.")
        x = np.stack(rows) if rows else np.empty((0, 0))
    if x.shape[0] < 2:
        raise InsufficientSamples(f"Need at least 2 samples to estimate a Gaussian, got {x.shape[0]}.")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = reduce_covariance(centered.T @ centered / x.shape[0], param)
    factor = cholesky_logdet(cov)
    if factor.jitter > 0:
        cov = cov + factor.jitter * np.eye(cov.shape[0])
    return GaussianModel(mean, cov, param, jitter=factor.jitter)


def mahalanobis_sq(x, g: GaussianModel) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != g.dim:
        raise DimensionMismatch(f"Vector of length {x.shape[0]} does not match Gaussian of dimension {g.dim}.")
    z = g.factor.solve_lower(x - g.mean)
    return float(z @ z)


def _check_dof(d):
    if int(d) != d or d < 1:
        raise ValidationError(f"Degrees of freedom must be a positive integer, got {d}.")
    return int(d)


def chi2_cdf(r2, d):
    """Regularized lower incomplete gamma P(d/2, r2/2)."""
    d = _check_dof(d)
    r2 = np.asarray(r2, dtype=np.float64)
    if np.any(r2 < 0):
        raise ValidationError("chi2_cdf is only defined for r2 >= 0.")
    out = special.gammainc(0.5 * d, 0.5 * r2)
    return float(out) if out.ndim == 0 else out


def chi2_sf(r2, d):
    d = _check_dof(d)
    out = special.gammaincc(0.5 * d, 0.5 * np.asarray(r2, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def chi2_logpdf(r2, d):
    a = 0.5 * d
    return (a - 1.0) * np.log(r2) - 0.5 * r2 - a * np.log(2.0) - special.gammaln(a)


def _refine_quantile(target, d, x0, upper):
    '''
    Bracketed Newton iteration on the chi-squared CDF (or survival function when `upper`),
    falling back to bisection whenever a Newton step leaves the bracket.
    '''
    func = chi2_sf if upper else chi2_cdf
    sign = -1.0 if upper else 1.0

    def residual(x):
        return sign * (func(x, d) - target)

    lo, hi = 0.0, max(x0, 1.0)
    while residual(hi) < 0:
        lo, hi = hi, 2.0 * hi
    x = x0 if lo <= x0 <= hi else 0.5 * (lo + hi)

    for _ in range(CHI2_MAX_ITER):
        f = residual(x)
        if abs(f) <= CHI2_TOL * max(target, 1e-300) or hi - lo <= 1e-15 * max(hi, 1e-300):
            break
        if f < 0:
            lo = x
        else:
            hi = x
        pdf = np.exp(chi2_logpdf(x, d)) if x > 0 else 0.0
        step = f / pdf if pdf > 0 else np.inf
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        x = x_new
    return float(x)


def chi2_inverse_cdf(p, d):
    '''
    Quantile of the chi-squared distribution with d degrees of freedom.
    Started from scipy's inverse incomplete gamma, then polished by bracketed Newton.
    '''
    d = _check_dof(d)
    if not 0.0 < p < 1.0:
        raise InvalidProbability(f"Probability must lie in (0, 1), got {p}.")
    x0 = 2.0 * float(special.gammaincinv(0.5 * d, p))
    if x0 == 0.0:
        return 0.0
    return _refine_quantile(p, d, x0, upper=False)


def chi2_inverse_sf(q, d):
    """Same quantile as chi2_inverse_cdf(1 - q, d), computed on the upper tail to keep precision for tiny q."""
    d = _check_dof(d)
    if not 0.0 < q < 1.0:
        raise InvalidProbability(f"Probability must lie in (0, 1), got {q}.")
    x0 = 2.0 * float(special.gammainccinv(0.5 * d, q))
    if x0 == 0.0:
        return 0.0
    return _refine_quantile(q, d, x0, upper=True)


def log_unit_ball_volume(d):
    return 0.5 * d * np.log(np.pi) - special.gammaln(0.5 * d + 1.0)


def ellipsoid_log_volume(g: GaussianModel, r) -> float:
    """log of V_d |Sigma|^(1/2) r^d."""
    if not r > 0:
        raise ValidationError(f"Radius must be positive, got {r}.")
    d = g.dim
    return float(log_unit_ball_volume(d) + 0.5 * g.log_det + d * np.log(r))


def random_rotation(d, rng: Optional[np.random.Generator] = None):
    """Haar-distributed orthogonal matrix."""
    rng = np.random.default_rng() if rng is None else rng
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def as_matrix(rows: Sequence[Sequence[float]]):
    return np.asarray(rows, dtype=np.float64)
