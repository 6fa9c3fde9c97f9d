import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg

from config.settings import HarnessConfig
from factorial.core.design import DesignMatrix
from factorial.core.errors import ParameterError

logger = logging.getLogger(__name__)

SINGULAR_TOL = HarnessConfig.SINGULAR_TOL


class Branch(str, Enum):
    OLS = "ols"
    RIDGE = "ridge"
    NULL = "null"


@dataclass(frozen=True)
class EstimationResult:
    """
    Output of one estimator call.

    Attributes:
        beta_hat: estimated coefficients
        branch: which branch of the estimator produced beta_hat
        eigen_sum: sum_i 1 / lambda_i(X^T X), +inf when X^T X is singular
        lambda_min: smallest eigenvalue of X^T X
        ridge_penalty: ridge lambda when branch is ridge, else 0
    """

    beta_hat: np.ndarray
    branch: Branch
    eigen_sum: float
    lambda_min: float
    ridge_penalty: float = 0.0


@dataclass(frozen=True)
class _Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    moment: np.ndarray
    singular: bool

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def eigen_sum(self) -> float:
        return float("inf") if self.singular else float(np.sum(1.0 / self.eigenvalues))

    def solve(self, shift: float = 0.0) -> np.ndarray:
        """(X^T X + shift I)^{-1} X^T Y from the cached eigendecomposition"""
        V = self.eigenvectors
        return V @ ((V.T @ self.moment) / (self.eigenvalues + shift))


def _prepare(
    X: Union[DesignMatrix, np.ndarray],
    Y: np.ndarray,
    weights: Optional[np.ndarray],
) -> Tuple[np.ndarray, np.ndarray]:
    features = X.features if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1)
    if features.ndim != 2:
        raise ParameterError(f"design matrix must be 2-D, got shape {features.shape}")
    if features.shape[0] < 1:
        raise ParameterError("at least one observation is required")
    if features.shape[0] != Y.shape[0]:
        raise ParameterError(f"design has {features.shape[0]} rows but Y has {Y.shape[0]} entries")
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != Y.shape[0]:
            raise ParameterError(f"weights have {w.shape[0]} entries, expected {Y.shape[0]}")
        if np.any(w <= 0):
            raise ParameterError("weights must be positive")
        features = features * w[:, None]
        Y = Y * w
    return features, Y


def _decompose(features: np.ndarray, Y: np.ndarray) -> _Spectrum:
    gram = features.T @ features
    eigenvalues, eigenvectors = linalg.eigh(gram)
    threshold = SINGULAR_TOL * max(1.0, float(eigenvalues[-1]))
    return _Spectrum(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        moment=features.T @ Y,
        singular=bool(eigenvalues[0] < threshold),
    )


def _check_bounds(B: float, sigma: float) -> float:
    if B <= 0:
        raise ParameterError(f"B must be positive, got {B}")
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    return float("inf") if sigma == 0 else B ** 2 / sigma ** 2


def truncated_ols(
    X: Union[DesignMatrix, np.ndarray],
    Y: np.ndarray,
    B: float,
    sigma: float,
    weights: Optional[np.ndarray] = None,
) -> EstimationResult:
    """
    Truncated ordinary least squares.

    Returns the OLS solution when sum_i 1/lambda_i(X^T X) <= B^2 / sigma^2 and
    the zero vector otherwise. A numerically singular X^T X has an infinite
    eigen-sum and therefore always lands in the null branch.

    Args:
        X: n x K design (DesignMatrix or feature array)
        Y: n outcomes
        B: bound on ||beta||_2
        sigma: noise standard deviation; 0 disables truncation
        weights: optional per-row weights, e.g. 1/sigma_t for heteroskedastic rounds

    Returns:
        EstimationResult
    """
    threshold = _check_bounds(B, sigma)
    features, Y = _prepare(X, Y, weights)
    eig = _decompose(features, Y)

    if eig.singular or eig.eigen_sum > threshold:
        logger.debug(f"Truncated OLS fell back to zero (eigen_sum={eig.eigen_sum:.4g}, limit={threshold:.4g})")
        return EstimationResult(
            beta_hat=np.zeros(features.shape[1]),
            branch=Branch.NULL,
            eigen_sum=eig.eigen_sum,
            lambda_min=eig.lambda_min,
        )
    return EstimationResult(
        beta_hat=eig.solve(),
        branch=Branch.OLS,
        eigen_sum=eig.eigen_sum,
        lambda_min=eig.lambda_min,
    )


def ols_ridge(
    X: Union[DesignMatrix, np.ndarray],
    Y: np.ndarray,
    B: float,
    sigma: float,
    weights: Optional[np.ndarray] = None,
) -> EstimationResult:
    """
    OLS when the design is well conditioned, ridge regression otherwise.

    OLS is used when 1/lambda_min <= B^2 (tr/K) / (B^2 lambda_min + tr sigma^2),
    with tr = tr(X^T X) (equal to K n for unweighted +-1 features). Otherwise
    the ridge penalty is sigma^2 tr / (B^2 lambda_min). A singular X^T X sends
    the penalty to infinity, i.e. the zero vector.
    """
    _check_bounds(B, sigma)
    features, Y = _prepare(X, Y, weights)
    eig = _decompose(features, Y)
    K = features.shape[1]

    if eig.singular:
        return EstimationResult(
            beta_hat=np.zeros(K),
            branch=Branch.NULL,
            eigen_sum=eig.eigen_sum,
            lambda_min=eig.lambda_min,
            ridge_penalty=float("inf"),
        )

    lam_min = eig.lambda_min
    trace = float(np.sum(eig.eigenvalues))
    if 1.0 / lam_min <= B ** 2 * (trace / K) / (B ** 2 * lam_min + trace * sigma ** 2):
        return EstimationResult(
            beta_hat=eig.solve(),
            branch=Branch.OLS,
            eigen_sum=eig.eigen_sum,
            lambda_min=lam_min,
        )

    penalty = sigma ** 2 * trace / (B ** 2 * lam_min)
    return EstimationResult(
        beta_hat=eig.solve(shift=penalty),
        branch=Branch.RIDGE,
        eigen_sum=eig.eigen_sum,
        lambda_min=lam_min,
        ridge_penalty=penalty,
    )


def mse(beta_hat: np.ndarray, beta_true: np.ndarray) -> float:
    """Squared l2 error ||beta_hat - beta_true||^2"""
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    beta_true = np.asarray(beta_true, dtype=np.float64)
    if beta_hat.shape != beta_true.shape:
        raise ParameterError(f"shape mismatch: {beta_hat.shape} vs {beta_true.shape}")
    return float(np.sum((beta_hat - beta_true) ** 2))


def ols_error_bound(gram: np.ndarray, sigma: float) -> float:
    """sigma^2 sum_i 1/lambda_i(X^T X), the OLS-branch expected squared error"""
    eigenvalues = linalg.eigh(gram, eigvals_only=True)
    if eigenvalues[0] < SINGULAR_TOL * max(1.0, float(eigenvalues[-1])):
        return float("inf")
    return float(sigma ** 2 * np.sum(1.0 / eigenvalues))


def ridge_error_bound(gram: np.ndarray, B: float, sigma: float) -> float:
    """min(K sigma^2 / lambda_min, B^2 tr sigma^2 / (B^2 lambda_min^2 + tr sigma^2))"""
    eigenvalues = linalg.eigh(gram, eigvals_only=True)
    lam_min = max(float(eigenvalues[0]), 0.0)
    trace = float(np.sum(eigenvalues))
    K = gram.shape[0]
    ridge = B ** 2 * trace * sigma ** 2 / (B ** 2 * lam_min ** 2 + trace * sigma ** 2)
    ols = K * sigma ** 2 / lam_min if lam_min > 0 else float("inf")
    return float(min(ols, ridge))
