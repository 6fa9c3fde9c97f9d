import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from factorial.core.combinatorics import SubsetIndex, enumerate_subsets
from factorial.core.design import DesignMatrix, Dosage
from factorial.core.errors import ParameterError
from factorial.core.estimation import EstimationResult, truncated_ols

logger = logging.getLogger(__name__)


def passive_dosage(p: int) -> Dosage:
    """The half dosage (1/2, ..., 1/2), near-optimal for every interaction order"""
    if p < 1:
        raise ParameterError(f"p must be at least 1, got {p}")
    return Dosage.half(p)


def constrained_passive_dosage(p: int, L: float, k: int = 1) -> Dosage:
    """
    Uniform dosage L/p under the supply constraint sum_i d_i <= L.

    Proven optimal for additive models (k = 1) and conjectured for k > 1.
    When L >= p/2 the half dosage is feasible and returned instead.

    Args:
        p: number of treatments
        L: supply budget, must be positive
        k: interaction order of the model being designed for
    """
    if L <= 0:
        raise ParameterError(f"supply budget L must be positive, got {L}")
    if L >= p / 2:
        return passive_dosage(p)
    if k > 1:
        logger.debug(f"Uniform L/p dosage for k={k} relies on the conjectured extension beyond additive models")
    return Dosage.uniform(p, L / p)


def min_eig_additive_uniform(p: int, L: float) -> float:
    """
    Closed-form smallest eigenvalue of Sigma(d) for k = 1 and d_i = L/p.

    With c = 1 - (2L/p - 1)^2 and b = c + 1 + p(1 - c), the smallest root of
    lambda^2 - b lambda + c = 0. Budgets above p/2 are clamped to p/2.
    """
    if L <= 0:
        raise ParameterError(f"supply budget L must be positive, got {L}")
    L = min(L, p / 2)
    c = 1.0 - (2.0 * L / p - 1.0) ** 2
    b = c + 1.0 + p * (1.0 - c)
    return 0.5 * (b - math.sqrt(max(b * b - 4.0 * c, 0.0)))


@dataclass(frozen=True)
class CardinalityDesign:
    """
    Half dosage restricted to a treatment subset D, zero elsewhere.

    Attributes:
        dosage: d_i = 1/2 for i in D, 0 otherwise
        index: the full SubsetIndex
        support: sorted members of D
        reduced_columns: full-index columns of the subsets S contained in D
        gamma: len(reduced_columns) x K matrix with X = X_D @ gamma
    """

    dosage: Dosage
    index: SubsetIndex
    support: Tuple[int, ...]
    reduced_columns: np.ndarray
    gamma: np.ndarray


def cardinality_design(
    p: int,
    k: int,
    D: Iterable[int],
    L: Optional[int] = None,
) -> CardinalityDesign:
    """
    Design for the limited-cardinality setting ||d||_0 <= L.

    Every full column S equals (-1)^{|S \\ D|} times the column S & D, because
    treatments outside D are never applied.
    """
    support = tuple(sorted(set(int(i) for i in D)))
    if not support:
        raise ParameterError("the treatment subset D must be nonempty")
    if support[0] < 1 or support[-1] > p:
        raise ParameterError(f"D must be a subset of 1..{p}, got {support}")
    if L is not None and len(support) > L:
        raise ParameterError(f"|D| = {len(support)} exceeds the cardinality limit L = {L}")

    index = enumerate_subsets(p, k)
    d_mask = 0
    for member in support:
        d_mask |= 1 << (member - 1)

    reduced_columns = np.array([j for j, mask in enumerate(index.masks) if mask & ~d_mask == 0], dtype=np.int64)
    position = {int(j): r for r, j in enumerate(reduced_columns)}
    gamma = np.zeros((reduced_columns.size, index.K))
    for j, mask in enumerate(index.masks):
        outside = bin(mask & ~d_mask).count("1")
        gamma[position[index.index_of_mask(mask & d_mask)], j] = (-1.0) ** outside

    d = np.zeros(p)
    d[[m - 1 for m in support]] = 0.5
    return CardinalityDesign(
        dosage=Dosage(d),
        index=index,
        support=support,
        reduced_columns=reduced_columns,
        gamma=gamma,
    )


def reduced_truncated_ols(
    X: Union[DesignMatrix, np.ndarray],
    Y: np.ndarray,
    design: CardinalityDesign,
    B: float,
    sigma: float,
) -> EstimationResult:
    """
    Truncated OLS on the columns S contained in D, expanded back to the full index.

    Estimates Gamma_D beta: coefficients of subsets inside D absorb the signed
    contributions of the columns they alias.
    """
    features = X.features if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)
    reduced = truncated_ols(features[:, design.reduced_columns], Y, B, sigma)
    beta_hat = np.zeros(design.index.K)
    beta_hat[design.reduced_columns] = reduced.beta_hat
    return EstimationResult(
        beta_hat=beta_hat,
        branch=reduced.branch,
        eigen_sum=reduced.eigen_sum,
        lambda_min=reduced.lambda_min,
    )
