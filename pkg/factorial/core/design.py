import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from factorial.core.combinatorics import SubsetIndex, feature_matrix, full_cube
from factorial.core.errors import CapabilityError, ParameterError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
CLAMP_TOL = 1e-12

# Minimum-aberration resolution V generators: generated factor -> product of base factors.
RESOLUTION_V_GENERATORS: Dict[int, List[Tuple[int, Tuple[int, ...]]]] = {
    5: [(5, (1, 2, 3, 4))],
    8: [(7, (1, 2, 3, 4)), (8, (1, 2, 5, 6))],
}


@dataclass(frozen=True)
class Dosage:
    """Per-treatment probabilities d_i of receiving treatment i"""

    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64).reshape(-1)
        if d.size == 0:
            raise ParameterError("a dosage needs at least one treatment")
        if not np.all(np.isfinite(d)):
            raise ParameterError(f"dosage has non-finite entries: {d}")
        if np.any(d < -CLAMP_TOL) or np.any(d > 1 + CLAMP_TOL):
            raise ParameterError(f"dosage entries must lie in [0, 1], got {d}")
        d = np.clip(d, 0.0, 1.0)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def p(self) -> int:
        return self.d.size

    @classmethod
    def half(cls, p: int) -> "Dosage":
        return cls(np.full(p, 0.5))

    @classmethod
    def uniform(cls, p: int, value: float) -> "Dosage":
        return cls(np.full(p, value))

    def linf_distance(self, other: Union["Dosage", np.ndarray]) -> float:
        other_d = other.d if isinstance(other, Dosage) else np.asarray(other)
        return float(np.max(np.abs(self.d - other_d)))

    def __str__(self) -> str:
        return ";".join(f"{v:.6g}" for v in self.d)


@dataclass(frozen=True)
class DesignMatrix:
    """
    Sampled assignments together with their Fourier features.

    Attributes:
        assignments: n x p matrix over {-1, +1}
        features: n x K matrix, features[m, S] = phi_S(assignments[m])
        index: column ordering of the features
    """

    assignments: np.ndarray
    features: np.ndarray
    index: SubsetIndex

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def gram(self) -> np.ndarray:
        return self.features.T @ self.features


def _as_dosage(d: Union[Dosage, Sequence[float], np.ndarray]) -> Dosage:
    return d if isinstance(d, Dosage) else Dosage(np.asarray(d))


def sample_assignments(d: Union[Dosage, np.ndarray], n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw n independent units from the product Bernoulli distribution of d.

    Entry (m, i) is +1 with probability d_i and -1 otherwise.
    """
    dosage = _as_dosage(d)
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    draws = rng.random((n, dosage.p))
    return np.where(draws < dosage.d[None, :], 1, -1).astype(np.int8)


def design_matrix(assignments: np.ndarray, index: SubsetIndex) -> DesignMatrix:
    """Build the n x K Fourier design matrix of a set of assignments"""
    x = np.asarray(assignments)
    if x.ndim == 1:
        x = x[None, :]
    if not np.all(np.abs(x) == 1):
        raise ParameterError("assignments must only contain -1 and +1")
    return DesignMatrix(assignments=x.astype(np.int8), features=feature_matrix(x, index), index=index)


def sigma_of_d(d: Union[Dosage, np.ndarray], index: SubsetIndex) -> np.ndarray:
    """
    Expected per-sample Gram matrix Sigma(d) under dosage d.

    Sigma[S, S'] = prod_{i in S xor S'} (2 d_i - 1), so the diagonal is
    exactly 1 and the trace is K.
    """
    dosage = _as_dosage(d)
    if dosage.p != index.p:
        raise ParameterError(f"dosage has {dosage.p} entries, index expects p={index.p}")
    padded = np.append(2.0 * dosage.d - 1.0, 1.0)
    return padded[index.symmetric_difference_members].prod(axis=2)


def sigma_of_distribution(q: np.ndarray, index: SubsetIndex) -> np.ndarray:
    """
    Expected Gram matrix E[phi(x)^T phi(x)] for an arbitrary distribution q.

    Args:
        q: 2^p probabilities ordered as full_cube(p)
        index: feature ordering
    """
    if index.p > 16:
        raise CapabilityError(f"explicit distributions support p <= 16, got {index.p}")
    weights = np.asarray(q, dtype=np.float64)
    if weights.shape != (2 ** index.p,):
        raise ParameterError(f"q must have 2^{index.p} entries, got {weights.shape}")
    characters = feature_matrix(full_cube(index.p), index)
    return characters.T @ (characters * weights[:, None])


def spectrum(M: np.ndarray) -> np.ndarray:
    """
    Eigenvalues of a symmetric matrix in ascending order.

    Raises:
        ParameterError: if M is not square or not symmetric within 1e-10
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"spectrum needs a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ParameterError("spectrum needs a symmetric matrix")
    return linalg.eigh(M, eigvals_only=True)


def fractional_design(p: int, generators: Sequence[Tuple[int, Sequence[int]]]) -> np.ndarray:
    """
    Two-level fractional factorial design defined by generator words.

    Args:
        p: total number of factors
        generators: (target, sources) pairs; factor `target` is set to the
            product of the base factors in `sources` (1-based labels)

    Returns:
        2^{p-m} x p matrix over {-1, +1}; base factors run through the full
        factorial in full_cube order
    """
    targets = [int(t) for t, _ in generators]
    if len(set(targets)) != len(targets):
        raise ParameterError(f"generator targets repeat: {targets}")
    if any(t < 1 or t > p for t in targets):
        raise ParameterError(f"generator targets must lie in 1..{p}: {targets}")
    base = [i for i in range(1, p + 1) if i not in targets]
    if not base:
        raise ParameterError("every factor is generated; no base factors remain")
    for target, sources in generators:
        sources = tuple(sources)
        if not sources:
            raise ParameterError(f"factor {target} has an empty generator")
        if any(s not in base for s in sources):
            raise ParameterError(f"factor {target} must be generated from base factors {base}, got {sources}")

    cube = full_cube(len(base))
    rows = np.empty((cube.shape[0], p), dtype=np.int8)
    column_of = {factor: j for j, factor in enumerate(base)}
    for factor, j in column_of.items():
        rows[:, factor - 1] = cube[:, j]
    for target, sources in generators:
        product = np.ones(cube.shape[0], dtype=np.int8)
        for s in sources:
            product = product * cube[:, column_of[s]]
        rows[:, target - 1] = product
    return rows


def resolution_v_generators(p: int) -> List[Tuple[int, Tuple[int, ...]]]:
    """Hard-coded minimum-aberration resolution V generators (2^{5-1} and 2^{8-2})"""
    if p not in RESOLUTION_V_GENERATORS:
        supported = ", ".join(f"p={q}" for q in sorted(RESOLUTION_V_GENERATORS))
        raise ParameterError(f"no resolution V design for p={p}; supported: {supported}")
    return RESOLUTION_V_GENERATORS[p]


def write_assignments_csv(assignments: np.ndarray, path: Union[str, Path]) -> None:
    """Export an assignment matrix as +-1 integers, header = treatment labels"""
    x = np.asarray(assignments, dtype=np.int64)
    frame = pd.DataFrame(x, columns=[str(i) for i in range(1, x.shape[1] + 1)])
    frame.to_csv(path, index=False)
