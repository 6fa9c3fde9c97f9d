import logging
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import entr, rel_entr

from factorial.core.combinatorics import full_cube
from factorial.core.design import Dosage
from factorial.core.errors import CapabilityError, DistributionParseError, ParameterError

logger = logging.getLogger(__name__)

MAX_EXPLICIT_P = 16
NORMALIZATION_TOL = 1e-9


def _check_distribution(q: np.ndarray) -> int:
    q = np.asarray(q, dtype=np.float64)
    p = int(round(np.log2(q.size))) if q.size else 0
    if q.ndim != 1 or q.size < 2 or 2 ** p != q.size:
        raise ParameterError(f"a distribution over {{-1,1}}^p needs 2^p entries, got shape {q.shape}")
    if p > MAX_EXPLICIT_P:
        raise CapabilityError(f"explicit distributions support p <= {MAX_EXPLICIT_P}, got {p}")
    if np.any(q < 0):
        raise ParameterError("distribution has negative probabilities")
    if abs(q.sum() - 1.0) > NORMALIZATION_TOL:
        raise ParameterError(f"distribution sums to {q.sum():.12g}, expected 1")
    return p


def product_distribution(d: Union[Dosage, np.ndarray]) -> np.ndarray:
    """p_d over the cube in full_cube order"""
    dosage = d if isinstance(d, Dosage) else Dosage(d)
    if dosage.p > MAX_EXPLICIT_P:
        raise CapabilityError(f"explicit distributions support p <= {MAX_EXPLICIT_P}, got {dosage.p}")
    treated = full_cube(dosage.p) > 0
    return np.where(treated, dosage.d[None, :], 1.0 - dosage.d[None, :]).prod(axis=1)


def emulate_dosage(q: np.ndarray) -> Dosage:
    """
    Dosage whose product distribution is KL-closest to q: the marginals of q.

    Args:
        q: 2^p probabilities ordered as full_cube(p)
    """
    q = np.asarray(q, dtype=np.float64)
    p = _check_distribution(q)
    treated = (full_cube(p) > 0).astype(np.float64)
    return Dosage(q @ treated)


def kl_divergence(q: np.ndarray, d: Union[Dosage, np.ndarray]) -> float:
    """
    D(q || p_d) in nats, summed over the cube.

    Outcomes with q(x) > 0 and p_d(x) = 0 make the divergence +inf.
    """
    q = np.asarray(q, dtype=np.float64)
    p = _check_distribution(q)
    target = product_distribution(d)
    if target.size != 2 ** p:
        raise ParameterError(f"dosage has {int(np.log2(target.size))} treatments, q has {p}")
    return float(np.sum(rel_entr(q, target)))


def product_entropy_gap(q: np.ndarray) -> float:
    """H(q_1 x ... x q_p) - H(q): the KL reached by matching marginals"""
    q = np.asarray(q, dtype=np.float64)
    _check_distribution(q)
    marginals = emulate_dosage(q).d
    product_entropy = float(np.sum(entr(marginals) + entr(1.0 - marginals)))
    return product_entropy - float(np.sum(entr(q)))


def read_distribution(path: Union[str, Path], p: int = None) -> np.ndarray:
    """
    Parse a target distribution file.

    Each non-blank line is `<pattern> <probability>` where the pattern has one
    '+' or '-' per treatment (character i is treatment i + 1). Lines starting
    with '#' are comments. Repeated patterns accumulate.

    Raises:
        DistributionParseError: with the offending line number
    """
    entries = []
    for line_number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DistributionParseError(f"expected '<pattern> <probability>', got {raw.strip()!r}", line_number)
        pattern, value = parts
        if not pattern or any(c not in "+-" for c in pattern):
            raise DistributionParseError(f"pattern must contain only '+' and '-', got {pattern!r}", line_number)
        if p is None:
            p = len(pattern)
        if len(pattern) != p:
            raise DistributionParseError(f"pattern has length {len(pattern)}, expected {p}", line_number)
        try:
            probability = float(value)
        except ValueError:
            raise DistributionParseError(f"probability {value!r} is not a number", line_number)
        if not np.isfinite(probability) or probability < 0:
            raise DistributionParseError(f"probability must be a finite non-negative number, got {value}", line_number)
        entries.append((pattern, probability, line_number))

    if not entries:
        raise DistributionParseError("file contains no outcomes", 1)
    if p > MAX_EXPLICIT_P:
        raise CapabilityError(f"explicit distributions support p <= {MAX_EXPLICIT_P}, got {p}")

    q = np.zeros(2 ** p)
    for pattern, probability, _ in entries:
        row = sum(1 << i for i, c in enumerate(pattern) if c == "+")
        q[row] += probability
    total = q.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise DistributionParseError(f"probabilities sum to {total:.12g}, expected 1", entries[-1][2])
    logger.debug(f"Read a distribution over p={p} treatments with {len(entries)} outcomes from {path}")
    return q
