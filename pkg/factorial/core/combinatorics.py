import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from factorial.core.errors import CapabilityError, ParameterError

logger = logging.getLogger(__name__)

MAX_TREATMENTS = 63


def _mask_of(members: Iterable[int]) -> int:
    mask = 0
    for member in members:
        mask |= 1 << (member - 1)
    return mask


@dataclass(frozen=True)
class SubsetIndex:
    """
    Canonical ordering of every subset S of {1..p} with |S| <= k.

    Subsets are ordered by size, then lexicographically on their sorted
    members, so column 0 is always the empty set. Internally each subset is
    a bitmask where bit i stands for treatment i + 1.
    """

    p: int
    k: int
    subsets: Tuple[Tuple[int, ...], ...]
    masks: Tuple[int, ...] = field(repr=False)
    _positions: Dict[int, int] = field(repr=False, compare=False)

    @property
    def K(self) -> int:
        return len(self.subsets)

    def __len__(self) -> int:
        return len(self.subsets)

    def subset(self, j: int) -> Tuple[int, ...]:
        """Sorted members of the subset at column j"""
        return self.subsets[j]

    def index_of(self, members: Iterable[int]) -> int:
        """
        Column of a subset given its members.

        Raises:
            ParameterError: if the subset is not part of this index
        """
        members = tuple(members)
        if any(m < 1 or m > self.p for m in members):
            raise ParameterError(f"subset {members} is not contained in 1..{self.p}")
        mask = _mask_of(members)
        position = self._positions.get(mask)
        if position is None:
            raise ParameterError(f"subset {sorted(set(members))} exceeds order k={self.k}")
        return position

    def index_of_mask(self, mask: int) -> int:
        return self._positions[mask]

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.subsets], dtype=np.int64)

    @cached_property
    def member_bits(self) -> np.ndarray:
        """K x p boolean table, True where treatment i belongs to subset S"""
        bits = np.zeros((self.K, self.p), dtype=bool)
        for j, members in enumerate(self.subsets):
            for member in members:
                bits[j, member - 1] = True
        return bits

    @cached_property
    def symmetric_difference_bits(self) -> np.ndarray:
        """K x K x p boolean table of S xor S' membership"""
        bits = self.member_bits
        return bits[:, None, :] ^ bits[None, :, :]

    @cached_property
    def symmetric_difference_members(self) -> np.ndarray:
        """
        K x K x w table of the 0-based treatments in S xor S', w = min(2k, p).

        Shorter differences are padded with p, which points one past the last
        treatment.
        """
        width = max(1, min(2 * self.k, self.p))
        positions = np.where(self.symmetric_difference_bits, np.arange(self.p), self.p)
        return np.sort(positions, axis=2)[:, :, :width]

    def label(self, j: int) -> str:
        return "{" + ",".join(str(m) for m in self.subsets[j]) + "}"


def enumerate_subsets(p: int, k: int) -> SubsetIndex:
    """
    Build the canonical SubsetIndex for p treatments and interactions up to order k.

    Args:
        p: number of treatments, 1 <= p <= 63
        k: maximum interaction order, 0 <= k <= p

    Returns:
        SubsetIndex with K = sum_{i<=k} C(p, i) entries
    """
    if not isinstance(p, (int, np.integer)) or p <= 0:
        raise ParameterError(f"p must be a positive integer, got {p}")
    if not isinstance(k, (int, np.integer)) or k < 0 or k > p:
        raise ParameterError(f"k must lie in [0, p={p}], got {k}")
    if p > MAX_TREATMENTS:
        raise CapabilityError(f"p={p} exceeds the {MAX_TREATMENTS}-treatment bitmask limit")

    subsets = []
    for size in range(k + 1):
        subsets.extend(combinations(range(1, p + 1), size))
    masks = tuple(_mask_of(s) for s in subsets)
    positions = {mask: j for j, mask in enumerate(masks)}

    expected = sum(comb(p, i) for i in range(k + 1))
    assert len(subsets) == expected
    logger.debug(f"Enumerated {expected} subsets for p={p}, k={k}")
    return SubsetIndex(p=int(p), k=int(k), subsets=tuple(subsets), masks=masks, _positions=positions)


def phi(S: Sequence[int], x: Sequence[int]) -> int:
    """
    Parity character phi_S(x) = prod_{i in S} x_i (1-based members).

    The empty product is +1.
    """
    value = 1
    for member in S:
        value *= int(x[member - 1])
    return value


def feature_matrix(assignments: np.ndarray, index: SubsetIndex) -> np.ndarray:
    """
    Evaluate every phi_S on every row of an n x p assignment matrix.

    Each column is the column of S without its largest member times that
    member's coordinate; the smaller subset always precedes S in the ordering.
    """
    x = np.asarray(assignments)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != index.p:
        raise ParameterError(f"assignments have {x.shape[1]} columns, expected p={index.p}")

    features = np.empty((x.shape[0], index.K), dtype=np.float64)
    features[:, 0] = 1.0
    for j in range(1, index.K):
        members = index.subsets[j]
        last = members[-1]
        parent = index.index_of_mask(index.masks[j] & ~(1 << (last - 1)))
        features[:, j] = features[:, parent] * x[:, last - 1]
    return features


def full_cube(p: int) -> np.ndarray:
    """
    All 2^p assignments, row r holding bit i of r as coordinate i (0 -> -1, 1 -> +1).
    """
    if p > 24:
        raise CapabilityError(f"refusing to enumerate 2^{p} assignments")
    rows = np.arange(2 ** p, dtype=np.int64)[:, None]
    bits = (rows >> np.arange(p, dtype=np.int64)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)
