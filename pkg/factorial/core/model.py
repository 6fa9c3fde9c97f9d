import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from factorial.core.combinatorics import SubsetIndex, enumerate_subsets, feature_matrix, full_cube
from factorial.core.errors import CapabilityError, ParameterError

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_P = 16
NORM_SLACK = 1e-12


@dataclass(frozen=True)
class OutcomeModel:
    """
    Bounded-degree outcome model f(x) = sum_S beta_S phi_S(x) with Gaussian noise.

    Attributes:
        index: column ordering of beta
        beta: Fourier coefficients, one per indexed subset
        sigma: noise standard deviation
        B: bound on the l2 norm of beta
    """

    index: SubsetIndex
    beta: np.ndarray
    sigma: float = 1.0
    B: float = 1.0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        if beta.shape != (self.index.K,):
            raise ParameterError(f"beta has shape {beta.shape}, expected ({self.index.K},)")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma}")
        if self.B <= 0:
            raise ParameterError(f"B must be positive, got {self.B}")
        if np.linalg.norm(beta) > self.B * (1 + NORM_SLACK):
            raise ParameterError(f"||beta||_2 = {np.linalg.norm(beta):.6g} exceeds B = {self.B:.6g}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def p(self) -> int:
        return self.index.p

    @property
    def k(self) -> int:
        return self.index.k


@dataclass(frozen=True)
class IndicatorModel:
    """Coefficients alpha_S of the indicator basis 1{x_i = 1 for all i in S}"""

    index: SubsetIndex
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.shape != (self.index.K,):
            raise ParameterError(f"alpha has shape {alpha.shape}, expected ({self.index.K},)")
        object.__setattr__(self, "alpha", alpha)


def _as_rows(model_p: int, x) -> np.ndarray:
    rows = np.asarray(x)
    single = rows.ndim == 1
    if single:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != model_p:
        raise ParameterError(f"assignment length {rows.shape[-1]} does not match p={model_p}")
    return rows


def evaluate(model: OutcomeModel, assignments: np.ndarray) -> np.ndarray:
    """Evaluate f on every row of an n x p assignment matrix"""
    rows = _as_rows(model.p, assignments)
    return feature_matrix(rows, model.index) @ model.beta


def eval_f(model: OutcomeModel, x) -> float:
    """
    Evaluate f at a single assignment x in {-1, 1}^p.

    Raises:
        ParameterError: if len(x) != p
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ParameterError("eval_f expects a single assignment vector")
    return float(evaluate(model, x)[0])


def eval_indicator(model: IndicatorModel, assignments: np.ndarray) -> np.ndarray:
    """Evaluate sum_S alpha_S 1{x_S = +1} on every row"""
    rows = _as_rows(model.index.p, assignments)
    on = model.index.member_bits.astype(np.int64)
    active = (rows > 0).astype(np.int64) @ on.T == on.sum(axis=1)[None, :]
    return active.astype(np.float64) @ model.alpha


def alpha_to_beta(model: IndicatorModel) -> np.ndarray:
    """
    Convert indicator-basis coefficients to Fourier coefficients.

    beta_S = sum_{T superset of S} alpha_T / 2^{|T|}; every subset of an
    indexed T is itself indexed, so the degree bound carries over.
    """
    index = model.index
    beta = np.zeros(index.K)
    for j in np.flatnonzero(model.alpha):
        T = index.masks[j]
        weight = model.alpha[j] / 2.0 ** len(index.subsets[j])
        sub = T
        while True:
            beta[index.index_of_mask(sub)] += weight
            if sub == 0:
                break
            sub = (sub - 1) & T
    return beta


def fourier_transform_bruteforce(f_table: np.ndarray, index: SubsetIndex) -> np.ndarray:
    """
    Exact Fourier coefficients of a truth table, for use as a test oracle.

    Args:
        f_table: 2^p values ordered as in full_cube(p)
        index: subsets whose coefficients are wanted

    Returns:
        beta_S = 2^{-p} sum_y f(y) phi_S(y) for every indexed S
    """
    if index.p > BRUTE_FORCE_MAX_P:
        raise CapabilityError(f"brute-force transform supports p <= {BRUTE_FORCE_MAX_P}, got {index.p}")
    table = np.asarray(f_table, dtype=np.float64)
    if table.shape != (2 ** index.p,):
        raise ParameterError(f"f_table must have 2^{index.p} entries, got {table.shape}")
    characters = feature_matrix(full_cube(index.p), index)
    return characters.T @ table / 2.0 ** index.p


def truth_table(model: OutcomeModel) -> np.ndarray:
    """Noiseless f over the whole cube in full_cube order"""
    return evaluate(model, full_cube(model.p))


def generate_model(
    p: int,
    k: int,
    seed: int,
    sigma: float = 1.0,
    B: Optional[float] = None,
) -> OutcomeModel:
    """
    Draw beta ~ U(-1, 1)^K deterministically from a seed.

    Args:
        p: number of treatments
        k: interaction order of the generated model
        seed: any integer; reduced modulo 2^64
        sigma: noise standard deviation
        B: norm bound; None sets B = ||beta||_2

    Returns:
        OutcomeModel
    """
    index = enumerate_subsets(p, k)
    rng = np.random.default_rng(int(seed) % 2 ** 64)
    beta = rng.uniform(-1.0, 1.0, size=index.K)
    norm = float(np.linalg.norm(beta))
    if B is None:
        B = norm if norm > 0 else 1.0
    logger.debug(f"Generated model p={p}, k={k}, K={index.K}, ||beta||={norm:.4f}, B={B:.4f}")
    return OutcomeModel(index=index, beta=beta, sigma=sigma, B=B)


def truncate(model: OutcomeModel, k: int) -> OutcomeModel:
    """Degree-<=k projection of a model; the canonical ordering makes it a prefix"""
    index = enumerate_subsets(model.p, k)
    if k > model.k:
        raise ParameterError(f"cannot truncate an order-{model.k} model to order {k}")
    return OutcomeModel(index=index, beta=model.beta[: index.K], sigma=model.sigma, B=model.B)


def observe(model: OutcomeModel, x, rng: np.random.Generator) -> Union[float, np.ndarray]:
    """
    Noisy outcome y = f(x) + eps with eps ~ N(0, sigma^2).

    A single assignment returns a float, an n x p matrix returns n outcomes.
    """
    x = np.asarray(x)
    values = evaluate(model, x)
    if model.sigma > 0:
        values = values + rng.normal(0.0, model.sigma, size=values.shape)
    return float(values[0]) if x.ndim == 1 else values


def dump_model(model: OutcomeModel, path: Union[str, Path]) -> None:
    """Write a model in the flat text format read by load_model"""
    lines = [
        f"p {model.p}",
        f"k {model.k}",
        f"sigma {model.sigma!r}",
        f"B {model.B!r}",
    ]
    for j in range(model.index.K):
        lines.append(f"{model.index.label(j)} {float(model.beta[j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: Union[str, Path]) -> OutcomeModel:
    """Read a model written by dump_model"""
    header = {}
    coefficients = {}
    for line_number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        if not (key.startswith("{") or key in ("p", "k", "sigma", "B")):
            raise ParameterError(f"{path}:{line_number}: unrecognised key {key!r}")
        try:
            if key.startswith("{"):
                inner = key.strip("{}")
                members = tuple(int(m) for m in inner.split(",")) if inner else ()
                coefficients[members] = float(value)
            elif key in ("p", "k"):
                header[key] = int(value)
            else:
                header[key] = float(value)
        except ValueError as e:
            raise ParameterError(f"{path}:{line_number}: cannot parse {line!r} ({e})")

    missing = {"p", "k", "sigma", "B"} - header.keys()
    if missing:
        raise ParameterError(f"{path}: missing header fields {sorted(missing)}")
    index = enumerate_subsets(header["p"], header["k"])
    beta = np.zeros(index.K)
    for members, value in coefficients.items():
        beta[index.index_of(members)] = value
    return OutcomeModel(index=index, beta=beta, sigma=header["sigma"], B=header["B"])
