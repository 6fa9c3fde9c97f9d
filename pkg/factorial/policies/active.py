import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from config.settings import HarnessConfig
from factorial.core.combinatorics import SubsetIndex
from factorial.core.design import Dosage, sigma_of_d
from factorial.core.errors import ParameterError

logger = logging.getLogger(__name__)

EIGEN_GAP_TOL = 1e-6
FD_STEP = 1e-6
SINGULAR_PENALTY = 1e20
POSITIVE_TOL = 1e-12


class Objective(str, Enum):
    EIGEN_SUM = "eigen_sum"
    MIN_EIG_PROXY = "min_eig_proxy"


@dataclass(frozen=True)
class AcquisitionOptions:
    """
    Settings for the dosage acquisition optimizer.

    Attributes:
        objective: sum of inverse eigenvalues, or the inverse smallest eigenvalue
        restarts: number of starts; the first is always the (projected) half dosage
        max_iters: solver iterations per start
        tol: relative objective decrease, and projected gradient size, at which a start has converged
        budget: optional supply limit sum_i d_i <= budget
    """

    objective: Objective = Objective.EIGEN_SUM
    restarts: int = 5
    max_iters: int = 500
    tol: float = 1e-6
    budget: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.restarts < 1:
            raise ParameterError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.budget is not None and self.budget <= 0:
            raise ParameterError(f"budget must be positive, got {self.budget}")

    @classmethod
    def default_for(cls, p: int, **overrides) -> "AcquisitionOptions":
        """Harness defaults, switching to the min-eig proxy for large p"""
        settings = dict(
            objective=Objective.MIN_EIG_PROXY if p >= HarnessConfig.PROXY_MIN_P else Objective.EIGEN_SUM,
            restarts=HarnessConfig.RESTARTS,
            max_iters=HarnessConfig.MAX_ITERS,
            tol=HarnessConfig.TOL,
        )
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**settings)


@dataclass
class ExperimentState:
    """
    Gram mass collected in earlier rounds, P = (1/n) sum_t w_t X_t^T X_t.

    The weight w_t is 1 for homoskedastic rounds and 1/sigma_t^2 when a round
    is added with its own noise level.
    """

    index: SubsetIndex
    n_per_round: int
    P: np.ndarray = None
    rounds: int = 0
    round_sigmas: List[Optional[float]] = field(default_factory=list)

    def __post_init__(self):
        if self.n_per_round < 1:
            raise ParameterError(f"n_per_round must be positive, got {self.n_per_round}")
        if self.P is None:
            self.P = np.zeros((self.index.K, self.index.K))
        elif self.P.shape != (self.index.K, self.index.K):
            raise ParameterError(f"P has shape {self.P.shape}, expected {(self.index.K, self.index.K)}")

    def add_round(self, features: np.ndarray, sigma: Optional[float] = None) -> None:
        """Accumulate one round's design matrix"""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[1] != self.index.K:
            raise ParameterError(f"round has {features.shape[1]} columns, expected K={self.index.K}")
        if sigma is not None and sigma <= 0:
            raise ParameterError(f"round noise level must be positive, got {sigma}")
        weight = 1.0 if sigma is None else 1.0 / sigma ** 2
        self.P = self.P + weight * (features.T @ features) / self.n_per_round
        self.rounds += 1
        self.round_sigmas.append(sigma)


@dataclass(frozen=True)
class AcquisitionResult:
    dosage: Dosage
    objective: float
    converged: bool
    restart: int
    iterations: int
    restart_objectives: Tuple[float, ...]


class _SpectralObjective:
    """Objective and gradient of a spectral function of scale * Sigma(d) + P"""

    def __init__(self, index: SubsetIndex, P: np.ndarray, objective: Objective, scale: float = 1.0):
        self.index = index
        self.P = P
        self.objective = objective
        self.scale = scale
        self.bits = index.symmetric_difference_bits

    def _matrix(self, d: np.ndarray) -> np.ndarray:
        return self.scale * sigma_of_d(d, self.index) + self.P

    def value(self, d: np.ndarray) -> float:
        eigenvalues = linalg.eigh(self._matrix(d), eigvals_only=True)
        if eigenvalues[0] <= POSITIVE_TOL * max(1.0, eigenvalues[-1]):
            return float("inf")
        if self.objective is Objective.EIGEN_SUM:
            return float(np.sum(1.0 / eigenvalues))
        return float(1.0 / eigenvalues[0])

    def _partials(self, d: np.ndarray) -> List[np.ndarray]:
        """d Sigma / d d_j for every j, from the product over S xor S' without j"""
        y = 2.0 * d - 1.0
        zero = y == 0.0
        nonzero_product = np.where(self.bits & ~zero, y, 1.0).prod(axis=2)
        zero_count = (self.bits & zero).sum(axis=2)
        partials = []
        for j in range(self.index.p):
            in_j = self.bits[:, :, j]
            if zero[j]:
                G = np.where(in_j & (zero_count == 1), nonzero_product, 0.0)
            else:
                G = np.where(in_j & (zero_count == 0), nonzero_product / y[j], 0.0)
            partials.append(2.0 * G)
        return partials

    def value_and_grad(self, d: np.ndarray) -> Tuple[float, np.ndarray]:
        eigenvalues, vectors = linalg.eigh(self._matrix(d))
        if eigenvalues[0] <= POSITIVE_TOL * max(1.0, eigenvalues[-1]):
            return float("inf"), np.zeros_like(d)

        if self.objective is Objective.EIGEN_SUM:
            value = float(np.sum(1.0 / eigenvalues))
            weight = (vectors / eigenvalues ** 2) @ vectors.T
        else:
            value = float(1.0 / eigenvalues[0])
            if eigenvalues.size > 1 and eigenvalues[1] - eigenvalues[0] < EIGEN_GAP_TOL:
                return value, self._finite_difference(d)
            v = vectors[:, 0]
            weight = np.outer(v, v) / eigenvalues[0] ** 2

        grad = np.array([-self.scale * np.sum(G * weight) for G in self._partials(d)])
        return value, grad

    def _finite_difference(self, d: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(d)
        for j in range(d.size):
            up = d.copy()
            down = d.copy()
            up[j] = min(1.0, d[j] + FD_STEP)
            down[j] = max(0.0, d[j] - FD_STEP)
            width = up[j] - down[j]
            f_up, f_down = self.value(up), self.value(down)
            if width > 0 and np.isfinite(f_up) and np.isfinite(f_down):
                grad[j] = (f_up - f_down) / width
        return grad


def project_feasible(v: np.ndarray, budget: Optional[float] = None) -> np.ndarray:
    """
    Euclidean projection onto [0, 1]^p intersected with sum_i d_i <= budget.

    The budgeted case shifts every coordinate by a common multiplier tau >= 0
    before clipping; tau is the root of sum clip(v - tau) = budget.
    """
    x = np.clip(v, 0.0, 1.0)
    if budget is None or x.sum() <= budget:
        return x
    tau = optimize.brentq(lambda t: np.clip(v - t, 0.0, 1.0).sum() - budget, 0.0, float(np.max(v)))
    return np.clip(v - tau, 0.0, 1.0)


def _minimise(
    start: np.ndarray,
    fn: _SpectralObjective,
    opts: AcquisitionOptions,
) -> Tuple[np.ndarray, float, bool, int]:
    """
    One local solve from a start point.

    L-BFGS-B handles the [0, 1] box on its own; a supply budget couples the
    coordinates, so that case goes to SLSQP with a linear inequality.
    """
    p = start.size
    x0 = project_feasible(start, opts.budget)
    bounds = optimize.Bounds(np.zeros(p), np.ones(p))

    def fun(d: np.ndarray) -> Tuple[float, np.ndarray]:
        # SLSQP may step marginally outside the bounds
        value, grad = fn.value_and_grad(np.clip(d, 0.0, 1.0))
        if not np.isfinite(value):
            return SINGULAR_PENALTY, np.zeros_like(d)
        return value, grad

    if opts.budget is None:
        res = optimize.minimize(
            fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            options=dict(maxiter=opts.max_iters, ftol=opts.tol, gtol=opts.tol),
        )
    else:
        budget = dict(type="ineq", fun=lambda d: opts.budget - d.sum(), jac=lambda d: -np.ones_like(d))
        res = optimize.minimize(
            fun, x0, jac=True, method="SLSQP", bounds=bounds, constraints=[budget],
            options=dict(maxiter=opts.max_iters, ftol=opts.tol),
        )

    x = project_feasible(res.x, opts.budget)
    f = fn.value(x)
    f0 = fn.value(x0)
    if f0 < f:
        x, f = x0, f0
    return x, f, bool(res.success) and np.isfinite(f), int(res.nit)


def objective_value(
    d: np.ndarray,
    state: ExperimentState,
    opts: AcquisitionOptions,
    scale: float = 1.0,
) -> float:
    """Acquisition objective at a dosage; +inf where the matrix is singular"""
    fn = _SpectralObjective(state.index, state.P, opts.objective, scale)
    return fn.value(np.asarray(d.d if isinstance(d, Dosage) else d, dtype=np.float64))


def acquire(
    state: ExperimentState,
    opts: AcquisitionOptions,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> AcquisitionResult:
    """
    Minimise the acquisition objective over feasible dosages with multiple starts.

    Start 0 is the half dosage (projected onto the budget when one is set),
    the rest are uniform random points. The lowest objective wins; ties go to
    the earlier start.

    Args:
        state: Gram mass of the rounds already run
        opts: optimizer settings
        rng: stream for the random starts
        scale: multiplier on Sigma(d), 1/sigma_T^2 in the heteroskedastic case

    Returns:
        AcquisitionResult
    """
    p = state.index.p
    fn = _SpectralObjective(state.index, state.P, opts.objective, scale)

    starts = [np.full(p, 0.5)] + [rng.random(p) for _ in range(opts.restarts - 1)]
    best = None
    objectives = []
    for restart, start in enumerate(starts):
        x, f, converged, iterations = _minimise(start, fn, opts)
        objectives.append(f)
        logger.debug(f"Acquisition start {restart}: objective={f:.6g}, converged={converged}, iterations={iterations}")
        if best is None or f < best[1]:
            best = (x, f, converged, restart, iterations)

    x, f, converged, restart, iterations = best
    if not converged:
        logger.warning(f"Acquisition did not converge after {opts.restarts} starts; using best objective {f:.6g}")
    return AcquisitionResult(
        dosage=Dosage(x),
        objective=f,
        converged=converged,
        restart=restart,
        iterations=iterations,
        restart_objectives=tuple(objectives),
    )


def active_dosage(state: ExperimentState, opts: Optional[AcquisitionOptions] = None, seed: int = 0) -> Dosage:
    """Next-round dosage minimising sum_i 1/lambda_i(Sigma(d) + P)"""
    opts = opts or AcquisitionOptions.default_for(state.index.p)
    return acquire(state, opts, np.random.default_rng(seed)).dosage


def hetero_active_dosage(
    state: ExperimentState,
    sigma_T: float,
    opts: Optional[AcquisitionOptions] = None,
    seed: int = 0,
) -> Dosage:
    """
    Next-round dosage when round noise levels differ.

    Minimises sum_i 1/lambda_i(Sigma(d)/sigma_T^2 + P) where P was accumulated
    with weights 1/sigma_t^2 (ExperimentState.add_round(..., sigma=sigma_t)).
    """
    if sigma_T <= 0:
        raise ParameterError(f"sigma_T must be positive, got {sigma_T}")
    opts = opts or AcquisitionOptions.default_for(state.index.p)
    return acquire(state, opts, np.random.default_rng(seed), scale=1.0 / sigma_T ** 2).dosage
