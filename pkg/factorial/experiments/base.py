import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np

from config.settings import HarnessConfig
from factorial.core.combinatorics import SubsetIndex
from factorial.core.design import design_matrix, sample_assignments
from factorial.core.errors import ParameterError
from factorial.core.estimation import Branch, EstimationResult, mse, ols_ridge, truncated_ols
from factorial.core.model import OutcomeModel, observe

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

EXPERIMENTS = (
    "passive_sweep",
    "uniform_sweep",
    "active_compare",
    "constrained_sweep",
    "misspecified_sweep",
    "fractional_compare",
    "emulate",
)
DISTANCE_SWEEPS = ("passive_sweep", "constrained_sweep", "misspecified_sweep")
STRATEGIES = ("optimal", "random", "half", "partial")
ESTIMATORS = {"truncated_ols": truncated_ols, "ols_ridge": ols_ridge}
MAX_DISTANCE_ATTEMPTS = 10000
KEY_ALIASES = {"seed": "master_seed"}

# Settings of the reference simulations; config files and flags override them.
EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "passive_sweep": dict(
        p=10, k=2, n=200, trials=20, dosages_per_distance=100,
        distances=(0.0, 0.1, 0.2, 0.3, 0.4),
    ),
    "uniform_sweep": dict(
        p=10, k=2, n=200, trials=500,
        dosage_grid=tuple(round(0.4 + 0.02 * i, 2) for i in range(11)),
    ),
    "active_compare": dict(
        p=15, k=2, n=75, rounds=10, trials=20,
        strategies=("optimal", "random", "half"),
    ),
    "constrained_sweep": dict(
        p=10, k=2, n=1000, L=2.0, trials=40, dosages_per_distance=50,
        distances=(0.0, 0.05, 0.1, 0.15, 0.2),
    ),
    "misspecified_sweep": dict(
        p=5, k=5, k_assumed=2, n=300, trials=20, dosages_per_distance=50,
        distances=(0.0, 0.1, 0.2, 0.3, 0.4),
    ),
    "fractional_compare": dict(p=8, k=1, n=64, trials=300),
    "emulate": dict(comparators=100),
}


def _float_tuple(value) -> Tuple[float, ...]:
    if isinstance(value, str):
        return tuple(float(v) for v in value.replace(" ", "").split(",") if v)
    return tuple(float(v) for v in value)


def _str_tuple(value) -> Tuple[str, ...]:
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return tuple(str(v) for v in value)


def _flag(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def _optional(parse: Callable[[Any], T]) -> Callable[[Any], Optional[T]]:
    def parse_optional(value):
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
            return None
        return parse(value)

    return parse_optional


_PARSERS: Dict[str, Callable[[Any], Any]] = {
    "experiment": str,
    "p": _optional(int),
    "k": int,
    "k_assumed": _optional(int),
    "n": int,
    "rounds": int,
    "sigma": float,
    "L": _optional(float),
    "trials": int,
    "dosages_per_distance": int,
    "distances": _float_tuple,
    "dosage_grid": _float_tuple,
    "strategies": _str_tuple,
    "master_seed": int,
    "out": str,
    "estimator": str,
    "B": _optional(float),
    "round_sigmas": _optional(_float_tuple),
    "workers": int,
    "model": _optional(str),
    "save_model": _flag,
    "distribution": _optional(str),
    "comparators": int,
}


@dataclass(frozen=True)
class RunConfig:
    """
    Fully resolved parameters of one harness run.

    Attributes:
        experiment: one of EXPERIMENTS
        p: number of treatments (read from the distribution file for emulate)
        k: interaction order of the generated model and the estimator
        k_assumed: estimator order of the misspecified sweep (true order is p)
        n: samples per round
        rounds: rounds per trial in active_compare
        sigma: noise level (ignored per round when round_sigmas is set)
        L: supply budget sum_i d_i <= L
        trials: observation sets per dosage, or trials per strategy
        dosages_per_distance: dosages drawn at each distance
        distances: l_inf distances from the sweep center
        dosage_grid: uniform dosage values of uniform_sweep
        strategies: arms of active_compare
        master_seed: root of every derived seed
        out: output directory
        estimator: truncated_ols or ols_ridge
        B: truncation bound override (the model keeps its own norm)
        round_sigmas: per-round noise levels for heteroskedastic active runs
        workers: thread pool size for trials
        model: model file to load instead of generating
        save_model: write the run's model next to the CSV
        distribution: target distribution file for emulate
        comparators: random dosages compared against the emulated one
    """

    experiment: str
    p: Optional[int] = None
    k: int = 1
    k_assumed: Optional[int] = None
    n: int = 100
    rounds: int = 1
    sigma: float = 1.0
    L: Optional[float] = None
    trials: int = 1
    dosages_per_distance: int = 1
    distances: Tuple[float, ...] = (0.0,)
    dosage_grid: Tuple[float, ...] = (0.5,)
    strategies: Tuple[str, ...] = ("optimal", "random", "half")
    master_seed: int = field(default_factory=lambda: HarnessConfig.MASTER_SEED)
    out: str = field(default_factory=lambda: HarnessConfig.OUT_DIR)
    estimator: str = "truncated_ols"
    B: Optional[float] = None
    round_sigmas: Optional[Tuple[float, ...]] = None
    workers: int = field(default_factory=lambda: HarnessConfig.WORKERS)
    model: Optional[str] = None
    save_model: bool = False
    distribution: Optional[str] = None
    comparators: int = 100

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                try:
                    object.__setattr__(self, f.name, _PARSERS[f.name](value))
                except (TypeError, ValueError) as e:
                    raise ParameterError(f"invalid value for {f.name}: {value!r} ({e})")
        self._validate()

    def _validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        for name in ("n", "rounds", "trials", "dosages_per_distance", "workers", "comparators"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma}")
        if self.estimator not in ESTIMATORS:
            raise ParameterError(f"unknown estimator {self.estimator!r}; choose from {', '.join(ESTIMATORS)}")
        if self.B is not None and self.B <= 0:
            raise ParameterError(f"B must be positive, got {self.B}")
        if self.L is not None and self.L <= 0:
            raise ParameterError(f"supply budget L must be positive, got {self.L}")
        if self.experiment in DISTANCE_SWEEPS and not self.distances:
            raise ParameterError(f"{self.experiment} needs at least one distance")
        if self.experiment == "uniform_sweep" and not self.dosage_grid:
            raise ParameterError("uniform_sweep needs at least one dosage grid value")
        if any(not 0.0 <= r < 0.5 for r in self.distances):
            raise ParameterError(f"distances must lie in [0, 0.5), got {self.distances}")
        if any(not 0.0 <= v <= 1.0 for v in self.dosage_grid):
            raise ParameterError(f"dosage grid values must lie in [0, 1], got {self.dosage_grid}")

        if self.experiment == "emulate":
            if not self.distribution:
                raise ParameterError("emulate needs a target distribution file (--distribution)")
            return
        if self.p is None or self.p < 1:
            raise ParameterError(f"p must be a positive integer, got {self.p}")
        if self.experiment != "misspecified_sweep" and not 0 <= self.k <= self.p:
            raise ParameterError(f"k must lie in [0, p={self.p}], got {self.k}")
        if self.experiment == "misspecified_sweep":
            if self.k_assumed is None or not 0 <= self.k_assumed < self.p:
                raise ParameterError(f"k_assumed must lie in [0, p={self.p}), got {self.k_assumed}")
        if self.experiment == "constrained_sweep" and self.L is None:
            raise ParameterError("constrained_sweep needs a supply budget L")
        if self.experiment == "active_compare":
            if not self.strategies:
                raise ParameterError("active_compare needs at least one strategy")
            unknown = [s for s in self.strategies if s not in STRATEGIES]
            if unknown:
                raise ParameterError(f"unknown strategies {unknown}; choose from {', '.join(STRATEGIES)}")
        if self.round_sigmas is not None:
            if len(self.round_sigmas) != self.rounds:
                raise ParameterError(f"{len(self.round_sigmas)} round sigmas given for {self.rounds} rounds")
            if any(s <= 0 for s in self.round_sigmas):
                raise ParameterError(f"round sigmas must be positive, got {self.round_sigmas}")

    @classmethod
    def resolve(
        cls,
        experiment: str,
        file_values: Optional[Mapping[str, Any]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Layer experiment defaults, config-file values and explicit overrides.

        Args:
            experiment: experiment name
            file_values: key=value pairs from a config file
            overrides: command-line values; None entries are ignored

        Returns:
            RunConfig
        """
        if experiment not in EXPERIMENTS:
            raise ParameterError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        known = {f.name for f in fields(cls)}
        values: Dict[str, Any] = dict(EXPERIMENT_DEFAULTS[experiment])
        for source in (file_values or {}, overrides or {}):
            for key, value in source.items():
                key = KEY_ALIASES.get(key.strip(), key.strip().replace("-", "_"))
                if key not in known:
                    raise ParameterError(f"unknown configuration key {key!r}")
                if value is not None:
                    values[key] = value
        values["experiment"] = experiment
        return cls(**values)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ResultRow:
    """
    One fitted estimate.

    Rows are keyed by (experiment, trial, round, strategy, value). `value` is
    the l_inf distance or uniform dosage value of the sweep, 0 elsewhere.
    """

    experiment: str
    trial: int
    round: int
    value: float
    strategy: str
    mse: float
    ols: int
    ridge: int
    null: int
    seed: int

    @classmethod
    def from_fit(
        cls,
        experiment: str,
        trial: int,
        round: int,
        value: float,
        strategy: str,
        result: EstimationResult,
        beta_true: np.ndarray,
        seed: int,
    ) -> "ResultRow":
        return cls(
            experiment=experiment,
            trial=trial,
            round=round,
            value=float(value),
            strategy=strategy,
            mse=mse(result.beta_hat, beta_true),
            ols=int(result.branch is Branch.OLS),
            ridge=int(result.branch is Branch.RIDGE),
            null=int(result.branch is Branch.NULL),
            seed=seed,
        )

    @property
    def key(self) -> Tuple[str, int, int, str, float]:
        return (self.experiment, self.trial, self.round, self.strategy, self.value)


def deterministic_seed(*parts: object) -> int:
    """64-bit seed from the SHA-256 of the '|'-joined parts"""
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    return int(digest, 16)


def sample_dosage_at_distance(
    center: np.ndarray,
    r: float,
    rng: np.random.Generator,
    budget: Optional[float] = None,
    max_attempts: int = MAX_DISTANCE_ATTEMPTS,
) -> np.ndarray:
    """
    Dosage at l_inf distance exactly r from center.

    Every coordinate is drawn uniformly from [c_i - r, c_i + r] intersected with
    [0, 1], then one uniformly chosen coordinate is moved to c_i +- r (a sign
    that stays inside [0, 1]). Draws violating sum_i d_i <= budget are rejected.

    Raises:
        ParameterError: when no feasible dosage exists or none was found
    """
    center = np.asarray(center, dtype=np.float64)
    budget_tol = 1e-9
    if r == 0:
        if budget is not None and center.sum() > budget + budget_tol:
            raise ParameterError(f"center violates the budget: sum {center.sum():.6g} > {budget}")
        return center.copy()

    feasible_signs = [
        [s for s in (-1.0, 1.0) if 0.0 <= c + s * r <= 1.0]
        for c in center
    ]
    if not any(feasible_signs):
        raise ParameterError(f"no coordinate can move by {r} from the center inside [0, 1]")

    low = np.clip(center - r, 0.0, 1.0)
    high = np.clip(center + r, 0.0, 1.0)
    for _ in range(max_attempts):
        d = rng.uniform(low, high)
        j = int(rng.integers(center.size))
        if not feasible_signs[j]:
            continue
        d[j] = center[j] + feasible_signs[j][int(rng.integers(len(feasible_signs[j])))] * r
        if budget is None or d.sum() <= budget + budget_tol:
            return d
    raise ParameterError(f"no dosage at distance {r} satisfies the budget {budget} after {max_attempts} draws")


def run_trials(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Map fn over items, on a thread pool when workers > 1; output keeps input order"""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def flatten(groups: Iterable[Iterable[T]]) -> List[T]:
    return [item for group in groups for item in group]


def fit(
    cfg: RunConfig,
    features: np.ndarray,
    Y: np.ndarray,
    B: float,
    sigma: float,
    weights: Optional[np.ndarray] = None,
) -> EstimationResult:
    """Run the configured estimator"""
    return ESTIMATORS[cfg.estimator](features, Y, B, sigma, weights=weights)


def observe_at(
    model: OutcomeModel,
    index: SubsetIndex,
    dosage: np.ndarray,
    n: int,
    rng: np.random.Generator,
    sigma: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Sample n assignments at a dosage and observe them; returns (features, Y) on the given index"""
    assignments = sample_assignments(dosage, n, rng)
    return observe_assignments(model, index, assignments, rng, sigma)


def observe_assignments(
    model: OutcomeModel,
    index: SubsetIndex,
    assignments: np.ndarray,
    rng: np.random.Generator,
    sigma: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    if sigma is not None and sigma != model.sigma:
        model = replace(model, sigma=sigma)
    Y = observe(model, assignments, rng)
    return design_matrix(assignments, index).features, Y


class ExperimentGroup:
    """Base for a family of harness experiments; subclasses list theirs in commands()"""

    def __init__(self, harness):
        self.harness = harness

    def commands(self) -> Dict[str, Callable[[RunConfig], Any]]:
        raise NotImplementedError
