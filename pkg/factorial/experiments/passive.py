import logging
from typing import List, Optional, Tuple

import numpy as np

from factorial.core.combinatorics import SubsetIndex
from factorial.core.design import Dosage
from factorial.core.model import OutcomeModel
from factorial.experiments.base import (
    ExperimentGroup,
    ResultRow,
    RunConfig,
    deterministic_seed,
    fit,
    observe_at,
    run_trials,
    sample_dosage_at_distance,
)
from factorial.policies.passive import passive_dosage
from factorial.utils.result_log import ResultLog

logger = logging.getLogger(__name__)


class PassiveExperiments(ExperimentGroup):
    """Single-round sweeps around a center dosage"""

    def commands(self):
        return {
            "passive_sweep": self.run_passive_sweep,
            "uniform_sweep": self.run_uniform_sweep,
        }

    def run_passive_sweep(self, cfg: RunConfig) -> ResultLog:
        """
        Estimation error of dosages at increasing l_inf distance from the half dosage.

        Each distance gets `dosages_per_distance` dosages with `trials`
        observation sets each; trial j * trials + t is set t of dosage j. Trial
        seeds do not depend on the distance, so every distance reuses the same
        uniforms and noise.
        """
        model = self.harness.model_for(cfg, cfg.k)
        return distance_sweep(cfg, model, passive_dosage(cfg.p).d, model.index)

    def run_uniform_sweep(self, cfg: RunConfig) -> ResultLog:
        """
        Every treatment at the same dosage value, for each value of the grid.

        Trial t draws from the same seed at every grid value, so assignments
        are thresholded from the same uniforms and the values are compared
        on common random numbers.
        """
        model = self.harness.model_for(cfg, cfg.k)
        log = ResultLog(cfg.experiment)
        B = cfg.B or model.B

        def trial(item: Tuple[float, int]) -> ResultRow:
            value, t = item
            seed = deterministic_seed(cfg.master_seed, cfg.experiment, t, 0)
            rng = np.random.default_rng(seed)
            features, Y = observe_at(model, model.index, Dosage.uniform(cfg.p, value), cfg.n, rng)
            result = fit(cfg, features, Y, B, cfg.sigma)
            return ResultRow.from_fit(cfg.experiment, t, 0, value, "uniform", result, model.beta, seed)

        items = [(value, t) for value in cfg.dosage_grid for t in range(cfg.trials)]
        log.extend(run_trials(trial, items, cfg.workers))
        logger.info(f"Uniform sweep over {len(cfg.dosage_grid)} values x {cfg.trials} trials done")
        return log


def distance_sweep(
    cfg: RunConfig,
    model: OutcomeModel,
    center: np.ndarray,
    index: SubsetIndex,
    beta_ref: Optional[np.ndarray] = None,
    budget: Optional[float] = None,
    strategy: str = "passive",
) -> ResultLog:
    """
    Shared body of the distance sweeps.

    Args:
        cfg: run configuration
        model: data-generating model
        center: dosage the distances are measured from
        index: the estimator's subset index (may be smaller than the model's)
        beta_ref: coefficients the estimate is scored against; model.beta by default
        budget: reject sampled dosages with sum_i d_i above it
        strategy: label written to the rows
    """
    log = ResultLog(cfg.experiment)
    beta_ref = model.beta if beta_ref is None else beta_ref
    B = cfg.B or model.B

    for r in cfg.distances:
        dosages = []
        for j in range(cfg.dosages_per_distance):
            rng = np.random.default_rng(deterministic_seed(cfg.master_seed, cfg.experiment, "dosage", r, j))
            dosages.append(sample_dosage_at_distance(center, r, rng, budget=budget))

        def trial(item: Tuple[int, int]) -> ResultRow:
            j, t = item
            number = j * cfg.trials + t
            seed = deterministic_seed(cfg.master_seed, cfg.experiment, number, 0)
            rng = np.random.default_rng(seed)
            features, Y = observe_at(model, index, dosages[j], cfg.n, rng)
            result = fit(cfg, features, Y, B, cfg.sigma)
            return ResultRow.from_fit(cfg.experiment, number, 0, r, strategy, result, beta_ref, seed)

        items = [(j, t) for j in range(cfg.dosages_per_distance) for t in range(cfg.trials)]
        rows: List[ResultRow] = run_trials(trial, items, cfg.workers)
        log.extend(rows)
        logger.info(f"{cfg.experiment}: distance {r} mean mse {np.mean([row.mse for row in rows]):.4g} "
                    f"over {len(rows)} observation sets")
    return log

