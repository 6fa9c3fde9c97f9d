import logging
from typing import List

import numpy as np

from factorial.core.design import fractional_design, resolution_v_generators
from factorial.experiments.base import (
    ExperimentGroup,
    ResultRow,
    RunConfig,
    deterministic_seed,
    fit,
    flatten,
    observe_assignments,
    observe_at,
    run_trials,
)
from factorial.policies.passive import passive_dosage
from factorial.utils.result_log import ResultLog

logger = logging.getLogger(__name__)


class FractionalExperiments(ExperimentGroup):
    """Resolution V fractional factorial against the half dosage"""

    def commands(self):
        return {"fractional_compare": self.run_fractional_compare}

    def run_fractional_compare(self, cfg: RunConfig) -> ResultLog:
        """
        Fit the same model from the fixed fraction and from n half-dosage samples.

        The fraction is tiled or cut to n rows when n differs from its size.
        """
        model = self.harness.model_for(cfg, cfg.k)
        index = model.index
        log = ResultLog(cfg.experiment)

        replicate = fractional_design(cfg.p, resolution_v_generators(cfg.p))
        rows = replicate if cfg.n == replicate.shape[0] else np.resize(replicate, (cfg.n, cfg.p))
        log.add_design("fractional_design", rows)
        half = passive_dosage(cfg.p).d
        B = cfg.B or model.B

        def trial(t: int) -> List[ResultRow]:
            seed = deterministic_seed(cfg.master_seed, cfg.experiment, t, 0)
            rng = np.random.default_rng(seed)
            features, Y = observe_assignments(model, index, rows, rng)
            fractional = fit(cfg, features, Y, B, cfg.sigma)
            features, Y = observe_at(model, index, half, cfg.n, rng)
            passive = fit(cfg, features, Y, B, cfg.sigma)
            return [
                ResultRow.from_fit(cfg.experiment, t, 0, 0.0, "fractional", fractional, model.beta, seed),
                ResultRow.from_fit(cfg.experiment, t, 0, 0.0, "half", passive, model.beta, seed),
            ]

        log.extend(flatten(run_trials(trial, list(range(cfg.trials)), cfg.workers)))

        summary = log.summary()
        for _, cell in summary.iterrows():
            logger.info(f"fractional_compare: {cell['strategy']} mse {cell['mean']:.4f} ± {cell['std']:.4f} "
                        f"over {int(cell['count'])} trials")
        return log
