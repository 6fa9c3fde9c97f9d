import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from factorial.core.design import fractional_design, resolution_v_generators
from factorial.experiments.base import (
    ExperimentGroup,
    ResultRow,
    RunConfig,
    deterministic_seed,
    fit,
    observe_assignments,
    observe_at,
    run_trials,
)
from factorial.policies.active import AcquisitionOptions, ExperimentState, acquire, project_feasible
from factorial.policies.passive import constrained_passive_dosage, passive_dosage
from factorial.utils.result_log import ResultLog

logger = logging.getLogger(__name__)


class ActiveExperiments(ExperimentGroup):
    """Multi-round comparison of dosage strategies"""

    def commands(self):
        return {"active_compare": self.run_active_compare}

    def run_active_compare(self, cfg: RunConfig) -> ResultLog:
        """
        Run every strategy for `rounds` rounds per trial, refitting on all data so far.

        Strategies:
            optimal: half dosage in round 1, then the acquisition minimiser
            random: a fresh uniform random dosage each round
            half: the half dosage every round
            partial: one replicate of the resolution V fraction per round

        With a supply budget L, `optimal` and `random` are kept feasible and
        `half` becomes the uniform L/p dosage. With per-round noise levels the
        acquisition and the estimator are weighted by 1/sigma_t.

        The observation seed of a round depends on the trial and round only,
        so every strategy sees the same uniforms and noise and the arms are
        compared on common random numbers. Round 1 of `optimal` and `half`
        is therefore the same data.
        """
        model = self.harness.model_for(cfg, cfg.k)
        index = model.index
        log = ResultLog(cfg.experiment)

        partial_rows = None
        if "partial" in cfg.strategies:
            replicate = fractional_design(cfg.p, resolution_v_generators(cfg.p))
            partial_rows = np.resize(replicate, (cfg.n, cfg.p))
            log.add_design("partial_design", partial_rows)

        hetero = cfg.round_sigmas is not None
        sigmas = cfg.round_sigmas if hetero else (cfg.sigma,) * cfg.rounds
        B = cfg.B or model.B
        opts = AcquisitionOptions.default_for(cfg.p, budget=cfg.L)
        if cfg.L is not None:
            baseline = constrained_passive_dosage(cfg.p, cfg.L, cfg.k).d
        else:
            baseline = passive_dosage(cfg.p).d

        def arm(item: Tuple[str, int]) -> Tuple[List[ResultRow], List[Dict]]:
            strategy, t = item
            state = ExperimentState(index, cfg.n)
            features_all, Y_all, weights_all = [], [], []
            rows, acquisitions = [], []

            for rnd in range(1, cfg.rounds + 1):
                sigma_t = sigmas[rnd - 1]
                seed = deterministic_seed(cfg.master_seed, cfg.experiment, t, rnd)
                rng = np.random.default_rng(seed)

                if strategy == "partial":
                    features, Y = observe_assignments(model, index, partial_rows, rng, sigma_t)
                else:
                    if strategy == "optimal" and rnd > 1:
                        acquisition_rng = np.random.default_rng(
                            deterministic_seed(cfg.master_seed, cfg.experiment, t, rnd, "acquire")
                        )
                        scale = 1.0 / sigma_t ** 2 if hetero else 1.0
                        result = acquire(state, opts, acquisition_rng, scale=scale)
                        d = result.dosage.d
                        acquisitions.append(dict(
                            trial=t,
                            round=rnd,
                            objective=result.objective,
                            converged=result.converged,
                            restart=result.restart,
                            iterations=result.iterations,
                            dosage=str(result.dosage),
                        ))
                    elif strategy == "random":
                        dosage_rng = np.random.default_rng(
                            deterministic_seed(cfg.master_seed, cfg.experiment, t, rnd, "random")
                        )
                        d = project_feasible(dosage_rng.random(cfg.p), cfg.L)
                    else:
                        d = baseline
                    features, Y = observe_at(model, index, d, cfg.n, rng, sigma_t)

                state.add_round(features, sigma_t if hetero else None)
                features_all.append(features)
                Y_all.append(Y)
                weights_all.append(np.full(cfg.n, 1.0 / sigma_t))

                X = np.vstack(features_all)
                if hetero:
                    estimate = fit(cfg, X, np.concatenate(Y_all), B, 1.0, weights=np.concatenate(weights_all))
                else:
                    estimate = fit(cfg, X, np.concatenate(Y_all), B, cfg.sigma)
                rows.append(ResultRow.from_fit(cfg.experiment, t, rnd, 0.0, strategy, estimate, model.beta, seed))
            return rows, acquisitions

        items = [(strategy, t) for strategy in cfg.strategies for t in range(cfg.trials)]
        acquisitions = []
        for rows, diagnostics in run_trials(arm, items, cfg.workers):
            log.extend(rows)
            acquisitions.extend(diagnostics)
        if acquisitions:
            log.add_table("acquisitions", pd.DataFrame(acquisitions))
            not_converged = sum(not a["converged"] for a in acquisitions)
            if not_converged:
                logger.warning(f"{not_converged} of {len(acquisitions)} acquisitions stopped at the iteration cap")

        for strategy in cfg.strategies:
            final = log.cell_mean(strategy=strategy, round=cfg.rounds)
            logger.info(f"active_compare: {strategy} mean mse after round {cfg.rounds} = {final:.4g}")
        return log
