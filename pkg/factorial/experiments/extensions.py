import logging

import numpy as np
import pandas as pd

from factorial.core.combinatorics import enumerate_subsets
from factorial.core.design import Dosage
from factorial.core.model import truncate
from factorial.experiments.base import ExperimentGroup, RunConfig, deterministic_seed
from factorial.experiments.passive import distance_sweep
from factorial.policies.emulation import emulate_dosage, kl_divergence, product_entropy_gap, read_distribution
from factorial.policies.passive import constrained_passive_dosage, passive_dosage
from factorial.utils.result_log import ResultLog

logger = logging.getLogger(__name__)


class ExtensionExperiments(ExperimentGroup):
    """Supply limits, model misspecification and distribution emulation"""

    def commands(self):
        return {
            "constrained_sweep": self.run_constrained_sweep,
            "misspecified_sweep": self.run_misspecified_sweep,
            "emulate": self.run_emulate,
        }

    def run_constrained_sweep(self, cfg: RunConfig) -> ResultLog:
        """Distance sweep around the uniform L/p dosage keeping sum_i d_i <= L"""
        model = self.harness.model_for(cfg, cfg.k)
        center = constrained_passive_dosage(cfg.p, cfg.L, cfg.k).d
        return distance_sweep(cfg, model, center, model.index, budget=cfg.L, strategy="constrained")

    def run_misspecified_sweep(self, cfg: RunConfig) -> ResultLog:
        """
        Passive sweep fitting order k_assumed to a full-degree model.

        Errors are measured against the degree-k_assumed truncation of the true
        coefficients, the part of the model the estimator can represent.
        """
        model = self.harness.model_for(cfg, cfg.p)
        index = enumerate_subsets(cfg.p, cfg.k_assumed)
        beta_ref = truncate(model, cfg.k_assumed).beta
        return distance_sweep(cfg, model, passive_dosage(cfg.p).d, index, beta_ref=beta_ref, strategy="misspecified")

    def run_emulate(self, cfg: RunConfig) -> ResultLog:
        """Match the marginals of a target distribution and compare with random dosages"""
        log = ResultLog(cfg.experiment)
        q = read_distribution(cfg.distribution, cfg.p)
        p = int(np.log2(q.size))

        emulated = emulate_dosage(q)
        achieved = kl_divergence(q, emulated)
        report = [dict(candidate="emulated", kl=achieved, dosage=str(emulated))]

        rng = np.random.default_rng(deterministic_seed(cfg.master_seed, cfg.experiment, "comparators"))
        for c in range(cfg.comparators):
            comparator = Dosage(rng.random(p))
            report.append(dict(candidate=f"random_{c}", kl=kl_divergence(q, comparator), dosage=str(comparator)))

        frame = pd.DataFrame(report, columns=["candidate", "kl", "dosage"])
        random_kl = frame["kl"].iloc[1:]
        log.add_table("emulate", frame)
        log.add_table("summary", pd.DataFrame([dict(
            p=p,
            emulated_kl=achieved,
            product_entropy_gap=product_entropy_gap(q),
            min_random_kl=float(random_kl.min()),
            mean_random_kl=float(random_kl.mean()),
        )]))

        if achieved > float(random_kl.min()):
            logger.warning(f"Emulated dosage KL {achieved:.6g} exceeds a random comparator ({random_kl.min():.6g})")
        logger.info(f"Emulated dosage {emulated} reaches KL {achieved:.6g} nats")
        return log
