import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from dotenv import dotenv_values, load_dotenv

load_dotenv()

from config.settings import HarnessConfig
from factorial.core.errors import FactorialError
from factorial.core.model import OutcomeModel, dump_model, generate_model, load_model
from factorial.experiments.active import ActiveExperiments
from factorial.experiments.base import EXPERIMENTS, ESTIMATORS, STRATEGIES, RunConfig, deterministic_seed
from factorial.experiments.extensions import ExtensionExperiments
from factorial.experiments.fractional import FractionalExperiments
from factorial.experiments.passive import PassiveExperiments
from factorial.utils.result_log import ResultLog

logger = logging.getLogger(__name__)


def configure_logging():
    """Root logger: file plus console, as configured in HarnessConfig"""
    logging.basicConfig(
        level=logging.DEBUG if HarnessConfig.DEBUG_MODE else getattr(logging, HarnessConfig.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(HarnessConfig.LOG_FILE),
            logging.StreamHandler()
        ]
    )


class ExperimentHarness:
    def __init__(self):
        self.commands: Dict[str, Callable[[RunConfig], ResultLog]] = {}

        self.add_group(PassiveExperiments(self))
        self.add_group(ActiveExperiments(self))
        self.add_group(ExtensionExperiments(self))
        self.add_group(FractionalExperiments(self))

    def add_group(self, group):
        for name, command in group.commands().items():
            if name in self.commands:
                raise ValueError(f"experiment {name} registered twice")
            self.commands[name] = command

    def model_for(self, cfg: RunConfig, k: int) -> OutcomeModel:
        """
        The run's data-generating model, fixed for every trial

        Loaded from cfg.model when given, else drawn from a seed derived from
        the master seed and the experiment. Noise always comes from cfg.sigma.
        """
        if cfg.model:
            model = load_model(cfg.model)
            if model.p != cfg.p or model.k != k:
                raise FactorialError(f"model file {cfg.model} has p={model.p}, k={model.k}; run expects p={cfg.p}, k={k}")
            model = OutcomeModel(index=model.index, beta=model.beta, sigma=cfg.sigma, B=model.B)
            logger.info(f"Loaded model from {cfg.model}")
        else:
            seed = deterministic_seed(cfg.master_seed, cfg.experiment, "model")
            model = generate_model(cfg.p, k, seed, sigma=cfg.sigma)

        if cfg.save_model:
            path = Path(cfg.out) / f"{cfg.experiment}.model"
            path.parent.mkdir(parents=True, exist_ok=True)
            dump_model(model, path)
            logger.info(f"Saved model to {path}")
        return model

    def run_experiment(self, cfg: RunConfig) -> Path:
        """Run one experiment and write its outputs; returns the main CSV path"""
        logger.info(f"Running {cfg.experiment} (seed={cfg.master_seed}, out={cfg.out})")
        log = self.commands[cfg.experiment](cfg)
        return log.export(cfg.out, cfg.as_dict())

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="factorial",
            description="Probabilistic factorial design simulations",
        )
        subparsers = parser.add_subparsers(dest="experiment", required=True)
        for name in EXPERIMENTS:
            sub = subparsers.add_parser(name, help=f"run the {name} experiment")
            sub.add_argument("--config", help="key=value file; flags override its values")
            sub.add_argument("--seed", dest="master_seed", type=int, help=f"master seed (default {HarnessConfig.MASTER_SEED})")
            sub.add_argument("--out", help=f"output directory (default {HarnessConfig.OUT_DIR})")
            sub.add_argument("--p", type=int, help="number of treatments")
            sub.add_argument("--k", type=int, help="interaction order")
            sub.add_argument("--k-assumed", dest="k_assumed", type=int, help="estimator order for misspecified_sweep")
            sub.add_argument("--n", type=int, help="samples per round")
            sub.add_argument("--rounds", type=int, help="rounds per trial")
            sub.add_argument("--sigma", type=float, help="noise standard deviation")
            sub.add_argument("--L", type=float, help="supply budget sum_i d_i <= L")
            sub.add_argument("--trials", type=int, help="observation sets per dosage or trials per strategy")
            sub.add_argument("--dosages-per-distance", dest="dosages_per_distance", type=int)
            sub.add_argument("--distances", help="comma-separated l_inf distances")
            sub.add_argument("--dosage-grid", dest="dosage_grid", help="comma-separated uniform dosage values")
            sub.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)}")
            sub.add_argument("--estimator", choices=sorted(ESTIMATORS))
            sub.add_argument("--B", type=float, help="truncation bound passed to the estimator")
            sub.add_argument("--round-sigmas", dest="round_sigmas", help="comma-separated noise level per round")
            sub.add_argument("--workers", type=int, help=f"trial threads (default {HarnessConfig.WORKERS})")
            sub.add_argument("--model", help="model file to load instead of generating one")
            sub.add_argument("--save-model", dest="save_model", action="store_const", const=True)
            sub.add_argument("--distribution", help="target distribution file for emulate")
            sub.add_argument("--comparators", type=int, help="random dosages compared in emulate")
        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Parse arguments, run the experiment and return an exit status"""
        args = vars(self.build_parser().parse_args(argv))
        experiment = args.pop("experiment")
        config_path = args.pop("config")

        try:
            if config_path and not Path(config_path).is_file():
                raise FileNotFoundError(f"config file {config_path} not found")
            file_values = dotenv_values(config_path) if config_path else {}
            cfg = RunConfig.resolve(experiment, file_values, args)
            path = self.run_experiment(cfg)
            logger.info(f"Results written to {path}")
            return 0
        except FactorialError as e:
            logger.error(f"{experiment} failed: {e}")
            return 2
        except OSError as e:
            logger.error(f"{experiment} could not read or write its files: {e}")
            return 1


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to run the harness"""
    configure_logging()
    if not HarnessConfig.validate_config():
        logger.error("Invalid harness configuration")
        return 2
    return ExperimentHarness().run(argv)


if __name__ == "__main__":
    sys.exit(main())
