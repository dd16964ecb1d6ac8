from typing import Dict, Optional, Type

from rich.progress import Progress, TaskID

from cdp_lab.harness.config import ExperimentConfig
from cdp_lab.harness.output import SeedOutcome


class Experiment:
    """Base class for experiment kinds"""

    kind: str = ""

    def run_seed(
        self,
        config: ExperimentConfig,
        seed: int,
        progress: Optional[Progress] = None,
        task: Optional[TaskID] = None,
    ) -> SeedOutcome:
        """
        Run the experiment's pipeline for one seed

        Returns: The seed's outcome; failures are recorded in it rather than raised
        """
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.__class__.__name__


# Registry of available experiments
_experiment_registry: Dict[str, Type[Experiment]] = {}


def register_experiment(cls: Type[Experiment]):
    """Decorator to register an experiment kind"""
    _experiment_registry[cls.kind] = cls
    return cls


def get_available_experiments() -> Dict[str, Type[Experiment]]:
    """Get all registered experiments"""
    from . import experiments  # Import modules containing experiments to register them

    return dict(_experiment_registry)


def get_experiment(kind: str) -> Experiment:
    experiments = get_available_experiments()
    if kind not in experiments:
        raise KeyError(f"Unknown experiment kind '{kind}'; choose from {sorted(experiments)}")
    return experiments[kind]()
