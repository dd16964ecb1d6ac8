from dataclasses import dataclass
from typing import Dict, Type

from cdp_lab.core import TabularCDP
from cdp_lab.errors import SizeLimitError


@dataclass(frozen=True)
class Limits:
    """Desk-scale caps on generated instances; experiments may override them"""

    max_states: int = 16
    max_observations: int = 64
    max_class_size: int = 256
    max_tree_leaves: int = 4096

    def check(self, what: str, value: int, cap: int) -> None:
        if value > cap:
            raise SizeLimitError(f"{what} = {value} exceeds the cap of {cap}")


DEFAULT_LIMITS = Limits()


class EnvironmentGenerator:
    """Base class for environment generators"""

    name: str = ""

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        """
        Build an environment

        Args:
            seed: Seed of the generator's random stream
            limits: Size caps to enforce
            params: Family-specific parameters

        Returns: The generated environment
        """
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.__class__.__name__


# Registry of available generators
_generator_registry: Dict[str, Type[EnvironmentGenerator]] = {}


def register_generator(cls: Type[EnvironmentGenerator]):
    """Decorator to register an environment generator"""
    _generator_registry[cls.name] = cls
    return cls


def get_available_generators() -> Dict[str, Type[EnvironmentGenerator]]:
    """Get all registered generators"""
    from . import lower_bounds  # Import modules containing generators to register them
    from . import mdp  # Import modules containing generators to register them
    from . import pomdp  # Import modules containing generators to register them

    return dict(_generator_registry)


def get_generator(name: str) -> EnvironmentGenerator:
    generators = get_available_generators()
    if name not in generators:
        raise KeyError(f"Unknown environment generator '{name}'; choose from {sorted(generators)}")
    return generators[name]()
