"""Resilient demand-response simulator public package surface.

The application is wired through ``app.__main__``, but the value types,
persistence helpers and experiment settings are re-exported here for tests
and external tooling.
"""

__version__ = "0.4.0"

from .errors import ConfigError, ContractError, DataFormatError, DrSimError, FormatVersionError
from .models import DemandForecast, House, Appliance, Schedule, SlotGrid, PriceSignal
from .settings import ExperimentSettings, load_experiment_settings, save_experiment_settings
from .storage import ExperimentPaths, load_cluster_model, load_corpus, save_cluster_model, save_corpus

__all__ = [
    "__version__",
    "Appliance",
    "ConfigError",
    "ContractError",
    "DataFormatError",
    "DemandForecast",
    "DrSimError",
    "ExperimentPaths",
    "ExperimentSettings",
    "FormatVersionError",
    "House",
    "PriceSignal",
    "Schedule",
    "SlotGrid",
    "load_cluster_model",
    "load_corpus",
    "load_experiment_settings",
    "save_cluster_model",
    "save_corpus",
    "save_experiment_settings",
]
