"""Services layer for the demand-response simulator.

Contains the optimisation loop, the attack model, detection, isolation,
mitigation, corpus generation and experiment runs. Nothing here parses
command-line arguments or configures logging.
"""

from .attacks import AttackHook, AttackKind, AttackSpec, forge
from .clustering import ClusterModel, fit_clusters
from .detection import ClassifierKind, CsrConfig, DetectionReport, classify, spectral_saliency
from .experiments import Scenario, run_detection, run_isolation, run_simulation, simulate_day
from .generator import Corpus, GeneratorConfig, generate
from .isolation import IsolationConfig, IsolationMethod, IsolationVerdict, isolate
from .mitigation import MitigationHook, MitigationMethod, mape
from .pricing import PriceModel, price_signal
from .scheduler import DrOutcome, run_dr

__all__ = [
    "AttackHook",
    "AttackKind",
    "AttackSpec",
    "ClassifierKind",
    "ClusterModel",
    "Corpus",
    "CsrConfig",
    "DetectionReport",
    "DrOutcome",
    "GeneratorConfig",
    "IsolationConfig",
    "IsolationMethod",
    "IsolationVerdict",
    "MitigationHook",
    "MitigationMethod",
    "PriceModel",
    "Scenario",
    "classify",
    "fit_clusters",
    "forge",
    "generate",
    "isolate",
    "mape",
    "price_signal",
    "run_detection",
    "run_dr",
    "run_isolation",
    "run_simulation",
    "simulate_day",
    "spectral_saliency",
]
