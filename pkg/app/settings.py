"""Experiment settings persistence helpers.

An experiment is described by one JSON document. Every section is optional
and every key has a default; unknown keys are ignored. Values are
normalised by the ``_normalize_*`` helpers below and anything that cannot
be normalised raises ``ConfigError`` naming the offending key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence, TypeVar

from .constants import (
    DEFAULT_HISTORY_WINDOW,
    DEFAULT_PRICE_BASE,
    DEFAULT_PRICE_SLOPE,
    DEFAULT_SALIENCY_WINDOW,
    DEFAULT_THRESHOLD_PERCENTILE,
    FORMAT_VERSION,
)
from .errors import ConfigError
from .models import SlotGrid
from .services.attacks import AttackKind, AttackStrategy
from .services.detection import ClassifierKind, CsrConfig, SpectralOrder
from .services.experiments import DetectionPlan, Scenario, SimulationPlan
from .services.generator import GeneratorConfig
from .services.isolation import IsolationConfig, IsolationMethod
from .services.mitigation import MitigationMethod, ScreeningMode
from .services.pricing import PriceForm, PriceModel
from .services.scheduler import DrConfig, ResponseMode
from .storage import atomic_write_text

E = TypeVar("E", bound=StrEnum)
Normalizer = Callable[[Any, str], Any]

# Command-line spelling of the isolation-path beam search
ISOLATOR_ALIASES = {"beam": IsolationMethod.ISOLATION_PATH.value}


@dataclass(frozen=True, slots=True)
class PricingSettings:
    """Price curve; ``reference_demand=None`` scales it to each day's mean genuine demand."""

    form: PriceForm = PriceForm.QUADRATIC
    base: float = DEFAULT_PRICE_BASE
    slope: float = DEFAULT_PRICE_SLOPE
    reference_demand: float | None = None

    @property
    def auto_reference(self) -> bool:
        return self.reference_demand is None

    def price_model(self) -> PriceModel:
        return PriceModel(self.form, self.base, self.slope, self.reference_demand or 1.0)


@dataclass(frozen=True, slots=True)
class DetectorSettings:
    """Classifier choice; ``threshold=None`` calibrates on the train split."""

    classifier: ClassifierKind = ClassifierKind.CSR
    q: int = DEFAULT_SALIENCY_WINDOW
    k: int | None = None
    percentile: float = DEFAULT_THRESHOLD_PERCENTILE
    order: SpectralOrder = SpectralOrder.AVERAGED_MINUS_LOG
    threshold: float | None = None

    def csr_config(self) -> CsrConfig:
        cfg = CsrConfig(q=self.q, k=self.k, order=self.order, percentile=self.percentile)
        return cfg if self.threshold is None else cfg.with_threshold(self.threshold)


@dataclass(frozen=True, slots=True)
class IsolationSettings:
    isolator: IsolationMethod = IsolationMethod.ISOLATION_PATH
    config: IsolationConfig = field(default_factory=IsolationConfig)


@dataclass(frozen=True, slots=True)
class MitigationSettings:
    """Rectification method (``None`` disables mitigation) and screening."""

    method: MitigationMethod | None = None
    history_window: int = DEFAULT_HISTORY_WINDOW
    screening: ScreeningMode = ScreeningMode.INITIAL


@dataclass(frozen=True, slots=True)
class SimulationSettings:
    """Scenario to simulate; ``days=None`` selects every attacked test day."""

    scenario: Scenario = Scenario.ATTACK
    days: tuple[int, ...] | None = None


@dataclass(frozen=True, slots=True)
class ExperimentSettings:
    """Everything one experiment run needs."""

    grid: SlotGrid = field(default_factory=SlotGrid)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    pricing: PricingSettings = field(default_factory=PricingSettings)
    dr: DrConfig = field(default_factory=DrConfig)
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    isolation: IsolationSettings = field(default_factory=IsolationSettings)
    mitigation: MitigationSettings = field(default_factory=MitigationSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        # One seed drives generation, clustering and isolation
        object.__setattr__(self, "generator", replace(self.generator, seed=self.seed))
        object.__setattr__(
            self,
            "isolation",
            replace(self.isolation, config=replace(self.isolation.config, seed=self.seed)),
        )

    def with_overrides(
        self,
        *,
        seed: int | None = None,
        workers: int | None = None,
        classifier: ClassifierKind | str | None = None,
        isolator: IsolationMethod | str | None = None,
        method: MitigationMethod | None | str = "keep",
        scenario: Scenario | str | None = None,
        k: int | None = None,
        days: Sequence[int] | None = None,
    ) -> ExperimentSettings:
        """Apply command-line overrides; ``None`` leaves a value unchanged.

        ``method`` uses the string ``"keep"`` for "unchanged" since ``None``
        is a valid choice that disables mitigation.
        """
        updated = self
        if seed is not None:
            updated = replace(updated, seed=_normalize_seed(seed, "seed"))
        if workers is not None:
            updated = replace(updated, workers=_normalize_int(workers, "workers", minimum=0))
        if classifier is not None:
            detector = replace(
                updated.detector,
                classifier=_normalize_choice(classifier, "detector.classifier", ClassifierKind),
            )
            updated = replace(updated, detector=detector)
        if k is not None:
            detector = replace(updated.detector, k=_normalize_int(k, "detector.k", minimum=1))
            updated = replace(updated, detector=detector)
        if isolator is not None:
            isolation = replace(updated.isolation, isolator=_normalize_isolator(isolator, "isolation.isolator"))
            updated = replace(updated, isolation=isolation)
        if method != "keep":
            mitigation = replace(updated.mitigation, method=_normalize_method(method, "mitigation.method"))
            updated = replace(updated, mitigation=mitigation)
        if scenario is not None or days is not None:
            simulation = updated.simulation
            if scenario is not None:
                simulation = replace(
                    simulation, scenario=_normalize_choice(scenario, "simulation.scenario", Scenario)
                )
            if days is not None:
                simulation = replace(simulation, days=_normalize_days(list(days), "simulation.days"))
            updated = replace(updated, simulation=simulation)
        return updated

    def detection_plan(self, threshold: float | None = None) -> DetectionPlan:
        csr = self.detector.csr_config()
        if threshold is not None:
            csr = csr.with_threshold(threshold)
        return DetectionPlan(self.detector.classifier, csr)

    def simulation_plan(self, detection: DetectionPlan) -> SimulationPlan:
        return SimulationPlan(
            price_model=self.pricing.price_model(),
            auto_reference=self.pricing.auto_reference,
            dr=self.dr,
            detection=detection,
            isolator=self.isolation.isolator,
            isolation=self.isolation.config,
            method=self.mitigation.method,
            history_window=self.mitigation.history_window,
            screening=self.mitigation.screening,
        )


def _normalize_int(value: Any, key: str, *, minimum: int | None = None) -> int:
    """Normalize integer values loaded from JSON; integral floats are accepted."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if isinstance(value, float) and not value.is_integer():
        raise ConfigError(key, f"expected an integer, got {value!r}")
    number = int(value)
    if minimum is not None and number < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {number}")
    return number


def _normalize_seed(value: Any, key: str) -> int:
    seed = _normalize_int(value, key, minimum=0)
    if seed >= 2**64:
        raise ConfigError(key, f"must fit in 64 bits, got {seed}")
    return seed


def _normalize_float(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    number = float(value)
    if number != number or number in (float("inf"), float("-inf")):
        raise ConfigError(key, f"expected a finite number, got {value!r}")
    return number


def _normalize_optional_float(value: Any, key: str) -> float | None:
    return None if value is None else _normalize_float(value, key)


def _normalize_optional_int(value: Any, key: str) -> int | None:
    return None if value is None else _normalize_int(value, key)


def _normalize_bool(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(key, f"expected true or false, got {value!r}")
    return value


def _normalize_choice(value: Any, key: str, choices: type[E], aliases: Mapping[str, str] | None = None) -> E:
    if not isinstance(value, str):
        raise ConfigError(key, f"expected one of {[c.value for c in choices]}, got {value!r}")
    normalized = value.strip().lower()
    normalized = (aliases or {}).get(normalized, normalized)
    try:
        return choices(normalized)
    except ValueError:
        raise ConfigError(key, f"expected one of {[c.value for c in choices]}, got {value!r}") from None


def _normalize_isolator(value: Any, key: str) -> IsolationMethod:
    return _normalize_choice(value, key, IsolationMethod, ISOLATOR_ALIASES)


def _normalize_method(value: Any, key: str) -> MitigationMethod | None:
    """Method number 1..6; ``None`` or ``"none"`` disables mitigation."""
    if isinstance(value, MitigationMethod) or value is None:
        return value
    if isinstance(value, str):
        text = value.strip().lower()
        if text == "none":
            return None
        text = text.removeprefix("method-")
        if not text.isdigit():
            raise ConfigError(key, f"expected 1..6 or none, got {value!r}")
        value = int(text)
    number = _normalize_int(value, key)
    try:
        return MitigationMethod.from_number(number)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _normalize_range(value: Any, key: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(key, f"expected a [low, high] pair, got {value!r}")
    return (_normalize_float(value[0], key), _normalize_float(value[1], key))


def _normalize_int_range(value: Any, key: str) -> tuple[int, int]:
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(key, f"expected a [low, high] pair, got {value!r}")
    return (_normalize_int(value[0], key), _normalize_int(value[1], key))


def _normalize_float_list(value: Any, key: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(key, f"expected a list of numbers, got {value!r}")
    return tuple(_normalize_float(item, key) for item in value)


def _choice_list(choices: type[E]) -> Normalizer:
    def normalize(value: Any, key: str) -> tuple[E, ...]:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(_normalize_choice(item, key, choices) for item in value)

    return normalize


def _choice(choices: type[E]) -> Normalizer:
    return lambda value, key: _normalize_choice(value, key, choices)


def _normalize_days(value: Any, key: str) -> tuple[int, ...] | None:
    if value is None:
        return None
    if not isinstance(value, list):
        raise ConfigError(key, f"expected a list of day ids, got {value!r}")
    return tuple(_normalize_int(item, key, minimum=0) for item in value)


def _section(payload: Mapping[str, Any], name: str) -> dict[str, Any]:
    section = payload.get(name, {})
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(name, f"expected an object, got {type(section).__name__}")
    return section


def _build(name: str, section: Mapping[str, Any], fields: Mapping[str, Normalizer], factory: Callable[..., Any], **fixed: Any) -> Any:
    """Normalise the known keys of a section and construct its value."""
    kwargs = {
        key: normalize(section[key], f"{name}.{key}")
        for key, normalize in fields.items()
        if key in section
    }
    try:
        return factory(**kwargs, **fixed)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


_GRID_FIELDS: dict[str, Normalizer] = {
    "pricing_slots": _normalize_int,
    "scheduling_slots_per_pricing": _normalize_int,
}

_GENERATOR_FIELDS: dict[str, Normalizer] = {
    "houses": _normalize_int,
    "appliances_per_house": _normalize_int_range,
    "demand_per_slot": _normalize_range,
    "duration": _normalize_int_range,
    "penalty_factor": _normalize_range,
    "flexibility": _normalize_int_range,
    "jitter_fraction": _normalize_float,
    "jitter_slots": _normalize_int,
    "days": _normalize_int,
    "attacked_fraction": _normalize_float,
    "magnitudes": _normalize_float_list,
    "attack_kinds": _choice_list(AttackKind),
    "max_attack_slots": _normalize_int,
    "strategies": _choice_list(AttackStrategy),
    "train_fraction": _normalize_float,
    "attacker_demand": _normalize_float,
    "persistent": _normalize_bool,
}

_PRICING_FIELDS: dict[str, Normalizer] = {
    "form": _choice(PriceForm),
    "base": _normalize_float,
    "slope": _normalize_float,
    "reference_demand": _normalize_optional_float,
}

_DR_FIELDS: dict[str, Normalizer] = {
    "max_iterations": _normalize_int,
    "convergence_eps": _normalize_float,
    "response": _choice(ResponseMode),
}

_DETECTOR_FIELDS: dict[str, Normalizer] = {
    "classifier": _choice(ClassifierKind),
    "q": _normalize_int,
    "k": _normalize_optional_int,
    "percentile": _normalize_float,
    "order": _choice(SpectralOrder),
    "threshold": _normalize_optional_float,
}

_ISOLATION_FIELDS: dict[str, Normalizer] = {
    "max_subspace": _normalize_int,
    "beam_width": _normalize_int,
    "ensemble_trees": _normalize_int,
    "subsample_size": _normalize_int,
    "beam_tolerance": _normalize_float,
    "lof_neighbors": _normalize_int,
    "lof_threshold": _normalize_float,
}

_MITIGATION_FIELDS: dict[str, Normalizer] = {
    "method": _normalize_method,
    "history_window": lambda value, key: _normalize_int(value, key, minimum=2),
    "screening": _choice(ScreeningMode),
}

_SIMULATION_FIELDS: dict[str, Normalizer] = {
    "scenario": _choice(Scenario),
    "days": _normalize_days,
}


def _check_detector(settings: DetectorSettings) -> DetectorSettings:
    try:
        settings.csr_config()
    except ValueError as exc:
        raise ConfigError("detector", str(exc)) from None
    return settings


def _check_generator(cfg: GeneratorConfig) -> GeneratorConfig:
    test_days = cfg.days - cfg.train_size
    if cfg.attacked_days > test_days:
        raise ConfigError(
            "generator.attacked_fraction",
            f"{cfg.attacked_days} attacked days do not fit in a test split of {test_days} days",
        )
    return cfg


def settings_from_payload(payload: Mapping[str, Any]) -> ExperimentSettings:
    """Build settings from a parsed JSON document.

    Raises:
        ConfigError: On a bad ``format_version`` or any invalid value.
    """
    if not isinstance(payload, dict):
        raise ConfigError("<document>", "the settings document must be a JSON object")
    version = payload.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError("format_version", f"expected {FORMAT_VERSION}, got {version!r}")

    seed = _normalize_seed(payload.get("seed", 0), "seed")
    workers = _normalize_int(payload.get("workers", 1), "workers", minimum=0)

    isolation_section = _section(payload, "isolation")
    isolator = IsolationMethod.ISOLATION_PATH
    if "isolator" in isolation_section:
        isolator = _normalize_isolator(isolation_section["isolator"], "isolation.isolator")

    pricing = _build("pricing", _section(payload, "pricing"), _PRICING_FIELDS, PricingSettings)
    try:
        pricing.price_model()
    except ValueError as exc:
        raise ConfigError("pricing", str(exc)) from None

    return ExperimentSettings(
        grid=_build("grid", _section(payload, "grid"), _GRID_FIELDS, SlotGrid),
        generator=_check_generator(
            _build("generator", _section(payload, "generator"), _GENERATOR_FIELDS, GeneratorConfig, seed=seed)
        ),
        pricing=pricing,
        dr=_build("dr", _section(payload, "dr"), _DR_FIELDS, DrConfig),
        detector=_check_detector(
            _build("detector", _section(payload, "detector"), _DETECTOR_FIELDS, DetectorSettings)
        ),
        isolation=IsolationSettings(
            isolator=isolator,
            config=_build("isolation", isolation_section, _ISOLATION_FIELDS, IsolationConfig, seed=seed),
        ),
        mitigation=_build("mitigation", _section(payload, "mitigation"), _MITIGATION_FIELDS, MitigationSettings),
        simulation=_build("simulation", _section(payload, "simulation"), _SIMULATION_FIELDS, SimulationSettings),
        seed=seed,
        workers=workers,
    )


def load_experiment_settings(path: Path | None = None) -> ExperimentSettings:
    """Load experiment settings; ``None`` means all defaults.

    Raises:
        ConfigError: If the file is missing, unreadable, not JSON or invalid.
    """
    if path is None:
        return ExperimentSettings()
    try:
        content = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError("--config", f"settings file not found: {path}") from None
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc}") from None
    try:
        payload = json.loads(content)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return settings_from_payload(payload)


def _plain(value: Any) -> Any:
    if isinstance(value, StrEnum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    return value


def settings_payload(settings: ExperimentSettings) -> dict[str, Any]:
    """The full normalised document for ``settings``."""
    generator = settings.generator
    isolation = settings.isolation.config
    method = settings.mitigation.method
    return {
        "format_version": FORMAT_VERSION,
        "seed": settings.seed,
        "workers": settings.workers,
        "grid": {key: getattr(settings.grid, key) for key in _GRID_FIELDS},
        "generator": {key: _plain(getattr(generator, key)) for key in _GENERATOR_FIELDS},
        "pricing": {key: _plain(getattr(settings.pricing, key)) for key in _PRICING_FIELDS},
        "dr": {key: _plain(getattr(settings.dr, key)) for key in _DR_FIELDS},
        "detector": {key: _plain(getattr(settings.detector, key)) for key in _DETECTOR_FIELDS},
        "isolation": {
            "isolator": settings.isolation.isolator.value,
            **{key: getattr(isolation, key) for key in _ISOLATION_FIELDS},
        },
        "mitigation": {
            "method": method.number if method is not None else None,
            "history_window": settings.mitigation.history_window,
            "screening": settings.mitigation.screening.value,
        },
        "simulation": {
            "scenario": settings.simulation.scenario.value,
            "days": _plain(settings.simulation.days),
        },
    }


def save_experiment_settings(settings: ExperimentSettings, path: Path) -> None:
    """Persist the full normalised settings document."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(Path(path), json.dumps(settings_payload(settings), indent=2) + "\n")
