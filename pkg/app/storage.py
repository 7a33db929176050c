"""File persistence for corpora, cluster models, outcomes and report rows.

Corpora are a directory of CSV files plus a small JSON header; cluster models
and optimisation outcomes are single JSON documents carrying a
``format_version``. Every float is written with ``repr`` so it reads back
bit for bit, and every file is written to a temporary sibling first and then
renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import types
from dataclasses import asdict, dataclass, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar, Union, get_args, get_origin, get_type_hints

import numpy as np

from .constants import FORMAT_VERSION
from .errors import DataFormatError, FormatVersionError
from .models import Appliance, DemandForecast, ForecastLabel, House, PriceSignal, Schedule, SlotGrid
from .services.attacks import AttackKind, AttackSpec, AttackStrategy, planted_slots
from .services.clustering import ClusterModel
from .services.generator import Corpus, DayRecord
from .services.scheduler import DrOutcome, IterationRecord

logger = logging.getLogger(__name__)

Row = TypeVar("Row")

CORPUS_HEADER = "corpus.json"
FORECASTS_FILE = "forecasts.csv"
ATTACKS_FILE = "attacks.csv"
HOUSES_FILE = "houses.csv"

ATTACK_COLUMNS = ("day_id", "kind", "magnitude", "slots", "seed", "persistent", "strategy")
HOUSE_COLUMNS = (
    "day_id",
    "house_id",
    "appliance_id",
    "demand_per_slot",
    "duration",
    "earliest_start",
    "latest_finish",
    "preferred_start",
    "penalty_factor",
)


@dataclass(frozen=True, slots=True)
class ExperimentPaths:
    """Where each command reads and writes inside one output directory."""

    root: Path

    @classmethod
    def for_directory(cls, root: Path | str) -> ExperimentPaths:
        return cls(Path(root))

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def model(self) -> Path:
        return self.root / "model.json"

    @property
    def fit_trace(self) -> Path:
        return self.root / "fit_trace.csv"

    def detection(self, classifier: str) -> Path:
        return self.root / f"detection-{classifier}.csv"

    def isolation(self, isolator: str) -> Path:
        return self.root / f"isolation-{isolator}.csv"

    def simulation(self, scenario: str, method: str) -> Path:
        return self.root / f"simulation-{scenario}-{method}.csv"

    def corrections(self, method: str) -> Path:
        return self.root / f"corrections-{method}.csv"

    def reports(self, kind: str) -> list[Path]:
        """Every per-variant report of one kind, sorted by file name."""
        return sorted(self.root.glob(f"{kind}-*.csv"))

    @property
    def settings(self) -> Path:
        return self.root / "experiment.json"

    @property
    def evaluation(self) -> Path:
        return self.root / "evaluation"


def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to a temporary sibling, then rename it over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(f".{path.name}.tmp")
    with open(temporary, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    os.replace(temporary, path)


def format_value(value: Any) -> str:
    """Render one CSV cell; floats keep full precision."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return ";".join(str(int(item)) for item in value)
    return str(value)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(value) for value in row])
    return buffer.getvalue()


def _write_document(path: Path, kind: str, payload: dict[str, Any]) -> None:
    document = {"format_version": FORMAT_VERSION, "kind": kind, **payload}
    atomic_write_text(path, json.dumps(document, indent=2) + "\n")


def _read_document(path: Path, kind: str) -> dict[str, Any]:
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(document, dict):
        raise DataFormatError(path, "expected a JSON object")
    version = document.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(path, version, FORMAT_VERSION)
    if document.get("kind") != kind:
        raise DataFormatError(path, f"expected a {kind} document, got {document.get('kind')!r}", field="kind")
    return document


def _require(document: dict[str, Any], key: str, path: Path) -> Any:
    if key not in document:
        raise DataFormatError(path, "missing field", field=key)
    return document[key]


class _CsvCursor:
    """Reads a CSV file row by row, converting cells with file/line/field context."""

    def __init__(self, path: Path, expected_header: Sequence[str] | None = None) -> None:
        self.path = path
        self._handle = open(path, encoding="utf-8", newline="")
        self._reader = csv.reader(self._handle)
        try:
            self.header = next(self._reader)
        except StopIteration:
            self._handle.close()
            raise DataFormatError(path, "file is empty", line=1) from None
        if expected_header is not None and tuple(self.header) != tuple(expected_header):
            self._handle.close()
            raise DataFormatError(
                path, f"unexpected header {self.header}, expected {list(expected_header)}", line=1
            )

    def __enter__(self) -> _CsvCursor:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self._handle.close()

    @property
    def line(self) -> int:
        return self._reader.line_num

    def rows(self) -> Iterable[dict[str, str]]:
        for cells in self._reader:
            if not cells:
                continue
            if len(cells) != len(self.header):
                raise DataFormatError(
                    self.path,
                    f"expected {len(self.header)} fields, got {len(cells)}",
                    line=self.line,
                )
            yield dict(zip(self.header, cells))

    def convert(self, row: dict[str, str], name: str, parse: Callable[[str], Any]) -> Any:
        try:
            return parse(row[name])
        except (ValueError, TypeError) as exc:
            raise DataFormatError(self.path, str(exc) or "invalid value", line=self.line, field=name) from None


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_slots(text: str) -> tuple[int, ...]:
    if text == "":
        return ()
    return tuple(int(part) for part in text.split(";"))


def _parse_float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


# Corpus


def save_corpus(corpus: Corpus, directory: Path | str) -> Path:
    """Write a corpus as ``corpus.json`` plus forecast, attack and house CSVs.

    Returns:
        The corpus directory.
    """
    directory = Path(directory)
    grid = corpus.grid
    _write_document(
        directory / CORPUS_HEADER,
        "corpus",
        {
            "grid": {
                "pricing_slots": grid.pricing_slots,
                "scheduling_slots_per_pricing": grid.scheduling_slots_per_pricing,
            },
            "seed": corpus.seed,
            "train_size": corpus.train_size,
            "days": len(corpus.days),
        },
    )

    forecast_rows: list[list[Any]] = []
    attack_rows: list[list[Any]] = []
    house_rows: list[list[Any]] = []
    for day in corpus.days:
        forecast_rows.append([day.day_id, day.genuine.label, *day.genuine.values])
        if day.attack is not None and day.attacked is not None:
            forecast_rows.append([day.day_id, day.attacked.label, *day.attacked.values])
            spec = day.attack
            attack_rows.append(
                [day.day_id, spec.kind, spec.magnitude, spec.target_slots, spec.seed, spec.persistent, day.strategy]
            )
        for house in day.houses:
            for appliance in house.appliances:
                house_rows.append(
                    [
                        day.day_id,
                        house.id,
                        appliance.id,
                        float(appliance.demand_per_slot),
                        appliance.duration,
                        appliance.earliest_start,
                        appliance.latest_finish,
                        appliance.preferred_start,
                        float(appliance.penalty_factor),
                    ]
                )

    slot_columns = [f"slot_{index}" for index in range(grid.pricing_slots)]
    atomic_write_text(directory / FORECASTS_FILE, _csv_text(["day_id", "label", *slot_columns], forecast_rows))
    atomic_write_text(directory / ATTACKS_FILE, _csv_text(ATTACK_COLUMNS, attack_rows))
    atomic_write_text(directory / HOUSES_FILE, _csv_text(HOUSE_COLUMNS, house_rows))
    logger.info("Saved corpus of %d days to %s", len(corpus.days), directory)
    return directory


def _load_forecasts(path: Path, pricing_slots: int) -> dict[tuple[int, ForecastLabel], DemandForecast]:
    slot_columns = [f"slot_{index}" for index in range(pricing_slots)]
    forecasts: dict[tuple[int, ForecastLabel], DemandForecast] = {}
    with _CsvCursor(path, ["day_id", "label", *slot_columns]) as cursor:
        for row in cursor.rows():
            day_id = cursor.convert(row, "day_id", int)
            label = cursor.convert(row, "label", ForecastLabel)
            values = [cursor.convert(row, column, _parse_float) for column in slot_columns]
            try:
                forecast = DemandForecast(values, day_id=day_id, label=label)
            except ValueError as exc:
                raise DataFormatError(path, str(exc), line=cursor.line) from None
            if (day_id, label) in forecasts:
                raise DataFormatError(path, f"duplicate {label} forecast for day {day_id}", line=cursor.line)
            forecasts[(day_id, label)] = forecast
    return forecasts


def _load_attacks(path: Path) -> dict[int, tuple[AttackSpec, AttackStrategy | None]]:
    attacks: dict[int, tuple[AttackSpec, AttackStrategy | None]] = {}
    with _CsvCursor(path, ATTACK_COLUMNS) as cursor:
        for row in cursor.rows():
            day_id = cursor.convert(row, "day_id", int)
            kind = cursor.convert(row, "kind", AttackKind)
            magnitude = cursor.convert(row, "magnitude", _parse_float)
            slots = cursor.convert(row, "slots", _parse_slots)
            seed = cursor.convert(row, "seed", int)
            persistent = cursor.convert(row, "persistent", _parse_bool)
            strategy = cursor.convert(row, "strategy", lambda text: AttackStrategy(text) if text else None)
            try:
                spec = AttackSpec(kind=kind, target_slots=slots, magnitude=magnitude, seed=seed, persistent=persistent)
            except ValueError as exc:
                raise DataFormatError(path, str(exc), line=cursor.line, field="slots") from None
            attacks[day_id] = (spec, strategy)
    return attacks


def _load_houses(path: Path) -> dict[int, list[House]]:
    grouped: dict[int, dict[str, list[Appliance]]] = {}
    with _CsvCursor(path, HOUSE_COLUMNS) as cursor:
        for row in cursor.rows():
            day_id = cursor.convert(row, "day_id", int)
            house_id = row["house_id"]
            appliance = Appliance(
                id=row["appliance_id"],
                demand_per_slot=cursor.convert(row, "demand_per_slot", _parse_float),
                duration=cursor.convert(row, "duration", int),
                earliest_start=cursor.convert(row, "earliest_start", int),
                latest_finish=cursor.convert(row, "latest_finish", int),
                preferred_start=cursor.convert(row, "preferred_start", int),
                penalty_factor=cursor.convert(row, "penalty_factor", _parse_float),
            )
            grouped.setdefault(day_id, {}).setdefault(house_id, []).append(appliance)
    return {
        day_id: [House(house_id, tuple(appliances)) for house_id, appliances in houses.items()]
        for day_id, houses in grouped.items()
    }


def load_corpus(directory: Path | str) -> Corpus:
    """Read a corpus written by ``save_corpus``.

    Raises:
        DataFormatError: If a file is malformed or the files disagree.
        FormatVersionError: On an unsupported ``format_version``.
        FileNotFoundError: If a corpus file is missing.
    """
    directory = Path(directory)
    header_path = directory / CORPUS_HEADER
    document = _read_document(header_path, "corpus")
    grid_doc = _require(document, "grid", header_path)
    try:
        grid = SlotGrid(int(grid_doc["pricing_slots"]), int(grid_doc["scheduling_slots_per_pricing"]))
        seed = int(_require(document, "seed", header_path))
        train_size = int(_require(document, "train_size", header_path))
        day_count = int(_require(document, "days", header_path))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(header_path, f"invalid header: {exc}", field="grid") from None

    forecasts_path = directory / FORECASTS_FILE
    forecasts = _load_forecasts(forecasts_path, grid.pricing_slots)
    attacks = _load_attacks(directory / ATTACKS_FILE)
    houses = _load_houses(directory / HOUSES_FILE)

    days: list[DayRecord] = []
    genuine_ids = sorted(day_id for day_id, label in forecasts if label is ForecastLabel.NORMAL)
    if len(genuine_ids) != day_count:
        raise DataFormatError(
            forecasts_path, f"expected {day_count} genuine forecasts, found {len(genuine_ids)}"
        )
    for day_id in genuine_ids:
        genuine = forecasts[(day_id, ForecastLabel.NORMAL)]
        attacked = forecasts.get((day_id, ForecastLabel.ATTACKED))
        attack = attacks.get(day_id)
        if (attack is None) != (attacked is None):
            raise DataFormatError(
                directory / ATTACKS_FILE, f"day {day_id}: attack row and attacked forecast must both exist"
            )
        spec, strategy = attack if attack is not None else (None, None)
        planted: tuple[int, ...] = ()
        if spec is not None and attacked is not None:
            planted = planted_slots(spec, attacked.values - genuine.values)
        days.append(
            DayRecord(
                day_id=day_id,
                houses=tuple(houses.get(day_id, ())),
                genuine=genuine,
                attack=spec,
                attacked=attacked,
                planted=planted,
                strategy=strategy,
            )
        )
    try:
        return Corpus(grid=grid, days=tuple(days), train_size=train_size, seed=seed)
    except ValueError as exc:
        raise DataFormatError(header_path, str(exc), field="train_size") from None


# Cluster model


def save_cluster_model(model: ClusterModel, path: Path | str) -> Path:
    """Write a fitted cluster model as one JSON document."""
    path = Path(path)
    _write_document(
        path,
        "cluster_model",
        {
            "k": model.k,
            "pricing_slots": model.pricing_slots,
            "seed": model.seed,
            "objective_trace": list(model.objective_trace),
            "centroids": model.centroids.tolist(),
            "database": model.database.tolist(),
            "labels": model.labels.tolist(),
            "day_ids": list(model.day_ids),
        },
    )
    logger.info("Saved %d-cluster model to %s", model.k, path)
    return path


def load_cluster_model(path: Path | str) -> ClusterModel:
    """Read a cluster model written by ``save_cluster_model``.

    Raises:
        DataFormatError: If the document is malformed or inconsistent.
        FormatVersionError: On an unsupported ``format_version``.
    """
    path = Path(path)
    document = _read_document(path, "cluster_model")
    try:
        model = ClusterModel(
            centroids=np.array(_require(document, "centroids", path), dtype=np.float64),
            database=np.array(_require(document, "database", path), dtype=np.float64),
            labels=np.array(_require(document, "labels", path), dtype=np.int64),
            objective_trace=tuple(document.get("objective_trace", ())),
            seed=int(document.get("seed", 0)),
            day_ids=tuple(document.get("day_ids", ())),
        )
    except (TypeError, ValueError) as exc:
        raise DataFormatError(path, str(exc), field="centroids") from None
    if model.k != document.get("k"):
        raise DataFormatError(path, f"k={document.get('k')} but {model.k} centroids stored", field="k")
    return model


# Optimisation outcome


def _forecast_payload(forecast: DemandForecast) -> dict[str, Any]:
    return {"day_id": forecast.day_id, "label": str(forecast.label), "values": forecast.values.tolist()}


def _forecast_from(payload: dict[str, Any]) -> DemandForecast:
    return DemandForecast(payload["values"], day_id=payload["day_id"], label=payload["label"])


def save_outcome(outcome: DrOutcome, path: Path | str) -> Path:
    """Write a ``run_dr`` outcome, including its full trace, as JSON."""
    path = Path(path)
    _write_document(
        path,
        "dr_outcome",
        {
            "schedules": {house_id: dict(schedule.starts) for house_id, schedule in outcome.schedules.items()},
            "forecast": _forecast_payload(outcome.forecast),
            "priced_forecast": _forecast_payload(outcome.priced_forecast),
            "prices": outcome.prices.values.tolist(),
            "converged": outcome.converged,
            "iterations_used": outcome.iterations_used,
            "profiles": {house_id: profile.tolist() for house_id, profile in outcome.profiles.items()},
            "trace": [
                {
                    "iteration": record.iteration,
                    "genuine": _forecast_payload(record.genuine),
                    "forecast": _forecast_payload(record.forecast),
                    "prices": record.prices.values.tolist(),
                    "total_bill": record.total_bill,
                    "total_penalty": record.total_penalty,
                    "total_cost": record.total_cost,
                }
                for record in outcome.trace
            ],
        },
    )
    return path


def load_outcome(path: Path | str) -> DrOutcome:
    """Read an outcome written by ``save_outcome``.

    Raises:
        DataFormatError: If the document is malformed.
        FormatVersionError: On an unsupported ``format_version``.
    """
    path = Path(path)
    document = _read_document(path, "dr_outcome")
    try:
        trace = tuple(
            IterationRecord(
                iteration=int(entry["iteration"]),
                genuine=_forecast_from(entry["genuine"]),
                forecast=_forecast_from(entry["forecast"]),
                prices=PriceSignal(entry["prices"]),
                total_bill=float(entry["total_bill"]),
                total_penalty=float(entry["total_penalty"]),
                total_cost=float(entry["total_cost"]),
            )
            for entry in _require(document, "trace", path)
        )
        return DrOutcome(
            schedules={
                house_id: Schedule(starts) for house_id, starts in _require(document, "schedules", path).items()
            },
            forecast=_forecast_from(_require(document, "forecast", path)),
            priced_forecast=_forecast_from(_require(document, "priced_forecast", path)),
            prices=PriceSignal(_require(document, "prices", path)),
            trace=trace,
            converged=bool(_require(document, "converged", path)),
            iterations_used=int(_require(document, "iterations_used", path)),
            profiles={
                house_id: np.array(profile, dtype=np.float64)
                for house_id, profile in document.get("profiles", {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(path, f"invalid outcome: {exc}", field="trace") from None


# Report rows


def _cell_parser(hint: Any) -> Callable[[str], Any]:
    optional = False
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        members = [arg for arg in get_args(hint) if arg is not type(None)]
        optional = len(members) != len(get_args(hint))
        hint = members[0]
        origin = get_origin(hint)

    if origin is tuple:
        parse: Callable[[str], Any] = _parse_slots
    elif hint is bool:
        parse = _parse_bool
    elif hint is int:
        parse = int
    elif hint is float:
        parse = float
    else:
        parse = str

    if not optional:
        return parse
    return lambda text: None if text == "" else parse(text)


def write_rows(path: Path | str, rows: Sequence[Any], row_type: type | None = None) -> Path:
    """Write dataclass rows as CSV, one column per field.

    Args:
        path: Output file.
        rows: Dataclass instances of one type.
        row_type: Row class; needed to write the header of an empty report.
    """
    path = Path(path)
    row_type = row_type or (type(rows[0]) if rows else None)
    if row_type is None or not is_dataclass(row_type):
        raise ValueError("write_rows needs dataclass rows or an explicit row_type")
    header = [field.name for field in fields(row_type)]
    atomic_write_text(path, _csv_text(header, (tuple(asdict(row).values()) for row in rows)))
    return path


def read_rows(path: Path | str, row_type: type[Row]) -> list[Row]:
    """Read a CSV written by ``write_rows`` back into ``row_type`` instances.

    Raises:
        DataFormatError: If the header does not match the row type or a cell
            does not parse.
    """
    path = Path(path)
    hints = get_type_hints(row_type)
    names = [field.name for field in fields(row_type)]  # type: ignore[arg-type]
    parsers = {name: _cell_parser(hints[name]) for name in names}
    rows: list[Row] = []
    with _CsvCursor(path, names) as cursor:
        for record in cursor.rows():
            values = {name: cursor.convert(record, name, parsers[name]) for name in names}
            rows.append(row_type(**values))
    return rows
