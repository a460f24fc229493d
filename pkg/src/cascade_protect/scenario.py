"""Scenario configuration: one JSON document describing a prediction and
protection run. Every field except the case path has a default."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidScenarioError, ParseError
from .grid_model import THRESHOLD_MODES, GridCase, load_case
from .outage_model import OutageParams


@dataclass(frozen=True)
class Contingency:
    outaged: tuple[int, ...]
    probability: float


@dataclass(frozen=True)
class Scenario:
    case_path: Path
    case_format: str | None = None
    initial_contingencies: tuple[Contingency, ...] = ()
    horizon: int = 3
    protect_at_step: int = 3
    epsilon: float = 0.1
    outage_params: dict = field(default_factory=dict)
    thresholds: str = "auto"
    threshold_multiplier: float = 2.0
    threshold_floor: float = 0.1
    balance_generation: bool = True
    beam_width: int = 8
    dykstra_N: int = 50
    feasibility_tol: float = 1e-6
    monte_carlo_samples: int = 0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        problems = []
        total = math.fsum(c.probability for c in self.initial_contingencies)
        if any(not 0 <= c.probability <= 1 for c in self.initial_contingencies):
            problems.append("contingency probabilities must lie in [0, 1]")
        if total > 1 + 1e-12:
            problems.append(f"contingency probabilities sum to {total} > 1")
        if self.horizon < 1:
            problems.append("horizon must be >= 1")
        if not 1 <= self.protect_at_step <= self.horizon:
            problems.append(f"protect_at_step must lie in 1..horizon ({self.horizon})")
        if not 0 <= self.epsilon < 1:
            problems.append("epsilon must lie in [0, 1)")
        if self.thresholds not in THRESHOLD_MODES:
            problems.append(f"thresholds must be one of {THRESHOLD_MODES}")
        if self.beam_width < 1:
            problems.append("beam_width must be >= 1")
        if self.dykstra_N < 1:
            problems.append("dykstra_N must be >= 1")
        if not self.feasibility_tol > 0:
            problems.append("feasibility_tol must be > 0")
        if self.monte_carlo_samples < 0:
            problems.append("monte_carlo_samples must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        try:
            OutageParams.from_mapping(self.outage_params)
        except (TypeError, ValueError) as exc:
            problems.append(str(exc))
        if problems:
            raise InvalidScenarioError("; ".join(problems))

    @property
    def params(self) -> OutageParams:
        return OutageParams.from_mapping(self.outage_params)

    def load_case(self) -> GridCase:
        return load_case(self.case_path, self.case_format, thresholds=self.thresholds,
                         threshold_multiplier=self.threshold_multiplier,
                         threshold_floor=self.threshold_floor,
                         balance_generation=self.balance_generation)

    def override(self, **changes) -> "Scenario":
        """Copy with the non-None ``changes`` applied (CLI flags)."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["case_path"] = str(self.case_path)
        d["initial_contingencies"] = [
            {"outaged": list(c.outaged), "probability": c.probability}
            for c in self.initial_contingencies]
        return d


_ALIASES = {"case": "case_path", "format": "case_format"}


def _contingency(item) -> Contingency:
    if isinstance(item, dict):
        ids, p = item.get("outaged"), item.get("probability")
    elif isinstance(item, (list, tuple)) and len(item) == 2:
        ids, p = item
    else:
        raise InvalidScenarioError(f"bad contingency entry {item!r}")
    if isinstance(ids, int):
        ids = [ids]
    if ids is None or p is None or not all(isinstance(i, int) for i in ids):
        raise InvalidScenarioError(f"bad contingency entry {item!r}")
    return Contingency(tuple(sorted(set(ids))), float(p))


def scenario_from_dict(data: dict, base_dir: Path | str = ".") -> Scenario:
    data = {_ALIASES.get(k, k): v for k, v in data.items()}
    known = {f.name for f in fields(Scenario)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidScenarioError(f"unknown scenario keys: {unknown}")
    if "case_path" not in data:
        raise InvalidScenarioError("scenario needs a 'case' path")
    case_path = Path(data["case_path"])
    if not case_path.is_absolute():
        case_path = Path(base_dir) / case_path
    data["case_path"] = case_path
    data["initial_contingencies"] = tuple(
        _contingency(c) for c in data.get("initial_contingencies", ()))
    try:
        return Scenario(**data)
    except TypeError as exc:
        raise InvalidScenarioError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    """Read a scenario file; a relative case path is resolved against the
    scenario file's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidScenarioError("scenario must be a JSON object")
    return scenario_from_dict(data, path.parent)


def ieee118_scenario_path() -> Path:
    """The shipped IEEE 118-bus example scenario."""
    return Path(__file__).parent / "data" / "ieee118_scenario.json"
