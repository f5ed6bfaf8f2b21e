"""JSON experiment configuration: schema, validation and instance building.

All times are seconds and all rates tasks/second. Unknown keys are rejected at
every level.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .domain import (AtomicPrice, ConstantRate, EmpiricalPrice, LomaxPrice, PiecewiseLinearRate,
                     ProblemInstance, SinusoidRate, StepRate, TaskClass)
from .errors import ConfigError

DEFAULT_BUDGET_SECONDS = 30_000.0

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _obj(props: dict, required: list) -> dict:
    return {"type": "object", "properties": props, "required": required, "additionalProperties": False}


_ARRIVAL = {"oneOf": [
    _obj({"kind": {"const": "constant"}, "rate": _NONNEG}, ["kind", "rate"]),
    _obj({"kind": {"const": "sinusoid"}, "mean": _NONNEG, "amplitude": _NONNEG, "period": _POS,
          "phase": {"type": "number"}}, ["kind", "mean", "amplitude", "period"]),
    _obj({"kind": {"const": "step"}, "before": _NONNEG, "after": _NONNEG, "switch": {"type": "number"}},
         ["kind", "before", "after", "switch"]),
    _obj({"kind": {"const": "piecewise_linear"},
          "times": {"type": "array", "items": {"type": "number"}, "minItems": 1},
          "rates": {"type": "array", "items": _NONNEG, "minItems": 1}}, ["kind", "times", "rates"]),
]}

_WEIGHTED = {"points": {"type": "array", "items": _NONNEG, "minItems": 1},
             "weights": {"type": "array", "items": _NONNEG, "minItems": 1}}
_PRICE = {"oneOf": [
    _obj({"kind": {"const": "lomax"}, "shape": {"type": "number", "exclusiveMinimum": 1}, "scale": _POS},
         ["kind", "shape", "scale"]),
    _obj({"kind": {"const": "empirical"}, **_WEIGHTED}, ["kind", "points", "weights"]),
    _obj({"kind": {"const": "atomic"}, **_WEIGHTED}, ["kind", "points", "weights"]),
]}

_CLASS = _obj({"name": {"type": "string", "minLength": 1}, "service_rate": _POS,
               "arrival": _ARRIVAL, "price": _PRICE}, ["name", "service_rate", "arrival", "price"])

_INSTANCE = _obj({
    "n_servers": {"type": "integer", "minimum": 1},
    "horizon": _POS,
    "dt": _POS,
    "classes": {"type": "array", "items": _CLASS, "minItems": 1},
}, ["n_servers", "horizon", "dt", "classes"])

_NA_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_METHOD = {"oneOf": [
    _obj({"method": {"enum": ["vi_no_abstr", "stationary", "accept_all", "reject_all"]}}, ["method"]),
    _obj({"method": {"const": "vi_avg_class"}, "avg_rate_mode": {"enum": ["arithmetic", "harmonic"]}},
         ["method"]),
    _obj({"method": {"const": "vi_abstr"},
          "aggregation": {"enum": ["order_stats", "stationary", "random"]},
          "n_abstractions": _NA_LIST,
          "samples": {"type": "integer", "minimum": 1},
          "kmeans_inits": {"type": "integer", "minimum": 1},
          "standardize": {"type": "boolean"}}, ["method", "aggregation", "n_abstractions"]),
    _obj({"method": {"const": "grid_search"},
          "candidates": {"type": "integer", "minimum": 2},
          "bounds": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
          "episodes": {"type": "integer", "minimum": 1}}, ["method"]),
]}

SCHEMA = _obj({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "instance": _INSTANCE,
    "methods": {"type": "array", "items": _METHOD, "minItems": 1},
    "episodes": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "budget_seconds": _POS,
    "memory_budget_gib": _POS,
    "timings": {"type": "boolean"},
    "dt_sweep": {"type": "array", "items": _POS, "minItems": 2},
}, ["instance", "methods"])


@dataclass
class ExperimentConfig:
    name: str
    instance: ProblemInstance
    methods: list
    episodes: int = 300
    seed: int = 0
    output_dir: str = "results"
    budget_seconds: float = DEFAULT_BUDGET_SECONDS
    memory_budget: int = 3 * 2**30
    timings: bool = True
    dt_sweep: list = field(default_factory=list)
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)


def _describe(err: jsonschema.ValidationError) -> str:
    # oneOf failures are more useful reported through the closest branch
    best = jsonschema.exceptions.best_match([err]) if err.context else err
    if best.context:
        best = min(best.context, key=lambda e: len(e.absolute_path) * -1)
    where = "/".join(str(p) for p in best.absolute_path) or "<root>"
    return f"{where}: {best.message} (constraint '{best.validator}')"


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("invalid config: " + "; ".join(_describe(e) for e in errors[:5]))


def build_arrival(spec: dict):
    kind = spec["kind"]
    if kind == "constant":
        return ConstantRate(spec["rate"])
    if kind == "sinusoid":
        return SinusoidRate(spec["mean"], spec["amplitude"], spec["period"], spec.get("phase", 0.0))
    if kind == "step":
        return StepRate(spec["before"], spec["after"], spec["switch"])
    return PiecewiseLinearRate(tuple(spec["times"]), tuple(spec["rates"]))


def build_price(spec: dict):
    kind = spec["kind"]
    if kind == "lomax":
        return LomaxPrice(spec["shape"], spec["scale"])
    cls = EmpiricalPrice if kind == "empirical" else AtomicPrice
    return cls(tuple(spec["points"]), tuple(spec["weights"]))


def build_instance(spec: dict) -> ProblemInstance:
    classes = [TaskClass(c["name"], c["service_rate"], build_arrival(c["arrival"]), build_price(c["price"]))
               for c in spec["classes"]]
    return ProblemInstance(tuple(classes), spec["n_servers"], float(spec["horizon"]), float(spec["dt"]))


def parse_config(doc: dict) -> ExperimentConfig:
    validate(doc)
    try:
        instance = build_instance(doc["instance"])
    except ValueError as exc:
        raise ConfigError(f"invalid config: instance: {exc}") from exc
    return ExperimentConfig(
        name=doc.get("name", "experiment"),
        instance=instance,
        methods=[dict(m) for m in doc["methods"]],
        episodes=doc.get("episodes", 300),
        seed=doc.get("seed", 0),
        output_dir=doc.get("output_dir", "results"),
        budget_seconds=float(doc.get("budget_seconds", DEFAULT_BUDGET_SECONDS)),
        memory_budget=int(doc.get("memory_budget_gib", 3) * 2**30),
        timings=doc.get("timings", True),
        dt_sweep=list(doc.get("dt_sweep", [])),
        description=doc.get("description", ""),
        raw=doc,
    )


def bundled_configs() -> list[str]:
    root = resources.files("taskadmit") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name: str | Path) -> ExperimentConfig:
    """Load a config file, or a bundled config by name (e.g. ``synthetic_small_sinusoid``)."""
    path = Path(path_or_name)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("taskadmit") / "configs" / f"{path_or_name}.json"
        if not res.is_file():
            raise ConfigError(f"config {path_or_name!r} is neither a file nor a bundled config "
                              f"({', '.join(bundled_configs())})")
        text = res.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path_or_name}: not valid JSON ({exc})") from exc
    return parse_config(doc)
