import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml
from marshmallow import Schema, fields, validate, validates_schema, post_load, ValidationError, RAISE

from .model import ModelConfig, RegimeParams, GeneratorMatrix
from .mechanism import TriggerSpec, Compounding
from .ensemble import SimulationPlan

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Debt parameters: regime calibration table (expansion, crisis).
# Growth parameters: c/d = 0.04 equilibrium with eta*g ~ 0.02 near g = 0.04.
DEFAULT_GROWTH = {"c": 0.004, "d": 0.1, "eta": 0.5, "xi": 0.0, "mu_k": 0.0, "sigma_k": 0.0}

DEFAULTS: Dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "label": "default",
    "model": {
        "regimes": [
            {"a": 0.05, "b": 0.10, "sigma": 0.02, "kappa": 0.05, "mu_j": -0.10, "sigma_j": 0.30, **DEFAULT_GROWTH},
            {"a": 0.12, "b": 0.06, "sigma": 0.05, "kappa": 0.10, "mu_j": 0.20, "sigma_j": 0.50, **DEFAULT_GROWTH},
        ],
        "generator": {"lambda01": 0.12, "lambda10": 0.08},
        "rho": 0.0,
        "d0": 1.0,
        "g0": 0.04,
        "r0": 0,
    },
    "trigger": {
        "d_star": 0.80,
        "g_star": 0.03,
        "alpha": 0.3,
        "beta": 1.0,
        "gamma": 1.0,
        "horizon": 10.0,
        "discount_rate": 0.03,
        "notional": 100.0,
        "compounding": "continuous",
        "default_barrier": 1.40,
    },
    "plan": {"n_paths": 10_000, "horizon": 10.0, "dt": 0.01, "seed": 12345},
    "analysis": {"alphas": [0.1, 0.2, 0.3, 0.4], "diagnostic_horizons": [5.0, 10.0, 20.0, 50.0]},
    "output_dir": "results",
}


class ConfigError(Exception):
    """Configuration could not be read or failed validation"""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors or []

    def __str__(self) -> str:
        if not self.errors:
            return super().__str__()
        return f"{super().__str__()}: " + "; ".join(self.errors)


@dataclass(frozen=True)
class AnalysisSettings:
    alphas: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    diagnostic_horizons: List[float] = field(default_factory=lambda: [5.0, 10.0, 20.0, 50.0])

    def to_dict(self) -> Dict:
        return {"alphas": list(self.alphas), "diagnostic_horizons": list(self.diagnostic_horizons)}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    trigger: TriggerSpec
    plan: SimulationPlan
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    output_dir: str = "results"
    label: str = "default"

    def to_dict(self) -> Dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "model": self.model.to_dict(),
            "trigger": self.trigger.to_dict(),
            "plan": self.plan.to_dict(),
            "analysis": self.analysis.to_dict(),
            "output_dir": self.output_dir,
        }

    def with_overrides(self, seed: Optional[int] = None, n_paths: Optional[int] = None,
                       output_dir: Optional[str] = None) -> "RunConfig":
        plan = self.plan
        if seed is not None:
            plan = replace(plan, seed=seed)
        if n_paths is not None:
            plan = replace(plan, n_paths=n_paths)
        return replace(self, plan=plan, output_dir=output_dir or self.output_dir)


NonNegative = validate.Range(min=0)


class RegimeSchema(Schema):
    class Meta:
        unknown = RAISE

    a = fields.Float(required=True)
    b = fields.Float(required=True, validate=NonNegative)
    sigma = fields.Float(required=True, validate=NonNegative)
    kappa = fields.Float(required=True, validate=NonNegative)
    mu_j = fields.Float(required=True)
    sigma_j = fields.Float(required=True, validate=NonNegative)
    c = fields.Float(required=True)
    d = fields.Float(required=True, validate=NonNegative)
    eta = fields.Float(required=True, validate=NonNegative)
    xi = fields.Float(required=True, validate=NonNegative)
    mu_k = fields.Float(required=True)
    sigma_k = fields.Float(required=True, validate=NonNegative)

    @post_load
    def make(self, data, **kwargs):
        return RegimeParams(**data)


class GeneratorSchema(Schema):
    class Meta:
        unknown = RAISE

    lambda01 = fields.Float(required=True, validate=NonNegative)
    lambda10 = fields.Float(required=True, validate=NonNegative)

    @post_load
    def make(self, data, **kwargs):
        return GeneratorMatrix(**data)


class ModelSchema(Schema):
    class Meta:
        unknown = RAISE

    regimes = fields.List(fields.Nested(RegimeSchema), required=True, validate=validate.Length(equal=2))
    generator = fields.Nested(GeneratorSchema, required=True)
    rho = fields.Float(required=True, validate=validate.Range(min=-1, max=1))
    d0 = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    g0 = fields.Float(required=True)
    r0 = fields.Integer(required=True, validate=validate.OneOf([0, 1]))

    @post_load
    def make(self, data, **kwargs):
        return ModelConfig(
            params_by_regime=tuple(data["regimes"]),
            q=data["generator"],
            rho=data["rho"],
            d0=data["d0"],
            g0=data["g0"],
            r0=data["r0"],
        )


class TriggerSchema(Schema):
    class Meta:
        unknown = RAISE

    d_star = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    g_star = fields.Float(required=True)
    alpha = fields.Float(required=True, validate=validate.Range(min=0, max=1, min_inclusive=False,
                                                                 max_inclusive=False))
    beta = fields.Float(required=True, validate=NonNegative)
    gamma = fields.Float(required=True, validate=NonNegative)
    horizon = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    discount_rate = fields.Float(required=True, validate=NonNegative)
    notional = fields.Float(required=True, validate=NonNegative)
    compounding = fields.Str(required=True, validate=validate.OneOf([c.value for c in Compounding]))
    default_barrier = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))

    @post_load
    def make(self, data, **kwargs):
        return TriggerSpec(**{**data, "compounding": Compounding(data["compounding"])})


class PlanSchema(Schema):
    class Meta:
        unknown = RAISE

    n_paths = fields.Integer(required=True, strict=True, validate=validate.Range(min=1))
    horizon = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    dt = fields.Float(required=True, validate=validate.Range(min=0, min_inclusive=False))
    seed = fields.Integer(required=True, strict=True, validate=validate.Range(min=0, max=2 ** 64 - 1))

    @validates_schema
    def check_grid(self, data, **kwargs):
        if data["horizon"] / data["dt"] < 0.5:
            raise ValidationError("horizon must span at least one step", "dt")

    @post_load
    def make(self, data, **kwargs):
        return SimulationPlan(**data)


class AnalysisSchema(Schema):
    class Meta:
        unknown = RAISE

    alphas = fields.List(
        fields.Float(validate=validate.Range(min=0, max=1, min_inclusive=False, max_inclusive=False)),
        required=True, validate=validate.Length(min=1),
    )
    diagnostic_horizons = fields.List(
        fields.Float(validate=validate.Range(min=0, min_inclusive=False)),
        required=True, validate=validate.Length(min=1),
    )

    @post_load
    def make(self, data, **kwargs):
        return AnalysisSettings(**data)


class RunConfigSchema(Schema):
    class Meta:
        unknown = RAISE

    schema_version = fields.Integer(required=True, validate=validate.Equal(SCHEMA_VERSION))
    label = fields.Str(required=True)
    model = fields.Nested(ModelSchema, required=True)
    trigger = fields.Nested(TriggerSchema, required=True)
    plan = fields.Nested(PlanSchema, required=True)
    analysis = fields.Nested(AnalysisSchema, required=True)
    output_dir = fields.Str(required=True)

    @validates_schema(skip_on_field_errors=True)
    def check_horizons(self, data, **kwargs):
        if data["trigger"].horizon > data["plan"].horizon + data["plan"].dt / 2:
            raise ValidationError(
                {"trigger": {"horizon": [f"token horizon exceeds simulated horizon {data['plan'].horizon}"]}}
            )

    @post_load
    def make(self, data, **kwargs):
        data.pop("schema_version")
        return RunConfig(**data)


def _flatten(messages: Union[Dict, List, str], prefix: str = "") -> List[str]:
    """Flatten nested marshmallow messages into 'field.path: message' strings."""
    if isinstance(messages, dict):
        out = []
        for key, value in messages.items():
            path = f"{prefix}.{key}" if prefix else str(key)
            out.extend(_flatten(value, path))
        return out
    if isinstance(messages, list):
        out = []
        for msg in messages:
            out.extend(_flatten(msg, prefix))
        return out
    return [f"{prefix}: {messages}" if prefix else str(messages)]


def merge(base: Dict, override: Dict) -> Dict:
    """Deep-merge override onto base; regime lists merge element-wise."""
    result = copy.deepcopy(base)
    for key, value in override.items():
        current = result.get(key)
        if isinstance(current, dict) and isinstance(value, dict):
            result[key] = merge(current, value)
        elif key == "regimes" and isinstance(current, list) and isinstance(value, list):
            merged = [merge(c, v) if isinstance(v, dict) else v for c, v in zip(current, value)]
            result[key] = merged + copy.deepcopy(value[len(current):])
        else:
            result[key] = copy.deepcopy(value)
    return result


def parse_config(data: Dict, label: Optional[str] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a JSON object")
    merged = merge(DEFAULTS, data)
    if label and "label" not in data:
        merged["label"] = label
    try:
        return RunConfigSchema().load(merged)
    except ValidationError as err:
        errors = _flatten(err.messages)
        raise ConfigError("Validation error", errors) from err
    except Exception as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def default_config() -> RunConfig:
    return parse_config({})


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a JSON (or YAML) run configuration and fill omitted fields with the shipped defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file {path} not found")
    try:
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Failed to parse {path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"Failed to read {path}: {e}") from e

    config = parse_config(data, label=path.stem)
    logger.info(f"Loaded config {path} ({config.label})")
    return config


def dump_config(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2)
