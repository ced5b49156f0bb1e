"""
Published shapes of the experiment configuration and the run summary, as
pydantic models. They check structure and ranges only; what a kernel, phi,
truncation or initial spec means is left to the parsers that build them.
`coagkit schema experiment|summary` prints the JSON schema of either model.
"""

from typing import Annotated, Any, Dict, List, Literal, Tuple, Type, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from coagkit_errors import ConfigError

SCHEMA_VERSION = 1

KINDS = ("solve", "simulate", "couple", "family", "nonuniq", "converge", "concentrate")
Kind = Literal["solve", "simulate", "couple", "family", "nonuniq", "converge", "concentrate"]
TruncationSpec = Union[str, Dict[str, Any]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class ChainSection(_Strict):
    N_max: int = Field(default=None, ge=6)
    base: float = Field(default=None, ge=0)
    mass_base: float = Field(default=None, gt=0)


class MetricSection(_Strict):
    x_max: float = Field(default=None, gt=0)
    levels: int = Field(default=None, ge=1)


class ToleranceSection(_Strict):
    reference_lambda: float = Field(default=None, gt=0)
    mass_drift: float = Field(default=None, gt=0)
    # "lambda" is a keyword
    lambda_: float = Field(default=None, gt=0, alias="lambda")


class ExperimentModel(_Strict):
    model_config = ConfigDict(title="coagkit experiment configuration")

    version: Literal[1] = None
    kind: Kind
    kernel: Dict[str, Any] = None
    phi: Dict[str, Any] = None
    initial: Dict[str, Any] = None
    truncation: TruncationSpec = None
    truncations: List[TruncationSpec] = Field(default=None, min_length=1)
    t_end: float = Field(default=None, gt=0)
    samples: int = Field(default=None, ge=2)
    times: List[Annotated[float, Field(ge=0)]] = Field(default=None, min_length=1)
    method: Literal["rk", "picard"] = None
    solver: Dict[str, Any] = None
    seed: int = Field(default=None, ge=0)
    replicas: int = Field(default=None, ge=1)
    n: int = Field(default=None, ge=1)
    n_list: List[int] = Field(default=None, min_length=1)
    delta: float = Field(default=None, gt=0)
    resolution: float = Field(default=None, gt=0)
    norm: Literal["plain", "phi"] = None
    metric: MetricSection = None
    chain: ChainSection = None
    tolerances: ToleranceSection = None
    workers: int = Field(default=None, ge=0)
    output: str = None


class RuntimeSection(BaseModel):
    model_config = ConfigDict(extra="allow", strict=True)

    python: str
    platform: str
    physical_cores: int = Field(ge=1)


class SummaryModel(_Strict):
    model_config = ConfigDict(title="coagkit run summary")

    kind: Kind
    schema_version: Literal[1]
    config_hash: str
    seed: int = Field(ge=0)
    runtime: RuntimeSection
    results: Dict[str, Any]
    artifacts: List[str]
    elapsed_secs: float = Field(ge=0)


PUBLISHED: Dict[str, Type[BaseModel]] = {"experiment": ExperimentModel, "summary": SummaryModel}


def _field_path(payload: Any, loc: Tuple[Union[str, int], ...]) -> str:
    """Dotted key path of an error location, with list indices as [k] and union tags dropped."""
    label = ""
    current = payload
    for part in loc:
        if isinstance(current, dict) and isinstance(part, str):
            label = f"{label}.{part}" if label else part
            if part not in current:
                break
            current = current[part]
        elif isinstance(current, list) and isinstance(part, int) and 0 <= part < len(current):
            label = f"{label}[{part}]"
            current = current[part]
        else:
            break
    return label or "<root>"


def validate_payload(model: Type[BaseModel], payload: Dict[str, Any]) -> BaseModel:
    try:
        return model.model_validate(payload)
    except ValidationError as e:
        error = e.errors()[0]
        raise ConfigError(f"{error['msg']} ({e.error_count()} error(s) in {model.__name__})", field=_field_path(payload, tuple(error["loc"])))


def json_schema(name: str) -> Dict[str, Any]:
    schema = PUBLISHED[name].model_json_schema()
    schema["version"] = SCHEMA_VERSION
    return schema
