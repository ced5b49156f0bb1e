"""
Experiment configuration: JSON files checked against the published experiment
model (schemas.ExperimentModel) and the per-kind requirements before anything runs.
"""

import json
from dataclasses import dataclass, field
from os import path
from typing import Any, Dict, List, Optional

import numpy as np

from coagkit_errors import ConfigError
from coagkit_logging import logger
from coagkit_settings import settings
from kernels import Kernel, parse_kernel
from measures import DiscreteMeasure, make_measure, measure_from_csv, measure_from_json, monodisperse, sample_empirical
from schemas import ExperimentModel, validate_payload
from sublinear import SublinearFn, parse_sublinear
from truncation import Truncation, parse_truncation


# keys each kind cannot run without, on top of "kind"
REQUIRED_BY_KIND = {
    "solve": ["kernel", "initial", "t_end"],
    "simulate": ["kernel", "initial", "t_end"],
    "couple": ["kernel", "initial", "t_end", "truncation"],
    "family": ["kernel", "initial", "t_end", "truncations"],
    "nonuniq": ["t_end"],
    "converge": ["kernel", "initial", "t_end", "n_list", "replicas"],
    "concentrate": ["kernel", "initial", "t_end", "n_list", "replicas", "delta", "truncation"],
}


def parse_json(text: str, source: str = "<config>") -> Dict[str, Any]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {source}: {e.msg}", line=e.lineno, column=e.colno)
    if not isinstance(payload, dict):
        raise ConfigError(f"{source} must hold a JSON object")
    return payload


@dataclass
class ExperimentConfig:
    payload: Dict[str, Any]
    source: str = "<config>"
    seed_override: Optional[int] = None
    output_override: Optional[str] = None
    workers_override: Optional[int] = None
    _kernel: Optional[Kernel] = field(default=None, repr=False)

    @property
    def kind(self) -> str:
        return self.payload["kind"]

    @property
    def seed(self) -> int:
        if self.seed_override is not None:
            return int(self.seed_override)
        return int(self.payload.get("seed", settings.defaultSeed))

    @property
    def output(self) -> str:
        return self.output_override or self.payload.get("output", path.join("runs", self.kind))

    @property
    def workers(self) -> Optional[int]:
        if self.workers_override is not None:
            return self.workers_override
        return self.payload.get("workers")

    @property
    def t_end(self) -> float:
        return float(self.payload["t_end"])

    def get(self, key: str, default: Any = None) -> Any:
        return self.payload.get(key, default)

    def tolerance(self, key: str, default: float) -> float:
        return float(self.payload.get("tolerances", {}).get(key, default))

    def kernel(self) -> Kernel:
        if self._kernel is None:
            self._kernel = parse_kernel(self.payload["kernel"])
        return self._kernel

    def phi(self) -> SublinearFn:
        if "phi" in self.payload:
            return parse_sublinear(self.payload["phi"])
        return self.kernel().phi

    def truncation(self) -> Truncation:
        return parse_truncation(self.payload.get("truncation", "all"))

    def truncations(self) -> List[Truncation]:
        return [parse_truncation(spec) for spec in self.payload["truncations"]]

    def times(self) -> np.ndarray:
        if "times" in self.payload:
            times = np.asarray(self.payload["times"], dtype=float)
            if times[-1] > self.t_end or np.any(np.diff(times) <= 0):
                raise ConfigError("times must increase and end at or before t_end", field="times")
            return times
        return np.linspace(0.0, self.t_end, int(self.payload.get("samples", settings.sampleGridPoints)))

    def initial_measure(self) -> DiscreteMeasure:
        """mu0 itself: for a sample spec, the measure sampled from."""
        spec = self.payload["initial"]
        try:
            if "atoms" in spec:
                return make_measure(spec["atoms"], float(spec.get("epsilon_mass", 0.0)))
            if "monodisperse" in spec:
                mono = spec["monodisperse"]
                if isinstance(mono, dict):
                    return monodisperse(float(mono.get("count", 1.0)), float(mono.get("mass", 1.0)))
                return monodisperse(float(mono))
            if "sample" in spec:
                return make_measure(spec["sample"]["from"], float(spec.get("epsilon_mass", 0.0)))
            if "file" in spec:
                return self._measure_file(spec["file"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed initial measure spec: {e}", field="initial")
        raise ConfigError("initial needs one of atoms, monodisperse, sample, file", field="initial")

    def _measure_file(self, name: str) -> DiscreteMeasure:
        """A measure saved by to_json or to_csv; relative paths start at the config file."""
        if not path.isabs(name) and path.isfile(self.source):
            name = path.join(path.dirname(self.source), name)
        try:
            if name.endswith(".csv"):
                return measure_from_csv(name, float(self.payload["initial"].get("epsilon_mass", 0.0)))
            with open(name, "r", encoding="utf-8") as f:
                return measure_from_json(json.load(f))
        except OSError as e:
            raise ConfigError(f"Cannot read initial measure {name}: {e}", field="initial.file")

    def initial_particles(self, n: Optional[int], rng: np.random.Generator) -> np.ndarray:
        """
        Particle array for a chain of size n. An exact multiple n*mu0 is used
        when it has integer weights; otherwise (and always for sample specs)
        n masses are drawn i.i.d. from mu0.
        """
        spec = self.payload["initial"]
        mu0 = self.initial_measure()
        if "sample" in spec:
            n = n if n is not None else int(spec["sample"].get("n", 0))
            if n < 1:
                raise ConfigError("sample initial data needs a size n", field="initial.sample.n")
            mu0 = sample_empirical(mu0, n, rng)
            return np.repeat(mu0.masses, np.rint(mu0.weights * n).astype(int))
        scale = 1 if n is None else n
        counts = mu0.weights * scale
        if np.allclose(counts, np.rint(counts), rtol=0, atol=1e-9):
            return np.repeat(mu0.masses, np.rint(counts).astype(int))
        if n is None:
            raise ConfigError("Particle initial data needs integer weights or a sample spec", field="initial")
        sampled = sample_empirical(mu0, n, rng)
        return np.repeat(sampled.masses, np.rint(sampled.weights * n).astype(int))

    def config_hash_payload(self) -> Dict[str, Any]:
        payload = dict(self.payload)
        payload["seed"] = self.seed
        return payload


def validate_config(payload: Dict[str, Any], source: str = "<config>") -> None:
    validate_payload(ExperimentModel, payload)
    for key in REQUIRED_BY_KIND[payload["kind"]]:
        if key not in payload:
            raise ConfigError(f"kind={payload['kind']} needs {key!r}", field=key)
    logger.debug(f"Configuration {source} validated for kind={payload['kind']}")


def load_config(config_path: str, seed: Optional[int] = None, output: Optional[str] = None, workers: Optional[int] = None, kind: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {config_path}: {e}")
    return config_from_text(text, config_path, seed, output, workers, kind)


def config_from_text(
    text: str,
    source: str = "<config>",
    seed: Optional[int] = None,
    output: Optional[str] = None,
    workers: Optional[int] = None,
    kind: Optional[str] = None,
) -> ExperimentConfig:
    """kind, when given, fills a missing 'kind' key and must match a present one."""
    payload = parse_json(text, source)
    if kind is not None:
        if payload.setdefault("kind", kind) != kind:
            raise ConfigError(f"Config kind {payload['kind']!r} does not match the {kind!r} command", field="kind")
    validate_config(payload, source)
    return ExperimentConfig(payload, source, seed, output, workers)


def config_from_dict(payload: Dict[str, Any], seed: Optional[int] = None, output: Optional[str] = None, workers: Optional[int] = None) -> ExperimentConfig:
    validate_config(payload)
    return ExperimentConfig(dict(payload), "<dict>", seed, output, workers)
