"""
Run artifacts: tidy CSV tables, a gnuplot script next to each plotted table,
and a JSON summary that embeds the config hash and the seed next to runtime info.

CSV floats are written with 17 significant digits so that reruns with the
same config and seed produce identical bytes.
"""

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from os import path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from coagkit_logging import logger
from experiment_config import ExperimentConfig
from schemas import SCHEMA_VERSION, SummaryModel, validate_payload

FLOAT_FORMAT = "%.17g"
SUMMARY_FILE = "summary.json"


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=_plain)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config.config_hash_payload()).encode("utf-8")).hexdigest()


def _plain(value: Any) -> Any:
    """numpy scalars and arrays as plain JSON values; non-finite floats as strings."""
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class ArtifactBundle:
    out_dir: str
    files: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    exit_code: int = 0

    def __post_init__(self):
        os.makedirs(self.out_dir, exist_ok=True)

    def write_frame(self, frame: pd.DataFrame, name: str, plot: Optional[Dict[str, Any]] = None) -> str:
        csv_path = path.join(self.out_dir, f"{name}.csv")
        frame.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.files.append(f"{name}.csv")
        logger.debug(f"Wrote {csv_path} ({len(frame)} rows)")
        if plot is not None:
            self.write_plot_script(name, **plot)
        return csv_path

    def write_plot_script(self, name: str, x: str, y: str, group: Optional[str] = None, logx: bool = False, logy: bool = False, title: Optional[str] = None) -> str:
        """Gnuplot script for <name>.csv, one curve per value of the group column."""
        frame = pd.read_csv(path.join(self.out_dir, f"{name}.csv"), nrows=0)
        columns = list(frame.columns)
        xi, yi = columns.index(x) + 1, columns.index(y) + 1
        lines = [
            "set datafile separator ','",
            "set key autotitle columnhead",
            f"set title '{title or name}'",
            f"set xlabel '{x}'",
            f"set ylabel '{y}'",
        ]
        if logx:
            lines.append("set logscale x")
        if logy:
            lines.append("set logscale y")
        if group is None:
            lines.append(f"plot '{name}.csv' using {xi}:{yi} with linespoints title '{y}'")
        else:
            gi = columns.index(group) + 1
            values = pd.read_csv(path.join(self.out_dir, f"{name}.csv"), usecols=[group])[group].unique()
            curves = [f"'{name}.csv' using {xi}:(${gi}=={v} ? ${yi} : 1/0) with lines title '{group}={v}'" for v in values]
            lines.append("plot " + ", \\\n     ".join(curves))
        script_path = path.join(self.out_dir, f"{name}.gp")
        with open(script_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        self.files.append(f"{name}.gp")
        return script_path

    def write_json(self, payload: Dict[str, Any], name: str) -> str:
        json_path = path.join(self.out_dir, f"{name}.json")
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(_plain(payload), f, indent=2, sort_keys=True)
            f.write("\n")
        self.files.append(f"{name}.json")
        return json_path

    def write_summary(self, config: ExperimentConfig, results: Dict[str, Any], started: float, runtime: Dict[str, Any]) -> Dict[str, Any]:
        summary = {
            "kind": config.kind,
            "schema_version": SCHEMA_VERSION,
            "config_hash": config_hash(config),
            "seed": config.seed,
            "runtime": runtime,
            "results": _plain(results),
            "artifacts": sorted(self.files),
            "elapsed_secs": max(0.0, time.perf_counter() - started),
        }
        validate_payload(SummaryModel, summary)
        summary_path = path.join(self.out_dir, SUMMARY_FILE)
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        self.summary = summary
        logger.info(f"Summary written to {summary_path}")
        return summary
