"""Run configuration, delimited output, and JSON summaries.

Configuration is TOML with one table per concern ([params], [run],
[simulate], [sweep], [suite]) plus dotted command-line overrides.  Every
numeric emitted to CSV uses the shortest round-trip format so reruns of a
deterministic pipeline produce byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib
from dataclasses import dataclass

import numpy as np

from .model import Parameters
from .simulate import RunSettings

__all__ = [
    "ConfigError",
    "SimulateOptions",
    "SweepOptions",
    "SuiteOptions",
    "RunConfig",
    "load_config",
    "apply_overrides",
    "write_csv",
    "write_json",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


@dataclass(frozen=True)
class SimulateOptions:
    """Seed coefficients and optional shooting refinement for one run."""

    dhat: tuple = ()
    refine: bool = False
    horizons: tuple = ()


@dataclass(frozen=True)
class SweepOptions:
    """Grid of seed boxes for the shooting sweep.

    The default box is the preimage of the trapping set (unit seed
    coefficients land exactly on the set boundary); seeds are admissible up
    to box 2, beyond the set, where exits are definitional rather than
    crossings.
    """

    points: int = 3
    box: float = 1.0
    horizon: float = 3.0

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("sweep.points must be at least 2")
        if not (self.box > 0 and self.horizon > 0):
            raise ValueError("sweep.box and sweep.horizon must be positive")
        if self.box > 2.0:
            raise ValueError("sweep.box must stay within the admissible seed box [-2, 2]")


@dataclass(frozen=True)
class SuiteOptions:
    """Suite-level knobs; output_dir has no default and must be supplied."""

    seed: int = 7
    samples: int = 20
    output_dir: str | None = None
    figures: bool = False

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("suite.samples must be positive")


@dataclass(frozen=True)
class RunConfig:
    params: Parameters = Parameters()
    run: RunSettings = RunSettings()
    simulate: SimulateOptions = SimulateOptions()
    sweep: SweepOptions = SweepOptions()
    suite: SuiteOptions = SuiteOptions()


_SECTIONS = {
    "params": Parameters,
    "run": RunSettings,
    "simulate": SimulateOptions,
    "sweep": SweepOptions,
    "suite": SuiteOptions,
}


def _build_section(name: str, cls, table: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    coerced = {}
    for key, val in table.items():
        if isinstance(val, list):
            val = tuple(val)
        coerced[key] = val
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] configuration: {exc}") from exc


def _parse_override(text: str) -> tuple[str, str, object]:
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    key, _, raw = text.partition("=")
    key = key.strip()
    if key.count(".") != 1:
        raise ConfigError(f"override key must be section.key, got {key!r}")
    section, field_name = key.split(".")
    try:
        val = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        val = raw.strip()
    return section, field_name, val


def apply_overrides(raw: dict, overrides) -> dict:
    for text in overrides or ():
        section, field_name, val = _parse_override(text)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r} in override {text!r}")
        raw.setdefault(section, {})[field_name] = val
    return raw


def load_config(path: str | None = None, overrides=None) -> RunConfig:
    """Build a validated RunConfig from an optional TOML file and overrides."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file is not valid TOML: {exc}") from exc
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    raw = apply_overrides(raw, overrides)
    parts = {name: _build_section(name, cls, raw.get(name, {})) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(
        params=parts["params"],
        run=parts["run"],
        simulate=parts["simulate"],
        sweep=parts["sweep"],
        suite=parts["suite"],
    )
    if cfg.simulate.dhat and len(cfg.simulate.dhat) != 2 * cfg.params.k:
        raise ConfigError(
            f"simulate.dhat must have {2 * cfg.params.k} entries, got {len(cfg.simulate.dhat)}"
        )
    if not cfg.suite.output_dir:
        raise ConfigError("suite.output_dir is required (or pass --outdir)")
    return cfg


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows, fieldnames) -> None:
    """Write dict rows with a fixed column order and round-trip floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_format_cell(row[name]) for name in fieldnames])


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def write_json(path, payload: dict) -> None:
    """Write a summary document carrying the schema version."""
    doc = {"schema": SCHEMA_VERSION}
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")
