"""Run configuration files: JSON documents mirroring the dataclass knobs.

A config document has up to five sections (``train``, ``synth``, ``mask``,
``sbi``, ``net``), each mirroring one parameter dataclass field for field.
Unknown sections or keys are rejected.  Precedence when assembling the
effective configuration is: built-in defaults < config file < environment
(``CDFA_SEED``) < command-line overrides.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .data import SynthConfig
from .errors import ConfigError
from .geometry import MaskParams
from .augment import SbiParams
from .nets import NetConfig
from .trainer import TrainConfig

SEED_ENV_VAR = "CDFA_SEED"

_SECTION_TYPES = {
    "train": TrainConfig,
    "synth": SynthConfig,
    "mask": MaskParams,
    "sbi": SbiParams,
    "net": NetConfig,
}

# Sections whose dataclasses have required fields get defaults here.
_SYNTH_DEFAULTS = {"n_identities": 12, "frames_per_video": 8}

_TUPLE_FIELDS = {
    "enabled_ops",
    "conv_channels",
    "policy_hidden",
    "manipulations",
    "blur_sigma_range",
    "intensity_levels",
}


@dataclass
class RunConfig:
    """The five parameter bundles one experiment runs with."""

    train: TrainConfig
    synth: SynthConfig
    mask: MaskParams
    sbi: SbiParams
    net: NetConfig

    def as_doc(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTION_TYPES}


def default_config_doc() -> dict:
    """The complete default configuration as a plain nested dict."""
    doc = {}
    for name, cls in _SECTION_TYPES.items():
        if name == "synth":
            doc[name] = dataclasses.asdict(cls(**_SYNTH_DEFAULTS))
        else:
            doc[name] = dataclasses.asdict(cls())
    return doc


def _known_keys(section: str) -> set[str]:
    return {f.name for f in dataclasses.fields(_SECTION_TYPES[section])}


def _validate_doc(doc: dict, source: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: config document must be a JSON object")
    for section, values in doc.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"{source}: unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: section {section!r} must be an object")
        unknown = set(values) - _known_keys(section)
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) {sorted(unknown)} in section {section!r}")


def load_config_doc(path) -> dict:
    """Read and validate a partial config document from a JSON file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    _validate_doc(doc, str(path))
    return doc


def merge_docs(base: dict, override: dict) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for section, values in override.items():
        out.setdefault(section, {}).update(values)
    return out


def parse_set_overrides(pairs) -> dict:
    """Parse ``section.key=value`` strings; values are parsed as JSON when
    possible, otherwise taken as strings."""
    doc: dict = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        if "." not in key:
            raise ConfigError(f"--set key must be section.key, got {key!r}")
        section, field_name = key.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        doc.setdefault(section, {})[field_name] = value
    _validate_doc(doc, "--set")
    return doc


def env_overrides(environ=None) -> dict:
    """Overrides implied by the environment (CDFA_SEED -> both seed fields)."""
    environ = environ if environ is not None else os.environ
    raw = environ.get(SEED_ENV_VAR)
    if raw is None:
        return {}
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None
    return {"train": {"seed": seed}, "synth": {"seed": seed}}


def build_run_config(doc: dict) -> RunConfig:
    """Instantiate the dataclasses from a full (defaults-merged) document."""
    full = merge_docs(default_config_doc(), doc)
    _validate_doc(full, "config")
    kwargs = {}
    for section, cls in _SECTION_TYPES.items():
        values = dict(full[section])
        for key in list(values):
            if key in _TUPLE_FIELDS and isinstance(values[key], list):
                values[key] = tuple(
                    tuple(v) if isinstance(v, list) else v for v in values[key]
                )
        try:
            kwargs[section] = cls(**values)
        except TypeError as exc:
            raise ConfigError(f"section {section!r}: {exc}") from None
    return RunConfig(**kwargs)


def resolve_config(
    config_path=None,
    set_overrides=None,
    cli_overrides: dict | None = None,
    environ=None,
) -> tuple[RunConfig, dict]:
    """Apply the full precedence chain and return (config, provenance).

    ``provenance`` records the file, environment, and CLI layers that went
    into the resolved document, for the command log header.
    """
    file_doc = load_config_doc(config_path) if config_path else {}
    env_doc = env_overrides(environ)
    cli_doc = merge_docs(parse_set_overrides(set_overrides), cli_overrides or {})
    merged = merge_docs(merge_docs(file_doc, env_doc), cli_doc)
    run_config = build_run_config(merged)
    provenance = {
        "config_file": str(config_path) if config_path else None,
        "file_overrides": file_doc,
        "env_overrides": env_doc,
        "cli_overrides": cli_doc,
    }
    return run_config, provenance
