"""Run configuration: a YAML/JSON file merged with command-line overrides.

Keys are dotted (``prior.gamma``); files nest them by section.  Unknown keys
are rejected, every value is type-checked before any computation starts, and
command-line values win over file values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .errors import DataIOError, ValidationError
from .lattice import Boundary, TemplateClique
from .likelihood import DEFAULT_EXCHANGE_SWEEPS, ENGINES, TRANSFER_MAX_HEIGHT
from .prior import PriorConfig
from .sampler import SamplerConfig

log = logging.getLogger(__name__)

# key -> (type, default)
SCHEMA: dict[str, tuple[type, Any]] = {
    "data.image": (str, None),
    "data.covariates": (str, None),
    "data.boundary": (str, "torus"),
    "model.template": (str, "2x2"),
    "model.template_cap": (int, 12),
    "likelihood.engine": (str, "exchange"),
    "likelihood.exchange_sweeps": (int, DEFAULT_EXCHANGE_SWEEPS),
    "likelihood.transfer_cap": (int, TRANSFER_MAX_HEIGHT),
    "prior.gamma": (float, 0.5),
    "prior.sigma_phi": (float, 10.0),
    "prior.sigma_theta": (float, 10.0),
    "sampler.sigma": (float, 0.3),
    "sampler.covariate_step": (float, 0.1),
    "sampler.iterations": (int, 1000),
    "sampler.thinning": (int, 1),
    "sampler.seed": (int, 0),
    "sampler.tree_depth": (int, 1),
    "sampler.checkpoint_every": (int, 0),
    "sampler.init": (str, None),
    "simulate.model": (str, None),
    "simulate.n": (int, None),
    "simulate.m": (int, None),
    "simulate.sweeps": (int, 200),
    "simulate.format": (str, "text"),
    "output.dir": (str, None),
}


def flatten(doc: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _coerce(key: str, value: Any) -> Any:
    kind, _ = SCHEMA[key]
    if value is None:
        return None
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, str)) or (isinstance(value, float)):
            raise ValidationError(f"{key}: expected an integer, got {value!r}")
        try:
            return int(value)
        except ValueError:
            raise ValidationError(f"{key}: expected an integer, got {value!r}") from None
    if kind is float:
        if isinstance(value, bool):
            raise ValidationError(f"{key}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValidationError(f"{key}: expected a number, got {value!r}") from None
    if not isinstance(value, (str, int, float)) or isinstance(value, bool):
        raise ValidationError(f"{key}: expected a string, got {value!r}")
    return str(value)


def load_file(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise ValidationError(f"config {path} must be a mapping of sections")
    return flatten(doc)


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def nested(self) -> dict:
        out: dict = {}
        for key, value in sorted(self.values.items()):
            section, name = key.split(".", 1)
            out.setdefault(section, {})[name] = value
        return out

    def template(self) -> TemplateClique:
        return TemplateClique.parse(self["model.template"])

    def boundary(self) -> Boundary:
        return Boundary(self["data.boundary"])

    def prior(self, class_count: int) -> PriorConfig:
        return PriorConfig(class_count, self["prior.gamma"], self["prior.sigma_phi"], self["prior.sigma_theta"])

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            iterations=self["sampler.iterations"],
            sigma=self["sampler.sigma"],
            covariate_step=self["sampler.covariate_step"],
            thinning=self["sampler.thinning"],
            seed=self["sampler.seed"],
            tree_depth=self["sampler.tree_depth"],
            checkpoint_every=self["sampler.checkpoint_every"],
        )


def parse_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge defaults, the optional file and the overrides (None means 'not given')."""
    from_file = load_file(path) if path is not None else {}
    unknown = sorted(set(from_file) - set(SCHEMA))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, value in from_file.items():
        values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ValidationError(f"unknown config key {key}")
        if value is None:
            continue
        value = _coerce(key, value)
        if key in from_file and values[key] != value:
            log.info("command line overrides %s: %r (file) -> %r", key, values[key], value)
        values[key] = value
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        Boundary(cfg["data.boundary"])
    except ValueError:
        raise ValidationError(f"data.boundary must be 'torus' or 'free', got {cfg['data.boundary']!r}") from None
    cfg.template()
    if cfg["model.template_cap"] < 1:
        raise ValidationError("model.template_cap must be positive")
    if cfg["likelihood.engine"] not in ENGINES:
        raise ValidationError(f"likelihood.engine must be one of {sorted(ENGINES)}, got {cfg['likelihood.engine']!r}")
    if cfg["likelihood.exchange_sweeps"] < 1:
        raise ValidationError("likelihood.exchange_sweeps must be at least 1")
    if cfg["likelihood.transfer_cap"] < 1:
        raise ValidationError("likelihood.transfer_cap must be positive")
    if cfg["simulate.sweeps"] < 1:
        raise ValidationError("simulate.sweeps must be at least 1")
    for key in ("simulate.n", "simulate.m"):
        if cfg[key] is not None and cfg[key] < 1:
            raise ValidationError(f"{key} must be positive")
    if cfg["simulate.format"] not in ("text", "pbm", "p1"):
        raise ValidationError("simulate.format must be text, pbm or p1")
    cfg.prior(1)
    cfg.sampler()
