"""JSON experiment configs: schema validation, defaults and canonical round-trips."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from importlib import resources

import jsonschema

from .fedloop import FederationConfig
from .numerics import ConfigurationError, optimizer_from_dict, optimizer_to_dict
from .weighting import WeightingMethod

_OPT_FIELDS = ("client_opt", "server_opt", "disc_opt", "gan_opt")


def schema() -> dict:
    text = resources.files("fedgolab").joinpath("configs/config.schema.json").read_text()
    return json.loads(text)


def packaged(name: str) -> dict:
    """Raw dict of a config shipped with the package, e.g. ``packaged("toy")``."""
    path = resources.files("fedgolab").joinpath(f"configs/{name}.json")
    if not path.is_file():
        raise ConfigurationError(f"no packaged config named {name!r}")
    return json.loads(path.read_text())


@dataclass
class RunSpec:
    federation: FederationConfig
    seeds: list[int]
    out: str | None = None


def _field_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(raw) -> None:
    """Raise ConfigurationError listing every schema violation by field."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"{_field_path(e)}: {e.message}" for e in errors]
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(lines))


def from_dict(raw: dict) -> RunSpec:
    validate(raw)
    kw = {k: v for k, v in raw.items() if k not in ("weighting", "tau", "seeds", "out")}
    for name in _OPT_FIELDS:
        if name in kw:
            try:
                kw[name] = optimizer_from_dict(kw[name])
            except TypeError as exc:
                raise ConfigurationError(f"invalid config:\n  {name}: {exc}") from None
    for name in ("byzantine", "hidden"):
        if name in kw:
            kw[name] = tuple(kw[name])
    kw["weighting"] = WeightingMethod.parse(raw["weighting"], raw.get("tau", 1.0))
    return RunSpec(FederationConfig(**kw), list(raw["seeds"]), raw.get("out"))


def to_dict(spec: RunSpec) -> dict:
    """Every field spelled out, keys in schema order."""
    cfg = spec.federation
    values = {}
    for f in fields(FederationConfig):
        v = getattr(cfg, f.name)
        if f.name in _OPT_FIELDS:
            v = optimizer_to_dict(v)
        elif f.name == "weighting":
            values["tau"] = float(v.tau)
            v = v.rule.value
        elif f.name == "disc_head":
            v = v.value
        elif isinstance(v, tuple):
            v = list(v)
        values[f.name] = v
    values["seeds"] = list(spec.seeds)
    if spec.out is not None:
        values["out"] = spec.out
    order = list(schema()["properties"])
    return {k: values[k] for k in order if k in values}


def dumps(spec: RunSpec) -> str:
    return json.dumps(to_dict(spec), indent=2) + "\n"


def load(path) -> RunSpec:
    """Read and validate a config file; OSError and JSON errors propagate to the caller."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return from_dict(raw)
