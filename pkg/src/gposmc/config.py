"""Run configuration: a JSON document validated against a fixed schema
(unknown keys are errors), with model-dependent defaults resolved before
any computation, plus return-series ingestion from CSV.
"""

import csv
import datetime
import json
import math

import numpy as np
from dataclasses import dataclass

from .errors import ConfigurationError, IngestError
from .models import (ASV, GSV, MODEL_COMPONENTS, PRIOR_FAMILIES, PriorSpec,
                     SearchBox, ThetaVector, default_prior, default_search_box)

SCHEMA_VERSION = 1

_REQUIRED = object()

# section -> key -> (types, default); _REQUIRED means the key must be given
_SCHEMA = {
    "model": {
        "id": ((str,), _REQUIRED),
        "parameters": ((dict,), None),
    },
    "prior": None,       # per-component blocks, validated separately
    "search_box": None,  # per-component [lo, hi] pairs
    "data": {
        "path": ((str,), _REQUIRED),
        "mode": ((str,), "returns"),
        "value_column": ((str,), _REQUIRED),
        "date_column": ((str, type(None)), None),
        "asset": ((str, type(None)), None),
    },
    "smc": {
        "n_particles": ((int,), 2000),
        "use_abc": ((bool, type(None)), None),
        "epsilon": ((float, int, type(None)), None),
        "psi": ((str, type(None)), None),
    },
    "gpo": {
        "L": ((int,), 50),
        "K": ((int,), 450),
        "refit_interval": ((int,), 25),
        "zeta": ((float, int), 0.01),
        "jitter_variance": ((float, int, list), 0.01),
        "direct_budget": ((int,), 2000),
        "eb_restarts": ((int,), 3),
        "ei_threshold": ((float, int, type(None)), None),
    },
    "pmh": {
        "theta0": ((list, type(None)), None),
        "iterations": ((int,), 15000),
        "burnin": ((int,), 5000),
        "proposal_covariance": ((list, type(None)), None),
    },
    "spsa": {
        "theta0": ((list, type(None)), None),
        "a": ((float, int), 0.001),
        "c": ((float, int), 0.30),
        "A": ((float, int), 35.0),
        "alpha_exp": ((float, int), 0.602),
        "gamma_exp": ((float, int), 0.101),
        "iterations": ((int,), 350),
    },
    "epsilon_sweep": {
        "epsilons": ((list,), [0.1, 0.2, 0.3, 0.4, 0.5]),
    },
    "simulate": {
        "T": ((int,), 500),
    },
    "var": {
        "assets": ((list,), _REQUIRED),
        "n_estimation": ((int,), _REQUIRED),
        "alpha": ((float, int), 0.99),
        "draws": ((int,), 100000),
        "weights": ((list, type(None)), None),
        "nu_bounds": ((list,), [2.1, 100.0]),
    },
    "backtest": {
        "var_csv": ((str,), _REQUIRED),
        "alpha": ((float, int), 0.99),
    },
}

_TOP_KEYS = set(_SCHEMA) | {"schema_version", "seed"}

_ASSET_FIELDS = {
    "id": ((str,), _REQUIRED),
    "path": ((str,), _REQUIRED),
    "mode": ((str,), "returns"),
    "value_column": ((str,), _REQUIRED),
    "date_column": ((str, type(None)), None),
}


def _check_keys(block: dict, allowed, where: str):
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {unknown}")


def _apply_schema(block: dict, fields: dict, where: str) -> dict:
    if not isinstance(block, dict):
        raise ConfigurationError(f"{where} must be an object")
    _check_keys(block, fields, where)
    out = {}
    for key, (types, default) in fields.items():
        if key in block:
            value = block[key]
            if isinstance(value, bool) and bool not in types:
                raise ConfigurationError(f"{where}.{key} must not be a boolean")
            if not isinstance(value, types):
                raise ConfigurationError(
                    f"{where}.{key} has type {type(value).__name__}, expected "
                    f"{'/'.join(t.__name__ for t in types)}")
            out[key] = value
        elif default is _REQUIRED:
            raise ConfigurationError(f"{where}.{key} is required")
        else:
            out[key] = default
    return out


def _validate_prior_block(block: dict) -> dict:
    if not isinstance(block, dict):
        raise ConfigurationError("prior must map component names to distributions")
    out = {}
    for name, spec in block.items():
        if not isinstance(spec, dict) or "family" not in spec:
            raise ConfigurationError(f"prior.{name} needs a 'family' key")
        family = spec["family"]
        if family not in PRIOR_FAMILIES:
            raise ConfigurationError(
                f"prior.{name}.family {family!r} not one of {sorted(PRIOR_FAMILIES)}")
        params = {k: v for k, v in spec.items() if k != "family"}
        try:
            dist = PRIOR_FAMILIES[family](**params)
        except TypeError as exc:
            raise ConfigurationError(f"prior.{name}: {exc}") from None
        out[name] = dist
    return out


def _validate_box_block(block: dict) -> dict:
    if not isinstance(block, dict):
        raise ConfigurationError("search_box must map component names to [lower, upper]")
    out = {}
    for name, pair in block.items():
        if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                or not all(isinstance(v, (int, float)) for v in pair)):
            raise ConfigurationError(f"search_box.{name} must be a [lower, upper] pair")
        out[name] = (float(pair[0]), float(pair[1]))
    return out


@dataclass
class RunConfig:
    """Validated configuration with model-dependent defaults resolved."""

    raw: dict
    seed: int
    sections: dict

    def model_id(self) -> str:
        if "model" not in self.sections:
            raise ConfigurationError("this command needs a 'model' section in the config")
        return self.sections["model"]["id"]

    def prior(self) -> PriorSpec:
        names = MODEL_COMPONENTS[self.model_id()]
        block = self.sections.get("prior")
        if block is None:
            return default_prior(self.model_id())
        missing = [n for n in names if n not in block]
        if missing:
            raise ConfigurationError(f"prior missing components {missing}")
        extra = sorted(set(block) - set(names))
        if extra:
            raise ConfigurationError(f"prior has unknown components {extra}")
        return PriorSpec({n: block[n] for n in names})

    def search_box(self) -> SearchBox:
        block = self.sections.get("search_box")
        if block is None:
            return default_search_box(self.model_id())
        return SearchBox.from_dict(MODEL_COMPONENTS[self.model_id()], block)

    def theta(self) -> ThetaVector:
        params = self.sections["model"].get("parameters")
        if params is None:
            raise ConfigurationError("model.parameters is required for this command")
        names = MODEL_COMPONENTS[self.model_id()]
        missing = [n for n in names if n not in params]
        if missing:
            raise ConfigurationError(f"model.parameters missing {missing}")
        extra = sorted(set(params) - set(names))
        if extra:
            raise ConfigurationError(f"model.parameters has unknown components {extra}")
        return ThetaVector(self.model_id(), tuple(float(params[n]) for n in names))

    def abc_config(self):
        from .smc import AbcConfig, default_abc_config

        smc = self.sections["smc"]
        model_id = self.model_id()
        use_abc = smc["use_abc"]
        if use_abc is None:
            use_abc = model_id == ASV  # the stable model has no usable density
        if not use_abc:
            return None
        base = default_abc_config(model_id)
        return AbcConfig(
            epsilon=float(smc["epsilon"]) if smc["epsilon"] is not None else base.epsilon,
            psi=smc["psi"] if smc["psi"] is not None else base.psi,
        )

    def resolved(self, command: str) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "command": command, "seed": self.seed}
        for name, block in self.sections.items():
            if name in ("prior", "search_box"):
                out[name] = self.raw.get(name)
            else:
                out[name] = block
        return out


def validate_config(raw: dict) -> RunConfig:
    """Check every provided section against the schema, fill defaults, and
    reject unknown keys anywhere."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be an object")
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"schema_version {version} unsupported, expected {SCHEMA_VERSION}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigurationError("seed must be a non-negative integer")

    sections = {}
    for name, fields in _SCHEMA.items():
        if name not in raw:
            continue
        if name == "prior":
            sections[name] = _validate_prior_block(raw[name])
        elif name == "search_box":
            sections[name] = _validate_box_block(raw[name])
        else:
            sections[name] = _apply_schema(raw[name], fields, name)

    if "model" in sections:
        model_id = sections["model"]["id"]
        if model_id not in MODEL_COMPONENTS:
            raise ConfigurationError(
                f"model.id {model_id!r} not one of {sorted(MODEL_COMPONENTS)}")
    if "var" in sections:
        assets = []
        for i, entry in enumerate(sections["var"]["assets"]):
            assets.append(_apply_schema(entry, _ASSET_FIELDS, f"var.assets[{i}]"))
        sections["var"]["assets"] = assets
    # sections not given but needed later: fill pure-default blocks lazily
    for name in ("smc", "gpo", "pmh", "spsa", "epsilon_sweep", "simulate"):
        if name not in sections:
            sections[name] = _apply_schema({}, _SCHEMA[name], name)
    return RunConfig(raw=raw, seed=seed, sections=sections)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    return validate_config(raw)


def require_section(cfg: RunConfig, name: str) -> dict:
    if name not in cfg.sections:
        raise ConfigurationError(f"this command needs a {name!r} section in the config")
    return cfg.sections[name]


@dataclass
class ReturnSeries:
    """A clean, date-ordered return series for one asset."""

    asset: str
    dates: list
    returns: np.ndarray


def _parse_date(text: str, row: int):
    try:
        return datetime.date.fromisoformat(text.strip())
    except ValueError:
        raise IngestError(f"row {row}: unparseable date {text!r}") from None


def ingest_csv(path, value_column: str, mode: str = "returns",
               date_column: str = None, asset: str = None) -> ReturnSeries:
    """Load one asset's series from a headed CSV.

    ``mode='prices'`` turns prices s_t into returns 100 (log s_t - log
    s_{t-1}); non-positive prices are rejected with their row numbers.
    Dates, when a column is named, must parse as ISO and increase
    strictly. Row numbers in errors count from 1 at the header.
    """
    if mode not in ("prices", "returns"):
        raise ConfigurationError(f"mode must be 'prices' or 'returns', got {mode!r}")
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise IngestError(f"{path}: empty file")
            for col in filter(None, (value_column, date_column)):
                if col not in reader.fieldnames:
                    raise IngestError(
                        f"{path}: no column {col!r}; header has {reader.fieldnames}")
            values, dates = [], []
            for idx, rec in enumerate(reader, start=2):
                raw = (rec.get(value_column) or "").strip()
                if raw == "":
                    raise IngestError(f"row {idx}: missing value in {value_column!r}")
                try:
                    values.append(float(raw))
                except ValueError:
                    raise IngestError(
                        f"row {idx}: {raw!r} is not a number") from None
                if date_column is not None:
                    dates.append(_parse_date(rec[date_column] or "", idx))
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None

    if date_column is not None:
        for i in range(1, len(dates)):
            if dates[i] <= dates[i - 1]:
                raise IngestError(
                    f"row {i + 2}: date {dates[i]} not after {dates[i - 1]}")

    values = np.asarray(values, dtype=float)
    if mode == "prices":
        if values.shape[0] < 2:
            raise IngestError(f"{path}: price mode needs at least 2 rows")
        bad = [str(i + 2) for i in np.flatnonzero(values <= 0)]
        if bad:
            raise IngestError(
                f"{path}: non-positive prices at rows {', '.join(bad)}")
        returns = 100.0 * np.diff(np.log(values))
        dates = dates[1:] if date_column is not None else []
    else:
        if not np.all(np.isfinite(values)):
            raise IngestError(f"{path}: non-finite return values")
        returns = values
        dates = dates if date_column is not None else []
    return ReturnSeries(asset=asset or str(path), dates=dates, returns=returns)
