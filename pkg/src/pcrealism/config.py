"""Run configuration: INI files, overrides and the resolved run record.

Schema (every key optional; unknown sections or keys are errors)::

    [train]
    batch_size = 8          steps = 6000        lam = 0.3
    seed = 0                model_seed = 0      eval_every = 0
    eval_clouds = 60        lr0 = 0.001         warmup = 500
    gamma = 0.5             decay_steps = 5000  point_budget = 16384
    u_a = 7

    [generate]
    n = 10                  # samples per dataset
    format = xyz            # xyz | f32 | bin | ply
    split = train           # train | test

    [score]
    budget = 16384          k = 4

    [sweep]
    lambdas = 0, 0.3, 1     sigmas = 0, 0.1, 1, 3, 10
    n_clouds = 100          dataset = sim_city

    [eval]
    factor = 4              n_scans = 50        dataset = real_urban

    [dataset.NAME]          # one per support set; replaces the defaults
    id = 0                  category = real     generator = real_surrogate
    size = 400              # or "inf" for an on-the-fly stream
    ...                     # generator parameters, e.g. style = urban

Overrides are applied in this order: file, environment, ``--set``.
Environment variables use ``PCREAL_<SECTION>__<KEY>`` (dataset sections
as ``PCREAL_DATASET__<NAME>__<KEY>``); names are matched lowercase.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import io
import json
import math
import os

from .datasets import CATEGORY_IDS, GENERATOR_KEYS, PATTERN_KEYS, DatasetSpec, default_datasets
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none") else int(text)


SCHEMA = {
    "train": {
        "batch_size": int, "steps": int, "lam": float, "seed": int, "model_seed": int,
        "eval_every": int, "eval_clouds": int, "lr0": float, "warmup": int, "gamma": float,
        "decay_steps": int, "point_budget": _opt_int, "u_a": _opt_int,
    },
    "generate": {"n": int, "format": str, "split": str},
    "score": {"budget": _opt_int, "k": int},
    "sweep": {"lambdas": _floats, "sigmas": _floats, "n_clouds": int, "dataset": str},
    "eval": {"factor": int, "n_scans": int, "dataset": str},
}

DEFAULTS = {
    "train": {"batch_size": 8, "steps": 6000, "lam": 0.3, "seed": 0, "model_seed": 0,
              "eval_every": 0, "eval_clouds": 60, "lr0": 1e-3, "warmup": 500, "gamma": 0.5,
              "decay_steps": 5000, "point_budget": 16384, "u_a": None},
    "generate": {"n": 10, "format": "xyz", "split": "train"},
    "score": {"budget": 16384, "k": 4},
    "sweep": {"lambdas": [0.0, 0.3, 1.0], "sigmas": [0.0, 0.1, 1.0, 3.0, 10.0],
              "n_clouds": 100, "dataset": "sim_city"},
    "eval": {"factor": 4, "n_scans": 50, "dataset": "real_urban"},
}

DATASET_KEYS = {"id", "category", "generator", "size"}
FORMATS = ("xyz", "f32", "bin", "ply")
SPLITS = {"train": 0, "test": 1}


def _scalar(text):
    """Generator parameter value: int, float or string."""
    if not isinstance(text, str):
        return text
    try:
        return int(text)
    except ValueError:
        pass
    try:
        v = float(text)
    except ValueError:
        return text
    return v if math.isfinite(v) else text


def _dataset_section(name, spec: DatasetSpec) -> dict:
    out = {"id": spec.dataset_id,
           "category": [k for k, v in CATEGORY_IDS.items() if v == spec.category][0],
           "generator": spec.generator,
           "size": "inf" if spec.size is None else spec.size}
    out.update(spec.params)
    return out


class RunConfig:
    """Resolved configuration for one command.

    ``sections`` maps section name to a dict of typed values; dataset
    sections are named ``dataset.<name>``.
    """

    def __init__(self):
        self.sections = copy.deepcopy(DEFAULTS)
        self.datasets = {spec.name: _dataset_section(spec.name, spec) for spec in default_datasets()}

    # -- mutation --------------------------------------------------------------

    def set(self, section: str, key: str, value) -> None:
        section = section.strip().lower()
        key = key.strip().lower()
        if section.startswith("dataset."):
            name = section[len("dataset."):]
            if not name:
                raise ConfigError(f"empty dataset name in section {section!r}")
            entry = self.datasets.setdefault(name, {})
            allowed = DATASET_KEYS | PATTERN_KEYS | set().union(*GENERATOR_KEYS.values())
            gen = entry.get("generator") if key != "generator" else value
            if gen in GENERATOR_KEYS:
                allowed = DATASET_KEYS | PATTERN_KEYS | GENERATOR_KEYS[gen]
            if key not in allowed:
                raise ConfigError(f"unknown key {section}.{key}")
            entry[key] = _scalar(value) if key not in ("category", "generator") else str(value)
            return
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        try:
            self.sections[section][key] = SCHEMA[section][key](value) if isinstance(value, str) \
                else value
        except ValueError:
            raise ConfigError(f"bad value {value!r} for {section}.{key}") from None

    def apply_override(self, text: str) -> None:
        """``section.key=value`` (dataset keys: ``dataset.NAME.key=value``)."""
        if "=" not in text:
            raise ConfigError(f"override {text!r} is not of the form section.key=value")
        lhs, value = text.split("=", 1)
        lhs = lhs.strip()
        if "." not in lhs:
            raise ConfigError(f"override key {lhs!r} needs a section prefix")
        section, key = lhs.rsplit(".", 1)
        self.set(section, key, value.strip())

    def apply_env(self, environ=None) -> None:
        environ = os.environ if environ is None else environ
        for var in sorted(environ):
            if not var.startswith("PCREAL_") or "__" not in var:
                continue
            parts = var[len("PCREAL_"):].lower().split("__")
            if parts[0] == "dataset" and len(parts) == 3:
                self.set(f"dataset.{parts[1]}", parts[2], environ[var])
            elif len(parts) == 2:
                self.set(parts[0], parts[1], environ[var])
            else:
                raise ConfigError(f"cannot interpret environment variable {var}")

    # -- views -----------------------------------------------------------------

    def dataset_specs(self):
        specs = []
        for name, entry in self.datasets.items():
            missing = {"id", "category", "generator"} - set(entry)
            if missing:
                raise ConfigError(f"dataset.{name}: missing key {sorted(missing)[0]}")
            cat = str(entry["category"]).lower()
            if cat not in CATEGORY_IDS:
                raise ConfigError(f"dataset.{name}: unknown category {entry['category']!r}")
            size = entry.get("size", "inf")
            size = None if str(size).lower() in ("inf", "none", "") else int(size)
            params = {k: v for k, v in entry.items() if k not in DATASET_KEYS}
            try:
                specs.append(DatasetSpec(int(entry["id"]), name, CATEGORY_IDS[cat],
                                         str(entry["generator"]), params, size))
            except ValueError as e:
                raise ConfigError(str(e)) from None
        return specs

    def validate(self) -> "RunConfig":
        """Raise :class:`ConfigError` unless the datasets and training values are usable."""
        self.train_config()
        return self

    def train_config(self) -> TrainConfig:
        t = self.sections["train"]
        try:
            return TrainConfig(datasets=self.dataset_specs(), **t)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        out = copy.deepcopy(self.sections)
        for name, entry in self.datasets.items():
            out[f"dataset.{name}"] = dict(entry)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for sec, values in self.to_dict().items():
            parser[sec] = {k: (", ".join(repr(x) for x in v) if isinstance(v, list)
                               else "none" if v is None else str(v)) for k, v in values.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls()
        cfg.datasets = {}
        for sec, values in data.items():
            for key, value in values.items():
                cfg.set(sec, key, value)
        return cfg


def parse_ini(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    cfg = RunConfig()
    if any(s.lower().startswith("dataset.") for s in parser.sections()):
        # dataset sections in a file replace the built-in support sets
        cfg.datasets = {}
    for sec in parser.sections():
        for key, value in parser.items(sec):
            cfg.set(sec, key, value)
    return cfg.validate()


def load(path=None, overrides=(), environ=None) -> RunConfig:
    """File (optional), then environment, then ``--set`` overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        cfg = parse_ini(text, str(path))
    cfg.apply_env(environ)
    for item in overrides:
        cfg.apply_override(item)
    return cfg.validate()
