"""INI run configuration shared by the command-line tools.

A run file has up to four sections. ``[train]`` sets training
hyperparameters and the training artifact paths, ``[codec]`` adjusts the
virtual codec, ``[harness]`` controls the external-encoder harness, and
``[eval]`` sets evaluation inputs.  Unknown sections or keys are rejected
so typos fail loudly.  Keys that name files or directories are resolved
relative to the config file's own directory; the same keys given as
command-line overrides (``--train.out ...``) resolve relative to the
current directory.

Example::

    [train]
    steps = 2000
    batch_size = 4
    f_q_range = 30,50
    data = data/train/manifest.csv
    out = runs/preprocessed

    [eval]
    codec = virtual
    qps = 30,35,40,45,50
"""

import configparser
import os
from dataclasses import dataclass, field, fields

from .codec import VirtualCodecConfig
from .harness import DEFAULT_TEMPLATES, HarnessConfig
from .training import TrainConfig

__all__ = ["RunSettings", "load_settings", "parse_override_args"]


def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _str(s):
    return s


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _int_pair(s):
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {s!r}")
    return (int(parts[0]), int(parts[1]))


def _int_list(s):
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected at least one integer")
    return tuple(int(p) for p in parts)


_PATH = object()  # sentinel converter: resolved, kept as str

SCHEMA = {
    "train": {
        "alpha": _float,
        "lam": _float,
        "lr": _float,
        "f_q_range": _int_pair,
        "steps": _int,
        "batch_size": _int,
        "seed": _int,
        "mode": _str,
        "checkpoint_every": _int,
        "data": _PATH,
        "analyzer": _PATH,
        "out": _PATH,
        "resume": _PATH,
    },
    "codec": {
        "pred_block": _int,
        "transform_block": _int,
        "search_range": _int,
        "pixel_scale": _float,
        "min_prob": _float,
    },
    "harness": {
        "workers": _int,
        "keep_artifacts": _bool,
        "h264": _str,
        "h265": _str,
        "decode": _str,
    },
    "eval": {
        "codec": _str,
        "qps": _int_list,
        "method": _str,
        "data": _PATH,
        "analyzer": _PATH,
        "checkpoint": _PATH,
        "out": _PATH,
        "run_dir": _PATH,
    },
}

_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


@dataclass
class RunSettings:
    """Typed view of a run file plus overrides."""

    train: TrainConfig = field(default_factory=TrainConfig)
    codec: VirtualCodecConfig = field(default_factory=VirtualCodecConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    train_paths: dict = field(default_factory=dict)
    eval_opts: dict = field(default_factory=dict)


def parse_override_args(extras):
    """Turn leftover CLI args into (section, key, raw value) triples.

    Accepts ``--section.key value`` and ``--section.key=value``.  Anything
    else is a usage error.
    """
    triples = []
    i = 0
    while i < len(extras):
        arg = extras[i]
        if not arg.startswith("--") or "." not in arg:
            raise ValueError(f"unrecognized argument {arg!r}")
        body = arg[2:]
        if "=" in body:
            dotted, value = body.split("=", 1)
            i += 1
        else:
            dotted = body
            if i + 1 >= len(extras):
                raise ValueError(f"override {arg!r} is missing a value")
            value = extras[i + 1]
            i += 2
        section, _, key = dotted.partition(".")
        triples.append((section, key, value))
    return triples


def _check_known(section, key):
    if section not in SCHEMA:
        raise ValueError(
            f"unknown config section [{section}]; expected one of "
            f"{sorted(SCHEMA)}"
        )
    if key not in SCHEMA[section]:
        raise ValueError(
            f"unknown key {key!r} in [{section}]; expected one of "
            f"{sorted(SCHEMA[section])}"
        )


def load_settings(config_path=None, overrides=()):
    """Build :class:`RunSettings` from an optional INI file plus overrides.

    ``overrides`` is an iterable of (section, key, raw value) triples, as
    produced by :func:`parse_override_args`; they win over the file.
    """
    raw = {}  # (section, key) -> (raw string, base dir for paths)

    if config_path is not None:
        if not os.path.isfile(config_path):
            raise ValueError(f"config file not found: {config_path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(config_path)
        except configparser.Error as exc:
            raise ValueError(f"cannot parse {config_path}: {exc}") from exc
        base = os.path.dirname(os.path.abspath(config_path))
        for section in parser.sections():
            for key, value in parser.items(section):
                _check_known(section, key)
                raw[(section, key)] = (value, base)

    for section, key, value in overrides:
        _check_known(section, key)
        raw[(section, key)] = (value, os.getcwd())

    converted = {}
    for (section, key), (value, base) in raw.items():
        conv = SCHEMA[section][key]
        if conv is _PATH:
            converted[(section, key)] = os.path.normpath(
                os.path.join(base, value)
            )
        else:
            try:
                converted[(section, key)] = conv(value)
            except ValueError as exc:
                raise ValueError(
                    f"bad value for {section}.{key}: {exc}"
                ) from exc

    def section_dict(section):
        return {
            key: converted[(section, key)]
            for (s, key) in converted
            if s == section
        }

    train_all = section_dict("train")
    train_kwargs = {k: v for k, v in train_all.items() if k in _TRAIN_FIELDS}
    train_paths = {k: v for k, v in train_all.items() if k not in _TRAIN_FIELDS}

    harness_all = section_dict("harness")
    templates = dict(DEFAULT_TEMPLATES)
    for key in ("h264", "h265", "decode"):
        if key in harness_all:
            templates[key] = harness_all.pop(key)

    return RunSettings(
        train=TrainConfig(**train_kwargs),
        codec=VirtualCodecConfig(**section_dict("codec")),
        harness=HarnessConfig(templates=templates, **harness_all),
        train_paths=train_paths,
        eval_opts=section_dict("eval"),
    )
