"""Run configuration: a single JSON document with one section per concern.

Defaults::

    seed 0, threads 1
    model      d_full 64, alpha 0.1
    datastore  chunk_size 16, d_key 32, d_cache 16, pca_sample 100000,
               index "flat", n_clusters/nprobe derived from the entry count
    decode     strategy "cache", cache_scope "sentence", beam 5, batch 8,
               max_len 100, k 8, lambda 0.7, temp 10, lambda_cache 0.5,
               temp_cache 1
    schedule   GEOMETRIC(2, 16), vary_chunk false
    stream     warm_fraction 0.10, update_block 250, report_block 4000
    ablate     the four strategies x the five schedules FIXED(6), FIXED(8),
               GEOMETRIC(2,8), GEOMETRIC(2,16), GEOMETRIC(2,32), k in [8]

Tuning grids for the mixing parameters are recorded as
``LAMBDA_GRID``/``LAMBDA_CACHE_GRID``/``TEMP_CACHE_GRID``.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from .cache import CacheScope
from .core import MixParams
from .decode import DecodeConfig, Strategy
from .errors import ConfigInvalid
from .evalbench import StreamConfig
from .schedule import ScheduleConfig

LAMBDA_GRID = (0.5, 0.6, 0.7, 0.8)
LAMBDA_CACHE_GRID = (0.4, 0.5, 0.6)
TEMP_CACHE_GRID = (1.0, 2.0, 3.0)

PATH_FIELDS = ("vocab", "model", "datastore", "train_src", "train_tgt", "ds_src", "ds_tgt",
               "input", "reference", "output")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_opt_pos_int = {"type": ["integer", "null"], "minimum": 1}
_unit = {"type": "number", "minimum": 0, "maximum": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}


def _section(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_SCHEDULE = _section({
    "mode": {"enum": ["fixed", "geometric"]},
    "i": _pos_int, "i_min": _pos_int, "i_max": _pos_int,
    "vary_chunk": {"type": "boolean"},
})

SCHEMA = _section({
    "seed": {"type": "integer", "minimum": 0},
    "threads": _pos_int,
    "paths": _section({name: {"type": ["string", "null"]} for name in PATH_FIELDS}),
    "model": _section({"d_full": _pos_int, "alpha": _pos}),
    "datastore": _section({
        "chunk_size": _pos_int, "d_key": _pos_int, "d_cache": _pos_int,
        "pca_sample": _pos_int, "index": {"enum": ["flat", "ivf"]},
        "n_clusters": _opt_pos_int, "nprobe": _opt_pos_int,
    }),
    "decode": _section({
        "strategy": {"enum": [s.value for s in Strategy]},
        "cache_scope": {"enum": [s.value for s in CacheScope]},
        "cache_capacity": _opt_pos_int,
        "beam": _pos_int, "batch": _pos_int, "max_len": _pos_int, "max_src_len": _pos_int,
        "k": _pos_int, "lambda": _unit, "temp": _pos, "lambda_cache": _unit, "temp_cache": _pos,
    }),
    "schedule": _SCHEDULE,
    "stream": _section({
        "warm_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "update_block": _pos_int, "report_block": _pos_int,
    }),
    "ablate": _section({
        "strategies": {"type": "array", "minItems": 1,
                       "items": {"enum": [s.value for s in Strategy]}},
        "cache_scopes": {"type": "array", "minItems": 1,
                         "items": {"enum": [s.value for s in CacheScope]}},
        "schedules": {"type": "array", "minItems": 1,
                      "items": {"oneOf": [{"type": "string"}, _SCHEDULE]}},
        "k": {"type": "array", "minItems": 1, "items": _pos_int},
    }),
})


@dataclass
class PathsSection:
    vocab: str | None = None
    model: str | None = None
    datastore: str | None = None
    train_src: str | None = None
    train_tgt: str | None = None
    ds_src: str | None = None
    ds_tgt: str | None = None
    input: str | None = None
    reference: str | None = None
    output: str | None = None


@dataclass
class ModelSection:
    d_full: int = 64
    alpha: float = 0.1


@dataclass
class DatastoreSection:
    chunk_size: int = 16
    d_key: int = 32
    d_cache: int = 16
    pca_sample: int = 100_000
    index: str = "flat"
    n_clusters: int | None = None
    nprobe: int | None = None


@dataclass
class DecodeSection:
    strategy: str = "cache"
    cache_scope: str = "sentence"
    cache_capacity: int | None = None
    beam: int = 5
    batch: int = 8
    max_len: int = 100
    max_src_len: int = 1024
    k: int = 8
    # "lambda" in JSON; renamed here because it is a Python keyword
    lam: float = 0.7
    temp: float = 10.0
    lambda_cache: float = 0.5
    temp_cache: float = 1.0


@dataclass
class ScheduleSection:
    mode: str = "geometric"
    i: int = 6
    i_min: int = 2
    i_max: int = 16
    vary_chunk: bool = False


@dataclass
class StreamSection:
    warm_fraction: float = 0.10
    update_block: int = 250
    report_block: int = 4000


DEFAULT_ABLATE_SCHEDULES = ["FIXED(6)", "FIXED(8)", "GEOMETRIC(2,8)", "GEOMETRIC(2,16)",
                            "GEOMETRIC(2,32)"]


@dataclass
class AblateSection:
    strategies: list = field(default_factory=lambda: [s.value for s in Strategy])
    cache_scopes: list = field(default_factory=lambda: ["sentence"])
    schedules: list = field(default_factory=lambda: list(DEFAULT_ABLATE_SCHEDULES))
    k: list = field(default_factory=lambda: [8])


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    paths: PathsSection = field(default_factory=PathsSection)
    model: ModelSection = field(default_factory=ModelSection)
    datastore: DatastoreSection = field(default_factory=DatastoreSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    stream: StreamSection = field(default_factory=StreamSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    # -- conversion ----------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decode"]["lambda"] = d["decode"].pop("lam")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        validate(data)
        data = copy.deepcopy(data)
        dec = data.get("decode", {})
        if "lambda" in dec:
            dec["lam"] = dec.pop("lambda")
        sections = {"paths": PathsSection, "model": ModelSection, "datastore": DatastoreSection,
                    "decode": DecodeSection, "schedule": ScheduleSection,
                    "stream": StreamSection, "ablate": AblateSection}
        kwargs = {name: kind(**data.get(name, {})) for name, kind in sections.items()}
        cfg = cls(seed=data.get("seed", 0), threads=data.get("threads", 1), **kwargs)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigInvalid("--config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("--config", f"not valid JSON: {exc}") from None
        cfg = cls.from_dict(data)
        # relative paths in a config file are relative to that file
        base = Path(path).resolve().parent
        for name in PATH_FIELDS:
            value = getattr(cfg.paths, name)
            if value and not Path(value).is_absolute():
                setattr(cfg.paths, name, str(base / value))
        return cfg

    # -- semantic checks beyond the schema --------------------------------------

    def check(self) -> None:
        s = self.schedule
        if s.mode == "geometric" and s.i_min > s.i_max:
            raise ConfigInvalid("schedule.i_min", f"{s.i_min} exceeds i_max {s.i_max}")
        if self.datastore.d_key > self.model.d_full:
            raise ConfigInvalid("datastore.d_key", f"exceeds model.d_full {self.model.d_full}")
        if self.datastore.d_cache > self.model.d_full:
            raise ConfigInvalid("datastore.d_cache", f"exceeds model.d_full {self.model.d_full}")
        for j, spec in enumerate(self.ablate.schedules):
            try:
                schedule_from_spec(spec)
            except ValueError as exc:
                raise ConfigInvalid(f"ablate.schedules.{j}", str(exc)) from None

    def require_files(self, *names: str) -> None:
        """Every named path must be set and exist."""
        for name in names:
            value = getattr(self.paths, name)
            if not value:
                raise ConfigInvalid(f"paths.{name}", "required by this command")
            if not Path(value).exists():
                raise ConfigInvalid(f"paths.{name}", f"file not found: {value}")

    def require_set(self, *names: str) -> None:
        for name in names:
            if not getattr(self.paths, name):
                raise ConfigInvalid(f"paths.{name}", "required by this command")

    # -- library objects --------------------------------------------------------

    def mix_params(self, k: int | None = None) -> MixParams:
        d = self.decode
        return MixParams(d.lam, d.temp, d.lambda_cache, d.temp_cache, k or d.k)

    def schedule_config(self) -> ScheduleConfig:
        s = self.schedule
        if s.mode == "fixed":
            return ScheduleConfig.fixed(s.i, s.vary_chunk)
        return ScheduleConfig.geometric(s.i_min, s.i_max, s.vary_chunk)

    def decode_config(self, strategy: str | None = None, schedule: ScheduleConfig | None = None,
                      k: int | None = None, cache_scope: str | None = None) -> DecodeConfig:
        d = self.decode
        return DecodeConfig(
            beam_size=d.beam, max_len=d.max_len, mix=self.mix_params(k),
            schedule=schedule or self.schedule_config(),
            strategy=Strategy(strategy or d.strategy),
            cache_scope=CacheScope(cache_scope or d.cache_scope),
            cache_capacity=d.cache_capacity, batch_size=d.batch, max_src_len=d.max_src_len)

    def stream_config(self) -> StreamConfig:
        s = self.stream
        return StreamConfig(s.warm_fraction, s.update_block, s.report_block)


def validate(data) -> None:
    """Schema-check a raw config document; the first error becomes ConfigInvalid."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path = ".".join(filter(None, [path, extra[0] if extra else ""]))
        raise ConfigInvalid(path or "<root>", "unknown key")
    raise ConfigInvalid(path or "<root>", err.message)


_SPEC = re.compile(r"^\s*(fixed|geometric)\s*\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)\s*$", re.I)


def schedule_from_spec(spec) -> ScheduleConfig:
    """Accept ``"FIXED(6)"``, ``"GEOMETRIC(2,16)"`` or a schedule section dict."""
    if isinstance(spec, dict):
        return RunConfig(schedule=ScheduleSection(**spec)).schedule_config()
    m = _SPEC.match(str(spec))
    if not m:
        raise ValueError(f"cannot parse schedule {spec!r}; use FIXED(i) or GEOMETRIC(i_min,i_max)")
    mode, a, b = m.group(1).lower(), int(m.group(2)), m.group(3)
    if mode == "fixed":
        if b is not None:
            raise ValueError(f"FIXED takes one argument: {spec!r}")
        return ScheduleConfig.fixed(a)
    if b is None:
        raise ValueError(f"GEOMETRIC takes two arguments: {spec!r}")
    return ScheduleConfig.geometric(a, int(b))
