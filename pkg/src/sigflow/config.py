"""Flat ``key = value`` run configuration shared by every command."""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .cnsde import GeneratorConfig
from .data import DEFAULT_AR_COEFFS, WindowSpec, companion_radius
from .errors import ConfigError
from .evaluation import MetricSettings
from .sde import SolveMode
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # data
    data_path: str = ""
    log_transform: bool = False
    n_pairs: int = 2000
    ar_coeffs: tuple = DEFAULT_AR_COEFFS
    noise_std: float = 1.0
    burn_in: int = 500
    data_seed: int = 0
    sim_length: int = 2000
    x_length: int = 20
    y_length: int = 10
    stride: int = 1
    split_train: float = 0.8
    split_val: float = 0.1
    split_test: float = 0.1
    chronological: bool = True
    # generator
    d_z: int = 16
    d_w: int = 16
    d_v: int = 8
    k: int = 4
    xi2_hidden: int = 16
    drift_hidden: int = 32
    diffusion_hidden: int = 32
    diagonal: bool = True
    final_tanh: bool = True
    time_input: bool = True
    n_steps: int = 18
    enc_depth: int = 5
    # training
    batch_size: int = 32
    mc_samples: int = 32
    val_mc_samples: int = 128
    lr: float = 1e-3
    max_seconds: float = 7200.0
    max_steps: typing.Optional[int] = None
    patience: int = 1000
    val_period: int = 50
    val_max_pairs: typing.Optional[int] = None
    in_depth: int = 5
    out_depth: int = 4
    ridge: float = 1e-4
    scale_targets: bool = True
    seed: int = 0
    init_seed: int = 0
    val_seed: int = 12345
    mode: str = "reversible"
    # files
    out_dir: str = "run"
    checkpoint: str = ""
    resume: str = ""
    x_csv: str = ""
    n_samples: int = 16
    # evaluation
    metric_classification: bool = True
    metric_ho_sigw1: bool = True
    metric_unordered: bool = True
    metric_extreme: bool = True
    eval_mc: int = 128
    eval_seeds: tuple = (0, 1, 2)
    ho_in_depth: int = 6
    ho_out_depth: int = 5
    percentiles: tuple = (95.0,)
    relative_extreme: bool = False
    test_fraction: float = 0.3
    # benchmark
    bench_steps: tuple = (16, 32, 64, 128, 256)
    bench_batch: int = 8
    bench_mc: int = 8
    bench_repeats: int = 1

    def __post_init__(self):
        _range_check(self)

    # -- derived configurations ---------------------------------------------

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.x_length, self.y_length, self.stride)

    def fractions(self) -> tuple:
        return (self.split_train, self.split_val, self.split_test)

    def generator_config(self, d_x: int = 1, d_y: int = 1, **overrides) -> GeneratorConfig:
        kw = dict(d_x=d_x, d_y=d_y, d_z=self.d_z, d_w=self.d_w, d_v=self.d_v, k=self.k,
                  xi2_hidden=self.xi2_hidden, drift_hidden=self.drift_hidden,
                  diffusion_hidden=self.diffusion_hidden, diagonal=self.diagonal,
                  final_tanh=self.final_tanh, time_input=self.time_input,
                  out_length=self.y_length, n_steps=self.n_steps, enc_depth=self.enc_depth)
        kw.update(overrides)
        return GeneratorConfig(**kw)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{n: getattr(self, n) for n in names})

    def metric_settings(self) -> MetricSettings:
        return MetricSettings(
            classification=self.metric_classification, ho_sigw1=self.metric_ho_sigw1,
            unordered=self.metric_unordered, extreme=self.metric_extreme, m=self.eval_mc,
            ho_depths=(self.ho_in_depth, self.ho_out_depth), ridge=self.ridge,
            percentiles=tuple(self.percentiles), relative=self.relative_extreme,
            test_fraction=self.test_fraction, seeds=tuple(self.eval_seeds))

    def lines(self) -> list[str]:
        """The fully resolved configuration, one ``key = value`` per line."""
        return [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]


_POSITIVE = {
    "n_pairs", "sim_length", "x_length", "y_length", "stride", "d_z", "d_w", "d_v",
    "xi2_hidden", "drift_hidden", "diffusion_hidden", "n_steps", "enc_depth", "batch_size",
    "mc_samples", "val_mc_samples", "patience", "val_period", "in_depth", "out_depth",
    "n_samples", "eval_mc", "ho_in_depth", "ho_out_depth", "bench_batch", "bench_mc",
    "bench_repeats",
}


def _range_check(c: RunConfig) -> None:
    for name in _POSITIVE:
        if getattr(c, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(c, name)}")
    for name in ("max_steps", "val_max_pairs"):
        v = getattr(c, name)
        if v is not None and v < 1:
            raise ConfigError(f"{name} must be >= 1 or none, got {v}")
    for name in ("noise_std", "ridge", "burn_in"):
        if getattr(c, name) < 0:
            raise ConfigError(f"{name} must be >= 0, got {getattr(c, name)}")
    if not (c.lr > 0 and c.max_seconds > 0):
        raise ConfigError("lr and max_seconds must be positive")
    if c.k > c.d_z or c.k < 0:
        raise ConfigError(f"k must lie in [0, d_z={c.d_z}], got {c.k}")
    fr = c.fractions()
    if min(fr) < 0 or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fr}")
    if not 0 < c.test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {c.test_fraction}")
    if any(not 0 < p < 100 for p in c.percentiles):
        raise ConfigError(f"percentiles must lie in (0, 100), got {c.percentiles}")
    if any(s < 1 for s in c.bench_steps) or not c.bench_steps:
        raise ConfigError("bench_steps must be positive step counts")
    if not c.eval_seeds:
        raise ConfigError("eval_seeds must list at least one seed")
    if c.ar_coeffs and companion_radius(c.ar_coeffs) >= 1.0:
        raise ConfigError(f"ar_coeffs {c.ar_coeffs} are not stationary "
                          f"(companion spectral radius {companion_radius(c.ar_coeffs):.4f} >= 1)")
    try:
        SolveMode.parse(c.mode)
    except ValueError:
        raise ConfigError(f"mode must be reversible or store_all, got {c.mode!r}") from None
    try:
        c.generator_config()
        c.train_config()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = typing.get_type_hints(RunConfig)
_TUPLE_ITEM = {"ar_coeffs": float, "eval_seeds": int, "percentiles": float, "bench_steps": int}


def _parse_bool(key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true or false, got {text!r}")


def _parse_value(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    tp = _TYPES[key]
    text = text.strip()
    try:
        if key in _TUPLE_ITEM:
            item = _TUPLE_ITEM[key]
            return tuple(item(x) for x in text.split(",") if x.strip()) if text else ()
        if tp is bool:
            return _parse_bool(key, text)
        if tp is typing.Optional[int]:
            return None if text.lower() in ("none", "") else int(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(tp, '__name__', tp)}") from None


def parse_lines(lines, source: str = "<config>") -> dict:
    values = {}
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = _parse_value(key, val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{no}: {exc}") from None
    return values


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """File values, then ``key=value`` overrides, then the seed flag."""
    values = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_lines(p.read_text().splitlines(), str(p)))
    values.update(parse_lines(overrides, "--set"))
    if seed is not None:
        values["seed"] = int(seed)
    return dataclasses.replace(RunConfig(), **values)
