"""Experiment configuration: TOML files layered over presets and defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernels import Kernel, canonical_family, benchmark_kernel

BENCH_ALGORITHMS = ("APG-UCB", "APG-PE", "APG-TS", "IGP-UCB")


class ConfigError(ValueError):
    """Malformed configuration; the message starts with the offending key path."""


@dataclass
class KernelSpec:
    family: str = "SE"
    length_factor: float | None = None
    lengthscale: float | None = None
    rq_shape: float | None = None
    matern_nu: float | None = None

    def build(self, dim: int) -> Kernel:
        fam = canonical_family(self.family)
        if fam in ("RQ", "SE") and self.lengthscale is None and self.rq_shape is None:
            return benchmark_kernel(fam, dim, self.length_factor)
        if self.lengthscale is not None:
            ls = self.lengthscale
        else:
            factor = self.length_factor if self.length_factor is not None else (0.3 if fam == "RQ" else 0.2)
            ls = factor * dim**0.5
        shape = self.rq_shape if self.rq_shape is not None else (2.0 * dim if fam == "RQ" else None)
        nu = self.matern_nu if self.matern_nu is not None else (1.5 if fam == "Matern" else None)
        return Kernel(fam, ls, dim, rq_shape=shape, matern_nu=nu)

    def label(self) -> str:
        fam = canonical_family(self.family)
        if self.lengthscale is not None:
            return f"{fam}-l{self.lengthscale:g}"
        if self.length_factor is not None:
            return f"{fam}-{self.length_factor:g}"
        return fam


@dataclass
class EnvSection:
    grid: dict[int, int] = field(default_factory=lambda: {1: 1000, 2: 30, 3: 10})
    n_envs: int = 10
    l1_mode: str = "mean"
    noise_fraction: float = 0.2
    max_centers: int = 300


@dataclass
class ApgSection:
    q: float | None = None
    alpha: float | None = None
    lam: float = 1.0
    B: float = 1.0
    delta: float = 1e-3
    # None: the average noise scale of the environments in the group
    R: float | None = None
    design_tol: float = 0.01
    pe_constant: float = 2.0
    eta: float | None = None
    max_points: int | None = None


@dataclass
class IgpSection:
    lam: float | None = None
    B: float = 1.0
    delta: float = 1e-3
    R: float | None = None
    mode: str = "direct"


@dataclass
class BenchSection:
    kernels: list[KernelSpec] = field(
        default_factory=lambda: [KernelSpec("RQ", 0.3), KernelSpec("SE", 0.2)]
    )
    dims: list[int] = field(default_factory=lambda: [1, 2, 3])
    T: int = 5000
    algorithms: list[str] = field(default_factory=lambda: ["APG-UCB", "IGP-UCB"])


@dataclass
class RunSection:
    algorithm: str | None = None
    dim: int | None = None
    env_seed: int = 0
    T: int = 5000


@dataclass
class BasisSection:
    dim: int = 1
    error: float | None = None
    T: int = 5000


@dataclass
class AdvSection:
    dim: int = 1
    m: int = 10
    T: int = 10000
    drift_period: int = 500
    n_seeds: int = 20


@dataclass
class Config:
    seed: int = 0
    threads: int | None = None
    out_dir: str = "results"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    env: EnvSection = field(default_factory=EnvSection)
    apg: ApgSection = field(default_factory=ApgSection)
    igp: IgpSection = field(default_factory=IgpSection)
    bench: BenchSection = field(default_factory=BenchSection)
    run: RunSection = field(default_factory=RunSection)
    basis: BasisSection = field(default_factory=BasisSection)
    adv: AdvSection = field(default_factory=AdvSection)

    def hash(self) -> str:
        return config_hash(self)

    def require(self, path: str) -> Any:
        obj: Any = self
        for part in path.split("."):
            obj = getattr(obj, part)
        if obj is None:
            raise ConfigError(f"{path}: missing required key")
        return obj


_REDUCED_GRID = {"1": 500, "2": 23, "3": 8}

PRESETS: dict[str, dict] = {
    "paper": {},
    "reduced": {"bench": {"T": 2000}, "env": {"grid": _REDUCED_GRID}, "igp": {"mode": "incremental"}},
    "timing": {"bench": {"T": 2000}, "env": {"grid": _REDUCED_GRID, "n_envs": 1}, "igp": {"mode": "direct"}},
    "smoke": {"bench": {"T": 10, "dims": [1]}, "env": {"grid": {"1": 50}, "n_envs": 2}},
    "sublinear": {
        "bench": {
            "T": 5000,
            "dims": [1],
            "kernels": [{"family": "SE", "length_factor": 0.2}],
            "algorithms": ["APG-UCB", "APG-PE", "APG-TS"],
        }
    },
}
for _fam, _lf in (("rq", 0.3), ("se", 0.2)):
    for _d in (1, 2, 3):
        PRESETS[f"paper-{_fam}-d{_d}"] = {
            "bench": {"dims": [_d], "kernels": [{"family": _fam.upper(), "length_factor": _lf}]}
        }


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value: Any, tp, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        out = {}
        for k, v in value.items():
            try:
                key = int(k)
            except (TypeError, ValueError):
                raise ConfigError(f"{path}.{k}: expected an integer key") from None
            out[key] = _coerce(v, args[1], f"{path}.{k}")
        return out
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported type {_type_name(tp)}")


def _build(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            where = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"{where}: unknown key")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            where = f"{prefix}.{f.name}" if prefix else f.name
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], where)
    return cls(**kwargs)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "grid":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _validate(cfg: Config) -> None:
    try:
        canonical_family(cfg.kernel.family)
        for i, k in enumerate(cfg.bench.kernels):
            try:
                canonical_family(k.family)
            except ValueError as exc:
                raise ConfigError(f"bench.kernels[{i}].family: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"kernel.family: {exc}") from None
    for i, a in enumerate(cfg.bench.algorithms):
        if a.upper() not in BENCH_ALGORITHMS:
            raise ConfigError(
                f"bench.algorithms[{i}]: unknown algorithm {a!r}; expected one of {', '.join(BENCH_ALGORITHMS)}"
            )
    if cfg.run.algorithm is not None and cfg.run.algorithm.upper() not in BENCH_ALGORITHMS:
        raise ConfigError(f"run.algorithm: unknown algorithm {cfg.run.algorithm!r}; expected one of {', '.join(BENCH_ALGORITHMS)}")
    if cfg.igp.mode not in ("direct", "incremental"):
        raise ConfigError(f"igp.mode: expected 'direct' or 'incremental', got {cfg.igp.mode!r}")
    if cfg.env.l1_mode not in ("mean", "sum"):
        raise ConfigError(f"env.l1_mode: expected 'mean' or 'sum', got {cfg.env.l1_mode!r}")
    for path, val in (("bench.T", cfg.bench.T), ("run.T", cfg.run.T), ("adv.T", cfg.adv.T),
                      ("env.n_envs", cfg.env.n_envs), ("adv.drift_period", cfg.adv.drift_period),
                      ("adv.n_seeds", cfg.adv.n_seeds)):
        if val < 1:
            raise ConfigError(f"{path}: must be positive")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads: must be positive")


def from_dict(data: dict) -> Config:
    cfg = _build(Config, data)
    _validate(cfg)
    return cfg


def load_config(
    path: str | Path | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> Config:
    """Defaults, then ``preset``, then the TOML file at ``path``, then ``overrides``."""
    data: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; expected one of {', '.join(sorted(PRESETS))}")
        data = _merge(data, PRESETS[preset])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                file_data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: cannot parse {path}: {exc}") from None
        data = _merge(data, file_data)
    if overrides:
        data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
    return from_dict(data)


def config_hash(cfg: Config) -> str:
    """Digest of everything that can change results; thread count and output location excluded."""
    d = asdict(cfg)
    d.pop("threads", None)
    d.pop("out_dir", None)
    blob = json.dumps(d, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
