"""
Run configuration for splatproto.

A RunConfig is a tree of dataclasses loaded from one JSON file, overridden
by command-line flags and validated before any compute starts.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_type_hints

from .errors import ConfigError
from .splat_io import FEATURE_MODES, GAUSSIAN_MODE, SYNTHETIC_CLASSES

THREADS_ENV = "XSPLAIN_THREADS"
THREADS_ENV_ALIAS = "SPLATPROTO_THREADS"


@dataclass
class HyperConfig:
    """Model hyperparameters shared by every stage."""

    grid_size: int = 7
    channels: int = 256
    lambda_density: float = 3.5
    tau: float = 1.0
    beta: float = 1.0
    eps: float = 1e-6
    top_m: int = 4
    k_init: int = 10
    k_final: int = 3
    stn3_widths: List[int] = field(default_factory=lambda: [64, 128, 1024, 512, 256])
    stn64_widths: List[int] = field(default_factory=lambda: [64, 128, 1024, 512, 256])


@dataclass
class GenerateConfig:
    classes: List[str] = field(default_factory=lambda: list(SYNTHETIC_CLASSES))
    per_class: int = 200
    n_primitives: int = 512
    ratios: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    outlier_fraction: float = 0.02
    feature_mode: str = GAUSSIAN_MODE


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 1e-3
    cosine: bool = True
    patience: int = 15


@dataclass
class DisentangleConfig:
    epochs: int = 50
    horizon: int = 50
    update_period: int = 5
    lr: float = 1e-4
    batch_size: int = 64


@dataclass
class ExplainConfig:
    sample_ids: List[str] = field(default_factory=list)
    split: str = "test"
    limit: int = 1


@dataclass
class EvaluateConfig:
    split: str = "test"
    top_k_delete: int = 5
    control_seeds: int = 20


@dataclass
class AblateConfig:
    lambda_density: List[float] = field(default_factory=lambda: [0.0, 1.0, 3.5])
    grid_size: List[int] = field(default_factory=lambda: [3, 7])
    channels: List[int] = field(default_factory=lambda: [64, 256])


@dataclass
class PathsConfig:
    out: str = "splatproto-run"
    dataset: Optional[str] = None


@dataclass
class RunConfig:
    """Fully resolved configuration of one command invocation."""

    seed: int = 0
    threads: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    disentangle: DisentangleConfig = field(default_factory=DisentangleConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self) -> "RunConfig":
        """Raise ConfigError on the first invalid value; return self."""
        h = self.hyper
        _require(self.threads >= 1, "threads", self.threads, ">= 1")
        _require(h.grid_size >= 1, "hyper.grid_size", h.grid_size, ">= 1")
        _require(h.channels >= 1, "hyper.channels", h.channels, ">= 1")
        _require(h.lambda_density >= 0, "hyper.lambda_density", h.lambda_density, ">= 0")
        _require(h.tau > 0, "hyper.tau", h.tau, "> 0")
        _require(h.beta > 0, "hyper.beta", h.beta, "> 0")
        _require(h.eps > 0, "hyper.eps", h.eps, "> 0")
        _require(1 <= h.top_m <= h.channels, "hyper.top_m", h.top_m, "in [1, channels]")
        _require(h.k_final >= 1, "hyper.k_final", h.k_final, ">= 1")
        _require(h.k_init >= h.k_final, "hyper.k_init", h.k_init, ">= k_final")
        for name in ("stn3_widths", "stn64_widths"):
            widths = getattr(h, name)
            _require(len(widths) == 5 and all(w >= 1 for w in widths),
                     f"hyper.{name}", widths, "five positive widths")

        g = self.generate
        unknown = [c for c in g.classes if c not in SYNTHETIC_CLASSES]
        _require(not unknown and len(g.classes) >= 1, "generate.classes", g.classes,
                 f"non-empty subset of {', '.join(SYNTHETIC_CLASSES)}")
        _require(len(set(g.classes)) == len(g.classes), "generate.classes", g.classes, "distinct")
        _require(g.per_class >= 3, "generate.per_class", g.per_class, ">= 3")
        _require(g.n_primitives >= 32, "generate.n_primitives", g.n_primitives, ">= 32")
        _require(len(g.ratios) == 3 and all(r > 0 for r in g.ratios)
                 and abs(sum(g.ratios) - 1.0) <= 1e-9,
                 "generate.ratios", g.ratios, "three positive values summing to 1")
        _require(0 <= g.outlier_fraction < 0.5, "generate.outlier_fraction",
                 g.outlier_fraction, "in [0, 0.5)")
        _require(g.feature_mode in FEATURE_MODES, "generate.feature_mode", g.feature_mode,
                 f"one of {', '.join(FEATURE_MODES)}")

        t = self.train
        _require(t.epochs >= 0, "train.epochs", t.epochs, ">= 0")
        _require(t.batch_size >= 1, "train.batch_size", t.batch_size, ">= 1")
        _require(t.lr > 0, "train.lr", t.lr, "> 0")
        _require(t.patience >= 1, "train.patience", t.patience, ">= 1")

        d = self.disentangle
        _require(d.epochs >= 0, "disentangle.epochs", d.epochs, ">= 0")
        _require(d.horizon >= 1, "disentangle.horizon", d.horizon, ">= 1")
        _require(d.update_period >= 1, "disentangle.update_period", d.update_period, ">= 1")
        _require(d.lr > 0, "disentangle.lr", d.lr, "> 0")
        _require(d.batch_size >= 1, "disentangle.batch_size", d.batch_size, ">= 1")

        for section in ("explain", "evaluate"):
            split = getattr(self, section).split
            _require(split in ("train", "val", "test"), f"{section}.split", split,
                     "one of train, val, test")
        _require(self.explain.limit >= 1, "explain.limit", self.explain.limit, ">= 1")
        _require(self.evaluate.top_k_delete >= 1, "evaluate.top_k_delete",
                 self.evaluate.top_k_delete, ">= 1")
        _require(self.evaluate.control_seeds >= 1, "evaluate.control_seeds",
                 self.evaluate.control_seeds, ">= 1")

        a = self.ablate
        _require(all(v >= 0 for v in a.lambda_density), "ablate.lambda_density",
                 a.lambda_density, "values >= 0")
        _require(all(v >= 1 for v in a.grid_size), "ablate.grid_size", a.grid_size, "values >= 1")
        _require(all(v >= h.top_m for v in a.channels), "ablate.channels", a.channels,
                 "values >= hyper.top_m")
        return self


def _require(ok: bool, key: str, value: Any, expectation: str) -> None:
    if not ok:
        raise ConfigError(f"{key} = {value!r}: expected {expectation}")


def _matches(value: Any, annotation: Any) -> bool:
    """JSON value against a field annotation; bools are not numbers, ints pass as floats."""
    origin = getattr(annotation, "__origin__", None)
    if origin is Union:
        return any(_matches(value, arg) for arg in annotation.__args__)
    if origin is list:
        return isinstance(value, list) and all(_matches(v, annotation.__args__[0]) for v in value)
    if annotation is type(None):
        return value is None
    if annotation is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, annotation)


def _type_name(annotation: Any) -> str:
    return getattr(annotation, "__name__", None) or str(annotation).replace("typing.", "")


def _build(cls, data: Dict[str, Any], prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    hints = get_type_hints(cls)
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"Unknown config key '{prefix}{key}'")
        default = known[key].default_factory() if callable(known[key].default_factory) \
            else known[key].default
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{prefix}{key}.")
        elif not _matches(value, hints[key]):
            raise ConfigError(f"{prefix}{key} = {value!r}: expected {_type_name(hints[key])}")
        else:
            kwargs[key] = float(value) if hints[key] is float else value
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys at any depth."""
    return _build(RunConfig, data)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a JSON config file (defaults when path is None)."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    return config_from_dict(data)


def resolve_threads(flag: Optional[int], configured: int) -> int:
    """--threads wins, then $XSPLAIN_THREADS or $SPLATPROTO_THREADS, then the config value."""
    if flag is not None:
        return flag
    for name in (THREADS_ENV, THREADS_ENV_ALIAS):
        env = os.getenv(name)
        if env:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"{name} must be an integer, got '{env}'")
    return configured


# flag name -> (section, field)
FLAG_OVERRIDES = {
    "seed": (None, "seed"),
    "out": ("paths", "out"),
    "grid_size": ("hyper", "grid_size"),
    "channels": ("hyper", "channels"),
    "lambda_density": ("hyper", "lambda_density"),
    "top_m": ("hyper", "top_m"),
    "top_k_delete": ("evaluate", "top_k_delete"),
}


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """Return a copy with every non-None override applied (flags win)."""
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in FLAG_OVERRIDES:
            raise ConfigError(f"Unknown override '{name}'")
        section, attr = FLAG_OVERRIDES[name]
        if section is None:
            config = replace(config, **{attr: value})
        else:
            updated = replace(getattr(config, section), **{attr: value})
            config = replace(config, **{section: updated})
    return config


def write_config(config: RunConfig, path: Union[str, Path]) -> Path:
    """Config echo: the resolved config next to a command's outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
    return path
