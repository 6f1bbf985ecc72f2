"""Run configuration: INI files with one section per module.

Every key has a default; ``default_config_text()`` renders the full table
with a comment per key and is what ``survseq config`` style tooling or a
user should start from.  Unknown sections or keys are rejected so typos do
not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .synth import SyntheticConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    observations: str | None = None  # long-format observation csv; empty -> synthetic cohort
    labels: str | None = None  # long-format label csv
    time_unit: str = "unit"
    bin_width: float = 2.0  # decoder step length in time units
    max_event_time: float | None = None  # empty -> largest training time
    merge_threshold: float | None = None  # empty -> one bin width
    max_steps: int = 20  # cap on encoder steps per subject


@dataclass
class ModelOptions:
    hidden_dim: int = 64
    encoder_layers: int = 1
    decoder_layers: int = 1
    decoder_kind: str = "recurrent"  # recurrent | mlp
    mlp_width: int | None = None  # empty -> parameter-matched width


@dataclass
class LossOptions:
    w_l: float = 1.0
    w_r: float | None = None  # empty -> 0.1 / horizon
    ranking_variant: str = "eq5"  # eq5 (all bins) | eq4 (event bin only)


@dataclass
class OptimOptions:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0  # global gradient-norm clip; empty disables


@dataclass
class TrainOptions:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10  # early stop after this many non-improving epochs
    val_fraction: float = 0.1  # validation slice of each training split
    folds: int = 5
    dtype: str = "float32"  # float32 | float64


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelOptions = field(default_factory=ModelOptions)
    loss: LossOptions = field(default_factory=LossOptions)
    optim: OptimOptions = field(default_factory=OptimOptions)
    train: TrainOptions = field(default_factory=TrainOptions)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model.decoder_kind not in ("recurrent", "mlp"):
            raise ConfigError(f"model.decoder_kind must be recurrent or mlp, got {self.model.decoder_kind!r}")
        if self.loss.ranking_variant not in ("eq4", "eq5"):
            raise ConfigError(f"loss.ranking_variant must be eq4 or eq5, got {self.loss.ranking_variant!r}")
        if self.train.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype must be float32 or float64, got {self.train.dtype!r}")
        if self.train.folds < 2:
            raise ConfigError("train.folds must be at least 2")
        if self.train.batch_size < 1 or self.train.max_epochs < 0 or self.train.patience < 0:
            raise ConfigError("train.batch_size must be >= 1, max_epochs and patience >= 0")
        if not 0.0 < self.train.val_fraction < 1.0:
            raise ConfigError("train.val_fraction must lie in (0, 1)")
        if self.data.bin_width <= 0:
            raise ConfigError("data.bin_width must be positive")
        if (self.data.observations is None) != (self.data.labels is None):
            raise ConfigError("data.observations and data.labels must be given together")
        try:
            self.synthetic.validate()
        except ValueError as exc:
            raise ConfigError(f"synthetic: {exc}") from None

    @property
    def uses_synthetic(self) -> bool:
        return self.data.observations is None

    @property
    def merge_threshold(self) -> float:
        m = self.data.merge_threshold
        return self.data.bin_width if m is None else m

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS} | {"seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = {name: _SECTIONS[name](**d.get(name, {})) for name in _SECTIONS}
        return cls(**kwargs, seed=int(d.get("seed", 0)))


_SECTIONS = {
    "data": DataConfig,
    "synthetic": SyntheticConfig,
    "model": ModelOptions,
    "loss": LossOptions,
    "optim": OptimOptions,
    "train": TrainOptions,
}


def _coerce(raw: str, hint, where: str):
    text = raw.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional:
        if text == "" or text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
    origin = typing.get_origin(hint)
    try:
        if origin is list:
            (inner,) = typing.get_args(hint)
            return [inner(v) for v in text.replace(",", " ").split()]
        if hint is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _fields(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    sections = {name: {} for name in _SECTIONS}
    seed = 0
    for sec in cp.sections():
        if sec == "run":
            for key, raw in cp.items(sec):
                if key != "seed":
                    raise ConfigError(f"{source}: unknown key run.{key}")
                seed = _coerce(raw, int, f"{source}: run.seed")
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        hints = _fields(_SECTIONS[sec])
        for key, raw in cp.items(sec):
            if key not in hints:
                raise ConfigError(f"{source}: unknown key {sec}.{key}")
            sections[sec][key] = _coerce(raw, hints[key], f"{source}: {sec}.{key}")
    built = {}
    for name, kw in sections.items():
        try:
            built[name] = _SECTIONS[name](**kw)
        except ValueError as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    return RunConfig(**built, seed=seed)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, source=str(path))
    # relative dataset paths are resolved against the config file
    for key in ("observations", "labels"):
        v = getattr(cfg.data, key)
        if v is not None and not Path(v).is_absolute():
            setattr(cfg.data, key, str(path.parent / v))
    return cfg


_DOC = {
    "data.observations": "long-format observation csv (subject_id,time,covariate,value); empty -> synthetic",
    "data.labels": "label csv (subject_id,event_time,event_type); 0 = censored",
    "data.time_unit": "label for the time axis, carried into reports",
    "data.bin_width": "decoder step length in time units",
    "data.max_event_time": "largest event time; empty -> taken from the training split",
    "data.merge_threshold": "timestamps this close are merged; empty -> one bin width, 0 disables",
    "data.max_steps": "encoder steps kept per subject (random subset above the cap)",
    "synthetic.n_covariates": "covariate count (even; split into two halves)",
    "synthetic.n_samples": "subjects generated",
    "synthetic.shape": "Weibull shape of the covariate distribution",
    "synthetic.location": "Weibull location of the covariate distribution",
    "synthetic.scale": "Weibull scale of the covariate distribution",
    "synthetic.event_shape": "Weibull shape of the event-time draws",
    "synthetic.alpha": "quadratic coefficients (empty -> drawn from U(0,1))",
    "synthetic.beta": "linear coefficients (empty -> drawn from U(0,1))",
    "synthetic.k1": "covariate indices of the quadratic subset (empty -> random half)",
    "synthetic.censoring_rate": "fraction of subjects censored",
    "synthetic.missing_rate": "target fraction of unobserved covariate entries",
    "synthetic.max_event_time": "times beyond this are administratively censored",
    "synthetic.max_steps": "most measurement times per subject",
    "synthetic.drift_max": "largest per-covariate drift rate over a trajectory",
    "synthetic.nmar_slope": "logit slope of observation probability on the z-scored value",
    "synthetic.score_min": "smallest Weibull event scale",
    "synthetic.score_max": "largest Weibull event scale (empty -> max_event_time / 3)",
    "synthetic.seed": "generator seed",
    "model.hidden_dim": "hidden size of encoder and decoder",
    "model.encoder_layers": "GRU-D layer plus stacked GRU layers",
    "model.decoder_layers": "stacked GRU layers per event block",
    "model.decoder_kind": "recurrent | mlp",
    "model.mlp_width": "hidden width of the mlp head; empty -> parameter-matched",
    "loss.w_l": "weight of the log-likelihood term",
    "loss.w_r": "weight of the ranking term; empty -> 0.1 / horizon",
    "loss.ranking_variant": "eq5 compares CDFs at every bin, eq4 only at the earlier event bin",
    "optim.lr": "Adam learning rate",
    "optim.beta1": "Adam first-moment decay",
    "optim.beta2": "Adam second-moment decay",
    "optim.eps": "Adam epsilon",
    "optim.clip_norm": "global gradient-norm clip; empty disables",
    "train.batch_size": "subjects per minibatch",
    "train.max_epochs": "upper bound on training epochs",
    "train.patience": "non-improving validation epochs tolerated before stopping",
    "train.val_fraction": "share of each training split held out for early stopping",
    "train.folds": "cross-validation folds",
    "train.dtype": "float32 | float64",
    "run.seed": "seed for initialization, fold assignment and batching",
}


def _render(v) -> str:
    if v is None:
        return ""
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: RunConfig, comments: bool = True) -> str:
    lines = []
    for name, cls in _SECTIONS.items():
        lines.append(f"[{name}]")
        obj = getattr(cfg, name)
        for key in _fields(cls):
            if comments:
                lines.append(f"# {_DOC[f'{name}.{key}']}")
            lines.append(f"{key} = {_render(getattr(obj, key))}")
        lines.append("")
    if comments:
        lines.append("[run]")
        lines.append(f"# {_DOC['run.seed']}")
    else:
        lines.append("[run]")
    lines.append(f"seed = {cfg.seed}")
    return "\n".join(lines) + "\n"


def default_config_text() -> str:
    return dump_config(RunConfig())
