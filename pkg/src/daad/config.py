"""Run configuration: model, training, data source and scoring settings.

A run is described by one JSON document. Unknown keys are rejected. Named
presets expand to complete documents; a user document may start from a
preset via ``{"preset": "desk-toy", ...overrides}``.
"""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .blockmem import DivisionRates
from .data import StripeSpec
from .losses import LossWeights
from .networks import DiscriminatorSpec, GeneratorSpec

MODEL_VARIANTS = ("ae", "ae_skip", "memae", "daad", "daad_plus")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    variant: str = "daad"
    scales: int = 4
    base_channels: int = 64
    rates: tuple[int, int, int] = (8, 8, 1)
    bank_size: int = 500
    input_size: int = 256
    input_channels: int = 3
    renormalize: bool = True
    discriminator: bool | None = None  # None: only for daad_plus
    disc_base_channels: int = 64
    feature_dim: int = 100
    loss_weights: tuple[float, float, float] = (50.0, 0.5, 0.5)
    gamma: float = 0.9

    def validate(self) -> None:
        if self.variant not in MODEL_VARIANTS:
            raise ConfigError(f"model.variant must be one of {MODEL_VARIANTS}, got {self.variant!r}")
        if len(self.rates) != 3:
            raise ConfigError("model.rates needs three integers (r_h, r_w, r_c)")
        if len(self.loss_weights) != 3:
            raise ConfigError("model.loss_weights needs three numbers (rec, adv, ali)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"model.gamma must lie in [0, 1], got {self.gamma}")
        if self.bank_size < 1:
            raise ConfigError("model.bank_size must be >= 1")
        try:
            self.generator_spec()
            if self.has_discriminator:
                self.discriminator_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def has_discriminator(self) -> bool:
        if self.discriminator is None:
            return self.variant == "daad_plus"
        return bool(self.discriminator)

    @property
    def generator_variant(self) -> str:
        return "daad" if self.variant == "daad_plus" else self.variant

    def weights(self) -> LossWeights:
        rec, adv, ali = self.loss_weights
        if not self.has_discriminator:
            adv = ali = 0.0
        return LossWeights(rec, adv, ali)

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            variant=self.generator_variant, scales=self.scales, base_channels=self.base_channels,
            rates=DivisionRates(*self.rates), bank_size=self.bank_size,
            input_size=(self.input_size, self.input_size), input_channels=self.input_channels,
            renormalize=self.renormalize,
        )

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(input_size=(self.input_size, self.input_size), input_channels=self.input_channels,
                                 base_channels=self.disc_base_channels, feature_dim=self.feature_dim)


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 8
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    flip_prob: float = 0.5
    rec_form: str = "mse"
    saturating_gen_loss: bool = False
    debug: bool = False

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1")
        if self.lr < 0:
            raise ConfigError("train.lr must be non-negative")
        if self.rec_form not in ("mse", "l2"):
            raise ConfigError("train.rec_form must be 'mse' or 'l2'")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("train.flip_prob must lie in [0, 1]")


@dataclass
class DataConfig:
    source: str = "stripes"  # "stripes" or "folder"
    root: str | None = None
    stripes: StripeSpec = field(default_factory=StripeSpec)

    def validate(self, scales: int | None = None) -> None:
        if self.source not in ("stripes", "folder"):
            raise ConfigError(f"data.source must be 'stripes' or 'folder', got {self.source!r}")
        if self.source == "folder":
            if not self.root:
                raise ConfigError("data.root is required for a folder dataset")
            if not (Path(self.root) / "train" / "good").is_dir():
                raise ConfigError(f"data root {self.root} has no train/good folder")
        else:
            try:
                self.stripes.validate(scales)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    score_mode: str = "rec_only"
    output_dir: str = "runs/default"

    def validate(self, check_data: bool = True) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        if check_data:
            self.data.validate(self.model.scales)
        if self.data.source == "stripes" and self.data.stripes.size != self.model.input_size:
            raise ConfigError(f"stripe size {self.data.stripes.size} != model.input_size {self.model.input_size}")
        from .scoring import normalize_mode

        try:
            self.score_mode = normalize_mode(self.score_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = copy.deepcopy(doc)
        preset = doc.pop("preset", None)
        base = preset_dict(preset) if preset is not None else RunConfig().to_dict()
        merged = _merge(base, doc, path="")
        return _build(cls, merged, "")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        return cls.from_json(p.read_text())


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _merge(base: dict, override: dict, path: str) -> dict:
    out = dict(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


_NESTED = {RunConfig: {"model": ModelConfig, "train": TrainConfig, "data": DataConfig},
           DataConfig: {"stripes": StripeSpec}}


def _build(cls, doc: dict, path: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(names)
    if unknown:
        raise ConfigError(f"unknown config key {path}{sorted(unknown)[0]!r}")
    kwargs = {}
    for k, v in doc.items():
        sub = _NESTED.get(cls, {}).get(k)
        if sub is not None:
            kwargs[k] = _build(sub, v, f"{path}{k}.")
        elif isinstance(v, list):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section {path or '<root>'}: {exc}") from exc


def _desk_toy() -> RunConfig:
    return RunConfig(
        model=ModelConfig(variant="daad", scales=3, base_channels=16, rates=(4, 4, 1), bank_size=50,
                          input_size=64, disc_base_channels=16),
        train=TrainConfig(epochs=12, batch_size=8, lr=1e-3, flip_prob=0.0),
        data=DataConfig(source="stripes", stripes=StripeSpec()),
        score_mode="rec_only",
        output_dir="runs/desk-toy",
    )


def _desk_toy_sweep() -> RunConfig:
    """Desk-toy model on diagonal stripes whose phase changes on a 16-pixel grid.

    Anomalies are 12-pixel patches of diagonal stripes with a phase break off
    that grid: blocks of tile size cannot copy them, pixel-sized blocks can.
    """
    cfg = _desk_toy()
    cfg.data.stripes = StripeSpec(anomaly_patch=12, phase_tile=16, orientation_anomaly="diagonal")
    cfg.output_dir = "runs/desk-toy-sweep"
    return cfg


def _paper_mvtec() -> RunConfig:
    return RunConfig(
        model=ModelConfig(variant="daad_plus", scales=4, base_channels=64, rates=(8, 8, 1), bank_size=500,
                          input_size=256),
        train=TrainConfig(epochs=1000, batch_size=8, lr=2e-4, flip_prob=0.5),
        data=DataConfig(source="folder", root="data/mvtec/bottle"),
        score_mode="fused",
        output_dir="runs/paper-mvtec",
    )


def _paper_video() -> RunConfig:
    return RunConfig(
        model=ModelConfig(variant="daad", scales=4, base_channels=64, rates=(16, 16, 1), bank_size=2000,
                          input_size=256),
        train=TrainConfig(epochs=60, batch_size=4, lr=2e-4, flip_prob=0.5),
        data=DataConfig(source="folder", root="data/ped2"),
        score_mode="rec_only",
        output_dir="runs/paper-video",
    )


PRESETS = {"desk-toy": _desk_toy, "desk-toy-sweep": _desk_toy_sweep, "paper-mvtec": _paper_mvtec,
           "paper-video": _paper_video}


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def preset_dict(name: str) -> dict:
    return preset(name).to_dict()
