"""Line-oriented ``section.key = value`` pipeline configuration.

Sections: ``data``, ``pretrain``, ``neighbor``, ``augment``, ``gnn``, ``refine``,
``probe`` and ``run``. Keys are the field names of the matching dataclass.
``#`` starts a comment. Unknown or repeated keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from os import PathLike

from .data import AugmentPolicy
from .distill import PretrainConfig
from .errors import ParseError, ValidationError, ValidationFailure
from .gnn import GnnStack, RefineConfig
from .neighbors import NeighborConfig


@dataclass(frozen=True)
class DataSpec:
    n_per_class: int = 100
    classes: int = 5
    dim: int = 32
    spread: float = 0.45
    val_fraction: float = 0.2

    def __post_init__(self):
        for name in ("n_per_class", "classes", "dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"data.{name}", "must be >= 1")
        if not self.spread > 0:
            raise ValidationError("data.spread", "must be > 0")
        if not 0 < self.val_fraction < 1:
            raise ValidationError("data.val_fraction", "must be in (0, 1)")


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 500
    lr: float = 0.1
    knn_k: int = 20

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("probe.epochs", "must be >= 1")
        if not self.lr > 0:
            raise ValidationError("probe.lr", "must be > 0")
        if self.knn_k < 1:
            raise ValidationError("probe.knn_k", "must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    data: DataSpec = field(default_factory=DataSpec)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    gnn: GnnStack = field(default_factory=GnnStack)
    refine: RefineConfig = field(default_factory=RefineConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    seed: int = 0

    def __post_init__(self):
        n = self.data.n_per_class * self.data.classes
        if n < self.pretrain.neighbor.e + 1:
            raise ValidationError("neighbor.e", f"needs fewer than N={n} samples")

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(
            self, seed=seed,
            pretrain=dataclasses.replace(self.pretrain, seed=seed),
            refine=dataclasses.replace(self.refine, seed=seed))


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    text = text.strip("()[] ")
    return tuple(int(t) for t in text.split(",") if t.strip()) if text else ()


def _parser_for(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int) or default is None:
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _parse_ints
    return str


# section name -> dataclass holding its keys
_SECTIONS = {
    "data": DataSpec,
    "pretrain": PretrainConfig,
    "neighbor": NeighborConfig,
    "augment": AugmentPolicy,
    "gnn": GnnStack,
    "refine": RefineConfig,
    "probe": ProbeConfig,
}
_RUN_KEYS = {"seed": int}
_NESTED = {"neighbor", "augment", "seed"}


def _fields(cls) -> dict:
    defaults = cls()
    return {f.name: _parser_for(getattr(defaults, f.name))
            for f in dataclasses.fields(cls) if f.name not in _NESTED}


def parse_config_text(text: str) -> PipelineConfig:
    values: dict[str, dict] = {name: {} for name in (*_SECTIONS, "run")}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'section.key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key.count(".") != 1 or not value:
            raise ParseError(f"malformed entry {raw.strip()!r}", lineno)
        section, name = key.split(".")
        if section == "run":
            parsers = _RUN_KEYS
        elif section in _SECTIONS:
            parsers = _fields(_SECTIONS[section])
        else:
            raise ParseError(f"unknown section {section!r}", lineno)
        if name not in parsers:
            raise ParseError(f"unknown key {key!r}", lineno)
        if name in values[section]:
            raise ParseError(f"duplicate key {key!r}", lineno)
        try:
            values[section][name] = parsers[name](value)
        except ValueError as exc:
            raise ParseError(f"{key}: {exc}", lineno) from None
    return build_config(values)


def build_config(values: dict[str, dict]) -> PipelineConfig:
    def make(cls, section, base=None):
        # ``base`` supplies defaults that differ from the bare dataclass defaults
        fields = {**(dataclasses.asdict(base) if base is not None else {}),
                  **values.get(section, {})}
        try:
            return cls(**fields)
        except ValidationError:
            raise
        except (ValidationFailure, TypeError) as exc:
            raise ValidationError(section, str(exc)) from None

    neighbor = make(NeighborConfig, "neighbor")
    augment = make(AugmentPolicy, "augment", PretrainConfig().augment)
    try:
        pretrain = PretrainConfig(**values.get("pretrain", {}), neighbor=neighbor, augment=augment)
    except ValidationError:
        raise
    except (ValidationFailure, TypeError) as exc:
        raise ValidationError("pretrain", str(exc)) from None
    cfg = PipelineConfig(
        data=make(DataSpec, "data"),
        pretrain=pretrain,
        gnn=make(GnnStack, "gnn"),
        refine=make(RefineConfig, "refine"),
        probe=make(ProbeConfig, "probe"),
    )
    return cfg.with_seed(values.get("run", {}).get("seed", 0))


def parse_config(path: str | PathLike) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())
