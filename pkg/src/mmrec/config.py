"""Experiment configuration: a YAML file mapped onto frozen dataclasses.

Unknown keys are rejected, the seed is mandatory, and relative paths are
resolved against the config file's directory. The SHA-256 of the exact file
bytes identifies the configuration in run manifests.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .auxiliary import MODALITIES, FusionConfig
from .baselines import BPRConfig, TransRecConfig
from .errors import ConfigError
from .gbdt import GridPoint
from .model import ModelConfig
from .synth import ATTRIBUTE_SCHEMA, SynthConfig


@dataclass(frozen=True)
class DataPaths:
    interactions: Path | None = None
    attributes: Path | None = None
    labels: Path | None = None
    modalities: dict[str, Path] = field(default_factory=dict)


@dataclass(frozen=True)
class SchemaConfig:
    categorical: tuple[str, ...] = tuple(ATTRIBUTE_SCHEMA["categorical"])
    numeric: tuple[str, ...] = tuple(ATTRIBUTE_SCHEMA["numeric"])


@dataclass(frozen=True)
class GBDTConfig:
    grid: tuple[GridPoint, ...] = (GridPoint(20, 2, 0.1), GridPoint(20, 3, 0.1), GridPoint(40, 3, 0.05))
    train_fraction: float = 0.7


@dataclass(frozen=True)
class EvalConfig:
    negatives: int = 100
    target: str = "test"

    def __post_init__(self):
        if self.negatives < 1:
            raise ConfigError("eval.negatives must be >= 1")
        if self.target not in ("valid", "test"):
            raise ConfigError("eval.target must be 'valid' or 'test'")


@dataclass(frozen=True)
class AblationConfig:
    seeds: tuple[int, ...] = tuple(range(10))
    variants: tuple[str, ...] = ("sasrec_plus",)
    rows: tuple[int, ...] = tuple(range(1, 12))


@dataclass(frozen=True)
class AnalysisConfig:
    k_min: int = 2
    k_max: int = 8
    k: int | None = None  # skip the elbow search when set
    n_init: int = 10
    set_size: int = 20
    clusters: int = 4
    max_iter: int = 100

    def __post_init__(self):
        if self.k_max - self.k_min < 2:
            raise ConfigError("analysis k range needs at least three values")
        if self.set_size < 1 or self.clusters < 1:
            raise ConfigError("analysis set_size and clusters must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data: DataPaths = DataPaths()
    schema: SchemaConfig = SchemaConfig()
    synth: SynthConfig = SynthConfig()
    model: ModelConfig = ModelConfig()
    fusion: FusionConfig | None = None
    bpr: BPRConfig = BPRConfig()
    transrec: TransRecConfig = TransRecConfig()
    gbdt: GBDTConfig = GBDTConfig()
    eval: EvalConfig = EvalConfig()
    ablation: AblationConfig = AblationConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    output: Path | None = None
    source: Path | None = None
    sha256: str = ""

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed, synth=dataclasses.replace(self.synth, seed=seed), model=dataclasses.replace(self.model, seed=seed))

    def require(self, *names: str) -> None:
        """Raise ConfigError unless each named input is configured and exists.

        Names are ``interactions``, ``attributes``, ``labels`` or ``modality:<tag>``.
        """
        for name in names:
            if name.startswith("modality:"):
                tag = name.split(":", 1)[1]
                path = self.data.modalities.get(tag)
                label = f"data.modalities.{tag}"
            else:
                path = getattr(self.data, name)
                label = f"data.{name}"
            if path is None:
                raise ConfigError(f"{label} is not configured")
            if not Path(path).is_file():
                raise ConfigError(f"{label}: file not found: {path}")


def _section(cls, raw: Any, where: str, convert=None) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    values = dict(raw)
    if convert:
        values = convert(values)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _tuples(*keys):
    def convert(values):
        for k in keys:
            if k in values and values[k] is not None:
                if not isinstance(values[k], list):
                    raise ConfigError(f"{k} must be a list")
                values[k] = tuple(values[k])
        return values

    return convert


def _grid(values):
    if "grid" in values:
        pts = []
        for i, p in enumerate(values["grid"] or []):
            pts.append(_section(GridPoint, p, f"gbdt.grid[{i}]"))
        values["grid"] = tuple(pts)
    return values


def _data(raw, base: Path) -> DataPaths:
    def resolve(v):
        if v is None:
            return None
        p = Path(str(v))
        return p if p.is_absolute() else base / p

    def convert(values):
        for k in ("interactions", "attributes", "labels"):
            if k in values:
                values[k] = resolve(values[k])
        mods = values.get("modalities") or {}
        if not isinstance(mods, dict):
            raise ConfigError("data.modalities: expected a mapping")
        bad = sorted(set(mods) - set(MODALITIES))
        if bad:
            raise ConfigError(f"data.modalities: unknown modality {', '.join(bad)}")
        values["modalities"] = {k: resolve(v) for k, v in sorted(mods.items())}
        return values

    return _section(DataPaths, raw, "data", convert)


TOP_LEVEL = ("seed", "data", "schema", "synth", "model", "fusion", "bpr", "transrec", "gbdt", "eval", "ablation", "analysis", "output")


def parse_config(text: bytes | str, base: Path | None = None, source: Path | None = None) -> ExperimentConfig:
    raw_bytes = text.encode() if isinstance(text, str) else text
    base = Path(".") if base is None else base
    try:
        doc = yaml.safe_load(raw_bytes.decode("utf-8"))
    except (yaml.YAMLError, UnicodeDecodeError) as exc:
        raise ConfigError(f"unreadable config: {str(exc).splitlines()[0]}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(map(str, doc)) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}")
    if "seed" not in doc or isinstance(doc["seed"], bool) or not isinstance(doc["seed"], int) or doc["seed"] < 0:
        raise ConfigError("config needs an explicit non-negative integer seed")
    seed = int(doc["seed"])
    synth_raw = dict(doc.get("synth") or {})
    synth_raw.setdefault("seed", seed)
    model_raw = dict(doc.get("model") or {})
    model_raw.setdefault("seed", seed)
    fusion = None
    if doc.get("fusion") is not None:
        fusion = _section(FusionConfig, doc["fusion"], "fusion", _tuples("modalities"))
    output = doc.get("output")
    if output is not None:
        output = Path(str(output))
        output = output if output.is_absolute() else base / output
    return ExperimentConfig(
        seed=seed,
        data=_data(doc.get("data"), base),
        schema=_section(SchemaConfig, doc.get("schema"), "schema", _tuples("categorical", "numeric")),
        synth=_section(SynthConfig, synth_raw, "synth"),
        model=_section(ModelConfig, model_raw, "model"),
        fusion=fusion,
        bpr=_section(BPRConfig, doc.get("bpr"), "bpr"),
        transrec=_section(TransRecConfig, doc.get("transrec"), "transrec"),
        gbdt=_section(GBDTConfig, doc.get("gbdt"), "gbdt", _grid),
        eval=_section(EvalConfig, doc.get("eval"), "eval"),
        ablation=_section(AblationConfig, doc.get("ablation"), "ablation", _tuples("seeds", "variants", "rows")),
        analysis=_section(AnalysisConfig, doc.get("analysis"), "analysis"),
        output=output,
        source=source,
        sha256=hashlib.sha256(raw_bytes).hexdigest(),
    )


def load_config(path, check_files: bool = True, skip: tuple[str, ...] = ()) -> ExperimentConfig:
    """Parse ``path``; with ``check_files`` every configured input except the
    names in ``skip`` (see ``ExperimentConfig.require``) must exist."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_config(p.read_bytes(), base=p.parent, source=p)
    if check_files:
        names = [n for n in ("interactions", "attributes", "labels") if getattr(cfg.data, n) is not None]
        names += [f"modality:{m}" for m in cfg.data.modalities]
        cfg.require(*(n for n in names if n not in skip))
    return cfg
