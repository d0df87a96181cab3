"""Per-item modality vectors and their fusion into one auxiliary embedding.

Modality vectors are frozen inputs; only the projections that map them to the
model width are trained.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Catalog
from .errors import ConfigError, DimensionError, DuplicateError, ParseError
from .numerics import Parameter

MODALITIES = ("text", "image", "tabular")


@dataclass
class ModalityEmbeddingTable:
    modality: str
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        for key, vec in self.vectors.items():
            if len(vec) != self.dim:
                raise DimensionError(f"{self.modality} vector for {key!r} has length {len(vec)}, expected {self.dim}")

    def __len__(self):
        return len(self.vectors)

    def matrix(self, catalog: Catalog) -> np.ndarray:
        """Rows aligned to dense item ids; padding, mask and missing items are zero."""
        out = np.zeros((catalog.n_items + 2, self.dim))
        for raw, idx in catalog.item_index.items():
            vec = self.vectors.get(raw)
            if vec is not None:
                out[idx] = vec
        return out

    def zeroed(self) -> "ModalityEmbeddingTable":
        return ModalityEmbeddingTable(self.modality, self.dim, {k: np.zeros(self.dim) for k in self.vectors})


def load_modality_table(source) -> ModalityEmbeddingTable:
    with open(source, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty modality file", 1)
    header = dict(tok.split("=", 1) for tok in lines[0].split() if "=" in tok)
    try:
        modality = header["modality"]
        dim = int(header["dim"])
    except (KeyError, ValueError):
        raise ParseError(f"bad header {lines[0]!r}; expected 'modality=<tag> dim=<D>'", 1) from None
    if modality not in MODALITIES:
        raise ParseError(f"unknown modality tag {modality!r}", 1)
    if dim < 1:
        raise ParseError("dim must be >= 1", 1)
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            item, values = line.split("\t", 1)
        except ValueError:
            raise ParseError("expected item_id<TAB>values", lineno) from None
        try:
            vec = np.array([float(x) for x in values.split()], dtype=np.float64)
        except ValueError:
            raise ParseError("non-numeric vector entry", lineno) from None
        if vec.size != dim:
            raise ParseError(f"vector has {vec.size} entries, header declares dim={dim}", lineno)
        if not np.all(np.isfinite(vec)):
            raise ParseError("non-finite vector entry", lineno)
        if item in vectors:
            raise DuplicateError(f"line {lineno}: duplicate item {item!r}")
        vectors[item] = vec
    return ModalityEmbeddingTable(modality, dim, vectors)


def write_modality_table(path, table: ModalityEmbeddingTable, order=None) -> None:
    keys = order if order is not None else list(table.vectors)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"modality={table.modality} dim={table.dim}\n")
        for key in keys:
            vals = " ".join(repr(float(x)) for x in table.vectors[key])
            fh.write(f"{key}\t{vals}\n")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "concat"
    modalities: tuple[str, ...] = MODALITIES
    d: int = 64

    def __post_init__(self):
        if self.mode not in ("concat", "sum"):
            raise ConfigError(f"fusion mode must be 'concat' or 'sum', got {self.mode!r}")
        if not self.modalities:
            raise ConfigError("at least one modality must be enabled")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ConfigError(f"unknown modalities {sorted(unknown)}")
        if self.d < 1:
            raise ConfigError("target dim d must be >= 1")
        # canonical order text, image, tabular
        ordered = tuple(m for m in MODALITIES if m in self.modalities)
        object.__setattr__(self, "modalities", ordered)


def modality_subset(config: FusionConfig, drop: str) -> FusionConfig:
    if drop not in config.modalities:
        raise ConfigError(f"modality {drop!r} is not enabled")
    remaining = tuple(m for m in config.modalities if m != drop)
    if not remaining:
        raise ConfigError("cannot drop the last enabled modality")
    return replace(config, modalities=remaining)


class AuxProjection:
    """Trainable linear map from modality vectors to width ``d``.

    concat: one matrix over the stacked enabled vectors (text, image, tabular
    order). sum: one matrix per modality, outputs added. A single bias either way.
    """

    def __init__(self, config: FusionConfig, dims: dict[str, int], rng: np.random.Generator | None = None):
        missing = [m for m in config.modalities if m not in dims]
        if missing:
            raise ConfigError(f"no dimension known for modalities {missing}")
        self.config = config
        self.dims = {m: int(dims[m]) for m in config.modalities}
        d = config.d
        self.weights: dict[str, Parameter] = {}
        if config.mode == "concat":
            width = sum(self.dims.values())
            self.weights["concat"] = Parameter("aux.concat.W", _init(rng, width, d))
        else:
            for m in config.modalities:
                self.weights[m] = Parameter(f"aux.{m}.W", _init(rng, self.dims[m], d))
        self.bias = Parameter("aux.bias", np.zeros((1, d)))

    @property
    def input_width(self) -> int:
        return sum(self.dims.values())

    def parameters(self) -> list[Parameter]:
        return list(self.weights.values()) + [self.bias]

    def _stack(self, features: dict[str, np.ndarray]) -> list[np.ndarray]:
        out = []
        for m in self.config.modalities:
            x = features[m]
            if x.shape[-1] != self.dims[m]:
                raise DimensionError(f"{m} features have width {x.shape[-1]}, projection expects {self.dims[m]}")
            out.append(x)
        return out

    def forward(self, features: dict[str, np.ndarray]) -> np.ndarray:
        """Fuse row-aligned modality matrices (n x dim_m each) into n x d."""
        xs = self._stack(features)
        if self.config.mode == "concat":
            return np.concatenate(xs, axis=-1) @ self.weights["concat"].value + self.bias.value
        out = xs[0] @ self.weights[self.config.modalities[0]].value
        for m, x in zip(self.config.modalities[1:], xs[1:]):
            out = out + x @ self.weights[m].value
        return out + self.bias.value

    def backward(self, features: dict[str, np.ndarray], dout: np.ndarray) -> None:
        xs = self._stack(features)
        if self.config.mode == "concat":
            self.weights["concat"].grad += np.concatenate(xs, axis=-1).T @ dout
        else:
            for m, x in zip(self.config.modalities, xs):
                self.weights[m].grad += x.T @ dout
        self.bias.grad += dout.sum(axis=0, keepdims=True)


def _init(rng, fan_in, fan_out):
    if rng is None:
        return np.zeros((fan_in, fan_out))
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def feature_matrices(tables: dict[str, ModalityEmbeddingTable], catalog: Catalog, modalities=MODALITIES) -> dict[str, np.ndarray]:
    out = {}
    for m in modalities:
        if m not in tables:
            raise ConfigError(f"no embedding table loaded for modality {m!r}")
        out[m] = tables[m].matrix(catalog)
    return out


def fuse(item_id: str, tables: dict[str, ModalityEmbeddingTable], config: FusionConfig, projection: AuxProjection) -> np.ndarray:
    """Auxiliary embedding k_v for one raw item id; absent items use zero vectors."""
    if not config.modalities:
        raise ConfigError("no modality enabled")
    if projection.config.mode != config.mode or projection.config.modalities != config.modalities:
        raise ConfigError("projection was built for a different fusion config")
    feats = {}
    for m in config.modalities:
        table = tables[m]
        vec = table.vectors.get(item_id)
        feats[m] = (np.zeros(table.dim) if vec is None else vec).reshape(1, -1)
    return projection.forward(feats)[0]
