"""Desk-scale synthetic datasets with planted structure.

Items fall into latent categories. Each item's text and image vectors are a
per-category prototype plus Gaussian noise, so the category an item's planted
vectors match best (cosine) is its own. With probability ``strength`` a user's
next item is drawn uniformly from that category, otherwise uniformly from the
whole catalog. Users come from ``n_archetypes`` behaviour archetypes that differ
in activity level (sequence-length band) and in the categories they start from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .auxiliary import ModalityEmbeddingTable, write_modality_table
from .dataset import Catalog, Interaction, SplitDataset, build_sequences, leave_one_out_split, write_interactions
from .errors import ConfigError
from .numerics import make_rng


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_items: int = 300
    n_categories: int = 20
    n_archetypes: int = 1
    min_len: int = 5
    max_len: int = 20
    strength: float = 0.8
    noise: float = 0.5
    text_dim: int = 16
    image_dim: int = 16
    n_brands: int = 5
    band_width: int = 0  # 0: archetype length bands tile [min_len, max_len]; else keep the lowest band_width lengths
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_items", "n_categories", "n_archetypes", "min_len", "text_dim", "image_dim", "n_brands"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth {name} must be >= 1")
        if self.max_len < self.min_len:
            raise ConfigError("synth max_len must be >= min_len")
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError("synth strength must lie in [0, 1]")
        if self.noise < 0:
            raise ConfigError("synth noise must be >= 0")
        if self.band_width < 0:
            raise ConfigError("synth band_width must be >= 0")


@dataclass
class SynthData:
    config: SynthConfig
    catalog: Catalog
    interactions: list[Interaction]
    tables: dict[str, ModalityEmbeddingTable]
    labels: dict[str, int]
    item_category: dict[str, int]
    attributes: list[dict] = field(default_factory=list)

    def split(self) -> SplitDataset:
        return leave_one_out_split(build_sequences(self.interactions), self.catalog)

    def category_array(self) -> np.ndarray:
        """Category per dense item id (index 0 unused, set to -1)."""
        out = np.full(self.catalog.n_items + 1, -1, dtype=np.int64)
        for raw, idx in self.catalog.item_index.items():
            out[idx] = self.item_category[raw]
        return out


def length_band(config: SynthConfig, archetype: int) -> tuple[int, int]:
    span = config.max_len - config.min_len + 1
    a, n = archetype, config.n_archetypes
    lo = config.min_len + (a * span) // n
    hi = max(lo, config.min_len + ((a + 1) * span) // n - 1)
    if config.band_width:
        hi = min(hi, lo + config.band_width - 1)
    return lo, hi


def synth_generate(config: SynthConfig) -> SynthData:
    rng = make_rng(config.seed)
    n_items, n_cat = config.n_items, config.n_categories
    uw = len(str(config.n_users))
    iw = len(str(n_items))
    catalog = Catalog([f"u{u + 1:0{uw}d}" for u in range(config.n_users)], [f"i{i + 1:0{iw}d}" for i in range(n_items)])

    category = np.arange(n_items) % n_cat
    members = [np.flatnonzero(category == c) for c in range(n_cat)]

    text_proto = rng.normal(size=(n_cat, config.text_dim))
    image_proto = rng.normal(size=(n_cat, config.image_dim))
    text = text_proto[category] + config.noise * rng.normal(size=(n_items, config.text_dim))
    image = image_proto[category] + config.noise * rng.normal(size=(n_items, config.image_dim))

    planted = np.hstack([text_proto, image_proto])
    unit = planted / np.linalg.norm(planted, axis=1, keepdims=True)
    matched = np.argmax(unit[category] @ unit.T, axis=1)

    brand = rng.integers(config.n_brands, size=n_items)
    price = np.round(np.exp(rng.normal(3.0, 0.5, size=n_items)), 2)
    cat_effect = rng.normal(0.0, 0.6, size=n_cat)
    brand_effect = rng.normal(0.0, 0.4, size=config.n_brands)
    price_z = (np.log(price) - 3.0) / 0.5
    quality = 3.0 + cat_effect[category] + brand_effect[brand] + 0.3 * price_z

    interactions: list[Interaction] = []
    labels: dict[str, int] = {}
    for u in range(config.n_users):
        arche = int(rng.integers(config.n_archetypes))
        labels[catalog.users[u]] = arche
        lo, hi = length_band(config, arche)
        length = int(rng.integers(lo, hi + 1))
        preferred = [c for c in range(n_cat) if c % config.n_archetypes == arche] or list(range(n_cat))
        start_cat = preferred[int(rng.integers(len(preferred)))]
        cur = int(rng.choice(members[start_cat]))
        seq = [cur]
        for _ in range(length - 1):
            if rng.random() < config.strength:
                cur = int(rng.choice(members[matched[cur]]))
            else:
                cur = int(rng.integers(n_items))
            seq.append(cur)
        noise = rng.normal(0.0, 0.5, size=length)
        for t, (item, eps) in enumerate(zip(seq, noise)):
            rating = float(np.clip(np.round(quality[item] + eps), 1.0, 5.0))
            interactions.append(Interaction(u + 1, item + 1, t, rating))

    tables = {
        "text": ModalityEmbeddingTable("text", config.text_dim, {catalog.items[i]: text[i] for i in range(n_items)}),
        "image": ModalityEmbeddingTable("image", config.image_dim, {catalog.items[i]: image[i] for i in range(n_items)}),
    }
    attributes = [
        {"item_id": catalog.items[i], "category": f"c{category[i]}", "brand": f"b{brand[i]}", "price": float(price[i])}
        for i in range(n_items)
    ]
    return SynthData(
        config,
        catalog,
        interactions,
        tables,
        labels,
        {catalog.items[i]: int(category[i]) for i in range(n_items)},
        attributes,
    )


ATTRIBUTE_SCHEMA = {"categorical": ["category", "brand"], "numeric": ["price"]}


def write_synth(out_dir, data: SynthData) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": out / "interactions.tsv",
        "text": out / "text.emb",
        "image": out / "image.emb",
        "labels": out / "labels.tsv",
        "categories": out / "item_categories.tsv",
        "attributes": out / "items.tsv",
    }
    write_interactions(paths["interactions"], data.catalog, data.interactions)
    for m in ("text", "image"):
        write_modality_table(paths[m], data.tables[m], order=data.catalog.items)
    with open(paths["labels"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id\tarchetype\n")
        for user in data.catalog.users:
            fh.write(f"{user}\t{data.labels[user]}\n")
    with open(paths["categories"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_id\tcategory\n")
        for item in data.catalog.items:
            fh.write(f"{item}\t{data.item_category[item]}\n")
    with open(paths["attributes"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_id\tcategory\tbrand\tprice\n")
        for row in data.attributes:
            fh.write(f"{row['item_id']}\t{row['category']}\t{row['brand']}\t{row['price']!r}\n")
    return list(paths.values())


def read_labels(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            if line.strip():
                user, label = line.rstrip("\n").split("\t")
                out[user] = int(label)
    return out
