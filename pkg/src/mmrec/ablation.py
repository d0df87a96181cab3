"""Modality ablation grid: which auxiliary sources, fused how, help ranking.

Every cell trains one model per seed and records test NDCG@10. A model's
seed also fixes the negative candidates, so all cells and the no-auxiliary
reference see identical queries and the per-seed series can be paired.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .auxiliary import FusionConfig, ModalityEmbeddingTable, feature_matrices
from .dataset import SplitDataset
from .errors import ConfigError, MMRecError
from .evaluation import evaluate, model_scorer
from .model import ModelConfig, SeqRecModel, train
from .numerics import derive_seed, make_rng
from .stats import TTestReport, paired_t_test

ALL = ("text", "image", "tabular")


@dataclass(frozen=True)
class AblationRow:
    index: int
    label: str
    mode: str
    modalities: tuple[str, ...]


def _rows() -> list[AblationRow]:
    rows = [AblationRow(i + 1, f"({i + 1}) {m.capitalize()}", "concat", (m,)) for i, m in enumerate(ALL)]
    n = len(rows)
    for mode, title in (("concat", "Concatenated"), ("sum", "Summation")):
        rows.append(AblationRow(n + 1, f"({n + 1}) {title}: Text + Image + Tabular", mode, ALL))
        for k, drop in enumerate(("tabular", "image", "text")):
            keep = tuple(m for m in ALL if m != drop)
            rows.append(AblationRow(n + 2 + k, f"({n + 2 + k}) {title}: w/o {drop.capitalize()}", mode, keep))
        n += 4
    return rows


ABLATION_ROWS = _rows()
REFERENCE_LABEL = "(0) No auxiliary information"


def select_rows(indices: Sequence[int]) -> list[AblationRow]:
    by_index = {r.index: r for r in ABLATION_ROWS}
    bad = [i for i in indices if i not in by_index]
    if bad:
        raise ConfigError(f"unknown ablation row(s) {bad}; rows are numbered 1..{len(ABLATION_ROWS)}")
    return [by_index[i] for i in sorted(set(indices))]


class AblationCellError(MMRecError):
    """A failure inside one grid cell; ``category`` is inherited from the cause."""

    def __init__(self, cell: str, seed: int, cause: Exception):
        self.category = getattr(cause, "category", "error")
        self.cell, self.seed, self.cause = cell, seed, cause
        super().__init__(f"cell {cell!r}, seed {seed}: {cause}")


@dataclass
class AblationGrid:
    rows: list[AblationRow]
    variants: list[str]
    seeds: list[int]
    series: dict[tuple[str, str], list[float]] = field(default_factory=dict)  # (row label, variant) -> per seed
    reference: dict[str, list[float]] = field(default_factory=dict)  # variant -> per seed, no aux

    def mean(self, label: str, variant: str) -> float:
        return float(np.mean(self.series[(label, variant)]))

    def to_tsv(self) -> str:
        lines = ["row\tfusion\tmodalities\t" + "\t".join(self.variants)]
        for r in self.rows:
            cells = "\t".join(f"{self.mean(r.label, v):.10f}" for v in self.variants)
            lines.append(f"{r.label}\t{r.mode}\t{'+'.join(r.modalities)}\t{cells}")
        return "\n".join(lines) + "\n"

    def series_tsv(self) -> str:
        lines = ["row\tvariant\tseed\tndcg10"]
        for v in self.variants:
            for s, x in zip(self.seeds, self.reference.get(v, [])):
                lines.append(f"{REFERENCE_LABEL}\t{v}\t{s}\t{x:.10f}")
        for r in self.rows:
            for v in self.variants:
                for s, x in zip(self.seeds, self.series[(r.label, v)]):
                    lines.append(f"{r.label}\t{v}\t{s}\t{x:.10f}")
        return "\n".join(lines) + "\n"

    def t_tests(self) -> list[tuple[str, str, TTestReport | None]]:
        """Each cell against the same variant without auxiliary information."""
        out = []
        for r in self.rows:
            for v in self.variants:
                if v not in self.reference or len(self.seeds) < 2:
                    out.append((r.label, v, None))
                    continue
                try:
                    out.append((r.label, v, paired_t_test(self.reference[v], self.series[(r.label, v)])))
                except MMRecError:
                    out.append((r.label, v, None))
        return out

    def t_tests_tsv(self) -> str:
        head = "row\tvariant\tmean_without\tmean_with\tsd_without\tsd_with\tn\tdf\tt\tp"
        lines = [head]
        for label, v, rep in self.t_tests():
            cells = rep.to_row() if rep is not None else ["nan"] * 4 + [str(len(self.seeds)), str(len(self.seeds) - 1), "nan", "nan"]
            lines.append(f"{label}\t{v}\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"


def run_cell(
    split: SplitDataset,
    tables: dict[str, ModalityEmbeddingTable],
    base: ModelConfig,
    fusion: FusionConfig | None,
    seed: int,
    negatives: int = 100,
) -> float:
    """Train one model with ``seed`` and return its test NDCG@10."""
    cfg = dataclasses.replace(base, seed=seed, use_aux=fusion is not None)
    dims = {m: tables[m].dim for m in fusion.modalities} if fusion is not None else {}
    model = SeqRecModel(cfg, split.catalog.n_items, fusion, dims)
    aux = feature_matrices(tables, split.catalog, fusion.modalities) if fusion is not None else None
    train(model, split, aux, n_negatives=negatives)
    rng = make_rng(derive_seed(seed, "eval"))
    return evaluate(model_scorer(model, aux), split, negatives, rng).ndcg10


def ablation_run(
    split: SplitDataset,
    tables: dict[str, ModalityEmbeddingTable],
    base: ModelConfig,
    d: int,
    seeds: Sequence[int],
    rows: Sequence[AblationRow] = ABLATION_ROWS,
    variants: Sequence[str] = ("sasrec_plus",),
    negatives: int = 100,
    with_reference: bool = True,
    log: Callable[[str], None] | None = None,
) -> AblationGrid:
    grid = AblationGrid(list(rows), list(variants), [int(s) for s in seeds])
    for v in variants:
        cfg = dataclasses.replace(base, variant=v, n_heads=1 if v == "sasrec_plus" else base.n_heads)
        if with_reference:
            grid.reference[v] = [_guard(REFERENCE_LABEL, s, run_cell, split, tables, cfg, None, s, negatives) for s in seeds]
        for r in rows:
            missing = [m for m in r.modalities if m not in tables]
            if missing:
                raise AblationCellError(r.label, int(seeds[0]) if seeds else 0, ConfigError(f"no {'/'.join(missing)} table loaded"))
            fusion = FusionConfig(r.mode, r.modalities, d)
            grid.series[(r.label, v)] = [_guard(r.label, s, run_cell, split, tables, cfg, fusion, s, negatives) for s in seeds]
            if log is not None:
                log(f"{r.label}\t{v}\t{grid.mean(r.label, v):.4f}")
    return grid


def _guard(label, seed, fn, *args):
    try:
        return fn(*args)
    except AblationCellError:
        raise
    except MMRecError as exc:
        raise AblationCellError(label, seed, exc) from exc
