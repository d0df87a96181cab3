"""Command-line entry point: ``mmrec [--config C] [--out D] [--seed S] <command>``.

Each command is a pure function of the config bytes and its input files.
Outputs go to the output directory together with ``manifest.json``; only the
manifest's ``wall_clock_s`` fields vary between identical reruns.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import ablation_run, select_rows
from .analysis import (
    cluster_agreement,
    block_diagonal_score,
    elbow_curve,
    elbow_from_wcss,
    extract_profiles,
    heatmap,
    kmeans,
    largest_clusters,
)
from .auxiliary import ModalityEmbeddingTable, feature_matrices, load_modality_table, write_modality_table
from .baselines import BPRModel, PopModel, TransRecModel, bpr_fit, poprec_fit, transrec_fit
from .checkpoint import load_baseline, load_model, read_checkpoint, save_baseline, save_model
from .config import ExperimentConfig, load_config
from .dataset import SplitDataset, ingest_interactions, load_split
from .errors import CompatibilityError, ConfigError, MMRecError, SetSizeError
from .evaluation import evaluate, model_scorer, oracle_scorer, ranks_tsv
from .gbdt import TabularSchema, load_item_attributes, tabular_embeddings
from .model import SeqRecModel, train
from .numerics import derive_seed, make_rng
from .synth import read_labels, synth_generate, write_synth

TRAIN_VARIANTS = ("sasrec_plus", "bert4rec_plus", "sasrec", "bert4rec", "poprec", "bpr", "transrec")


# ------------------------------------------------------------------ plumbing
def _atomic_write(path: Path, data: str | bytes) -> None:
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Collects output files and stage timings, then writes the manifest."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.outputs: list[Path] = []
        self.stages: list[tuple[str, float]] = []
        self._t = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def stage(self, name: str) -> None:
        now = time.perf_counter()
        self.stages.append((name, now - self._t))
        self._t = now

    def write(self, name: str, data: str | bytes) -> Path:
        path = self.out / name
        _atomic_write(path, data)
        self.outputs.append(path)
        return path

    def record(self, path: Path) -> None:
        self.outputs.append(Path(path))

    def finish(self) -> Path:
        files = []
        for p in self.outputs:
            data = p.read_bytes()
            if not data:
                raise MMRecError(f"output file {p.name} is empty")
            files.append({"path": p.name, "sha256": hashlib.sha256(data).hexdigest()})
        doc = {
            "command": self.command,
            "config_sha256": self.cfg.sha256,
            "seed": self.cfg.seed,
            "version": __version__,
            "outputs": files,
            "stages": [{"name": n, "wall_clock_s": t} for n, t in self.stages],
        }
        path = self.out / "manifest.json"
        _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _load_tables(cfg: ExperimentConfig, modalities) -> dict[str, ModalityEmbeddingTable]:
    tables = {}
    for m in modalities:
        cfg.require(f"modality:{m}")
        table = load_modality_table(cfg.data.modalities[m])
        if table.modality != m:
            raise ConfigError(f"data.modalities.{m} holds a {table.modality!r} table")
        tables[m] = table
    return tables


def _load_split(cfg: ExperimentConfig) -> SplitDataset:
    cfg.require("interactions")
    return load_split(cfg.data.interactions)


def _tsv(header: list[str], rows) -> str:
    return "\n".join(["\t".join(header)] + ["\t".join(map(str, r)) for r in rows]) + "\n"


# ------------------------------------------------------------------ commands
def cmd_synth(cfg: ExperimentConfig, out: Path, args) -> Run:
    run = Run("synth", cfg, out)
    data = synth_generate(cfg.synth)
    run.stage("generate")
    for p in write_synth(out, data):
        run.record(p)
    run.stage("write")
    return run


def cmd_gbdt_embed(cfg: ExperimentConfig, out: Path, args) -> Run:
    run = Run("gbdt-embed", cfg, out)
    cfg.require("interactions", "attributes")
    catalog, interactions = ingest_interactions(cfg.data.interactions)
    sums: dict[str, list[float]] = {}
    for it in interactions:
        if it.rating is not None:
            sums.setdefault(catalog.item_name(it.item), []).append(float(it.rating))
    if not sums:
        raise ConfigError("interaction file carries no ratings; the tabular embedder needs them")
    ratings = {k: float(np.mean(v)) for k, v in sorted(sums.items())}
    _, rows = load_item_attributes(cfg.data.attributes)
    schema = TabularSchema.infer(rows, cfg.schema.categorical, cfg.schema.numeric)
    run.stage("load")
    result = tabular_embeddings(rows, schema, ratings, cfg.gbdt.grid, make_rng(derive_seed(cfg.seed, "gbdt")), cfg.gbdt.train_fraction)
    run.stage("fit")
    path = out / "tabular.emb"
    write_modality_table(path, result.table, order=[r["item_id"] for r in rows])
    run.record(path)
    rep = result.report
    cv_rows = []
    for i, p in enumerate(rep.points):
        folds = "\t".join(f"{x:.10f}" for x in rep.fold_mae[i])
        cv_rows.append([p.trees, "none" if p.depth is None else p.depth, p.shrinkage, folds, f"{rep.mean_mae[i]:.10f}", int(i == rep.best_index)])
    header = ["trees", "depth", "shrinkage"] + [f"fold{k + 1}_mae" for k in range(rep.fold_mae.shape[1])] + ["mean_mae", "selected"]
    run.write("gbdt_cv.tsv", _tsv(header, cv_rows))
    run.stage("write")
    return run


def _transformer_config(cfg: ExperimentConfig, variant: str):
    plus = variant if variant.endswith("_plus") else variant + "_plus"
    use_aux = variant.endswith("_plus") and cfg.model.use_aux
    mc = dataclasses.replace(cfg.model, variant=plus, use_aux=use_aux)
    if use_aux and cfg.fusion is None:
        raise ConfigError(f"{variant} needs a fusion section (or model.use_aux: false)")
    return mc


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> Run:
    variant = args.variant or cfg.model.variant
    if variant not in TRAIN_VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(TRAIN_VARIANTS)}")
    run = Run("train", cfg, out)
    split = _load_split(cfg)
    rng = make_rng(derive_seed(cfg.seed, "train"))
    if variant in ("poprec", "bpr", "transrec"):
        run.stage("load")
        if variant == "poprec":
            model, losses = poprec_fit(split), []
        elif variant == "bpr":
            model = bpr_fit(split, cfg.bpr, rng)
            losses = model.losses
        else:
            model = transrec_fit(split, cfg.transrec, rng)
            losses = model.losses
        run.stage("fit")
        path = out / "model.ckpt"
        save_baseline(path, model, {"n_items": split.catalog.n_items, "n_users": split.catalog.n_users})
        run.record(path)
        run.write("curves.tsv", _tsv(["epoch", "loss"], [[e + 1, f"{x:.10f}"] for e, x in enumerate(losses)]))
        run.stage("write")
        return run
    mc = _transformer_config(cfg, variant)
    fusion = cfg.fusion if mc.use_aux else None
    tables = _load_tables(cfg, fusion.modalities) if fusion else {}
    aux = feature_matrices(tables, split.catalog, fusion.modalities) if fusion else None
    model = SeqRecModel(mc, split.catalog.n_items, fusion, {m: t.dim for m, t in tables.items()})
    run.stage("load")
    result = train(model, split, aux, n_negatives=cfg.eval.negatives)
    run.stage("fit")
    path = out / "model.ckpt"
    save_model(path, model, {"best_epoch": result.best_epoch})
    run.record(path)
    rows = []
    for e, loss in enumerate(result.losses):
        v = result.valid_ndcg[e] if e < len(result.valid_ndcg) else float("nan")
        rows.append([e + 1, f"{loss:.10f}", f"{v:.10f}"])
    run.write("curves.tsv", _tsv(["epoch", "loss", "valid_ndcg10"], rows))
    run.stage("write")
    return run


def _scorer_from_checkpoint(cfg: ExperimentConfig, path: Path, split: SplitDataset):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    kind, _, _ = read_checkpoint(path)
    n_items = split.catalog.n_items
    if kind in ("sasrec_plus", "bert4rec_plus"):
        model, _ = load_model(path)
        mc = model.config
        for name, have, want in (("d", mc.d, cfg.model.d), ("max_len", mc.max_len, cfg.model.max_len), ("|V|", model.n_items, n_items)):
            if have != want:
                raise CompatibilityError(f"checkpoint {name}={have} but config/data give {want}")
        aux = None
        if model.uses_aux:
            tables = _load_tables(cfg, model.fusion.modalities)
            for m, t in tables.items():
                if t.dim != model.modality_dims[m]:
                    raise CompatibilityError(f"{m} table has dim {t.dim}, checkpoint expects {model.modality_dims[m]}")
            aux = feature_matrices(tables, split.catalog, model.fusion.modalities)
        return model_scorer(model, aux), model, aux
    model, _ = load_baseline(path)
    rows = model.counts.shape[0] if isinstance(model, PopModel) else model.item_bias.shape[0]
    if rows != n_items + 1:
        raise CompatibilityError(f"checkpoint |V|={rows - 1} but data gives {n_items}")
    if isinstance(model, (BPRModel, TransRecModel)):
        users = model.user_factors.shape[0] if isinstance(model, BPRModel) else model.user_trans.shape[0]
        if users != split.catalog.n_users + 1:
            raise CompatibilityError(f"checkpoint has {users - 1} users but data gives {split.catalog.n_users}")
    return model.scorer(), model, None


def cmd_eval(cfg: ExperimentConfig, out: Path, args) -> Run:
    if not args.oracle and args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint or --oracle")
    run = Run("eval", cfg, out)
    split = _load_split(cfg)
    scorer = oracle_scorer if args.oracle else _scorer_from_checkpoint(cfg, args.checkpoint, split)[0]
    run.stage("load")
    report = evaluate(scorer, split, cfg.eval.negatives, make_rng(derive_seed(cfg.seed, "eval")), target=cfg.eval.target)
    run.stage("evaluate")
    run.write("metrics.tsv", report.to_tsv())
    run.write("metrics.json", report.to_json())
    run.write("ranks.tsv", ranks_tsv(report, split.catalog))
    run.stage("write")
    return run


def cmd_ablate(cfg: ExperimentConfig, out: Path, args) -> Run:
    run = Run("ablate", cfg, out)
    split = _load_split(cfg)
    rows = select_rows(cfg.ablation.rows)
    needed = sorted({m for r in rows for m in r.modalities})
    tables = _load_tables(cfg, needed)
    d = cfg.fusion.d if cfg.fusion is not None else cfg.model.d
    run.stage("load")
    grid = ablation_run(split, tables, cfg.model, d, cfg.ablation.seeds, rows, cfg.ablation.variants, cfg.eval.negatives)
    run.stage("grid")
    run.write("ablation.tsv", grid.to_tsv())
    run.write("ablation_series.tsv", grid.series_tsv())
    run.write("ttests.tsv", grid.t_tests_tsv())
    run.stage("write")
    return run


def cmd_analyze(cfg: ExperimentConfig, out: Path, args) -> Run:
    if args.checkpoint is None:
        raise ConfigError("analyze needs --checkpoint")
    run = Run("analyze", cfg, out)
    split = _load_split(cfg)
    _, model, aux = _scorer_from_checkpoint(cfg, args.checkpoint, split)
    if not isinstance(model, SeqRecModel):
        raise ConfigError("attention analysis needs a transformer checkpoint")
    users = sorted(split.test)
    profiles = extract_profiles(model, [split.history(u, "test") for u in users], aux)
    run.stage("profiles")
    ac = cfg.analysis
    rng = make_rng(derive_seed(cfg.seed, "analyze"))
    k_range = list(range(ac.k_min, ac.k_max + 1))
    k_range = [k for k in k_range if k <= len(users)]
    wcss = elbow_curve(profiles, k_range, rng, ac.n_init) if ac.k is None else []
    k = elbow_from_wcss(k_range, wcss) if ac.k is None else ac.k
    fit = kmeans(profiles, k, rng, max_iter=ac.max_iter, n_init=ac.n_init)
    run.stage("cluster")
    chosen = largest_clusters(fit.assignments, ac.clusters, 2 * ac.set_size)
    if not chosen:
        raise SetSizeError(f"no cluster has the {2 * ac.set_size} members a heatmap needs")
    hm = heatmap(profiles, fit.assignments, ac.set_size, rng, chosen)
    score = block_diagonal_score(hm.matrix)
    run.stage("heatmap")
    doc = {
        "k": int(k),
        "k_range": k_range if ac.k is None else [],
        "wcss": wcss,
        "cluster_sizes": [int(np.count_nonzero(fit.assignments == c)) for c in range(k)],
        "heatmap_clusters": dict(zip(hm.labels, chosen)),
        "block_diagonal_score": score,
        "n_users": len(users),
    }
    names = [split.catalog.user_name(u) for u in users]
    header, label_col = ["user_id", "cluster"], None
    if cfg.data.labels is not None:
        cfg.require("labels")
        truth = read_labels(cfg.data.labels)
        label_col = [truth.get(n, -1) for n in names]
        header.append("label")
        doc["label_agreement"] = cluster_agreement(fit.assignments, label_col)
    rows = [[n, int(c)] + ([label_col[i]] if label_col is not None else []) for i, (n, c) in enumerate(zip(names, fit.assignments))]
    run.write("heatmap.tsv", hm.to_tsv())
    run.write("clusters.tsv", _tsv(header, rows))
    run.write("analysis.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    run.stage("write")
    return run


COMMANDS = {
    "synth": cmd_synth,
    "gbdt-embed": cmd_gbdt_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


class UsageError(MMRecError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="experiment YAML file")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory (overrides config)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the config seed")
    parser = _Parser(prog="mmrec", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mmrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("gbdt-embed", parents=[common], help="embed item attributes with boosted trees")
    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--variant", choices=TRAIN_VARIANTS, default=None)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the 101-candidate protocol")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--oracle", action="store_true", help="score with the ground-truth oracle")
    sub.add_parser("ablate", parents=[common], help="run the modality ablation grid")
    p = sub.add_parser("analyze", parents=[common], help="cluster users by attention profile")
    p.add_argument("--checkpoint", type=Path, default=None)
    return parser


def _error_category(exc: BaseException) -> str:
    if isinstance(exc, MMRecError):
        return exc.category
    if isinstance(exc, FileNotFoundError):
        return "file"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def run_command(argv: list[str]) -> Path:
    args = build_parser().parse_args(argv)
    if getattr(args, "config", None) is None:
        raise ConfigError("--config is required")
    skip = {"synth": None, "gbdt-embed": ("modality:tabular",)}.get(args.command, ())
    cfg = load_config(args.config, check_files=skip is not None, skip=skip or ())
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    out = getattr(args, "out", None) or cfg.output
    if out is None:
        raise ConfigError("no output directory: pass --out or set output in the config")
    return COMMANDS[args.command](cfg, Path(out), args).finish()


def main(argv: list[str] | None = None) -> int:
    try:
        run_command(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 2
    except Exception as exc:  # noqa: BLE001 - reported as one line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {_error_category(exc)}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
