"""Binary checkpoint container shared by transformers and baselines.

Layout (all integers little-endian)::

    b"MMRECKPT"                      magic, 8 bytes
    u32 version                      FORMAT_VERSION
    u32 n, n bytes                   UTF-8 JSON header (sorted keys): kind, meta,
                                     and [name, rows, cols] per array in order
    float64 LE values                each array row-major, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .auxiliary import FusionConfig
from .errors import CheckpointError
from .model import ModelConfig, SeqRecModel, config_dict

MAGIC = b"MMRECKPT"
FORMAT_VERSION = 1


def write_checkpoint(path, kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    mats = [(name, np.atleast_2d(np.asarray(a, dtype=np.float64))) for name, a in arrays]
    header = {"kind": kind, "meta": meta, "arrays": [[name, m.shape[0], m.shape[1]] for name, m in mats]}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, m in mats:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{p}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{p}: unsupported format version {version}")
    header = json.loads(data[16 : 16 + n])
    offset = 16 + n
    arrays = {}
    for name, rows, cols in header["arrays"]:
        size = rows * cols * 8
        if offset + size > len(data):
            raise CheckpointError(f"{p}: truncated at array {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols).astype(np.float64)
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{p}: {len(data) - offset} trailing bytes")
    return header["kind"], header["meta"], arrays


def save_model(path, model: SeqRecModel, extra: dict | None = None) -> None:
    meta = {
        "config": config_dict(model.config),
        "n_items": model.n_items,
        "fusion": None
        if model.fusion is None
        else {"mode": model.fusion.mode, "modalities": list(model.fusion.modalities), "d": model.fusion.d},
        "modality_dims": {k: int(v) for k, v in sorted(model.modality_dims.items())},
        "extra": extra or {},
    }
    write_checkpoint(path, model.config.variant, meta, [(name, p.value) for name, p in model.params.items()])


def load_model(path) -> tuple[SeqRecModel, dict]:
    kind, meta, arrays = read_checkpoint(path)
    if kind not in ("sasrec_plus", "bert4rec_plus"):
        raise CheckpointError(f"checkpoint holds a {kind!r} model, not a transformer")
    cfg = ModelConfig(**meta["config"])
    fusion = None
    if meta["fusion"] is not None:
        f = meta["fusion"]
        fusion = FusionConfig(f["mode"], tuple(f["modalities"]), f["d"])
    model = SeqRecModel(cfg, meta["n_items"], fusion, meta["modality_dims"])
    if list(arrays) != list(model.params):
        raise CheckpointError("checkpoint parameter list does not match the model layout")
    model.load_state(arrays)
    return model, meta.get("extra", {})


def save_baseline(path, model, meta: dict | None = None) -> None:
    from .baselines import BPRModel, PopModel, TransRecModel

    if isinstance(model, PopModel):
        kind, arrays = "poprec", [("counts", model.counts.astype(np.float64))]
    elif isinstance(model, BPRModel):
        kind = "bpr"
        arrays = [("user_factors", model.user_factors), ("item_factors", model.item_factors), ("item_bias", model.item_bias)]
    elif isinstance(model, TransRecModel):
        kind = "transrec"
        arrays = [
            ("item_emb", model.item_emb),
            ("user_trans", model.user_trans),
            ("global_trans", model.global_trans),
            ("item_bias", model.item_bias),
        ]
    else:
        raise TypeError(f"not a baseline model: {type(model).__name__}")
    write_checkpoint(path, kind, meta or {}, arrays)


def load_baseline(path):
    from .baselines import BPRModel, PopModel, TransRecModel

    kind, meta, a = read_checkpoint(path)
    if kind == "poprec":
        return PopModel(a["counts"][0].astype(np.int64)), meta
    if kind == "bpr":
        return BPRModel(a["user_factors"], a["item_factors"], a["item_bias"][0]), meta
    if kind == "transrec":
        return TransRecModel(a["item_emb"], a["user_trans"], a["global_trans"][0], a["item_bias"][0]), meta
    raise CheckpointError(f"checkpoint holds a {kind!r} model, not a baseline")
