import struct

import numpy as np
import pytest

from conftest import random_aux, tiny_model
from mmrec.baselines import BPRModel, PopModel, TransRecModel
from mmrec.checkpoint import FORMAT_VERSION, MAGIC, load_baseline, load_model, read_checkpoint, save_baseline, save_model, write_checkpoint
from mmrec.errors import CheckpointError


@pytest.mark.parametrize("variant,mode", [("sasrec_plus", "concat"), ("bert4rec_plus", "sum")])
def test_model_round_trip(tmp_path, rng, variant, mode):
    m = tiny_model(variant, mode=mode, dropout=0.0)
    for p in m.params.values():
        p.value[...] = rng.normal(size=p.value.shape)
    path = tmp_path / "m.ckpt"
    save_model(path, m, {"best_epoch": 3})
    back, extra = load_model(path)
    assert extra == {"best_epoch": 3}
    assert back.config == m.config and back.fusion == m.fusion
    for name, p in m.params.items():
        assert np.array_equal(back.params[name].value, p.value)
    aux = random_aux(12, {"text": 3, "image": 2}, rng)
    cands = np.array([[1, 2, 3], [4, 5, 6]])
    assert np.array_equal(back.predict([[1, 2], [3]], cands, aux), m.predict([[1, 2], [3]], cands, aux))


def test_plain_model_round_trip(tmp_path):
    m = tiny_model(use_aux=False)
    save_model(tmp_path / "m.ckpt", m)
    back, _ = load_model(tmp_path / "m.ckpt")
    assert not back.uses_aux


def test_save_is_byte_stable(tmp_path):
    m = tiny_model()
    save_model(tmp_path / "a", m)
    save_model(tmp_path / "b", m)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_baselines_round_trip(tmp_path, rng):
    models = [
        PopModel(np.array([0, 4, 1, 7])),
        BPRModel(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=4)),
        TransRecModel(rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=2), rng.normal(size=4)),
    ]
    for k, m in enumerate(models):
        path = tmp_path / f"{k}.ckpt"
        save_baseline(path, m, {"n_items": 3})
        back, meta = load_baseline(path)
        assert type(back) is type(m) and meta == {"n_items": 3}
        for name in vars(m):
            a, b = getattr(m, name), getattr(back, name)
            if isinstance(a, np.ndarray):
                assert np.array_equal(a, b)


def test_kind_mismatch(tmp_path):
    save_baseline(tmp_path / "p", PopModel(np.array([0, 1])))
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "p")
    save_model(tmp_path / "m", tiny_model())
    with pytest.raises(CheckpointError):
        load_baseline(tmp_path / "m")


def test_corrupt_files(tmp_path):
    path = tmp_path / "x.ckpt"
    write_checkpoint(path, "poprec", {}, [("counts", np.arange(5.0))])
    raw = path.read_bytes()

    (tmp_path / "magic").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "magic")

    (tmp_path / "ver").write_bytes(MAGIC + struct.pack("<I", FORMAT_VERSION + 1) + raw[12:])
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "ver")

    (tmp_path / "short").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "short")

    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(tmp_path / "long")

    with pytest.raises(FileNotFoundError):
        read_checkpoint(tmp_path / "missing")
