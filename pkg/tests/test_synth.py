import numpy as np
import pytest
from scipy.stats import chisquare

from mmrec.auxiliary import load_modality_table
from mmrec.dataset import ingest_interactions
from mmrec.errors import ConfigError
from mmrec.synth import SynthConfig, length_band, read_labels, synth_generate, write_synth


def transitions(data):
    cat = data.category_array()
    seqs = {}
    for it in data.interactions:
        seqs.setdefault(it.user, []).append(it.item)
    pairs = [(a, b) for s in seqs.values() for a, b in zip(s, s[1:])]
    return np.array(pairs), cat


def test_follow_rate_at_strength_08():
    data = synth_generate(SynthConfig(n_users=200, n_items=300, n_categories=20, strength=0.8, seed=5))
    pairs, cat = transitions(data)
    rate = np.mean(cat[pairs[:, 0]] == cat[pairs[:, 1]])
    assert abs(rate - 0.8) <= 0.05


def test_strength_one_noise_zero_keeps_category():
    data = synth_generate(SynthConfig(n_users=50, n_items=60, n_categories=6, strength=1.0, noise=0.0, seed=2))
    pairs, cat = transitions(data)
    assert np.all(cat[pairs[:, 0]] == cat[pairs[:, 1]])


def test_strength_zero_next_item_uniform():
    data = synth_generate(SynthConfig(n_users=400, n_items=30, n_categories=5, min_len=10, max_len=20, strength=0.0, seed=8))
    pairs, _ = transitions(data)
    counts = np.bincount(pairs[:, 1], minlength=31)[1:]
    assert chisquare(counts).pvalue > 1e-3


def test_planted_vectors_match_own_category():
    data = synth_generate(SynthConfig(n_items=40, n_categories=8, noise=0.0, seed=4))
    cat = data.category_array()
    text = data.tables["text"].matrix(data.catalog)[1:41]
    unit = text / np.linalg.norm(text, axis=1, keepdims=True)
    sims = unit @ unit.T
    same = cat[1:41][:, None] == cat[1:41][None, :]
    assert np.allclose(sims[same], 1.0)


def test_generation_is_deterministic():
    a = synth_generate(SynthConfig(seed=9))
    b = synth_generate(SynthConfig(seed=9))
    assert a.interactions == b.interactions and a.labels == b.labels
    for m in a.tables:
        for k, v in a.tables[m].vectors.items():
            assert np.array_equal(v, b.tables[m].vectors[k])
    assert synth_generate(SynthConfig(seed=10)).interactions != a.interactions


def test_archetype_lengths_stay_in_band():
    cfg = SynthConfig(n_users=120, n_archetypes=4, min_len=4, max_len=23, band_width=2, seed=1)
    data = synth_generate(cfg)
    lengths = {}
    for it in data.interactions:
        lengths[it.user] = lengths.get(it.user, 0) + 1
    for u, n in lengths.items():
        lo, hi = length_band(cfg, data.labels[data.catalog.user_name(u)])
        assert lo <= n <= hi
    assert [length_band(cfg, a) for a in range(4)] == [(4, 5), (9, 10), (14, 15), (19, 20)]
    assert set(data.labels.values()) == {0, 1, 2, 3}


def test_bands_tile_range_without_width():
    cfg = SynthConfig(n_archetypes=3, min_len=3, max_len=11)
    assert [length_band(cfg, a) for a in range(3)] == [(3, 5), (6, 8), (9, 11)]


def test_invalid_config():
    with pytest.raises(ConfigError):
        SynthConfig(n_users=0)
    with pytest.raises(ConfigError):
        SynthConfig(strength=1.5)


def test_written_files_reingest(tmp_path):
    data = synth_generate(SynthConfig(n_users=20, n_items=25, seed=3))
    paths = write_synth(tmp_path, data)
    assert all(p.stat().st_size > 0 for p in paths)
    cat, rows = ingest_interactions(tmp_path / "interactions.tsv")
    raw = lambda c, xs: [(c.user_name(x.user), c.item_name(x.item), x.timestamp, x.rating) for x in xs]  # noqa: E731
    assert raw(cat, rows) == raw(data.catalog, data.interactions)
    text = load_modality_table(tmp_path / "text.emb")
    assert text.dim == data.tables["text"].dim
    for k, v in data.tables["text"].vectors.items():
        assert np.array_equal(text.vectors[k], v)
    assert read_labels(tmp_path / "labels.tsv") == data.labels
    first = {p.name: p.read_bytes() for p in paths}
    write_synth(tmp_path, synth_generate(SynthConfig(n_users=20, n_items=25, seed=3)))
    assert {p.name: p.read_bytes() for p in paths} == first
