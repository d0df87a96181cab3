import numpy as np
import pytest
from hypothesis import settings

from mmrec.auxiliary import FusionConfig
from mmrec.model import ModelConfig, SeqRecModel
from mmrec.synth import SynthConfig, synth_generate

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(SynthConfig(n_users=40, n_items=60, n_categories=6, min_len=4, max_len=10, seed=11))


@pytest.fixture(scope="session")
def small_split(small_synth):
    return small_synth.split()


def tiny_model(variant="sasrec_plus", n_items=12, d=8, max_len=6, n_layers=1, n_heads=None, mode="concat", dims=None, dropout=0.1, seed=0, use_aux=True):
    dims = dims or {"text": 3, "image": 2}
    heads = n_heads if n_heads is not None else (2 if variant == "bert4rec_plus" else 1)
    cfg = ModelConfig(variant=variant, n_layers=n_layers, n_heads=heads, d=d, max_len=max_len, dropout=dropout, seed=seed, use_aux=use_aux, mask_prob=0.3)
    fusion = FusionConfig(mode, tuple(dims), d)
    return SeqRecModel(cfg, n_items, fusion, dims)


def random_aux(n_items, dims, rng):
    out = {}
    for m, k in dims.items():
        x = rng.normal(size=(n_items + 2, k))
        x[0] = 0.0
        x[-1] = 0.0
        out[m] = x
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one "PASS/FAIL criterion N: ..." line per acceptance check, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
