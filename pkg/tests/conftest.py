import numpy as np
import pytest

from uasd.config import load_config
from uasd.pipeline import Experiment

# Desk-scale experiment used by the acceptance suite: the spec-default
# corpus layout (120 train clips, 30+30 test clips per SNR, SNRs
# 6/0/-6/-12 dB, similar-machine noise) with feature/model sizes and epoch
# counts reduced to laptop-CPU scale. Paper-protocol values (128 mel bins,
# 32 channels, 4 s clips, 20/100 epochs) remain the package defaults.
DESK_OVERRIDES = [
    "clip_seconds=2.0",
    "n_train=120",
    "n_test_per_condition=30",
    "snr_list=6,0,-6,-12",
    "features.n_mels=64",
    "sad.epochs=3",
    "sad.channels=16",
    "sad.embedding_dim=64",
    "sad.windows_per_epoch=3000",
    "sad.log_cost_every=0",
    "ae.epochs=30",
]

DESK_SEEDS = (0, 1, 2)

# Single-command micro pipeline: exercises every stage in a few seconds.
MICRO_OVERRIDES = [
    "clip_seconds=1.2",
    "n_train=8",
    "n_test_per_condition=3",
    "snr_list=6,-6",
    "features.n_mels=32",
    "sad.epochs=1",
    "sad.channels=4",
    "sad.blocks=1",
    "sad.embedding_dim=16",
    "sad.windows_per_epoch=256",
    "sad.log_cost_every=0",
    "ae.epochs=2",
    "ae.hidden_dim=32",
    "ae.bottleneck_dim=4",
    "gmm.components=2",
]


def make_experiment(out_dir, overrides, seed=0) -> Experiment:
    config = load_config(
        overrides=list(overrides) + [f"out_dir={out_dir}", f"seed={seed}"]
    )
    return Experiment(config)


@pytest.fixture(scope="session")
def micro_experiment(tmp_path_factory):
    """One fully ran micro pipeline (all methods, scores, report)."""
    exp = make_experiment(
        tmp_path_factory.mktemp("micro"), MICRO_OVERRIDES, seed=5
    )
    report = exp.run_all()
    return exp, report


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """The acceptance experiments: full pipeline per seed, plus wall time."""
    import time

    runs = {}
    t0 = time.perf_counter()
    for seed in DESK_SEEDS:
        exp = make_experiment(
            tmp_path_factory.mktemp(f"desk{seed}"), DESK_OVERRIDES, seed=seed
        )
        runs[seed] = (exp, exp.run_all())
    elapsed = time.perf_counter() - t0
    return runs, elapsed


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
