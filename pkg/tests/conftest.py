import time

import numpy as np
import pytest

from hearken import checkpoint, manifest, models, synth, train


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """8 classes x 3 clips, enough for fast split/train/eval plumbing tests."""
    d = tmp_path_factory.mktemp("corpus_small")
    entries = synth.synth_corpus(synth.default_classes(), 3, d, seed=11)
    return d, entries


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The standard desk corpus: 8 classes x 20 clips, seed 0."""
    d = tmp_path_factory.mktemp("corpus_default")
    entries = synth.synth_corpus(synth.default_classes(), 20, d, seed=0)
    return d, entries


@pytest.fixture(scope="session")
def untrained_bundle():
    """Initialized A-mini bundle (identity normalization), for contract tests."""
    from hearken.seeding import derive_rng

    spec = models.arch_spec("A-mini", n_classes=8, patch_frames=200)
    built = models.build(spec, rng=derive_rng(5, 3))
    return checkpoint.from_built(built)


@pytest.fixture(scope="session")
def trained_run(default_corpus):
    """One seed-fixed training run on the default corpus (shared by acceptance).

    Returns dict with bundle, train/test entries, metric rows and wall time.
    """
    d, entries = default_corpus
    tr, te = train.split_dataset(entries, 0.75, seed=0)
    settings = train.TrainSettings(epochs=30, seed=0, stop_accuracy=0.9)
    t0 = time.time()
    bundle, metrics = train.train(tr, settings, val_entries=te, base_dir=str(d))
    elapsed = time.time() - t0
    val_rows = [m for m in metrics if m["split"] == "val"]
    return {
        "bundle": bundle,
        "train": tr,
        "test": te,
        "metrics": metrics,
        "elapsed": elapsed,
        "epochs_run": len(val_rows),
        "final_accuracy": val_rows[-1]["accuracy"] if val_rows else 0.0,
        "base_dir": str(d),
    }
