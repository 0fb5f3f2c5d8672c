import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from archverify.augment import AugmentationPolicy
from archverify.data import SplitConfig, build_pair_dataset, build_splits
from archverify.model import build_model, embedding_state_hash
from archverify.toy import DEFAULT_SOURCES, make_toy_dataset
from archverify.training import ImageCache, TrainingHyperparams, train_phase1, train_phase2

FIXTURES = Path(__file__).parent / "fixtures"

# toy acceptance run: four in-set sources, two held out entirely
TOY_IN_SET = tuple(s.name for s in DEFAULT_SOURCES[:4])
TOY_OUT_OF_SET = tuple(s.name for s in DEFAULT_SOURCES[4:])
TOY_PER_SOURCE = 150
TOY_COUNTS = (100, 20, 30)
TOY_HP = dict(lr=1e-3, phase2_lr=1e-3, phase1_epochs=10, phase2_epochs=10,
              early_stop_patience=5, phase2_patience=5, batch_size=32, seed=0)


@dataclass
class ToyRun:
    root: Path
    manifest: object
    split_set: object
    model: object
    log: object
    hash_before_phase2: str
    hash_after_phase2: str
    seconds: float


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory) -> ToyRun:
    torch.set_num_threads(max(1, torch.get_num_threads()))
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("toy")
    manifest = make_toy_dataset(root / "images", DEFAULT_SOURCES, per_source=TOY_PER_SOURCE, size=64, seed=0)
    config = SplitConfig("toy", TOY_IN_SET, TOY_OUT_OF_SET, TOY_COUNTS, TOY_COUNTS[2], seed=0)
    split_set = build_splits(manifest, config, seed=0)
    hp = TrainingHyperparams(**TOY_HP)
    pairs = build_pair_dataset(split_set.split_map("train"), seed=hp.seed)
    val_pairs = build_pair_dataset(split_set.split_map("val"), seed=hp.seed + 1)
    model = build_model("toy-cnn", 64, seed=0)
    cache = ImageCache()
    policy = AugmentationPolicy()
    model, tlog = train_phase1(model, pairs, val_pairs, hp, policy, cache)
    before = embedding_state_hash(model)
    model, tlog = train_phase2(model, pairs, val_pairs, hp, policy, cache, tlog)
    after = embedding_state_hash(model)
    return ToyRun(root, manifest, split_set, model, tlog, before, after, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def small_toy(tmp_path_factory):
    """Two sources x 60 images at 32x32: enough for quick training checks."""
    root = tmp_path_factory.mktemp("small_toy")
    manifest = make_toy_dataset(root, DEFAULT_SOURCES[:2], per_source=60, size=32, seed=3)
    return manifest


@pytest.fixture
def probe_images():
    return np.load(FIXTURES / "probe_batch.npz")["images"]


# -- acceptance reporting -----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


class AcceptanceRecorder:
    """Records one PASS/FAIL line per criterion; a failed block re-raises after recording."""

    def __init__(self, results: dict):
        self.results = results

    def check(self, number: int, title: str, budget_s: float | None = None):
        return _CriterionBlock(self.results, number, title, budget_s)


class _CriterionBlock:
    def __init__(self, results, number, title, budget_s):
        self.results, self.number, self.title, self.budget_s = results, number, title, budget_s
        self.notes: list[str] = []

    def note(self, text: str):
        self.notes.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc_type is None
        detail = [f"{elapsed:.2f}s"] + self.notes
        if ok and self.budget_s is not None and elapsed >= self.budget_s:
            ok = False
            detail.append(f"over budget {self.budget_s}s")
        if exc_type is not None:
            detail.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        line = f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}  [{'; '.join(detail)}]"
        self.results[self.number] = line
        print(line)
        if exc_type is None and not ok:
            raise AssertionError(line)
        return False


@pytest.fixture
def acceptance(request):
    return AcceptanceRecorder(request.config.stash[_ACCEPTANCE])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
