import time
from collections import defaultdict

import numpy as np
import pytest

from resbrnet import functional as F
from resbrnet import layers
from resbrnet.checkpoint import save_checkpoint
from resbrnet.data import ingest
from resbrnet.fixtures import write_fixture_tree
from resbrnet.model import build_res_brnet, desk_config
from resbrnet.training import RunConfig, train_model

CRITERIA = {
    1: "gradient correctness of every layer (64-bit, rel-err < 1e-6)",
    2: "conv/pool match nested-loop oracles within 1e-5 relative",
    3: "zero residual path returns nonnegative input exactly",
    4: "desk model overfits 80 fixtures (lr 1e-3 <= 30 epochs, lr 1e-4 <= 40 epochs)",
    5: "RMSprop scalar step and exact learning-rate schedule",
    6: "metric oracles: exact rates, ROC-AUC vs pairwise, uniform CE = ln 4",
    7: "augmentation: reflection involution, 360 deg rotation, parameter ranges",
    8: "t-SNE: perplexity calibration, cluster separation, KL decrease",
    9: "checkpoint round trip is bit-exact; corrupt files rejected",
    10: "two identical train runs give byte-identical outputs",
}

_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _outcomes[marker.args[0]].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, desc in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {status:7s} {desc}")


# ---------------------------------------------------------------------------
# shared fixtures


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """4 classes x 20 synthetic 64x64 grayscale PNGs."""
    return write_fixture_tree(tmp_path_factory.mktemp("fixtures") / "data", per_class=20, size=64, seed=0)


@pytest.fixture(scope="session")
def fixture_ds(fixture_dir):
    return ingest(fixture_dir, (1, 64, 64))


def overfit(ds, lr, epochs):
    model = build_res_brnet(desk_config(), seed=0)
    cfg = RunConfig(epochs=epochs, lr=lr, arch="desk", input_size=64, augment=False)
    start = time.perf_counter()
    result = train_model(model, ds, None, cfg)
    return model, result, time.perf_counter() - start


@pytest.fixture(scope="session")
def overfit_scaled(fixture_ds):
    """Desk model trained on all 80 fixtures at lr 1e-3 for 30 epochs."""
    return overfit(fixture_ds, 1e-3, 30)


@pytest.fixture(scope="session")
def overfit_ckpt(overfit_scaled, fixture_ds, tmp_path_factory):
    model, result, _ = overfit_scaled
    path = tmp_path_factory.mktemp("ckpt") / "overfit.rbrn"
    save_checkpoint(model, path, fixture_ds.class_names, {"epochs_run": len(result.history)})
    return path


# ---------------------------------------------------------------------------
# kink detection for finite-difference checks


class KinkMonitor:
    """Smallest distance to a non-differentiable point seen during a forward pass.

    Tracks |pre-activation| at every ReLU and the gap between the two largest
    entries of every max-pool window.
    """

    def __init__(self, monkeypatch):
        self.margin = np.inf
        relu, pool2d = layers.relu, F.pool2d

        def watch_relu(x):
            self.margin = min(self.margin, float(np.abs(x.data).min()))
            return relu(x)

        def watch_pool(x, kind, window=2, stride=2):
            if kind == "max":
                self.margin = min(self.margin, max_pool_gap(x.data, window, stride))
            return pool2d(x, kind, window, stride)

        monkeypatch.setattr(layers, "relu", watch_relu)
        monkeypatch.setattr(F, "pool2d", watch_pool)

    def reset(self):
        self.margin = np.inf


def max_pool_gap(x, window, stride):
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    win = win.reshape(*win.shape[:4], window * window)
    top2 = np.sort(win, axis=-1)[..., -2:]
    return float((top2[..., 1] - top2[..., 0]).min())


@pytest.fixture
def kinks(monkeypatch):
    return KinkMonitor(monkeypatch)
