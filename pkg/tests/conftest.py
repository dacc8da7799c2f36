import numpy as np
import pytest

from aupair.data import SyntheticConfig, VideoSequence, generate_synthetic


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def make_video(video_id, labels, features=None, au_names=("AU1",), fps=30.0, occluded=None):
    labels = np.asarray(labels, dtype=np.int64).reshape(len(labels), -1)
    if features is None:
        features = labels.astype(np.float64)[:, :1]
    return VideoSequence(video_id, np.arange(len(labels)), np.asarray(features, dtype=np.float64).reshape(len(labels), -1),
                         labels, tuple(au_names), occluded, fps)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticConfig(num_videos=6, frames_per_video=60, feature_dim=4, num_aus=2, seed=3))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record_criterion(number, title, ok, detail):
    ACCEPTANCE.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
