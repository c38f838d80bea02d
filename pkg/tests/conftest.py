import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from overtake import core_types as ct
from overtake.core_types import CanTrace
from overtake.synthgen import demo_config, generate_dataset, generate_segments

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_trace(n=651, start=-20.0, **columns) -> CanTrace:
    """Benign in-range trace; keyword arguments override whole columns by signal name."""
    t = np.round(start + np.arange(n) * 0.1, 10)
    v = np.zeros((n, 10))
    v[:, ct.PEDAL] = 30.0
    v[:, ct.DIST] = 100.0
    v[:, ct.SPEED_AHEAD] = 80.0
    v[:, ct.SPEED] = 80.0
    for name, col in columns.items():
        v[:, ct.SIGNAL_NAMES.index(name)] = col
    return CanTrace(t, v)


@pytest.fixture(scope="session")
def demo():
    """The default 400-file synthetic dataset, in memory (segments, manifest)."""
    return generate_segments(demo_config(0))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 40-file dataset on disk: 4 trucks x (5 overtakes + 5 distractors)."""
    root = tmp_path_factory.mktemp("small")
    manifest = generate_dataset(demo_config(7, per_class_per_truck=5), root)
    return root, manifest


def blobs(n=200, d=2, margin=2.0, seed=0):
    """Two Gaussian clusters centred at -/+ margin on every axis; labels 0/1, alternating."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(0.0, 0.5, (n, d)) + np.where(y[:, None] == 1, margin, -margin)
    return X, y
