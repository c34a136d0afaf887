import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kspace_triage.data import LesionSpec, PhantomConfig, generate_splits
from kspace_triage.model import ModelConfig

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# a backbone small enough for gradient checks and second-scale training
TINY_MODEL = dict(n_kernels=2, kernel_size=3, widths=(4, 8), stem_kernel=2, stem_stride=2, groups=2)


def tiny_config(**overrides):
    return ModelConfig(**{**TINY_MODEL, **overrides})


def complex_normal(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_splits():
    """32x32 planted-band phantoms; large enough that a tiny model learns the lesion."""
    cfg = PhantomConfig(size=32, lesions=[LesionSpec(extent=8.0, amplitude=0.8)], noise_std=0.02, seed=5)
    return generate_splits(cfg, 96, 48, 48)


def toy_column_dataset(n, seed, rows=8, cols=6, informative=(1, 4)):
    """Small k-space set whose label lives in the energy of a few columns."""
    from kspace_triage.data import Dataset

    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < 0.5).astype(np.uint8)
    k = 0.3 * complex_normal(rng, (n, rows, cols))
    for c in informative:
        k[:, :, c] += (1.5 * labels)[:, None] * np.exp(2j * np.pi * rng.random((n, rows)))
    k = k.astype(np.complex64)
    images = np.abs(k).astype(np.float32)
    return Dataset(k, images, labels[:, None], ("lesion",))


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
