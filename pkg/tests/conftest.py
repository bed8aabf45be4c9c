import time

import numpy as np
import pytest

from fusion.datagen import SyntheticConfig, gen_synthetic


@pytest.fixture(scope="session")
def small_data():
    """A reduced-width synthetic dataset that keeps every generator ingredient."""
    return gen_synthetic(SyntheticConfig(n_rct=400, n_obs=1600, n_cont=12, n_cat=4, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def benchmark_rows(tmp_path_factory):
    """(rows, failures, seconds) of the shipped 3-dial x 10-seed x 7-method grid (run once)."""
    from fusion.harness.config import preset
    from fusion.harness.experiments import run_grid

    start = time.perf_counter()
    rows, failures = run_grid(preset("benchmark"), str(tmp_path_factory.mktemp("benchmark")))
    return rows, failures, time.perf_counter() - start


def cell_means(rows, metric):
    out = {}
    for r in rows:
        out.setdefault((r["method"], r["overlap_dial"]), []).append(r[metric])
    return {k: float(np.mean(v)) for k, v in out.items()}
