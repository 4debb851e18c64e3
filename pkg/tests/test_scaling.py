"""Per-step cost growth of the sampled schemes.

Coarse wall-clock checks: the two-draw scheme is O(N) per step and the
sampled scheme O(N*B); measured growth must sit within a factor 2 of the
linear fit through the smaller size.  Sizes are large enough that vector
work dominates interpreter overhead.
"""

import time

import numpy as np
import pytest

from mfvi import InitSpec, PriorSpec, init_cloud, step_bbb, step_minimal


def best_time(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


@pytest.fixture(scope="module")
def prior5():
    return PriorSpec(np.zeros(5), 0.2)


def timed_steps(step, n_steps=20):
    def run():
        for k in range(n_steps):
            step(k)
    return best_time(run) / n_steps


class TestCostScaling:
    def test_minimal_grows_linearly_in_width(self, prior5):
        x = np.random.default_rng(0).uniform(-1, 1, 5)
        times = {}
        for n in (8_000, 32_000):
            cloud = init_cloud(InitSpec(), n, np.random.default_rng(1),
                               prior=prior5, dim=5)
            rngs = [np.random.default_rng(k) for k in range(20)]
            times[n] = timed_steps(
                lambda k: step_minimal(cloud, (x, 0.2), 0.5, prior5, rngs[k]))
        ratio = times[32_000] / times[8_000]
        assert 2.0 <= ratio <= 8.0  # 4x work within 2x of linear

    def test_bbb_grows_linearly_in_batch(self, prior5):
        x = np.random.default_rng(0).uniform(-1, 1, 5)
        cloud = init_cloud(InitSpec(), 8_000, np.random.default_rng(1),
                           prior=prior5, dim=5)
        times = {}
        for b in (2, 8):
            rngs = [np.random.default_rng(k) for k in range(20)]
            times[b] = timed_steps(
                lambda k: step_bbb(cloud, (x, 0.2), 0.5, b, prior5, rngs[k]))
        ratio = times[8] / times[2]
        assert 2.0 <= ratio <= 8.0

    def test_bbb_grows_linearly_in_width(self, prior5):
        x = np.random.default_rng(0).uniform(-1, 1, 5)
        times = {}
        for n in (8_000, 32_000):
            cloud = init_cloud(InitSpec(), n, np.random.default_rng(1),
                               prior=prior5, dim=5)
            rngs = [np.random.default_rng(k) for k in range(20)]
            times[n] = timed_steps(
                lambda k: step_bbb(cloud, (x, 0.2), 0.5, 2, prior5, rngs[k]))
        ratio = times[32_000] / times[8_000]
        assert 2.0 <= ratio <= 8.0
