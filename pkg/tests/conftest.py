import numpy as np
import pytest
from hypothesis import settings

from gmconsensus.gm import GaussianComponent, GaussianMixture

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def gc(w, m, P):
    return GaussianComponent(w, np.atleast_1d(np.asarray(m, float)), np.atleast_2d(np.asarray(P, float)))


def gm1(weights, means=None, covs=None):
    """1-D mixture helper; means default to 0..n-1, covariances to 1."""
    n = len(weights)
    means = np.arange(n, dtype=float) if means is None else np.asarray(means, float)
    covs = np.ones(n) if covs is None else np.asarray(covs, float)
    return GaussianMixture(weights, means.reshape(n, 1), covs.reshape(n, 1, 1), 1)


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T + d * np.eye(d))


def random_mixture(rng, n, d, spread=5.0):
    return GaussianMixture(
        rng.uniform(0.05, 1.0, n),
        rng.normal(0.0, spread, (n, d)),
        np.stack([random_spd(rng, d) for _ in range(n)]),
        d,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, filled in by test_acceptance.py and echoed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
