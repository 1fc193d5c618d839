import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("heavy", max_examples=600, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_spd(rng, p, cond=10.0, complex_=False):
    """Random positive definite matrix with eigenvalues in [1, cond]."""
    Z = rng.standard_normal((p, p))
    if complex_:
        Z = Z + 1j * rng.standard_normal((p, p))
    Q, _ = np.linalg.qr(Z)
    w = np.linspace(1.0, cond, p)
    M = (Q * w) @ Q.conj().T
    return (M + M.conj().T) / 2


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the terminal summary.

    The test's name encodes the criterion number (``test_criterion_07_...``).
    Call the returned function with ``(ok, detail)``; a test that errors
    before recording is reported as FAIL.
    """
    number = int(request.node.name.split("_")[2])
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(ok, detail):
        results[number] = (bool(ok), detail)
        return bool(ok)

    yield record
    results.setdefault(number, (False, "error before the check completed"))


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
