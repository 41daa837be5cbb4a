"""Shared fixtures and helpers for the test suite."""
import numpy as np
import pytest

from dlmlab import autodiff as ad
from dlmlab.datasets import generate_split
from dlmlab.models import ArchSpec, Categorical, Dense, Gaussian, preset

FD_STEP = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-8


def central_difference(f, x, h=FD_STEP):
    """Central finite-difference gradient of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def check_gradients(fn, bindings, h=FD_STEP):
    """Compare reverse-mode gradients of ``fn(**tensors)`` with central differences for every binding."""
    _, grads = ad.value_and_grad(fn, bindings)
    for name, value in bindings.items():
        def f(v, name=name):
            trial = dict(bindings)
            trial[name] = v
            return ad.forward(fn, trial).value.item()

        numeric = central_difference(f, value, h)
        np.testing.assert_allclose(grads[name], numeric, rtol=FD_RTOL, atol=FD_ATOL, err_msg=name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def moons():
    train, test = generate_split("label-noise", 200, 0, rate=0.2)
    return {"train": train, "test": test}


@pytest.fixture(scope="session")
def blobs_data():
    train, test = generate_split("blobs", 300, 0)
    return {"train": train, "test": test}


@pytest.fixture(scope="session")
def small_arch():
    return ArchSpec((2,), (Dense(6, "tanh"), Dense(2)), Categorical(2))


@pytest.fixture(scope="session")
def mlp():
    return preset("mlp-2x64", (2,), Categorical(2))


@pytest.fixture(scope="session")
def regression_arch():
    return ArchSpec((3,), (Dense(4, "tanh"), Dense(1)), Gaussian(0.5, 1))


# -----------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per numbered criterion
# -----------------------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    entry = _CRITERIA.setdefault(marker.args[0], {"ok": True, "notes": []})
    if rep.failed:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} failed")
    elif rep.skipped:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} skipped")
    if rep.when == "call":
        entry["notes"].extend(text for key, text in item.user_properties if key == "note")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["notes"])
        terminalreporter.write_line(f"criterion {n:>2}: {status}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def note(request):
    """Attach a short finding to the acceptance summary line of this test's criterion."""
    return lambda text: request.node.user_properties.append(("note", text))
