import numpy as np
import pytest

from gpuq import diffcore as dc


def fd_grad(fn, params, h=1e-5):
    """Central differences of the scalar fn() w.r.t. the raw parameter values."""
    out = []
    for p in params:
        g = np.zeros(p.shape)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn().value)
            flat[i] = old - h
            down = float(fn().value)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_error(a, b) -> float:
    a = np.concatenate([np.ravel(x) for x in a])
    b = np.concatenate([np.ravel(x) for x in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_grad(fn, params, tol=1e-4):
    params = list(params)
    analytic = dc.grad(fn(), params)
    numeric = fd_grad(fn, params)
    err = rel_error(analytic, numeric)
    assert err <= tol, f"relative gradient error {err:.2e}"
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_criteria: list[tuple[int, str, str, float]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and rep.when == "call":
        _criteria.append((marker.args[0], marker.args[1], rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num, text, outcome, secs in sorted(_criteria):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num:>2}: {text} ({secs:.1f} s)")
