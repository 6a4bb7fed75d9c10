import re

import numpy as np
import pytest

from rpcate.tensor import Tape, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(f, t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f() / d t by central differences, perturbing ``t.data`` in place."""
    grad = np.zeros_like(t.data)
    for idx in np.ndindex(t.shape):
        old = t.data[idx]
        t.data[idx] = old + h
        fp = f()
        t.data[idx] = old - h
        fm = f()
        t.data[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def grad_mismatches(analytic: np.ndarray, numeric: np.ndarray, rtol=1e-4, atol=1e-7, floor=1e-8) -> list:
    """Indices where the gradients disagree beyond tolerance.

    Relative error ``|a - n| / max(|a|, |n|)`` is used where the gradient
    magnitude exceeds ``floor``, absolute error otherwise.
    """
    bad = []
    for idx in np.ndindex(analytic.shape):
        a, n = analytic[idx], numeric[idx]
        scale = max(abs(a), abs(n))
        if scale > floor:
            if abs(a - n) / scale > rtol:
                bad.append((idx, a, n))
        elif abs(a - n) > atol:
            bad.append((idx, a, n))
    return bad


def analytic_grads(build, tensors):
    """Run ``build()`` (returning a scalar Tensor) on a tape and return grads of ``tensors``."""
    with Tape() as tape:
        out = build()
    tape.backward(out, wrt=tensors)
    return [t.grad.copy() for t in tensors]


# PASS/FAIL lines recorded by the acceptance suite, printed after the run.
ACCEPTANCE_LINES: list = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    match = re.match(r"test_criterion_(\d+)_", item.name)
    if match and report.when == "call" and report.failed:
        number = int(match.group(1))
        if not any(line.startswith(f"criterion {number}:") for line in ACCEPTANCE_LINES):
            ACCEPTANCE_LINES.append(f"criterion {number}: FAIL  {call.excinfo.typename}: {call.excinfo.value}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
