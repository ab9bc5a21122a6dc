import numpy as np
import pytest

from maex.tensor import Tape, backward


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8))


def check_grads(build, tensors, eps=1e-5):
    """Compare tape gradients of scalar ``build()`` with finite differences
    for every tensor in ``tensors``; returns the worst relative error."""
    for t in tensors:
        t.grad = None if not t.is_param else np.zeros_like(t.data)
    with Tape() as tape:
        out = build()
    backward(tape, out)
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        gn = numeric_grad(lambda: build().item(), t.data, eps)
        worst = max(worst, rel_err(ga, gn))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting ----------------------------------------------------------

_ACCEPTANCE = {}


class Criterion:
    """Context manager recording one acceptance criterion as PASS or FAIL.

    Call ``check(ok, detail)`` inside the block; an exception or a failed
    check records FAIL and fails the test.
    """

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.ok, self.detail = None, ""

    def check(self, ok, detail):
        self.ok, self.detail = bool(ok), detail

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            self.ok, self.detail = False, f"{exc_type.__name__}: {exc}"
        elif self.ok is None:
            self.ok, self.detail = False, "no check recorded"
        line = f"criterion {self.number:>2} {'PASS' if self.ok else 'FAIL'}  {self.title}: {self.detail}"
        _ACCEPTANCE[self.number] = line
        print(line)
        if exc_type is None and not self.ok:
            raise AssertionError(line)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
