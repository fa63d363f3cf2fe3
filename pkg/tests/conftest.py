import numpy as np
import pytest

from qstnet.measurement import make_geometry
from qstnet.nn import autodiff as ad


@pytest.fixture(scope="session")
def geom():
    return make_geometry()


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` with respect to array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def check_grads(build, tensors, h=1e-6, rtol=1e-4, atol=1e-8):
    """Compare tape gradients of ``build()`` against central differences for each tensor."""
    with ad.Tape() as tape:
        loss = build()
    grads = ad.backward(tape, loss, tensors)
    for t in tensors:
        num = numeric_grad(lambda: build().item(), t.data, h)
        err = np.abs(grads[t] - num)
        scale = np.maximum(np.abs(num), np.abs(grads[t]))
        ok = (err <= atol) | (err <= rtol * scale)
        assert ok.all(), f"max rel err {np.max(err / np.maximum(scale, 1e-300)):.3g} for {t.name or t.shape}"


def rand_tensor(rng, shape, name=None):
    return ad.Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


# acceptance reporting: one line per criterion, echoed live and in the summary
ACCEPTANCE = []


@pytest.fixture
def report(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(cid, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {cid}: {detail}"
        ACCEPTANCE.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
