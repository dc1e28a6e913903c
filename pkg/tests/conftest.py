import numpy as np
import pytest

from snic import tensor as T


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn`` at ``x`` (float64)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn(x)
        flat[i] = old - eps
        lo = fn(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30))


def check_grad(build, *arrays, eps=1e-6):
    """Compare autodiff against central differences for every input array.

    ``build(*tensors)`` returns a scalar Tensor.  Returns the worst relative
    error over inputs.
    """
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    worst = 0.0
    for i, a in enumerate(arrays):
        def f(v, i=i):
            args = [T.Tensor(b) for b in arrays]
            args[i] = T.Tensor(v)
            with T.no_grad():
                return float(build(*args).data)
        num = numeric_grad(f, a.copy(), eps)
        worst = max(worst, rel_err(tensors[i].grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
