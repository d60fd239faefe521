import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    yield


def central_difference_grad(fn, x, h=1e-5):
    """Gradient of scalar ``fn`` at float64 tensor ``x`` by central differences."""
    x = x.detach().clone()
    flat = x.view(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(fn(x))
            flat[i] = orig - h
            down = float(fn(x))
            flat[i] = orig
            grad[i] = (up - down) / (2 * h)
    return grad.view_as(x)


def autograd_grad(fn, x):
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.detach()


def rel_error(a, b):
    return float((a - b).norm() / max(a.norm(), b.norm(), 1e-12))


ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail=""):
    """Print and remember one pass/fail line; the assertion is left to the caller."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
