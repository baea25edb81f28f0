import numpy as np
import pytest

from ddse.linalg import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def triple_loop_matmul(a, b):
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def sparse_atoms(rng, n, m, s):
    """Random n x m matrix with s nonzeros (random values) per column."""
    out = np.zeros((n, m))
    for col in range(m):
        rows = rng.choice(n, size=s, replace=False)
        out[rows, col] = rng.standard_normal(s)
    return out


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail=""):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
