import numpy as np
import pytest
from hypothesis import settings

from gfbgcn.synth import synth_corpus
from gfbgcn.textgraph import build_graph

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth_graph():
    """The standard desk-scale fixture: 200 docs, 2 classes, 150 words, noise 0.3, seed 7."""
    return build_graph(synth_corpus(200, 2, 150, 0.3, 7))


def dense_matmul(A, B):
    """Naive triple loop, the reference for sparse products."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = A.shape
    p = B.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += A[i, k] * B[k, j]
            out[i, j] = s
    return out


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {name}: {detail}")
