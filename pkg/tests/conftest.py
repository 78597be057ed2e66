import time

import numpy as np
import pytest

from cluster_laser.tensor_store import MatrixRecord, ModelBundle


def orthonormal(rng, n, k):
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return Q


def separated_matrix(rng, m, n, gap=0.1):
    """Random m x n matrix whose singular values are at least ``gap`` apart."""
    r = min(m, n)
    sigma = np.sort(rng.uniform(0.5, 1.5, r) + gap * np.arange(r))[::-1]
    return orthonormal(rng, m, r) @ np.diag(sigma) @ orthonormal(rng, n, r).T


def constructed_pair(rng, m, n, d):
    """(W, G) with thin-SVD factors U, V such that diag(U^T G V) = d."""
    r = len(d)
    U, V = orthonormal(rng, m, r), orthonormal(rng, n, r)
    sigma = np.linspace(2.0, 1.0, r)
    return U @ np.diag(sigma) @ V.T, U @ np.diag(d) @ V.T


def bundle_of(pairs, name="b"):
    """Bundle from ``{(layer, kind): (W, G)}``."""
    records = []
    for (layer, kind), (W, G) in pairs.items():
        records.append(MatrixRecord(f"L{layer}.{kind}", layer, kind, "weight", W))
        if G is not None:
            records.append(MatrixRecord(f"L{layer}.{kind}.grad", layer, kind, "gradient", G))
    return ModelBundle(name, 1 + max(layer for layer, _ in pairs), records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


class Criterion:
    """Times a block of acceptance checks and records one PASS/FAIL line."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        slow = elapsed >= self.budget
        ok = exc_type is None and not slow
        note = self.detail if exc is None else str(exc).splitlines()[0]
        if slow:
            note = f"over runtime budget; {note}"
        line = f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'} [{elapsed:.2f}s / {self.budget:g}s] {self.title}"
        ACCEPTANCE.append(line + (f": {note}" if note else ""))
        print(ACCEPTANCE[-1])
        if exc_type is None and slow:
            raise AssertionError(f"criterion {self.number} took {elapsed:.2f}s, budget {self.budget:g}s")
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
