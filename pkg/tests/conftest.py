import itertools

import numpy as np
import pytest

from rsmp.instances import Instance, sample_promised, stream

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _pad(core, start, n):
    """Extend ``core`` to n elements with fresh integers from ``start``."""
    out = list(core)
    nxt = start
    while len(out) < n:
        out.append(nxt)
        nxt += 1
    return out, nxt


@pytest.fixture
def two_cell_instance():
    """n=4 instance whose only non-empty cell is cell(1, 1) = {5, 9}."""
    n = 4
    x, y, fresh = [], [], 20
    row, fresh = _pad([5, 9], fresh, n)
    x.append(row)
    for _ in range(n - 1):
        row, fresh = _pad([], fresh, n)
        x.append(row)
    col, fresh = _pad([5, 9], fresh, n)
    y.append(col)
    for _ in range(n - 1):
        col, fresh = _pad([], fresh, n)
        y.append(col)
    return Instance.from_sets(n, x, y)


@pytest.fixture
def mixed_instance():
    """n=4: cell(1,1) = {5, 9} (size 2), cell(2,2) = {1, 2, 3} (size 3), the rest empty."""
    n = 4
    x = [[5, 9, 20, 21], [1, 2, 3, 22], [23, 24, 25, 26], [27, 28, 29, 30]]
    y = [[5, 9, 40, 41], [1, 2, 3, 42], [43, 44, 45, 46], [47, 48, 49, 50]]
    return Instance.from_sets(n, x, y)


@pytest.fixture(scope="session")
def promised4():
    return [sample_promised(4, stream(101, k)) for k in range(3)]


@pytest.fixture(scope="session")
def promised64():
    return sample_promised(64, stream(2024, 0))


def brute_cells(inst):
    """(i, j) -> set, 1-based, straight from Python sets."""
    return {(i + 1, j + 1): set(inst.x[i]) & set(inst.y[j])
            for i in range(inst.n) for j in range(inst.n)}


def brute_check_pnn(inst, triples):
    """Independent transcription of the relation for test oracles."""
    if triples is None:
        return False
    n = inst.n
    tn = int(np.floor(np.log2(np.log2(n))))
    cells = brute_cells(inst)
    pairs = [(i, j) for i, j, _ in triples]
    for a, b in itertools.combinations(range(len(pairs)), 2):
        if pairs[a] == pairs[b]:
            return False
    for i, j, c in triples:
        cell = cells[(i, j)]
        if len(cell) == 2:
            a, b = sorted(cell)
            if c == 0 or bin(c & (a ^ b)).count("1") % 2:
                return False
    hits = sum(len(cells[(i, j)]) == 2 for i, j, _ in triples)
    total_two = sum(len(c) == 2 for c in cells.values())
    return hits >= tn / 66 or total_two < n * n / 65
