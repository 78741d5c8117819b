from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")

DATA = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(scope="session")
def mutag_dir():
    return DATA / "MUTAG"


@pytest.fixture(scope="session")
def cuneiform_dir():
    return DATA / "Cuneiform"


def write_tud(directory: Path, name: str, edges, indicator, graph_labels,
              node_labels=None, node_attributes=None):
    """Write a TUD directory from 1-based edges / indicator lists."""
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text("".join(f"{u}, {v}\n" for u, v in edges))
    (directory / f"{name}_graph_indicator.txt").write_text("".join(f"{g}\n" for g in indicator))
    (directory / f"{name}_graph_labels.txt").write_text("".join(f"{y}\n" for y in graph_labels))
    if node_labels is not None:
        rows = [row if isinstance(row, (list, tuple)) else [row] for row in node_labels]
        (directory / f"{name}_node_labels.txt").write_text(
            "".join(", ".join(map(str, r)) + "\n" for r in rows))
    if node_attributes is not None:
        (directory / f"{name}_node_attributes.txt").write_text(
            "".join(", ".join(repr(float(v)) for v in row) + "\n" for row in node_attributes))
    return directory


@pytest.fixture
def tud_writer():
    return write_tud


def separable_dataset_dir(directory: Path, per_class: int = 10, seed: int = 0,
                          gap: float = 3.5) -> Path:
    """Two classes of small graphs whose node attributes sit around mirrored centres."""
    rng = np.random.default_rng(seed)
    edges, indicator, labels, attrs = [], [], [], []
    node = 0
    for g in range(2 * per_class):
        cls = g % 2
        n = int(rng.integers(3, 7))
        for i in range(n):
            indicator.append(g + 1)
            center = np.array([gap, -gap]) / 2 * (1 if cls else -1)
            attrs.append(center + 0.1 * rng.standard_normal(2))
        for i in range(n - 1):
            edges += [(node + i + 1, node + i + 2), (node + i + 2, node + i + 1)]
        node += n
        labels.append(cls)
    return write_tud(directory, directory.name, edges, indicator, labels, node_attributes=attrs)


@pytest.fixture
def separable_dir(tmp_path):
    return separable_dataset_dir(tmp_path / "SEP")


ACCEPTANCE_LINES: list = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
