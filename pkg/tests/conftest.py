from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def write_corpus(root: Path, per_class: int, size: int = 50, seed: int = 0,
                 colors=((110, 60, 140), (210, 130, 170)), noise: float = 20.0) -> Path:
    """Two-class PNG corpus; class 1 is brighter than class 0."""
    rng = np.random.default_rng(seed)
    for label, base in enumerate(colors):
        d = Path(root) / str(label)
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            pix = np.clip(np.array(base) + rng.normal(0, noise, (size, size, 3)), 0, 255)
            Image.fromarray(pix.astype(np.uint8), mode="RGB").save(d / f"img_{i:05d}.png")
    return Path(root)


@pytest.fixture
def corpus_factory(tmp_path):
    def make(name="corpus", per_class=10, **kwargs):
        return write_corpus(tmp_path / name, per_class, **kwargs)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
