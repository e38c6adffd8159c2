from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from esgrl.marketdata import SynthAsset, SynthSpec, synth_market

TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))

# acceptance criteria append (number, title, passed, detail) here
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")


@pytest.fixture
def small_spec() -> SynthSpec:
    return SynthSpec((
        SynthAsset("AAA", 0.0006, 0.012, (7.0, 8.0, 6.0)),
        SynthAsset("BBB", 0.0003, 0.010, (3.0, 4.0, 2.0)),
        SynthAsset("CCC", 0.0004, 0.015, (5.0, 6.0, 5.0)),
    ), correlation=0.5)


@pytest.fixture
def small_ds(small_spec):
    return synth_market(small_spec, 160, seed=4)


def write_csv(path: Path, header: str, rows: list[str]) -> Path:
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
