"""Checked-in traces for three canonical scenarios.

Regenerate after an intentional behaviour change with::

    python3 tests/test_golden.py
"""

import sys
from pathlib import Path

import pytest

from geobft.harness import metrics_of
from geobft.sim import Simulator, load_scenario

ROOT = Path(__file__).resolve().parent.parent
GOLDEN = Path(__file__).resolve().parent / "golden"
CANONICAL = ("basic_z2_n4", "withhold_z2_n4", "crash_z3_n7")


def render(name: str) -> str:
    sc = load_scenario(ROOT / "scenarios" / f"{name}.ini")
    result = Simulator(sc, trace=True).run()
    return "\n".join(result.trace + [metrics_of(result).record()]) + "\n"


@pytest.mark.parametrize("name", CANONICAL)
def test_matches_golden_trace(name):
    expected = (GOLDEN / f"{name}.trace").read_text()
    actual = render(name)
    if actual != expected:
        for i, (a, b) in enumerate(zip(actual.splitlines(), expected.splitlines())):
            if a != b:
                pytest.fail(f"first difference at line {i + 1}:\n  got      {a}\n  expected {b}")
        pytest.fail("trace length differs")


if __name__ == "__main__":
    GOLDEN.mkdir(exist_ok=True)
    for name in CANONICAL:
        (GOLDEN / f"{name}.trace").write_text(render(name))
        print(f"wrote {name}", file=sys.stderr)
