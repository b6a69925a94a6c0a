"""Acceptance suite: one test (and one printed pass/fail line) per criterion.

Criteria 1-9 call the shared runners directly; criterion 10 additionally
exercises the CLI end to end, comparing the emitted data files byte for
byte across repeat runs and across thread counts.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from ionlab import acceptance

SEED = 42

_IDS = [
    "01-detection-model-error",
    "02-monte-carlo-model-agreement",
    "03-fidelity-headline",
    "04-efficiency-arithmetic",
    "05-dark-pmf-normalization",
    "06-coherence-analytics",
    "07-decoupling-ordering",
    "08-gradient-arithmetic",
    "09-vibration-pipeline",
    "10-determinism",
]


@pytest.mark.parametrize("runner", acceptance.CRITERIA, ids=_IDS)
def test_criterion(runner):
    result, _, _ = runner(SEED, threads=1)
    print(acceptance.format_table([result]))
    assert result.passed, (
        f"criterion {result.number} ({result.name}) failed: "
        f"measured {result.measured}, expected {result.expected}"
    )


def _reproduce(out_dir: Path, *extra: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "ionlab.cli", "reproduce", "--seed", str(SEED),
         "--out", str(out_dir), *extra],
        capture_output=True,
        text=True,
    )


def _data_files(out_dir: Path) -> dict:
    skip = {"acceptance_report.json"}  # holds wall-clock runtimes
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.suffix != ".png" and p.name not in skip
    }


class TestCriterion10EndToEnd:
    def test_reproduce_twice_is_byte_identical(self, tmp_path):
        first = _reproduce(tmp_path / "a")
        second = _reproduce(tmp_path / "b")
        assert first.returncode == 0, first.stdout + first.stderr
        assert second.returncode == 0, second.stdout + second.stderr
        a, b = _data_files(tmp_path / "a"), _data_files(tmp_path / "b")
        assert list(a) == list(b)
        for name in a:
            assert a[name] == b[name], f"{name} differs between identical runs"
        print("[PASS] 10 reproduce --seed 42 twice: data files byte-identical")

        threaded = _reproduce(tmp_path / "c", "--threads", "8")
        assert threaded.returncode == 0, threaded.stdout + threaded.stderr
        c = _data_files(tmp_path / "c")
        assert list(a) == list(c)
        for name in a:
            assert a[name] == c[name], f"{name} differs between serial and 8 threads"
        print("[PASS] 10 reproduce --threads 8: matches serial output")

    def test_report_lists_every_criterion_once(self, tmp_path):
        run = _reproduce(tmp_path / "r")
        assert run.returncode == 0
        report = json.loads((tmp_path / "r" / "acceptance_report.json").read_text())
        numbers = [c["number"] for c in report["criteria"]]
        assert numbers == list(range(1, 11))
        assert report["all_passed"] is True

    def test_adversarial_tolerance_scale_fails(self, tmp_path):
        run = _reproduce(tmp_path / "zero", "--tolerance-scale", "0")
        assert run.returncode == 1
        report_path = tmp_path / "zero" / "acceptance_report.json"
        assert report_path.exists(), "report must be written even on failure"
        report = json.loads(report_path.read_text())
        assert report["all_passed"] is False
        assert any(not c["passed"] for c in report["criteria"])
        assert [c["number"] for c in report["criteria"]] == list(range(1, 11))
