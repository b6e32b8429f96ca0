"""Every acceptance criterion at its stated tolerance, one line each.

The lines are printed as the test runs and again in the terminal summary.
"""
import io

import pytest

from sdfn import lrg, verify

FAST = [n for n, _, _, slow in verify.CRITERIA if not slow]
SLOW = [n for n, _, _, slow in verify.CRITERIA if slow]


def _check(number, log):
    result = verify.run_criterion(number)
    log.append(result)
    print(result.line())
    assert result.passed, result.line()


@pytest.mark.parametrize("number", FAST)
def test_criterion(number, acceptance_log):
    _check(number, acceptance_log)


@pytest.mark.slow
@pytest.mark.parametrize("number", SLOW)
def test_slow_criterion(number, acceptance_log):
    _check(number, acceptance_log)


def test_margin_mutation_fails_only_the_lrg_criterion(monkeypatch):
    monkeypatch.setattr(lrg, "DEFAULT_MARGINS", (16, 15, 15, 20))
    out = io.StringIO()
    ok = verify.run_suite(quick=True, stream=out)
    lines = out.getvalue().splitlines()
    failed = [line for line in lines if line.startswith("FAIL")]
    assert not ok
    assert len(failed) == 1 and "[ 2]" in failed[0], out.getvalue()
