"""Exit criteria; one PASS/FAIL line per criterion is printed after the run."""

import pytest

from tokenkf.acceptance import CRITERIA

RESULTS = []


@pytest.mark.parametrize("key, title, run", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(key, title, run):
    result = run()
    RESULTS.append(result)
    print(result.line())
    assert result.passed, result.line()
