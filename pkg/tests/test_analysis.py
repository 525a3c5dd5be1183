import numpy as np
import pytest

from smbounds.analysis import analyze, select_case
from smbounds.core import SelectionSample
from smbounds.estimate import estimate_known_nosymmetry, flip_direction


def test_auto_selects_known(mid_sample):
    assert select_case(mid_sample, 0.95) == "known"
    assert select_case(mid_sample, 0.5) == "unknown"
    res = analyze(mid_sample, 0.95)
    assert res.metadata["case"] == "known"
    assert res.ci.method == "imbens_manski"
    assert res.ci.lo <= res.lower <= res.upper <= res.ci.hi


@pytest.mark.parametrize("sym", [False, True])
def test_unknown_case_gaussian_max(mid_sample, sym):
    res = analyze(mid_sample, 0.5, symmetry=sym, draws=20_000)
    assert res.metadata["case"] == "unknown"
    assert res.ci.method == "gaussian_max"
    assert res.ci.lo <= res.lower and res.ci.hi >= res.upper


def test_forced_unknown_sandwich_close_to_known(mid_sample):
    known = analyze(mid_sample, 0.95, symmetry=True, case="known")
    unk = analyze(mid_sample, 0.95, symmetry=True, case="unknown", draws=20_000)
    assert unk.ci.metadata["covariance"] == "sandwich"
    assert unk.se_lower == pytest.approx(known.se_lower, rel=1e-6)


def test_flipped_analysis_mirrors(mid_sample):
    swapped = SelectionSample.from_arrays(-mid_sample.y, mid_sample.s, 1 - mid_sample.d)
    a = analyze(flip_direction(swapped), 1.0)
    b = analyze(mid_sample, 1.0)
    # flipping the relabelled sample recovers the original arms with negated outcomes
    assert a.metadata["direction"] == "flipped"
    assert (a.lower, a.upper) == pytest.approx((b.lower, b.upper), abs=1e-12)
    assert (a.ci.lo, a.ci.hi) == pytest.approx((b.ci.lo, b.ci.hi), abs=1e-12)


def test_bootstrap_branch(mid_sample):
    res = analyze(mid_sample, 1.0, bootstrap=200, seed=2)
    assert res.ci.method == "bootstrap"
    assert res.se_lower > 0


def test_bad_case(mid_sample):
    with pytest.raises(ValueError):
        analyze(mid_sample, 1.0, case="maybe")
