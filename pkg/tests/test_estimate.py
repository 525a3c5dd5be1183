import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smbounds.core import SelectionSample
from smbounds.errors import EmptyCell
from smbounds.estimate import (
    ClampWarning,
    empirical_quantile,
    estimate_covariate_adjusted,
    estimate_known_nosymmetry,
    estimate_known_symmetry,
    estimate_unknown,
    flip_direction,
    moment_residuals,
    trimmed_mean,
)

from oracles import sorted_prefix_mean

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _sample(rng, n=200, p1=0.8, p0=0.5):
    d = rng.integers(0, 2, n)
    s = np.where(d == 1, rng.random(n) < p1, rng.random(n) < p0).astype(int)
    y = rng.normal(size=n) + d
    d[:4], s[:4] = [1, 1, 0, 0], [1, 0, 1, 0]
    return SelectionSample.from_arrays(y, s, d)


@pytest.mark.parametrize("r, expect", [(0.1, 1.0), (0.25, 3.0), (0.5, 5.0), (0.55, 6.0), (1.0, 10.0)])
def test_empirical_quantile_left_inverse(r, expect):
    x = np.arange(1.0, 11.0)
    assert empirical_quantile(x, r) == expect


@given(st.lists(finite, min_size=1, max_size=60), st.floats(0.01, 1.0))
@settings(max_examples=200, deadline=None)
def test_trimmed_mean_matches_sorted_prefix(x, r):
    got = trimmed_mean(x, r, "lower")
    mu, cut = sorted_prefix_mean(x, r)
    assert got.quantile == cut
    assert got.mu == pytest.approx(mu, rel=1e-12, abs=1e-9)


@given(st.lists(finite, min_size=1, max_size=60), st.floats(0.01, 1.0))
@settings(max_examples=100, deadline=None)
def test_upper_trimmed_mean_is_mirror(x, r):
    up = trimmed_mean(x, r, "upper")
    mirrored = trimmed_mean(-np.asarray(x), r, "lower")
    assert up.mu == pytest.approx(-mirrored.mu, rel=1e-12, abs=1e-9)


def test_trimmed_mean_keeps_ties():
    x = [1.0, 2.0, 2.0, 2.0, 5.0]
    tm = trimmed_mean(x, 0.4, "lower")  # ceil(2) -> second order statistic is 2
    assert tm.mu == pytest.approx(7.0 / 4.0)


def test_hand_computed_lee_bounds():
    # treated selected: 1..8 of 10 treated; control: 5 of 10 selected, mean 0
    y = list(range(1, 9)) + [None, None] + [-2, -1, 0, 1, 2] + [None] * 5
    s = [1] * 8 + [0] * 2 + [1] * 5 + [0] * 5
    d = [1] * 10 + [0] * 10
    smp = SelectionSample.from_arrays(np.array([np.nan if v is None else v for v in y]), s, d)
    res = estimate_known_nosymmetry(smp, 1.0)
    # q = .5/.8 = .625; keep ceil(5) = 5 values
    assert res.lower == pytest.approx(3.0)
    assert res.upper == pytest.approx(6.0)
    assert res.trim_fraction == pytest.approx(0.375)
    assert res.method == "lee"


def test_symmetry_estimator_uses_quantiles(mid_sample):
    lo, hi, res = estimate_known_symmetry(mid_sample, 0.95)
    x = np.sort(mid_sample.outcomes(1))
    share = 0.95 * lo.q
    assert lo.beta_L == empirical_quantile(x, share / 2)
    assert hi.beta_L == empirical_quantile(x, 1 - share / 2)
    assert res.lower == pytest.approx(lo.beta_L - lo.eta)


def test_unknown_case_equals_known_when_floor_low(mid_sample):
    g, res = estimate_unknown(mid_sample, 0.95, symmetry=False)
    known = estimate_known_nosymmetry(mid_sample, 0.95)
    assert res.metadata["binding_lower"] == "L"
    assert (res.lower, res.upper) == (known.lower, known.upper)
    g, res = estimate_unknown(mid_sample, 0.95, symmetry=True)
    sym = estimate_known_symmetry(mid_sample, 0.95)[2]
    assert (res.lower, res.upper) == (sym.lower, sym.upper)


def test_unknown_case_floor_binds(mid_sample):
    g, res = estimate_unknown(mid_sample, 0.2, symmetry=False)
    assert res.metadata["binding_lower"] == "F"
    floor = estimate_known_nosymmetry(mid_sample, res.theta_used)
    assert res.lower == pytest.approx(floor.lower, abs=1e-12)


def test_clamp_warning():
    # more control than treated selection: share exceeds one
    y = np.array([1.0, 2.0, np.nan, 0.0, 1.0, 2.0])
    smp = SelectionSample.from_arrays(y, [1, 1, 0, 1, 1, 1], [1, 1, 1, 0, 0, 0])
    with pytest.warns(ClampWarning):
        res = estimate_known_nosymmetry(smp, 1.0)
    assert res.trim_fraction == 0.0
    assert res.warnings


def test_flip_twice_is_identity(mid_sample):
    back = flip_direction(flip_direction(mid_sample))
    assert np.array_equal(back.d, mid_sample.d)
    assert back.flipped == mid_sample.flipped


def test_flip_mirrors_bounds(rng):
    smp = _sample(rng, p1=0.5, p0=0.8)
    flipped = flip_direction(smp)
    res = estimate_known_nosymmetry(flipped, 1.0)
    assert res.metadata["direction"] == "flipped"
    assert res.lower <= res.upper


@given(st.permutations(list(range(40))))
@settings(max_examples=25, deadline=None)
def test_estimates_permutation_invariant(perm):
    smp = _sample(np.random.default_rng(5), n=40)
    idx = np.array(perm)
    other = smp.subset(idx)
    a, b = estimate_known_nosymmetry(smp, 0.9), estimate_known_nosymmetry(other, 0.9)
    assert (a.lower, a.upper) == pytest.approx((b.lower, b.upper), abs=1e-12)


def test_moment_residuals_small_at_estimates(mid_sample):
    lo, _, _ = estimate_known_symmetry(mid_sample, 0.95)
    r = moment_residuals(mid_sample, 0.95, "g", (lo.beta_L, lo.q, lo.alpha, lo.eta))
    # the quantile moment is solved up to one observation's indicator jump
    assert abs(r[0]) <= 1.0 + 1e-9
    assert np.all(np.abs(r[1:]) < 1e-8)


def test_covariate_adjusted_weights(rng):
    a = _sample(rng, n=300)
    w = np.where(np.arange(300) % 2 == 0, "x", "y")
    smp = SelectionSample.from_arrays(a.y, a.s, a.d, w)
    res = estimate_covariate_adjusted(smp, 1.0, symmetry=False)
    cells = res.metadata["cells"]
    assert sum(c["weight"] for c in cells.values()) == pytest.approx(1.0)
    assert res.lower == pytest.approx(sum(c["weight"] * c["lower"] for c in cells.values()))


def test_covariate_empty_cell(rng):
    a = _sample(rng, n=60)
    w = np.array(["x"] * 59 + ["z"])
    smp = SelectionSample.from_arrays(a.y, a.s, a.d, w)
    with pytest.raises(EmptyCell):
        estimate_covariate_adjusted(smp, 1.0)
