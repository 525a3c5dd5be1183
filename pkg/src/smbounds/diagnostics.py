"""Checks on the maintained assumptions: selection plausibility, tail smoothness, sensitivity."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import identify
from .analysis import analyze
from .core import IdentifiedPrimitives, SelectionSample, identified_primitives, make_primitives
from .distributions import Law
from .errors import DegenerateControlSelection, TooFewObservations
from .estimate import empirical_quantile, flip_direction
from .identify import DgpSpec
from .kde import kde, pointwise_band

MIN_KDE_OBS = 30


def theta_plausibility(primitives: IdentifiedPrimitives, theta_L: float) -> float:
    """Implied upper bound on P(S1=1 | S0=0) for a given ``theta_L``."""
    a = primitives.alpha0
    if a >= 1.0:
        raise DegenerateControlSelection("every control unit is selected")
    return (primitives.p_s1_d1 - theta_L * a) / (1.0 - a)


@dataclass(frozen=True)
class FoldReport:
    fold_point: float
    grid: np.ndarray
    density: np.ndarray
    folded: np.ndarray
    violation_measure: float
    bands: Optional[tuple] = None
    side: str = "lower"
    bandwidth: Optional[float] = None
    flagged: bool = False

    def __post_init__(self):
        if self.violation_measure < 0:
            raise ValueError("violation measure is negative")

    def rows(self):
        for i, x in enumerate(self.grid):
            row = {"x": float(x), "density": float(self.density[i]), "folded": float(self.folded[i])}
            if self.bands is not None:
                row["band_lo"], row["band_hi"] = float(self.bands[0][i]), float(self.bands[1][i])
            yield row


def _fold(grid, dens, fold, side):
    folded = dens[::-1].copy()  # grid is symmetric about the fold
    # lower side: left-tail values must not exceed their mirror on the right
    region = grid > fold if side == "lower" else grid < fold
    gap = np.where(region, folded - dens, 0.0)
    return folded, float(max(gap.max(), 0.0)), region


def tail_smoothness_report(obj, fold_side: str = "lower", theta_L: float = 1.0, arm: int = 1,
                           fold_point: Optional[float] = None, kernel: str = "gaussian",
                           bandwidth="silverman", level: float = 0.99, n_grid: int = 201,
                           span: Optional[tuple] = None) -> FoldReport:
    """Fold the outcome density about a trimming quantile and measure violations.

    ``obj`` is a sample (density by KDE), a population specification or a
    :class:`Law` (exact density).  The fold point defaults to the trimming
    quantile at ``theta = max(theta_L, theta_F)``; ``arm=0`` analyses the
    control arm, as when the trimming direction is flipped.
    """
    if fold_side not in ("lower", "upper"):
        raise ValueError("fold_side must be 'lower' or 'upper'")
    if n_grid % 2 == 0:
        n_grid += 1
    if isinstance(obj, SelectionSample):
        smp = obj if arm == 1 else flip_direction(obj)
        x = np.sort(smp.outcomes(1))
        if x.size < MIN_KDE_OBS:
            raise TooFewObservations(f"{x.size} observations in the analysed cell; need {MIN_KDE_OBS}")
        if fold_point is None:
            prim = identified_primitives(smp, theta_L)
            share = min(max(prim.theta * prim.q0, 0.0), 1.0)
            lvl = share / 2 if fold_side == "lower" else 1 - share / 2
            fold_point = empirical_quantile(x, lvl, presorted=True)
        _, h = kde(x, [fold_point], kernel, bandwidth)
        half = max(fold_point - x[0], x[-1] - fold_point) + 3 * h
        grid = fold_point + np.linspace(-half, half, n_grid)
        dens, h = kde(x, grid, kernel, bandwidth)
        bands = pointwise_band(dens, x.size, h, kernel, level)
    else:
        if isinstance(obj, DgpSpec):
            if arm == 1:
                law = identify.treated_law(obj)
            else:
                law = identify.control_law(obj)
            if fold_point is None:
                if arm == 1:
                    prim = identify.population_primitives(obj, theta_L)
                else:
                    # roles of the arms swap when the control arm is trimmed
                    prim = make_primitives(obj.p_s1, obj.p_s0, 1 - obj.p_d1,
                                           identify.treated_law(obj).mean(), theta_L)
                share = min(max(prim.theta * prim.q0, 0.0), 1.0)
                lvl = share / 2 if fold_side == "lower" else 1 - share / 2
                fold_point = law.ppf(lvl)
        elif isinstance(obj, Law):
            law = obj
            if fold_point is None:
                raise ValueError("fold_point is required for a bare law")
        else:
            raise TypeError("expected a sample, a population specification or a law")
        lo, hi = span if span is not None else (law.ppf(1e-6), law.ppf(1 - 1e-6))
        half = max(fold_point - lo, hi - fold_point)
        grid = fold_point + np.linspace(-half, half, n_grid)
        dens = np.asarray(law.pdf(grid), dtype=float)
        h, bands = None, None
    folded, viol, region = _fold(grid, dens, fold_point, fold_side)
    if bands is not None:
        # flagged when the folded curve clears the density's band somewhere
        flo = bands[0][::-1]
        flagged = bool(np.any(region & (flo > bands[1])))
    else:
        flagged = viol > 1e-9 * max(float(dens.max()), 1e-300)
    return FoldReport(float(fold_point), grid, dens, folded, viol, bands, fold_side, h, flagged)


@dataclass(frozen=True)
class SensitivityCurve:
    grid: np.ndarray
    bounds: tuple
    crossing: Optional[float] = None

    def __post_init__(self):
        g = np.asarray(self.grid)
        if np.any(np.diff(g) <= 0) or g[0] <= 0 or g[-1] > 1:
            raise ValueError("sensitivity grid must be strictly increasing within (0, 1]")

    def rows(self):
        for th, b in zip(self.grid, self.bounds):
            yield {
                "theta_L": float(th), "lower": b.lower, "upper": b.upper, "width": b.width,
                "ci_lo": None if b.ci is None else b.ci.lo, "ci_hi": None if b.ci is None else b.ci.hi,
                "method": b.method,
            }


def sensitivity_curve(sample: SelectionSample, grid: Sequence[float], symmetry: bool = False,
                      level: float = 0.95, **kw) -> SensitivityCurve:
    """Estimate and CI at each ``theta_L``; ``crossing`` is the smallest one whose CI excludes 0."""
    g = np.unique(np.asarray(grid, dtype=float))
    res = tuple(analyze(sample, float(t), symmetry, level=level, **kw) for t in g)
    cross = None
    for t, r in zip(g, res):
        if r.ci is not None and (r.ci.lo > 0 or r.ci.hi < 0):
            cross = float(t)
            break
    return SensitivityCurve(g, res, cross)
