"""Sample-analog bound estimators.

All moment systems here are exactly identified, so the GMM minimiser is the
plug-in solution: cell proportions, an order statistic (or trimmed mean) of
the selected treated outcomes, and the selected control mean.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    BoundsResult,
    IdentifiedPrimitives,
    SelectionSample,
    check_theta,
    identified_primitives,
)
from .errors import EmptyCell, EmptyInput, EmptyTrim

# Levels are compared against k/n; products like (k/n)*n may land a few ulps
# above k, which must not push the order statistic to k+1.
_LEVEL_EPS = 1e-9


class ClampWarning(UserWarning):
    """A trimming share fell outside [0, 1] and was clamped."""


@dataclass(frozen=True)
class BetaHat:
    beta_L: float
    q: float
    alpha: float
    eta: float
    level: float = float("nan")


@dataclass(frozen=True)
class GammaHat:
    gamma_L: float
    gamma_F: float
    q: float
    alpha: float
    eta: float
    level_L: float = float("nan")
    level_F: float = float("nan")
    gamma_L_upper: float = float("nan")
    gamma_F_upper: float = float("nan")


@dataclass(frozen=True)
class MuHat:
    mu: float
    quantile: float
    tail: str = "lower"
    count: int = 0

    def __post_init__(self):
        if self.tail == "lower" and self.mu > self.quantile + 1e-12 * max(1.0, abs(self.quantile)):
            raise ValueError("lower trimmed mean above its quantile")
        if self.tail == "upper" and self.mu < self.quantile - 1e-12 * max(1.0, abs(self.quantile)):
            raise ValueError("upper trimmed mean below its quantile")


def _order_index(n: int, r: float) -> int:
    """1-based index of the order statistic ``inf{t : r <= F_n(t)}``."""
    if r <= 0.0:
        return 1
    return min(max(math.ceil(r * n - _LEVEL_EPS), 1), n)


def empirical_quantile(values, r: float, *, presorted: bool = False) -> float:
    """Left-continuous empirical quantile: the ``ceil(r n)``-th order statistic."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise EmptyInput("empirical quantile of an empty sample")
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"probability level {r} outside [0, 1]")
    k = _order_index(x.size, r)
    if presorted:
        return float(x[k - 1])
    return float(np.partition(x, k - 1)[k - 1])


def trimmed_mean(values, r: float, tail: str = "lower", *, presorted: bool = False) -> MuHat:
    """Mean of the observations in the lower (upper) ``r`` tail.

    The lower variant averages every value ``<= empirical_quantile(values, r)``;
    the upper variant is its mirror image, averaging every value at or above
    the ``ceil(r n)``-th largest observation.  Ties at the cut are kept.
    ``r`` is clamped to ``(0, 1]``.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise EmptyInput("trimmed mean of an empty sample")
    if tail not in ("lower", "upper"):
        raise ValueError("tail must be 'lower' or 'upper'")
    if not r > 0.0:
        raise EmptyTrim(f"trimming share {r} leaves no observations")
    r = min(r, 1.0)
    xs = x if presorted else np.sort(x, kind="stable")
    k = _order_index(xs.size, r)
    if tail == "lower":
        cut = xs[k - 1]
        kept = xs[: int(np.searchsorted(xs, cut, side="right"))]
    else:
        cut = xs[xs.size - k]
        kept = xs[int(np.searchsorted(xs, cut, side="left")):]
    if kept.size == 0:
        raise EmptyTrim("no observations survive trimming")
    return MuHat(float(np.mean(kept)), float(cut), tail, int(kept.size))


def flip_direction(sample: SelectionSample) -> SelectionSample:
    """Swap arm labels so trimming happens in the (original) control arm.

    Estimators run on the relabelled data and map the resulting interval for
    ``E[Y0* - Y1*]`` back to the original sign convention, so flipping twice
    is the identity.
    """
    return SelectionSample.from_arrays(
        sample.y, sample.s, 1 - sample.d, sample.w, not sample.flipped, require_cells=False
    )


@dataclass
class _Pieces:
    prim: IdentifiedPrimitives
    treated: np.ndarray  # sorted selected-treated outcomes
    warnings: list = field(default_factory=list)


def _pieces(sample: SelectionSample, theta_L: float) -> _Pieces:
    for d in (1, 0):
        if sample.counts.get((d, 1), 0) == 0:
            raise EmptyCell(d, 1)
    prim = identified_primitives(sample, theta_L)
    return _Pieces(prim, np.sort(sample.outcomes(1), kind="stable"))


def _share(p: _Pieces, theta: float, label: str) -> float:
    raw = theta * p.prim.q0
    if raw > 1.0 or raw < 0.0:
        msg = f"{label} trimming share {raw:.6g} clamped to [0, 1]"
        p.warnings.append(msg)
        warnings.warn(msg, ClampWarning, stacklevel=3)
    return min(max(raw, 0.0), 1.0)


def _orient(sample: SelectionSample, lower: float, upper: float, se_l=None, se_u=None):
    """Map bounds computed on a flipped sample back to the original effect sign."""
    if sample.flipped:
        return -upper, -lower, se_u, se_l
    return lower, upper, se_l, se_u


def _result(sample, p, lower, upper, method, theta, share, **meta):
    lower, upper, _, _ = _orient(sample, lower, upper)
    meta.setdefault("theta_F_hat", p.prim.theta_F)
    meta.setdefault("q_hat", p.prim.q0)
    meta.setdefault("alpha_hat", p.prim.alpha0)
    meta.setdefault("eta_hat", p.prim.eta0)
    meta["direction"] = "flipped" if sample.flipped else "standard"
    return BoundsResult(
        lower=float(lower), upper=float(upper), method=method, theta_used=float(theta),
        trim_fraction=float(1.0 - share), n=sample.n, warnings=tuple(p.warnings), metadata=meta,
    )


def estimate_known_symmetry(sample: SelectionSample, theta_L: float):
    """Quantile bounds when ``theta_L >= theta_F`` is maintained.

    Returns ``(lower parts, upper parts, BoundsResult)``.
    """
    theta_L = check_theta(theta_L)
    p = _pieces(sample, theta_L)
    if theta_L < p.prim.theta_F:
        p.warnings.append(f"theta_L={theta_L} is below the estimated Frechet floor {p.prim.theta_F:.6g}")
    share = _share(p, theta_L, "symmetry")
    lvl_lo, lvl_hi = share / 2.0, 1.0 - share / 2.0
    b_lo = empirical_quantile(p.treated, lvl_lo, presorted=True)
    b_hi = empirical_quantile(p.treated, lvl_hi, presorted=True)
    pr = p.prim
    lower_parts = BetaHat(b_lo, pr.q0, pr.alpha0, pr.eta0, lvl_lo)
    upper_parts = BetaHat(b_hi, pr.q0, pr.alpha0, pr.eta0, lvl_hi)
    res = _result(
        sample, p, b_lo - pr.eta0, b_hi - pr.eta0, "stochastic_symmetry", theta_L, share,
        levels=(lvl_lo, lvl_hi), quantiles=(b_lo, b_hi), case="known",
    )
    return lower_parts, upper_parts, res


def estimate_known_nosymmetry(sample: SelectionSample, theta_L: float) -> BoundsResult:
    """Trimmed-mean bounds when ``theta_L >= theta_F`` is maintained."""
    theta_L = check_theta(theta_L)
    p = _pieces(sample, theta_L)
    if theta_L < p.prim.theta_F:
        p.warnings.append(f"theta_L={theta_L} is below the estimated Frechet floor {p.prim.theta_F:.6g}")
    share = _share(p, theta_L, "trimming")
    lo = trimmed_mean(p.treated, share, "lower", presorted=True)
    hi = trimmed_mean(p.treated, share, "upper", presorted=True)
    eta = p.prim.eta0
    return _result(
        sample, p, lo.mu - eta, hi.mu - eta, "lee" if theta_L == 1.0 else "stochastic", theta_L, share,
        quantiles=(lo.quantile, hi.quantile), trimmed_means=(lo.mu, hi.mu), case="known",
    )


def estimate_unknown(sample: SelectionSample, theta_L: float, symmetry: bool = True):
    """Bounds when it is unknown whether ``theta_L`` or the Frechet floor binds.

    Both candidate trimming levels are estimated; the lower bound takes the
    larger candidate and the upper bound the smaller one.
    Returns ``(GammaHat, BoundsResult)``.
    """
    theta_L = check_theta(theta_L)
    p = _pieces(sample, theta_L)
    pr = p.prim
    share_L = _share(p, theta_L, "theta_L branch")
    raw_F = pr.theta_F * pr.q0  # = 1 + q (1 - 1/alpha)
    share_F = min(max(raw_F, 0.0), 1.0)
    if raw_F > 1.0:
        p.warnings.append(f"Frechet branch share {raw_F:.6g} clamped to 1")
    eta = pr.eta0
    if symmetry:
        gL = empirical_quantile(p.treated, share_L / 2, presorted=True)
        gF = empirical_quantile(p.treated, share_F / 2, presorted=True)
        gLu = empirical_quantile(p.treated, 1 - share_L / 2, presorted=True)
        gFu = empirical_quantile(p.treated, 1 - share_F / 2, presorted=True)
        gamma = GammaHat(gL, gF, pr.q0, pr.alpha0, eta, share_L / 2, share_F / 2, gLu, gFu)
        method = "unknown_max"
    else:
        mL = trimmed_mean(p.treated, share_L, "lower", presorted=True)
        mLu = trimmed_mean(p.treated, share_L, "upper", presorted=True)
        if share_F > 0:
            mF = trimmed_mean(p.treated, share_F, "lower", presorted=True).mu
            mFu = trimmed_mean(p.treated, share_F, "upper", presorted=True).mu
        else:
            # an empty Frechet trim is uninformative and never binds
            mF, mFu = -math.inf, math.inf
        gL, gF, gLu, gFu = mL.mu, mF, mLu.mu, mFu
        gamma = GammaHat(gL, gF, pr.q0, pr.alpha0, eta, share_L, share_F, gLu, gFu)
        method = "unknown_max"
    binding = "L" if gL >= gF else "F"
    lower = max(gL, gF) - eta
    upper = min(gLu, gFu) - eta
    theta = max(theta_L, pr.theta_F)
    res = _result(
        sample, p, lower, upper, method, theta, max(share_L, share_F),
        case="unknown", symmetry=bool(symmetry), binding_lower=binding,
        binding_upper="L" if gLu <= gFu else "F",
        branches={"L": (gL - eta, gLu - eta), "F": (gF - eta, gFu - eta)},
        upper_rule="min over branch upper analogs (mirror of the lower max)",
    )
    return gamma, res


def _estimate(sample, theta_L, symmetry, case):
    if case == "known":
        if symmetry:
            return estimate_known_symmetry(sample, theta_L)[2]
        return estimate_known_nosymmetry(sample, theta_L)
    if case == "unknown":
        return estimate_unknown(sample, theta_L, symmetry)[1]
    raise ValueError(f"case must be 'known' or 'unknown', got {case!r}")


def estimate_covariate_adjusted(
    sample: SelectionSample, theta_L: float, symmetry: bool = True, case: str = "known"
) -> BoundsResult:
    """Cellwise bounds averaged with weights P(W = w | S = 1, D = 0)."""
    if sample.w is None:
        raise EmptyInput("covariate adjustment needs a covariate column")
    cells = sorted(set(sample.w.tolist()), key=str)
    ctrl_sel = (sample.d == 0) & (sample.s == 1)
    n_ctrl = int(ctrl_sel.sum())
    if n_ctrl == 0:
        raise EmptyCell(0, 1)
    lower = upper = trim = 0.0
    per_cell = {}
    warns = []
    for cell in cells:
        m = sample.w == cell
        for d in (1, 0):
            if not np.any(m & (sample.d == d) & (sample.s == 1)):
                raise EmptyCell(d, 1, cell)
        sub = sample.subset(m)
        res = _estimate(sub, theta_L, symmetry, case)
        weight = float(np.sum(m & ctrl_sel)) / n_ctrl
        lower += weight * res.lower
        upper += weight * res.upper
        trim += weight * res.trim_fraction
        per_cell[str(cell)] = {"weight": weight, "lower": res.lower, "upper": res.upper, "n": sub.n}
        warns.extend(f"cell {cell}: {w}" for w in res.warnings)
    return BoundsResult(
        lower=float(lower), upper=float(upper), method="covariate_adjusted",
        theta_used=check_theta(theta_L), trim_fraction=float(min(max(trim, 0.0), 1.0)),
        n=sample.n, warnings=tuple(warns),
        metadata={"cells": per_cell, "symmetry": bool(symmetry), "case": case,
                  "direction": "flipped" if sample.flipped else "standard"},
    )


def moment_residuals(sample: SelectionSample, theta_L: float, system: str, estimates) -> np.ndarray:
    """Sample sums of a moment system evaluated at given parameter values.

    ``system`` is one of ``g``, ``g_tilde``, ``h``, ``h_tilde``; ``estimates``
    is the matching parameter tuple: ``(beta, q, alpha, eta)``,
    ``(gamma_L, gamma_F, q, alpha, eta)``, ``(mu, beta, q, alpha, eta)`` or
    ``(mu_L, mu_F, gamma_L, gamma_F, q, alpha, eta)``.
    """
    y = np.where(sample.s == 1, sample.y, 0.0)
    S = sample.s.astype(float)
    D = sample.d.astype(float)
    SD = S * D
    th = theta_L

    def common(q, alpha, eta):
        return [np.sum((q * S - alpha) * D), np.sum((S - alpha) * (1 - D)), np.sum((y - eta) * S * (1 - D))]

    if system == "g":
        b, q, a, e = estimates
        return np.array([np.sum(((y > b) - (1 - th * q / 2)) * SD), *common(q, a, e)])
    if system == "g_tilde":
        gL, gF, q, a, e = estimates
        return np.array([
            np.sum(((y > gL) - (1 - th * q / 2)) * SD),
            np.sum(((y > gF) - (1 - (1 + q * (1 - 1 / a)) / 2)) * SD),
            *common(q, a, e),
        ])
    if system == "h":
        mu, b, q, a, e = estimates
        return np.array([
            np.sum((y - mu) * SD * (y <= b)),
            np.sum(((y > b) - (1 - th * q)) * SD),
            *common(q, a, e),
        ])
    if system == "h_tilde":
        mL, mF, gL, gF, q, a, e = estimates
        return np.array([
            np.sum((y - mL) * SD * (y <= gL)),
            np.sum((y - mF) * SD * (y <= gF)),
            np.sum(((y > gL) - (1 - th * q)) * SD),
            # Frechet-branch trimming proportion read as theta_F q = 1 + q (1 - 1/alpha)
            np.sum(((y > gF) - (1 - (1 + q * (1 - 1 / a)))) * SD),
            *common(q, a, e),
        ])
    raise ValueError(f"unknown moment system {system!r}")
