"""One-call estimation: bounds, standard errors and a confidence interval."""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

import numpy as np

from .core import BoundsResult, CiResult, SelectionSample, check_theta, identified_primitives
from .estimate import (
    estimate_covariate_adjusted,
    estimate_known_nosymmetry,
    estimate_known_symmetry,
    estimate_unknown,
)
from .inference import (
    bootstrap_ci,
    branch_influence,
    gamma_covariance,
    imbens_manski_ci,
    intersection_ci,
    variance_nosymmetry,
    variance_symmetry,
)
from .kde import kde

# Known-case fast path requires theta_L to clear the estimated floor by this much.
CASE_MARGIN = 0.01


def select_case(sample: SelectionSample, theta_L: float, margin: float = CASE_MARGIN) -> str:
    prim = identified_primitives(sample, theta_L)
    return "known" if theta_L >= prim.theta_F + margin else "unknown"


def _unflipped(sample):
    if not sample.flipped:
        return sample
    return SelectionSample.from_arrays(sample.y, sample.s, sample.d, sample.w, False, require_cells=False)


def _mirror(res: BoundsResult) -> BoundsResult:
    ci = res.ci
    if ci is not None:
        meta = dict(ci.metadata)
        ci = replace(ci, lo=-ci.hi, hi=-ci.lo, metadata=meta)
    meta = dict(res.metadata)
    meta["direction"] = "flipped"
    return replace(res, lower=-res.upper, upper=-res.lower, se_lower=res.se_upper,
                   se_upper=res.se_lower, ci=ci, metadata=meta)


def _point(sample, theta_L, symmetry, case, covariate):
    if covariate:
        return estimate_covariate_adjusted(sample, theta_L, symmetry, case)
    if case == "known":
        if symmetry:
            return estimate_known_symmetry(sample, theta_L)[2]
        return estimate_known_nosymmetry(sample, theta_L)
    return estimate_unknown(sample, theta_L, symmetry)[1]


def _known_ci(sample, res, theta_L, symmetry, level, kernel, bandwidth):
    prim = identified_primitives(sample, theta_L)
    if symmetry:
        vc = variance_symmetry(sample, prim, theta=theta_L, kernel=kernel, bandwidth=bandwidth)
    else:
        vc = variance_nosymmetry(sample, prim, theta=theta_L)
    n = sample.n
    ci = imbens_manski_ci(res.lower, res.upper, math.sqrt(vc.omega_L + vc.omega_C),
                          math.sqrt(vc.omega_U + vc.omega_C), n, level)
    return vc.se_lower, vc.se_upper, ci


def _unknown_ci(sample, res, theta_L, symmetry, level, kernel, bandwidth, draws, seed):
    prim = identified_primitives(sample, theta_L)
    gamma, _ = estimate_unknown(sample, theta_L, symmetry)
    n = sample.n
    shares_ok = 0 < gamma.level_F and gamma.level_F * (2 if symmetry else 1) < 1 and gamma.level_L > 0
    if symmetry and shares_ok:
        x = sample.outcomes(1)
        dens_lo, _ = kde(x, [gamma.gamma_L, gamma.gamma_F], kernel, bandwidth)
        dens_hi, _ = kde(x, [gamma.gamma_L_upper, gamma.gamma_F_upper], kernel, bandwidth)
        cov_lo = gamma_covariance(sample, prim, dens_lo, "lower").branch_cov() / n
        cov_hi = gamma_covariance(sample, prim, dens_hi, "upper").branch_cov() / n
        est_lo = np.array([gamma.gamma_L, gamma.gamma_F]) - gamma.eta
        est_hi = np.array([gamma.gamma_L_upper, gamma.gamma_F_upper]) - gamma.eta
        names = ["L", "F"]
        cov_source = "sandwich"
    else:
        names, est_lo, IF = branch_influence(sample, theta_L, symmetry, "lower", kernel, bandwidth)
        _, est_hi, IFu = branch_influence(sample, theta_L, symmetry, "upper", kernel, bandwidth)
        cov_lo, cov_hi = IF.T @ IF / n**2, IFu.T @ IFu / n**2
        cov_source = "influence"
    ci = intersection_ci(est_lo, cov_lo, est_hi, cov_hi, n, level, draws, seed, tuple(names))
    meta = dict(ci.metadata)
    meta["covariance"] = cov_source
    ci = replace(ci, metadata=meta)
    se_lo = math.sqrt(cov_lo[int(np.argmax(est_lo)), int(np.argmax(est_lo))])
    se_hi = math.sqrt(cov_hi[int(np.argmin(est_hi)), int(np.argmin(est_hi))])
    return se_lo, se_hi, ci


def analyze(sample: SelectionSample, theta_L: float = 1.0, symmetry: bool = False, case: str = "auto",
            level: float = 0.95, bootstrap: int = 0, seed: int = 0, kernel: str = "gaussian",
            bandwidth="silverman", draws: int = 100_000, covariate: bool = False,
            workers: Optional[int] = None, margin: float = CASE_MARGIN) -> BoundsResult:
    """Estimate bounds and attach standard errors and a confidence interval.

    ``case="auto"`` uses the known-case estimator when ``theta_L`` exceeds the
    estimated Frechet floor by ``margin`` and the unknown-case estimator
    otherwise.  Known-case intervals are Imbens-Manski intervals for the
    effect; unknown-case intervals are Gaussian-max intervals for the
    identified region.  ``bootstrap > 0`` (required with covariates)
    replaces both by the bootstrap interval.
    """
    theta_L = check_theta(theta_L)
    if sample.flipped:
        return _mirror(analyze(_unflipped(sample), theta_L, symmetry, case, level, bootstrap, seed,
                               kernel, bandwidth, draws, covariate, workers, margin))
    chosen = select_case(sample, theta_L, margin) if case == "auto" else case
    if chosen not in ("known", "unknown"):
        raise ValueError(f"case must be auto, known or unknown, got {case!r}")
    res = _point(sample, theta_L, symmetry, chosen, covariate)
    meta = dict(res.metadata)
    meta.update(case=chosen, case_selection="auto" if case == "auto" else "forced", case_margin=margin,
                symmetry=bool(symmetry), bandwidth_rule=str(bandwidth), kernel=kernel)
    if covariate or bootstrap:
        B = bootstrap or 999
        ci = bootstrap_ci(sample, lambda smp: _point(smp, theta_L, symmetry, chosen, covariate),
                          level, B, seed, workers)
        se_lo, se_hi = ci.metadata["se_lower"], ci.metadata["se_upper"]
    elif chosen == "known":
        se_lo, se_hi, ci = _known_ci(sample, res, theta_L, symmetry, level, kernel, bandwidth)
    else:
        se_lo, se_hi, ci = _unknown_ci(sample, res, theta_L, symmetry, level, kernel, bandwidth, draws, seed)
    return res.replace(se_lower=float(se_lo), se_upper=float(se_hi), ci=ci, metadata=meta)
