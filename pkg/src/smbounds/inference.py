"""Asymptotic variances, sandwich covariances and confidence intervals.

Conventions: ``omega_*`` values and ``Omega`` matrices are asymptotic
variances of ``sqrt(n) (estimate - truth)``.  Standard errors of the
estimates themselves are ``sqrt(omega / n)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .core import BoundsResult, CiResult, IdentifiedPrimitives, SelectionSample, identified_primitives
from .errors import (
    BoundsError,
    DataError,
    NumericalError,
    RootBracketFailure,
    SingularMatrix,
    ZeroDensity,
)
from .estimate import GammaHat, empirical_quantile, trimmed_mean
from .kde import kde

__all__ = [
    "VarianceComponents", "TrimmedStats", "GammaCovariance", "kde",
    "symmetry_omegas", "variance_symmetry", "trimmed_stats", "nosymmetry_omegas",
    "variance_nosymmetry", "lee_variance", "gamma_covariance", "branch_influence",
    "imbens_manski_critical_value", "imbens_manski_ci", "intersection_ci",
    "gaussian_max_ci", "bootstrap_ci",
]


def _z(p):
    return float(special.ndtri(p))


def _phi(x):
    return float(special.ndtr(x))


@dataclass(frozen=True)
class VarianceComponents:
    omega_L: float
    omega_U: float
    omega_C: float
    psi1: float
    psi2: float
    f1_at_lower_q: float
    f1_at_upper_q: float
    n: int
    omega_Q: float = float("nan")
    kind: str = "symmetry"

    def __post_init__(self):
        for name in ("omega_L", "omega_U", "omega_C"):
            v = getattr(self, name)
            if not v >= -1e-12:
                raise NumericalError(f"{name}={v} is negative")

    @property
    def se_lower(self) -> float:
        return math.sqrt((self.omega_L + self.omega_C) / self.n)

    @property
    def se_upper(self) -> float:
        return math.sqrt((self.omega_U + self.omega_C) / self.n)

    def with_n(self, n: int) -> "VarianceComponents":
        from dataclasses import replace

        return replace(self, n=int(n))


def _psis(prim: IdentifiedPrimitives):
    a, q = prim.alpha0, prim.q0
    psd = prim.p_s1d1
    psi1 = (a / q) * (1 - a / q) * prim.p_d1 / psd
    psi2 = a * (1 - a) * (prim.p_d1 / prim.p_d0) ** 2 * prim.p_d0 / psd
    return psi1, psi2


def symmetry_omegas(prim: IdentifiedPrimitives, f_lo: float, f_hi: float, var_control: float,
                    theta: Optional[float] = None, n: int = 1) -> VarianceComponents:
    """Quantile-bound variances from primitives and two density values."""
    if not (f_lo > 0 and f_hi > 0):
        raise ZeroDensity(f"density at trimming quantile is not positive ({f_lo}, {f_hi})")
    theta = prim.theta_L if theta is None else theta
    share = min(max(theta * prim.q0, 0.0), 1.0)
    r = share / 2
    psi1, psi2 = _psis(prim)
    core = r * (1 - r) + (theta**2 * prim.q0**2 / 4) * psi1 + (theta**2 / 4) * psi2
    psd = prim.p_s1d1
    omega_C = var_control / prim.p_s1d0
    return VarianceComponents(
        omega_L=core / (f_lo**2 * psd), omega_U=core / (f_hi**2 * psd), omega_C=omega_C,
        psi1=psi1, psi2=psi2, f1_at_lower_q=float(f_lo), f1_at_upper_q=float(f_hi), n=int(n),
    )


def _cells(sample):
    s, d = sample.s.astype(bool), sample.d.astype(bool)
    return s, d, np.where(s, sample.y, 0.0)


def variance_symmetry(sample: SelectionSample, primitives: Optional[IdentifiedPrimitives] = None,
                      density_estimates: Optional[Sequence[float]] = None, theta: Optional[float] = None,
                      kernel: str = "gaussian", bandwidth="silverman") -> VarianceComponents:
    """Variances of the symmetry (quantile) bounds.

    When ``density_estimates`` is omitted the treated selected density is
    estimated by KDE at the two estimated trimming quantiles.
    """
    prim = primitives or identified_primitives(sample, 1.0)
    theta = prim.theta_L if theta is None else theta
    treated = np.sort(sample.outcomes(1))
    if density_estimates is None:
        share = min(max(theta * prim.q0, 0.0), 1.0)
        pts = [empirical_quantile(treated, share / 2, presorted=True),
               empirical_quantile(treated, 1 - share / 2, presorted=True)]
        dens, _ = kde(treated, pts, kernel, bandwidth)
        density_estimates = dens
    f_lo, f_hi = (float(v) for v in density_estimates)
    var_c = float(np.var(sample.outcomes(0)))
    return symmetry_omegas(prim, f_lo, f_hi, var_c, theta, sample.n)


@dataclass(frozen=True)
class TrimmedStats:
    """Quantile, trimmed mean and trimmed variance on each side at ``share``."""

    share: float
    y_lo: float
    mu_lo: float
    var_lo: float
    y_hi: float
    mu_hi: float
    var_hi: float


def trimmed_stats(sample: SelectionSample, share: float) -> TrimmedStats:
    x = np.sort(sample.outcomes(1))
    out = []
    for tail in ("lower", "upper"):
        tm = trimmed_mean(x, share, tail, presorted=True)
        kept = x[x <= tm.quantile] if tail == "lower" else x[x >= tm.quantile]
        out += [tm.quantile, tm.mu, float(np.var(kept))]
    return TrimmedStats(share, *out)


def _omega_q(prim):
    a, q = prim.alpha0, prim.q0
    p1 = a / q
    return (1 - p1) / (prim.p_d1 * p1) + (1 - a) / (a * prim.p_d0)


def nosymmetry_omegas(prim: IdentifiedPrimitives, stats: TrimmedStats, var_control: float, n: int = 1):
    """Trimmed-mean bound variances from primitives and trimmed moments."""
    r = stats.share
    psd = prim.p_s1d1
    oq = _omega_q(prim)
    if r <= 0:
        raise ZeroDensity("trimming share is zero; trimmed-mean variance undefined")

    def side(var_t, y, mu):
        return (var_t + (y - mu) ** 2 * (1 - r)) / (psd * r) + (y - mu) ** 2 * oq

    psi1, psi2 = _psis(prim)
    return VarianceComponents(
        omega_L=side(stats.var_lo, stats.y_lo, stats.mu_lo),
        omega_U=side(stats.var_hi, stats.y_hi, stats.mu_hi),
        omega_C=var_control / prim.p_s1d0, psi1=psi1, psi2=psi2,
        f1_at_lower_q=float("nan"), f1_at_upper_q=float("nan"), n=int(n), omega_Q=oq, kind="nosymmetry",
    )


def variance_nosymmetry(sample: SelectionSample, primitives: Optional[IdentifiedPrimitives] = None,
                        stats: Optional[TrimmedStats] = None, theta: Optional[float] = None) -> VarianceComponents:
    prim = primitives or identified_primitives(sample, 1.0)
    theta = prim.theta_L if theta is None else theta
    if stats is None:
        stats = trimmed_stats(sample, min(max(theta * prim.q0, 0.0), 1.0))
    return nosymmetry_omegas(prim, stats, float(np.var(sample.outcomes(0))), sample.n)


def lee_variance(p_treat_sel: float, p_ctrl_sel: float, p_d1: float, stats: TrimmedStats,
                 var_control: float, side: str = "lower") -> float:
    """Classical trimming-estimator variance in its own parametrisation.

    Trimming proportion ``p = 1 - p0/p1`` and its delta-method variance
    built from the two binomial selection rates.  Returns the asymptotic
    variance of the lower (or upper) bound including the control mean.
    """
    p1, p0 = p_treat_sel, p_ctrl_sel
    pd0 = 1 - p_d1
    p = (p1 - p0) / p1
    keep = 1 - p
    var_p = (1 / p1) ** 2 * p0 * (1 - p0) / pd0 + (p0 / p1**2) ** 2 * p1 * (1 - p1) / p_d1
    if side == "lower":
        v, y, mu = stats.var_lo, stats.y_lo, stats.mu_lo
    else:
        v, y, mu = stats.var_hi, stats.y_hi, stats.mu_hi
    denom = p1 * p_d1 * keep
    return v / denom + (y - mu) ** 2 * p / denom + (y - mu) ** 2 / keep**2 * var_p + var_control / (p0 * pd0)


@dataclass(frozen=True)
class GammaCovariance:
    """Sandwich ``Omega = G^-1 Sigma G'^-1`` for ``(gamma_L, gamma_F, q, alpha, eta)``."""

    G: np.ndarray
    Sigma: np.ndarray
    Omega: np.ndarray
    side: str = "lower"
    n: Optional[int] = None
    cross_term: bool = True

    def __post_init__(self):
        ev = np.linalg.eigvalsh((self.Omega + self.Omega.T) / 2)
        if ev.min() < -1e-8 * max(1.0, abs(ev).max()):
            raise SingularMatrix(f"sandwich covariance is not PSD (min eigenvalue {ev.min():.3g})")

    def branch_cov(self) -> np.ndarray:
        """Asymptotic covariance of ``(gamma_L - eta, gamma_F - eta)``."""
        A = np.array([[1.0, 0, 0, 0, -1], [0, 1.0, 0, 0, -1]])
        return A @ self.Omega @ A.T

    def marginal_L(self) -> float:
        return float(self.branch_cov()[0, 0])


def gamma_covariance(sample: Optional[SelectionSample], primitives: IdentifiedPrimitives,
                     density_estimates: Sequence[float], side: str = "lower",
                     cross_term: bool = True, var_control: Optional[float] = None,
                     n: Optional[int] = None) -> GammaCovariance:
    """Sandwich covariance of the unknown-case quantile parameters.

    ``density_estimates`` are the treated selected densities at the
    ``theta_L`` and Frechet trimming quantiles on ``side``.  With
    ``cross_term=False`` the Sigma matrix is kept diagonal; otherwise the
    covariance between the two quantile moments is included.
    """
    pr = primitives
    f_L, f_F = (float(v) for v in density_estimates)
    if not (f_L > 0 and f_F > 0):
        raise ZeroDensity("density at a trimming quantile is not positive")
    if var_control is None:
        if sample is None:
            raise ValueError("need a sample or var_control")
        var_control = float(np.var(sample.outcomes(0)))
    if n is None and sample is not None:
        n = sample.n
    q, a = pr.q0, pr.alpha0
    psd, pd1, pd0, p0s = pr.p_s1d1, pr.p_d1, pr.p_d0, pr.p_s1d0
    rL = pr.theta_L * q / 2
    rF = (1 + q - q / a) / 2
    sgn = 1.0 if side == "lower" else -1.0
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    lvL = rL if side == "lower" else 1 - rL
    lvF = rF if side == "lower" else 1 - rF
    G = np.zeros((5, 5))
    G[0, 0] = -f_L * psd
    G[0, 2] = sgn * pr.theta_L / 2 * psd
    G[1, 1] = -f_F * psd
    G[1, 2] = sgn * (1 - 1 / a) / 2 * psd
    G[1, 3] = sgn * q / (2 * a**2) * psd
    G[2, 2] = psd
    G[2, 3] = -pd1
    G[3, 3] = -pd0
    G[4, 4] = -p0s
    S = np.diag([
        lvL * (1 - lvL) * psd,
        lvF * (1 - lvF) * psd,
        a * (q - a) * pd1,
        a * (1 - a) * pd0,
        var_control * p0s,
    ])
    if cross_term:
        S[0, 1] = S[1, 0] = (min(lvL, lvF) - lvL * lvF) * psd
    if np.linalg.cond(G) > 1e10:
        raise SingularMatrix("moment Jacobian is ill-conditioned")
    Gi = np.linalg.inv(G)
    Om = Gi @ S @ Gi.T
    return GammaCovariance(G, S, (Om + Om.T) / 2, side, n, cross_term)


def branch_influence(sample: SelectionSample, theta_L: float, symmetry: bool, side: str = "lower",
                     kernel: str = "gaussian", bandwidth="silverman"):
    """Influence functions of the branch estimators ``mu_v - eta`` for v in {L, F}.

    Returns ``(names, estimates, IF)`` with ``IF`` of shape ``(n, k)``; the
    covariance of the estimates is ``IF.T @ IF / n**2``.  Branches whose
    trimming share is not positive are dropped.
    """
    n = sample.n
    S, D, Y = _cells(sample)
    S, D = S.astype(float), D.astype(float)
    pd1 = D.mean()
    pd0 = 1 - pd1
    psd = (S * D).mean()
    p0s = (S * (1 - D)).mean()
    p1, a = psd / pd1, p0s / pd0
    q = a / p1
    eta = float(np.sum(S * (1 - D) * Y) / np.sum(S * (1 - D)))
    if_a = (1 - D) * (S - a) / pd0
    if_p1 = D * (S - p1) / pd1
    if_q = if_a / p1 - a * if_p1 / p1**2
    if_eta = S * (1 - D) * (Y - eta) / p0s
    sd = S * D
    x = np.sort(sample.outcomes(1))

    branches = {
        "L": (theta_L * q, theta_L, 0.0),
        "F": (1 + q - q / a, 1 - 1 / a, q / a**2),
    }
    names, ests, cols = [], [], []
    for name, (raw, dr_dq, dr_da) in branches.items():
        if raw <= 0:
            continue
        r = min(raw, 1.0)
        if_r = (dr_dq * if_q + dr_da * if_a) if raw < 1 else np.zeros(n)
        if symmetry:
            lvl, dl = (r / 2, 0.5) if side == "lower" else (1 - r / 2, -0.5)
            y = empirical_quantile(x, lvl, presorted=True)
            f = float(kde(x, [y], kernel, bandwidth)[0][0])
            if f <= 0:
                raise ZeroDensity(f"zero density at branch {name} quantile")
            below = (Y <= y).astype(float)
            col = (sd * (lvl - below) / psd + dl * if_r) / f
            est = y
        else:
            tm = trimmed_mean(x, r, side, presorted=True)
            y, mu = tm.quantile, tm.mu
            if side == "lower":
                part = (Y - y) * (Y <= y)
            else:
                part = (Y - y) * (Y >= y)
            col = sd * (part / r + y - mu) / psd + (y - mu) / r * if_r
            est = mu
        names.append(name)
        ests.append(est - eta)
        cols.append(col - if_eta)
    return names, np.array(ests), np.column_stack(cols) if cols else np.zeros((n, 0))


# ---------------------------------------------------------------- intervals

def imbens_manski_critical_value(width_ratio: float, level: float = 0.95, tol: float = 1e-10) -> float:
    """Solve ``Phi(c + w) - Phi(-c) = level`` for c, where ``w = sqrt(n) width / max se``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    alpha = 1 - level
    if math.isinf(width_ratio):
        return _z(level)
    g = lambda c: _phi(c + width_ratio) - _phi(-c) - level
    lo, hi = _z(1 - alpha) - 1e-6, _z(1 - alpha / 2) + 1e-6
    glo, ghi = g(lo), g(hi)
    if glo > 0 or ghi < 0:
        raise RootBracketFailure(f"critical value not bracketed (g={glo:.3g}, {ghi:.3g})")
    # g is increasing in c; plain bisection on a short bracket
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def imbens_manski_ci(lower: float, upper: float, se_lower: float, se_upper: float, n: int,
                     level: float = 0.95) -> CiResult:
    """Interval covering the partially identified parameter with probability ``level``.

    ``se_lower``/``se_upper`` are asymptotic standard deviations (scaled by
    sqrt(n)); the interval half-widths are ``c * se / sqrt(n)``.
    """
    if lower > upper:
        raise ValueError("lower bound exceeds upper bound")
    if se_lower < 0 or se_upper < 0:
        raise ValueError("standard errors must be nonnegative")
    rn = math.sqrt(n)
    smax = max(se_lower, se_upper)
    if smax == 0:
        w = math.inf if upper > lower else 0.0
        c = _z(level) if upper > lower else _z(0.5 + level / 2)
    else:
        w = rn * (upper - lower) / smax
        c = imbens_manski_critical_value(w, level)
    return CiResult(
        lo=lower - c * se_lower / rn, hi=upper + c * se_upper / rn, level=level,
        critical_value=c, method="imbens_manski",
        metadata={"normalized_width": w, "se_lower": se_lower / rn, "se_upper": se_upper / rn},
    )


def _gauss_draws(cov, draws, rng):
    """Draws of N(0, corr(cov)) via a symmetric square root (tolerates rank deficiency)."""
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    if np.any(sd <= 0):
        raise SingularMatrix("branch with zero variance")
    corr = cov / np.outer(sd, sd)
    w, V = np.linalg.eigh((corr + corr.T) / 2)
    if w.min() < -1e-8:
        raise SingularMatrix(f"branch covariance not PSD (min eigenvalue {w.min():.3g})")
    root = V * np.sqrt(np.clip(w, 0, None))
    return rng.standard_normal((draws, len(sd))) @ root.T, sd


def _one_side(est, cov, p, n, draws, rng, sign):
    """Adaptive-selection critical value and endpoint for one side.

    ``sign=+1`` targets a max-type lower bound, ``-1`` a min-type upper bound.
    """
    est = np.asarray(est, dtype=float)
    Z, sd = _gauss_draws(cov, draws, rng)
    gam_n = 1 - 0.1 / math.log(max(n, 3))
    k_sel = float(np.quantile(Z.max(axis=1), gam_n))
    t = sign * est
    bound_sel = np.max(t - k_sel * sd)
    selected = t >= bound_sel - 2 * k_sel * sd
    zmax = Z[:, selected].max(axis=1)
    out = {}
    for key, prob in (("ci", p), ("median", 0.5)):
        k = float(np.quantile(zmax, prob))
        out[key] = (sign * float(np.max(t - k * sd)), k)
    return out, selected


def intersection_ci(lower_est, lower_cov, upper_est, upper_cov, n: int, level: float = 0.95,
                    draws: int = 100_000, seed: int = 0, names=("L", "F")) -> CiResult:
    """Gaussian-max interval for ``[max_v lower_v, min_v upper_v]``.

    Covariances are those of the branch estimates themselves (not scaled by n).
    Each side uses probability ``1 - (1 - level)/2``.
    """
    if draws < 10_000:
        raise ValueError("draws must be at least 1e4")
    ss = np.random.SeedSequence(seed).spawn(2)
    p = 1 - (1 - level) / 2
    lo, sel_lo = _one_side(lower_est, np.atleast_2d(lower_cov), p, n, draws,
                           np.random.Generator(np.random.Philox(ss[0])), +1)
    hi, sel_hi = _one_side(upper_est, np.atleast_2d(upper_cov), p, n, draws,
                           np.random.Generator(np.random.Philox(ss[1])), -1)
    ci_lo, ci_hi = lo["ci"][0], hi["ci"][0]
    pt_lo, pt_hi = float(np.max(lower_est)), float(np.min(upper_est))
    ci_lo, ci_hi = min(ci_lo, pt_lo), max(ci_hi, pt_hi)
    return CiResult(
        lo=ci_lo, hi=ci_hi, level=level, critical_value=max(lo["ci"][1], hi["ci"][1]), method="gaussian_max",
        metadata={
            "critical_lower": lo["ci"][1], "critical_upper": hi["ci"][1],
            "median_unbiased": (lo["median"][0], hi["median"][0]),
            "selected_lower": [nm for nm, s in zip(names, sel_lo) if s],
            "selected_upper": [nm for nm, s in zip(names, sel_hi) if s],
            "draws": draws, "seed": seed,
            "approximation": "simulated Gaussian-max critical values with adaptive inequality "
                             "selection and half-median-unbiased point adjustment",
        },
    )


def gaussian_max_ci(gamma_cov: GammaCovariance, estimates: GammaHat, level: float = 0.95,
                    draws: int = 100_000, seed: int = 0, gamma_cov_upper: Optional[GammaCovariance] = None,
                    n: Optional[int] = None) -> CiResult:
    """Identified-region interval for the unknown-case quantile bounds."""
    n = n or gamma_cov.n
    if not n:
        raise ValueError("sample size required")
    upper_cov = gamma_cov_upper if gamma_cov_upper is not None else gamma_cov
    e = estimates
    lo_est = [e.gamma_L - e.eta, e.gamma_F - e.eta]
    hi_est = [e.gamma_L_upper - e.eta, e.gamma_F_upper - e.eta]
    return intersection_ci(lo_est, gamma_cov.branch_cov() / n, hi_est, upper_cov.branch_cov() / n,
                           n, level, draws, seed)


def _endpoints(res):
    if isinstance(res, BoundsResult):
        return res.lower, res.upper
    lo, hi = res
    return float(lo), float(hi)


def bootstrap_ci(sample: SelectionSample, estimator: Callable, level: float = 0.95, B: int = 999,
                 seed: int = 0, workers: Optional[int] = None) -> CiResult:
    """Nonparametric bootstrap over units.

    Replicate ``b`` resamples with a Philox stream seeded by child ``b`` of
    ``SeedSequence(seed)``, so results do not depend on ``workers``.  The
    interval is the hull of the percentile interval and the Imbens-Manski
    interval built from bootstrap standard errors.  Replicates whose
    resample leaves an empty cell are skipped and counted.
    """
    if B < 200:
        raise ValueError("B must be at least 200")
    point_lo, point_hi = _endpoints(estimator(sample))
    children = np.random.SeedSequence(seed).spawn(B)
    n = sample.n

    def one(ss):
        idx = np.random.Generator(np.random.Philox(ss)).integers(0, n, n)
        try:
            return _endpoints(estimator(sample.subset(idx)))
        except (DataError, BoundsError):
            return None

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            out = list(ex.map(one, children))
    else:
        out = [one(c) for c in children]
    good = np.array([o for o in out if o is not None], dtype=float)
    if len(good) < 2:
        raise NumericalError("too few usable bootstrap replicates")
    se_l, se_u = (float(v) for v in good.std(axis=0, ddof=1))
    alpha = 1 - level
    pct_lo = float(np.quantile(good[:, 0], alpha / 2))
    pct_hi = float(np.quantile(good[:, 1], 1 - alpha / 2))
    im = imbens_manski_ci(point_lo, point_hi, se_l * math.sqrt(n), se_u * math.sqrt(n), n, level)
    return CiResult(
        lo=min(im.lo, pct_lo, point_lo), hi=max(im.hi, pct_hi, point_hi), level=level,
        critical_value=im.critical_value, method="bootstrap",
        metadata={
            "se_lower": se_l, "se_upper": se_u, "percentile": (pct_lo, pct_hi),
            "imbens_manski": (im.lo, im.hi), "B": B, "skipped": B - len(good), "seed": seed,
        },
    )
