"""Sampling from population specifications, Monte Carlo studies and brute-force oracles.

Random streams: every draw comes from a Philox generator keyed by a
``SeedSequence``.  Replication ``r`` of a study seeded with ``seed`` uses
child ``r`` of ``SeedSequence(seed)``, so a replication's data depend only on
``(seed, r)`` and never on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import identify
from .analysis import analyze
from .core import SelectionSample, check_theta
from .distributions import Discrete, Law, quad
from .errors import BoundsError, SupportTooLarge
from .identify import DgpSpec, PopulationBounds
from .inference import TrimmedStats, VarianceComponents, nosymmetry_omegas, symmetry_omegas

MAX_ATOMS = 10_000
_STRATA = ((1, 1), (1, 0), (0, 1), (0, 0))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def draw_sample(dgp: DgpSpec, n: int, seed=0, require_cells: bool = True) -> SelectionSample:
    """Draw ``n`` units: stratum, then treatment, then the realised outcome."""
    rng = _rng(seed)
    probs = np.array([dgp.pi[k] for k in _STRATA])
    stratum = rng.choice(4, size=n, p=probs / probs.sum())
    d = (rng.random(n) < dgp.p_d1).astype(np.int8)
    s1 = np.array([k[0] for k in _STRATA])[stratum]
    s0 = np.array([k[1] for k in _STRATA])[stratum]
    s = np.where(d == 1, s1, s0).astype(np.int8)
    y = np.full(n, np.nan)
    for j, k in enumerate(_STRATA):
        for arm, laws in ((1, dgp.f1_given), (0, dgp.f0_given)):
            m = (stratum == j) & (d == arm) & (s == 1)
            cnt = int(m.sum())
            if cnt:
                y[m] = laws[k].rvs(rng, cnt)
    return SelectionSample.from_arrays(y, s, d, require_cells=require_cells)


def true_tau(dgp: DgpSpec) -> float:
    """Average effect among always-takers."""
    return float(dgp.f1_given[(1, 1)].mean() - dgp.f0_given[(1, 1)].mean())


# ------------------------------------------------------------ oracles

def discretize(law: Law, m: int) -> Discrete:
    """Equal-probability atoms: the conditional mean of each quantile slice."""
    if isinstance(law, Discrete):
        return law
    edges = np.linspace(0.0, 1.0, m + 1)
    vals = [law.quantile_integral(a, b) * m for a, b in zip(edges[:-1], edges[1:])]
    return Discrete(vals, np.full(m, 1.0 / m))


def discretize_dgp(dgp: DgpSpec, m: int) -> DgpSpec:
    return DgpSpec(
        dgp.pi,
        {k: discretize(v, m) for k, v in dgp.f1_given.items()},
        {k: discretize(v, m) for k, v in dgp.f0_given.items()},
        dgp.p_d1, dgp.name + f"_discrete{m}",
    )


def _pool(parts):
    """Combine ``(weight, Discrete)`` pairs into atom arrays."""
    tot = sum(w for w, _ in parts)
    vals = np.concatenate([law.values for _, law in parts])
    probs = np.concatenate([w / tot * law.probs for w, law in parts])
    return vals, probs


def _trimmed_by_mass_shift(values, probs, remove, from_top, split=True):
    """Mean of the law left after deleting mass ``remove`` from one end.

    Walks atoms from the chosen end and deletes them one by one.  With
    ``split`` the last atom touched is split so exactly ``remove`` goes;
    otherwise an atom is deleted only when it fits entirely, which leaves
    the law conditioned on the weak-inequality side of the quantile cut.
    """
    order = sorted(range(len(values)), key=lambda i: values[i], reverse=from_top)
    left = remove
    kept_mass = 0.0
    kept_sum = 0.0
    for i in order:
        p = float(probs[i])
        if split:
            take = min(p, left)
        else:
            take = p if p <= left + 1e-12 else 0.0
            if take == 0.0:
                left = 0.0
        left -= take
        keep = p - take
        kept_mass += keep
        kept_sum += keep * float(values[i])
    return kept_sum / kept_mass


def brute_force_bounds(obj: Union[DgpSpec, SelectionSample], theta_L: float) -> PopulationBounds:
    """Trimming bounds on finite atoms via explicit mass shifting.

    ``obj`` is a specification whose outcome laws are all :class:`Discrete`
    (mass is split at the cut, giving the sharp bounds of a discrete law), or
    a finite sample, whose empirical law is cut at whole observations so the
    kept set is ``{Y <= y_r}`` (and its mirror), the sample-analog
    convention.  The lower bound removes the top ``1 - theta q`` of the
    treated selected mass, the upper bound the bottom.
    """
    theta_L = check_theta(theta_L)
    if isinstance(obj, SelectionSample):
        c = obj.counts
        n1, n0 = c[(1, 0)] + c[(1, 1)], c[(0, 0)] + c[(0, 1)]
        p1, alpha = c[(1, 1)] / n1, c[(0, 1)] / n0
        vals, counts = np.unique(obj.outcomes(1), return_counts=True)
        probs = counts / counts.sum()
        eta = float(np.mean(obj.outcomes(0)))
        split = False
    else:
        laws = list(obj.f1_given.values()) + list(obj.f0_given.values())
        if not all(isinstance(l, Discrete) for l in laws):
            raise TypeError("brute_force_bounds needs discrete outcome laws; see discretize_dgp")
        p1, alpha = obj.p_s1, obj.p_s0
        vals, probs = _pool([(obj.pi[k], obj.f1_given[k]) for k in ((1, 1), (1, 0)) if obj.pi[k] > 0])
        cv, cp = _pool([(obj.pi[k], obj.f0_given[k]) for k in ((1, 1), (0, 1)) if obj.pi[k] > 0])
        eta = float(np.dot(cv, cp))
        split = True
    if len(vals) > MAX_ATOMS:
        raise SupportTooLarge(f"{len(vals)} atoms exceed the limit of {MAX_ATOMS}")
    q = alpha / p1
    theta = max(theta_L, 1 + 1 / q - 1 / alpha)
    share = min(max(theta * q, 0.0), 1.0)
    if share <= 0:
        lo, hi = float(np.min(vals)), float(np.max(vals))
    else:
        remove = 1.0 - share
        lo = _trimmed_by_mass_shift(vals, probs, remove, True, split)
        hi = _trimmed_by_mass_shift(vals, probs, remove, False, split)
    tag = "lee" if theta == 1.0 else "stochastic"
    return PopulationBounds(lo - eta, hi - eta, tag, theta, q, eta)


# ------------------------------------------------------------ population variances

def _trimmed_moments(law: Law, share: float, tail: str):
    y = law.ppf(share) if tail == "lower" else law.ppf(1 - share)
    if tail == "lower":
        mu = identify.lower_trimmed_mean(law, share)
        lo, hi = law.support()[0], y
    else:
        mu = identify.upper_trimmed_mean(law, share)
        lo, hi = y, law.support()[1]
    m2 = quad(lambda t: (t - mu) ** 2 * float(law.pdf(t)), lo, hi, points=law.breakpoints())
    return y, mu, m2 / share


def population_variance(dgp: DgpSpec, theta_L: float, symmetry: bool, n: int = 1) -> VarianceComponents:
    """Asymptotic variances evaluated at the population truth.

    Uses ``theta = max(theta_L, theta_F)``; densities and trimmed moments come
    from the exact treated selected law.
    """
    prim = identify.population_primitives(dgp, theta_L)
    law = identify.treated_law(dgp)
    var_c = identify.control_law(dgp).variance()
    share = min(max(prim.theta * prim.q0, 0.0), 1.0)
    if symmetry:
        f_lo = float(law.pdf(law.ppf(share / 2)))
        f_hi = float(law.pdf(law.ppf(1 - share / 2)))
        return symmetry_omegas(prim, f_lo, f_hi, var_c, prim.theta, n)
    ylo, mlo, vlo = _trimmed_moments(law, share, "lower")
    yhi, mhi, vhi = _trimmed_moments(law, share, "upper")
    return nosymmetry_omegas(prim, TrimmedStats(share, ylo, mlo, vlo, yhi, mhi, vhi), var_c, n)


# ------------------------------------------------------------ replications

@dataclass
class ReplicationPlan:
    dgp: DgpSpec
    n: int
    reps: int
    seed: int = 0
    theta_L: float = 1.0
    symmetry: bool = False
    case: str = "known"
    level: float = 0.95
    target: str = "true_tau"
    draws: int = 20_000
    bootstrap: int = 0
    workers: Optional[int] = None

    def __post_init__(self):
        if self.n < 2 or self.reps < 1:
            raise ValueError("need n >= 2 and reps >= 1")
        if self.target not in ("true_tau", "identified_region"):
            raise ValueError(f"unknown coverage target {self.target!r}")
        check_theta(self.theta_L)

    @classmethod
    def from_config(cls, cfg) -> "ReplicationPlan":
        dgp = cfg.get("dgp", {"preset": "example1"})
        kw = {k: cfg[k] for k in ("n", "reps", "seed", "theta_L", "symmetry", "case", "level",
                                  "target", "draws", "bootstrap", "workers") if k in cfg}
        return cls(dgp=DgpSpec.from_config(dgp), **kw)


@dataclass
class CoverageReport:
    target: str
    cover_count: int
    reps: int
    mean_lower: float
    mean_upper: float
    sd_lower: float
    sd_upper: float
    mean_ci_width: float
    target_value: tuple = ()
    lowers: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    uppers: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def __post_init__(self):
        if not 0 <= self.cover_count <= self.reps:
            raise ValueError("cover_count out of range")

    @property
    def coverage(self) -> float:
        return self.cover_count / self.reps

    def to_dict(self):
        return {
            "target": self.target, "cover_count": self.cover_count, "reps": self.reps,
            "coverage": self.coverage, "mean_lower": self.mean_lower, "mean_upper": self.mean_upper,
            "sd_lower": self.sd_lower, "sd_upper": self.sd_upper, "mean_ci_width": self.mean_ci_width,
            "target_value": list(self.target_value),
        }


def _target(plan: ReplicationPlan):
    if plan.target == "true_tau":
        t = true_tau(plan.dgp)
        return (t, t)
    pb = (identify.population_bounds_symmetry if plan.symmetry else identify.population_bounds_stochastic)(
        plan.dgp, plan.theta_L)
    return (pb.lower, pb.upper)


def _one_replication(plan: ReplicationPlan, r: int, ss):
    try:
        sample = draw_sample(plan.dgp, plan.n, ss)
        res = analyze(sample, plan.theta_L, plan.symmetry, plan.case, plan.level,
                      bootstrap=plan.bootstrap, seed=int(ss.generate_state(1)[0]), draws=plan.draws)
    except BoundsError as e:
        e.replication = r
        e.args = (f"replication {r}: {e}",)
        raise
    return res.lower, res.upper, res.ci.lo, res.ci.hi


def run_replications(plan: ReplicationPlan) -> CoverageReport:
    children = np.random.SeedSequence(plan.seed).spawn(plan.reps)
    jobs = list(enumerate(children))
    if plan.workers and plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as ex:
            rows = list(ex.map(lambda job: _one_replication(plan, *job), jobs))
    else:
        rows = [_one_replication(plan, r, ss) for r, ss in jobs]
    arr = np.array(rows, dtype=float)
    t_lo, t_hi = _target(plan)
    covered = (arr[:, 2] <= t_lo) & (arr[:, 3] >= t_hi)
    ddof = 1 if plan.reps > 1 else 0
    return CoverageReport(
        target=plan.target, cover_count=int(covered.sum()), reps=plan.reps,
        mean_lower=float(arr[:, 0].mean()), mean_upper=float(arr[:, 1].mean()),
        sd_lower=float(arr[:, 0].std(ddof=ddof)), sd_upper=float(arr[:, 1].std(ddof=ddof)),
        mean_ci_width=float((arr[:, 3] - arr[:, 2]).mean()), target_value=(t_lo, t_hi),
        lowers=arr[:, 0], uppers=arr[:, 1],
    )
