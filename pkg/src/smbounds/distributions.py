"""Univariate outcome laws used to specify populations.

Each law exposes ``cdf``, ``ppf`` (left-continuous inverse, ``inf{t : r <= F(t)}``),
``rvs`` and ``quantile_integral(a, b)`` = integral of the quantile function
over probability levels ``[a, b]``.  The last one is what trimmed means are
built from: the mean of the lowest share ``s`` of a law is
``quantile_integral(0, s) / s``, which also handles atoms correctly.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .errors import InvalidDgp, NonIntegrable

QUAD_TOL = 1e-7
# Unbounded families are truncated at this many standard deviations.
TAIL_SDS = 12.0


def norm_cdf(x):
    return special.ndtr(x)


def norm_ppf(p):
    return special.ndtri(p)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def quad(func, lo, hi, points=None, tol=QUAD_TOL):
    """Adaptive Gauss-Kronrod quadrature that raises instead of warning."""
    if hi <= lo:
        return 0.0
    if points is not None:
        points = [p for p in points if lo < p < hi] or None
    val, err, *rest = integrate.quad(
        func, lo, hi, points=points, epsabs=tol * 1e-2, epsrel=1e-10,
        limit=500, full_output=1,
    )
    if err > tol:
        raise NonIntegrable(f"quadrature on [{lo}, {hi}] stopped at error {err:.3g}")
    return float(val)


class Law:
    """Base class.  Subclasses set ``continuous`` and implement the primitives."""

    continuous = True

    def cdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        """Finite interval carrying all but a negligible amount of mass."""
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        return []

    def ppf(self, r: float) -> float:
        lo, hi = self.support()
        if r <= 0.0:
            return lo
        if r >= 1.0:
            return hi
        f = lambda t: float(self.cdf(t)) - r
        if f(lo) >= 0:
            return lo
        if f(hi) < 0:
            return hi
        return optimize.brentq(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)

    def partial_expectation(self, lo: float, hi: float) -> float:
        """Integral of ``y f(y)`` over ``[lo, hi]`` by adaptive quadrature."""
        slo, shi = self.support()
        lo, hi = max(lo, slo), min(hi, shi)
        return quad(lambda t: t * float(self.pdf(t)), lo, hi, points=self.breakpoints())

    def quantile_integral(self, a: float, b: float) -> float:
        a, b = max(a, 0.0), min(b, 1.0)
        if b <= a:
            return 0.0
        return self.partial_expectation(self.ppf(a), self.ppf(b))

    def mean(self) -> float:
        return self.quantile_integral(0.0, 1.0)

    def variance(self) -> float:
        m = self.mean()
        lo, hi = self.support()
        return quad(lambda t: (t - m) ** 2 * float(self.pdf(t)), lo, hi, points=self.breakpoints())

    def rvs(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        return np.array([self.ppf(x) for x in u])


class Normal(Law):
    def __init__(self, mean: float = 0.0, sd: float = 1.0):
        if not sd > 0:
            raise InvalidDgp(f"normal sd must be positive, got {sd}")
        self.mu, self.sd = float(mean), float(sd)

    def __repr__(self):
        return f"Normal({self.mu}, {self.sd})"

    def cdf(self, x):
        return norm_cdf((np.asarray(x, dtype=float) - self.mu) / self.sd)

    def pdf(self, x):
        return norm_pdf((np.asarray(x, dtype=float) - self.mu) / self.sd) / self.sd

    def support(self):
        return self.mu - TAIL_SDS * self.sd, self.mu + TAIL_SDS * self.sd

    def breakpoints(self):
        return [self.mu]

    def ppf(self, r):
        if r <= 0.0:
            return -math.inf
        if r >= 1.0:
            return math.inf
        return self.mu + self.sd * float(norm_ppf(r))

    def partial_expectation(self, lo, hi):
        # closed form: E[Y 1{lo <= Y <= hi}] = mu (Phi(b) - Phi(a)) - sd (phi(b) - phi(a))
        a = (lo - self.mu) / self.sd
        b = (hi - self.mu) / self.sd
        pa = 0.0 if math.isinf(a) else float(norm_pdf(a))
        pb = 0.0 if math.isinf(b) else float(norm_pdf(b))
        return self.mu * float(norm_cdf(b) - norm_cdf(a)) - self.sd * (pb - pa)

    def mean(self):
        return self.mu

    def variance(self):
        return self.sd**2

    def rvs(self, rng, size):
        return rng.normal(self.mu, self.sd, size)


class Mixture(Law):
    """Finite mixture of laws.  With normal components this is the named
    normal-mixture family; any other ``Law`` components are accepted too."""

    def __init__(self, weights: Sequence[float], components: Sequence[Law]):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or len(w) != len(components) or len(w) == 0:
            raise InvalidDgp("mixture weights and components must align")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise InvalidDgp(f"mixture weights must be nonnegative and sum to 1, got {w}")
        keep = w > 0
        self.weights = w[keep] / w[keep].sum()
        self.components = [c for c, k in zip(components, keep) if k]
        self.continuous = all(c.continuous for c in self.components)

    def __repr__(self):
        return f"Mixture({self.weights.tolist()}, {self.components})"

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def support(self):
        sup = [c.support() for c in self.components]
        return min(s[0] for s in sup), max(s[1] for s in sup)

    def breakpoints(self):
        return sorted({p for c in self.components for p in c.breakpoints()})

    def mean(self):
        return float(sum(w * c.mean() for w, c in zip(self.weights, self.components)))

    def variance(self):
        m = self.mean()
        return float(sum(
            w * (c.variance() + (c.mean() - m) ** 2) for w, c in zip(self.weights, self.components)
        ))

    def exact_partial_expectation(self, lo, hi):
        """Component-wise partial expectations (closed form for normal parts)."""
        return float(sum(
            w * c.partial_expectation(lo, hi) for w, c in zip(self.weights, self.components)
        ))

    def rvs(self, rng, size):
        idx = rng.choice(len(self.weights), size=size, p=self.weights)
        out = np.empty(size)
        for k, c in enumerate(self.components):
            m = idx == k
            if m.any():
                out[m] = c.rvs(rng, int(m.sum()))
        return out


def mix(weights: Sequence[float], laws: Sequence[Law]) -> Law:
    """Mixture of ``laws``; purely atomic mixtures are merged into one :class:`Discrete`."""
    if laws and all(isinstance(c, Discrete) for c in laws):
        w = np.asarray(weights, dtype=float)
        vals = np.concatenate([c.values for c in laws])
        probs = np.concatenate([wk * c.probs for wk, c in zip(w / w.sum(), laws)])
        return Discrete(vals, probs)
    return Mixture(weights, laws)


def normal_mixture(weights, means, sds) -> Mixture:
    return Mixture(weights, [Normal(m, s) for m, s in zip(means, sds)])


class Discrete(Law):
    """Law on finitely many atoms."""

    continuous = False

    def __init__(self, values, probs=None):
        v = np.asarray(values, dtype=float).ravel()
        p = np.full(len(v), 1.0 / len(v)) if probs is None else np.asarray(probs, dtype=float).ravel()
        if len(v) == 0 or len(p) != len(v):
            raise InvalidDgp("atoms and probabilities must be nonempty and aligned")
        if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-10):
            raise InvalidDgp("atom probabilities must be nonnegative and sum to 1")
        order = np.argsort(v, kind="stable")
        v, p = v[order], p[order] / p.sum()
        # merge tied atoms
        uniq, inv = np.unique(v, return_inverse=True)
        self.values = uniq
        self.probs = np.bincount(inv, weights=p)
        self._cum = np.cumsum(self.probs)
        self._cum[-1] = 1.0

    def __repr__(self):
        return f"Discrete({self.values.tolist()}, {self.probs.tolist()})"

    def cdf(self, x):
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float), side="right")
        cum = np.concatenate([[0.0], self._cum])
        return cum[idx]

    def pdf(self, x):
        raise NotImplementedError("discrete law has no density")

    def support(self):
        return float(self.values[0]), float(self.values[-1])

    def ppf(self, r):
        if r <= 0.0:
            return float(self.values[0])
        k = int(np.searchsorted(self._cum, r - 1e-14, side="left"))
        return float(self.values[min(k, len(self.values) - 1)])

    def quantile_integral(self, a, b):
        """Exact integral of the step quantile function over ``[a, b]``."""
        a, b = max(a, 0.0), min(b, 1.0)
        if b <= a:
            return 0.0
        left = np.concatenate([[0.0], self._cum[:-1]])
        overlap = np.clip(np.minimum(self._cum, b) - np.maximum(left, a), 0.0, None)
        return float(np.dot(overlap, self.values))

    def partial_expectation(self, lo, hi):
        m = (self.values >= lo) & (self.values <= hi)
        return float(np.dot(self.values[m], self.probs[m]))

    def mean(self):
        return float(np.dot(self.values, self.probs))

    def variance(self):
        return float(np.dot((self.values - self.mean()) ** 2, self.probs))

    def rvs(self, rng, size):
        return rng.choice(self.values, size=size, p=self.probs)


class CallableLaw(Law):
    """Generic continuous law from a (cdf, pdf, ppf) triple."""

    def __init__(self, cdf: Callable, pdf: Callable, ppf: Callable, support: tuple[float, float] | None = None):
        self._cdf, self._pdf, self._ppf = cdf, pdf, ppf
        if support is None:
            support = (float(ppf(1e-15)), float(ppf(1 - 1e-15)))
        self._support = support

    def cdf(self, x):
        return self._cdf(x)

    def pdf(self, x):
        return self._pdf(x)

    def ppf(self, r):
        return float(self._ppf(r))

    def support(self):
        return self._support

    def rvs(self, rng, size):
        u = rng.random(size)
        return np.asarray([self._ppf(x) for x in u], dtype=float)


def law_from_config(cfg) -> Law:
    """Build a law from a declarative mapping.

    ``{"family": "normal", "mean": 0, "sd": 1}``,
    ``{"family": "normal_mixture", "weights": [...], "means": [...], "sds": [...]}``
    or ``{"family": "discrete", "values": [...], "probs": [...]}``.
    ``var`` may be given instead of ``sd`` for the normal family.
    """
    if isinstance(cfg, Law):
        return cfg
    fam = cfg.get("family", "normal")
    if fam == "normal":
        sd = cfg["sd"] if "sd" in cfg else math.sqrt(cfg["var"])
        return Normal(cfg.get("mean", 0.0), sd)
    if fam == "normal_mixture":
        sds = cfg["sds"] if "sds" in cfg else [math.sqrt(v) for v in cfg["vars"]]
        return normal_mixture(cfg["weights"], cfg["means"], sds)
    if fam == "discrete":
        return Discrete(cfg["values"], cfg.get("probs"))
    raise InvalidDgp(f"unknown law family {fam!r}")


def law_to_config(law: Law) -> dict:
    if isinstance(law, Normal):
        return {"family": "normal", "mean": law.mu, "sd": law.sd}
    if isinstance(law, Mixture) and all(isinstance(c, Normal) for c in law.components):
        return {
            "family": "normal_mixture",
            "weights": law.weights.tolist(),
            "means": [c.mu for c in law.components],
            "sds": [c.sd for c in law.components],
        }
    if isinstance(law, Discrete):
        return {"family": "discrete", "values": law.values.tolist(), "probs": law.probs.tolist()}
    raise InvalidDgp(f"law {law!r} has no declarative form")
