"""Univariate kernel density estimation with rule-of-thumb and plug-in bandwidths."""
from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from .errors import BadBandwidth, EmptyInput

SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT5 = math.sqrt(5.0)

# Roughness R(K) = int K^2 of the unit-variance kernels below.
ROUGHNESS = {
    "gaussian": 1.0 / (2.0 * math.sqrt(math.pi)),
    "epanechnikov": 3.0 / (5.0 * _SQRT5),
}


def _kernel(name):
    if name == "gaussian":
        return lambda u: np.exp(-0.5 * u * u) / SQRT_2PI
    if name == "epanechnikov":
        # rescaled to unit variance, support |u| <= sqrt(5)
        return lambda u: np.where(np.abs(u) <= _SQRT5, 0.75 / _SQRT5 * (1.0 - u * u / 5.0), 0.0)
    raise ValueError(f"unknown kernel {name!r}")


def _scale(x):
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.349
    s = min(sd, iqr) if iqr > 0 else sd
    return s


def bw_silverman(x) -> float:
    """0.9 min(sd, IQR/1.349) n^(-1/5)."""
    x = np.asarray(x, dtype=float)
    return 0.9 * _scale(x) * x.size ** -0.2


def _binned_pair_counts(x, nb=1000):
    """Counts of pairs (i < j) by absolute bin distance, as in the classic SJ code."""
    xmin, xmax = float(x.min()), float(x.max())
    rang = (xmax - xmin) * 1.01
    dd = rang / nb
    idx = np.floor((x - xmin) / dd).astype(np.int64)
    idx = np.clip(idx, 0, nb - 1)
    c = np.bincount(idx, minlength=nb).astype(float)
    # autocorrelation of bin counts: sum_i c_i c_{i+k}
    m = 1 << int(np.ceil(np.log2(2 * nb)))
    fc = np.fft.rfft(c, m)
    ac = np.fft.irfft(fc * np.conj(fc), m)[:nb]
    ac = np.rint(ac)
    cnt = ac.copy()
    cnt[0] = (np.sum(c * c) - x.size) / 2.0
    return cnt, dd


def _phi4(cnt, d, n, h):
    delta = (np.arange(cnt.size) * d / h) ** 2
    keep = delta < 1000.0
    term = np.exp(-delta[keep] / 2) * (delta[keep] ** 2 - 6 * delta[keep] + 3)
    s = 2.0 * np.sum(term * cnt[keep]) + n * 3.0
    return s / (n * (n - 1) * h**5 * SQRT_2PI)


def _phi6(cnt, d, n, h):
    delta = (np.arange(cnt.size) * d / h) ** 2
    keep = delta < 1000.0
    dl = delta[keep]
    term = np.exp(-dl / 2) * (dl**3 - 15 * dl**2 + 45 * dl - 15)
    s = 2.0 * np.sum(term * cnt[keep]) - 15.0 * n
    return s / (n * (n - 1) * h**7 * SQRT_2PI)


def bw_sheather_jones(x, nb: int = 1000) -> float:
    """Sheather-Jones solve-the-equation bandwidth for a Gaussian kernel.

    Pairwise sums are computed on ``nb`` equal-width bins.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2 or np.ptp(x) == 0:
        raise BadBandwidth("Sheather-Jones bandwidth needs at least two distinct values")
    cnt, d = _binned_pair_counts(x, nb)
    return _sj_solve(lambda h: _phi4(cnt, d, n, h), lambda h: _phi6(cnt, d, n, h), x, n)


def bw_sheather_jones_exact(x) -> float:
    """Unbinned O(n^2) version of :func:`bw_sheather_jones`, for small samples."""
    x = np.asarray(x, dtype=float)
    n = x.size
    diff = (x[:, None] - x[None, :])[np.triu_indices(n, 1)]

    def phi4(h):
        dl = (diff / h) ** 2
        return (2 * np.sum(np.exp(-dl / 2) * (dl**2 - 6 * dl + 3)) + 3 * n) / (n * (n - 1) * h**5 * SQRT_2PI)

    def phi6(h):
        dl = (diff / h) ** 2
        return (2 * np.sum(np.exp(-dl / 2) * (dl**3 - 15 * dl**2 + 45 * dl - 15)) - 15 * n) / (
            n * (n - 1) * h**7 * SQRT_2PI
        )

    return _sj_solve(phi4, phi6, x, n)


def _sj_solve(phi4, phi6, x, n):
    scale = _scale(x)
    a = 1.24 * scale * n ** (-1 / 7)
    b = 1.23 * scale * n ** (-1 / 9)
    c1 = 1.0 / (2.0 * math.sqrt(math.pi) * n)
    td = -phi6(b)
    if not np.isfinite(td) or td <= 0:
        raise BadBandwidth("sample too sparse for the Sheather-Jones pilot estimate")
    alph2 = 1.357 * (phi4(a) / td) ** (1 / 7)

    def f(h):
        return (c1 / phi4(alph2 * h ** (5 / 7))) ** 0.2 - h

    hmax = 1.144 * scale * n ** -0.2
    lo, hi = 0.1 * hmax, hmax
    for _ in range(50):
        if f(lo) * f(hi) <= 0:
            break
        lo, hi = lo * 0.9, hi * 1.2
    else:
        raise BadBandwidth("could not bracket the Sheather-Jones bandwidth")
    return float(optimize.brentq(f, lo, hi, xtol=0.1 * lo * 1e-3))


def bandwidth(values, rule="silverman", kernel="gaussian") -> float:
    x = np.asarray(values, dtype=float)
    if isinstance(rule, (int, float)) and not isinstance(rule, bool):
        h = float(rule)
    elif rule == "silverman":
        h = bw_silverman(x)
    elif rule == "sheather_jones":
        h = bw_sheather_jones(x)
        if kernel != "gaussian":
            # same AMISE constant for a unit-variance kernel up to its roughness
            h *= (ROUGHNESS[kernel] / ROUGHNESS["gaussian"]) ** 0.2
    else:
        raise BadBandwidth(f"unknown bandwidth rule {rule!r}")
    if not (np.isfinite(h) and h > 0):
        raise BadBandwidth(f"bandwidth must be positive, got {h}")
    return h


def kde(values, eval_points, kernel: str = "gaussian", bandwidth_rule="silverman", chunk: int = 2_000_000):
    """Kernel density estimate of ``values`` at ``eval_points``.

    ``bandwidth_rule`` is ``"silverman"``, ``"sheather_jones"`` or a positive number.
    Returns ``(densities, h)``.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("kernel density of an empty sample")
    pts = np.atleast_1d(np.asarray(eval_points, dtype=float))
    h = bandwidth(x, bandwidth_rule, kernel)
    K = _kernel(kernel)
    out = np.empty(pts.size)
    step = max(1, chunk // max(x.size, 1))
    for i in range(0, pts.size, step):
        u = (pts[i:i + step, None] - x[None, :]) / h
        out[i:i + step] = K(u).sum(axis=1) / (x.size * h)
    return out, h


def pointwise_band(density, n, h, kernel="gaussian", level=0.99):
    """Normal-approximation pointwise band ``f +- z sqrt(f R(K) / (n h))``."""
    z = float(special.ndtri(0.5 + level / 2))
    half = z * np.sqrt(np.maximum(density, 0.0) * ROUGHNESS[kernel] / (n * h))
    return np.maximum(density - half, 0.0), density + half
