"""Fundamental solution of the heat operator and its exact time integrals.

All radial primitives take the spatial distance ``r`` and a time window
``[a, b]`` in the *lag* variable ``s = t - tau`` and are vectorised over
numpy broadcasting. The closed forms use the exponential integral ``E1``
(n = 2) and incomplete gamma / ``erfc`` functions (n = 3).

Naming of the primitives, for a window ``[a, b]``::

    moment0(r)  = int_a^b S_n(s, r) ds
    moment1(r)  = int_a^b s S_n(s, r) ds
    grad0(r)    = int_a^b S_n(s, r) / (2 s) ds      (int grad S ds = -z grad0)

Since ``grad S_n(s, z) = -z / (2 s) S_n(s, z)``, the first moment of the
gradient is ``-z moment0 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

# exp(-x) is below the smallest normal double for x > UNDERFLOW_ARG
UNDERFLOW_ARG = -np.log(np.finfo(float).tiny)


def _check_dim(n):
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")


def eval_S(t, x, n: int = 2):
    """Heat kernel ``(4 pi t)^(-n/2) exp(-|x|^2 / 4t)`` for ``t > 0``, zero for ``t <= 0``.

    ``x`` has trailing dimension ``n``; ``t`` broadcasts against ``x[..., 0]``.
    """
    _check_dim(n)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"displacement must have trailing dimension {n}")
    r2 = np.sum(x * x, axis=-1)
    t, r2 = np.broadcast_arrays(t, r2)
    if np.any((t == 0) & (r2 == 0)):
        raise ValueError("the heat kernel is undefined at (t, x) = (0, 0)")
    out = np.zeros(t.shape)
    pos = t > 0
    tp = t[pos]
    out[pos] = np.exp(-r2[pos] / (4 * tp)) / (4 * np.pi * tp) ** (n / 2)
    return out[()] if out.ndim == 0 else out


def grad_S(t, x, n: int = 2):
    """Spatial gradient ``-x / (2t) S_n(t, x)``; zero vector for ``t <= 0``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    s = eval_S(t, x, n)
    tt = np.where(t > 0, t, 1.0)
    return -x * (np.asarray(s) / (2 * tt))[..., None]


def _prepare(r, a, b):
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(r <= 0):
        raise ValueError("time-integrated kernels require r > 0; the diagonal is handled by quadrature")
    if np.any(a < 0) or np.any(b < a):
        raise ValueError("time window must satisfy 0 <= a <= b")
    return np.broadcast_arrays(r, a, b)


def _inv(a):
    # 1/a with 1/0 -> inf (also for subnormal a), used for the argument c/a of the lower limit
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(a > 0, 1.0 / np.where(a > 0, a, 1.0), np.inf)


def _exp_diff(c, a, b):
    """exp(-c/b) - exp(-c/a) without cancellation."""
    xb = c * _inv(b)
    gap = c * (_inv(a) - _inv(b))
    with np.errstate(invalid="ignore"):
        out = -np.exp(-xb) * np.expm1(-gap)
    return np.where(np.isinf(gap), np.exp(-xb), out)


def _e1(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        out = special.exp1(np.minimum(x, 2 * UNDERFLOW_ARG))
    return np.where(x > UNDERFLOW_ARG, 0.0, out)


def _finish(out, b, c):
    out = np.where((c / np.where(b > 0, b, 1.0) > UNDERFLOW_ARG) | (b <= 0), 0.0, out)
    return out[()] if out.ndim == 0 else out


def _gamma_window(p, xa, xb):
    """int_{xb}^{xa} u^(p-1) e^(-u) du for 0 <= xb <= xa <= inf, p > 0."""
    lower = special.gammainc(p, xa) - special.gammainc(p, xb)
    upper = special.gammaincc(p, xb) - special.gammaincc(p, xa)
    big = xb > p
    return special.gamma(p) * np.where(big, upper, lower)


def _upper_gamma_neg_half(x, terms: int = 80):
    """Gamma(-1/2, x) by backward continued fraction; accurate for x >= 2."""
    x = np.asarray(x, dtype=float)
    xs = np.where(np.isfinite(x) & (x > 1.0), x, 2.0)
    a = -0.5
    frac = np.zeros_like(xs)
    for k in range(terms, 0, -1):
        frac = k * (k - a) / (xs + 2 * k + 1 - a - frac)
    with np.errstate(under="ignore"):
        val = np.exp(-xs) * xs ** a / (xs + 1 - a - frac)
    return np.where(np.isinf(x), 0.0, val)


def time_integrated_S(r, a, b, n: int = 2):
    """``int_a^b S_n(s, r) ds`` in closed form."""
    _check_dim(n)
    r, a, b = _prepare(r, a, b)
    c = r * r / 4
    xa, xb = c * _inv(a), c * _inv(b)
    if n == 2:
        out = (_e1(xb) - _e1(xa)) / (4 * np.pi)
    else:
        # (1/(4 pi r)) (erfc(r/2sqrt b) - erfc(r/2sqrt a)) as a gamma window
        out = 2 * _gamma_window(0.5, xa, xb) / ((4 * np.pi) ** 1.5 * r)
    return _finish(np.asarray(out, dtype=float), b, c)


def time_moment_S(r, a, b, n: int = 2):
    """First moment ``int_a^b s S_n(s, r) ds`` in closed form."""
    _check_dim(n)
    r, a, b = _prepare(r, a, b)
    c = r * r / 4
    xa, xb = c * _inv(a), c * _inv(b)
    if n == 2:
        # antiderivative s exp(-c/s) - c E1(c/s)
        ea = np.where(a > 0, a * np.exp(-xa), 0.0)
        out = (b * np.exp(-xb) - ea - c * (_e1(xb) - _e1(xa))) / (4 * np.pi)
    else:
        # antiderivative 2 sqrt(s) exp(-c/s) - 2 sqrt(pi c) erfc(sqrt(c/s)); cancels for large c/s
        ea = np.where(a > 0, np.sqrt(a) * np.exp(-xa), 0.0)
        win = _gamma_window(0.5, xa, xb)
        small = (2 * (np.sqrt(b) * np.exp(-xb) - ea) - 2 * np.sqrt(c) * win) / (4 * np.pi) ** 1.5
        big = np.sqrt(c) * (_upper_gamma_neg_half(xb) - _upper_gamma_neg_half(xa)) / (4 * np.pi) ** 1.5
        out = np.where(xb > 2.0, big, small)
    return _finish(np.asarray(out, dtype=float), b, c)


def time_integrated_grad_S(r, a, b, n: int = 2):
    """Radial factor ``g`` with ``int_a^b grad S_n(s, z) ds = -z g(|z|, a, b)``.

    Equals ``int_a^b S_n(s, r) / (2 s) ds`` and ``-(1/r) d/dr time_integrated_S``.
    """
    _check_dim(n)
    r, a, b = _prepare(r, a, b)
    c = r * r / 4
    if n == 2:
        out = _exp_diff(c, a, b) / (2 * np.pi * r * r)
    else:
        xa, xb = c * _inv(a), c * _inv(b)
        out = _gamma_window(1.5, xa, xb) / (2 * (4 * np.pi) ** 1.5 * c ** 1.5)
    return _finish(np.asarray(out, dtype=float), b, c)


def time_integrated_grad_S_dr(r, a, b):
    """``d/dr`` of :func:`time_integrated_grad_S` for n = 2 (used by double-layer gradients)."""
    r, a, b = _prepare(r, a, b)
    c = r * r / 4
    g = _exp_diff(c, a, b) / (2 * np.pi * r * r)
    xa, xb = c * _inv(a), c * _inv(b)
    eb = np.exp(-xb) * np.where(b > 0, 1 / (2 * np.where(b > 0, b, 1.0)), 0.0)
    ea = np.where(a > 0, np.exp(-xa) / (2 * np.where(a > 0, a, 1.0)), 0.0)
    out = -2 * g / r + (ea - eb) / (2 * np.pi * r)
    return _finish(np.asarray(out, dtype=float), b, c)


@dataclass
class DecayReport:
    t0: float
    n: int
    K1: float
    K2: float
    passed: bool
    samples: int


def check_decay_bounds(t0: float, samples: int = 10_000, n: int = 2, seed: int = 0) -> DecayReport:
    """Sampled constants for ``|S_n| <= K1 e^{-|z|^2/8t0}`` and ``|grad S_n| <= K2 e^{-|z|^2/8t0}``.

    Samples ``(tau, z)`` uniformly in ``[0, t0] x {1 <= |z| <= 20}``; the ratios
    are bounded because ``|z| >= 1`` keeps the kernel away from its singularity.
    """
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    _check_dim(n)
    rng = np.random.default_rng(seed)
    tau = rng.uniform(0.0, t0, samples)
    rho = rng.uniform(1.0, 20.0, samples)
    direction = rng.normal(size=(samples, n))
    z = direction / np.linalg.norm(direction, axis=1, keepdims=True) * rho[:, None]
    ratio_s, ratio_g = decay_ratios(tau, z, t0, n)
    K1, K2 = float(np.max(ratio_s)), float(np.max(ratio_g))
    ok = bool(np.isfinite(K1) and np.isfinite(K2))
    return DecayReport(t0, n, K1, K2, ok, samples)


def decay_ratios(tau, z, t0, n: int = 2):
    """Ratios ``|S_n| / e^{-|z|^2/8t0}`` and ``|grad S_n| / e^{-|z|^2/8t0}``, in log space."""
    tau = np.asarray(tau, dtype=float)
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    pos = tau > 0
    ts = np.where(pos, tau, 1.0)
    # log S + r^2/8t0 ; S vanishes identically for tau = 0
    log_s = -0.5 * n * np.log(4 * np.pi * ts) - r2 / (4 * ts) + r2 / (8 * t0)
    ratio_s = np.where(pos, np.exp(log_s), 0.0)
    ratio_g = np.where(pos, ratio_s * np.sqrt(r2) / (2 * ts), 0.0)
    return ratio_s, ratio_g
