"""Decoupled per-pixel minimization of the log-domain data term.

Each pixel solves

    min_z  phi(z) = z + exp(g - z) + (a / 2) * (z - c)**2,   a > 0,

whose derivative ``1 - exp(g - z) + a * (z - c)`` is increasing and concave.
The derivative is <= 0 at ``min(g, c)`` and >= 0 at ``max(g, c)``, so the
minimizer lies in that interval. Newton starts from the better (smaller
``|phi'|``) of two one-step fixed-point guesses clipped to the interval,

    g - log(1 + a * (g - c))        exact as a -> 0
    c - (1 - exp(g - c)) / a        exact as a -> inf

Pixels on which Newton leaves the interval, stops reducing ``|phi'|``, or
misses the tolerance are finished by bisection on the interval narrowed by
the Newton iterates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PixelProblem",
    "DEFAULT_NEWTON_ITERS",
    "DEFAULT_SAFEGUARD_TOL",
    "derivative",
    "initial_guess",
    "newton_iterates",
    "solve",
    "solve_pixel",
    "solve_field",
]

DEFAULT_NEWTON_ITERS = 4
DEFAULT_SAFEGUARD_TOL = 1e-12


@dataclass(frozen=True)
class PixelProblem:
    g: float
    c: float
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"quadratic weight must be positive, got {self.a}")


def derivative(z, g, c, a):
    """``phi'(z) = 1 - exp(g - z) + a * (z - c)``."""
    return 1.0 - np.exp(g - z) + a * (z - c)


def initial_guess(g, c, a):
    lo = np.minimum(g, c)
    hi = np.maximum(g, c)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        z_small = g - np.log1p(np.maximum(a * (g - c), -1.0 + 1e-16))
        z_large = c - (1.0 - np.exp(g - c)) / a
        z_small = np.clip(np.nan_to_num(z_small, nan=hi), lo, hi)
        z_large = np.clip(np.nan_to_num(z_large, nan=lo), lo, hi)
        f_small = np.abs(derivative(z_small, g, c, a))
        f_large = np.abs(derivative(z_large, g, c, a))
    return np.where(f_large < f_small, z_large, z_small)


def newton_iterates(g: float, c: float, a: float, iters: int) -> list[float]:
    """Unsafeguarded Newton iterates ``[z0, z1, ..., z_iters]`` from :func:`initial_guess`."""
    z = float(initial_guess(g, c, a))
    path = [z]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iters):
            e = np.exp(g - z)
            z = z - (1.0 - e + a * (z - c)) / (e + a)
            path.append(float(z))
    return path


def _bisect(g, c, a, lo, hi, tol):
    """Vectorized bisection of ``phi'`` on ``[lo, hi]`` with ``phi'(lo) <= 0 <= phi'(hi)``."""
    z = 0.5 * (lo + hi)
    active = np.ones(z.shape, dtype=bool)
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return z
        l, h = lo[idx], hi[idx]
        m = 0.5 * (l + h)
        f = derivative(m, g[idx], c[idx], a[idx])
        z[idx] = m
        collapsed = (m <= l) | (m >= h)
        finished = (np.abs(f) <= tol) | collapsed
        neg = f < 0
        lo[idx] = np.where(neg, m, l)
        hi[idx] = np.where(neg, h, m)
        active[idx[finished]] = False


def solve(g, c, a, newton_iters: int = DEFAULT_NEWTON_ITERS, safeguard_tol: float = DEFAULT_SAFEGUARD_TOL):
    """Vectorized per-pixel minimizer; ``g``, ``c``, ``a`` broadcast together.

    Returns ``z`` with ``|phi'(z)| <= safeguard_tol``, or, where rounding makes
    that unreachable, the point at which the bisection bracket collapsed to
    adjacent floats.
    """
    if newton_iters < 1:
        raise ValueError("newton_iters must be at least 1")
    g, c, a = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (g, c, a)))
    shape = g.shape
    g, c, a = g.ravel(), c.ravel(), a.ravel()
    if np.any(a <= 0):
        raise ValueError("quadratic weight must be positive")

    lo = np.minimum(g, c)
    hi = np.maximum(g, c)
    z = initial_guess(g, c, a)
    with np.errstate(over="ignore"):
        fz = derivative(z, g, c, a)
    ok = np.ones(z.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(newton_iters):
            e = np.exp(g - z)
            z_new = z - fz / (e + a)
            inside = (z_new >= lo) & (z_new <= hi)
            ok &= inside
            z_new = np.where(inside, z_new, z)
            f_new = derivative(z_new, g, c, a)
            ok &= (np.abs(f_new) < np.abs(fz)) | (np.abs(f_new) <= safeguard_tol)
            # iterates keep narrowing the bracket whatever their fate
            lo = np.where(inside & (f_new < 0), z_new, lo)
            hi = np.where(inside & (f_new > 0), z_new, hi)
            z, fz = z_new, f_new
    ok &= np.abs(fz) <= safeguard_tol
    bad = np.flatnonzero(~ok)
    if bad.size:
        z[bad] = _bisect(g[bad], c[bad], a[bad], lo[bad].copy(), hi[bad].copy(), safeguard_tol)
    return z.reshape(shape)


def solve_pixel(
    p: PixelProblem, newton_iters: int = DEFAULT_NEWTON_ITERS, safeguard_tol: float = DEFAULT_SAFEGUARD_TOL
) -> float:
    return float(solve(p.g, p.c, p.a, newton_iters, safeguard_tol))


def solve_field(
    g: np.ndarray,
    u: np.ndarray,
    b: np.ndarray,
    tau: float,
    looks: float,
    newton_iters: int = DEFAULT_NEWTON_ITERS,
    safeguard_tol: float = DEFAULT_SAFEGUARD_TOL,
    threads: int = 1,
) -> np.ndarray:
    """Per-pixel minimizers with ``a = tau / looks`` and ``c = u + b``.

    Rows are split across ``threads`` workers; since pixels are independent
    the result does not depend on the split.
    """
    g = np.asarray(g, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (g.shape == u.shape == b.shape):
        raise ValueError(f"shape mismatch: g {g.shape}, u {u.shape}, b {b.shape}")
    if not (tau > 0 and looks > 0):
        raise ValueError("tau and looks must be positive")
    a = tau / looks
    c = u + b
    if threads <= 1 or g.shape[0] < 2 * threads:
        return solve(g, c, a, newton_iters, safeguard_tol)
    bounds = np.linspace(0, g.shape[0], threads + 1).astype(int)
    out = np.empty_like(g)

    def work(k):
        sl = slice(bounds[k], bounds[k + 1])
        out[sl] = solve(g[sl], c[sl], a, newton_iters, safeguard_tol)

    with ThreadPoolExecutor(threads) as pool:
        list(pool.map(work, range(threads)))
    return out
