"""Gamma speckle simulation and log-domain likelihood evaluation.

Speckle fields are generated with a Marsaglia-Tsang rejection sampler. Its
random inputs come from a counter-based Philox4x64-10 stream keyed by the
seed: the block used by pixel ``i`` on rejection attempt ``r`` is
``philox(counter=(i, r, 0, 0), key=(seed mod 2**64, seed >> 64))``. A pixel's
value therefore depends only on ``(seed, i)``, and any partition of the
pixels into chunks reproduces the sequential result bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .image_core import as_image
from .tv import tv

__all__ = [
    "SpeckleModel",
    "LogObservation",
    "DataTermOverflowError",
    "DEFAULT_CLAMP_FLOOR",
    "philox4x64",
    "sample_speckle",
    "apply_speckle",
    "to_log",
    "data_term",
    "objective",
    "log_pdf_speckle",
    "log_pdf_log_speckle",
]

DEFAULT_CLAMP_FLOOR = 1e-12

_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_PHILOX_M0 = 0xD2E7470EE14C6C93
_PHILOX_M1 = 0xCA5A826395121157
_PHILOX_W0 = 0x9E3779B97F4A7C15
_PHILOX_W1 = 0xBB67AE8584CAA73B
_TWO_M53 = 2.0**-53
# exp() overflows float64 just above this
_EXP_MAX = 709.78


class DataTermOverflowError(FloatingPointError):
    """``exp(g - z)`` overflowed; ``z`` lies far below the log observation."""


@dataclass(frozen=True)
class SpeckleModel:
    """Fully developed M-look speckle: unit-mean Gamma noise of shape ``looks``."""

    looks: float

    def __post_init__(self):
        if not (self.looks > 0 and math.isfinite(self.looks)):
            raise ValueError(f"number of looks must be positive and finite, got {self.looks}")


@dataclass(frozen=True)
class LogObservation:
    """Log of an observed intensity image, ``g = log(max(y, clamp_floor))``."""

    g: np.ndarray
    clamp_floor: float = DEFAULT_CLAMP_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "g", as_image(self.g, name="log observation"))


# --------------------------------------------------------------------------
# Counter-based random numbers
# --------------------------------------------------------------------------


def _mulhilo(m: int, x: np.ndarray):
    """Full 64x64 -> 128 bit product of a constant and a uint64 array."""
    m_lo = np.uint64(m & 0xFFFFFFFF)
    m_hi = np.uint64(m >> 32)
    x_lo = x & _MASK32
    x_hi = x >> _SHIFT32
    ll = m_lo * x_lo
    lh = m_lo * x_hi
    hl = m_hi * x_lo
    hh = m_hi * x_hi
    mid = (ll >> _SHIFT32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _SHIFT32) + (hl >> _SHIFT32) + (mid >> _SHIFT32)
    lo = np.uint64(m) * x
    return hi, lo


def philox4x64(counter, key) -> np.ndarray:
    """Philox4x64-10 block function, vectorized over counters.

    ``counter`` is a sequence of four uint64 arrays (broadcastable), ``key``
    a pair of Python ints. Returns a ``(4, n)`` uint64 array. Matches
    ``numpy.random.Philox``, which increments its counter before each block.
    """
    x0, x1, x2, x3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    x0, x1, x2, x3 = np.broadcast_arrays(x0, x1, x2, x3)
    k0, k1 = key[0] & 0xFFFFFFFFFFFFFFFF, key[1] & 0xFFFFFFFFFFFFFFFF
    with np.errstate(over="ignore"):
        for rnd in range(10):
            hi0, lo0 = _mulhilo(_PHILOX_M0, x0)
            hi1, lo1 = _mulhilo(_PHILOX_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ np.uint64(k0), lo1, hi0 ^ x3 ^ np.uint64(k1), lo0
            k0 = (k0 + _PHILOX_W0) & 0xFFFFFFFFFFFFFFFF
            k1 = (k1 + _PHILOX_W1) & 0xFFFFFFFFFFFFFFFF
    return np.stack([x0, x1, x2, x3])


def _open_unit(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in (0, 1]."""
    return ((words >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _TWO_M53


def _seed_key(seed: int):
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return seed & 0xFFFFFFFFFFFFFFFF, (seed >> 64) & 0xFFFFFFFFFFFFFFFF


def _gamma_unit_mean(shape: float, index: np.ndarray, key) -> np.ndarray:
    """Marsaglia-Tsang draws of Gamma(shape, scale=1/shape) for pixel ``index``."""
    boost = shape < 1.0
    d = (shape + 1.0 if boost else shape) - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(index.shape, dtype=np.float64)
    pending = np.arange(index.size)
    attempt = 0
    while pending.size:
        w = philox4x64((index[pending], np.uint64(attempt), 0, 0), key)
        u1, u2, ua, ub = (_open_unit(w[j]) for j in range(4))
        # Box-Muller; u1 in (0, 1] keeps the log finite
        x = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        v = 1.0 + c * x
        ok = v > 0.0
        v = np.where(ok, v * v * v, 1.0)
        ok &= np.log(ua) < 0.5 * x * x + d - d * v + d * np.log(v)
        val = d * v
        if boost:
            val = val * ub ** (1.0 / shape)
        done = pending[ok]
        out[done] = val[ok]
        pending = pending[~ok]
        attempt += 1
    return out / shape


def sample_speckle(model: SpeckleModel, shape, seed: int, threads: int = 1) -> np.ndarray:
    """Draw an iid unit-mean Gamma field with variance ``1 / model.looks``.

    The result depends only on ``(model, shape, seed)``; ``threads`` only
    splits the work.
    """
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(s) for s in shape)
    n = math.prod(shape)
    if n <= 0:
        raise ValueError(f"shape must be nonempty, got {shape}")
    key = _seed_key(int(seed))
    index = np.arange(n, dtype=np.uint64)
    if threads <= 1 or n < 65536:
        flat = _gamma_unit_mean(model.looks, index, key)
    else:
        chunks = np.array_split(index, threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ix: _gamma_unit_mean(model.looks, ix, key), chunks))
        flat = np.concatenate(parts)
    return flat.reshape(shape)


# --------------------------------------------------------------------------
# Observation model
# --------------------------------------------------------------------------


def apply_speckle(x: np.ndarray, noise: np.ndarray) -> np.ndarray:
    x = as_image(x, "clean image")
    noise = as_image(noise, "noise field")
    if x.shape != noise.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {noise.shape}")
    if np.any(x < 0):
        raise ValueError("clean image must be nonnegative")
    return x * noise


def to_log(y: np.ndarray, clamp_floor: float = DEFAULT_CLAMP_FLOOR) -> LogObservation:
    if not clamp_floor > 0:
        raise ValueError("clamp_floor must be positive")
    y = np.asarray(y, dtype=np.float64)
    return LogObservation(np.log(np.maximum(y, clamp_floor)), clamp_floor)


def log_pdf_speckle(n, looks: float):
    """Log density of unit-mean Gamma speckle with ``looks`` looks."""
    n = np.asarray(n, dtype=np.float64)
    m = float(looks)
    with np.errstate(divide="ignore"):
        return m * math.log(m) - gammaln(m) + (m - 1.0) * np.log(n) - m * n


def log_pdf_log_speckle(w, looks: float):
    """Log density of ``W = log N`` for unit-mean Gamma speckle ``N``."""
    w = np.asarray(w, dtype=np.float64)
    m = float(looks)
    return m * math.log(m) - gammaln(m) + m * w - m * np.exp(w)


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


def _exp_residual(z: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = g - z
    if r.size and r.max() > _EXP_MAX:
        idx = np.unravel_index(int(np.argmax(r)), r.shape)
        raise DataTermOverflowError(f"exp(g - z) overflows at pixel {idx} (g - z = {r[idx]:.4g})")
    return np.exp(r)


def data_term(z: np.ndarray, obs: LogObservation, model: SpeckleModel) -> float:
    """``M * sum(z + exp(g - z))``, the negative log-likelihood up to a constant."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != obs.g.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {obs.g.shape}")
    return float(model.looks * np.sum(z + _exp_residual(z, obs.g)))


def objective(z: np.ndarray, obs: LogObservation, model: SpeckleModel, lam: float) -> float:
    """Penalized negative log-likelihood ``data_term(z) + lam * tv(z)``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return data_term(z, obs, model) + lam * tv(z)
