"""Isotropic total variation and Chambolle's dual projection denoiser."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .image_core import DualField, forward_diff

__all__ = ["ChambolleConfig", "tv", "denoise"]


@dataclass(frozen=True)
class ChambolleConfig:
    """Settings for :func:`denoise`.

    ``tol`` stops the iteration once the largest pointwise change of the dual
    field drops to ``tol`` or below; ``tol=0`` runs exactly ``max_iters``.
    """

    step: float = 0.248
    max_iters: int = 10
    tol: float = 0.0

    def __post_init__(self):
        if not 0 < self.step <= 0.25:
            raise ValueError(f"dual step must lie in (0, 0.25], got {self.step}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


def tv(z: np.ndarray) -> float:
    """Sum over pixels of the Euclidean norm of the forward-difference gradient."""
    dh, dv = forward_diff(z)
    return float(np.sum(np.hypot(dh, dv)))


@numba.njit(cache=True, nogil=True)
def _div(ph, pv, out):
    # same accumulation order as image_core.divergence, so results agree bitwise
    h, w = ph.shape
    for r in range(h):
        for c in range(w):
            acc = 0.0
            if c < w - 1:
                acc += ph[r, c]
            if c > 0:
                acc -= ph[r, c - 1]
            if r < h - 1:
                acc += pv[r, c]
            if r > 0:
                acc -= pv[r - 1, c]
            out[r, c] = acc


@numba.njit(cache=True, nogil=True)
def _chambolle(v, weight, ph, pv, tau, max_iters, tol):
    """Iterate in place on one image; returns ``u = v - weight * div(p)``."""
    h, w = v.shape
    d = np.empty((h, w))
    for _ in range(max_iters):
        _div(ph, pv, d)
        for r in range(h):
            for c in range(w):
                d[r, c] = d[r, c] - v[r, c] / weight
        change = 0.0
        for r in range(h):
            for c in range(w):
                gh = d[r, c + 1] - d[r, c] if c < w - 1 else 0.0
                gv = d[r + 1, c] - d[r, c] if r < h - 1 else 0.0
                denom = 1.0 + tau * math.hypot(gh, gv)
                nh = (ph[r, c] + tau * gh) / denom
                nv = (pv[r, c] + tau * gv) / denom
                # |p| <= 1 holds in exact arithmetic; guard against rounding
                norm = max(math.hypot(nh, nv), 1.0)
                nh /= norm
                nv /= norm
                change = max(change, abs(nh - ph[r, c]), abs(nv - pv[r, c]))
                ph[r, c] = nh
                pv[r, c] = nv
        if tol > 0 and change <= tol:
            break
    _div(ph, pv, d)
    return v - weight * d


def denoise(
    v: np.ndarray,
    weight: float,
    cfg: ChambolleConfig | None = None,
    warm_start: DualField | None = None,
) -> tuple[np.ndarray, DualField]:
    """Approximately minimize ``0.5 * ||u - v||^2 + weight * TV(u)``.

    Parameters
    ----------
    v : ndarray
        Image to denoise, or a stack of images along leading axes; each image
        is iterated and stopped independently.
    weight : float
        Regularization weight, ``>= 0``.
    cfg : ChambolleConfig, optional
        Step size, iteration cap and tolerance.
    warm_start : DualField, optional
        Dual field to start from, typically the one returned by a previous
        call on a nearby problem.

    Returns
    -------
    u : ndarray
        Denoised image ``v - weight * div(p)``.
    p : DualField
        Final dual field; pointwise ``|p| <= 1``.
    """
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    cfg = cfg or ChambolleConfig()
    v = np.asarray(v, dtype=np.float64)
    if v.ndim < 2:
        raise ValueError(f"expected an image or a stack of images, got shape {v.shape}")
    if warm_start is None:
        ph, pv = np.zeros_like(v), np.zeros_like(v)
    else:
        ph, pv = (np.array(c, dtype=np.float64) for c in warm_start)
        if ph.shape != v.shape or pv.shape != v.shape:
            raise ValueError("warm-start dual field does not match the image shape")
    if weight == 0.0:
        return v.copy(), DualField(ph, pv)

    flat_v = np.ascontiguousarray(v).reshape((-1,) + v.shape[-2:])
    flat_h = ph.reshape(flat_v.shape)
    flat_v_dual = pv.reshape(flat_v.shape)
    u = np.empty_like(flat_v)
    for i in range(flat_v.shape[0]):
        u[i] = _chambolle(flat_v[i], float(weight), flat_h[i], flat_v_dual[i], cfg.step, cfg.max_iters, cfg.tol)
    return u.reshape(v.shape), DualField(ph, pv)
