"""Split Bregman (augmented Lagrangian) restoration of speckled images.

The log-domain problem ``min_z M * sum(z + exp(g - z)) + lam * TV(z)`` is
split as ``z = u``. Each outer iteration performs, in this order,

1. ``z <- argmin sum(z + exp(g - z)) + tau / (2M) * ||z - u - b||^2``
   (per-pixel Newton, :mod:`speckletv.newton_pixel`),
2. ``u <- argmin 0.5 * ||u - (z - b)||^2 + (lam / tau) * TV(u)``
   (Chambolle, :mod:`speckletv.tv`),

repeated ``inner_iters`` times, then ``b <- b - (z - u)``. Iteration stops
once ``||z_k - z_{k-1}||^2 / ||z_{k-1}||^2 < stop_tol``, tested from the
second iteration on: with ``z = u = g`` at start the first z-update
reproduces ``g`` exactly.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .image_core import DualField
from .newton_pixel import DEFAULT_NEWTON_ITERS, DEFAULT_SAFEGUARD_TOL, solve_field
from .noise_model import DataTermOverflowError, LogObservation, SpeckleModel, data_term
from .tv import ChambolleConfig, denoise, tv

__all__ = [
    "SolverConfig",
    "SolverState",
    "TraceRow",
    "RestoreResult",
    "SolverError",
    "TRACE_HEADER",
    "init_state",
    "step",
    "restore",
    "trace_to_csv",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

TRACE_HEADER = ("iter", "objective", "constraint_sq", "rel_change")


class SolverError(ArithmeticError):
    """Numerical failure inside the outer loop; ``iteration`` is 1-based."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the outer loop.

    ``tau=None`` selects ``2 * lam``. ``init_mode`` is ``"observation"``
    (``z = u = g``) or ``"zeros"``.
    """

    lam: float
    tau: Optional[float] = None
    inner_iters: int = 1
    newton_iters: int = DEFAULT_NEWTON_ITERS
    safeguard_tol: float = DEFAULT_SAFEGUARD_TOL
    chambolle: ChambolleConfig = field(default_factory=ChambolleConfig)
    warm_start_dual: bool = True
    stop_tol: float = 1e-4
    max_outer: int = 2000
    init_mode: str = "observation"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if self.inner_iters < 1 or self.newton_iters < 1 or self.max_outer < 1:
            raise ValueError("iteration counts must be positive")
        if self.init_mode not in ("observation", "zeros"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")

    @property
    def tau_value(self) -> float:
        return 2.0 * self.lam if self.tau is None else self.tau

    def with_lambda(self, lam: float) -> "SolverConfig":
        """Copy with a new ``lam``; a default ``tau`` keeps tracking ``2 * lam``."""
        return replace(self, lam=lam)


@dataclass(frozen=True)
class TraceRow:
    iter: int
    objective: float
    constraint_sq: float
    rel_change: float


@dataclass
class SolverState:
    z: np.ndarray
    u: np.ndarray
    b: np.ndarray
    dual: DualField
    iteration: int = 0


@dataclass
class RestoreResult:
    x_hat: np.ndarray
    z_final: np.ndarray
    u_final: np.ndarray
    b_final: np.ndarray
    iterations: int
    trace: list[TraceRow]
    converged: bool


def init_state(obs: LogObservation, cfg: SolverConfig) -> SolverState:
    g = obs.g
    if cfg.init_mode == "observation":
        z, u = g.copy(), g.copy()
    else:
        z, u = np.zeros_like(g), np.zeros_like(g)
    return SolverState(z=z, u=u, b=np.zeros_like(g), dual=DualField.zeros(g.shape))


def step(
    state: SolverState, obs: LogObservation, model: SpeckleModel, cfg: SolverConfig, threads: int = 1
) -> tuple[SolverState, TraceRow]:
    """Run one outer iteration; ``state`` is left untouched."""
    k = state.iteration + 1
    tau = cfg.tau_value
    weight = cfg.lam / tau
    u, b, dual = state.u, state.b, state.dual
    z = state.z
    for _ in range(cfg.inner_iters):
        z = solve_field(obs.g, u, b, tau, model.looks, cfg.newton_iters, cfg.safeguard_tol, threads)
        u, dual = denoise(z - b, weight, cfg.chambolle, dual if cfg.warm_start_dual else None)
    b = b - (z - u)
    if not np.all(np.isfinite(z)):
        raise SolverError("non-finite log-image iterate", k)

    try:
        obj = data_term(z, obs, model) + cfg.lam * tv(z)
    except DataTermOverflowError as exc:
        raise SolverError(str(exc), k) from exc
    prev_sq = float(np.vdot(state.z, state.z))
    diff_sq = float(np.vdot(z - state.z, z - state.z))
    rel = diff_sq / prev_sq if prev_sq > 0 else float("inf")
    row = TraceRow(k, obj, float(np.vdot(z - u, z - u)), rel)
    return SolverState(z=z, u=u, b=b, dual=dual, iteration=k), row


def restore(
    obs: LogObservation,
    model: SpeckleModel,
    cfg: SolverConfig,
    threads: int = 1,
    callback: Callable[[TraceRow], None] | None = None,
) -> RestoreResult:
    """Estimate the clean intensity image ``x_hat = exp(z)`` from ``obs``."""
    if not np.all(np.isfinite(obs.g)):
        raise ValueError("log observation contains non-finite values")
    state = init_state(obs, cfg)
    trace: list[TraceRow] = []
    converged = False
    while state.iteration < cfg.max_outer:
        state, row = step(state, obs, model, cfg, threads)
        trace.append(row)
        if callback is not None:
            callback(row)
        if row.iter >= 2 and row.rel_change < cfg.stop_tol:
            converged = True
            break
    if not converged:
        log.warning("stopped at max_outer=%d without meeting stop_tol", cfg.max_outer)
    return RestoreResult(
        x_hat=np.exp(state.z),
        z_final=state.z,
        u_final=state.u,
        b_final=state.b,
        iterations=state.iteration,
        trace=trace,
        converged=converged,
    )


def trace_to_csv(trace: list[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in trace:
        w.writerow([r.iter, repr(r.objective), repr(r.constraint_sq), repr(r.rel_change)])
    return buf.getvalue()


def write_trace_csv(trace: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv(trace))
