"""Poincaré sections on P = 0 and largest Lyapunov exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import StateVector
from .integrator import (
    IntegratorConfig,
    IntegrationError,
    _check_status,
    _dopri5,
    _EMPTY,
    integrate_adaptive,
    locate_events,
)

__all__ = [
    "PoincareSection",
    "LyapunovEstimate",
    "ChaosConfig",
    "poincare_section",
    "lyapunov_max",
    "epsilon_distinct_count",
    "plateau_index",
]

DIRECTIONS = ("both", "upward", "downward")


@dataclass(frozen=True)
class ChaosConfig:
    delta0: float = 1e-8
    renorm_dt: float = math.pi / 2
    # chaos is declared above this exponent; calibrated on certified orbits
    chaos_threshold: float = 0.01
    perturbation: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14


@dataclass(frozen=True)
class PoincareSection:
    points: np.ndarray  # (n, 2) rows of (Mx, My)
    crossing_times: np.ndarray
    directions: np.ndarray
    direction_filter: str = "both"
    degenerate: bool = False

    def __post_init__(self):
        if self.points.shape[0] != self.crossing_times.shape[0]:
            raise ValueError("points and crossing_times differ in length")
        if self.crossing_times.size > 1 and not np.all(np.diff(self.crossing_times) > 0):
            raise ValueError("crossing times must be strictly increasing")

    def __len__(self):
        return int(self.crossing_times.size)


def poincare_section(init, tau_end, direction="both", cfg: IntegratorConfig | None = None,
                     traj=None) -> PoincareSection:
    """Sample ``(Mx, My)`` wherever P changes sign on ``[0, tau_end]``.

    ``direction`` keeps both crossings, only upward (dP/dτ > 0) or only
    downward ones.  A trajectory with P identically zero gives an empty,
    ``degenerate`` section.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if tau_end <= 0:
        raise ValueError("tau_end must be positive")
    if traj is None:
        traj = integrate_adaptive(init, tau_end, cfg or IntegratorConfig())
    events = locate_events(traj, 4)
    keep = np.ones(len(events), dtype=bool)
    if direction == "upward":
        keep = events.directions > 0
    elif direction == "downward":
        keep = events.directions < 0
    return PoincareSection(
        points=events.states[keep][:, :2].copy(),
        crossing_times=events.times[keep].copy(),
        directions=events.directions[keep].copy(),
        direction_filter=direction,
        degenerate=events.degenerate,
    )


def epsilon_distinct_count(section, eps) -> np.ndarray:
    """Greedy ε-cover size after each prefix of the section's points.

    A point opens a new representative when it is at least ``eps`` away from
    every representative so far (insertion order).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = section.points if isinstance(section, PoincareSection) else np.asarray(section, float)
    return _greedy_cover(np.ascontiguousarray(pts, dtype=float), float(eps))


@njit(cache=True, nogil=True)
def _greedy_cover(pts, eps):
    n = pts.shape[0]
    hist = np.empty(n, dtype=np.int64)
    reps = np.empty((n, pts.shape[1]))
    m = 0
    eps2 = eps * eps
    for i in range(n):
        new = True
        for j in range(m):
            d2 = 0.0
            for k in range(pts.shape[1]):
                d2 += (pts[i, k] - reps[j, k]) ** 2
            if d2 < eps2:
                new = False
                break
        if new:
            reps[m] = pts[i]
            m += 1
        hist[i] = m
    return hist


def plateau_index(history) -> int:
    """Index after which the count history never grows again (len if empty)."""
    h = np.asarray(history)
    if h.size == 0:
        return 0
    grows = np.nonzero(np.diff(h) > 0)[0]
    return int(grows[-1] + 1) if grows.size else 0


@dataclass(frozen=True)
class LyapunovEstimate:
    lambda_max: float
    history: np.ndarray  # running estimate after each renormalization
    times: np.ndarray
    renorm_interval: float
    delta0: float = 1e-8
    extras: dict = field(default_factory=dict)

    def spread_last_quarter(self) -> float:
        q = self.history[3 * self.history.size // 4:]
        return float(q.max() - q.min()) if q.size else 0.0


@njit(cache=True)
def _doubled_rhs(t, z, params, out):
    for k in (0, 5):
        mx = z[k]
        my = z[k + 1]
        mz = z[k + 2]
        x = z[k + 3]
        out[k] = 2.0 * x * mz
        out[k + 1] = -2.0 * mz
        out[k + 2] = 2.0 * my - 2.0 * x * mx
        out[k + 3] = z[k + 4]
        out[k + 4] = -2.0 * my


def lyapunov_max(init, tau_total, renorm_dt=math.pi / 2, cfg: ChaosConfig = ChaosConfig(),
                 max_steps=5_000_000) -> LyapunovEstimate:
    """Two-trajectory Benettin estimate of the largest Lyapunov exponent.

    Reference and companion are advanced together as one 10-dimensional
    system (shared steps), the separation is measured and rescaled to
    ``cfg.delta0`` every ``renorm_dt``.
    """
    if tau_total < 100 * renorm_dt:
        raise ValueError("tau_total must cover at least 100 renormalization intervals")
    z = init.as_array() if isinstance(init, StateVector) else np.asarray(init, float).copy()
    u = np.asarray(cfg.perturbation, dtype=float)
    u = u / np.linalg.norm(u)
    d0 = cfg.delta0
    n = int(round(tau_total / renorm_dt))
    pair = np.concatenate([z, z + d0 * u])
    logs = np.empty(n)
    steps = 0
    for i in range(n):
        _, st, _, _, _, n_acc, n_rej, status, t_stop = _dopri5(
            _doubled_rhs, pair, 0.0, renorm_dt, _EMPTY, cfg.rel_tol, cfg.abs_tol,
            0.5, np.inf, max_steps, False,
        )
        if status:
            _check_status(status, i * renorm_dt + t_stop)
        steps += n_acc + n_rej
        if steps > max_steps:
            raise IntegrationError("step budget exhausted", (i + 1) * renorm_dt)
        a, b = st[0, :5], st[0, 5:]
        sep = b - a
        d = float(np.linalg.norm(sep))
        if d == 0.0:
            logs[i] = -np.inf
            pair = np.concatenate([a, a + d0 * u])
        else:
            logs[i] = math.log(d / d0)
            pair = np.concatenate([a, a + sep * (d0 / d)])
    times = renorm_dt * np.arange(1, n + 1)
    history = np.cumsum(logs) / times
    return LyapunovEstimate(float(history[-1]), history, times, renorm_dt, d0,
                            {"steps": steps})
