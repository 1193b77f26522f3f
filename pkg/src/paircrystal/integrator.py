"""Time stepping for the pair-field flow.

Two schemes share one trajectory representation:

* ``adaptive_rk`` -- Dormand-Prince 5(4) with step control on the embedded
  error estimate and the free fourth-order continuous extension for dense
  output.
* ``strang_split`` -- fixed-step Strang splitting, half step of the (X, P)
  drive, exact rotation of M about Ω = (2, 2X, 0), half step of the drive.
  |M|² is preserved to rounding.

Dense output is stored per segment in the Hairer form
``y = r0 + θ(r1 + (1-θ)(r2 + θ(r3 + (1-θ) r4)))``.  For the splitting
scheme ``r4 = 0``, which is exactly the cubic Hermite interpolant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import StateVector, rhs as pair_rhs

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "Trajectory",
    "EventSet",
    "integrate",
    "integrate_adaptive",
    "integrate_splitting",
    "propagate",
    "locate_events",
]

# Dormand-Prince 5(4) tableau.
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
)
A71, A73, A74, A75, A76 = (
    35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
)
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0
)
D1, D3, D4, D5, D6, D7 = (
    -12715105075.0 / 11282082432.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
)

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_ESCAPE = 2
STATUS_MAXSTEPS = 3


class IntegrationError(RuntimeError):
    """Step-size underflow or step budget exhausted; carries the failure time."""

    def __init__(self, message, time):
        super().__init__(f"{message} at tau={time:.17g}")
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.5
    method: str = "adaptive_rk"
    fixed_dt: float = 1e-3
    sample_dt: float = math.pi / 100

    def __post_init__(self):
        if self.method not in ("adaptive_rk", "strang_split"):
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not self.fixed_dt > 0:
            raise ValueError("fixed_dt must be positive")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _dp_step(f, t, y, h, k1, params):
    n = y.shape[0]
    tmp = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    y1 = np.empty(n)
    for i in range(n):
        tmp[i] = y[i] + h * A21 * k1[i]
    f(t + C2 * h, tmp, params, k2)
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    f(t + C3 * h, tmp, params, k3)
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    f(t + C4 * h, tmp, params, k4)
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    f(t + C5 * h, tmp, params, k5)
    for i in range(n):
        tmp[i] = y[i] + h * (
            A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]
        )
    f(t + h, tmp, params, k6)
    for i in range(n):
        y1[i] = y[i] + h * (
            A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]
        )
    f(t + h, y1, params, k7)
    err = np.empty(n)
    dens = np.empty(n)
    for i in range(n):
        err[i] = h * (
            E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]
        )
        dens[i] = h * (
            D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]
        )
    return y1, k7, err, dens


@njit(cache=True)
def _error_norm(err, y0, y1, rtol, atol):
    s = 0.0
    n = y0.shape[0]
    for i in range(n):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        s += (err[i] / sc) ** 2
    return math.sqrt(s / n)


@njit(cache=True)
def _initial_step(f, t0, y0, k1, direction, params, rtol, atol, max_step):
    n = y0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = np.empty(n)
    for i in range(n):
        y1[i] = y0[i] + direction * h0 * k1[i]
    k2 = np.empty(n)
    f(t0 + direction * h0, y1, params, k2)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d2 += ((k2[i] - k1[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, max_step)


@njit(cache=True)
def _dopri5(f, y0, t0, t_end, params, rtol, atol, max_step, escape, max_steps, dense):
    """Adaptive integration from ``t0`` to ``t_end`` (either direction).

    Returns (knots, states, seg_start, seg_h, coeffs, n_acc, n_rej, status, t_stop).
    When ``dense`` is False only the endpoint is kept.
    """
    n = y0.shape[0]
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    cap = 256 if dense else 1
    knots = np.empty(cap + 1)
    states = np.empty((cap + 1, n))
    seg_start = np.empty(cap)
    seg_h = np.empty(cap)
    coeffs = np.empty((cap, 5, n))
    knots[0] = t0
    states[0, :] = y0
    y = y0.copy()
    t = t0
    k1 = np.empty(n)
    f(t, y, params, k1)
    n_acc = 0
    n_rej = 0
    status = STATUS_OK
    if span == 0.0:
        return knots[:1], states[:1], seg_start[:0], seg_h[:0], coeffs[:0], 0, 0, status, t
    h = _initial_step(f, t0, y0, k1, direction, params, rtol, atol, max_step)
    facmax = 10.0
    while True:
        remaining = abs(t_end - t)
        if remaining <= 1e-14 * max(1.0, abs(t_end)):
            break
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAXSTEPS
            break
        last = False
        if h >= remaining:
            h = remaining
            last = True
        if h < 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0):
            status = STATUS_UNDERFLOW
            break
        hs = direction * h
        y1, k7, errv, dens = _dp_step(f, t, y, hs, k1, params)
        err = _error_norm(errv, y, y1, rtol, atol)
        if err <= 1.0:
            t_new = t_end if last else t + hs
            if dense:
                if n_acc + 1 > cap:
                    newcap = cap * 2
                    kn = np.empty(newcap + 1)
                    st = np.empty((newcap + 1, n))
                    ss = np.empty(newcap)
                    sh = np.empty(newcap)
                    cf = np.empty((newcap, 5, n))
                    kn[: cap + 1] = knots
                    st[: cap + 1] = states
                    ss[:cap] = seg_start
                    sh[:cap] = seg_h
                    cf[:cap] = coeffs
                    knots, states, seg_start, seg_h, coeffs = kn, st, ss, sh, cf
                    cap = newcap
                j = n_acc
                seg_start[j] = t
                seg_h[j] = t_new - t
                for i in range(n):
                    dy = y1[i] - y[i]
                    bsp = hs * k1[i] - dy
                    coeffs[j, 0, i] = y[i]
                    coeffs[j, 1, i] = dy
                    coeffs[j, 2, i] = bsp
                    coeffs[j, 3, i] = dy - hs * k7[i] - bsp
                    coeffs[j, 4, i] = dens[i]
                knots[j + 1] = t_new
                states[j + 1, :] = y1
            else:
                knots[0] = t_new
                states[0, :] = y1
            n_acc += 1
            t = t_new
            y = y1
            for i in range(n):
                k1[i] = k7[i]
            blown = False
            for i in range(n):
                if not math.isfinite(y[i]) or abs(y[i]) > escape:
                    blown = True
            if blown:
                status = STATUS_ESCAPE
                break
            fac = facmax if err == 0.0 else min(facmax, max(0.2, 0.9 * err ** -0.2))
            h = min(h * fac, max_step)
            facmax = 10.0
        else:
            n_rej += 1
            h = h * max(0.2, 0.9 * err ** -0.2)
            facmax = 1.0
    if dense:
        m = n_acc
        return (knots[: m + 1], states[: m + 1], seg_start[:m], seg_h[:m], coeffs[:m],
                n_acc, n_rej, status, t)
    return knots[:1], states[:1], seg_start[:0], seg_h[:0], coeffs[:0], n_acc, n_rej, status, t


@njit(cache=True)
def _rotate(m, x, dt):
    """Exact flow of dM/dτ = Ω × M with Ω = (2, 2x, 0) over ``dt`` (Rodrigues)."""
    norm = 2.0 * math.sqrt(1.0 + x * x)
    kx = 2.0 / norm
    ky = 2.0 * x / norm
    theta = norm * dt
    c = math.cos(theta)
    s = math.sin(theta)
    mx, my, mz = m[0], m[1], m[2]
    kdotm = kx * mx + ky * my
    # k × M with k = (kx, ky, 0)
    cx = ky * mz
    cy = -kx * mz
    cz = kx * my - ky * mx
    m[0] = mx * c + cx * s + kx * kdotm * (1.0 - c)
    m[1] = my * c + cy * s + ky * kdotm * (1.0 - c)
    m[2] = mz * c + cz * s


@njit(cache=True)
def _drive(z, dt):
    """Exact flow of dX/dτ = P, dP/dτ = -2 My with M frozen."""
    p_mid = z[4] - z[1] * dt
    z[3] += dt * p_mid
    z[4] -= 2.0 * z[1] * dt


@njit(cache=True)
def _strang(y0, n_steps, dt, stride):
    n_out = n_steps // stride + 1
    if n_steps % stride:
        n_out += 1
    out = np.empty((n_out, 5))
    idx = np.empty(n_out, dtype=np.int64)
    z = y0.copy()
    m = np.empty(3)
    out[0] = z
    idx[0] = 0
    j = 1
    half = 0.5 * dt
    for step in range(1, n_steps + 1):
        _drive(z, half)
        m[0], m[1], m[2] = z[0], z[1], z[2]
        _rotate(m, z[3], dt)
        z[0], z[1], z[2] = m[0], m[1], m[2]
        _drive(z, half)
        if step % stride == 0 or step == n_steps:
            out[j] = z
            idx[j] = step
            j += 1
    return out[:j], idx[:j]


# ---------------------------------------------------------------------------
# trajectory container


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered samples plus piecewise-polynomial dense output.

    ``times``/``states`` are the step knots; segment ``i`` covers
    ``[times[i], times[i+1]]`` and is parameterized from ``seg_start[i]`` with
    signed step ``seg_h[i]`` (negative for backward runs).
    """

    times: np.ndarray
    states: np.ndarray
    seg_start: np.ndarray
    seg_h: np.ndarray
    coeffs: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states differ in length")
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite state in trajectory")

    @classmethod
    def from_samples(cls, times, states, stats=None) -> "Trajectory":
        """Trajectory with piecewise-linear dense output through given samples."""
        times = np.ascontiguousarray(times, dtype=float)
        states = np.ascontiguousarray(states, dtype=float)
        h = np.diff(times)
        coeffs = np.zeros((h.size, 5, states.shape[1]))
        coeffs[:, 0] = states[:-1]
        coeffs[:, 1] = np.diff(states, axis=0)
        return cls(times, states, times[:-1].copy(), h, coeffs, dict(stats or {"method": "samples"}))

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def final(self) -> StateVector:
        return StateVector.from_array(self.states[-1])

    @property
    def initial(self) -> StateVector:
        return StateVector.from_array(self.states[0])

    def __call__(self, tau):
        """Evaluate the dense output at scalar or array ``tau``."""
        tau = np.asarray(tau, dtype=float)
        scalar = tau.ndim == 0
        tt = np.atleast_1d(tau)
        lo, hi = self.times[0], self.times[-1]
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(tt < lo - slack) or np.any(tt > hi + slack):
            raise ValueError(f"tau outside trajectory span [{lo}, {hi}]")
        if self.coeffs.shape[0] == 0:
            out = np.repeat(self.states[:1], tt.size, axis=0)
            return out[0] if scalar else out
        seg = np.clip(np.searchsorted(self.times, tt, side="right") - 1, 0, self.coeffs.shape[0] - 1)
        theta = ((tt - self.seg_start[seg]) / self.seg_h[seg])[:, None]
        th1 = 1.0 - theta
        c = self.coeffs[seg]
        out = c[:, 0] + theta * (c[:, 1] + th1 * (c[:, 2] + theta * (c[:, 3] + th1 * c[:, 4])))
        return out[0] if scalar else out

    def sample(self, dt, t_start=None, t_stop=None):
        """Uniform resampling; returns ``(taus, states)``."""
        a = self.t0 if t_start is None else t_start
        b = self.t_end if t_stop is None else t_stop
        n = int(math.floor((b - a) / dt * (1 + 1e-12))) + 1
        taus = a + dt * np.arange(n)
        return taus, self(taus)

    def invariant_drift(self):
        """Max |H(τ) − H(0)| and max |M²(τ) − M²(0)| over the knots."""
        z = self.states
        h = 0.5 * z[:, 4] ** 2 + 2.0 * z[:, 3] * z[:, 1] + 2.0 * z[:, 0]
        m2 = z[:, 0] ** 2 + z[:, 1] ** 2 + z[:, 2] ** 2
        return float(np.max(np.abs(h - h[0]))), float(np.max(np.abs(m2 - m2[0])))


def _as_array(s0):
    if isinstance(s0, StateVector):
        return s0.as_array()
    arr = np.asarray(s0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite initial state")
    return arr.copy()


def _check_status(status, t_stop, allow_escape=False):
    if status == STATUS_UNDERFLOW:
        raise IntegrationError("step size underflow", t_stop)
    if status == STATUS_MAXSTEPS:
        raise IntegrationError("step budget exhausted", t_stop)
    if status == STATUS_ESCAPE and not allow_escape:
        raise IntegrationError("solution left the finite range", t_stop)


_EMPTY = np.zeros(1)


def solve_adaptive(f, y0, t0, t_end, rtol, atol, max_step=np.inf, params=_EMPTY,
                   escape=np.inf, max_steps=10_000_000, allow_escape=False):
    """Dense Dormand-Prince run of an arbitrary compiled right-hand side.

    ``f(t, y, params, out)`` must be a numba ``njit`` function.  Backward
    runs are returned with ascending knots.  The returned trajectory's
    ``stats['status']`` is ``'escaped'`` when integration stopped on
    ``escape`` (only allowed with ``allow_escape``).
    """
    y0 = np.ascontiguousarray(y0, dtype=float)
    kn, st, ss, sh, cf, n_acc, n_rej, status, t_stop = _dopri5(
        f, y0, float(t0), float(t_end), params, float(rtol), float(atol),
        float(max_step), float(escape), int(max_steps), True,
    )
    _check_status(status, t_stop, allow_escape)
    if t_end < t0:
        kn, st, ss, sh, cf = kn[::-1], st[::-1], ss[::-1], sh[::-1], cf[::-1]
    stats = {
        "method": "adaptive_rk",
        "accepted": int(n_acc),
        "rejected": int(n_rej),
        "status": "escaped" if status == STATUS_ESCAPE else "ok",
        "t_stop": float(t_stop),
    }
    return Trajectory(np.ascontiguousarray(kn), np.ascontiguousarray(st),
                      np.ascontiguousarray(ss), np.ascontiguousarray(sh),
                      np.ascontiguousarray(cf), stats)


def integrate_adaptive(s0, tau_end, cfg: IntegratorConfig = IntegratorConfig(), tau0=0.0):
    """Adaptive run of the pair-field flow over ``[tau0, tau_end]``."""
    if tau_end == tau0:
        raise ValueError("tau_end must differ from tau0")
    traj = solve_adaptive(pair_rhs, _as_array(s0), tau0, tau_end, cfg.rel_tol,
                          cfg.abs_tol, cfg.max_step)
    dh, dm = traj.invariant_drift()
    traj.stats.update(max_H_drift=dh, max_Msq_drift=dm)
    return traj


def propagate(z0, tau, rel_tol=1e-10, abs_tol=1e-12, max_step=0.5):
    """Endpoint of the adaptive flow after time ``tau`` (no dense output)."""
    y0 = np.ascontiguousarray(z0, dtype=float)
    _, st, _, _, _, _, _, status, t_stop = _dopri5(
        pair_rhs, y0, 0.0, float(tau), _EMPTY, float(rel_tol), float(abs_tol),
        float(max_step), np.inf, 10_000_000, False,
    )
    _check_status(status, t_stop)
    return st[0].copy()


def integrate_splitting(s0, tau_end, cfg: IntegratorConfig = IntegratorConfig(method="strang_split"),
                        store_every=None):
    """Strang-split run with step ``cfg.fixed_dt`` (shrunk to land on ``tau_end``).

    Knots are stored every ``store_every`` steps (default: about one per
    ``cfg.sample_dt``); dense output between knots is cubic Hermite.
    """
    if tau_end <= 0:
        raise ValueError("tau_end must be positive")
    n_steps = max(1, int(math.ceil(tau_end / cfg.fixed_dt - 1e-9)))
    dt = tau_end / n_steps
    if store_every is None:
        store_every = max(1, int(round(cfg.sample_dt / dt)))
    y0 = _as_array(s0)
    states, idx = _strang(y0, n_steps, dt, int(store_every))
    times = idx * dt
    times[-1] = tau_end
    ders = np.empty_like(states)
    for i in range(states.shape[0]):
        pair_rhs(0.0, states[i], _EMPTY, ders[i])
    h = np.diff(times)
    dy = np.diff(states, axis=0)
    coeffs = np.zeros((h.size, 5, 5))
    coeffs[:, 0] = states[:-1]
    coeffs[:, 1] = dy
    coeffs[:, 2] = h[:, None] * ders[:-1] - dy
    coeffs[:, 3] = dy - h[:, None] * ders[1:] - coeffs[:, 2]
    traj = Trajectory(times, states, times[:-1].copy(), h, coeffs,
                      {"method": "strang_split", "steps": n_steps, "dt": dt})
    dh, dm = traj.invariant_drift()
    traj.stats.update(max_H_drift=dh, max_Msq_drift=dm)
    return traj


def integrate(s0, tau_end, cfg: IntegratorConfig = IntegratorConfig()):
    if cfg.method == "strang_split":
        return integrate_splitting(s0, tau_end, cfg)
    return integrate_adaptive(s0, tau_end, cfg)


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class EventSet:
    """Refined sign changes of a scalar function along a trajectory."""

    times: np.ndarray
    states: np.ndarray
    directions: np.ndarray  # +1 upward, -1 downward
    tangent: np.ndarray
    degenerate: bool = False

    def __len__(self):
        return int(self.times.size)

    def __iter__(self):
        for t, z in zip(self.times, self.states):
            yield float(t), StateVector.from_array(z)


def _flow(z):
    out = np.empty(5)
    pair_rhs(0.0, z, _EMPTY, out)
    return out


def _event_values(event, states):
    if callable(event):
        return np.asarray(event(states), dtype=float)
    return states[..., int(event)]


def locate_events(traj: Trajectory, event=4, tol=1e-12, tangent_tol=1e-8) -> EventSet:
    """Sign changes of ``event`` (component index, default P, or a function of
    an ``(n, 5)`` state array), bracketed on the knots and bisected on the
    dense output to ``tol`` in τ.
    """
    g = _event_values(event, traj.states)
    if not np.any(g != 0.0):
        empty = np.empty(0)
        return EventSet(empty, np.empty((0, traj.states.shape[1])), empty, empty.astype(bool), True)
    # a knot where g == 0 exactly is itself a root when g changes sign across it
    sgn = np.sign(g)
    lo_idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    exact = np.nonzero((sgn[1:-1] == 0) & (sgn[:-2] * sgn[2:] < 0))[0] + 1
    a = traj.times[lo_idx].copy()
    b = traj.times[lo_idx + 1].copy()
    ga = g[lo_idx]
    while a.size and np.max(b - a) > tol:
        mid = 0.5 * (a + b)
        gm = _event_values(event, traj(mid))
        left = np.sign(gm) == np.sign(ga)
        a = np.where(left, mid, a)
        ga = np.where(left, gm, ga)
        b = np.where(left, b, mid)
        hit = gm == 0.0
        a = np.where(hit, mid, a)
        b = np.where(hit, mid, b)
    roots = 0.5 * (a + b)
    if exact.size:
        roots = np.concatenate([roots, traj.times[exact]])
        order = np.argsort(roots)
        roots = roots[order]
    states = traj(roots) if roots.size else np.empty((0, traj.states.shape[1]))
    # direction and tangency from the slope of g along the flow
    if not roots.size:
        slope = np.empty(0)
    elif not callable(event) and states.shape[1] == 5:
        slope = np.array([_flow(z)[int(event)] for z in states])
    else:
        eps = 1e-7
        t_lo = np.maximum(roots - eps, traj.t0)
        t_hi = np.minimum(roots + eps, traj.t_end)
        slope = (_event_values(event, traj(t_hi)) - _event_values(event, traj(t_lo))) / (t_hi - t_lo)
    return EventSet(roots, states, np.sign(slope), np.abs(slope) < tangent_tol, False)
