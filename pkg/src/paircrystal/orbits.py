"""Search for periodic (time-crystal) orbits over the initial kinetic momentum X(0).

The orbits of interest have two time scales: the Zitterbewegung precession
of M with period π/√(1+X²) and a slow modulation of period T along which
pairs bunch periodically.  Periodicity is certified by the recurrence
residual ‖z(T) − z(0)‖₂ over all five components.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import STANDARD_INIT, StateVector
from .integrator import (
    IntegrationError,
    IntegratorConfig,
    Trajectory,
    integrate_adaptive,
    integrate_splitting,
)

__all__ = [
    "Thresholds",
    "OrbitCandidate",
    "SearchWindow",
    "ScanResult",
    "recurrence_residual",
    "recurrence_function",
    "estimate_period",
    "refine_orbit",
    "scan_time_crystals",
    "scan_points",
    "classify",
    "zitter_period",
    "short_period",
    "unit_cell",
    "UnitCell",
]

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
CLASSES = ("periodic", "quasiperiodic", "chaotic", "undetermined")


@dataclass(frozen=True)
class Thresholds:
    periodic: float = 1e-3
    quasiperiodic: float = 1e-1
    chaos_lambda: float = 0.01


def classify(residual, lambda_max=None, thresholds: Thresholds = Thresholds()) -> str:
    if residual <= thresholds.periodic:
        return "periodic"
    if lambda_max is not None and lambda_max > thresholds.chaos_lambda:
        return "chaotic"
    if residual <= thresholds.quasiperiodic:
        return "quasiperiodic"
    return "undetermined"


@dataclass(frozen=True)
class OrbitCandidate:
    init: StateVector
    period_T: float
    residual: float
    classification: str = "undetermined"
    degenerate: bool = False
    lambda_max: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.period_T > 0:
            raise ValueError("period must be positive")
        if self.residual < 0:
            raise ValueError("residual must be non-negative")
        if self.classification not in CLASSES:
            raise ValueError(f"unknown classification {self.classification!r}")

    @property
    def X0(self) -> float:
        return self.init.X


@dataclass(frozen=True)
class SearchWindow:
    X0_min: float
    X0_max: float
    grid_n: int = 41
    base_init: StateVector = STANDARD_INIT
    tau_horizon: float = 200 * math.pi

    def __post_init__(self):
        if not self.X0_min < self.X0_max:
            raise ValueError("X0_min must be below X0_max")
        if self.grid_n < 2:
            raise ValueError("grid_n must be at least 2")
        if not self.tau_horizon > 0:
            raise ValueError("tau_horizon must be positive")

    def grid(self) -> np.ndarray:
        return np.linspace(self.X0_min, self.X0_max, self.grid_n)


def zitter_period(X) -> float:
    """Zitterbewegung period π/√(1+X²) in units of τ."""
    return math.pi / math.sqrt(1.0 + X * X)


def short_period(taus, values, max_period=2 * math.pi, method="peak"):
    """Short (Zitterbewegung) period of a uniformly sampled signal.

    ``method="peak"`` returns the period of the strongest spectral peak
    shorter than ``max_period``; ``"centroid"`` the inverse of the
    power-weighted mean frequency over ``[1/max_period, 4/max_period]``,
    which sits on the carrier when the modulation splits it into two
    sidebands.  Mean removed, Hann window.  Returns nan for a constant signal.
    """
    if method not in ("peak", "centroid"):
        raise ValueError(f"unknown method {method!r}")
    taus = np.asarray(taus, float)
    sig = np.asarray(values, float)
    sig = sig - sig.mean()
    if not np.any(np.abs(sig) > 0):
        return math.nan
    dt = taus[1] - taus[0]
    nfft = 1 << int(math.ceil(math.log2(8 * sig.size)))
    amp = np.abs(np.fft.rfft(sig * np.hanning(sig.size), nfft))
    freqs = np.fft.rfftfreq(nfft, dt)
    if method == "centroid":
        band = (freqs >= 1.0 / max_period) & (freqs <= 4.0 / max_period)
        power = amp[band] ** 2
        return 1.0 / float(np.sum(freqs[band] * power) / np.sum(power))
    idx = np.nonzero(freqs >= 1.0 / max_period)[0]
    k = idx[np.argmax(amp[idx])]
    if k in (idx[0], freqs.size - 1):
        return 1.0 / freqs[k]
    a, b, c = np.log(amp[k - 1: k + 2] + 1e-300)
    den = a - 2 * b + c
    shift = 0.5 * (a - c) / den if den != 0 else 0.0
    return 1.0 / (freqs[k] + shift * (freqs[1] - freqs[0]))


def _tight(cfg: IntegratorConfig | None) -> IntegratorConfig:
    cfg = cfg or IntegratorConfig()
    if cfg.method != "adaptive_rk":
        return cfg
    return replace(cfg, rel_tol=min(cfg.rel_tol, 1e-10), abs_tol=min(cfg.abs_tol, 1e-12))


def _run(init, tau_end, cfg):
    if cfg.method == "strang_split":
        return integrate_splitting(init, tau_end, cfg)
    return integrate_adaptive(init, tau_end, cfg)


def recurrence_residual(init, T, cfg: IntegratorConfig | None = None) -> float:
    """‖z(T) − z(0)‖₂ with the adaptive scheme at tolerance ≤ 1e-10.

    A ``strang_split`` config is honoured as given (fixed step).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    init = init if isinstance(init, StateVector) else StateVector.from_array(init)
    if init.is_fixed_point():
        return 0.0
    traj = _run(init, T, _tight(cfg))
    return float(np.linalg.norm(traj.states[-1] - traj.states[0]))


def recurrence_function(traj: Trajectory, Ts) -> np.ndarray:
    z0 = traj.states[0]
    return np.linalg.norm(traj(np.asarray(Ts)) - z0, axis=-1)


def _golden(f, a, b, tol, max_iter=200):
    """Golden-section minimum of ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def _local_minima(y):
    y = np.asarray(y)
    inner = np.nonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:]))[0] + 1
    return inner


def _refine_T(traj, T_lo, T_hi, tol=1e-11):
    z0 = traj.states[0]
    return _golden(lambda T: float(np.linalg.norm(traj(T) - z0)), T_lo, T_hi, tol)


def _spectral_periods(taus, mx, min_cycles=4.0, n_fast_cut=0.5):
    """Low-frequency spectral peak of Mx (mean removed, Hann window)."""
    n = taus.size
    dt = taus[1] - taus[0]
    span = taus[-1] - taus[0]
    sig = mx - mx.mean()
    if not np.any(np.abs(sig) > 1e-14 * max(1.0, np.abs(mx).max())):
        return []
    sig = sig * np.hanning(n)
    nfft = 1 << int(math.ceil(math.log2(8 * n)))
    amp = np.abs(np.fft.rfft(sig, nfft))
    freqs = np.fft.rfftfreq(nfft, dt)
    # below half the Zitterbewegung frequency 1/π, above min_cycles per span
    band = (freqs >= min_cycles / span) & (freqs <= n_fast_cut / math.pi)
    if not np.any(band):
        return []
    idx = np.nonzero(band)[0]
    k = idx[np.argmax(amp[idx])]
    if amp[k] <= 1e-12 * amp.max() or k in (idx[0], idx[-1]):
        return []
    # parabolic interpolation on the log-magnitude
    a, b, c = np.log(amp[k - 1: k + 2] + 1e-300)
    shift = 0.5 * (a - c) / (a - 2 * b + c) if (a - 2 * b + c) != 0 else 0.0
    f = freqs[k] + shift * (freqs[1] - freqs[0])
    return [1.0 / f] if f > 0 else []


def estimate_period(traj: Trajectory, T_min=None, T_max=None, grid_dt=math.pi / 64,
                    noise_floor=1e-1, dedupe=0.01, sample_dt=math.pi / 100):
    """Candidate modulation periods of a trajectory, best (lowest R) first.

    Candidates come from the dominant low-frequency peak of the Mx spectrum
    and from local minima of R(T) = ‖z(T) − z(0)‖ on a grid of step
    ``grid_dt`` (refined by golden section on the dense output).  Periods
    within ``dedupe`` (relative) are merged; candidates with R above
    ``noise_floor`` are dropped.  Returns a list of ``(T, R(T))``.
    """
    span = traj.t_end - traj.t0
    if np.ptp(traj.states, axis=0).max() == 0.0:
        return []
    T_min = 2 * math.pi if T_min is None else T_min
    T_max = 0.5 * span if T_max is None else T_max
    if T_max <= T_min:
        return []
    cands = []
    taus, states = traj.sample(sample_dt)
    for T in _spectral_periods(taus, states[:, 0]):
        if T_min <= T <= T_max:
            cands.append(T)
    Ts = np.arange(T_min, T_max, grid_dt)
    R = recurrence_function(traj, Ts)
    for i in _local_minima(R):
        T, _ = _refine_T(traj, Ts[i - 1], Ts[i + 1], tol=1e-9)
        cands.append(T)
    z0 = traj.states[0]
    scored = sorted(
        ((float(T), float(np.linalg.norm(traj(T) - z0))) for T in cands),
        key=lambda c: (c[1], c[0]),
    )
    out = []
    for T, r in scored:
        if r > noise_floor:
            continue
        if any(abs(T - T2) <= dedupe * T2 for T2, _ in out):
            continue
        out.append((T, r))
    # exact ties (to rounding) resolve to the shortest period
    out.sort(key=lambda c: (round(c[1] / 1e-12), c[0]))
    return out


def refine_orbit(init, T_guess, cfg: IntegratorConfig | None = None, T_box=0.02, X_box=0.01,
                 n_pre=41, tol_X=1e-12, thresholds: Thresholds = Thresholds()) -> OrbitCandidate:
    """Locally minimize the recurrence residual over ``(X(0), T)``.

    Coordinate descent: golden-section search over X(0) in ``±X_box`` where
    each trial point solves the T line search (golden section on the dense
    output, ``±T_box`` relative around ``T_guess``) exactly.  A minimizer on
    the box boundary is reported as ``undetermined``.
    """
    if not T_guess > 0:
        raise ValueError("T_guess must be positive")
    init = init if isinstance(init, StateVector) else StateVector.from_array(init)
    if init.is_fixed_point():
        return OrbitCandidate(init, float(T_guess), 0.0, "periodic", degenerate=True)
    cfg = _tight(cfg)
    T_lo, T_hi = T_guess * (1 - T_box), T_guess * (1 + T_box)
    X_lo, X_hi = init.X - X_box, init.X + X_box
    best_T = {}

    def profile(X0):
        traj = _run(init.replace(X=float(X0)), T_hi, cfg)
        Ts = np.linspace(T_lo, T_hi, 801)
        R = recurrence_function(traj, Ts)
        i = int(np.argmin(R))
        a, b = Ts[max(i - 1, 0)], Ts[min(i + 1, Ts.size - 1)]
        T, r = _refine_T(traj, a, b)
        best_T[float(X0)] = T
        return r

    start = profile(init.X)
    grid = np.linspace(X_lo, X_hi, n_pre)
    vals = np.array([profile(x) for x in grid])
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_pre - 1)]
    X_best, r_best = _golden(profile, a, b, tol_X)
    if vals[k] < r_best:
        X_best, r_best = grid[k], vals[k]
    T_best = best_T[float(X_best)]
    span_X = 2 * X_box
    on_edge = (
        abs(X_best - X_lo) <= 1e-6 * span_X
        or abs(X_best - X_hi) <= 1e-6 * span_X
        or abs(T_best - T_lo) <= 1e-6 * T_guess
        or abs(T_best - T_hi) <= 1e-6 * T_guess
    )
    cls = "undetermined" if on_edge else classify(r_best, thresholds=thresholds)
    return OrbitCandidate(
        init.replace(X=float(X_best)), float(T_best), float(r_best), cls,
        info={"start_residual": float(start), "on_edge": bool(on_edge),
              "seed_X0": init.X, "seed_T": float(T_guess)},
    )


@dataclass
class ScanResult:
    candidates: list
    failures: list  # (grid index, X0, message)
    seeds: list = field(default_factory=list)  # (grid index, X0, T_seed, R_seed)

    def periodic(self):
        return [c for c in self.candidates if c.classification == "periodic"]


def _scan_one(args):
    idx, X0, base, horizon, cfg, thresholds, refine_kw = args
    init = base.replace(X=float(X0))
    if init.is_fixed_point():
        return idx, OrbitCandidate(init, horizon, 0.0, "periodic", degenerate=True), None, None
    try:
        traj = _run(init, horizon, cfg)
        periods = estimate_period(traj)
        if not periods:
            return idx, None, None, (idx, float(X0), "no period candidate")
        T_seed, R_seed = periods[0]
        cand = refine_orbit(init, T_seed, cfg, thresholds=thresholds, **refine_kw)
        info = dict(cand.info, grid_index=idx)
        cand = replace(cand, info=info)
        return idx, cand, (idx, float(X0), T_seed, R_seed), None
    except IntegrationError as exc:
        return idx, None, None, (idx, float(X0), str(exc))


def scan_points(X0s, base_init=STANDARD_INIT, tau_horizon=200 * math.pi,
                cfg: IntegratorConfig | None = None, thresholds: Thresholds = Thresholds(),
                threads=1, refine_kw=None) -> ScanResult:
    cfg = _tight(cfg)
    jobs = [(i, x, base_init, tau_horizon, cfg, thresholds, refine_kw or {})
            for i, x in enumerate(X0s)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_scan_one, jobs))
    else:
        results = [_scan_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    cands = [r[1] for r in results if r[1] is not None]
    seeds = [r[2] for r in results if r[2] is not None]
    fails = [r[3] for r in results if r[3] is not None]
    cands.sort(key=lambda c: (c.residual, c.info.get("grid_index", 0)))
    return ScanResult(cands, fails, seeds)


def scan_time_crystals(win: SearchWindow, cfg: IntegratorConfig | None = None,
                       thresholds: Thresholds = Thresholds(), threads=1,
                       refine_kw=None) -> ScanResult:
    """Integrate, estimate a period and refine at every grid X(0) of the window.

    Failures at single grid points are recorded, not raised.  Output order
    does not depend on ``threads``.
    """
    return scan_points(win.grid(), win.base_init, win.tau_horizon, cfg, thresholds,
                       threads, refine_kw)


@dataclass(frozen=True)
class UnitCell:
    taus: np.ndarray  # offsets within one cell
    traces: np.ndarray  # (n_shifts, n) values of the observable at τ + kT
    overlap: float  # max pairwise sup-distance among the traces
    subunits: int


def _count_subunits(taus, trace, T):
    """Local maxima of the Zitterbewegung envelope of ``trace`` over one cell."""
    dt = taus[1] - taus[0]
    w = max(1, int(round(math.pi / dt)))
    n = trace.size
    env = np.array([trace[max(0, i - w // 2): min(n, i + w // 2 + 1)].max() for i in range(n)])
    peaks = _local_minima(-env)
    return int(peaks.size)


def unit_cell(init, T, n_shifts=4, cfg: IntegratorConfig | None = None, component=0,
              sample_dt=math.pi / 100) -> UnitCell:
    """Superimpose ``component`` over ``[0, T]`` shifted by ``kT``, k < n_shifts."""
    init = init if isinstance(init, StateVector) else StateVector.from_array(init)
    n = max(2, int(math.ceil(T / sample_dt)) + 1)
    taus = np.linspace(0.0, T, n)
    if init.is_fixed_point():
        traces = np.repeat(init.as_array()[component][None, None], n_shifts, 0).repeat(n, 1)
        return UnitCell(taus, traces, 0.0, 0)
    traj = _run(init, n_shifts * T, _tight(cfg))
    traces = np.stack([traj(np.minimum(taus + k * T, traj.t_end))[:, component]
                       for k in range(n_shifts)])
    overlap = 0.0
    for i in range(n_shifts):
        for j in range(i):
            overlap = max(overlap, float(np.max(np.abs(traces[i] - traces[j]))))
    return UnitCell(taus, traces, overlap, _count_subunits(taus, traces[0], T))
