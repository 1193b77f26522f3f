"""Shooting solver for the eigenfunctions of the quantized pair-field Hamiltonian.

``H = -½ d²/dx² + 2x σ_y + 2σ_x``.  With ``x = 2^{-2/3} y`` and the basis
``ψ1 = (φ1 + iφ2)/√2``, ``ψ2 = (φ2 + iφ1)/√2`` the eigenproblem becomes the
real coupled pair

    φ1'' = (y - ℰ/2^{1/3}) φ1 + 2^{2/3} φ2
    φ2'' = (-y - ℰ/2^{1/3}) φ2 + 2^{2/3} φ1

For y → +∞ the φ1 channel has one growing and one decaying solution while
φ2 oscillates; y → −∞ is the mirror image under ``y → -y, φ1 ↔ φ2``.  Three
of the four values (φ1, φ1', φ2, φ2') at y = 0 are pinned and the fourth is
bisected until the growing φ1 mode at ``+y_max`` vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .integrator import solve_adaptive

__all__ = [
    "COUPLING",
    "SLOTS",
    "ShootingProblem",
    "EigenSolution",
    "BracketError",
    "coupled_rhs",
    "to_psi",
    "to_phi",
    "rescale_x",
    "rescale_y",
    "shoot",
    "find_regular_derivative",
    "solve_with_data",
    "mirror_solution",
    "equation_residual",
]

COUPLING = 2.0 ** (2.0 / 3.0)
CBRT2 = 2.0 ** (1.0 / 3.0)
SLOTS = ("phi1", "dphi1", "phi2", "dphi2")


class BracketError(ValueError):
    """The bracket holds no sign change of the regularity defect."""

    def __init__(self, lo, hi, defect_lo, defect_hi):
        super().__init__(
            f"no sign change of the defect in [{lo}, {hi}]: "
            f"defect({lo})={defect_lo:.6g}, defect({hi})={defect_hi:.6g}"
        )
        self.lo, self.hi = lo, hi
        self.defect_lo, self.defect_hi = defect_lo, defect_hi


def coupled_rhs(y, phi1, dphi1, phi2, dphi2, energy, coupling=COUPLING):
    """(φ1', φ1'', φ2', φ2'') of the coupled equations."""
    e = energy / CBRT2
    return (
        dphi1,
        (y - e) * phi1 + coupling * phi2,
        dphi2,
        (-y - e) * phi2 + coupling * phi1,
    )


@njit(cache=True)
def _rhs(y, u, params, out):
    e = params[0]
    c = params[1]
    out[0] = u[1]
    out[1] = (y - e) * u[0] + c * u[2]
    out[2] = u[3]
    out[3] = (-y - e) * u[2] + c * u[0]


def to_psi(phi1, phi2):
    s = 1.0 / math.sqrt(2.0)
    return s * (phi1 + 1j * phi2), s * (phi2 + 1j * phi1)


def to_phi(psi1, psi2):
    """Inverse of :func:`to_psi` (the map is unitary up to the ordering)."""
    s = 1.0 / math.sqrt(2.0)
    return s * (psi1 - 1j * psi2), s * (psi2 - 1j * psi1)


def rescale_x(y):
    """Position ``x`` of the original Hamiltonian for the shooting variable ``y``."""
    return 2.0 ** (-2.0 / 3.0) * np.asarray(y)


def rescale_y(x):
    return 2.0 ** (2.0 / 3.0) * np.asarray(x)


@dataclass(frozen=True)
class ShootingProblem:
    """One shooting configuration.

    ``fixed`` holds the initial data at y = 0 in slot order
    (φ1, φ1', φ2, φ2'); the entry at ``free_slot`` is ignored.
    """

    energy: float
    fixed: tuple = (1.0, 0.0, 0.0, 0.0)
    free_slot: str = "dphi2"
    y_max: float = 12.0
    bracket: tuple = (-1.0, 1.0)
    coupling: float = COUPLING
    defect_cap: float = 1e12
    escape: float = 1e10
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14

    def __post_init__(self):
        if self.free_slot not in SLOTS:
            raise ValueError(f"free_slot must be one of {SLOTS}")
        if len(self.fixed) != 4:
            raise ValueError("fixed must hold four values")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError("bracket must satisfy lo < hi")
        if self._kappa2(self.y_max) <= 0:
            raise ValueError("y_max must lie beyond the classical turning point")

    @property
    def e_shift(self):
        return self.energy / CBRT2

    @property
    def free_index(self):
        return SLOTS.index(self.free_slot)

    def initial_data(self, free_value) -> np.ndarray:
        u = np.array(self.fixed, dtype=float)
        u[self.free_index] = free_value
        return u

    def params(self):
        return np.array([self.e_shift, self.coupling])

    def _kappa2(self, y):
        # growing local eigenvalue of [[y-e, c], [c, -y-e]]
        return -self.e_shift + math.hypot(y, self.coupling)


def _growing_projection(prob, y, u, side=+1):
    """Amplitude of the local growing WKB mode (φ1 at +y, φ2 at −y)."""
    ay = abs(y)
    kappa = math.sqrt(max(prob._kappa2(ay), 0.0))
    if side > 0:
        return 0.5 * (u[1] + kappa * u[0])
    return 0.5 * (-u[3] + kappa * u[2])


def _integrate(prob, u0, y_end, escape=np.inf, allow_escape=False):
    return solve_adaptive(_rhs, u0, 0.0, y_end, prob.rel_tol, prob.abs_tol,
                          params=prob.params(), escape=escape, allow_escape=allow_escape)


def shoot(prob: ShootingProblem, free_value) -> float:
    """Regularity defect at ``+y_max`` for the given free initial value.

    The defect is the amplitude of the growing φ1 mode, ½(φ1' + κφ1) with
    κ² the growing local eigenvalue.  If |φ| passes ``prob.escape`` before
    ``y_max`` the result saturates at ±``defect_cap`` with the escape sign.
    """
    traj = _integrate(prob, prob.initial_data(free_value), prob.y_max, prob.escape, True)
    u = traj.states[-1]
    d = _growing_projection(prob, traj.times[-1], u)
    if traj.stats["status"] == "escaped":
        return math.copysign(prob.defect_cap, d if d != 0 else u[0])
    return float(np.clip(d, -prob.defect_cap, prob.defect_cap))


@dataclass(frozen=True)
class EigenSolution:
    energy: float
    solved_free_value: float
    free_slot: str
    initial: np.ndarray  # (φ1, φ1', φ2, φ2') at y = 0
    grid: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    dphi1: np.ndarray
    dphi2: np.ndarray
    defect: float  # growing-mode amplitude at +y_max
    defect_minus: float  # growing-mode amplitude at -y_max
    y_max: float
    coupling: float = COUPLING
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = self.grid
        if not np.allclose(g, -g[::-1], rtol=0, atol=1e-12 * max(1.0, self.y_max)):
            raise ValueError("grid must be symmetric about 0")
        for arr in (self.phi1, self.phi2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite eigenfunction sample")


def _grid(y_max, dy):
    n = int(round(y_max / dy))
    half = np.linspace(0.0, y_max, n + 1)
    return np.concatenate([-half[:0:-1], half])


def solve_with_data(prob: ShootingProblem, u0, dy=0.005, free_value=None, info=None) -> EigenSolution:
    """Integrate from y = 0 both ways with fixed initial data and sample the result."""
    u0 = np.asarray(u0, dtype=float)
    plus = _integrate(prob, u0, prob.y_max)
    minus = _integrate(prob, u0, -prob.y_max)
    grid = _grid(prob.y_max, dy)
    neg = grid < 0
    vals = np.empty((grid.size, 4))
    vals[neg] = minus(grid[neg])
    vals[~neg] = plus(grid[~neg])
    dplus = _growing_projection(prob, prob.y_max, plus.states[-1], +1)
    dminus = _growing_projection(prob, -prob.y_max, minus.states[0], -1)
    if free_value is None:
        free_value = float(u0[prob.free_index])
    return EigenSolution(
        energy=prob.energy, solved_free_value=float(free_value), free_slot=prob.free_slot,
        initial=u0.copy(), grid=grid, phi1=vals[:, 0], phi2=vals[:, 2],
        dphi1=vals[:, 1], dphi2=vals[:, 3], defect=float(dplus), defect_minus=float(dminus),
        y_max=prob.y_max, coupling=prob.coupling, info=dict(info or {}),
    )


def find_regular_derivative(prob: ShootingProblem, tol=1e-10, dy=0.005) -> EigenSolution:
    """Bisect the free initial value to ``tol`` and return the sampled solution.

    The bracket must enclose a sign change of :func:`shoot`; otherwise a
    :class:`BracketError` reports the endpoint defects.
    """
    lo, hi = prob.bracket
    d_lo, d_hi = shoot(prob, lo), shoot(prob, hi)
    if d_lo == 0.0:
        hi = lo
    elif d_hi == 0.0:
        lo = hi
    elif math.copysign(1.0, d_lo) == math.copysign(1.0, d_hi):
        raise BracketError(lo, hi, d_lo, d_hi)
    widths = [hi - lo]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        d_mid = shoot(prob, mid)
        if d_mid == 0.0:
            lo = hi = mid
        elif math.copysign(1.0, d_mid) == math.copysign(1.0, d_lo):
            lo, d_lo = mid, d_mid
        else:
            hi = mid
        widths.append(hi - lo)
    value = 0.5 * (lo + hi)
    return solve_with_data(prob, prob.initial_data(value), dy, value,
                           info={"bracket_widths": widths, "iterations": len(widths) - 1})


def mirror_solution(sol: EigenSolution) -> EigenSolution:
    """Apply the symmetry ``φ̃1(y) = φ2(−y)``, ``φ̃2(y) = φ1(−y)``.

    Derivatives change sign and the defects at the two ends swap.
    """
    u = sol.initial
    initial = np.array([u[2], -u[3], u[0], -u[1]])
    slot_map = {"phi1": "phi2", "dphi1": "dphi2", "phi2": "phi1", "dphi2": "dphi1"}
    slot = slot_map[sol.free_slot]
    return replace(
        sol,
        initial=initial,
        free_slot=slot,
        solved_free_value=float(initial[SLOTS.index(slot)]),
        phi1=sol.phi2[::-1].copy(),
        phi2=sol.phi1[::-1].copy(),
        dphi1=-sol.dphi2[::-1],
        dphi2=-sol.dphi1[::-1],
        defect=sol.defect_minus,
        defect_minus=sol.defect,
        info=dict(sol.info, mirrored=not sol.info.get("mirrored", False)),
    )


def equation_residual(sol: EigenSolution, y_limit=None, relative=True) -> float:
    """Sup-norm residual of the coupled equations on the sampled grid.

    φ'' is taken from the five-point (fourth-order) second difference of the
    samples on ``|y| ≤ y_limit`` (default ``y_max − 1``).  With ``relative``
    the residual is divided by the sup of |φ1|, |φ2| over the same range,
    since the solutions are unnormalized.
    """
    y = sol.grid
    h = y[1] - y[0]
    y_limit = sol.y_max - 1.0 if y_limit is None else y_limit
    e = sol.energy / CBRT2
    c = sol.coupling
    worst = 0.0
    scale = 0.0
    idx = np.nonzero(np.abs(y) <= y_limit + 1e-12)[0]
    idx = idx[(idx >= 2) & (idx <= y.size - 3)]
    for phi, other, sgn in ((sol.phi1, sol.phi2, 1.0), (sol.phi2, sol.phi1, -1.0)):
        d2 = (-phi[idx + 2] + 16 * phi[idx + 1] - 30 * phi[idx] + 16 * phi[idx - 1]
              - phi[idx - 2]) / (12 * h * h)
        r = d2 - ((sgn * y[idx] - e) * phi[idx] + c * other[idx])
        worst = max(worst, float(np.max(np.abs(r))))
        scale = max(scale, float(np.max(np.abs(phi[idx]))))
    return worst / scale if relative and scale > 0 else worst
