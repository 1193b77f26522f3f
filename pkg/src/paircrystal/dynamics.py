"""State space, vector field and constants of motion of the reduced pair-field model.

The five dimensionless variables are the pseudo-spin ``M = (Mx, My, Mz)``
(rescaled pair-function components), the kinetic momentum ``X`` and the
electric field ``P``.  The flow is

    dMx/dτ = 2 X Mz
    dMy/dτ = -2 Mz
    dMz/dτ = 2 My - 2 X Mx
    dX/dτ  = P
    dP/dτ  = -2 My

i.e. ``M`` precesses about ``Ω = (2, 2X, 0)`` while ``(X, P)`` is driven by
``My``.  ``H = P²/2 + 2 X My + 2 Mx`` and ``|M|²`` are conserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "StateVector",
    "PhysicalScales",
    "DomainError",
    "vector_field",
    "hamiltonian",
    "casimir",
    "bracket_flow",
    "to_dimensionless",
    "from_dimensionless",
    "pair_number",
    "STANDARD_INIT",
]

FIELDS = ("Mx", "My", "Mz", "X", "P")


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


def _check_finite(values, what="state"):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite {what}: {arr!r}")
    return arr


@dataclass(frozen=True)
class StateVector:
    """A point ``(Mx, My, Mz, X, P)`` of the five-dimensional phase space."""

    Mx: float
    My: float
    Mz: float
    X: float
    P: float

    def __post_init__(self):
        _check_finite(self.as_array())

    @classmethod
    def from_array(cls, arr) -> "StateVector":
        a = np.asarray(arr, dtype=float).reshape(5)
        return cls(*(float(v) for v in a))

    def as_array(self) -> np.ndarray:
        return np.array([self.Mx, self.My, self.Mz, self.X, self.P], dtype=float)

    def replace(self, **changes) -> "StateVector":
        values = {name: getattr(self, name) for name in FIELDS}
        values.update(changes)
        return StateVector(**values)

    def is_fixed_point(self) -> bool:
        """True on the equilibrium family ``M = 0, P = 0`` (any ``X``)."""
        return self.Mx == 0.0 and self.My == 0.0 and self.Mz == 0.0 and self.P == 0.0


# Initial data shared by all time-crystal runs; only X(0) is scanned.
STANDARD_INIT = StateVector(Mx=0.009, My=-0.027, Mz=0.0, X=0.0, P=0.006)


@njit(cache=True)
def rhs(t, z, params, out):
    """In-place vector field for the compiled integrators (``t``, ``params`` unused)."""
    mx = z[0]
    my = z[1]
    mz = z[2]
    x = z[3]
    out[0] = 2.0 * x * mz
    out[1] = -2.0 * mz
    out[2] = 2.0 * my - 2.0 * x * mx
    out[3] = z[4]
    out[4] = -2.0 * my


def vector_field(s) -> np.ndarray:
    """Time derivative of a state; accepts a ``StateVector`` or a length-5 array.

    Returns the derivative as an array ordered like the state.
    """
    z = _check_finite(s.as_array() if isinstance(s, StateVector) else s)
    mx, my, mz, x, p = z
    return np.array([2.0 * x * mz, -2.0 * mz, 2.0 * my - 2.0 * x * mx, p, -2.0 * my])


def hamiltonian(s) -> float:
    mx, my, _, x, p = _check_finite(s.as_array() if isinstance(s, StateVector) else s)
    return 0.5 * p * p + 2.0 * x * my + 2.0 * mx


def casimir(s) -> float:
    mx, my, mz, _, _ = _check_finite(s.as_array() if isinstance(s, StateVector) else s)
    return mx * mx + my * my + mz * mz


def hamiltonian_gradient(z) -> np.ndarray:
    mx, my, mz, x, p = np.asarray(z, dtype=float)
    return np.array([2.0, 2.0 * x, 0.0, 2.0 * my, p])


def bracket_flow(z) -> np.ndarray:
    """``{F, H}`` for the five coordinate functions, built from the Poisson tensor.

    Non-vanishing brackets: ``{X, P} = 1`` and ``{Mi, Mj} = ε_ijk Mk``.  This is
    an independent route to the vector field used to cross-check it.
    """
    mx, my, mz, _, _ = np.asarray(z, dtype=float)
    poisson = np.zeros((5, 5))
    poisson[0, 1], poisson[1, 2], poisson[2, 0] = mz, mx, my
    poisson[1, 0], poisson[2, 1], poisson[0, 2] = -mz, -mx, -my
    poisson[3, 4], poisson[4, 3] = 1.0, -1.0
    return poisson @ hamiltonian_gradient(z)


@dataclass(frozen=True)
class PhysicalScales:
    """Model-unit constants linking physical and dimensionless variables."""

    m: float = 1.0
    e: float = 1.0
    gamma: float = 1.0
    p_c: float = 0.0

    def __post_init__(self):
        _check_finite([self.m, self.e, self.gamma, self.p_c], "scales")
        if self.m <= 0.0:
            raise DomainError(f"mass must be positive, got {self.m}")


def to_dimensionless(phys: PhysicalScales, f3, g1, g2, A, E, t):
    """Map physical ``(f̃3, g̃1, g̃2, A, E, t)`` to ``(StateVector, τ)``."""
    if phys.m <= 0.0:
        raise DomainError("mass must be positive")
    k = phys.e * phys.gamma / (2.0 * phys.m)
    state = StateVector(
        Mx=k * f3,
        My=k * g1,
        Mz=k * g2,
        X=-phys.e * A / phys.m + phys.p_c / phys.m,
        P=phys.e * E / phys.m,
    )
    return state, phys.m * t


def from_dimensionless(phys: PhysicalScales, state: StateVector, tau):
    """Inverse of :func:`to_dimensionless`; returns ``(f̃3, g̃1, g̃2, A, E, t)``.

    Needs ``gamma != 0`` and ``e != 0`` for the map to be invertible.
    """
    if phys.gamma == 0.0:
        raise DomainError("gamma = 0: the pseudo-spin map is not invertible")
    if phys.e == 0.0:
        raise DomainError("e = 0: the field map is not invertible")
    k = phys.e * phys.gamma / (2.0 * phys.m)
    f3, g1, g2 = state.Mx / k, state.My / k, state.Mz / k
    A = (phys.p_c - phys.m * state.X) / phys.e
    E = phys.m * state.P / phys.e
    return f3, g1, g2, A, E, tau / phys.m


def pair_number(f3, p=0.0, m=1.0):
    """Number of pairs from ``f3 = 2m/√(m²+p²) (N_p − 2)``; works elementwise."""
    if m <= 0.0:
        raise DomainError(f"mass must be positive, got {m}")
    return 2.0 + f3 * np.sqrt(m * m + np.square(p)) / (2.0 * m)
