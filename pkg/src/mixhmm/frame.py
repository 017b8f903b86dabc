"""Rotation into the interface normal and the velocity-shifted interface solve.

A full state holds partial densities ``rho`` of shape ``(2,)`` and momenta
``m`` of shape ``(2, d)``. A rotated state is the 4-vector
``(rho0, rho1, m0 . n, m1 . n)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

NORMAL_TOL = 1e-12


class FrameError(ValueError):
    exit_code = 30


@dataclass
class FullState:
    rho: np.ndarray  # (2,) kg/m^3
    m: np.ndarray  # (2, d) kg/(m^2 s)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).reshape(2)
        self.m = np.atleast_2d(np.asarray(self.m, dtype=float))
        if self.m.shape[0] != 2:
            self.m = self.m.reshape(2, -1)
        if np.any(self.rho < 0):
            raise FrameError("densities must be non-negative")

    @property
    def dim(self) -> int:
        return self.m.shape[1]

    def velocities(self) -> np.ndarray:
        """Per-species velocities, zero where a density vanishes."""
        v = np.zeros_like(self.m)
        ok = self.rho > 0
        v[ok] = self.m[ok] / self.rho[ok, None]
        return v

    @classmethod
    def from_velocities(cls, rho, v) -> "FullState":
        rho = np.asarray(rho, dtype=float)
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return cls(rho, rho[:, None] * v)

    def copy(self) -> "FullState":
        return FullState(self.rho.copy(), self.m.copy())


def _unit(n) -> np.ndarray:
    n = np.atleast_1d(np.asarray(n, dtype=float))
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > NORMAL_TOL:
        raise FrameError(f"normal has length {norm!r}, expected 1")
    return n


def rotate_to_normal(U: FullState, n) -> tuple[np.ndarray, np.ndarray]:
    """``(u, perp)``: rotated 4-state and tangential momentum remainder ``(2, d)``."""
    n = _unit(n)
    if len(n) != U.dim:
        raise FrameError("normal and state dimensions differ")
    mn = U.m @ n
    perp = U.m - mn[:, None] * n[None, :]
    return np.array([U.rho[0], U.rho[1], mn[0], mn[1]]), perp


def back_project(u, n, perp=None) -> FullState:
    """Inverse of :func:`rotate_to_normal`: momenta ``m_a n + perp_a``."""
    n = _unit(n)
    u = np.asarray(u, dtype=float)
    m = u[2:4, None] * n[None, :]
    if perp is not None:
        m = m + perp
    return FullState(u[:2].copy(), m)


# ---------------------------------------------------------------------------
# barycentric / relative velocities


def barycentric_velocity(rho, m) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    total = rho[0] + rho[1]
    if total <= 0:
        raise FrameError("barycentric velocity of an empty state")
    return (np.asarray(m[0], dtype=float) + np.asarray(m[1], dtype=float)) / total


def relative_velocity(rho, m) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    m = np.asarray(m, dtype=float)
    v = [m[a] / rho[a] if rho[a] > 0 else np.zeros_like(m[a]) for a in (0, 1)]
    return v[0] - v[1]


def species_velocities(rho, vbar, vrel) -> tuple[np.ndarray, np.ndarray]:
    """Species velocities from barycentric and relative velocity (exact inverse)."""
    rho = np.asarray(rho, dtype=float)
    total = rho[0] + rho[1]
    vbar = np.asarray(vbar, dtype=float)
    vrel = np.asarray(vrel, dtype=float)
    return vbar + (rho[1] / total) * vrel, vbar - (rho[0] / total) * vrel


@dataclass
class VelocityDecomposition:
    rho: np.ndarray
    vbar: np.ndarray  # (d,)
    vrel: np.ndarray  # (d,)

    @classmethod
    def of(cls, U: FullState) -> "VelocityDecomposition":
        return cls(U.rho.copy(), barycentric_velocity(U.rho, U.m), relative_velocity(U.rho, U.m))

    def normal(self, n) -> tuple[float, float]:
        return float(self.vbar @ n), float(self.vrel @ n)

    def tangential(self, n) -> tuple[np.ndarray, np.ndarray]:
        return self.vbar - (self.vbar @ n) * n, self.vrel - (self.vrel @ n) * n


# ---------------------------------------------------------------------------
# interface solve


class MicroSolver(Protocol):
    """Rotated-frame interface solver.

    Called with liquid and vapour 4-states ``(rho0, rho1, m0, m1)`` in the frame
    of the liquid barycentric velocity; returns ``(u*-, u*+, s)``.
    """

    def __call__(self, u_minus: np.ndarray, u_plus: np.ndarray): ...


def velocity_form(u) -> np.ndarray:
    """``(rho0, rho1, vbar, vrel)`` of a rotated 4-state."""
    u = np.asarray(u, dtype=float)
    rho = u[:2]
    return np.array([rho[0], rho[1], barycentric_velocity(rho, u[2:4]), relative_velocity(rho, u[2:4])])


def conservative_form(w) -> np.ndarray:
    """Inverse of :func:`velocity_form`."""
    w = np.asarray(w, dtype=float)
    v0, v1 = species_velocities(w[:2], w[2], w[3])
    return np.array([w[0], w[1], w[0] * v0, w[1] * v1])


@dataclass
class InterfaceResult:
    U_minus: FullState
    U_plus: FullState
    s: float
    micro_input: tuple[np.ndarray, np.ndarray]
    phase_flag: bool = False

    def __iter__(self):
        return iter((self.U_minus, self.U_plus, self.s))


def interface_solve(
    U_minus: FullState,
    U_plus: FullState,
    n,
    micro: MicroSolver | Callable,
    phase_check: Callable[[np.ndarray, np.ndarray], bool] | None = None,
) -> InterfaceResult:
    """Galilean- and rotation-compatible wrapper around a rotated micro solver.

    The liquid barycentric normal velocity is removed before ``micro`` is
    called and added back to the output momenta and the interface speed.
    Tangential barycentric and relative velocities are carried around the
    micro solve and recombined with the output densities.
    """
    n = _unit(n)
    dec = [VelocityDecomposition.of(U) for U in (U_minus, U_plus)]
    normals = [d.normal(n) for d in dec]
    tangents = [d.tangential(n) for d in dec]
    vref = normals[0][0]
    shifted = []
    for d, (vb, vr) in zip(dec, normals):
        shifted.append(conservative_form([d.rho[0], d.rho[1], vb - vref, vr]))
    u_star_minus, u_star_plus, s = micro(shifted[0], shifted[1])
    out = []
    for u_star, (tb, tr) in zip((u_star_minus, u_star_plus), tangents):
        u_star = np.array(u_star, dtype=float)
        u_star[2] += u_star[0] * vref
        u_star[3] += u_star[1] * vref
        rho = u_star[:2]
        if rho.sum() > 0:
            t0, t1 = species_velocities(rho, tb, tr)
        else:
            t0 = t1 = np.zeros_like(tb)
        perp = np.stack([rho[0] * t0, rho[1] * t1])
        out.append(back_project(u_star, n, perp))
    flag = False
    if phase_check is not None:
        flag = not phase_check(out[0].rho, out[1].rho)
    return InterfaceResult(out[0], out[1], float(s) + vref, (shifted[0], shifted[1]), flag)


def identity_micro(u_minus, u_plus):
    """Micro solver returning its input and a zero speed (for testing)."""
    return np.array(u_minus, dtype=float), np.array(u_plus, dtype=float), 0.0
