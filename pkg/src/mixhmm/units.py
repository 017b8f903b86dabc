"""Conversion between MD reduced units and SI units.

The MD engine works in Angstrom, atomic mass units and Kelvin (energy as
``E / k_B``). Derived reduced units follow from those three, e.g. velocity
is ``K^0.5 u^-0.5`` and time is ``A u^0.5 K^-0.5``.
"""

from __future__ import annotations

import enum
import math

import numpy as np


class QuantityKind(enum.Enum):
    MASS = "mass"
    LENGTH = "length"
    ENERGY = "energy"
    VELOCITY = "velocity"
    TIME = "time"
    PRESSURE = "pressure"
    TEMPERATURE = "temperature"
    DENSITY = "density"


#: SI value of one reduced unit of each kind.
SI_PER_REDUCED: dict[QuantityKind, float] = {
    QuantityKind.MASS: 1.660539040e-27,  # kg
    QuantityKind.LENGTH: 1e-10,  # m
    QuantityKind.ENERGY: 1.380e-23,  # J
    QuantityKind.VELOCITY: 91.1622421005,  # m/s
    QuantityKind.TIME: 1.0969454e-12,  # s
    QuantityKind.PRESSURE: 1.380e7,  # Pa
    QuantityKind.TEMPERATURE: 1.0,  # K
    QuantityKind.DENSITY: 1.66053904e3,  # kg/m^3
}


def _check_table() -> None:
    f = SI_PER_REDUCED
    derived_density = f[QuantityKind.MASS] / f[QuantityKind.LENGTH] ** 3
    if not math.isclose(derived_density, f[QuantityKind.DENSITY], rel_tol=1e-9):
        raise RuntimeError("density factor inconsistent with mass/length^3")
    derived_velocity = math.sqrt(f[QuantityKind.ENERGY] / f[QuantityKind.MASS])
    if not math.isclose(derived_velocity, f[QuantityKind.VELOCITY], rel_tol=1e-6):
        raise RuntimeError("velocity factor inconsistent with sqrt(energy/mass)")
    derived_time = f[QuantityKind.LENGTH] / f[QuantityKind.VELOCITY]
    if not math.isclose(derived_time, f[QuantityKind.TIME], rel_tol=1e-6):
        raise RuntimeError("time factor inconsistent with length/velocity")
    if any(v <= 0 for v in f.values()):
        raise RuntimeError("conversion factors must be positive")


_check_table()


def to_si(value, kind: QuantityKind):
    """Convert a reduced-unit value (scalar or array) to SI."""
    return value * SI_PER_REDUCED[QuantityKind(kind)]


def to_reduced(value, kind: QuantityKind):
    """Convert an SI value (scalar or array) to reduced units."""
    return value / SI_PER_REDUCED[QuantityKind(kind)]


def convert(value, kind: QuantityKind, direction: str = "reduced->SI"):
    """Convert ``value`` of the given kind.

    ``direction`` is ``"reduced->SI"`` or ``"SI->reduced"``.
    """
    if direction == "reduced->SI":
        return to_si(value, kind)
    if direction == "SI->reduced":
        return to_reduced(value, kind)
    raise ValueError(f"unknown direction {direction!r}")


# shorthands used throughout the package
VELOCITY_SI = SI_PER_REDUCED[QuantityKind.VELOCITY]
TIME_SI = SI_PER_REDUCED[QuantityKind.TIME]
DENSITY_SI = SI_PER_REDUCED[QuantityKind.DENSITY]
LENGTH_SI = SI_PER_REDUCED[QuantityKind.LENGTH]

#: kg per atomic mass unit, g/mol per u: molar mass [kg/mol] = m[u] * 1e-3
KG_PER_MOL_PER_U = 1e-3


def molar_mass_from_u(mass_u: float) -> float:
    """Molar mass in kg/mol of a particle with mass given in u."""
    return float(np.asarray(mass_u) * KG_PER_MOL_PER_U)
