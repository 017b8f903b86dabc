import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixhmm import units
from mixhmm.units import SI_PER_REDUCED, QuantityKind, convert, to_reduced, to_si

# reference unit rows as printed (SI value of one reduced unit)
TABLE_1 = {
    QuantityKind.MASS: 1.660539040e-27,
    QuantityKind.LENGTH: 1e-10,
    QuantityKind.ENERGY: 1.380e-23,
    QuantityKind.VELOCITY: 91.1622421005,
    QuantityKind.TIME: 1.0969454e-12,
    QuantityKind.PRESSURE: 1.380e7,
    QuantityKind.TEMPERATURE: 1.0,
    QuantityKind.DENSITY: 1.66053904e3,
}


@pytest.mark.parametrize("kind", list(QuantityKind))
def test_factors_match_table(kind):
    assert SI_PER_REDUCED[kind] == TABLE_1[kind]


def test_one_factor_per_kind_and_positive():
    assert set(SI_PER_REDUCED) == set(QuantityKind)
    assert all(v > 0 for v in SI_PER_REDUCED.values())


def test_velocity_and_time_examples():
    assert convert(1.0, QuantityKind.VELOCITY, "reduced->SI") == 91.1622421005
    assert convert(1.0, QuantityKind.TIME, "reduced->SI") == 1.0969454e-12


@pytest.mark.parametrize("kind", list(QuantityKind))
@pytest.mark.parametrize("direction", ["reduced->SI", "SI->reduced"])
def test_zero_maps_to_zero(kind, direction):
    assert convert(0.0, kind, direction) == 0.0


def test_density_is_mass_over_length_cubed():
    derived = SI_PER_REDUCED[QuantityKind.MASS] / SI_PER_REDUCED[QuantityKind.LENGTH] ** 3
    assert math.isclose(derived, 1.66053904e3, rel_tol=1e-9)


def test_unknown_direction():
    with pytest.raises(ValueError):
        convert(1.0, QuantityKind.MASS, "sideways")


def test_arrays_convert_elementwise():
    v = np.array([1.0, 2.0, -3.0])
    np.testing.assert_array_equal(to_si(v, QuantityKind.DENSITY), v * 1.66053904e3)


def test_molar_mass_from_u():
    assert units.molar_mass_from_u(39.948) == pytest.approx(0.039948, rel=1e-15)


@given(
    st.floats(min_value=-1e30, max_value=1e30, allow_nan=False, allow_infinity=False).filter(
        lambda v: v == 0 or abs(v) > 1e-250  # keep clear of subnormal underflow
    ),
    st.sampled_from(list(QuantityKind)),
)
def test_round_trip(value, kind):
    back = to_reduced(to_si(value, kind), kind)
    assert back == pytest.approx(value, rel=1e-15, abs=0.0)
    back = to_si(to_reduced(value, kind), kind)
    assert back == pytest.approx(value, rel=1e-15, abs=0.0)
