import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmpkit.spectral_sets import (
    IntervalSystem,
    PotentialV,
    SolverError,
    eval_potential,
    potential_preimage,
    solve_potential,
    validate_interval_system,
    verify_potential,
)
from oracles import potential_closed_form, potential_value


# --- interval systems ---------------------------------------------------------

def test_gaps_are_sorted():
    E = validate_interval_system([(-3, 3), (0.5, 1.5), (-2, -1)])
    assert E.gaps == ((-2.0, -1.0), (0.5, 1.5))
    assert E.genus == 2


@pytest.mark.parametrize(
    "raw",
    [
        [],
        [(-2, 2, 3)],
        [(2, -2)],
        [(-2, 2), (-1, 3)],
        [(-2, 2), (1, -1)],
        [(-2, 2), (-1, 0.5), (0, 1)],
        [(-2, 2), (-1, 0), (0, 1)],
        [(-2, float("nan"))],
    ],
)
def test_invalid_systems_rejected(raw):
    with pytest.raises(ValueError):
        validate_interval_system(raw)


def test_geometry(E3):
    assert E3.bands == [(-3.0, -2.0), (-1.0, 0.5), (1.5, 3.0)]
    np.testing.assert_array_equal(E3.left_edges, [-3.0, -1.0, 1.5])
    np.testing.assert_array_equal(E3.right_edges, [-2.0, 0.5, 3.0])
    assert E3.contains([-2.5, -1.5, 0.0, 1.0, 3.0, 3.1]).tolist() == [True, False, True, False, True, False]
    np.testing.assert_allclose(E3.distance([-1.5, 1.2, 4.0, 0.0]), [0.5, 0.3, 1.0, 0.0])
    # distance to the complement inside bands, zero outside
    np.testing.assert_allclose(E3.distance_to_complement([-2.5, 0.0, 2.0, -1.5]), [0.5, 0.5, 0.5, 0.0])


def test_dict_roundtrip(E3):
    assert IntervalSystem.from_dict(E3.to_dict()) == E3
    assert E3.to_dict() == {"outer": [-3.0, 3.0], "gaps": [[-2.0, -1.0], [0.5, 1.5]]}


def test_translation(E3):
    T = E3.translated(0.5)
    assert T.bands[0] == (-2.5, -1.5)


# --- potential ------------------------------------------------------------------

def test_two_interval_potential_exact():
    # oracle: closed form gives V = 2z + 4 / (0 - z)
    assert potential_closed_form(-2, 2, [(-1, 1)]) == (2.0, 0.0, pytest.approx([4.0]), pytest.approx([0.0]))
    t = time.perf_counter()
    V = solve_potential(validate_interval_system([(-2, 2), (-1, 1)]))
    assert time.perf_counter() - t < 1.0
    got = [V.lambda0, V.c0, V.lambdas[0], V.poles[0]]
    np.testing.assert_allclose(got, [2.0, 0.0, 4.0, 0.0], atol=1e-10)


def test_genus_zero_is_identity():
    V = solve_potential(validate_interval_system([(-2, 2)]))
    assert V.genus == 0
    assert V.lambda0 == pytest.approx(1.0, abs=1e-14)
    assert V.c0 == pytest.approx(0.0, abs=1e-14)


# frozen from the closed-form oracle (partial fractions of 2 (P_a + P_b) / (P_b - P_a))
FROZEN = [
    ([(-3, 3), (-2, -1), (0.5, 1.5)], 1.0, -0.125, [1.0535285894212802, 1.2433464105787406], [-1.7170128158902633, 1.0920128158902749]),
    (
        [(-3, 3), (-2.5, -2), (-1, 0), (1, 2.2)],
        1.2121212121212124,
        0.10835629017447262,
        [0.39963609054671384, 1.401402808028867, 1.4635630437123124],
        [-2.3970071867378464, -0.5127499186623997, 1.8491510447941863],
    ),
]


@pytest.mark.parametrize("raw,lam0,c0,lams,poles", FROZEN)
def test_frozen_potentials(raw, lam0, c0, lams, poles):
    V = solve_potential(validate_interval_system(raw))
    np.testing.assert_allclose([V.lambda0, V.c0], [lam0, c0], atol=1e-10)
    np.testing.assert_allclose(V.lambdas, lams, rtol=1e-10)
    np.testing.assert_allclose(V.poles, poles, atol=1e-10)
    # the frozen values themselves match the oracle
    o = potential_closed_form(raw[0][0], raw[0][1], raw[1:])
    np.testing.assert_allclose([o[0], o[1]], [lam0, c0], atol=1e-12)
    np.testing.assert_allclose(o[2], lams, rtol=1e-12)


@st.composite
def interval_systems(draw, max_genus=4):
    g = draw(st.integers(0, max_genus))
    pts = draw(st.lists(st.floats(-0.95, 0.95), min_size=2 * g, max_size=2 * g, unique=True))
    x = np.sort(np.asarray(pts))
    if g and np.min(np.diff(np.r_[-1.0, x, 1.0])) < 0.02:
        x = np.linspace(-1, 1, 2 * g + 2)[1:-1]
    scale = draw(st.floats(0.5, 5.0))
    shift = draw(st.floats(-3.0, 3.0))
    edges = shift + scale * x
    return validate_interval_system([(shift - scale, shift + scale)] + [(edges[2 * i], edges[2 * i + 1]) for i in range(g)])


@settings(max_examples=60, deadline=None)
@given(interval_systems())
def test_solver_matches_closed_form(E):
    V = solve_potential(E)
    lam0, c0, lams, poles = potential_closed_form(E.b0, E.a0, E.gaps)
    scale = 1 + abs(lam0) + abs(c0)
    assert abs(V.lambda0 - lam0) < 1e-8 * scale
    assert abs(V.c0 - c0) < 1e-8 * scale
    np.testing.assert_allclose(V.poles, poles, atol=1e-8 * (E.a0 - E.b0))
    np.testing.assert_allclose(V.lambdas, lams, rtol=1e-7)
    # boundary values: -2 at left band edges, +2 at right band edges
    np.testing.assert_allclose(V(E.left_edges), -2.0, atol=1e-9)
    np.testing.assert_allclose(V(E.right_edges), 2.0, atol=1e-9)


def test_extreme_gaps():
    for E in (
        validate_interval_system([(-1, 1), (-0.999, 0.999)]),
        validate_interval_system([(-1, 1), (0.0, 1e-6)]),
        validate_interval_system([(-1, 1)] + [(x, x + 0.01) for x in np.linspace(-0.9, 0.8, 6)]),
    ):
        V = solve_potential(E)
        assert verify_potential(V, E).ok


def test_tol_validated(E2):
    with pytest.raises(ValueError):
        solve_potential(E2, tol=0.0)
    with pytest.raises(ValueError):
        solve_potential(E2, tol=1e-3)


def test_nonconvergence_reported(E3):
    with pytest.raises(SolverError):
        solve_potential(E3, max_iter=1)


def test_eval_potential_derivative(V3):
    z = np.array([-2.5, 0.1 + 0.3j, 2.7])
    val, der = eval_potential(V3, z)
    np.testing.assert_allclose(val, potential_value(V3.lambda0, V3.c0, V3.lambdas, V3.poles, z), rtol=1e-14)
    h = 1e-6
    fd = (eval_potential(V3, z + h)[0] - eval_potential(V3, z - h)[0]) / (2 * h)
    np.testing.assert_allclose(der, fd, rtol=1e-7)
    assert np.all(der[np.isreal(z)].real > 0)


def test_eval_at_pole_raises(V2):
    with pytest.raises(ZeroDivisionError):
        eval_potential(V2, 0.0)


def test_potential_class_validation():
    with pytest.raises(ValueError):
        PotentialV(-1.0, 0.0)
    with pytest.raises(ValueError):
        PotentialV(1.0, 0.0, (1.0,), (0.0, 1.0))
    with pytest.raises(ValueError):
        PotentialV(1.0, 0.0, (1.0, -1.0), (0.0, 1.0))


def test_potential_dict_roundtrip(V3):
    assert PotentialV.from_dict(V3.to_dict()) == V3


@pytest.mark.parametrize("y", [-2.0, -1.3, 0.0, 0.7, 2.0])
def test_preimage(V3, y):
    xs = potential_preimage(V3, y)
    assert len(xs) == V3.genus + 1
    np.testing.assert_allclose(V3(np.array(xs)), y, atol=1e-10)


def test_preimage_outside_range(V3):
    with pytest.raises(ValueError):
        potential_preimage(V3, 5.0)


def test_verify_flags_wrong_potential(V3, E3):
    assert verify_potential(V3, E3).ok
    bad = PotentialV(V3.lambda0 * 1.01, V3.c0, V3.lambdas, V3.poles)
    rep = verify_potential(bad, E3)
    assert not rep.ok
    assert rep.max_violation > 1e-3
