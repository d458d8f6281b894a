import numpy as np
import pytest

from gsmpkit.gsmp import GsmpBlockPair, fiber_band_edges, fiber_magic_check
from gsmpkit.isospectral import (
    build_periodic,
    coordinate_names,
    explicit_point,
    iso_jacobian,
    iso_residuals,
    sample_torus,
    solve_iso_point,
)
from gsmpkit.spectral_sets import SolverError, solve_potential, validate_interval_system
from oracles import lambda_product

THETAS = np.linspace(0, 2 * np.pi, 64, endpoint=False)


def _oracle_lambdas(pair, poles):
    pq = (pair.p, pair.q)
    return np.array([lambda_product(pq, pq, poles, k) for k in range(1, len(poles) + 1)])


def test_coordinate_names():
    assert coordinate_names(2) == ["p0", "p1", "p2", "q0", "q1", "q2"]


def test_explicit_point(V2, V3):
    pr = explicit_point(V2)
    np.testing.assert_allclose(pr.p, [np.sqrt(2), 0.5])
    np.testing.assert_allclose(pr.q, [0.0, 0.0], atol=0)
    for V in (V2, V3):
        pr = explicit_point(V)
        assert np.abs(iso_residuals(pr, V)).max() < 1e-13
        np.testing.assert_allclose(_oracle_lambdas(pr, V.poles), V.lambdas, rtol=1e-12)


def test_pinned_solve_frozen(V2, E2):
    # with q0 = 1/2 pinned: p0^2 = 1.55 (frozen); Lambda_1 and the spectrum checked independently
    pt = solve_iso_point(V2, pins={"q0": 0.5})
    assert pt.p[0] ** 2 == pytest.approx(1.55, abs=1e-12)
    assert pt.p[1] == pytest.approx(0.5, abs=1e-14)
    assert pt.q[1] == pytest.approx(-2 * pt.p[0] * 0.5, abs=1e-12)
    np.testing.assert_allclose(_oracle_lambdas(pt.pair, V2.poles), [4.0], atol=1e-11)
    np.testing.assert_allclose(fiber_band_edges(pt.pair, V2.poles), E2.edges, atol=1e-10)
    assert pt.residual < 1e-12 and pt.margin > 0 and pt.pins == {"q0": 0.5}


def test_periodic_point_exact(periodic_point):
    np.testing.assert_allclose(periodic_point.p, [np.sqrt(2), 0.5], atol=1e-12)
    np.testing.assert_allclose(periodic_point.q, [0.0, 0.0], atol=1e-12)


def test_sign_normalization(V3):
    pt = solve_iso_point(V3, pins={"q0": 0.3, "q1": -0.2})
    assert np.all(pt.p >= 0)


def test_pin_validation(V2, V3):
    with pytest.raises(ValueError):
        solve_iso_point(V3, pins={"q0": 0.0})
    with pytest.raises(ValueError):
        solve_iso_point(V2, pins={"p1": 0.5})
    with pytest.raises(ValueError):
        solve_iso_point(V2, pins={"x0": 0.5})
    with pytest.raises(ValueError):
        solve_iso_point(V2, chart="z")
    with pytest.raises(ValueError):
        solve_iso_point(V3, seed=explicit_point(V2))


def test_unreachable_pin_fails(V2):
    # p0 = 0 would make Lambda_1 vanish; Lambda_1 = 4 is unreachable on that chart
    with pytest.raises(SolverError):
        solve_iso_point(V2, pins={"p0": 0.0}, max_iter=20)


def test_jacobian_frozen_and_fd(periodic_point, V2, V3, torus3):
    J = iso_jacobian(periodic_point.pair, V2)
    # d Lambda_1 / d p0 = 2 lambda0 p0 = 4 sqrt 2 at q = 0 (frozen)
    assert J.matrix[0, 0] == pytest.approx(4 * np.sqrt(2), abs=1e-12)
    assert J.matrix.shape == (1, 2)
    for pt in torus3:
        a = iso_jacobian(pt.pair, V3).matrix
        f = iso_jacobian(pt.pair, V3, mode="finite-difference").matrix
        np.testing.assert_allclose(a, f, atol=1e-7 * (1 + np.abs(a).max()))
    with pytest.raises(ValueError):
        iso_jacobian(periodic_point.pair, V2, mode="complex-step")


def test_torus_samples_certified(V3, E3, torus3):
    assert len(torus3) == 4
    X = np.array([np.r_[pt.p, pt.q] for pt in torus3])
    d = np.linalg.norm(X[:, None] - X[None], axis=-1)
    assert np.min(d[np.triu_indices(len(X), 1)]) > 1e-3
    for pt in torus3:
        assert pt.residual < 1e-10
        assert fiber_magic_check(pt.pair, V3.poles, V3, THETAS) < 1e-9
        np.testing.assert_allclose(fiber_band_edges(pt.pair, V3.poles), E3.edges, atol=1e-9)
        np.testing.assert_allclose(_oracle_lambdas(pt.pair, V3.poles), V3.lambdas, rtol=1e-10)


def test_torus_genus_three_and_threads():
    V = solve_potential(validate_interval_system([(-3, 3), (-2.5, -2), (-1, 0), (1, 2.2)]))
    a = sample_torus(V, 3)
    b = sample_torus(V, 3, workers=3)
    assert len(a) == 3
    for x, y in zip(a, b):
        assert x.pair == y.pair
        assert fiber_magic_check(x.pair, V.poles, V, THETAS) < 1e-9


def test_torus_count_validated(V2):
    with pytest.raises(ValueError):
        sample_torus(V2, 0)


def test_build_periodic(periodic_point):
    W = build_periodic(periodic_point, 3)
    assert (W.j_min, W.j_end) == (-3, 3)
    with pytest.raises(ValueError):
        build_periodic(periodic_point, 0)
    with pytest.raises(ValueError):
        build_periodic(periodic_point.pair, 2)
    W2 = build_periodic(GsmpBlockPair([1.0, 0.5], [0.0, 0.0]), 2, poles=(0.0,))
    assert W2.n_blocks == 4
