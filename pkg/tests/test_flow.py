import numpy as np
import pytest

import gsmpkit.flow as flow_mod
from gsmpkit.acceptance import random_certified_window
from gsmpkit.analysis import lanczos_F
from gsmpkit.flow import (
    FlowDiscrepancy,
    FlowTrace,
    compatibility_residual,
    extract_jacobi,
    flow_J,
    flow_J_conjugation,
    flow_O,
    flow_O_conjugation,
    flow_run,
    max_flow_steps,
    rotation_U,
)
from gsmpkit.gsmp import GsmpBlockPair, GsmpWindow, check_gsmp_class
from gsmpkit.isospectral import build_periodic
from oracles import givens_cascade, jacobi_flow_dense


def _diff(A, B, lo, hi):
    Pa, Qa = A.rows(lo, hi)
    Pb, Qb = B.rows(lo, hi)
    return max(np.abs(Pa - Pb).max(), np.abs(Qa - Qb).max())


@pytest.mark.parametrize("g", [1, 2, 3, 4])
def test_rotation(g, rng):
    p = rng.uniform(0.1, 2, g + 1)
    U = rotation_U(p)
    np.testing.assert_allclose(U.T @ U, np.eye(g + 1), atol=1e-15)
    np.testing.assert_allclose(p @ U, np.r_[np.linalg.norm(p), np.zeros(g)], atol=1e-14)
    np.testing.assert_allclose(U, givens_cascade(p), atol=1e-15)


@pytest.mark.parametrize("g", [1, 2, 3])
def test_fast_flow_matches_dense_oracle(g, rng):
    for _ in range(4):
        W, _ = random_certified_window(rng, g, -6, 6)
        fast = flow_J(W)
        assert fast.trusted == (W.trusted[0], W.trusted[1] - 1)
        P, Q = jacobi_flow_dense(W.P, W.Q, W.poles)
        # oracle row r corresponds to block j_min + r; rows 1 .. nb-2 are complete
        Pf, Qf = fast.rows(W.j_min + 1, W.j_end - 1)
        np.testing.assert_allclose(Pf, P[1:-1], atol=1e-12)
        np.testing.assert_allclose(Qf, Q[1:-1], atol=1e-12)


@pytest.mark.parametrize("g", [1, 2, 3])
def test_flow_paths_agree(g, rng):
    W, _ = random_certified_window(rng, g, -8, 8)
    fast = flow_J(W)
    ref = flow_J(W, path="reference")
    conj = flow_J_conjugation(W)
    lo, hi = max(fast.trusted[0], ref.trusted[0], conj.trusted[0]), min(fast.trusted[1], ref.trusted[1], conj.trusted[1])
    assert hi - lo >= 8
    assert _diff(fast, ref, lo, hi) < 1e-12
    assert _diff(fast, conj, lo + 1, hi - 1) < 1e-11
    both = flow_J(W, path="both")
    assert _diff(both, fast, lo, hi) == 0.0
    with pytest.raises(ValueError):
        flow_J(W, path="sideways")


@pytest.mark.parametrize("g", [1, 2, 3])
def test_rotation_step(g, rng):
    W, _ = random_certified_window(rng, g, -8, 8)
    O = flow_O(W)
    assert O.poles == (W.poles[-1],) + W.poles[:-1]
    assert O.trusted == (W.trusted[0] + 1, W.trusted[1])
    C = flow_O_conjugation(W)
    lo, hi = max(O.trusted[0], C.window.trusted[0]), min(O.trusted[1], C.window.trusted[1])
    assert _diff(O, C.window, lo + 1, hi - 1) < 1e-11
    assert C.structure_defect < 1e-11
    assert np.abs(compatibility_residual(W)).max() < 1e-11


@pytest.mark.parametrize("n", [1, 2, 3])
def test_shift_commutation(n, rng):
    W, _ = random_certified_window(rng, 2, -10, 10)
    a, b = flow_O(W), W
    for _ in range(n):
        b = flow_J(b)
    b = flow_O(b)
    for _ in range(n):
        a = flow_J(a)
    lo, hi = max(a.trusted[0], b.trusted[0]), min(a.trusted[1], b.trusted[1])
    assert hi - lo > 5
    assert _diff(a, b, lo, hi) < 1e-10


def test_lanczos_commutation(rng):
    W, _ = random_certified_window(rng, 2, -20, 20)
    F0 = lanczos_F(W, 15).shifted(1)
    F1 = lanczos_F(flow_J(W), 15)
    n = np.arange(-13, 13)
    np.testing.assert_allclose(F1.a_at(n), F0.a_at(n), atol=1e-10)
    np.testing.assert_allclose(F1.b_at(n), F0.b_at(n), atol=1e-10)


def test_periodic_flow_extraction(periodic_point):
    tr = flow_run(build_periodic(periodic_point, 20), 10, path="both")
    assert tr.stopped is None and tr.steps == 10
    assert max(tr.discrepancies) < 1e-14 and len(tr.discrepancies) == 10
    J = extract_jacobi(tr)
    assert J.start == -1
    n = np.arange(0, 11)
    np.testing.assert_allclose(J.a_at(n), np.where(n % 2 == 0, 1.5, 0.5), atol=1e-12)
    np.testing.assert_allclose(J.b_at(np.arange(-1, 10)), 0.0, atol=1e-12)
    assert np.isnan(J.a_at(-1)) and np.isnan(J.b_at(10))


def test_flow_run_exhausts_window(periodic_point):
    W = build_periodic(periodic_point, 5)
    assert max_flow_steps(W) == 4
    tr = flow_run(W, 10)
    assert tr.steps == 4
    assert tr.stopped.startswith("step 5") and "exhausted" in tr.stopped


def test_flow_run_rejects_uncertified_input(periodic_point):
    W = build_periodic(periodic_point, 5).replace_blocks({1: GsmpBlockPair([0.0, 0.5], [0.0, 0.0])})
    tr = flow_run(W, 3)
    assert tr.steps == 0 and tr.stopped.startswith("step 0")
    with pytest.raises(ValueError):
        flow_run(W, -1)


def test_injected_discrepancy_aborts_with_step(periodic_point, monkeypatch):
    real = flow_mod._flow_J_fast_arrays
    calls = {"n": 0}

    def corrupt(W):
        P, Q = real(W)
        calls["n"] += 1
        if calls["n"] == 3:
            P = P.copy()
            P[W.n_blocks // 2, 0] += 1e-6
        return P, Q

    monkeypatch.setattr(flow_mod, "_flow_J_fast_arrays", corrupt)
    tr = flow_run(build_periodic(periodic_point, 20), 10, path="both")
    assert tr.steps == 2
    assert tr.stopped.startswith("step 3") and "differ" in tr.stopped
    with pytest.raises(FlowDiscrepancy):
        calls["n"] = 2
        flow_J(build_periodic(periodic_point, 20), path="both")


def test_certification_loss_stops_flow(periodic_point):
    # min Lambda# is 2.83e-5 on the input and 9.43e-6 after one step
    W = build_periodic(periodic_point, 12).replace_blocks({3: GsmpBlockPair([1e-5, 0.5], [0.0, 0.0])})
    assert check_gsmp_class(W, margin=1e-5).certified
    tr = flow_run(W, 8, margin=1e-5)
    assert tr.steps == 0
    assert tr.stopped.startswith("step 1") and "Lambda#" in tr.stopped
    assert flow_run(W, 8, margin=1e-8).stopped is None


def test_trace_jsonl_roundtrip(rng):
    W, _ = random_certified_window(rng, 2, -6, 8)
    tr = flow_run(W, 4)
    text = tr.to_jsonl()
    back = FlowTrace.from_jsonl(text)
    assert back.steps == tr.steps and back.trust == tr.trust
    for a, b in zip(tr.iterates, back.iterates):
        assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q) and a.poles == b.poles
    assert back.to_jsonl() == text
