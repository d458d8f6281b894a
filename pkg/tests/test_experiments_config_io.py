import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmpkit.config import ConfigError, ExperimentConfig
from gsmpkit.experiments import PerturbationSpec, dichotomy_run, ks_report_from_trace, perturb_window
from gsmpkit.flow import flow_run
from gsmpkit.gsmp import GsmpWindow
from gsmpkit.io import dumps, fmt, read_json, write_json
from gsmpkit.isospectral import build_periodic


# --- perturbations ------------------------------------------------------------------

def test_spec_roundtrip():
    s = PerturbationSpec.from_dict({"family": "power-decay", "exponent": 0.5, "amplitude": 0.01, "seed": 7, "start": 2})
    assert PerturbationSpec.from_dict(s.to_dict()) == s
    assert PerturbationSpec.from_dict(None) == PerturbationSpec()
    with pytest.raises(ValueError):
        PerturbationSpec.from_dict({"family": "gaussian"})
    with pytest.raises(ValueError):
        PerturbationSpec.from_dict({"family": "custom", "custom": []})
    c = PerturbationSpec.from_dict({"family": "custom", "values": [{"j": 0, "dp": [0.1, 0]}]})
    assert c.custom == ({"j": 0, "dp": [0.1, 0]},)


def test_power_decay(periodic_point):
    W = GsmpWindow.constant(periodic_point.pair, (0.0,), -5, 40)
    spec = PerturbationSpec("power-decay", 1.0, 0.05, 3)
    A, B = perturb_window(W, spec), perturb_window(W, spec)
    assert np.array_equal(A.P, B.P) and np.array_equal(A.Q, B.Q)
    dP = np.abs(A.P - W.P)
    dQ = np.abs(A.Q - W.Q)
    assert np.all(dP[:5] == 0) and np.all(dQ[:5] == 0)
    n = np.arange(1, 41)
    np.testing.assert_allclose(dP[5:], 0.05 / n[:, None] * np.ones((1, 2)), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(dQ[5:], 0.05 / n[:, None] * np.ones((1, 2)), rtol=1e-12, atol=1e-15)
    C = perturb_window(W, PerturbationSpec("power-decay", 1.0, 0.05, 4))
    assert not np.array_equal(A.P, C.P)
    assert perturb_window(W, PerturbationSpec()) is W


def test_custom_perturbation(periodic_point):
    W = GsmpWindow.constant(periodic_point.pair, (0.0,), -5, 5)
    spec = PerturbationSpec("custom", custom=({"j": 1, "dp": [0.1, 0.0], "dq": [0.0, 0.2]},))
    A = perturb_window(W, spec)
    np.testing.assert_allclose(A.p(1) - W.p(1), [0.1, 0.0])
    np.testing.assert_allclose(A.q(1) - W.q(1), [0.0, 0.2])
    assert np.array_equal(A.P[:6], W.P[:6])
    with pytest.raises(IndexError):
        perturb_window(W, PerturbationSpec("custom", custom=({"j": 9},)))


def test_dichotomy_seed_zero(periodic_point):
    bounded = dichotomy_run(periodic_point, PerturbationSpec("power-decay", 1.0, 0.05, 0))
    growing = dichotomy_run(periodic_point, PerturbationSpec("power-decay", 0.5, 0.05, 0))
    assert set(bounded.series()) == {"H_plus", "hs_residual", "delta", "diag_p_diff", "diag_q_diff", "diag_pg", "diag_pq", "diag_lambda"}
    for k, v in bounded.series().items():
        assert v.size == 200, k
    assert max(bounded.tail_growth().values()) < 0.01
    assert min(growing.tail_growth().values()) > 0.01
    for v in growing.series().values():
        assert np.all(np.diff(v) > 0)
    # the flow is one-step telescoping: sum of delta = H(A) - H(J^N A) over the same blocks
    assert bounded.trace.stopped is None


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 10_000))
def test_growing_for_any_seed(periodic_point, seed):
    run = dichotomy_run(periodic_point, PerturbationSpec("power-decay", 0.5, 0.05, seed), steps=120)
    for v in run.series().values():
        assert np.all(np.diff(v) > 0)
    assert min(run.tail_growth().values()) > 0.01


def test_report_from_trace(periodic_point, V2):
    tr = flow_run(build_periodic(periodic_point, 20), 6)
    rep = ks_report_from_trace(tr, V2)
    assert rep.delta_series.shape == (6,)
    assert np.abs(rep.delta_series).max() < 1e-12
    assert np.abs(rep.H_plus.summands).max() < 1e-12
    assert rep.hs.total < 1e-24


# --- config -------------------------------------------------------------------------

def test_config_roundtrip():
    cfg = ExperimentConfig.from_dict(
        {
            "interval_system": {"outer": [-2, 2], "gaps": [[-1, 1]]},
            "perturbation": {"family": "power-decay", "exponent": 1, "amplitude": 0.05, "seed": 1},
            "flow_steps": 40,
            "truncation_sizes": [10, 20],
        }
    )
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert cfg.window == (-30, 42)


@pytest.mark.parametrize(
    "raw",
    [
        [],
        {},
        {"interval_system": [[2, -2]]},
        {"interval_system": [[-2, 2]], "potential_tol": 0},
        {"interval_system": [[-2, 2]], "torus_count": 0},
        {"interval_system": [[-2, 2]], "eta": 1.5},
        {"interval_system": [[-2, 2]], "flow_path": "slow"},
        {"interval_system": [[-2, 2]], "colour": "red"},
        {"interval_system": [[-2, 2]], "perturbation": {"family": "other"}},
        {"interval_system": [[-2, 2]], "truncation_sizes": [1]},
        {"interval_system": [[-2, 2]], "flow_steps": -1},
    ],
)
def test_config_errors(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_config_override():
    cfg = ExperimentConfig.from_dict({"interval_system": [[-2, 2], [-1, 1]]})
    o = cfg.override(seed=9, flow_steps=5, eta=None)
    assert o.perturbation.seed == 9 and o.flow_steps == 5 and o.eta == cfg.eta
    with pytest.raises(ConfigError):
        cfg.override(eta=2.0)


# --- io ----------------------------------------------------------------------------

@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_roundtrips(x):
    assert float(fmt(x)) == x


def test_fmt_special():
    assert fmt(float("nan")) == "nan"
    assert fmt(float("-inf")) == "-inf"
    assert fmt(-0.0) == "0"
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float32(0.5)) == "0.5"


def test_dumps(tmp_path):
    obj = {"a": [1, 2.5, np.float64(1 / 3)], "b": {"c": None, "d": True}, "e": np.arange(3), "f": float("nan")}
    text = dumps(obj)
    back = json.loads(text)
    assert back["a"][2] == 1 / 3
    assert back["e"] == [0, 1, 2]
    assert back["f"] == "nan"
    assert "0.33333333333333331" in text
    p = write_json(tmp_path / "x.json", obj)
    assert read_json(p)["b"] == {"c": None, "d": True}
    with pytest.raises(TypeError):
        dumps({"x": object()})
    assert math.isclose(json.loads(dumps(1e-300)), 1e-300)
