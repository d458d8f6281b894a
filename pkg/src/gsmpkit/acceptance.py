"""End-to-end acceptance checks, one function per criterion.

Each check returns a :class:`CheckResult`; :func:`run_all` runs them in
order.  Random inputs come from ``numpy.random.default_rng`` with fixed
seeds so repeated runs give identical numbers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import (
    JacobiWindow,
    cauchy_determinant,
    ks_delta,
    ks_functional_H,
    ks_spectral_side,
    lanczos_F,
    matrix_density_check,
    spectral_data,
)
from .experiments import PerturbationSpec, dichotomy_run, perturb_window
from .flow import flow_J, flow_J_conjugation, flow_O, flow_O_conjugation, flow_run
from .gsmp import (
    GsmpWindow,
    assemble_V_of_A,
    check_gsmp_class,
    fiber_band_edges,
    fiber_magic_check,
    lambda_iso,
    numeric_residue,
    resolvent_apply_local,
    resolvent_column_closed_form,
    residue_lambda,
    transfer_matrix,
)
from .isospectral import IsoPoint, build_periodic, sample_torus, solve_iso_point
from .spectral_sets import IntervalSystem, PotentialV, eval_potential, solve_potential, validate_interval_system

__all__ = ["CheckResult", "CHECKS", "run_all", "two_interval", "random_interval_system", "random_certified_window"]


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.2f} s)"


# --- shared inputs ------------------------------------------------------------

def two_interval() -> IntervalSystem:
    return validate_interval_system([(-2.0, 2.0), (-1.0, 1.0)])


def random_interval_system(rng: np.random.Generator, g: int, min_sep: float = 0.25) -> IntervalSystem:
    """Outer interval ``[-3, 3]`` with ``g`` random gaps whose edges are at least ``min_sep`` apart."""
    while True:
        x = np.sort(rng.uniform(-2.6, 2.6, 2 * g))
        pts = np.r_[-3.0, x, 3.0]
        if np.all(np.diff(pts) >= min_sep):
            return validate_interval_system([(-3.0, 3.0)] + [(x[2 * i], x[2 * i + 1]) for i in range(g)])


def random_certified_window(
    rng: np.random.Generator,
    g: int,
    lo: int = -12,
    hi: int = 12,
    noise: float = 0.05,
    tries: int = 50,
) -> tuple[GsmpWindow, PotentialV]:
    """Periodic window of a random spectrum with every block randomly perturbed.

    The perturbation is relative to each coordinate's size, and the result is
    redrawn until it passes the Lambda# check.
    """
    for _ in range(tries):
        V = solve_potential(random_interval_system(rng, g))
        pt = solve_iso_point(V)
        base = GsmpWindow.constant(pt.pair, V.poles, lo, hi)
        scale = 1.0 + np.abs(np.r_[pt.p, pt.q]).max()
        P = base.P + noise * scale * rng.standard_normal(base.P.shape)
        Q = base.Q + noise * scale * rng.standard_normal(base.Q.shape)
        P[:, g] = np.abs(P[:, g])
        W = GsmpWindow(V.poles, lo, P, Q, (lo, hi))
        if check_gsmp_class(W).certified:
            return W, V
    raise RuntimeError("could not draw a certified window")


def _periodic_point() -> IsoPoint:
    V = solve_potential(two_interval())
    return solve_iso_point(V, pins={"q0": 0.0})


def _timed(fn: Callable[[], CheckResult]) -> CheckResult:
    t = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t
    return res


# --- criteria -----------------------------------------------------------------

def check_potential() -> CheckResult:
    t = time.perf_counter()
    V = solve_potential(two_interval())
    dt = time.perf_counter() - t
    got = np.array([V.lambda0, V.c0, V.lambdas[0], V.poles[0]])
    err = float(np.abs(got - [2.0, 0.0, 4.0, 0.0]).max())
    ok = err < 1e-10 and dt < 1.0
    return CheckResult(1, "potential solver", ok, f"max error {err:.2e}, solve time {dt * 1e3:.1f} ms", values={"error": err, "time": dt})


def check_fibers(count: int = 12) -> CheckResult:
    V = solve_potential(two_interval())
    pts = sample_torus(V, count)
    thetas = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    magic = max(fiber_magic_check(pt.pair, V.poles, V, thetas) for pt in pts)
    edges = max(float(np.abs(fiber_band_edges(pt.pair, V.poles) - [-2, -1, 1, 2]).max()) for pt in pts)
    ok = bool(pts) and magic < 1e-9 and edges < 1e-8
    return CheckResult(2, "magic formula on fibers", ok, f"{len(pts)} points, magic {magic:.2e}, edges {edges:.2e}", values={"magic": magic, "edges": edges})


def check_transfer(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_tr = worst_det = 0.0
    n_pts = 0
    for g in (1, 2, 3):
        V = solve_potential(random_interval_system(rng, g))
        for pt in sample_torus(V, 4):
            n_pts += 1
            z = rng.uniform(-4, 4, 20) + 1j * rng.uniform(-2, 2, 20)
            for zz in z:
                T = transfer_matrix(zz, pt.pair, V.poles)
                v = eval_potential(V, zz)[0]
                worst_tr = max(worst_tr, abs(np.trace(T) - v) / (1 + abs(v)))
                worst_det = max(worst_det, abs(np.linalg.det(T) - 1))
    ok = worst_tr < 1e-9 and worst_det < 1e-12
    return CheckResult(3, "transfer-matrix identity", ok, f"{n_pts} points, trace {worst_tr:.2e}, det {worst_det:.2e}", values={"trace": worst_tr, "det": worst_det})


def check_residues(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_rel = worst_num = 0.0
    for g in (1, 2, 3, 4):
        V = solve_potential(random_interval_system(rng, g, 0.2))
        for pt in sample_torus(V, 3):
            for k in range(1, g + 1):
                r = residue_lambda(pt.pair, V.poles, k)
                lam = lambda_iso(pt.pair, V.poles, k)
                worst_rel = max(worst_rel, abs(r - lam) / abs(lam))
                worst_num = max(worst_num, abs(numeric_residue(pt.pair, V.poles, k) - r) / abs(r))
    ok = worst_rel < 1e-10 and worst_num < 1e-4
    return CheckResult(4, "residue consistency", ok, f"product vs functional {worst_rel:.2e}, numeric probe {worst_num:.2e}", values={"rel": worst_rel, "numeric": worst_num})


def check_resolvent(n_windows: int = 100, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_abs = worst_rel = worst_res = 0.0
    for t in range(n_windows):
        g = 1 + t % 3
        W, _ = random_certified_window(rng, g, -4, 5)
        g1 = g + 1
        for k in range(1, g + 1):
            cf = resolvent_column_closed_form(W, k, 0)
            loc = resolvent_apply_local(W, k, k - 1)
            if not cf.start == loc.start == -g1:
                raise AssertionError("closed-form and dense columns are not aligned")
            diff = float(np.abs(cf.values - loc.values).max())
            worst_abs = max(worst_abs, diff)
            worst_rel = max(worst_rel, diff / float(np.abs(loc.values).max()))
            worst_res = max(worst_res, cf.residual)
    ok = worst_abs < 1e-10 and worst_res < 1e-12
    return CheckResult(
        5,
        "resolvent closed forms",
        ok,
        f"{n_windows} windows, vs dense {worst_abs:.2e} (relative {worst_rel:.2e}), equation residual {worst_res:.2e}",
        values={"abs": worst_abs, "rel": worst_rel, "residual": worst_res},
    )


def _window_diff(A: GsmpWindow, B: GsmpWindow, lo: int, hi: int) -> float:
    Pa, Qa = A.rows(lo, hi)
    Pb, Qb = B.rows(lo, hi)
    return max(float(np.abs(Pa - Pb).max()), float(np.abs(Qa - Qb).max()))


def _iterate(W: GsmpWindow, n: int) -> GsmpWindow:
    for _ in range(n):
        W = flow_J(W)
    return W


def check_flow(n_windows: int = 12, seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_j = worst_o = worst_shift = 0.0
    for t in range(n_windows):
        g = 1 + t % 3
        W, _ = random_certified_window(rng, g, -10, 10)
        fast = flow_J(W)
        conj = flow_J_conjugation(W)
        lo, hi = max(fast.trusted[0], conj.trusted[0]), min(fast.trusted[1], conj.trusted[1])
        worst_j = max(worst_j, _window_diff(fast, conj, lo + 1, hi - 1))
        O = flow_O(W)
        Oc = flow_O_conjugation(W).window
        lo, hi = max(O.trusted[0], Oc.trusted[0]), min(O.trusted[1], Oc.trusted[1])
        worst_o = max(worst_o, _window_diff(O, Oc, lo + 1, hi - 1))
        for n in (1, 2, 3):
            a = flow_O(_iterate(W, n))
            b = _iterate(flow_O(W), n)
            lo, hi = max(a.trusted[0], b.trusted[0]), min(a.trusted[1], b.trusted[1])
            worst_shift = max(worst_shift, _window_diff(a, b, lo, hi))
    ok = worst_j < 1e-11 and worst_o < 1e-11 and worst_shift < 1e-10
    return CheckResult(
        6,
        "flow dual path",
        ok,
        f"J vs conjugation {worst_j:.2e}, O vs conjugation {worst_o:.2e}, shift commutation {worst_shift:.2e}",
        values={"J": worst_j, "O": worst_o, "shift": worst_shift},
    )


def check_commutation(n_windows: int = 6, depth: int = 15, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(n_windows):
        g = 1 + t % 3
        W, _ = random_certified_window(rng, g, -depth - 4, depth + 4)
        F0 = lanczos_F(W, depth).shifted(1)
        F1 = lanczos_F(flow_J(W), depth)
        n = np.arange(max(F0.start, F1.start) + 1, min(F0.end, F1.end) - 1)
        da = np.abs(F0.a_at(n) - F1.a_at(n))
        db = np.abs(F0.b_at(n) - F1.b_at(n))
        worst = max(worst, float(np.nanmax(np.r_[da, db])))
    ok = worst < 1e-8
    return CheckResult(7, "commutation with the shift", ok, f"max coefficient difference {worst:.2e}", values={"error": worst})


def check_extraction() -> CheckResult:
    t = time.perf_counter()
    pt = _periodic_point()
    trace = flow_run(build_periodic(pt, 20), 10)
    J = trace.extracted
    n = np.arange(0, J.end)
    want_a = np.where(n % 2 == 0, 1.5, 0.5)
    err_flow = max(float(np.abs(J.a_at(n) - want_a).max()), float(np.abs(J.b_at(np.arange(-1, J.end - 1))).max()))
    # oracle: Lanczos on the 400 x 400 half-line truncation
    Jo = lanczos_F(build_periodic(pt, 201), 150)
    m = np.arange(0, 150)
    want_o = np.where(m % 2 == 0, 1.5, 0.5)
    err_oracle = max(float(np.abs(Jo.a_at(m) - want_o).max()), float(np.abs(Jo.b_at(m)).max()))
    k = np.arange(0, J.end)
    err_cmp = float(np.abs(J.a_at(k) - Jo.a_at(k)).max())
    dt = time.perf_counter() - t
    ok = trace.stopped is None and max(err_flow, err_oracle, err_cmp) < 1e-8 and dt < 5.0
    return CheckResult(
        8,
        "coefficient extraction",
        ok,
        f"flow {err_flow:.2e}, Lanczos oracle {err_oracle:.2e}, flow vs oracle {err_cmp:.2e}, time {dt:.2f} s",
        values={"flow": err_flow, "oracle": err_oracle, "compare": err_cmp, "time": dt},
    )


def check_ks_fixed_points(seed: int = 9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_fixed = worst_tel = 0.0
    n_tel = 0
    for g in (1, 2, 3):
        V = solve_potential(random_interval_system(rng, g))
        for pt in sample_torus(V, 3):
            W = build_periodic(pt, 24)
            VA = assemble_V_of_A(W, V, (0, 16))
            H = ks_functional_H(VA, (0, 15))
            worst_fixed = max(worst_fixed, float(np.abs(H.summands).max()), abs(ks_delta(W, V)))
            # compactly supported perturbation on blocks 0..3
            vals = [
                {"j": j, "dp": (0.03 * rng.standard_normal(g + 1)).tolist(), "dq": (0.03 * rng.standard_normal(g + 1)).tolist()}
                for j in range(4)
            ]
            Wp = perturb_window(W, PerturbationSpec("custom", custom=tuple(vals)))
            if not check_gsmp_class(Wp).certified:
                continue
            JW = flow_J(Wp)
            H0 = ks_functional_H(assemble_V_of_A(Wp, V, (0, 16)), (0, 15)).total
            H1 = ks_functional_H(assemble_V_of_A(JW, V, (0, 16)), (0, 15)).total
            worst_tel = max(worst_tel, abs(H0 - H1 - ks_delta(Wp, V, JW)))
            n_tel += 1
    ok = worst_fixed < 1e-10 and worst_tel < 1e-9 and n_tel > 0
    return CheckResult(9, "KS functional", ok, f"periodic summands and delta {worst_fixed:.2e}, telescoping {worst_tel:.2e} on {n_tel} windows", values={"fixed": worst_fixed, "telescoping": worst_tel})


def check_dichotomy(seed: int = 0, steps: int = 200) -> CheckResult:
    pt = _periodic_point()
    growth = {}
    times = {}
    monotone = True
    for label, exponent in (("bounded", 1.0), ("growing", 0.5)):
        t = time.perf_counter()
        run = dichotomy_run(pt, PerturbationSpec("power-decay", exponent, 0.05, seed), steps)
        times[label] = time.perf_counter() - t
        growth[label] = run.tail_growth()
        if label == "growing":
            monotone = all(bool(np.all(np.diff(s) > 0)) for s in run.series().values())
    b_max = max(growth["bounded"].values())
    g_min = min(growth["growing"].values())
    ok = b_max < 0.01 and g_min >= 0.01 and monotone and max(times.values()) < 60
    return CheckResult(
        10,
        "l2 dichotomy",
        ok,
        f"n^-1 worst tail growth {b_max:.2%}, n^-1/2 least tail growth {g_min:.2%}, monotone {monotone}, "
        f"run times {times['bounded']:.1f} s / {times['growing']:.1f} s",
        values={"bounded": growth["bounded"], "growing": growth["growing"], "times": times},
    )


def check_density(seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_d = worst_c = 0.0
    for g in (1, 2, 3, 4):
        for _ in range(5):
            V = solve_potential(random_interval_system(rng, g, 0.2))
            y = float(rng.choice([-1, 1]) * rng.uniform(0.3, 3.0))
            worst_d = max(worst_d, matrix_density_check(V, y, rng.uniform(0.2, 2.0, g)))
            c = np.sort(rng.uniform(-3, 3, g))
            x = rng.uniform(-3, 3, g)
            direct, formula = cauchy_determinant(c, x)
            worst_c = max(worst_c, abs(direct - formula) / abs(formula))
    ok = worst_d < 1e-10 and worst_c < 1e-10
    return CheckResult(11, "matrix density", ok, f"density residual {worst_d:.2e}, Cauchy determinant {worst_c:.2e}", values={"density": worst_d, "cauchy": worst_c})


def free_ac_oracle(edge_delta: float) -> float:
    """``int |log rho| sqrt(dist)`` for the semicircle density ``rho = sqrt(4 - x^2) / (2 pi)`` on ``[-2, 2]``."""
    from scipy import integrate

    f = lambda x: abs(np.log(np.sqrt(4 - x * x) / (2 * np.pi))) * np.sqrt(2 - abs(x))
    return 2 * integrate.quad(f, 0.0, 2 - edge_delta, limit=200)[0]


def check_spectral_side(sizes=(500, 1000, 2000), d: float = 0.3) -> CheckResult:
    E = validate_interval_system([(-2.0, 2.0)])
    ac = {}
    oracle = {}
    ev_err = 0.0
    for N in sizes:
        data = spectral_data(JacobiWindow.constant(1.0, 0.0, 0, N), N)
        s = ks_spectral_side(data, E)
        ac[N] = s.ac_term
        oracle[N] = free_ac_oracle(N**-0.5)
        s2 = ks_spectral_side(data.with_point(2.0 + d), E)
        ev_err = max(ev_err, abs((s2.ev_term - s.ev_term) - d**1.5))
    vals = np.array(list(ac.values()))
    spread = float((vals.max() - vals.min()) / vals.min())
    vs_oracle = max(abs(ac[N] / oracle[N] - 1) for N in sizes)
    ok = spread < 0.05 and vs_oracle < 0.05 and ev_err < 1e-12
    return CheckResult(
        12,
        "spectral side",
        ok,
        f"ac_term spread {spread:.2%}, vs semicircle oracle {vs_oracle:.2%}, eigenvalue term {ev_err:.2e}",
        values={"ac": ac, "oracle": oracle, "ev": ev_err},
    )


CHECKS: dict[int, Callable[[], CheckResult]] = {
    1: check_potential,
    2: check_fibers,
    3: check_transfer,
    4: check_residues,
    5: check_resolvent,
    6: check_flow,
    7: check_commutation,
    8: check_extraction,
    9: check_ks_fixed_points,
    10: check_dichotomy,
    11: check_density,
    12: check_spectral_side,
}


def run_one(number: int) -> CheckResult:
    try:
        return _timed(CHECKS[number])
    except Exception as exc:  # a crash counts as a failure, not an abort of the suite
        return CheckResult(number, CHECKS[number].__name__.removeprefix("check_"), False, f"error: {type(exc).__name__}: {exc}")


def run_all(numbers=None, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    out = []
    for k in numbers or sorted(CHECKS):
        res = run_one(k)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
