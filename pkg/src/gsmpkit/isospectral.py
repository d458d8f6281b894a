"""Periodic GSMP matrices with a prescribed spectrum.

A constant-block matrix with generating vectors ``p, q`` has spectrum ``E``
exactly when

* ``p_g = 1 / lambda0``
* ``q_g = -c0 - lambda0 * sum_{j<g} p_j q_j``
* ``Lambda_k(p, q) = lambda_k`` for ``k = 1..g``.

These ``g + 2`` equations cut a ``g``-dimensional torus out of ``R^{2g+2}``.
Points are found by Newton's method with ``g`` coordinates pinned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .gsmp import (
    JMAT,
    GsmpBlockPair,
    GsmpWindow,
    _afin_batch,
    _ainf_batch,
    fiber_magic_check,
    lambda_all,
)
from .spectral_sets import PotentialV, SolverError

__all__ = [
    "IsoPoint",
    "IsoJacobian",
    "coordinate_names",
    "iso_residuals",
    "lambda_gradient",
    "iso_jacobian",
    "explicit_point",
    "solve_iso_point",
    "sample_torus",
    "build_periodic",
]

log = logging.getLogger(__name__)


def coordinate_names(g: int) -> list[str]:
    """Names of the ``2g + 2`` coordinates in storage order ``p0..pg, q0..qg``."""
    return [f"p{m}" for m in range(g + 1)] + [f"q{m}" for m in range(g + 1)]


def _pack(pair: GsmpBlockPair) -> np.ndarray:
    return np.r_[pair.p, pair.q]


def _unpack(x: np.ndarray) -> GsmpBlockPair:
    g1 = x.size // 2
    return GsmpBlockPair(x[:g1], x[g1:])


def iso_residuals(pair: GsmpBlockPair, V: PotentialV) -> np.ndarray:
    """Residuals of the ``g + 2`` surface equations."""
    g = pair.genus
    if V.genus != g:
        raise ValueError("genus of pair and potential differ")
    p, q = pair.p, pair.q
    r0 = p[g] - 1.0 / V.lambda0
    r1 = q[g] + V.c0 + V.lambda0 * float(p[:g] @ q[:g])
    return np.r_[r0, r1, lambda_all(pair, V.poles) - np.asarray(V.lambdas)]


def _factor_chain(p, q, poles, k):
    """Factors of ``-Lambda_k`` with the coordinate each depends on.

    Returns a list of ``(matrix, [(coord_index, derivative), ...])``.
    """
    g = len(poles)
    ck = poles[k - 1]
    chain = []

    def fin(m):
        d = poles[m] - ck
        u = np.array([p[m], q[m]])
        F = _afin_batch(ck, poles[m], p[m], q[m])
        dp = -(np.outer([1.0, 0.0], u) + np.outer(u, [1.0, 0.0])) @ JMAT / d
        dq = -(np.outer([0.0, 1.0], u) + np.outer(u, [0.0, 1.0])) @ JMAT / d
        return F, [(m, dp), (g + 1 + m, dq)]

    for m in range(k - 1):
        chain.append(fin(m))
    m = k - 1
    u = np.array([p[m], q[m]])
    mid = np.outer(u, u) @ JMAT
    dp = (np.outer([1.0, 0.0], u) + np.outer(u, [1.0, 0.0])) @ JMAT
    dq = (np.outer([0.0, 1.0], u) + np.outer(u, [0.0, 1.0])) @ JMAT
    chain.append((mid, [(m, dp), (g + 1 + m, dq)]))
    for m in range(k, g):
        chain.append(fin(m))
    pg, qg = p[g], q[g]
    Finf = _ainf_batch(ck, pg, qg)
    dpg = np.array([[0.0, -1.0], [-1.0 / pg**2, -ck / pg**2]])
    dqg = np.array([[0.0, 0.0], [0.0, -1.0]])
    chain.append((Finf, [(g, dpg), (2 * g + 1, dqg)]))
    return chain


def lambda_gradient(pair: GsmpBlockPair, poles: Sequence[float]) -> np.ndarray:
    """``d Lambda_k / d x`` for all coordinates ``x = (p0..pg, q0..qg)``.

    Product rule over the Blaschke-Potapov factors; shape ``(g, 2g + 2)``.
    """
    g = pair.genus
    out = np.zeros((g, 2 * g + 2))
    for k in range(1, g + 1):
        chain = _factor_chain(pair.p, pair.q, poles, k)
        mats = [F for F, _ in chain]
        n = len(mats)
        prefix = [np.eye(2)]
        for F in mats[:-1]:
            prefix.append(prefix[-1] @ F)
        suffix = [np.eye(2)] * n
        acc = np.eye(2)
        for i in range(n - 1, -1, -1):
            suffix[i] = acc
            acc = mats[i] @ acc
        for i, (_, derivs) in enumerate(chain):
            for idx, D in derivs:
                out[k - 1, idx] -= np.trace(prefix[i] @ D @ suffix[i])
    return out


@dataclass(frozen=True, eq=False)
class IsoJacobian:
    """``d Lambda / d (p0..p_{g-1}, q0..q_{g-1})`` at fixed ``p_g, q_g``."""

    matrix: np.ndarray
    mode: str

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2)) if self.matrix.size else 0.0


def iso_jacobian(pair: GsmpBlockPair, V: PotentialV, mode: str = "analytic") -> IsoJacobian:
    """Jacobian of ``(Lambda_1..Lambda_g)`` in the ``2g`` free coordinates.

    ``mode="finite-difference"`` uses central differences with step
    ``1e-6 * (1 + |x|)``.
    """
    g = pair.genus
    free = list(range(g)) + list(range(g + 1, 2 * g + 1))
    if mode == "analytic":
        T = lambda_gradient(pair, V.poles)[:, free]
    elif mode in ("finite-difference", "fd"):
        x = _pack(pair)
        T = np.empty((g, 2 * g))
        for col, idx in enumerate(free):
            h = 1e-6 * (1 + abs(x[idx]))
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            T[:, col] = (lambda_all(_unpack(xp), V.poles) - lambda_all(_unpack(xm), V.poles)) / (2 * h)
        mode = "finite-difference"
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if not np.all(np.isfinite(T)):
        raise FloatingPointError("non-finite Jacobian (pole collision)")
    return IsoJacobian(T, mode)


def _residual_jacobian(x: np.ndarray, V: PotentialV) -> np.ndarray:
    g1 = x.size // 2
    g = g1 - 1
    p, q = x[:g1], x[g1:]
    J = np.zeros((g + 2, 2 * g1))
    J[0, g] = 1.0
    J[1, 2 * g + 1] = 1.0
    J[1, :g] = V.lambda0 * q[:g]
    J[1, g1 : g1 + g] = V.lambda0 * p[:g]
    if g:
        J[2:] = lambda_gradient(_unpack(x), V.poles)
    return J


@dataclass(frozen=True, eq=False)
class IsoPoint:
    """Certified point of the isospectral surface."""

    pair: GsmpBlockPair
    V: PotentialV
    residual: float
    margin: float
    pins: dict = field(default_factory=dict)

    @property
    def p(self) -> np.ndarray:
        return self.pair.p

    @property
    def q(self) -> np.ndarray:
        return self.pair.q

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "q": self.q.tolist(), "residual": self.residual, "margin": self.margin}


def explicit_point(V: PotentialV) -> GsmpBlockPair:
    """The surface point with ``q_0 = ... = q_{g-1} = 0``.

    With these ``q`` the functionals reduce to ``Lambda_k = lambda0 p_{k-1}^2``.
    """
    g = V.genus
    p = np.r_[np.sqrt(np.asarray(V.lambdas, float) / V.lambda0), 1.0 / V.lambda0]
    q = np.zeros(g + 1)
    q[g] = -V.c0
    return GsmpBlockPair(p, q)


def _normalize_signs(x: np.ndarray) -> np.ndarray:
    """Flip ``(p_j, q_j) -> (-p_j, -q_j)`` so that each ``p_j >= 0`` (``q_j >= 0`` if ``p_j = 0``)."""
    g1 = x.size // 2
    x = x.copy()
    for j in range(g1 - 1):
        if x[j] < 0 or (x[j] == 0 and x[g1 + j] < 0):
            x[j], x[g1 + j] = -x[j], -x[g1 + j]
    return x


def _newton(x0: np.ndarray, pinned: list[int], V: PotentialV, tol: float, max_iter: int) -> np.ndarray:
    g1 = x0.size // 2
    free = [i for i in range(2 * g1) if i not in pinned]
    x = x0.copy()

    def resid(y):
        return iso_residuals(_unpack(y), V)

    if x[g1 - 1] <= 0:
        x[g1 - 1] = 1.0 / V.lambda0
    r = resid(x)
    norm = np.abs(r).max()
    for _ in range(max_iter):
        if norm <= tol:
            return x
        J = _residual_jacobian(x, V)[:, free]
        if np.linalg.cond(J) > 1e12:
            raise SolverError("pinned chart is singular at the current iterate")
        step = np.linalg.solve(J, -r)
        t = 1.0
        while t > 1e-10:
            trial = x.copy()
            trial[free] += t * step
            if trial[g1 - 1] > 0:
                r_t = resid(trial)
                n_t = np.abs(r_t).max()
                if n_t < norm or n_t <= tol:
                    break
            t *= 0.5
        else:
            raise SolverError("no descent step keeps p_g > 0")
        x, r, norm = trial, r_t, n_t
    if norm > tol:
        raise SolverError(f"Newton did not converge (residual {norm:.3e})")
    return x


def solve_iso_point(
    V: PotentialV,
    seed: GsmpBlockPair | None = None,
    pins: Mapping[str, float] | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
    chart: str = "auto",
    margin: float = 1e-8,
) -> IsoPoint:
    """Newton solve for a surface point with ``g`` coordinates pinned.

    Parameters
    ----------
    seed : GsmpBlockPair, optional
        Starting coordinates; defaults to :func:`explicit_point`.
    pins : mapping, optional
        ``g`` coordinate names (``"p0"``, ``"q1"``, ...) and their values.
        Defaults to pinning ``q0..q_{g-1}`` at the seed values.
    chart : {"auto", "q", "p"}
        ``"auto"`` falls back to pinning ``p0..p_{g-1}`` at the seed values
        when the default q-chart is singular.  Explicit pins never fall back.

    Raises
    ------
    SolverError
        On non-convergence or if the result violates Lambda#-positivity.
    """
    g = V.genus
    names = coordinate_names(g)
    seed = explicit_point(V) if seed is None else seed
    if seed.genus != g:
        raise ValueError("seed genus differs from the potential")
    x0 = _pack(seed)
    attempts = []
    if pins is not None:
        if len(pins) != g:
            raise ValueError(f"need exactly {g} pinned coordinates, got {len(pins)}")
        bad = [n for n in pins if n not in names or n in (f"p{g}", f"q{g}")]
        if bad:
            raise ValueError(f"cannot pin {bad}; choose among p0..p{g - 1}, q0..q{g - 1}")
        attempts.append(dict(pins))
    else:
        if chart in ("auto", "q"):
            attempts.append({f"q{m}": float(seed.q[m]) for m in range(g)})
        if chart in ("auto", "p"):
            attempts.append({f"p{m}": float(seed.p[m]) for m in range(g)})
        if not attempts:
            raise ValueError(f"unknown chart {chart!r}")
    err: Exception | None = None
    for pin in attempts:
        x = x0.copy()
        idx = [names.index(n) for n in pin]
        x[idx] = list(pin.values())
        try:
            x = _newton(x, idx, V, tol, max_iter)
        except (SolverError, np.linalg.LinAlgError) as exc:
            err = exc
            continue
        x = _normalize_signs(x)
        pair = _unpack(x)
        res = float(np.abs(iso_residuals(pair, V)).max())
        lam = lambda_all(pair, V.poles)
        m = float(lam.min()) if g else float("inf")
        if not m > margin:
            raise SolverError(f"solution violates Lambda# positivity (min {m:.3e})")
        return IsoPoint(pair, V, res, m, pin)
    raise SolverError(f"no chart converged: {err}")


def _spread_subset(X: np.ndarray, count: int) -> list[int]:
    """Greedy farthest-point selection starting from row 0."""
    chosen = [0]
    d = np.linalg.norm(X - X[0], axis=1)
    while len(chosen) < min(count, len(X)):
        i = int(np.argmax(d))
        if d[i] == 0:
            break
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(X - X[i], axis=1))
    return chosen


def _directions(g: int) -> list[np.ndarray]:
    if g == 1:
        return [np.array([1.0]), np.array([-1.0])]
    if g == 2:
        ang = np.arange(8) * np.pi / 4
        return [np.array([np.cos(a), np.sin(a)]) for a in ang]
    eye = np.eye(g)
    diag = np.ones(g) / np.sqrt(g)
    return [s * e for e in eye for s in (1.0, -1.0)] + [diag, -diag]


def _run_chain(V: PotentialV, start: IsoPoint, direction: np.ndarray, step: float, max_steps: int, tol: float):
    """Continue along pinned ``q`` values, switching to a ``p`` chart when the q-chart folds."""
    g = V.genus
    pts, fails = [], []
    cur = start
    prev = None
    mode = "q"
    dir_p = None
    for n in range(1, max_steps + 1):
        try:
            if mode == "q":
                target = start.q[:g] + n * step * direction
                pins = {f"q{m}": float(target[m]) for m in range(g)}
            else:
                target = cur.p[:g] + step * dir_p
                if np.any(target <= 0):
                    break
                pins = {f"p{m}": float(target[m]) for m in range(g)}
            nxt = solve_iso_point(V, cur.pair, pins=pins, tol=tol)
        except SolverError as exc:
            if mode == "q" and prev is not None:
                sec = cur.p[:g] - prev.p[:g]
                nrm = np.linalg.norm(sec)
                if nrm > 0:
                    mode, dir_p = "p", sec / nrm
                    continue
            fails.append(f"step {n} ({mode}-chart): {exc}")
            break
        if np.linalg.norm(_pack(nxt.pair) - _pack(cur.pair)) > 10 * step * (1 + np.linalg.norm(_pack(cur.pair))):
            fails.append(f"step {n} ({mode}-chart): jumped branch")
            break
        prev, cur = cur, nxt
        pts.append(nxt)
    return pts, fails


def sample_torus(
    V: PotentialV,
    count: int,
    step: float | None = None,
    max_steps: int = 400,
    tol: float = 1e-12,
    magic_tol: float = 1e-9,
    workers: int = 1,
) -> list[IsoPoint]:
    """Certified, well-spread surface points from continuation chains.

    Chains start at :func:`explicit_point` and sweep pinned ``q`` values in a
    fixed set of directions.  Points failing the fiber magic-formula check are
    dropped; chain failures are logged.
    """
    if count <= 0:
        raise ValueError("sample count must be positive")
    g = V.genus
    base = solve_iso_point(V, tol=tol)
    if g == 0:
        return [base] * count
    if step is None:
        step = 0.05 * float(np.mean(base.p[:g]) + 1.0 / V.lambda0)
    dirs = _directions(g)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda d: _run_chain(V, base, d, step, max_steps, tol), dirs))
    else:
        results = [_run_chain(V, base, d, step, max_steps, tol) for d in dirs]
    pool = [base]
    for d, (pts, fails) in zip(dirs, results):
        pool.extend(pts)
        for msg in fails:
            log.info("torus chain %s stopped: %s", np.round(d, 3).tolist(), msg)
    thetas = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    good = []
    for pt in pool:
        dev = fiber_magic_check(pt.pair, V.poles, V, thetas)
        if dev < magic_tol and pt.residual < max(tol, 1e-10):
            good.append(pt)
        else:
            log.info("dropping uncertified torus point (magic deviation %.3e)", dev)
    X = np.array([_pack(pt.pair) for pt in good])
    return [good[i] for i in _spread_subset(X, count)]


def build_periodic(point: IsoPoint | GsmpBlockPair, half_width: int, poles: Sequence[float] | None = None) -> GsmpWindow:
    """Constant-block window over blocks ``[-half_width, half_width)``."""
    if half_width < 1:
        raise ValueError("half_width must be at least 1")
    if isinstance(point, IsoPoint):
        pair, poles = point.pair, point.V.poles
    else:
        pair = point
        if poles is None:
            raise ValueError("poles are required for a bare pair")
    return GsmpWindow.constant(pair, tuple(poles), -half_width, half_width)
