"""Jacobi matrices attached to GSMP windows and Killip-Simon diagnostics.

The map from a GSMP matrix to a Jacobi matrix matches the one-sided
resolvent functions; here it is realized by Lanczos tridiagonalization of
the two half-line restrictions.  The coefficient-side functional ``H_+`` is
computed from the block decomposition of ``V(A)``, the spectral-side terms
from eigen-decompositions of truncations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.special import roots_legendre

from .gsmp import (
    GsmpWindow,
    VofA,
    assemble_V_of_A,
    assemble_window,
    block_decompose_V,
    lambda_all,
    resolvent_apply_local,
    _check_poles,
)
from .spectral_sets import IntervalSystem, PotentialV, eval_potential

__all__ = [
    "JacobiWindow",
    "SpectralData",
    "HSeries",
    "SpectralSide",
    "CoefficientDiagnostics",
    "KsReport",
    "LanczosBreakdown",
    "lanczos_F",
    "resolvent_r",
    "dist_eta",
    "dist_to_isospectral",
    "block_decompose_V",
    "ks_functional_H",
    "ks_delta",
    "hs_residual_report",
    "spectral_data",
    "ks_spectral_side",
    "reduced_preimage",
    "cauchy_determinant",
    "matrix_density_check",
    "ks_coefficient_diagnostics",
    "relative_tail_growth",
]


class LanczosBreakdown(RuntimeError):
    """The Krylov sequence terminated before the requested depth."""


@dataclass(frozen=True, eq=False)
class JacobiWindow:
    """Jacobi coefficients ``a(n), b(n)`` for ``start <= n < start + len(a)``.

    Unknown entries are NaN.  The matrix acts as
    ``J e_n = a(n) e_{n-1} + b(n) e_n + a(n+1) e_{n+1}``.
    """

    start: int
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, float)
        b = np.array(self.b, float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be vectors of equal length")
        fin = np.isfinite(a)
        if np.any(a[fin] <= 0):
            raise ValueError("Jacobi coefficients a(n) must be positive")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "start", int(self.start))

    @property
    def end(self) -> int:
        return self.start + self.a.size

    def a_at(self, n) -> np.ndarray:
        return self.a[np.asarray(n) - self.start]

    def b_at(self, n) -> np.ndarray:
        return self.b[np.asarray(n) - self.start]

    @classmethod
    def constant(cls, a: float, b: float, start: int, stop: int) -> "JacobiWindow":
        n = stop - start
        return cls(start, np.full(n, float(a)), np.full(n, float(b)))

    def shifted(self, k: int) -> "JacobiWindow":
        """Coefficients of ``S^{*k} J S^k``: ``a'(n) = a(n + k)``."""
        return JacobiWindow(self.start - k, self.a, self.b)

    def _half(self, side: int, size: int | None):
        if side == 1:
            avail = self.end
            size = avail if size is None else size
            if size > avail or self.start > 0:
                raise IndexError("not enough coefficients for the requested truncation")
            diag = self.b_at(np.arange(0, size))
            off = self.a_at(np.arange(1, size))
        else:
            avail = -self.start
            size = avail if size is None else size
            if size > avail or self.end < 0:
                raise IndexError("not enough coefficients for the requested truncation")
            diag = self.b_at(-1 - np.arange(size))
            off = self.a_at(-1 - np.arange(size - 1))
        if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(off))):
            raise ValueError("truncation contains unknown coefficients")
        return diag, off

    def half_line(self, side: int = 1, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of ``J_+`` (``side=1``) or ``J_-`` (``side=-1``).

        ``J_-`` is ordered ``e_{-1}, e_{-2}, ...`` so that the cyclic vector is first.
        """
        return self._half(side, size)

    def to_csv(self) -> str:
        from .io import fmt

        rows = ["n,a,b"]
        for i in range(self.a.size):
            rows.append(f"{self.start + i},{fmt(self.a[i])},{fmt(self.b[i])}")
        return "\n".join(rows) + "\n"


def _lanczos(matvec, v0: np.ndarray, steps: int):
    """Symmetric Lanczos with full reorthogonalization; returns (alpha, beta)."""
    n = v0.size
    steps = min(steps, n)
    Qm = np.zeros((steps, n))
    alpha = np.zeros(steps)
    beta = np.zeros(max(steps - 1, 0))
    q = v0 / np.linalg.norm(v0)
    for i in range(steps):
        Qm[i] = q
        w = matvec(q)
        alpha[i] = q @ w
        w = w - Qm[: i + 1].T @ (Qm[: i + 1] @ w)
        w = w - Qm[: i + 1].T @ (Qm[: i + 1] @ w)
        if i == steps - 1:
            break
        nb = np.linalg.norm(w)
        if nb < 1e-13:
            raise LanczosBreakdown(f"breakdown after {i + 1} steps")
        beta[i] = nb
        q = w / nb
    return alpha, beta


def lanczos_F(W: GsmpWindow, depth: int) -> JacobiWindow:
    """Jacobi coefficients ``a(n), b(n)`` for ``-depth <= n < depth``.

    The half-line ``n >= 0`` uses the cyclic vector ``p_0 / |p_0|`` in block
    0, the half-line ``n < 0`` the unit vector at scalar index ``-1``, and
    ``a(0) = |p_0|``.  ``a(-depth)`` is left unknown (NaN).  Each Lanczos
    coefficient of order ``n`` needs about ``n + 1`` exact blocks, so
    ``depth`` is limited by the trusted range on either side.
    """
    lo, hi = W.trusted
    if depth < 1 or depth > min(hi, -lo) - 1:
        raise IndexError(f"depth {depth} exceeds what the trusted range [{lo}, {hi}) supports")
    g1 = W.size
    plus = assemble_window(W, (0, hi), trusted=True).data
    minus = assemble_window(W, (lo, 0), trusted=True).data
    v = np.zeros(plus.shape[0])
    p0 = W.p(0)
    v[:g1] = p0
    ap, bp = _lanczos(lambda x: plus @ x, v, depth)
    u = np.zeros(minus.shape[0])
    u[-1] = 1.0
    am, bm = _lanczos(lambda x: minus @ x, u, depth)
    a = np.full(2 * depth, np.nan)
    b = np.full(2 * depth, np.nan)
    # index n sits at position n + depth
    b[depth:] = ap
    a[depth + 1 :] = bp
    a[depth] = np.linalg.norm(p0)
    b[:depth] = am[::-1]
    a[1:depth] = bm[::-1]
    return JacobiWindow(-depth, a, b)


def _truncation(src, side: int, size: int | None):
    """Dense or banded half-line truncation and its cyclic vector."""
    if isinstance(src, JacobiWindow):
        diag, off = src.half_line(side, size)
        return ("tri", diag, off)
    W = src
    lo, hi = W.trusted
    g1 = W.size
    if side == 1:
        M = assemble_window(W, (0, hi), trusted=True).data
        v = np.zeros(M.shape[0])
        v[:g1] = W.p(0) / np.linalg.norm(W.p(0))
    else:
        M = assemble_window(W, (lo, 0), trusted=True).data[::-1, ::-1]
        v = np.zeros(M.shape[0])
        v[0] = 1.0
    if size is not None:
        M, v = M[:size, :size], v[:size]
    return ("dense", M, v)


def _resolvent_entry(kind, X, Y, z: complex, size: int) -> complex:
    if kind == "tri":
        diag, off = X[:size], Y[: size - 1]
        ab = np.zeros((3, size), dtype=complex)
        ab[0, 1:] = off
        ab[1] = diag - z
        ab[2, :-1] = off
        e = np.zeros(size, dtype=complex)
        e[0] = 1.0
        return complex(sla.solve_banded((1, 1), ab, e)[0])
    M, v = X[:size, :size], Y[:size]
    x = np.linalg.solve(M - z * np.eye(size), v.astype(complex))
    return complex(v @ x)


def resolvent_r(src, z: complex, side: int = 1, size: int | None = None, return_error: bool = False):
    """``<(J_+/- - z)^{-1} e, e>`` for the cyclic vector ``e`` of the half-line.

    ``src`` is a :class:`JacobiWindow` or a :class:`GsmpWindow`.  The error
    estimate compares the full truncation with one of half the size.
    """
    kind, X, Y = _truncation(src, side, size)
    n = X.size if kind == "tri" else X.shape[0]
    if np.imag(z) == 0:
        ev = np.linalg.eigvalsh(X) if kind == "dense" else sla.eigvalsh_tridiagonal(X, Y)
        if np.min(np.abs(ev - np.real(z))) < 1e-12:
            raise ZeroDivisionError("z lies in the spectrum of the truncation")
    val = _resolvent_entry(kind, X, Y, z, n)
    if not return_error:
        return val
    half = max(n // 2, 1)
    err = abs(val - _resolvent_entry(kind, X, Y, z, half))
    return val, err


def dist_eta(J1: JacobiWindow, J2: JacobiWindow, eta: float) -> float:
    """Weighted distance ``sqrt(sum_{n>=0} (|da(n)|^2 + |db(n)|^2) eta^{2n})``.

    Indices where either window has no known value are skipped.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    lo = max(0, J1.start, J2.start)
    hi = min(J1.end, J2.end)
    if hi <= lo:
        return 0.0
    n = np.arange(lo, hi)
    w = eta ** (2.0 * n)
    da = J1.a_at(n) - J2.a_at(n)
    db = J1.b_at(n) - J2.b_at(n)
    da = np.where(np.isfinite(da), da, 0.0)
    db = np.where(np.isfinite(db), db, 0.0)
    return float(np.sqrt(np.sum(w * (da**2 + db**2))))


def dist_to_isospectral(J: JacobiWindow, torus_samples, eta: float, depth: int = 40, shifts: int | None = None) -> float:
    """Smallest ``dist_eta`` from ``J`` to the Jacobi matrices of the samples.

    Each sample is turned into a periodic window and mapped by
    :func:`lanczos_F`; the shifts of each resulting sequence (which are again
    members of the isospectral set) are included as candidates.  The result
    is an upper bound for the distance to the whole set.
    """
    from .isospectral import build_periodic

    samples = list(torus_samples)
    if not samples:
        raise ValueError("need at least one torus sample")
    best = np.inf
    for pt in samples:
        g1 = pt.pair.genus + 1
        k = 2 * g1 if shifts is None else shifts
        Jp = lanczos_F(build_periodic(pt, depth + 2), depth)
        for s in range(k):
            best = min(best, dist_eta(J, Jp.shifted(s), eta))
    return float(best)


# --- coefficient-side functional ----------------------------------------------

@dataclass(frozen=True, eq=False)
class HSeries:
    """Per-block summands and running partial sums over ``lo <= j < hi``."""

    lo: int
    hi: int
    summands: np.ndarray

    @property
    def partial(self) -> np.ndarray:
        return np.cumsum(self.summands)

    @property
    def total(self) -> float:
        return float(self.summands.sum())


def _check_diagonals(VA: VofA, js: Iterable[int]):
    for j in js:
        d = np.diag(VA.v_block(j))
        if np.any(d <= 0):
            raise ValueError(f"nonpositive diagonal entry of v_{j}; log term undefined")


def ks_functional_H(VA: VofA, block_range: tuple[int, int] | None = None) -> HSeries:
    """Summands of ``H_+`` for ``j`` in range.

    ``h_j = 1/2 [tr(v_j^T v_j + w_j^2 + v_{j+1} v_{j+1}^T) - 2(g+1)
    - 2 sum_l log v_j[l,l] - 2 sum_l log v_{j+1}[l,l]]``.  The default range
    is every ``j >= 0`` for which ``v_{j+1}`` is available.
    """
    lo, hi = block_range if block_range is not None else (max(VA.lo, 0), VA.hi - 1)
    if lo < VA.lo or hi > VA.hi - 1:
        raise IndexError(f"H summands need blocks [{lo}, {hi + 1}) but V(A) covers [{VA.lo}, {VA.hi})")
    _check_diagonals(VA, range(lo, hi + 1))
    g1 = VA.w.shape[1]
    out = np.empty(hi - lo)
    for r, j in enumerate(range(lo, hi)):
        v0, w0, v1 = VA.v_block(j), VA.w_block(j), VA.v_block(j + 1)
        tr = np.sum(v0 * v0) + np.sum(w0 * w0) + np.sum(v1 * v1)
        logs = np.sum(np.log(np.diag(v0))) + np.sum(np.log(np.diag(v1)))
        out[r] = 0.5 * (tr - 2 * g1 - 2 * logs)
    return HSeries(lo, hi, out)


def _V_column(W: GsmpWindow, V: PotentialV, i: int) -> tuple[int, np.ndarray]:
    """Column ``i`` of ``V(A)`` on the three blocks around ``i``."""
    _check_poles(W, V)
    g1 = W.size
    b = i // g1
    start = g1 * (b - 1)
    col = np.zeros(3 * g1)
    A = assemble_window(W, (b - 1, b + 2)).data
    col += V.lambda0 * A[:, i - start]
    col[i - start] += V.c0
    for k in range(1, W.genus + 1):
        f = resolvent_apply_local(W, k, i)
        col += V.lambdas[k - 1] * f.values
    return start, col


def ks_delta(W: GsmpWindow, V: PotentialV, JW: GsmpWindow | None = None) -> float:
    """One-step decrease of ``H_+`` along the flow.

    ``1/2 |V(JA) e_{-1}|^2 - 1 - log(v_{-1}[g,g] v_0[g,g])`` with ``v`` the
    off-diagonal blocks of ``V(JA)``.  Both diagonal entries are read from
    the column ``V(JA) e_{-1}``.  Pass ``JW`` to reuse an already computed
    flow step.
    """
    from .flow import flow_J

    JW = flow_J(W) if JW is None else JW
    g = W.genus
    start, col = _V_column(JW, V, -1)
    d1 = col[-g - 2 - start]
    d2 = col[g - start]
    if d1 <= 0 or d2 <= 0:
        raise ValueError("nonpositive corner entry of V(JA); log term undefined")
    return float(0.5 * col @ col - 1.0 - np.log(d1 * d2))


def hs_residual_report(W: GsmpWindow, V: PotentialV, block_range: tuple[int, int] | None = None, VA: VofA | None = None) -> HSeries:
    """Per-block ``|w_j|^2 + |v_j - I|^2`` of ``V(A) - S^{g+1} - S^{-(g+1)}``."""
    if VA is None:
        VA = assemble_V_of_A(W, V, block_range)
    lo, hi = block_range if block_range is not None else (VA.lo, VA.hi)
    eye = np.eye(VA.w.shape[1])
    sl = slice(lo - VA.lo, hi - VA.lo)
    vals = np.sum((VA.v[sl] - eye) ** 2, axis=(1, 2)) + np.sum(VA.w[sl] ** 2, axis=(1, 2))
    return HSeries(lo, hi, vals)


# --- spectral side ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenvalues and cyclic-vector weights of an ``N x N`` truncation."""

    eigenvalues: np.ndarray
    weights: np.ndarray
    N: int

    def with_point(self, x: float, weight: float = 0.0) -> "SpectralData":
        """Add one eigenvalue; weights are renormalized to sum to one."""
        ev = np.r_[self.eigenvalues, x]
        w = np.r_[self.weights, weight]
        order = np.argsort(ev, kind="stable")
        return SpectralData(ev[order], w[order] / w.sum(), self.N + 1)

    def density(self, x, eps: float) -> np.ndarray:
        """``(1/pi) Im r(x + i eps)`` for the truncated measure."""
        x = np.asarray(x, float)
        d = self.eigenvalues[None, :] - x[..., None]
        return (self.weights * eps / (d**2 + eps**2)).sum(axis=-1) / np.pi

    def to_csv(self) -> str:
        from .io import fmt

        rows = ["eigenvalue,weight"] + [f"{fmt(e)},{fmt(w)}" for e, w in zip(self.eigenvalues, self.weights)]
        return "\n".join(rows) + "\n"


def spectral_data(src, N: int) -> SpectralData:
    """Spectral measure of the cyclic vector for the ``N x N`` half-line truncation."""
    kind, X, Y = _truncation(src, 1, N)
    if kind == "tri":
        ev, vec = sla.eigh_tridiagonal(X, Y)
        w = vec[0] ** 2
    else:
        ev, vec = np.linalg.eigh(X)
        w = (Y @ vec) ** 2
    return SpectralData(ev, w, N)


@lru_cache(maxsize=8)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return roots_legendre(n)


@dataclass(frozen=True)
class SpectralSide:
    ac_term: float
    ev_term: float
    mass_near_poles: float


def ks_spectral_side(
    data: SpectralData,
    E: IntervalSystem,
    eps: float | None = None,
    edge_delta: float | None = None,
    poles: Sequence[float] = (),
    nodes_per_band: int = 4000,
) -> SpectralSide:
    """Finite-``N`` versions of the two spectral Killip-Simon terms.

    ``ac_term`` integrates ``|log sigma_eps(x)| sqrt(dist(x, R \\ E))`` over
    each band minus ``edge_delta`` at both ends (Gauss-Legendre);
    ``ev_term`` sums ``dist(x_k, E)^{3/2}`` over eigenvalues outside ``E``.
    Weight within ``edge_delta`` of a pole is reported separately.
    """
    eps = 5.0 / data.N if eps is None else eps
    edge_delta = data.N ** -0.5 if edge_delta is None else edge_delta
    if eps <= 0 or edge_delta <= 0:
        raise ValueError("eps and edge_delta must be positive")
    t, wt = _gauss_legendre(nodes_per_band)
    ac = 0.0
    for lo, hi in E.bands:
        a, b = lo + edge_delta, hi - edge_delta
        if b <= a:
            continue
        x = 0.5 * (b - a) * t + 0.5 * (b + a)
        f = np.abs(np.log(data.density(x, eps))) * np.sqrt(E.distance_to_complement(x))
        ac += 0.5 * (b - a) * float(wt @ f)
    d = E.distance(data.eigenvalues)
    ev = float(np.sum(d[d > 0] ** 1.5))
    near = 0.0
    for c in poles:
        near += float(data.weights[np.abs(data.eigenvalues - c) < edge_delta].sum())
    return SpectralSide(ac, ev, near)


# --- matrix density -----------------------------------------------------------

def reduced_preimage(V: PotentialV, y: float) -> np.ndarray:
    """The ``g`` solutions of ``sum_k lambda_k / (c_k - x) = y`` for ``y != 0``."""
    g = V.genus
    if y == 0 or g == 0:
        raise ValueError("the pole part has g preimages only for y != 0")
    P = np.poly1d([y])
    for c in V.poles:
        P = P * np.poly1d([-1.0, c])
    for k, (lam, c) in enumerate(zip(V.lambdas, V.poles)):
        Q = np.poly1d([lam])
        for m, cm in enumerate(V.poles):
            if m != k:
                Q = Q * np.poly1d([-1.0, cm])
        P = P - Q
    roots = np.roots(P.coeffs)
    real = np.sort(roots[np.abs(roots.imag) <= 1e-9 * max(1.0, np.abs(roots).max())].real)
    if real.size != g:
        raise ValueError(f"expected {g} real preimages, found {real.size}")
    lams = np.asarray(V.lambdas)
    cs = np.asarray(V.poles)
    for _ in range(3):
        f = (lams / (cs[None, :] - real[:, None])).sum(axis=1) - y
        df = (lams / (cs[None, :] - real[:, None]) ** 2).sum(axis=1)
        real = real - f / df
    return real


def cauchy_determinant(c: Sequence[float], x: Sequence[float]) -> tuple[float, float]:
    """Direct and product-formula values of ``det[1 / (c_j - x_k)]``.

    ``(-1)^{g(g-1)/2} prod_{i<j} (x_i - x_j)(c_i - c_j) / prod_{j,k} (c_j - x_k)``.
    """
    c = np.asarray(c, float)
    x = np.asarray(x, float)
    g = c.size
    M = 1.0 / (c[:, None] - x[None, :])
    direct = float(np.linalg.det(M))
    iu = np.triu_indices(g, 1)
    num = np.prod((x[:, None] - x[None, :])[iu]) * np.prod((c[:, None] - c[None, :])[iu])
    formula = (-1) ** (g * (g - 1) // 2) * num / np.prod(c[:, None] - x[None, :])
    return direct, float(formula)


def matrix_density_check(V: PotentialV, y: float, sigma_values: Sequence[float]) -> float:
    """Relative residual of ``det S(y) = prod sigma(x_i) / prod lambda_k``.

    ``S(y) = sum_i W(x_i)^T W(x_i) sigma(x_i) / V_r'(x_i)`` over the ``g``
    preimages of ``y`` under the pole part ``V_r`` of ``V``, with
    ``W(x) = [1/(c_1 - x), ..., 1/(c_g - x)]``.
    """
    x = reduced_preimage(V, y)
    s = np.asarray(sigma_values, float)
    if s.shape != x.shape or np.any(s <= 0):
        raise ValueError(f"need {x.size} positive density values")
    cs = np.asarray(V.poles)
    lams = np.asarray(V.lambdas)
    Wm = 1.0 / (cs[None, :] - x[:, None])
    if not np.all(np.isfinite(Wm)):
        raise ZeroDivisionError("preimage at a pole")
    dV = (lams * Wm**2).sum(axis=1)
    S = (Wm.T * (s / dV)) @ Wm
    lhs = np.linalg.det(S)
    rhs = np.prod(s) / np.prod(lams)
    return float(abs(lhs - rhs) / abs(rhs))


# --- flow diagnostics ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoefficientDiagnostics:
    """Sequences along the flow and their running sums of squares.

    ``sequences[name]`` has shape ``(N + 1, m)`` (``m`` sequences per family).
    """

    sequences: dict
    partial_sums: dict
    growth_slopes: dict

    def total_partial(self) -> np.ndarray:
        return sum(self.partial_sums.values())


def _log_slope(S: np.ndarray) -> float:
    n = np.arange(1, S.size + 1)
    half = S.size // 2
    if S.size < 4:
        return 0.0
    X = np.log(n[half:])
    return float(np.polyfit(X, S[half:], 1)[0])


def ks_coefficient_diagnostics(trace, V: PotentialV) -> CoefficientDiagnostics:
    """The five sequence families whose square-summability characterizes the class.

    ``p_j^{(-1)}(n) - p_j^{(0)}(n)`` and the same for ``q`` (``j < g``),
    ``lambda0 p_g^{(0)}(n) - 1``, ``lambda0 <p_0(n), q_0(n)> + c0`` and
    ``Lambda_k(p_0(n), q_0(n)) - lambda_k``.
    """
    g = V.genus
    rows = {"p_diff": [], "q_diff": [], "pg": [], "pq": [], "lambda": []}
    for W in trace.iterates:
        pm, qm, p0, q0 = W.p(-1), W.q(-1), W.p(0), W.q(0)
        rows["p_diff"].append(pm[:g] - p0[:g])
        rows["q_diff"].append(qm[:g] - q0[:g])
        rows["pg"].append([V.lambda0 * p0[g] - 1.0])
        rows["pq"].append([V.lambda0 * float(p0 @ q0) + V.c0])
        from .gsmp import GsmpBlockPair

        rows["lambda"].append(lambda_all(GsmpBlockPair(p0, q0), V.poles) - np.asarray(V.lambdas))
    seqs = {k: np.array(v, float).reshape(len(trace.iterates), -1) for k, v in rows.items()}
    partial = {k: np.cumsum(np.sum(v**2, axis=1)) for k, v in seqs.items()}
    slopes = {k: _log_slope(v) for k, v in partial.items()}
    return CoefficientDiagnostics(seqs, partial, slopes)


def relative_tail_growth(partial: np.ndarray, tail: int = 50, floor: float = 1e-12) -> float:
    """``(S_N - S_{N - tail}) / S_N`` for a running sum ``S``.

    Sums whose magnitude never exceeds ``floor`` are roundoff (a periodic
    input, say) and report zero growth.
    """
    partial = np.asarray(partial, float)
    if partial.size <= tail:
        raise ValueError("series shorter than the tail")
    last = partial[-1]
    if np.max(np.abs(partial)) <= floor:
        return 0.0
    return float((last - partial[-1 - tail]) / last)


@dataclass(eq=False)
class KsReport:
    """Killip-Simon functionals and diagnostics for one run."""

    H_plus: HSeries | None = None
    delta_series: np.ndarray | None = None
    hs: HSeries | None = None
    spectral_side: dict = field(default_factory=dict)
    coeff_diagnostics: CoefficientDiagnostics | None = None
    telescoping: float | None = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.H_plus is not None:
            out["H_plus"] = {
                "range": [self.H_plus.lo, self.H_plus.hi],
                "summands": self.H_plus.summands.tolist(),
                "partial_sums": self.H_plus.partial.tolist(),
            }
        if self.delta_series is not None:
            out["delta_series"] = np.asarray(self.delta_series).tolist()
            out["delta_partial_sums"] = np.cumsum(self.delta_series).tolist()
        if self.hs is not None:
            out["hs_residual"] = {
                "range": [self.hs.lo, self.hs.hi],
                "per_block": self.hs.summands.tolist(),
                "partial_sums": self.hs.partial.tolist(),
                "total": self.hs.total,
            }
        if self.spectral_side:
            out["spectral_side"] = {
                str(n): {"ac_term": s.ac_term, "ev_term": s.ev_term, "mass_near_poles": s.mass_near_poles}
                for n, s in self.spectral_side.items()
            }
        if self.coeff_diagnostics is not None:
            cd = self.coeff_diagnostics
            out["coeff_diagnostics"] = {
                k: {"partial_sums": cd.partial_sums[k].tolist(), "log_slope": cd.growth_slopes[k]}
                for k in cd.partial_sums
            }
        if self.telescoping is not None:
            out["telescoping_residual"] = self.telescoping
        return out
