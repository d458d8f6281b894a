"""Finite systems of intervals and their rational potential.

A spectral set ``E = [b0, a0] minus the open gaps (a_k, b_k)`` determines a
unique rational Herglotz function

    V(z) = lambda0 * z + c0 + sum_k lambda_k / (c_k - z)

with ``E = V^{-1}([-2, 2])``.  The potential is found here from its boundary
values: ``V = -2`` at the left edge and ``V = +2`` at the right edge of every
band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "IntervalSystem",
    "PotentialV",
    "PotentialReport",
    "SolverError",
    "validate_interval_system",
    "solve_potential",
    "eval_potential",
    "potential_preimage",
    "verify_potential",
]


class SolverError(RuntimeError):
    """Raised when an iterative solver fails to converge or leaves its domain."""


@dataclass(frozen=True)
class IntervalSystem:
    """Closed interval ``[b0, a0]`` with ``g`` open gaps removed.

    Parameters
    ----------
    b0, a0 : float
        Outer edges, ``b0 < a0``.
    gaps : tuple of (float, float)
        Sorted, disjoint open gaps ``(a_k, b_k)`` strictly inside ``(b0, a0)``.
    """

    b0: float
    a0: float
    gaps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        vals = [self.b0, self.a0] + [x for gap in self.gaps for x in gap]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("interval data must be finite")
        if not self.b0 < self.a0:
            raise ValueError(f"empty outer interval [{self.b0}, {self.a0}]")
        prev = self.b0
        for k, (a, b) in enumerate(self.gaps, start=1):
            if not a < b:
                raise ValueError(f"gap {k} is empty or reversed: ({a}, {b})")
            if not prev < a:
                raise ValueError(f"gap {k} overlaps the previous band or exceeds the outer interval")
            prev = b
        if self.gaps and not prev < self.a0:
            raise ValueError(f"gap {len(self.gaps)} exceeds the outer interval")

    @property
    def genus(self) -> int:
        return len(self.gaps)

    @property
    def left_edges(self) -> np.ndarray:
        """Left band edges ``b0, b1, ..., bg``."""
        return np.array([self.b0] + [b for _, b in self.gaps], dtype=float)

    @property
    def right_edges(self) -> np.ndarray:
        """Right band edges ``a1, ..., ag, a0``."""
        return np.array([a for a, _ in self.gaps] + [self.a0], dtype=float)

    @property
    def bands(self) -> list[tuple[float, float]]:
        return list(zip(self.left_edges.tolist(), self.right_edges.tolist()))

    @property
    def edges(self) -> np.ndarray:
        """All ``2g + 2`` band edges in increasing order."""
        return np.sort(np.r_[self.left_edges, self.right_edges])

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.bands:
            inside |= (x >= lo) & (x <= hi)
        return inside

    def distance(self, x) -> np.ndarray:
        """Distance from each point of ``x`` to the set."""
        x = np.asarray(x, dtype=float)
        d = np.full(x.shape, np.inf)
        for lo, hi in self.bands:
            d = np.minimum(d, np.maximum(0.0, np.maximum(lo - x, x - hi)))
        return d

    def distance_to_complement(self, x) -> np.ndarray:
        """Distance from each point to ``R minus E`` (zero outside ``E``)."""
        x = np.asarray(x, dtype=float)
        d = np.zeros(x.shape)
        for lo, hi in self.bands:
            mask = (x >= lo) & (x <= hi)
            d = np.where(mask, np.minimum(x - lo, hi - x), d)
        return d

    def translated(self, t: float) -> "IntervalSystem":
        return IntervalSystem(self.b0 + t, self.a0 + t, tuple((a + t, b + t) for a, b in self.gaps))

    def to_dict(self) -> dict:
        return {"outer": [self.b0, self.a0], "gaps": [[a, b] for a, b in self.gaps]}

    @classmethod
    def from_dict(cls, data: dict) -> "IntervalSystem":
        try:
            outer = data["outer"]
            gaps = data.get("gaps", [])
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValueError("interval system needs an 'outer' pair and optional 'gaps'") from exc
        return validate_interval_system([outer, *gaps])


def validate_interval_system(raw: Sequence[Sequence[float]]) -> IntervalSystem:
    """Build an :class:`IntervalSystem` from ``[outer, gap_1, ..., gap_g]``.

    Gaps may be given in any order; they are sorted by left endpoint.

    Raises
    ------
    ValueError
        On empty input, malformed pairs, non-finite numbers, or gaps that
        overlap each other or leave the outer interval.
    """
    if raw is None or len(raw) == 0:
        raise ValueError("interval system needs at least the outer interval")
    pairs = []
    for item in raw:
        if len(item) != 2:
            raise ValueError(f"expected a pair, got {item!r}")
        pairs.append((float(item[0]), float(item[1])))
    outer, gaps = pairs[0], sorted(pairs[1:])
    return IntervalSystem(outer[0], outer[1], tuple(gaps))


@dataclass(frozen=True)
class PotentialV:
    """Rational Herglotz potential ``lambda0 z + c0 + sum lambda_k / (c_k - z)``."""

    lambda0: float
    c0: float
    lambdas: tuple[float, ...] = ()
    poles: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.lambdas) != len(self.poles):
            raise ValueError("need one residue weight per pole")
        if not self.lambda0 > 0 or any(not lam > 0 for lam in self.lambdas):
            raise ValueError("all lambda weights must be positive")
        if len(set(self.poles)) != len(self.poles):
            raise ValueError("poles must be distinct")

    @property
    def genus(self) -> int:
        return len(self.poles)

    def __call__(self, z):
        return eval_potential(self, z)[0]

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "c0": self.c0,
            "poles": [[lam, c] for lam, c in zip(self.lambdas, self.poles)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PotentialV":
        poles = data.get("poles", [])
        return cls(
            float(data["lambda0"]),
            float(data["c0"]),
            tuple(float(lam) for lam, _ in poles),
            tuple(float(c) for _, c in poles),
        )


def eval_potential(V: PotentialV, z):
    """Value and derivative of ``V`` at ``z`` (scalar or array).

    Raises
    ------
    ZeroDivisionError
        If ``z`` coincides with a pole.
    """
    z_arr = np.asarray(z)
    cplx = np.iscomplexobj(z_arr)
    zz = z_arr.astype(complex if cplx else float)
    value = V.lambda0 * zz + V.c0
    deriv = np.full(zz.shape, V.lambda0, dtype=zz.dtype)
    for lam, c in zip(V.lambdas, V.poles):
        d = c - zz
        if np.any(d == 0):
            raise ZeroDivisionError(f"evaluation at the pole {c}")
        value = value + lam / d
        deriv = deriv + lam / d**2
    if np.ndim(z) == 0:
        return value[()], deriv[()]
    return value, deriv


def _initial_guess(E: IntervalSystem) -> np.ndarray:
    lam0 = 4.0 / (E.a0 - E.b0)
    poles = np.array([(a + b) / 2 for a, b in E.gaps])
    lams = np.array([(b - a) ** 2 * lam0 / 4 for a, b in E.gaps])
    c0 = -2.0 - lam0 * E.b0 - np.sum(lams / (poles - E.b0))
    return np.r_[lam0, c0, lams, poles]


def _unpack(x: np.ndarray, g: int):
    return x[0], x[1], x[2 : 2 + g], x[2 + g :]


def _boundary_system(x: np.ndarray, E: IntervalSystem):
    g = E.genus
    lam0, c0, lams, poles = _unpack(x, g)
    pts = np.r_[E.left_edges, E.right_edges]
    target = np.r_[np.full(g + 1, -2.0), np.full(g + 1, 2.0)]
    d = poles[None, :] - pts[:, None]
    res = lam0 * pts + c0 + (lams / d).sum(axis=1) - target
    jac = np.empty((2 * g + 2, 2 * g + 2))
    jac[:, 0] = pts
    jac[:, 1] = 1.0
    jac[:, 2 : 2 + g] = 1.0 / d
    jac[:, 2 + g :] = -lams / d**2
    return res, jac


def _feasible(x: np.ndarray, E: IntervalSystem) -> bool:
    lam0, _, lams, poles = _unpack(x, E.genus)
    if not lam0 > 0 or np.any(lams <= 0):
        return False
    return all(a < c < b for c, (a, b) in zip(poles, E.gaps))


def solve_potential(E: IntervalSystem, tol: float = 1e-12, max_iter: int = 100) -> PotentialV:
    """Solve the ``2g + 2`` boundary conditions for the potential of ``E``.

    Damped Newton: a step is halved until the iterate stays feasible
    (positive weights, each pole inside its gap) and the residual decreases.

    Raises
    ------
    SolverError
        On non-convergence within ``max_iter`` or if no feasible step exists.
    """
    if not 0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")
    g = E.genus
    x = _initial_guess(E)
    res, jac = _boundary_system(x, E)
    norm = np.abs(res).max()
    for _ in range(max_iter):
        if norm <= tol:
            break
        step = np.linalg.solve(jac, -res)
        t = 1.0
        while t > 1e-12:
            trial = x + t * step
            if _feasible(trial, E):
                r_trial, j_trial = _boundary_system(trial, E)
                n_trial = np.abs(r_trial).max()
                if n_trial < norm or n_trial <= tol:
                    break
            t *= 0.5
        else:
            raise SolverError("damped Newton found no feasible descent step")
        x, res, jac, norm = trial, r_trial, j_trial, n_trial
    if norm > tol:
        raise SolverError(f"no convergence after {max_iter} iterations (residual {norm:.3e})")
    lam0, c0, lams, poles = _unpack(x, g)
    return PotentialV(float(lam0), float(c0), tuple(map(float, lams)), tuple(map(float, poles)))


def _preimage_polynomial(V: PotentialV, y: float) -> np.ndarray:
    """Coefficients of ``(V(x) - y) * prod (c_m - x)``, highest degree first."""
    P = np.poly1d([1.0])
    for c in V.poles:
        P = P * np.poly1d([-1.0, c])
    out = np.poly1d([V.lambda0, V.c0 - y]) * P
    for k, (lam, c) in enumerate(zip(V.lambdas, V.poles)):
        Q = np.poly1d([lam])
        for m, cm in enumerate(V.poles):
            if m != k:
                Q = Q * np.poly1d([-1.0, cm])
        out = out + Q
    return out.coeffs


def _refine_root(V: PotentialV, y: float, x: float, lo: float, hi: float) -> float:
    """Safeguarded Newton on an interval where ``V`` increases from below ``y`` to above."""
    for _ in range(100):
        val, der = eval_potential(V, x)
        f = val - y
        if f == 0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        nxt = x - f / der
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            return nxt
        x = nxt
    return x


def potential_preimage(V: PotentialV, y: float) -> list[float]:
    """The ``g + 1`` real solutions of ``V(x) = y``, sorted ascending.

    Raises
    ------
    ValueError
        If ``y`` is outside ``[-2, 2]`` or the cleared polynomial does not
        have ``g + 1`` real roots.
    """
    if not -2.0 <= y <= 2.0:
        raise ValueError("y must lie in [-2, 2]")
    coeffs = _preimage_polynomial(V, y)
    roots = np.roots(coeffs)
    scale = max(1.0, np.abs(roots).max(initial=0.0))
    real = np.sort(roots[np.abs(roots.imag) <= 1e-7 * scale].real)
    if real.size != V.genus + 1:
        raise ValueError(f"expected {V.genus + 1} real preimages, found {real.size}")
    # each root sits between consecutive poles, where V runs from -inf to +inf
    walls = np.r_[-np.inf, np.sort(V.poles), np.inf]
    out = []
    for x, lo, hi in zip(real, walls[:-1], walls[1:]):
        lo_b = lo if np.isfinite(lo) else x - 1.0 - abs(x)
        hi_b = hi if np.isfinite(hi) else x + 1.0 + abs(x)
        out.append(float(_refine_root(V, y, float(np.clip(x, lo_b, hi_b)), lo_b, hi_b)))
    return out


@dataclass(frozen=True)
class PotentialReport:
    """Sampled check of ``E = V^{-1}([-2, 2])``."""

    max_violation: float
    band_violation: float
    gap_violation: float
    worst_point: float
    samples: int
    tol: float = field(default=1e-9)

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol


def verify_potential(V: PotentialV, E: IntervalSystem, samples: int = 200, tol: float = 1e-9) -> PotentialReport:
    """Sample bands, gaps and the exterior and report the worst violation.

    On bands the violation is ``max(|V| - 2, 0)``; in the open gaps and
    outside ``[b0, a0]`` it is ``max(2 - |V|, 0)``.
    """
    n = max(int(samples), 3)
    width = E.a0 - E.b0
    on, off = [], []
    for lo, hi in E.bands:
        on.append(np.linspace(lo, hi, n))
    interior = np.linspace(0.0, 1.0, n + 2)[1:-1]
    for a, b in E.gaps:
        pts = a + (b - a) * interior
        pts = pts[~np.isin(pts, V.poles)]
        off.append(pts)
    off.append(E.b0 - width * interior)
    off.append(E.a0 + width * interior)
    on_x, off_x = np.concatenate(on), np.concatenate(off)
    on_v = np.maximum(np.abs(eval_potential(V, on_x)[0]) - 2.0, 0.0)
    off_v = np.maximum(2.0 - np.abs(eval_potential(V, off_x)[0]), 0.0)
    band = float(on_v.max(initial=0.0))
    gap = float(off_v.max(initial=0.0))
    xs = np.r_[on_x, off_x]
    vs = np.r_[on_v, off_v]
    return PotentialReport(max(band, gap), band, gap, float(xs[np.argmax(vs)]), xs.size, tol)
