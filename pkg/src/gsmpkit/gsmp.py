"""GSMP block matrices.

A GSMP matrix with poles ``C = (c_1, ..., c_g)`` is a symmetric block Jacobi
matrix with ``(g+1) x (g+1)`` blocks built from generating vectors
``p_j, q_j`` in ``R^{g+1}``:

* diagonal block ``B(p, q)_{ab} = q_{min(a,b)} p_{max(a,b)} + c_{a+1} [a = b < g]``
* off-diagonal block ``A(p) = e_g p^T`` (only the last row is nonzero),
  placed at row block ``j - 1``, column block ``j`` with ``p = p_j``.

Scalar indices are ``n = (g+1) j + i`` for block ``j`` and offset ``i``.
Blocks are stored in a :class:`GsmpWindow`; matrices are derived views.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .spectral_sets import PotentialV, eval_potential

__all__ = [
    "GsmpBlockPair",
    "GsmpWindow",
    "ScalarMatrix",
    "SparseColumn",
    "ClassReport",
    "VofA",
    "ClassViolation",
    "build_blocks",
    "assemble_window",
    "lambda_sharp",
    "lambda_iso",
    "lambda_all",
    "lambda_sharp_window",
    "check_gsmp_class",
    "bp_factor_finite",
    "bp_factor_infinity",
    "transfer_matrix",
    "trace_is_potential",
    "residue_lambda",
    "numeric_residue",
    "q_g_alternative",
    "resolvent_column_closed_form",
    "resolvent_apply_local",
    "diag_entry_closed_form",
    "principal_V_of_A",
    "block_decompose_V",
    "assemble_V_of_A",
    "magic_residual",
    "floquet_fiber",
    "fiber_magic_check",
    "fiber_band_edges",
]

JMAT = np.array([[0.0, -1.0], [1.0, 0.0]])
DEFAULT_MARGIN = 1e-8


class ClassViolation(RuntimeError):
    """A computation needed Lambda#-positivity that does not hold."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GsmpBlockPair:
    """Generating vectors ``p, q`` of one block, ``p[-1] > 0``."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = _frozen(self.p)
        q = _frozen(self.q)
        if p.ndim != 1 or p.shape != q.shape or p.size == 0:
            raise ValueError("p and q must be vectors of equal length g+1")
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
            raise ValueError("p and q must be finite")
        if not p[-1] > 0:
            raise ValueError(f"normalization p_g > 0 violated (p_g = {p[-1]})")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def genus(self) -> int:
        return self.p.size - 1

    def __eq__(self, other):
        if not isinstance(other, GsmpBlockPair):
            return NotImplemented
        return np.array_equal(self.p, other.p) and np.array_equal(self.q, other.q)

    def __repr__(self):
        return f"GsmpBlockPair(p={self.p.tolist()}, q={self.q.tolist()})"

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GsmpBlockPair":
        return cls(np.asarray(data["p"], float), np.asarray(data["q"], float))


@dataclass(frozen=True, eq=False)
class GsmpWindow:
    """Finite window of generating blocks ``j_min <= j < j_min + nb``.

    Parameters
    ----------
    poles : tuple of float
        Distinct poles ``c_1..c_g``.
    j_min : int
        Index of the first stored block.
    P, Q : ndarray, shape (nb, g+1)
        Row ``r`` holds the generating vectors of block ``j_min + r``.
    trusted : (int, int), optional
        Half-open block range whose entries are exact; blocks outside it are
        stored only to feed neighbours.  Defaults to all stored blocks.
    """

    poles: tuple[float, ...]
    j_min: int
    P: np.ndarray
    Q: np.ndarray
    trusted: tuple[int, int] | None = None

    def __post_init__(self):
        poles = tuple(float(c) for c in self.poles)
        P, Q = _frozen(self.P), _frozen(self.Q)
        if P.ndim != 2 or P.shape != Q.shape or P.shape[1] != len(poles) + 1:
            raise ValueError("P and Q must have shape (blocks, g+1) with g = len(poles)")
        if len(set(poles)) != len(poles):
            raise ValueError("poles must be distinct")
        if P.shape[0] == 0:
            raise ValueError("window needs at least one block")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(Q)):
            raise ValueError("generating coefficients must be finite")
        if np.any(P[:, -1] <= 0):
            bad = int(np.argmin(P[:, -1])) + int(self.j_min)
            raise ValueError(f"normalization p_g > 0 violated at block {bad}")
        lo, hi = int(self.j_min), int(self.j_min) + P.shape[0]
        trusted = (lo, hi) if self.trusted is None else (int(self.trusted[0]), int(self.trusted[1]))
        if not lo <= trusted[0] <= trusted[1] <= hi:
            raise ValueError(f"trusted range {trusted} outside stored blocks [{lo}, {hi})")
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "j_min", lo)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "trusted", trusted)

    @property
    def genus(self) -> int:
        return len(self.poles)

    @property
    def size(self) -> int:
        return self.genus + 1

    @property
    def n_blocks(self) -> int:
        return self.P.shape[0]

    @property
    def j_end(self) -> int:
        """One past the last stored block index."""
        return self.j_min + self.n_blocks

    @property
    def untrusted_margin(self) -> tuple[int, int]:
        """Number of stored but untrusted blocks on the left and on the right."""
        return self.trusted[0] - self.j_min, self.j_end - self.trusted[1]

    def has(self, lo: int, hi: int, trusted: bool = True) -> bool:
        a, b = self.trusted if trusted else (self.j_min, self.j_end)
        return a <= lo and hi <= b

    def require(self, lo: int, hi: int, trusted: bool = True, what: str = "operation"):
        if not self.has(lo, hi, trusted):
            kind = "trusted" if trusted else "stored"
            rng = self.trusted if trusted else (self.j_min, self.j_end)
            raise IndexError(f"{what} needs blocks [{lo}, {hi}) but the {kind} range is [{rng[0]}, {rng[1]})")

    def p(self, j: int) -> np.ndarray:
        self.require(j, j + 1, trusted=False, what="block access")
        return self.P[j - self.j_min]

    def q(self, j: int) -> np.ndarray:
        self.require(j, j + 1, trusted=False, what="block access")
        return self.Q[j - self.j_min]

    def block(self, j: int) -> GsmpBlockPair:
        return GsmpBlockPair(self.p(j), self.q(j))

    def rows(self, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        """Generating arrays for blocks ``lo <= j < hi``."""
        self.require(lo, hi, trusted=False, what="block access")
        return self.P[lo - self.j_min : hi - self.j_min], self.Q[lo - self.j_min : hi - self.j_min]

    def with_trusted(self, lo: int, hi: int) -> "GsmpWindow":
        return GsmpWindow(self.poles, self.j_min, self.P, self.Q, (lo, hi))

    def sub(self, lo: int, hi: int) -> "GsmpWindow":
        """Stored blocks ``[lo, hi)``; trust is intersected with the new range."""
        P, Q = self.rows(lo, hi)
        t0, t1 = max(lo, self.trusted[0]), min(hi, self.trusted[1])
        if t0 > t1:
            t0 = t1 = lo
        return GsmpWindow(self.poles, lo, P, Q, (t0, t1))

    def replace_blocks(self, updates: Mapping[int, GsmpBlockPair]) -> "GsmpWindow":
        P, Q = self.P.copy(), self.Q.copy()
        for j, pair in updates.items():
            self.require(j, j + 1, trusted=False, what="block update")
            P[j - self.j_min], Q[j - self.j_min] = pair.p, pair.q
        return GsmpWindow(self.poles, self.j_min, P, Q, self.trusted)

    @classmethod
    def constant(cls, pair: GsmpBlockPair, poles: Sequence[float], lo: int, hi: int) -> "GsmpWindow":
        if len(poles) != pair.genus:
            raise ValueError("pole count must equal the genus of the pair")
        n = hi - lo
        return cls(tuple(poles), lo, np.tile(pair.p, (n, 1)), np.tile(pair.q, (n, 1)))

    def to_dict(self) -> dict:
        return {
            "poles": list(self.poles),
            "trusted": list(self.trusted),
            "blocks": [
                {"j": self.j_min + r, "p": self.P[r].tolist(), "q": self.Q[r].tolist()}
                for r in range(self.n_blocks)
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GsmpWindow":
        blocks = sorted(data["blocks"], key=lambda b: int(b["j"]))
        js = [int(b["j"]) for b in blocks]
        if js != list(range(js[0], js[0] + len(js))):
            raise ValueError("window blocks must be contiguous")
        P = np.array([b["p"] for b in blocks], float)
        Q = np.array([b["q"] for b in blocks], float)
        trusted = data.get("trusted")
        return cls(tuple(data["poles"]), js[0], P, Q, None if trusted is None else tuple(trusted))


def _b_matrix(p: np.ndarray, q: np.ndarray, poles: Sequence[float]) -> np.ndarray:
    g1 = p.size
    idx = np.arange(g1)
    lo = np.minimum.outer(idx, idx)
    hi = np.maximum.outer(idx, idx)
    B = q[lo] * p[hi]
    B[idx[:-1], idx[:-1]] += np.asarray(poles, float)
    return B


def build_blocks(pair: GsmpBlockPair, poles: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Off-diagonal block ``A(p)`` and diagonal block ``B(p, q)``."""
    if len(poles) != pair.genus:
        raise ValueError(f"expected {pair.genus} poles, got {len(poles)}")
    g1 = pair.p.size
    A = np.zeros((g1, g1))
    A[-1] = pair.p
    return A, _b_matrix(pair.p, pair.q, poles)


@dataclass(frozen=True, eq=False)
class ScalarMatrix:
    """Dense piece of an infinite matrix.

    ``data[r, s]`` is the entry at global scalar indices
    ``(row_start + r, col_start + s)``.
    """

    data: np.ndarray
    row_start: int
    col_start: int

    def entry(self, m: int, n: int) -> float:
        return self.data[m - self.row_start, n - self.col_start]

    def to_coordinate_text(self, fmt: str = ".17g", drop_zeros: bool = True) -> str:
        lines = []
        for r, s in zip(*np.nonzero(self.data) if drop_zeros else np.indices(self.data.shape).reshape(2, -1)):
            lines.append(f"{self.row_start + r} {self.col_start + s} {format(self.data[r, s], fmt)}")
        return "\n".join(lines) + ("\n" if lines else "")


def assemble_window(W: GsmpWindow, block_range: tuple[int, int] | None = None, trusted: bool = False) -> ScalarMatrix:
    """Principal submatrix over blocks ``[lo, hi)`` (default: all stored blocks)."""
    lo, hi = block_range if block_range is not None else (W.j_min, W.j_end)
    W.require(lo, hi, trusted=trusted, what="assembly")
    g1 = W.size
    P, Q = W.rows(lo, hi)
    n = hi - lo
    M = np.zeros((n * g1, n * g1))
    for r in range(n):
        s = slice(r * g1, (r + 1) * g1)
        M[s, s] = _b_matrix(P[r], Q[r], W.poles)
        if r > 0:
            M[r * g1 - 1, s] = P[r]
            M[s, r * g1 - 1] = P[r]
    return ScalarMatrix(M, lo * g1, lo * g1)


# --- Blaschke-Potapov factors -------------------------------------------------

def _afin_batch(z, c, p, q) -> np.ndarray:
    d = c - np.asarray(z)
    p = np.asarray(p)
    q = np.asarray(q)
    shape = np.broadcast(d, p, q).shape
    pq = p * q / d
    out = np.empty(shape + (2, 2), dtype=np.result_type(d, p, q, float))
    out[..., 0, 0] = 1 - pq
    out[..., 0, 1] = p * p / d
    out[..., 1, 0] = -q * q / d
    out[..., 1, 1] = 1 + pq
    return out


def _ainf_batch(z, p, q) -> np.ndarray:
    z = np.asarray(z)
    p = np.asarray(p)
    q = np.asarray(q)
    shape = np.broadcast(z, p, q).shape
    out = np.zeros(shape + (2, 2), dtype=np.result_type(z, p, q, float))
    out[..., 0, 1] = -p
    out[..., 1, 0] = 1 / p
    out[..., 1, 1] = (z - p * q) / p
    return out


def bp_factor_finite(z: complex, c: float, p: float, q: float) -> np.ndarray:
    """Blaschke-Potapov factor ``I - [p; q][p, q] J / (c - z)`` (determinant one)."""
    if z == c:
        raise ZeroDivisionError("factor evaluated at its own pole")
    return _afin_batch(complex(z), float(c), float(p), float(q))


def bp_factor_infinity(z: complex, p: float, q: float) -> np.ndarray:
    """Factor ``[[0, -p], [1/p, (z - p q)/p]]`` carrying the pole at infinity."""
    if p == 0:
        raise ZeroDivisionError("infinity factor needs p != 0")
    return _ainf_batch(complex(z), float(p), float(q))


def transfer_matrix(z: complex, pair: GsmpBlockPair, poles: Sequence[float]) -> np.ndarray:
    """Ordered product of the ``g`` finite factors and the infinity factor."""
    g = pair.genus
    if len(poles) != g:
        raise ValueError("pole count must equal the genus")
    if any(z == c for c in poles):
        raise ZeroDivisionError("transfer matrix evaluated at a pole")
    M = np.eye(2, dtype=complex)
    for m in range(g):
        M = M @ bp_factor_finite(z, poles[m], pair.p[m], pair.q[m])
    return M @ bp_factor_infinity(z, pair.p[g], pair.q[g])


# --- Lambda functionals -------------------------------------------------------

def _lambda_sharp_batch(PL, QL, PR, QR, poles, k: int) -> np.ndarray:
    """Vectorized Lambda#_k for stacks of (left, right) generating vectors."""
    PL, QL, PR, QR = (np.atleast_2d(np.asarray(x, float)) for x in (PL, QL, PR, QR))
    g = PL.shape[1] - 1
    if not 1 <= k <= g:
        raise ValueError(f"k must lie in [1, {g}]")
    ck = poles[k - 1]
    n = PL.shape[0]
    M = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    for m in range(k - 1):
        M = M @ _afin_batch(ck, poles[m], PL[:, m], QL[:, m])
    pl, ql, pr, qr = PL[:, k - 1], QL[:, k - 1], PR[:, k - 1], QR[:, k - 1]
    mid = np.empty((n, 2, 2))
    mid[:, 0, 0] = pl * qr
    mid[:, 0, 1] = -pl * pr
    mid[:, 1, 0] = ql * qr
    mid[:, 1, 1] = -ql * pr
    M = M @ mid
    for m in range(k, g):
        M = M @ _afin_batch(ck, poles[m], PR[:, m], QR[:, m])
    M = M @ _ainf_batch(ck, PR[:, g], QR[:, g])
    return -np.trace(M, axis1=1, axis2=2)


def lambda_sharp(left: GsmpBlockPair, right: GsmpBlockPair, poles: Sequence[float], k: int) -> float:
    """``Lambda#_k`` with ``left`` in the role of block ``j+1`` and ``right`` of block ``j``."""
    if left.genus != right.genus or len(poles) != left.genus:
        raise ValueError("dimension mismatch")
    return float(_lambda_sharp_batch(left.p, left.q, right.p, right.q, poles, k)[0])


def lambda_iso(pair: GsmpBlockPair, poles: Sequence[float], k: int) -> float:
    """``Lambda_k`` of a single pair (both arguments of ``Lambda#`` equal)."""
    return lambda_sharp(pair, pair, poles, k)


def lambda_all(pair: GsmpBlockPair, poles: Sequence[float]) -> np.ndarray:
    return np.array([lambda_iso(pair, poles, k) for k in range(1, pair.genus + 1)])


def lambda_sharp_window(W: GsmpWindow, lo: int | None = None, hi: int | None = None) -> np.ndarray:
    """``Lambda#_{j,k}`` for ``lo <= j < hi - 1``; array of shape (hi - lo - 1, g)."""
    lo = W.trusted[0] if lo is None else lo
    hi = W.trusted[1] if hi is None else hi
    P, Q = W.rows(lo, hi)
    g = W.genus
    out = np.empty((max(hi - lo - 1, 0), g))
    if out.shape[0] == 0:
        return out
    for k in range(1, g + 1):
        out[:, k - 1] = _lambda_sharp_batch(P[1:], Q[1:], P[:-1], Q[:-1], W.poles, k)
    return out


@dataclass(frozen=True)
class ClassReport:
    """Outcome of the Lambda#-positivity test on a window."""

    certified: bool
    min_value: float
    location: tuple[int, int] | None
    margin: float
    block_range: tuple[int, int]


def check_gsmp_class(W: GsmpWindow, margin: float = DEFAULT_MARGIN, block_range: tuple[int, int] | None = None) -> ClassReport:
    """Certify ``Lambda#_{j,k} > margin`` for every adjacent pair in range.

    ``location`` is ``(j, k)`` of the minimum, with ``j`` the right block of
    the pair.  Genus zero is certified vacuously.
    """
    lo, hi = block_range if block_range is not None else W.trusted
    if W.genus == 0 or hi - lo < 2:
        return ClassReport(True, float("inf"), None, margin, (lo, hi))
    vals = lambda_sharp_window(W, lo, hi)
    r, k = np.unravel_index(np.argmin(vals), vals.shape)
    m = float(vals[r, k])
    return ClassReport(bool(m > margin), m, (lo + int(r), int(k) + 1), margin, (lo, hi))


# --- identities of the transfer matrix ----------------------------------------

def trace_is_potential(pair: GsmpBlockPair, poles: Sequence[float], V: PotentialV, sample_z: Iterable[complex]) -> float:
    """Max of ``|tr T(z) - V(z)| / (1 + |V(z)|)`` over the samples."""
    worst = 0.0
    for z in sample_z:
        t = np.trace(transfer_matrix(z, pair, poles))
        v = eval_potential(V, complex(z))[0]
        worst = max(worst, abs(t - v) / (1 + abs(v)))
    return worst


def residue_lambda(pair: GsmpBlockPair, poles: Sequence[float], k: int) -> float:
    """Residue weight at ``c_k`` from the product formula.

    ``[-q, p]_{k-1} * prod_{m>=k} a(c_k, c_{m+1}) * a_inf(c_k) * prod_{m<k-1} a(c_k, c_{m+1}) * [p; q]_{k-1}``
    """
    g = pair.genus
    if not 1 <= k <= g:
        raise ValueError(f"k must lie in [1, {g}]")
    p, q, ck = pair.p, pair.q, poles[k - 1]
    row = np.array([-q[k - 1], p[k - 1]])
    for m in range(k, g):
        row = row @ _afin_batch(ck, poles[m], p[m], q[m])
    row = row @ _ainf_batch(ck, p[g], q[g])
    for m in range(k - 1):
        row = row @ _afin_batch(ck, poles[m], p[m], q[m])
    return float(row @ np.array([p[k - 1], q[k - 1]]))


def numeric_residue(pair: GsmpBlockPair, poles: Sequence[float], k: int, h: float = 1e-6) -> float:
    """Limit probe ``(c_k - z) tr T(z)`` at ``z = c_k + h``."""
    z = poles[k - 1] + h
    return float(((poles[k - 1] - z) * np.trace(transfer_matrix(z, pair, poles))).real)


def q_g_alternative(pair: GsmpBlockPair, poles: Sequence[float], c0: float | None = None) -> float:
    """Residual of the residue-sum representation of ``q_g + c0``.

    ``c0`` defaults to ``-lambda0 <p, q>`` with ``lambda0 = 1/p_g``, the value
    read off the asymptotics of the transfer matrix.
    """
    g = pair.genus
    p, q = pair.p, pair.q
    if c0 is None:
        c0 = -float(p @ q) / p[g]
    corner = np.array([[0.0, 0.0], [0.0, 1.0 / p[g]]])
    rhs = 0.0
    for k in range(1, g + 1):
        ck = poles[k - 1]
        M = np.eye(2)
        for m in range(k - 1):
            M = M @ _afin_batch(ck, poles[m], p[m], q[m])
        M = M @ np.outer([p[k - 1], q[k - 1]], [-q[k - 1], p[k - 1]])
        for m in range(k, g):
            M = M @ _afin_batch(ck, poles[m], p[m], q[m])
        rhs -= np.trace(M @ corner)
    return float(abs(q[g] + c0 - rhs))


# --- resolvents at the poles --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SparseColumn:
    """Column vector supported on scalar indices ``start <= n < start + len(values)``."""

    start: int
    values: np.ndarray
    residual: float = 0.0

    def entry(self, n: int) -> float:
        r = n - self.start
        return float(self.values[r]) if 0 <= r < self.values.size else 0.0

    def block(self, j: int, g1: int) -> np.ndarray:
        return np.array([self.entry(g1 * j + i) for i in range(g1)])


def resolvent_column_closed_form(W: GsmpWindow, k: int, block_j: int, margin: float = DEFAULT_MARGIN) -> SparseColumn:
    """``(c_k - A)^{-1} e_n`` with ``n = (g+1) block_j + k - 1`` from its product formulas.

    The column lives on blocks ``block_j - 1 .. block_j + 1``.  The outer
    blocks come from the closed forms; the middle block is recovered from the
    rows of the defining system that contain it.
    """
    g = W.genus
    g1 = g + 1
    if not 1 <= k <= g:
        raise ValueError(f"k must lie in [1, {g}]")
    W.require(block_j - 1, block_j + 2, what="closed-form resolvent")
    ck = W.poles[k - 1]
    pm, qm = W.p(block_j - 1), W.q(block_j - 1)
    p0, q0 = W.p(block_j), W.q(block_j)
    p1, q1 = W.p(block_j + 1), W.q(block_j + 1)
    lam_m = float(_lambda_sharp_batch(p0, q0, pm, qm, W.poles, k)[0])
    lam_0 = float(_lambda_sharp_batch(p1, q1, p0, q0, W.poles, k)[0])
    if min(lam_m, lam_0) <= margin:
        raise ClassViolation(f"Lambda# below margin near block {block_j} (k={k})")

    f_m = np.zeros(g1)
    f_m[k - 1] = 1.0 / lam_m
    row = np.array([qm[k - 1], -pm[k - 1]])
    for l in range(k, g):
        f_m[l] = -(row @ np.array([pm[l], qm[l]])) / ((W.poles[l] - ck) * lam_m)
        row = row @ _afin_batch(ck, W.poles[l], pm[l], qm[l])
    # the row above block j-1 only sees p_{j-1}: <p_{j-1}, f_{-1}> = 0
    f_m[g] = -(pm[:g] @ f_m[:g]) / pm[g]

    f_p = np.zeros(g1)
    f_p[k - 1] = 1.0 / lam_0
    col = np.array([p1[k - 1], q1[k - 1]])
    for m in range(k - 2, -1, -1):
        f_p[m] = -(np.array([q1[m], -p1[m]]) @ col) / ((W.poles[m] - ck) * lam_0)
        col = _afin_batch(ck, W.poles[m], p1[m], q1[m]) @ col

    # middle block from the equations that contain it
    Bm = _b_matrix(pm, qm, W.poles)
    B0 = _b_matrix(p0, q0, W.poles)
    B1 = _b_matrix(p1, q1, W.poles)
    eye = np.eye(g1)
    rows = [np.zeros((1, g1)), ck * eye - B0, np.zeros((g1, g1))]
    rows[0][0] = p0
    rows[2][:, g] = p1
    rhs0 = ((ck * eye - Bm) @ f_m)[g:]
    unit = np.zeros(g1)
    unit[k - 1] = 1.0
    rhs1 = unit + p0 * f_m[g]
    rhs1[g] += p1 @ f_p
    rhs2 = (ck * eye - B1) @ f_p
    M = np.vstack(rows)
    rhs = np.r_[rhs0, rhs1, rhs2]
    f_0 = np.linalg.lstsq(M, rhs, rcond=None)[0]
    values = np.r_[f_m, f_0, f_p]
    res = _local_residual(W, k, block_j, values, g1 * block_j + k - 1)
    return SparseColumn(g1 * (block_j - 1), values, res)


def _local_system(W: GsmpWindow, b: int) -> np.ndarray:
    """Rows of blocks ``b-2..b+2`` restricted to columns of blocks ``b-1..b+1``."""
    S = assemble_window(W, (b - 2, b + 3)).data
    g1 = W.size
    return S[:, g1 : 4 * g1]


def _local_residual(W: GsmpWindow, k: int, b: int, values: np.ndarray, i: int) -> float:
    g1 = W.size
    if not W.has(b - 2, b + 3, trusted=False):
        return float("nan")
    M = W.poles[k - 1] * np.eye(5 * g1)[:, g1 : 4 * g1] - _local_system(W, b)
    e = np.zeros(5 * g1)
    e[i - g1 * (b - 2)] = 1.0
    return float(np.abs(M @ values - e).max())


def _local_solve(W: GsmpWindow, k: int, b: int, offsets: Sequence[int]):
    g1 = W.size
    M = W.poles[k - 1] * np.eye(5 * g1)[:, g1 : 4 * g1] - _local_system(W, b)
    E = np.zeros((5 * g1, len(offsets)))
    for col, i in enumerate(offsets):
        E[2 * g1 + i, col] = 1.0
    X, _, rank, _ = np.linalg.lstsq(M, E, rcond=None)
    if rank < 3 * g1:
        raise ClassViolation(f"local resolvent system is singular at block {b} (k={k})")
    res = np.abs(M @ X - E).max(axis=0)
    return X, res


def resolvent_apply_local(W: GsmpWindow, k: int, i: int) -> SparseColumn:
    """``(c_k - A)^{-1} e_i`` by a dense solve on the five surrounding blocks.

    Uses that the column is supported on the block of ``i`` and its two
    neighbours; the returned residual measures how well that ansatz holds.
    """
    g = W.genus
    if not 1 <= k <= g:
        raise ValueError(f"k must lie in [1, {g}]")
    g1 = g + 1
    b, off = divmod(i, g1)
    W.require(b - 2, b + 3, what="local resolvent")
    X, res = _local_solve(W, k, b, [off])
    return SparseColumn(g1 * (b - 1), X[:, 0], float(res[0]))


def diag_entry_closed_form(W: GsmpWindow, V: PotentialV, block_j: int) -> float:
    """Diagonal entry of ``V(A)`` at the last index of block ``block_j - 1``."""
    g = W.genus
    W.require(block_j - 1, block_j + 1, what="diagonal entry")
    pm, qm = W.p(block_j - 1), W.q(block_j - 1)
    p0, q0 = W.p(block_j), W.q(block_j)
    total = V.lambda0 * pm[g] * qm[g] + V.c0
    for k in range(1, g + 1):
        ck = W.poles[k - 1]
        col = np.array([p0[k - 1], q0[k - 1]])
        for m in range(k - 2, -1, -1):
            col = _afin_batch(ck, W.poles[m], p0[m], q0[m]) @ col
        row = np.array([qm[k - 1], -pm[k - 1]])
        for m in range(k, g):
            row = row @ _afin_batch(ck, W.poles[m], pm[m], qm[m])
        row = row @ JMAT
        lam = float(_lambda_sharp_batch(p0, q0, pm, qm, W.poles, k)[0])
        total -= V.lambdas[k - 1] * row[0] * col[1] / (pm[g] * lam)
    return float(total)


# --- V(A) ---------------------------------------------------------------------

def _check_poles(W: GsmpWindow, V: PotentialV):
    if len(V.poles) != W.genus or not np.allclose(V.poles, W.poles, rtol=0, atol=1e-14):
        raise ValueError("potential poles must equal the window poles")


def principal_V_of_A(W: GsmpWindow, V: PotentialV, block_range: tuple[int, int]) -> tuple[ScalarMatrix, float]:
    """Principal submatrix of ``V(A)`` over blocks ``[lo, hi)``.

    Column blocks are computed from local resolvent solves, so blocks
    ``[lo - 2, hi + 2)`` must be trusted.  Returns the (unsymmetrized)
    matrix and the worst local solve residual.
    """
    _check_poles(W, V)
    lo, hi = block_range
    W.require(lo - 2, hi + 2, what="V(A) assembly")
    g1 = W.size
    n = (hi - lo) * g1
    A = assemble_window(W, (lo - 1, hi + 1)).data
    out = V.lambda0 * A[g1:-g1, g1:-g1] + V.c0 * np.eye(n)
    worst = 0.0
    for k in range(1, W.genus + 1):
        lam = V.lambdas[k - 1]
        for b in range(lo, hi):
            X, res = _local_solve(W, k, b, range(g1))
            worst = max(worst, float(res.max()))
            # X rows cover blocks b-1..b+1; keep those inside [lo, hi)
            r0 = (b - 1 - lo) * g1
            rows = np.arange(r0, r0 + 3 * g1)
            keep = (rows >= 0) & (rows < n)
            out[rows[keep], (b - lo) * g1 : (b - lo + 1) * g1] += lam * X[keep]
    return ScalarMatrix(out, lo * g1, lo * g1), worst


@dataclass(frozen=True, eq=False)
class VofA:
    """Block decomposition of ``V(A)`` over blocks ``[lo, hi)``.

    ``w[r]`` is the diagonal block ``lo + r``; ``v[r]`` is the block in row
    block ``lo + r - 1`` and column block ``lo + r``.
    """

    lo: int
    hi: int
    w: np.ndarray
    v: np.ndarray
    asymmetry: float
    triangularity_defect: float
    residual: float = 0.0

    def w_block(self, j: int) -> np.ndarray:
        return self.w[j - self.lo]

    def v_block(self, j: int) -> np.ndarray:
        return self.v[j - self.lo]


def block_decompose_V(M: ScalarMatrix, g: int, residual: float = 0.0) -> VofA:
    """Split a principal piece of ``V(A)`` into blocks.

    The input covers blocks ``[lo - 1, hi)``; diagonal blocks are returned for
    ``[lo, hi)`` and off-diagonal blocks ``v_j`` for ``j`` in ``[lo, hi)``.
    Symmetry is enforced by averaging with the transpose; the discarded
    antisymmetric part is reported as ``asymmetry``.
    """
    g1 = g + 1
    if M.row_start != M.col_start or M.row_start % g1 or M.data.shape[0] % g1:
        raise ValueError("matrix must be a principal piece aligned to blocks")
    X = M.data
    asym = float(np.abs(X - X.T).max(initial=0.0))
    X = 0.5 * (X + X.T)
    start = M.row_start // g1 + 1
    nb = X.shape[0] // g1 - 1
    w = np.empty((nb, g1, g1))
    v = np.empty((nb, g1, g1))
    for r in range(nb):
        s = slice((r + 1) * g1, (r + 2) * g1)
        w[r] = X[s, s]
        v[r] = X[r * g1 : (r + 1) * g1, s]
    defect = float(np.abs(np.triu(v, 1)).max(initial=0.0))
    return VofA(start, start + nb, w, v, asym, defect, residual)


def assemble_V_of_A(W: GsmpWindow, V: PotentialV, block_range: tuple[int, int] | None = None, tol: float | None = None) -> VofA:
    """Blocks ``w_j, v_j`` of ``V(A)`` for ``j`` in ``block_range``.

    Needs trusted blocks ``[lo - 3, hi + 2)``; the default range is the
    largest one the trusted window supports.

    Raises
    ------
    ClassViolation
        If ``tol`` is given and the asymmetry exceeds it.
    """
    if block_range is None:
        block_range = (W.trusted[0] + 3, W.trusted[1] - 2)
    lo, hi = block_range
    if hi <= lo:
        raise IndexError("empty block range for V(A)")
    M, res = principal_V_of_A(W, V, (lo - 1, hi))
    out = block_decompose_V(M, W.genus, res)
    if tol is not None and out.asymmetry > tol:
        raise ClassViolation(f"V(A) asymmetry {out.asymmetry:.3e} exceeds {tol:.1e}")
    return out


def magic_residual(W: GsmpWindow, V: PotentialV, block_range: tuple[int, int] | None = None, VA: VofA | None = None) -> float:
    """``sqrt(sum_j |v_j - I|^2 + |w_j|^2)`` over the block range."""
    if VA is None:
        VA = assemble_V_of_A(W, V, block_range)
    eye = np.eye(VA.w.shape[1])
    return float(np.sqrt(np.sum((VA.v - eye) ** 2) + np.sum(VA.w**2)))


# --- Floquet fibers -----------------------------------------------------------

def floquet_fiber(pair: GsmpBlockPair, poles: Sequence[float], theta: float) -> np.ndarray:
    """``B + e^{i theta} A + e^{-i theta} A^*`` for a constant-block matrix."""
    A, B = build_blocks(pair, poles)
    ph = np.exp(1j * theta)
    return B + ph * A + np.conj(ph) * A.T


def _potential_of_matrix(V: PotentialV, M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    eye = np.eye(n)
    out = V.lambda0 * M + V.c0 * eye
    for lam, c in zip(V.lambdas, V.poles):
        S = c * eye - M
        if np.linalg.cond(S) > 1e13:
            raise ZeroDivisionError(f"pole {c} is an eigenvalue of the fiber")
        out = out + lam * np.linalg.inv(S)
    return out


def fiber_magic_check(pair: GsmpBlockPair, poles: Sequence[float], V: PotentialV, theta_grid: Iterable[float]) -> float:
    """Max over the grid of ``|V(M(theta)) - 2 cos(theta) I|`` (spectral norm)."""
    worst = 0.0
    for th in theta_grid:
        M = floquet_fiber(pair, poles, th)
        D = _potential_of_matrix(V, M) - 2 * np.cos(th) * np.eye(M.shape[0])
        worst = max(worst, float(np.linalg.norm(D, 2)))
    return worst


def fiber_band_edges(pair: GsmpBlockPair, poles: Sequence[float]) -> np.ndarray:
    """Sorted eigenvalues of the fibers at ``theta = 0`` and ``theta = pi``."""
    ev = [np.linalg.eigvalsh(floquet_fiber(pair, poles, th)) for th in (0.0, np.pi)]
    return np.sort(np.concatenate(ev))
