"""The Jacobi flow on GSMP windows.

``flow_O`` rotates every block in its last two coordinates and shifts by one
scalar index; the poles rotate to ``(c_g, c_1, ..., c_{g-1})``.  ``flow_J``
is ``g`` such rotations followed by a block shift, which returns to the
original pole order.  It has closed-form block updates (fast path) and can
be cross-checked against the composed rotations (reference path) or a direct
orthogonal conjugation of the assembled matrix.

Block ``j`` of ``flow_O(W)`` depends on old blocks ``j - 1`` and ``j``;
block ``j`` of ``flow_J(W)`` on old blocks ``j`` and ``j + 1``.  Trusted
ranges shrink accordingly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .gsmp import (
    ClassViolation,
    GsmpWindow,
    _b_matrix,
    assemble_window,
    check_gsmp_class,
    DEFAULT_MARGIN,
)

__all__ = [
    "RotationPlan",
    "FlowDiscrepancy",
    "FlowTrace",
    "rotation_U",
    "rotation_plan",
    "flow_O",
    "flow_O_conjugation",
    "compatibility_residual",
    "flow_J",
    "flow_J_conjugation",
    "path_discrepancy",
    "flow_run",
    "extract_jacobi",
    "extract_window",
    "max_flow_steps",
]


class FlowDiscrepancy(RuntimeError):
    """Two computation paths of the flow disagree."""


@dataclass(frozen=True, eq=False)
class RotationPlan:
    """Per-block ``(sin, cos)`` of the rotation in coordinates ``(g-1, g)``."""

    j_min: int
    sin: np.ndarray
    cos: np.ndarray
    radius: np.ndarray


def rotation_plan(W: GsmpWindow, margin: float = 1e-12) -> RotationPlan:
    """Angles ``(sin, cos) = (p_{g-1}, p_g) / hypot(p_{g-1}, p_g)`` for every stored block."""
    g = W.genus
    if g == 0:
        raise ValueError("the single rotation needs genus >= 1")
    r = np.hypot(W.P[:, g - 1], W.P[:, g])
    if np.any(r <= margin):
        bad = W.j_min + int(np.argmin(r))
        raise ClassViolation(f"rotation radius below margin at block {bad}")
    return RotationPlan(W.j_min, W.P[:, g - 1] / r, W.P[:, g] / r, r)


def _givens(g1: int, pos: int, s: float, c: float) -> np.ndarray:
    G = np.eye(g1)
    G[pos, pos], G[pos, pos + 1] = s, c
    G[pos + 1, pos], G[pos + 1, pos + 1] = c, -s
    return G


def rotation_U(p: Sequence[float]) -> np.ndarray:
    """Orthogonal ``U`` with ``p^T U = |p| e_0^T``, a cascade of ``g`` reflections.

    The factor acting on coordinates ``(m-1, m)`` uses
    ``sin = p_{m-1} / |p_{m-1:}|`` and ``cos = |p_{m:}| / |p_{m-1:}|``.
    """
    p = np.asarray(p, float)
    g1 = p.size
    if not np.any(p):
        raise ValueError("rotation_U needs a nonzero vector")
    tails = np.sqrt(np.cumsum(p[::-1] ** 2)[::-1])
    U = np.eye(g1)
    for m in range(g1 - 2, -1, -1):
        U = U @ _givens(g1, m, p[m] / tails[m], tails[m + 1] / tails[m])
    return U


def _rotated_poles(poles: tuple[float, ...]) -> tuple[float, ...]:
    return (poles[-1],) + poles[:-1]


def _corner(P, Q, poles):
    """The lower-right 2x2 corner of ``B(p, q)`` for every row of ``P, Q``."""
    g = P.shape[1] - 1
    M = np.empty((P.shape[0], 2, 2))
    M[:, 0, 0] = poles[g - 1] + Q[:, g - 1] * P[:, g - 1]
    M[:, 0, 1] = M[:, 1, 0] = Q[:, g - 1] * P[:, g]
    M[:, 1, 1] = Q[:, g] * P[:, g]
    return M


def _reflect(s, c, M):
    R = np.empty_like(M)
    R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1] = s, c, c, -s
    return R @ M @ R


def _flow_O_arrays(W: GsmpWindow, margin: float):
    g = W.genus
    plan = rotation_plan(W, margin)
    s, c, r = plan.sin, plan.cos, plan.radius
    RMR = _reflect(s, c, _corner(W.P, W.Q, W.poles))
    prev, cur = slice(0, -1), slice(1, None)
    n = W.n_blocks - 1
    P = np.empty((n, g + 1))
    Q = np.empty((n, g + 1))
    cp = c[prev]
    P[:, 0] = RMR[prev, 0, 1]
    P[:, 1:g] = W.P[cur, : g - 1] * cp[:, None]
    P[:, g] = r[cur] * cp
    Q[:, 0] = -s[prev] / cp
    Q[:, 1:g] = W.Q[cur, : g - 1] / cp[:, None]
    Q[:, g] = RMR[cur, 0, 0] / P[:, g]
    return P, Q, RMR, s, c


def flow_O(W: GsmpWindow, margin: float = 1e-12) -> GsmpWindow:
    """One rotation step by the explicit block updates.

    New block ``j`` is computed for ``j_min + 1 <= j < j_end``; the left
    trust bound moves right by one.
    """
    P, Q, _, _, _ = _flow_O_arrays(W, margin)
    lo, hi = W.trusted
    t0 = min(max(lo + 1, W.j_min + 1), hi)
    return GsmpWindow(_rotated_poles(W.poles), W.j_min + 1, P, Q, (t0, max(hi, t0)))


def compatibility_residual(W: GsmpWindow, margin: float = 1e-12) -> np.ndarray:
    """Per-block determinant of the two expressions for ``q_0`` of the rotated matrix.

    The first column takes ``p_0`` and ``q_0 p_0`` from the rotated corner of
    the left neighbour, the second ``p_g`` and ``q_0 p_g`` from the angles.
    """
    g = W.genus
    P, _, RMR, s, c = _flow_O_arrays(W, margin)
    first_top = P[:, 0]
    first_bot = RMR[:-1, 1, 1] - W.poles[g - 1]
    second_top = P[:, g]
    second_bot = -s[:-1] * P[:, g] / c[:-1]
    return first_top * second_bot - second_top * first_bot


def _extract(X: np.ndarray, g1: int, nb: int, first: int) -> tuple[np.ndarray, np.ndarray]:
    """Generating vectors of blocks ``first .. first + nb - 1`` of a block-aligned matrix starting at block 0."""
    P = np.empty((nb, g1))
    Q = np.empty((nb, g1))
    for r in range(nb):
        b = first + r
        P[r] = X[g1 * b - 1, g1 * b : g1 * (b + 1)]
        Q[r] = X[g1 * b : g1 * (b + 1), g1 * b + g1 - 1] / P[r, -1]
    return P, Q


@dataclass(frozen=True, eq=False)
class ConjugationResult:
    window: GsmpWindow
    structure_defect: float


def flow_O_conjugation(W: GsmpWindow, margin: float = 1e-12) -> ConjugationResult:
    """Reference rotation step by conjugating the assembled window.

    Computes ``S O^T A O S^{-1}`` with ``(S X S^{-1})_{mn} = X_{m-1, n-1}`` and
    reads the generating vectors back.  ``structure_defect`` is the largest
    deviation of the conjugated matrix from the GSMP pattern rebuilt out of
    those vectors with rotated poles.
    """
    g = W.genus
    g1 = g + 1
    plan = rotation_plan(W, margin)
    A = assemble_window(W).data
    nb = W.n_blocks
    O = np.zeros_like(A)
    for r in range(nb):
        O[r * g1 : (r + 1) * g1, r * g1 : (r + 1) * g1] = _givens(g1, g - 1, plan.sin[r], plan.cos[r])
    X = O.T @ A @ O
    Y = np.zeros_like(X)
    Y[1:, 1:] = X[:-1, :-1]
    P, Q = _extract(Y, g1, nb - 1, 1)
    poles = _rotated_poles(W.poles)
    out = GsmpWindow(poles, W.j_min + 1, P, Q, None)
    rebuilt = assemble_window(out).data
    defect = float(np.abs(rebuilt[:-1, :-1] - Y[g1:-1, g1:-1]).max(initial=0.0))
    lo, hi = W.trusted
    t0 = min(max(lo + 1, W.j_min + 1), hi)
    return ConjugationResult(out.with_trusted(t0, max(hi, t0)), defect)


def _flow_J_fast_arrays(W: GsmpWindow) -> tuple[np.ndarray, np.ndarray]:
    g = W.genus
    g1 = g + 1
    n = W.n_blocks - 1
    P0, Q0 = W.P[:-1], W.Q[:-1]
    P1, Q1 = W.P[1:], W.Q[1:]
    nrm0 = np.linalg.norm(P0, axis=1)
    nrm1 = np.linalg.norm(P1, axis=1)
    tails = np.sqrt(np.cumsum(P0[:, ::-1] ** 2, axis=1)[:, ::-1])
    P = np.empty((n, g1))
    Q = np.empty((n, g1))
    Q[:, :g] = -nrm0[:, None] * P0[:, :g] / (tails[:, :g] * tails[:, 1:])
    for r in range(n):
        B1 = _b_matrix(P1[r], Q1[r], W.poles)
        Q[r, g] = (P1[r] @ B1 @ P1[r]) * nrm0[r] / (P0[r, g] * nrm1[r] ** 3)
        if g:
            U = rotation_U(P0[r])
            B0 = _b_matrix(P0[r], Q0[r], W.poles)
            P[r, :g] = (U.T @ B0 @ U[:, 0])[1:]
    P[:, g] = nrm1 * P0[:, g] / nrm0
    return P, Q


def _flow_J_reference(W: GsmpWindow, margin: float) -> GsmpWindow:
    g = W.genus
    cur = W
    for _ in range(g):
        cur = flow_O(cur, margin)
    # block shift back: new block j is block j + 1 of the rotated window
    lo, hi = cur.trusted
    return GsmpWindow(cur.poles, cur.j_min - 1, cur.P[:], cur.Q[:], (lo - 1, hi - 1))


def flow_J_conjugation(W: GsmpWindow) -> GsmpWindow:
    """``S^{-1} U^T A U S`` on the assembled window, ``(S^{-1} X S)_{mn} = X_{m+1, n+1}``."""
    g1 = W.size
    A = assemble_window(W).data
    nb = W.n_blocks
    U = np.zeros_like(A)
    for r in range(nb):
        U[r * g1 : (r + 1) * g1, r * g1 : (r + 1) * g1] = rotation_U(W.P[r])
    X = U.T @ A @ U
    Y = np.zeros_like(X)
    Y[:-1, :-1] = X[1:, 1:]
    # block 0 of Y has no row above it; skip it and the incomplete last block
    P, Q = _extract(Y, g1, nb - 2, 1)
    lo, hi = W.trusted
    j0 = W.j_min + 1
    t0, t1 = max(lo, j0), min(hi - 1, W.j_end - 1)
    return GsmpWindow(W.poles, j0, P, Q, (t0, max(t0, t1)))


def path_discrepancy(fast: GsmpWindow, ref: GsmpWindow) -> tuple[float, int | None]:
    """Scale-relative max difference of two windows on their common trusted range, and the worst block."""
    a, b = max(fast.trusted[0], ref.trusted[0]), min(fast.trusted[1], ref.trusted[1])
    if b <= a:
        return 0.0, None
    Pf, Qf = fast.rows(a, b)
    Pr, Qr = ref.rows(a, b)
    scale = max(1.0, float(np.abs(Pf).max()), float(np.abs(Qf).max()))
    per_block = np.maximum(np.abs(Pf - Pr).max(axis=1), np.abs(Qf - Qr).max(axis=1)) / scale
    r = int(np.argmax(per_block))
    return float(per_block[r]), a + r


def flow_J(
    W: GsmpWindow,
    path: str = "fast",
    tol: float = 1e-11,
    margin: float = DEFAULT_MARGIN,
    certify: bool = False,
    log: list | None = None,
) -> GsmpWindow:
    """One step of the Jacobi flow.

    Parameters
    ----------
    path : {"fast", "reference", "both"}
        ``"fast"`` uses the closed-form block updates, ``"reference"`` the
        ``g``-fold rotation followed by the block shift.  ``"both"`` runs the
        two and raises :class:`FlowDiscrepancy` if they differ by more than
        ``tol`` (relative to the entry scale) on their common trusted range.
    certify : bool
        Check Lambda#-positivity of the output on its trusted range.
    log : list, optional
        With ``path="both"``, the measured discrepancy is appended here.
    """
    if path not in ("fast", "reference", "both"):
        raise ValueError(f"unknown path {path!r}")
    if W.n_blocks < 2:
        raise IndexError("flow step needs at least two stored blocks")
    lo, hi = W.trusted
    if path in ("fast", "both"):
        P, Q = _flow_J_fast_arrays(W)
        t1 = min(hi - 1, W.j_end - 1)
        t0 = min(lo, t1)
        out = GsmpWindow(W.poles, W.j_min, P, Q, (t0, t1))
    if path in ("reference", "both"):
        ref = _flow_J_reference(W, margin=1e-12) if W.genus else None
        if path == "reference":
            out = ref if ref is not None else flow_J(W, "fast")
    if path == "both":
        diff, bad = path_discrepancy(out, ref) if ref is not None else (0.0, None)
        if log is not None:
            log.append(diff)
        if diff > tol:
            raise FlowDiscrepancy(f"fast and reference flow differ by {diff:.3e} (worst block {bad})")
    if certify:
        rep = check_gsmp_class(out, margin)
        if not rep.certified:
            raise ClassViolation(f"flow output fails Lambda# positivity: min {rep.min_value:.3e} at {rep.location}")
    return out


def max_flow_steps(W: GsmpWindow) -> int:
    """Number of fast flow steps after which blocks ``-1`` and ``0`` are still trusted."""
    lo, hi = W.trusted
    if lo > -1 or hi < 1:
        return -1
    return hi - 1


@dataclass(eq=False)
class FlowTrace:
    """Iterates ``A(n) = J^n A`` with their trusted block ranges."""

    iterates: list[GsmpWindow]
    stopped: str | None = None
    discrepancies: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.iterates) - 1

    @property
    def trust(self) -> list[tuple[int, int]]:
        return [W.trusted for W in self.iterates]

    @property
    def extracted(self):
        return extract_jacobi(self)

    def to_jsonl(self) -> str:
        from .io import dumps

        lines = []
        for n, W in enumerate(self.iterates):
            rec = {"n": n, **W.to_dict()}
            lines.append(dumps(rec))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "FlowTrace":
        its = [GsmpWindow.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(its)


def _compact(W: GsmpWindow) -> GsmpWindow:
    """Drop stored blocks that can no longer become trusted inputs."""
    lo, hi = W.trusted
    a, b = max(W.j_min, lo - 1), min(W.j_end, hi + 1)
    return W.sub(a, b).with_trusted(lo, hi)


def flow_run(
    W: GsmpWindow,
    steps: int,
    path: str = "fast",
    margin: float = DEFAULT_MARGIN,
    tol: float = 1e-11,
    certify: bool = True,
) -> FlowTrace:
    """Iterate the flow, certifying each iterate; stop early with a reason.

    Stops before step ``n`` if blocks ``-1`` and ``0`` would leave the
    trusted range (see :func:`max_flow_steps`), if an iterate fails
    Lambda#-positivity, or if the dual-path check fails.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    rep = check_gsmp_class(W, margin)
    trace = FlowTrace([W])
    if certify and not rep.certified:
        trace.stopped = f"step 0: input fails Lambda# positivity (min {rep.min_value:.3e} at {rep.location})"
        return trace
    cur = W
    for n in range(1, steps + 1):
        if max_flow_steps(cur) < 1:
            trace.stopped = f"step {n}: trusted window exhausted"
            break
        try:
            nxt = flow_J(cur, path=path, tol=tol, margin=margin, certify=certify, log=trace.discrepancies)
        except (FlowDiscrepancy, ClassViolation) as exc:
            trace.stopped = f"step {n}: {exc}"
            break
        cur = _compact(nxt)
        trace.iterates.append(cur)
    return trace


def extract_jacobi(trace: FlowTrace):
    """Jacobi coefficients along the flow: ``a(n) = |p_0(n)|``, ``b(n-1) = q_g^{(-1)}(n) p_g^{(-1)}(n)``.

    Returns a :class:`~gsmpkit.analysis.JacobiWindow` on indices
    ``-1 .. N``; entries the trace does not determine are NaN.
    """
    from .analysis import JacobiWindow

    N = trace.steps
    if N < 0:
        raise ValueError("empty trace")
    a = np.full(N + 2, np.nan)
    b = np.full(N + 2, np.nan)
    for n, W in enumerate(trace.iterates):
        W.require(-1, 1, what="coefficient extraction")
        a[n + 1] = np.linalg.norm(W.p(0))
        g = W.genus
        b[n] = W.q(-1)[g] * W.p(-1)[g]
    if np.any(a[1:] <= 0):
        raise ValueError("extracted a(n) must be positive")
    return JacobiWindow(-1, a, b)


def extract_window(trace: FlowTrace, n: int) -> GsmpWindow:
    return trace.iterates[n]
