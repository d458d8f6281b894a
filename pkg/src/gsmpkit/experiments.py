"""Perturbation families and the l^2 dichotomy experiment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .analysis import (
    CoefficientDiagnostics,
    HSeries,
    KsReport,
    hs_residual_report,
    ks_coefficient_diagnostics,
    ks_delta,
    ks_functional_H,
    relative_tail_growth,
)
from .flow import FlowTrace, flow_run
from .gsmp import GsmpWindow, assemble_V_of_A, check_gsmp_class, ClassViolation
from .isospectral import IsoPoint, build_periodic
from .spectral_sets import PotentialV

__all__ = ["PerturbationSpec", "perturb_window", "DichotomyRun", "dichotomy_run", "ks_report_from_trace"]


@dataclass(frozen=True)
class PerturbationSpec:
    """How to perturb the generating vectors of blocks ``j >= start``.

    ``family="power-decay"`` adds ``amplitude * (j - start + 1)^(-exponent)``
    times a seeded random sign to every entry of ``p_j`` and ``q_j``.
    ``family="custom"`` adds the explicit ``{"j": .., "dp": [..], "dq": [..]}``
    entries listed under ``values``.
    """

    family: str = "none"
    exponent: float = 1.0
    amplitude: float = 0.05
    seed: int = 0
    start: int = 0
    custom: tuple = ()

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "PerturbationSpec":
        if not data:
            return cls()
        unknown = sorted(set(data) - {"family", "exponent", "amplitude", "seed", "start", "values"})
        if unknown:
            raise ValueError(f"unknown perturbation fields: {', '.join(unknown)}")
        fam = data.get("family", "none")
        if fam not in ("none", "power-decay", "custom"):
            raise ValueError(f"unknown perturbation family {fam!r}")
        return cls(
            fam,
            float(data.get("exponent", 1.0)),
            float(data.get("amplitude", 0.05)),
            int(data.get("seed", 0)),
            int(data.get("start", 0)),
            tuple(data.get("values", ())),
        )

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.family == "power-decay":
            out.update(exponent=self.exponent, amplitude=self.amplitude, seed=self.seed, start=self.start)
        elif self.family == "custom":
            out["values"] = list(self.custom)
        return out


def perturb_window(W: GsmpWindow, spec: PerturbationSpec) -> GsmpWindow:
    """Apply a perturbation to the generating vectors; Lambda# is not re-checked here."""
    P, Q = W.P.copy(), W.Q.copy()
    if spec.family == "none":
        return W
    if spec.family == "power-decay":
        rng = np.random.default_rng(spec.seed)
        g1 = W.size
        signs = rng.choice([-1.0, 1.0], size=(W.n_blocks, 2, g1))
        for r in range(W.n_blocks):
            j = W.j_min + r
            if j < spec.start:
                continue
            s = spec.amplitude * (j - spec.start + 1) ** (-spec.exponent)
            P[r] += s * signs[r, 0]
            Q[r] += s * signs[r, 1]
    elif spec.family == "custom":
        for item in spec.custom:
            r = int(item["j"]) - W.j_min
            if not 0 <= r < W.n_blocks:
                raise IndexError(f"custom perturbation at block {item['j']} outside the window")
            P[r] += np.asarray(item.get("dp", 0.0), float)
            Q[r] += np.asarray(item.get("dq", 0.0), float)
    else:
        raise ValueError(f"unknown perturbation family {spec.family!r}")
    return GsmpWindow(W.poles, W.j_min, P, Q, W.trusted)


@dataclass(eq=False)
class DichotomyRun:
    """Partial sums of all l^2 quantities for one perturbed window."""

    report: KsReport
    trace: FlowTrace

    def series(self) -> dict[str, np.ndarray]:
        """Every running sum, keyed by name."""
        out = {
            "H_plus": self.report.H_plus.partial,
            "hs_residual": self.report.hs.partial,
            "delta": np.cumsum(self.report.delta_series),
        }
        for k, v in self.report.coeff_diagnostics.partial_sums.items():
            out[f"diag_{k}"] = v
        return out

    def tail_growth(self, tail: int = 50) -> dict[str, float]:
        return {k: relative_tail_growth(v, tail) for k, v in self.series().items()}


def dichotomy_run(
    point: IsoPoint,
    spec: PerturbationSpec,
    steps: int = 200,
    left: int = 8,
    pad: int = 10,
) -> DichotomyRun:
    """Perturb a periodic point on ``j >= 0``, flow ``steps`` times and collect partial sums.

    ``H_+`` and the Hilbert-Schmidt residual are summed over blocks
    ``0 <= j < steps``; the one-step decreases ``delta`` and the flow
    diagnostics over ``0 <= n < steps``.
    """
    V = point.V
    base = GsmpWindow.constant(point.pair, V.poles, -left, steps + pad)
    W = perturb_window(base, spec)
    rep = check_gsmp_class(W)
    if not rep.certified:
        raise ClassViolation(f"perturbed window fails Lambda# positivity at {rep.location}")
    VA = assemble_V_of_A(W, V, (0, steps + 1))
    H = ks_functional_H(VA, (0, steps))
    hs = hs_residual_report(W, V, (0, steps), VA=VA)
    trace = flow_run(W, steps)
    if trace.stopped:
        raise ClassViolation(f"flow stopped early: {trace.stopped}")
    its = trace.iterates
    delta = np.array([ks_delta(its[n], V, its[n + 1]) for n in range(steps)])
    diag = ks_coefficient_diagnostics(FlowTrace(its[:steps]), V)
    report = KsReport(H_plus=H, delta_series=delta, hs=hs, coeff_diagnostics=diag)
    return DichotomyRun(report, trace)


def ks_report_from_trace(trace: FlowTrace, V: PotentialV) -> KsReport:
    """Functionals of a stored flow trace.

    ``H_+`` and the Hilbert-Schmidt residual use the first iterate on the
    blocks ``j >= 0`` where ``V(A)`` is fully determined; ``delta`` and the
    flow diagnostics use every step of the trace.
    """
    its = trace.iterates
    if not its:
        raise ValueError("empty trace")
    W = its[0]
    t0, t1 = W.trusted
    lo, hi = max(0, t0 + 3), t1 - 2
    H = hs = None
    if hi - lo >= 2:
        VA = assemble_V_of_A(W, V, (lo, hi))
        H = ks_functional_H(VA, (lo, hi - 1))
        hs = hs_residual_report(W, V, (lo, hi), VA=VA)
    n = len(its) - 1
    delta = np.array([ks_delta(its[k], V, its[k + 1]) for k in range(n)])
    diag = ks_coefficient_diagnostics(FlowTrace(its[: max(n, 1)]), V)
    return KsReport(H_plus=H, delta_series=delta, hs=hs, coeff_diagnostics=diag)
