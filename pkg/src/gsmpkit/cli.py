"""Command-line front end: ``gsmpkit {potential,torus,flow,ks-report,verify}``.

Every command writes into ``--out`` and finishes with ``manifest.json``
listing each file it wrote together with its SHA-256.  Timings go to the
log on stderr only, so reruns with the same config produce byte-identical
files.  Exit codes: 0 success, 2 partial results or failed certification,
1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import KsReport, dist_to_isospectral, ks_spectral_side, relative_tail_growth, spectral_data
from .config import ConfigError, ExperimentConfig
from .experiments import PerturbationSpec, dichotomy_run, ks_report_from_trace, perturb_window
from .flow import FlowTrace, flow_run
from .gsmp import ClassViolation, GsmpWindow, check_gsmp_class, fiber_magic_check
from .io import dumps, fmt, write_json, write_text
from .isospectral import coordinate_names, sample_torus, solve_iso_point
from .spectral_sets import SolverError, solve_potential, verify_potential

log = logging.getLogger("gsmpkit")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2

DEFAULT_CONFIG = {"interval_system": [[-2.0, 2.0], [-1.0, 1.0]]}


class UsageError(Exception):
    pass


class Run:
    """Output directory bookkeeping; every written file is recorded for the manifest."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig, quiet: bool = False):
        self.out = out
        self.quiet = quiet
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def json(self, name: str, obj) -> None:
        write_json(self.out / name, obj)
        self.files.append(name)

    def text(self, name: str, text: str) -> None:
        write_text(self.out / name, text)
        self.files.append(name)

    def manifest(self, status: str) -> None:
        entries = []
        for name in self.files:
            data = (self.out / name).read_bytes()
            entries.append({"path": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        meta = {
            "command": self.command,
            "status": status,
            "seed": self.cfg.perturbation.seed,
            "versions": {
                "gsmpkit": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "files": entries,
        }
        write_json(self.out / "manifest.json", meta)


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def load_config(args) -> ExperimentConfig:
    if args.config is None:
        raw = dict(DEFAULT_CONFIG)
    else:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    cfg = ExperimentConfig.from_dict(raw)
    return cfg.override(seed=args.seed, flow_steps=args.steps, eta=args.eta)


# --- commands -----------------------------------------------------------------

def _potential(run: Run):
    cfg = run.cfg
    try:
        V = solve_potential(cfg.interval_system, tol=cfg.potential_tol)
    except SolverError as exc:
        log.error("potential solve failed: %s", exc)
        return None
    return V


def cmd_potential(run: Run) -> int:
    """Solve and verify the potential of the interval system."""
    cfg = run.cfg
    V = _potential(run)
    if V is None:
        return EXIT_PARTIAL
    rep = verify_potential(V, cfg.interval_system)
    run.json(
        "potential.json",
        {
            "config": cfg.to_dict(),
            "potential": V.to_dict(),
            "verification": {
                "ok": rep.ok,
                "max_violation": rep.max_violation,
                "band_violation": rep.band_violation,
                "gap_violation": rep.gap_violation,
                "worst_point": rep.worst_point,
                "samples": rep.samples,
                "tol": rep.tol,
            },
        },
    )
    log.info("potential %s, verification %s", dumps(V.to_dict()), "ok" if rep.ok else "FAILED")
    return EXIT_OK if rep.ok else EXIT_PARTIAL


def _source_point(V, cfg: ExperimentConfig):
    return solve_iso_point(V, pins=cfg.pins, tol=cfg.iso_tol, margin=cfg.margin)


def cmd_torus(run: Run) -> int:
    """Sample and certify points of the isospectral surface."""
    cfg = run.cfg
    V = _potential(run)
    if V is None:
        return EXIT_PARTIAL
    workers = int(os.environ.get("GSMPKIT_THREADS", "1") or 1)
    pts = []
    if cfg.pins is not None:
        try:
            pts.append(_source_point(V, cfg))
        except SolverError as exc:
            log.warning("pinned point failed: %s", exc)
    try:
        pts.extend(sample_torus(V, cfg.torus_count, tol=cfg.iso_tol, magic_tol=cfg.magic_tol, workers=max(workers, 1)))
    except SolverError as exc:
        log.warning("torus sampling failed: %s", exc)
    thetas = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    rows, records, seen = [], [], []
    for pt in pts:
        x = np.r_[pt.p, pt.q]
        if any(np.abs(x - y).max() < 1e-10 for y in seen):
            continue
        seen.append(x)
        magic = fiber_magic_check(pt.pair, V.poles, V, thetas)
        if magic >= cfg.magic_tol:
            continue
        rows.append([*pt.p, *pt.q, pt.residual, pt.margin, magic])
        records.append({**pt.to_dict(), "magic_residual": magic, "pins": pt.pins})
    names = coordinate_names(V.genus)
    run.text("torus_points.csv", _csv(names + ["residual", "lambda_margin", "magic_residual"], rows))
    run.json("torus.json", {"config": cfg.to_dict(), "potential": V.to_dict(), "points": records})
    log.info("%d certified torus points", len(records))
    return EXIT_OK if records else EXIT_PARTIAL


def _flow_input(cfg: ExperimentConfig):
    V = solve_potential(cfg.interval_system, tol=cfg.potential_tol)
    pt = _source_point(V, cfg)
    lo, hi = cfg.window
    try:
        W = perturb_window(GsmpWindow.constant(pt.pair, V.poles, lo, hi), cfg.perturbation)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"invalid perturbation: {exc}") from exc
    rep = check_gsmp_class(W, cfg.margin)
    if not rep.certified:
        raise ConfigError(f"perturbation breaks Lambda# positivity at n=0: min {rep.min_value:.3e} at {rep.location}")
    return V, pt, W


def cmd_flow(run: Run) -> int:
    """Run the Jacobi flow and extract Jacobi coefficients."""
    cfg = run.cfg
    try:
        V, pt, W = _flow_input(cfg)
    except SolverError as exc:
        log.error("source point failed: %s", exc)
        return EXIT_PARTIAL
    trace = flow_run(W, cfg.flow_steps, path=cfg.flow_path, margin=cfg.margin, tol=cfg.flow_tol)
    run.text("flow_trace.jsonl", trace.to_jsonl())
    J = trace.extracted
    run.text("jacobi.csv", J.to_csv())
    run.json(
        "flow.json",
        {
            "config": cfg.to_dict(),
            "source": pt.to_dict(),
            "steps_requested": cfg.flow_steps,
            "steps_completed": trace.steps,
            "stopped": trace.stopped,
            "path": cfg.flow_path,
            "discrepancy_log": [{"step": n + 1, "relative_difference": d} for n, d in enumerate(trace.discrepancies)],
        },
    )
    if trace.stopped:
        log.error("flow stopped early: %s", trace.stopped)
        return EXIT_PARTIAL
    log.info("flow completed %d steps", trace.steps)
    return EXIT_OK


def _spectral_rows(label: str, trace: FlowTrace, V, cfg: ExperimentConfig, report: KsReport):
    J = trace.extracted
    avail = max(J.end - 1, 0)
    rows = []
    for N in cfg.truncation_sizes:
        if N > avail:
            log.warning("%s: truncation %d exceeds the %d extracted coefficients; skipped", label, N, avail)
            continue
        data = spectral_data(J, int(N))
        s = ks_spectral_side(data, cfg.interval_system, eps=cfg.eps, edge_delta=cfg.edge_delta, poles=V.poles)
        report.spectral_side[int(N)] = s
        rows.append([label, str(int(N)), s.ac_term, s.ev_term, s.mass_near_poles])
    return rows


def cmd_ks_report(run: Run) -> int:
    """Killip-Simon functionals, partial sums and spectral terms."""
    cfg = run.cfg
    V = _potential(run)
    if V is None:
        return EXIT_PARTIAL
    runs: dict[str, tuple[KsReport, FlowTrace]] = {}
    status = EXIT_OK
    if cfg.trace_path is not None:
        path = Path(cfg.trace_path)
        if not path.is_file():
            raise UsageError(f"flow trace not found: {path}")
        trace = FlowTrace.from_jsonl(path.read_text())
        runs["trace"] = (ks_report_from_trace(trace, V), trace)
    else:
        try:
            pt = _source_point(V, cfg)
        except SolverError as exc:
            log.error("source point failed: %s", exc)
            return EXIT_PARTIAL
        specs = [("configured", cfg.perturbation)]
        base = cfg.perturbation if cfg.perturbation.family == "power-decay" else None
        for e in cfg.compare_exponents:
            spec = replace(base, exponent=float(e)) if base is not None else PerturbationSpec("power-decay", float(e))
            specs.append((f"exponent={fmt(e)}", spec))
        for label, spec in specs:
            try:
                r = dichotomy_run(pt, spec, cfg.flow_steps)
            except ClassViolation as exc:
                log.error("%s: %s", label, exc)
                status = EXIT_PARTIAL
                continue
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{label}: invalid perturbation: {exc}") from exc
            runs[label] = (r.report, r.trace)
    samples = None
    out_runs = {}
    partial_rows, spectral_rows = [], []
    for label, (rep, trace) in runs.items():
        if trace.stopped:
            status = EXIT_PARTIAL
        spectral_rows += _spectral_rows(label, trace, V, cfg, rep)
        d = rep.to_dict()
        series = {}
        if rep.H_plus is not None:
            series["H_plus"] = rep.H_plus.partial
        if rep.hs is not None:
            series["hs_residual"] = rep.hs.partial
        if rep.delta_series is not None:
            series["delta"] = np.cumsum(rep.delta_series)
        if rep.coeff_diagnostics is not None:
            for k, v in rep.coeff_diagnostics.partial_sums.items():
                series[f"diag_{k}"] = v
        for name, S in series.items():
            partial_rows += [[label, name, str(n), float(x)] for n, x in enumerate(S)]
        d["tail_growth"] = {k: relative_tail_growth(S, 50) for k, S in series.items() if S.size > 50}
        J = trace.extracted
        if J.end > 2:
            if samples is None:
                samples = sample_torus(V, cfg.torus_count, tol=cfg.iso_tol, magic_tol=cfg.magic_tol)
            depth = min(40, J.end - 1)
            d["dist_to_isospectral"] = dist_to_isospectral(J, samples, cfg.eta, depth=depth)
        d["flow_stopped"] = trace.stopped
        out_runs[label] = d
    run.json("ks_report.json", {"config": cfg.to_dict(), "runs": out_runs})
    run.text("partial_sums.csv", _csv(["run", "quantity", "n", "partial_sum"], partial_rows))
    run.text("spectral_terms.csv", _csv(["run", "N", "ac_term", "ev_term", "mass_near_poles"], spectral_rows))
    return status


def cmd_verify(run: Run) -> int:
    """Run the acceptance suite."""
    from .acceptance import run_all

    results = run_all(echo=(lambda s: None) if run.quiet else print)
    recs = []
    for r in results:
        vals = {k: v for k, v in r.values.items() if k not in ("time", "times")}
        recs.append({"criterion": r.number, "name": r.name, "passed": r.passed, "values": vals})
    run.json("acceptance.json", {"results": recs, "all_passed": all(r.passed for r in results)})
    return EXIT_OK if all(r.passed for r in results) else EXIT_PARTIAL


COMMANDS = {
    "potential": cmd_potential,
    "torus": cmd_torus,
    "flow": cmd_flow,
    "ks-report": cmd_ks_report,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsmpkit", description="Finite-gap GSMP matrices, Jacobi flow and Killip-Simon diagnostics.")
    parser.add_argument("--version", action="version", version=f"gsmpkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.strip())
        p.add_argument("--config", help="JSON config file (defaults to the two-interval example)")
        p.add_argument("--out", default="gsmp_out", help="output directory")
        p.add_argument("--seed", type=int, help="perturbation seed")
        p.add_argument("--steps", type=int, help="flow steps")
        p.add_argument("--eta", type=float, help="weight of the coefficient distance")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        log.error("seed must be nonnegative")
        return EXIT_USAGE
    run = Run(Path(args.out), args.command, cfg, args.quiet)
    run.json("config.json", cfg.to_dict())
    t = time.perf_counter()
    try:
        code = COMMANDS[args.command](run)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        code = EXIT_USAGE
    run.manifest({EXIT_OK: "ok", EXIT_PARTIAL: "partial", EXIT_USAGE: "usage-error"}[code])
    log.info("%s finished in %.2f s with exit code %d", args.command, time.perf_counter() - t, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
