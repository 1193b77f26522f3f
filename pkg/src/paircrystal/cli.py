"""Command-line experiment runner.

    paircrystal {simulate,find-orbit,unit-cell,poincare,lyapunov,quantum}
        --config PATH [--out DIR] [--format csv|json] [--plot on|off] [--threads N]

Each run writes its tables, optional SVG plots and a ``manifest.json``
holding the config hash, the package version and sha256 checksums of every
output.  Wall-clock timings live only in the manifest, never in outputs.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import chaos, orbits, quantum
from .config import COMMANDS, FORMATS, ConfigError, config_hash, load_config
from .dynamics import FIELDS, DomainError, PhysicalScales, StateVector, pair_number
from .integrator import IntegrationError, IntegratorConfig, integrate
from .output import CSV_SCHEMA_VERSION, sha256_file, svg_plot, write_manifest, write_table

log = logging.getLogger("paircrystal")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SEARCH = 0, 2, 3, 4

SIMULATE_COLUMNS = ("tau", "Mx", "My", "Mz", "X", "P", "H", "Msq")
ORBIT_COLUMNS = ("X0", "T", "residual", "classification", "lambda_max")
POINCARE_COLUMNS = ("tau_star", "Mx", "My", "direction")
LYAPUNOV_COLUMNS = ("tau", "lambda_running")
QUANTUM_COLUMNS = ("y", "phi1", "phi2")


class SearchFailure(RuntimeError):
    """A search or certification step found nothing usable."""


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _init(cfg) -> StateVector:
    return StateVector(**cfg["initial"])


def _integrator(cfg) -> IntegratorConfig:
    ic = cfg["integrator"]
    return IntegratorConfig(rel_tol=ic["rel_tol"], abs_tol=ic["abs_tol"], max_step=ic["max_step"],
                            method=ic["method"], fixed_dt=ic["fixed_dt"])


class Run:
    """Collects outputs and results of one command invocation."""

    def __init__(self, out_dir, fmt, plot):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.plot = plot
        self.files = []
        self.results = {}
        self.warnings = []

    def table(self, name, columns, data):
        self.files.append(write_table(self.out_dir / name, columns, data, self.fmt))

    def figure(self, name, series, **kw):
        if self.plot:
            self.files.append(svg_plot(self.out_dir / name, series, **kw))


def cmd_simulate(cfg, run: Run, threads=1):
    sim = cfg["simulate"]
    init = _init(cfg)
    traj = integrate(init, sim["tau_end"], _integrator(cfg))
    taus, z = traj.sample(sim["sample_dt"], 0.0, sim["tau_end"])
    mx, my, mz, x, p = z.T
    h = 0.5 * p * p + 2.0 * x * my + 2.0 * mx
    msq = mx * mx + my * my + mz * mz
    cols = list(SIMULATE_COLUMNS)
    data = [taus, mx, my, mz, x, p, h, msq]
    if sim["pair_number"]:
        sc = PhysicalScales(**cfg["scales"])
        k = sc.e * sc.gamma / (2.0 * sc.m)
        if k == 0.0:
            raise ConfigError("[scales] e*gamma must be non-zero for N_p")
        cols.append("N_p")
        data.append(pair_number(mx / k, sc.m * x, sc.m))
    elif sim["observable"] == "N_p":
        raise ConfigError("observable N_p needs pair_number = true")
    table = np.column_stack(data)
    run.table("trajectory", cols, table)
    obs = sim["observable"]
    run.figure("trajectory", [(obs, taus / math.pi, table[:, cols.index(obs)])],
               title=f"{obs} vs tau", xlabel="tau / pi", ylabel=obs)
    run.results.update(
        samples=int(taus.size),
        max_H_drift=float(np.max(np.abs(h - h[0]))),
        max_Msq_drift=float(np.max(np.abs(msq - msq[0]))),
        method=traj.stats.get("method"),
    )


def _thresholds(cfg):
    return orbits.Thresholds(**cfg["thresholds"])


def cmd_find_orbit(cfg, run: Run, threads=1):
    w = cfg["window"]
    base = _init(cfg)
    icfg = _integrator(cfg)
    if w["X0_min"] == w["X0_max"]:
        grid = np.array([w["X0_min"]])
    else:
        grid = orbits.SearchWindow(w["X0_min"], w["X0_max"], w["grid_n"], base, w["tau_horizon"]).grid()
    res = orbits.scan_points(grid, base, w["tau_horizon"], icfg, _thresholds(cfg), threads,
                             refine_kw=dict(cfg["refine"]))
    ly_tau = cfg["find_orbit"]["lyapunov_tau"]
    ly = cfg["lyapunov"]
    ccfg = chaos.ChaosConfig(delta0=ly["delta0"], perturbation=tuple(ly["perturbation"]),
                             rel_tol=ly["rel_tol"], abs_tol=ly["abs_tol"])
    rows = []
    for c in res.candidates:
        lam = math.nan
        if ly_tau > 0:
            try:
                lam = chaos.lyapunov_max(c.init, ly_tau, ly["renorm_dt"], ccfg).lambda_max
            except IntegrationError as exc:
                run.warnings.append(f"lyapunov at X0={c.X0!r}: {exc}")
        cls = c.classification
        if cls != "undetermined" and not math.isnan(lam):
            cls = orbits.classify(c.residual, lam, _thresholds(cfg))
        rows.append([c.X0, c.period_T, c.residual, cls, lam])
    for idx, x0, msg in res.failures:
        run.warnings.append(f"grid point {idx} (X0={x0!r}): {msg}")
    if not rows:
        run.warnings.append("empty window: no candidate found")
    run.table("candidates", ORBIT_COLUMNS, rows)
    if rows:
        run.figure("candidates", [("residual", [r[0] for r in rows], np.log10([max(r[2], 1e-300) for r in rows]))],
                   kind="scatter", title="recurrence residual", xlabel="X(0)", ylabel="log10 residual")
    run.results.update(n_grid=int(grid.size), n_candidates=len(rows),
                       n_periodic=sum(r[3] == "periodic" for r in rows))
    if rows:
        run.results["best"] = {"X0": rows[0][0], "T": rows[0][1], "T_over_pi": rows[0][1] / math.pi,
                               "residual": rows[0][2], "classification": rows[0][3]}


def cmd_unit_cell(cfg, run: Run, threads=1):
    uc = cfg["unit_cell"]
    init = _init(cfg)
    icfg = _integrator(cfg)
    residual = orbits.recurrence_residual(init, uc["T"], icfg)
    cls = orbits.classify(residual, thresholds=_thresholds(cfg))
    run.results.update(residual=residual, classification=cls)
    if cls != "periodic":
        raise SearchFailure(f"candidate X0={init.X!r}, T={uc['T']!r} is {cls} "
                            f"(residual {residual:.3e}); refusing to build a unit cell")
    comp = FIELDS.index(uc["component"])
    cell = orbits.unit_cell(init, uc["T"], uc["n_shifts"], icfg, comp, uc["sample_dt"])
    cols = ["tau"] + [f"{uc['component']}_shift{k}" for k in range(uc["n_shifts"])]
    run.table("unit_cell", cols, np.column_stack([cell.taus, cell.traces.T]))
    run.figure("unit_cell", [(f"+{k}T", cell.taus / math.pi, cell.traces[k]) for k in range(uc["n_shifts"])],
               title=f"{uc['component']}(tau + kT)", xlabel="tau / pi", ylabel=uc["component"])
    run.results.update(overlap=cell.overlap, subunits=cell.subunits, T_over_pi=uc["T"] / math.pi)


def cmd_poincare(cfg, run: Run, threads=1):
    pc = cfg["poincare"]
    sec = chaos.poincare_section(_init(cfg), pc["tau_end"], pc["direction"], _integrator(cfg))
    data = np.column_stack([sec.crossing_times, sec.points, sec.directions]) if len(sec) else []
    run.table("section", POINCARE_COLUMNS, data)
    run.figure("section", [("", sec.points[:, 0], sec.points[:, 1])], kind="scatter",
               title="Poincare section P = 0", xlabel="Mx", ylabel="My")
    hist = chaos.epsilon_distinct_count(sec, pc["eps"]) if len(sec) else np.zeros(0, dtype=int)
    checkpoints = {}
    for t in pc["checkpoints"]:
        n = int(np.searchsorted(sec.crossing_times, t, side="right"))
        checkpoints[fmt_key(t)] = int(hist[n - 1]) if n else 0
    run.results.update(
        crossings=len(sec), degenerate=sec.degenerate, eps=pc["eps"],
        distinct_count=int(hist[-1]) if hist.size else 0,
        plateau_index=chaos.plateau_index(hist), count_at=checkpoints,
    )
    if sec.degenerate:
        run.warnings.append("degenerate section: P vanishes identically")
    elif not len(sec):
        run.warnings.append("no crossing of P = 0 within tau_end")


def fmt_key(t):
    return "%.17g" % t


def cmd_lyapunov(cfg, run: Run, threads=1):
    ly = cfg["lyapunov"]
    ccfg = chaos.ChaosConfig(delta0=ly["delta0"], renorm_dt=ly["renorm_dt"],
                             perturbation=tuple(ly["perturbation"]),
                             rel_tol=ly["rel_tol"], abs_tol=ly["abs_tol"])
    est = chaos.lyapunov_max(_init(cfg), ly["tau_total"], ly["renorm_dt"], ccfg)
    run.table("lyapunov", LYAPUNOV_COLUMNS, np.column_stack([est.times, est.history]))
    run.figure("lyapunov", [("lambda", est.times, est.history)], title="running Lyapunov estimate",
               xlabel="tau", ylabel="lambda")
    run.results.update(lambda_max=est.lambda_max, spread_last_quarter=est.spread_last_quarter(),
                       renormalizations=int(est.times.size))


def _shooting_problem(q):
    return quantum.ShootingProblem(
        energy=q["energy"], fixed=tuple(q["fixed"]), free_slot=q["free_slot"], y_max=q["y_max"],
        bracket=tuple(q["bracket"]), coupling=q["coupling"],
    )


def cmd_quantum(cfg, run: Run, threads=1):
    q = cfg["quantum"]
    try:
        prob = _shooting_problem(q)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sol = quantum.find_regular_derivative(prob, tol=q["tol"], dy=q["dy"])
    run.results.update(solved_free_value=sol.solved_free_value, free_slot=sol.free_slot,
                       defect=sol.defect, defect_minus=sol.defect_minus,
                       iterations=sol.info["iterations"], residual=quantum.equation_residual(sol))
    if q["mirror"]:
        m = quantum.mirror_solution(sol)
        sol = quantum.solve_with_data(prob, m.initial, q["dy"])
        run.results.update(mirror_initial=list(m.initial), mirror_defect=sol.defect,
                           mirror_defect_minus=sol.defect_minus)
    run.table("eigenfunction", QUANTUM_COLUMNS, np.column_stack([sol.grid, sol.phi1, sol.phi2]))
    band = np.abs(sol.grid) <= sol.y_max - 1.0
    scale = max(np.max(np.abs(sol.phi1[band])), np.max(np.abs(sol.phi2[band])), 1e-300)
    run.figure("eigenfunction", [("phi1", sol.grid[band], sol.phi1[band] / scale),
                                 ("phi2", sol.grid[band], sol.phi2[band] / scale)],
               title=f"E = {q['energy']:g}", xlabel="y", ylabel="phi / max|phi|")


HANDLERS = {
    "simulate": cmd_simulate,
    "find-orbit": cmd_find_orbit,
    "unit-cell": cmd_unit_cell,
    "poincare": cmd_poincare,
    "lyapunov": cmd_lyapunov,
    "quantum": cmd_quantum,
}


def execute(command, cfg, out_dir=None, fmt=None, plot=None, threads=1) -> dict:
    """Run ``command`` with a validated config; returns the manifest dict."""
    out = cfg["output"]
    run = Run(out_dir or out["dir"], fmt or out["format"], out["plot"] if plot is None else plot)
    t0 = time.perf_counter()
    status, error = "ok", None
    try:
        HANDLERS[command](cfg, run, threads)
    except Exception as exc:
        status, error = type(exc).__name__, str(exc)
        raise
    finally:
        manifest = {
            "command": command,
            "artifact_version": version(),
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "config_hash": config_hash(cfg),
            "config": {k: v for k, v in cfg.items() if k != "output"},
            "format": run.fmt,
            "outputs": {p.name: sha256_file(p) for p in run.files},
            "results": run.results,
            "warnings": run.warnings,
            "status": status,
            "error": error,
            "timings": {"wall_seconds": time.perf_counter() - t0},
        }
        write_manifest(run.out_dir, manifest)
    return manifest


def build_parser():
    parser = argparse.ArgumentParser(prog="paircrystal", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", default=None, help="output directory (overrides [output].dir)")
        p.add_argument("--format", choices=FORMATS, default=None)
        p.add_argument("--plot", choices=("on", "off"), default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    plot = None if args.plot is None else args.plot == "on"
    try:
        manifest = execute(args.command, cfg, args.out, args.format, plot, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (quantum.BracketError, SearchFailure) as exc:
        print(f"search failure: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    for w in manifest["warnings"]:
        log.warning(w)
    log.info("results: %s", manifest["results"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
