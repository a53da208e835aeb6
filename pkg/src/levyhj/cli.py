"""Command-line front end: ``levyhj {check,distance,solve,compare,sweep}``.

Exit codes: 0 success (all assumptions hold), 1 a failed assumption or
assertion, 2 a usage or configuration error.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .assumptions import (check_H, check_J, check_M1, check_M2, check_M3, check_M4,
                          check_M4_doubleprime, check_M4_prime, check_M_unified)
from .config import ASSUMPTION_IDS, ExperimentConfig, parse_override, x_function
from .errors import (CertificationFailed, ConfigError, LevyHJError, NotConverged,
                     OrderingViolation, TooManyAtoms, UnsupportedVariant)
from .io import write_csv, write_json
from .measures import transport_discretize
from .solver import comparison_experiment, solve_stationary
from .transport import wasserstein_p_ball

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_IDS = ("M1", "M2", "M3", "M4")


class UsageError(Exception):
    pass


def _out_dir(cfg: ExperimentConfig, out) -> Path:
    path = Path(out or cfg.section("output").get("dir", "out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _file_id(aid: str) -> str:
    return aid.replace("'", "p")


def _vector(text, dim: int, what: str) -> np.ndarray:
    if text is None:
        raise UsageError(f"missing {what}")
    vals = text if isinstance(text, list) else [float(v) for v in str(text).split(",") if v.strip()]
    v = np.asarray(vals, dtype=float)
    if v.shape != (dim,):
        raise UsageError(f"{what} must have {dim} component(s)")
    return v


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

def run_check(cfg: ExperimentConfig, out: Path, ids=None, log=print) -> int:
    ids = list(ids or cfg.section("samples").get("assumptions", DEFAULT_IDS))
    for aid in ids:
        if aid not in ASSUMPTION_IDS:
            raise UsageError(f"unknown assumption id {aid!r}")
    smp = cfg.section("samples")
    plan = cfg.sample_plan()
    needs_family = [a for a in ids if a != "H"]
    fam = cfg.family() if needs_family else None
    grid = cfg.polar_grid() if needs_family else None
    code = EXIT_OK
    for aid in ids:
        if aid == "H":
            spec = cfg.hamiltonian()
            rng = np.random.default_rng([plan.seed, 4])
            xs = rng.uniform(-1, 1, (max(plan.n_xi, 8), cfg.dim))
            ps = rng.normal(size=(12, cfg.dim)) * 3.0
            rep = check_H(spec, xs, ps, seed=plan.seed)
        else:
            xi = plan.xi_samples(fam)
            pairs = plan.pairs(fam)
            r_list = smp.get("r_list")
            if aid == "M1":
                rep = check_M1(fam, xi)
            elif aid == "M2":
                rep = check_M2(fam, xi, smp.get("R_list"))
            elif aid == "M3":
                rep = check_M3(fam, pairs, grid=grid)
            elif aid == "M4":
                rep = check_M4(fam, pairs, r_list, grid=grid)
            elif aid == "M":
                rep = check_M_unified(fam, pairs, grid=grid)
            elif aid == "M4'":
                rep = check_M4_prime(fam, pairs, r_list, grid=grid)
            elif aid == "M4''":
                rep = check_M4_doubleprime(fam, pairs, smp.get("p", 1.0), grid=grid)
            else:
                rep = check_J(fam, pairs, r_list, grid=grid)
        write_json(out / f"report_{_file_id(aid)}.json", rep.to_dict(), cfg.sha256, cfg.seed)
        summary = {k: v for k, v in rep.constants.items()
                   if k in ("C_nu", "alpha", "r_exponent", "decay_exponent", "H0", "C_p")}
        log(f"{aid:5s} {rep.verdict:12s} {summary}")
        if rep.violation is not None:
            log(f"      violation: {rep.violation}")
        if not rep.holds:
            code = EXIT_FAIL
    return code


def run_distance(cfg: ExperimentConfig, out: Path, x=None, y=None, r=None, p=None,
                 log=print) -> int:
    d = cfg.section("distance")
    fam, grid = cfg.family(), cfg.polar_grid()
    xv = _vector(x if x is not None else d.get("x"), fam.dim, "x")
    yv = _vector(y if y is not None else d.get("y"), fam.dim, "y")
    r = float(r if r is not None else d.get("r", 1.0))
    p = float(p if p is not None else d.get("p", 2.0))
    mu1, mu2 = transport_discretize(fam, xv, grid), transport_discretize(fam, yv, grid)
    try:
        res = wasserstein_p_ball(mu1, mu2, r, p)
    except TooManyAtoms as exc:
        raise UsageError(f"{exc}; coarsen [grid] (ratio, n_angular, r_inner)") from None
    cpl = res.coupling
    write_csv(out / "coupling.csv", cpl.csv_header(), cpl.to_rows(), cfg.sha256, cfg.seed)
    write_json(out / "distance.json", {"x": xv, "y": yv, "r": r, "p": p, "distance": res.distance,
                                       "cost": res.cost, "status": res.status,
                                       "n_atoms": list(res.n_atoms)}, cfg.sha256, cfg.seed)
    log(f"W_{p:g}(B_{r:g}) = {res.distance!r}")
    return EXIT_OK


def _constant_envelope(cfg, fam, H, scfg):
    nodes = scfg.grid(const=0.0).nodes
    f = -H(nodes, np.zeros_like(nodes))
    return float(f.min()) / scfg.lam, float(f.max()) / scfg.lam


def run_solve(cfg: ExperimentConfig, out: Path, log=print) -> int:
    fam, H, scfg = cfg.family(), cfg.hamiltonian(), cfg.solve_config()
    init_fn = cfg.grid_expression("init", "0")
    init = scfg.grid(fn=init_fn)
    try:
        u = solve_stationary(fam, H, scfg, init)
    except NotConverged as exc:
        log(f"not converged: {exc}")
        return EXIT_FAIL
    cols = [f"x{k}" for k in range(scfg.dim)] + ["u"]
    write_csv(out / "solution.csv", cols, u.to_rows(), cfg.sha256, cfg.seed)
    write_csv(out / "history.csv", ["iteration", "residual"],
              list(enumerate(u.meta["history"])), cfg.sha256, cfg.seed)
    write_json(out / "solve.json", {k: u.meta[k] for k in ("iterations", "residual", "clamp_active",
                                                          "p_clamp", "scheme", "notes")}
               | {"sup_norm": u.sup_norm, "h": scfg.h, "delta": scfg.split_radius},
               cfg.sha256, cfg.seed)
    log(f"converged in {u.meta['iterations']} iterations, residual {u.meta['residual']:.3e}, "
        f"sup|u| = {u.sup_norm:.6g}" + (" (gradient clamp active)" if u.meta["clamp_active"] else ""))
    return EXIT_OK


def run_compare(cfg: ExperimentConfig, out: Path, sub=None, sup=None, log=print) -> int:
    fam, H, scfg = cfg.family(), cfg.hamiltonian(), cfg.solve_config()
    lo, hi = _constant_envelope(cfg, fam, H, scfg)
    sub_src = sub or cfg.section("solver").get("sub") or repr(lo)
    sup_src = sup or cfg.section("solver").get("super") or repr(hi)
    g_sub = scfg.grid(fn=x_function(sub_src))
    g_sup = scfg.grid(fn=x_function(sup_src))
    doc = {"sub": str(sub_src), "super": str(sup_src)}
    try:
        rep = comparison_experiment(fam, H, scfg, g_sub, g_sup)
    except (CertificationFailed, OrderingViolation) as exc:
        doc.update(holds=False, error=type(exc).__name__, message=str(exc))
        write_json(out / "compare.json", doc, cfg.sha256, cfg.seed)
        log(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    except NotConverged as exc:
        doc.update(holds=False, error="NotConverged", message=str(exc))
        write_json(out / "compare.json", doc, cfg.sha256, cfg.seed)
        log(f"not converged: {exc}")
        return EXIT_FAIL
    doc.update(rep.to_dict())
    write_json(out / "compare.json", doc, cfg.sha256, cfg.seed)
    cols = [f"x{k}" for k in range(scfg.dim)] + ["u"]
    write_csv(out / "solution.csv", cols, rep.solution.to_rows(), cfg.sha256, cfg.seed)
    log(f"ordered={rep.ordered} sandwich={rep.sandwich} agreement={rep.agreement:.3e} "
        f"(tol {rep.agreement_tol:.1e})")
    return EXIT_OK if rep.holds else EXIT_FAIL


TASKS = {"check": run_check, "distance": run_distance, "solve": run_solve,
         "compare": run_compare}


def run_sweep(args, base_overrides, out: Path, log=print) -> int:
    axes = []
    for item in args.vary or []:
        if "=" not in item:
            raise UsageError(f"--vary {item!r} must look like key=v1,v2")
        key, values = item.split("=", 1)
        axes.append([f"{key}={v}" for v in values.split(",") if v != ""])
    if not axes:
        raise UsageError("sweep needs at least one --vary key=v1,v2")
    cells = list(itertools.product(*axes))
    # validate every cell before running any of them
    cfgs = [ExperimentConfig.load(args.config, list(base_overrides) + list(c), args.seed)
            for c in cells]
    task = TASKS[args.task]

    def run(i):
        cell_out = out / f"cell_{i:03d}"
        cell_out.mkdir(parents=True, exist_ok=True)
        lines = []
        try:
            code = task(cfgs[i], cell_out, log=lines.append)
        except (ConfigError, UsageError, UnsupportedVariant) as exc:
            lines.append(f"error: {exc}")
            code = EXIT_USAGE
        except LevyHJError as exc:
            lines.append(f"{type(exc).__name__}: {exc}")
            code = EXIT_FAIL
        (cell_out / "log.txt").write_text("\n".join(lines) + "\n")
        return code

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        codes = list(pool.map(run, range(len(cells))))
    keys = [a[0].split("=", 1)[0] for a in axes]
    rows = [[i] + [c.split("=", 1)[1] for c in cell] + [code]
            for i, (cell, code) in enumerate(zip(cells, codes))]
    write_csv(out / "sweep.csv", ["cell"] + keys + ["exit_code"], rows,
              cfgs[0].sha256, cfgs[0].seed)
    for row in rows:
        log(",".join(str(v) for v in row))
    return max(codes)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment configuration")
    common.add_argument("--out", help="output directory (default: [output].dir or ./out)")
    common.add_argument("--seed", type=int, help="sampling seed (overrides samples.seed)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set section.key to a TOML value; repeatable")
    parser = argparse.ArgumentParser(
        prog="levyhj", description="Lévy measure checks, restricted transport and an HJ solver.",
        epilog="exit codes: 0 ok, 1 failed check, 2 usage or config error")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", parents=[common], help="check structural assumptions")
    p.add_argument("--ids", help=f"comma-separated subset of {','.join(ASSUMPTION_IDS)}")
    p = sub.add_parser("distance", parents=[common], help="restricted Wasserstein distance")
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--r", type=float)
    p.add_argument("--p", type=float)
    sub.add_parser("solve", parents=[common], help="solve the stationary equation")
    p = sub.add_parser("compare", parents=[common], help="sub/supersolution comparison")
    p.add_argument("--sub", help="subsolution expression in x")
    p.add_argument("--super", dest="sup", help="supersolution expression in x")
    p = sub.add_parser("sweep", parents=[common], help="cartesian sweep over overrides")
    p.add_argument("--vary", action="append", metavar="KEY=V1,V2", required=True)
    p.add_argument("--task", choices=sorted(TASKS), default="check")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        for item in args.override:
            parse_override(item)
        if args.command == "sweep":
            cfg = ExperimentConfig.load(args.config, args.override, args.seed)
            return run_sweep(args, args.override, _out_dir(cfg, args.out))
        cfg = ExperimentConfig.load(args.config, args.override, args.seed)
        out = _out_dir(cfg, args.out)
        if args.command == "check":
            ids = args.ids.split(",") if args.ids else None
            return run_check(cfg, out, ids)
        if args.command == "distance":
            return run_distance(cfg, out, args.x, args.y, args.r, args.p)
        if args.command == "solve":
            return run_solve(cfg, out)
        return run_compare(cfg, out, args.sub, args.sup)
    except (ConfigError, UsageError, UnsupportedVariant) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LevyHJError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
