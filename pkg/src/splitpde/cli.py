"""Command-line entry point: ``splitpde {solve,converge-time,converge-space,poisson-check}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigurationError, InputError, SolverFailure
from .flows import evolve, evolve_adaptive, scheme_registry
from .harness import (initial_state, operators_for, poisson_study, spatial_study, temporal_study,
                      write_csv)
from .output import header_lines, write_norm_log, write_snapshot

log = logging.getLogger("splitpde")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _summary(table) -> str:
    orders = ", ".join("-" if r.observed_order is None else f"{r.observed_order:.3f}" for r in table.rows)
    fitted = "n/a" if table.fitted_order is None else f"{table.fitted_order:.3f}"
    return f"{table.label}: nominal {table.nominal_order}, pairwise [{orders}], window {table.window}, fit {fitted}"


def cmd_solve(cfg: RunConfig, out: Path, check: bool = False) -> int:
    ops = operators_for(cfg)
    psi0 = initial_state(cfg, ops.mesh)
    scheme = scheme_registry(cfg.scheme)
    lines = cfg.to_lines()
    if cfg.adaptive:
        res = evolve_adaptive(ops, scheme, cfg.tau, cfg.T, cfg.adaptive_tol, psi0)
        final = res.state
        write_snapshot(out / f"snapshot_t{cfg.T:.6g}.txt", ops.mesh, final.c, final.t, lines)
        with (out / "steps.csv").open("w", encoding="utf-8") as fh:
            fh.write(header_lines(lines))
            fh.write("t,tau,error,accepted\n")
            for r in res.log:
                fh.write(f"{r.t!r},{r.tau!r},{r.error!r},{int(r.accepted)}\n")
        norms = [(0, psi0.t, ops.m_norm(psi0.c)), (len(res.accepted), final.t, ops.m_norm(final.c))]
        write_norm_log(out / "norms.csv", norms, lines)
        print(f"adaptive: {len(res.accepted)} accepted, {len(res.rejected)} rejected steps")
    else:
        res = evolve(ops, scheme, cfg.tau, cfg.T, psi0, snapshot_times=cfg.snapshot_times)
        for snap in res.snapshots:
            write_snapshot(out / f"snapshot_t{snap.t:.6g}.txt", ops.mesh, snap.c, snap.t, lines)
        write_norm_log(out / "norms.csv", res.norms, lines)
        n0 = res.norms[0][2]
        drift = max(abs(n - n0) for _, _, n in res.norms) / n0
        print(f"{res.steps} steps of tau={res.tau:.6g}; max relative norm drift {drift:.3e}")
    return EXIT_OK


def cmd_converge_time(cfg: RunConfig, out: Path, check: bool = False) -> int:
    tables = temporal_study(cfg)
    ok = True
    for name, table in tables.items():
        (out / f"converge_time_{name}.csv").write_text(write_csv(table, cfg))
        passed = table.passes(cfg.order_tol)
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {_summary(table)}")
    return EXIT_CHECK if check and not ok else EXIT_OK


def cmd_converge_space(cfg: RunConfig, out: Path, check: bool = False) -> int:
    tables = spatial_study(cfg)
    ok = True
    for p, table in tables.items():
        (out / f"converge_space_p{p}.csv").write_text(write_csv(table, cfg))
        errors = [r.error_l2 for r in table.rows]
        # the spatial gate is on the fitted slope; coarse pairwise orders are preasymptotic
        fitted = table.fitted_order
        passed = (fitted is not None and abs(fitted - table.nominal_order) <= cfg.space_order_tol
                  and bool(errors) and min(errors) == errors[-1])
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {_summary(table)}")
    return EXIT_CHECK if check and not ok else EXIT_OK


def cmd_poisson_check(cfg: RunConfig, out: Path, check: bool = False) -> int:
    ax, bx, ay, by = cfg.domain
    if (ax, ay) != (0.0, 0.0) or bx != by:
        raise ConfigurationError("poisson-check needs a square domain [0, L]^2")
    tables = poisson_study(cfg.p_list, cfg.h_list, length=bx, cg_tol=cfg.cg_tol)
    ok = True
    for p, table in tables.items():
        (out / f"poisson_p{p}.csv").write_text(write_csv(table, cfg))
        passed = table.passes(cfg.space_order_tol) and table.meta["max_relative_residual"] <= cfg.cg_tol
        ok &= passed
        print(f"[{'PASS' if passed else 'FAIL'}] {_summary(table)}; "
              f"max CG residual {table.meta['max_relative_residual']:.2e}")
    return EXIT_CHECK if check and not ok else EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "converge-time": cmd_converge_time,
    "converge-space": cmd_converge_space,
    "poisson-check": cmd_poisson_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitpde", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="key = value configuration file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--check", action="store_true", help="nonzero exit if an acceptance gate fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig().validate()
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, args.check)
    except (ConfigurationError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
