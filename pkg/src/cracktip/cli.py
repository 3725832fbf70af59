"""Command line interface: ``crack run | presets | mesh | report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, list_presets, resolve
from .runner import PipelineError, atomic_write, mesh_only, run, write_artifacts

log = logging.getLogger("cracktip")


def _setup_logging():
    level = os.environ.get("CRACK_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _cmd_run(args) -> int:
    cfg = resolve(args.config)
    result = run(cfg, mesh_level=args.mesh_level, threads=args.threads)
    out = Path(args.out_dir) if args.out_dir else Path("runs") / cfg.name
    paths = write_artifacts(result, out, solution_out=args.solution_out, mesh_out=args.mesh_out)
    rep = result.report
    for name, flag in sorted(rep.flags.items()):
        status = "PASS" if flag["passed"] else "FAIL"
        print(f"[{status}] criterion {flag['criterion']}: {name}")
    if rep.sif:
        print(f"C0 = {rep.sif['C0']:.6g}, C = {rep.sif['C']:.6g}")
    print(f"artifacts: {paths['report'].parent}")
    return 0 if rep.passed else 1


def _cmd_presets(args) -> int:
    for name, desc in list_presets():
        print(f"{name:16s} {desc}")
    return 0


def _cmd_mesh(args) -> int:
    cfg = resolve(args.config)
    T = mesh_only(cfg, mesh_level=args.mesh_level)
    out = Path(args.mesh_out) if args.mesh_out else (
        Path(args.out_dir) if args.out_dir else Path("runs") / cfg.name) / "mesh.json"
    atomic_write(out, T.to_json() + "\n")
    print(f"{T.n_vertices} vertices, {T.n_triangles} triangles, tip size {T.tip_size():.3g} -> {out}")
    return 0


def _cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.json"
    if not path.is_file():
        print(f"error: no report.json in {args.run_dir}", file=sys.stderr)
        return 2
    rep = json.loads(path.read_text())
    print(f"run: {rep['name']}")
    for lev in rep.get("levels", []):
        c0 = lev.get("C0")
        c0s = f"{c0:.6g}" if c0 is not None else "-"
        print(f"  level {lev['level']}: {lev['vertices']} vertices, tip {lev['tip_size']:.3g}, C0 {c0s}")
    if rep.get("sif"):
        print(f"C0 = {rep['sif']['C0']:.6g}  C = {rep['sif']['C']:.6g}")
    for b in rep.get("blowup", []):
        print(f"  r = {b['r']:<6g} value {b['value_distance']:.4g}  gradient {b['gradient_distance']:.4g}")
    for name, flag in sorted(rep.get("flags", {}).items()):
        print(f"[{'PASS' if flag['passed'] else 'FAIL'}] criterion {flag['criterion']}: {name}")
    return 0 if rep.get("passed", False) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crack", description="Crack-tip energy and blow-up experiments")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help="directory for artifacts (default runs/<name>)")
    common.add_argument("--mesh-level", type=int, default=None, help="finest nested mesh level (0-based)")
    common.add_argument("--mesh-out", help="write the finest mesh as JSON")

    r = sub.add_parser("run", parents=[common], help="run a config file or a preset name")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    r.add_argument("--solution-out", help="write the finest solution as JSON")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("presets", help="list bundled presets")
    s.set_defaults(func=_cmd_presets)

    m = sub.add_parser("mesh", parents=[common], help="build and save the mesh only")
    m.add_argument("config")
    m.set_defaults(func=_cmd_mesh)

    rp = sub.add_parser("report", help="summarise a run directory")
    rp.add_argument("run_dir")
    rp.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc.path or '<root>'}: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"pipeline error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
