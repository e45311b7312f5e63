"""Command-line front end.

Exit codes: 0 ok, 1 usage, 2 scene config, 3 I/O, 4 numeric abort.
Every output directory gets a ``manifest.txt`` from which ``irtps rerun``
repeats the command.
"""
from __future__ import annotations

import argparse
import logging
import os
import shlex
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import LoadError
from .integration import ConvergenceWarning
from .io import ensure_dir, load_dataset, load_maps, read_kv, read_lights, save_dataset, save_maps, write_kv
from .metrics import METHODS, evaluate, format_table, to_csv
from .pipeline import PipelineAbort, PipelineConfig, run, solve_surface
from .raytrace import render_dataset, set_threads
from .report import error_maps, save_bar_chart, save_error_figure, save_image
from .scene import ConfigError, env_from_cfg, load_scene_cfg

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("irtps")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return parse


def _write_manifest(out: Path, args, argv, started: float, extra=None) -> None:
    entries = {
        "command": args.command,
        "argv": shlex.join(argv),
        "out": str(args.out),
        "cwd": os.getcwd(),
        "seed": str(getattr(args, "seed", "")),
        "version": __version__,
        "duration_s": f"{time.perf_counter() - started:.3f}",
    }
    for key in ("scene_cfg", "dataset", "result", "lights"):
        v = getattr(args, key, None)
        if v is not None:
            entries[f"path.{key}"] = str(Path(v).resolve())
    for k, v in (extra or {}).items():
        entries[f"config.{k}"] = str(v)
    write_kv(entries, out / "manifest.txt")


def _pipeline_config(args, r):
    return PipelineConfig(r=r, max_iterations=args.iters, tol=args.tol, seed=args.seed)


def cmd_render(args):
    lights = read_lights(args.lights) if args.lights else None
    scene, sampler, cfg = load_scene_cfg(args.scene_cfg, lights)
    if args.spp is not None:
        sampler.spp = args.spp
    if args.seed is not None:
        sampler.seed = args.seed
    args.seed = sampler.seed
    ds = render_dataset(scene, scene.lights, sampler, scene_cfg=dict(cfg))
    out = ensure_dir(args.out)
    save_dataset(ds, out)
    return {"spp": sampler.spp, "max_bounces": sampler.max_bounces, "lights": len(scene.lights)}


def cmd_ps(args):
    ds = load_dataset(args.dataset)
    h, a, n = solve_surface(ds, ds.images, PipelineConfig())
    out = ensure_dir(args.out)
    save_maps(out, h, n, a)
    return {"method": "PS"}


def cmd_irtps(args):
    ds = load_dataset(args.dataset)
    env = env_from_cfg(ds.scene)
    cfg = _pipeline_config(args, args.rays)
    out = ensure_dir(args.out)
    final, history = run(ds, env, cfg, dump_dir=out if args.dump_iters else None)
    save_maps(out, final.height, final.normals, final.albedo)
    with open(out / "history.csv", "w") as f:
        f.write("t,dh\n")
        for rec in history:
            f.write(f"{rec.t},{rec.dh!r}\n")
    done = final.t < cfg.max_iterations or final.dh < cfg.tol
    status = f"converged at t={final.t}" if done else f"stopped at max_iterations={cfg.max_iterations}"
    (out / "convergence.log").write_text(
        "".join(f"t={rec.t} D_H={rec.dh!r}\n" for rec in history) + status + "\n")
    print(status)
    return {"method": f"IRTPSr{args.rays}", "rays": args.rays, "iters": args.iters, "tol": args.tol}


def _ground_truth(ds, where):
    if not ds.has_ground_truth:
        raise LoadError(f"{where}: dataset has no ground truth maps")
    return ds.gt_height, ds.gt_normals, ds.gt_albedo


def cmd_eval(args):
    ds = load_dataset(args.dataset)
    gt = _ground_truth(ds, args.dataset)
    h, n, a = load_maps(args.result)
    if h is None:
        raise LoadError(f"{args.result}: missing height/normals/albedo maps")
    method = "result"
    manifest = Path(args.result) / "manifest.txt"
    if manifest.exists():
        method = read_kv(manifest).get("config.method", method)
    rep = evaluate(*gt, h, n, a, raw=args.no_align)
    sys.stdout.write(to_csv({method: rep}))
    sys.stdout.write(format_table({method: rep}))
    return None


def cmd_compare(args):
    ds = load_dataset(args.dataset)
    gt = _ground_truth(ds, args.dataset)
    env = env_from_cfg(ds.scene)
    out = ensure_dir(args.out)
    reports, maps = {}, {}
    for method in METHODS:
        d = ensure_dir(out / method)
        if method == "PS":
            h, a, n = solve_surface(ds, ds.images, PipelineConfig())
        else:
            final, _ = run(ds, env, _pipeline_config(args, int(method[-1])))
            h, a, n = final.height, final.albedo, final.normals
        save_maps(d, h, n, a)
        reports[method] = evaluate(*gt, h, n, a)
        maps[method] = error_maps(*gt, h, n, a)
        log.info("%s done", method)
    (out / "report.csv").write_text(to_csv(reports))
    table = format_table(reports)
    (out / "table.txt").write_text(table)
    vmax = [max(np.nanmax(m[k]) for m in maps.values()) for k in range(3)]
    for method, m in maps.items():
        save_error_figure(out / f"errors_{method}.png", method, m, vmax)
    save_bar_chart(out / "errors_bar.png", reports)
    save_image(out / "input_000.png", ds.images[0])
    sys.stdout.write(table)
    return {"methods": ",".join(METHODS), "iters": args.iters, "tol": args.tol}


def _out_index(argv, where):
    """Position of the output-directory argument, found by reparsing with a marker."""
    marker = "\0out"
    for i in range(len(argv)):
        trial = argv[:i] + [marker] + argv[i + 1:]
        try:
            if getattr(build_parser().parse_args(trial), "out", None) == marker:
                return i
        except UsageError:
            continue
    raise LoadError(f"{where}: output path not found in argv")


def cmd_rerun(args):
    entries = read_kv(args.manifest)
    if "argv" not in entries:
        raise LoadError(f"{args.manifest}: no argv entry")
    argv = shlex.split(entries["argv"])
    if args.out is not None:
        argv[_out_index(argv, args.manifest)] = str(Path(args.out).resolve())
    if args.threads is not None:
        argv += ["--threads", str(args.threads)]
    # relative paths in argv were relative to the original working directory
    here = os.getcwd()
    os.chdir(entries.get("cwd", here))
    try:
        return main(argv)
    finally:
        os.chdir(here)


def build_parser() -> Parser:
    p = Parser(prog="irtps", description="Photometric stereo with inter-reflection removal.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(sp):
        sp.add_argument("--threads", type=_positive(int), default=None,
                        help="worker threads (default: IRTPS_THREADS or all cores)")

    def iter_opts(sp):
        sp.add_argument("--iters", type=_positive(int), default=10)
        sp.add_argument("--tol", type=_positive(float), default=1e-3)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("render", help="render a synthetic dataset")
    sp.add_argument("scene_cfg")
    sp.add_argument("out")
    sp.add_argument("--lights", default=None, help="light file (default: 8-light ring)")
    sp.add_argument("--spp", type=_positive(int), default=None)
    sp.add_argument("--seed", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("ps", help="classic photometric stereo")
    sp.add_argument("dataset")
    sp.add_argument("out")
    common(sp)
    sp.set_defaults(func=cmd_ps)

    sp = sub.add_parser("irtps", help="iterative inter-reflection removal")
    sp.add_argument("dataset")
    sp.add_argument("out")
    sp.add_argument("--rays", type=int, choices=(1, 2, 3), default=3)
    iter_opts(sp)
    sp.add_argument("--dump-iters", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_irtps)

    sp = sub.add_parser("eval", help="error metrics against ground truth")
    sp.add_argument("result")
    sp.add_argument("dataset")
    sp.add_argument("--no-align", action="store_true", help="also report unaligned height error")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="PS and IRTPSr1..3 side by side")
    sp.add_argument("dataset")
    sp.add_argument("out")
    iter_opts(sp)
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("rerun", help="repeat a command from its manifest.txt")
    sp.add_argument("manifest")
    sp.add_argument("--out", default=None, help="write to this directory instead")
    sp.add_argument("--threads", type=_positive(int), default=None)
    sp.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "rerun":
        try:
            return cmd_rerun(args)
        except (LoadError, OSError) as e:
            print(f"irtps: {e}", file=sys.stderr)
            return EXIT_IO
    set_threads(args.threads)
    started = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            extra = args.func(args)
    except ConfigError as e:
        print(f"irtps: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (LoadError, OSError) as e:
        print(f"irtps: {e}", file=sys.stderr)
        return EXIT_IO
    except (PipelineAbort, ValueError, np.linalg.LinAlgError) as e:
        print(f"irtps: numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if extra is not None:
        _write_manifest(Path(args.out), args, argv, started, extra)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
