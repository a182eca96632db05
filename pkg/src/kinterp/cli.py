"""Command-line entry point: synth, scene, estimate, interp, eval, flowviz.

Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
3 degenerate input (not enough motion to estimate the exposure ratio).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import shutil
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, load_config, model_options
from .flow import FlowError, compose_s23, flow_to_color, read_flo, write_flo
from .frames import ExposureConfig, Frame, FrameError, import_key_states, load_frame, save_frame
from .metrics import psnr, ssim
from .refine import joint_estimate
from .simulator import (
    SceneError,
    SceneSpec,
    blur_output_count,
    discrete_lambda,
    gen_scene_frame,
    random_scene,
    scene_quad,
    synth_blur_dataset,
)
from .synthesis import QuadError, QuadFlows, interpolate_sequence
from .trajectory import InsufficientMotionError, LambdaEstimate, estimate_lambda, schedule_timestamps

SCHEMA = 1
FLOW_NAMES = ("f10", "f12", "f13", "r10", "r12", "r13")
FLOW_ANCHORS = {"f": "L1", "r": "L2"}

log = logging.getLogger("kinterp")


class UsageError(Exception):
    pass


class DegenerateInput(Exception):
    pass


def _dump(obj, path: Optional[Path] = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    return text


def _jsonable(x: float):
    return "inf" if math.isinf(x) else x


def _list_pngs(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def flow_path(root: Path, index: int, name: str) -> Path:
    return root / "flows" / f"{index:06d}_{name}.flo"


def read_quad_flows(root: Path, index: int) -> QuadFlows:
    fields = {name: read_flo(flow_path(root, index, name), FLOW_ANCHORS[name[0]]) for name in FLOW_NAMES}
    return QuadFlows(**fields)


def write_quad_flows(root: Path, index: int, flows: QuadFlows) -> None:
    for name in FLOW_NAMES:
        write_flo(getattr(flows, name), flow_path(root, index, name))


def _slot(offset: float, t0: float) -> str:
    if abs(offset) < 1e-9 or abs(offset - t0) < 1e-9:
        return "deblurring"
    return "interpolation"


# synth ---------------------------------------------------------------------

def cmd_synth(args, cfg) -> int:
    if args.m < 1:
        raise UsageError("--m must be >= 1")
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    gamma = cfg["frames.gamma"]
    paths = _list_pngs(Path(args.inp))
    if len(paths) < args.m:
        raise UsageError(f"{len(paths)} input frames, need at least m={args.m}")
    out = Path(args.out)
    period = args.m + args.n
    frames = (load_frame(p, gamma) for p in paths)
    gt_frames = []
    count = 0
    for rec in synth_blur_dataset(frames, args.m, args.n):
        k = rec.index
        save_frame(rec.blurry, out / "blur" / f"{k:06d}.png", gamma)
        save_frame(rec.start, out / "gt" / f"{k:06d}_s.png", gamma)
        save_frame(rec.end, out / "gt" / f"{k:06d}_e.png", gamma)
        for j, f in enumerate(rec.sharp):
            name = f"{k:06d}_{j:02d}.png"
            save_frame(f, out / "gt" / name, gamma)
            gt_frames.append({"file": name, "time": k + j / period, "quad": k, "offset": j / period,
                              "kind": "intra",
                              "slot": "deblurring" if j in (0, args.m - 1) else "interpolation"})
        count += 1
    t0_discrete = (args.m - 1) / period
    manifest = {
        "schema": SCHEMA, "kind": "blur", "m": args.m, "n": args.n,
        "fps_in": args.fps_in, "fps_out": args.fps_in / period,
        "count": count, "expected_count": blur_output_count(len(paths), args.m, args.n),
        "discrete_lambda": discrete_lambda(args.m, args.n),
        "discrete_t0": t0_discrete,
    }
    _dump(manifest, out / "manifest.json")
    _dump({"schema": SCHEMA, "t0": t0_discrete, "frames": gt_frames}, out / "gt" / "manifest.json")
    print(_dump(manifest))
    return 0


# scene ---------------------------------------------------------------------

def _exposure_from_args(args) -> ExposureConfig:
    if args.m is not None or args.n is not None:
        if args.m is None or args.n is None:
            raise UsageError("--m and --n must be given together")
        try:
            return ExposureConfig.from_pattern(args.m, args.n)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if not 0.0 < args.t0 <= 1.0:
        raise UsageError("--t0 must be in (0, 1]")
    return ExposureConfig(args.t0, 1.0 - args.t0)


def cmd_scene(args, cfg) -> int:
    exp = _exposure_from_args(args)
    if args.periods < 1 or args.factor < 1:
        raise UsageError("--periods and --factor must be >= 1")
    try:
        if args.spec:
            spec = SceneSpec.load(args.spec)
        else:
            spec = random_scene(args.seed, args.width, args.height, args.sprites, exp.t0, args.periods,
                                args.min_speed, args.max_speed, args.radius,
                                background=not args.black)
        spec.check_time(0.0)
        spec.check_time(args.periods + exp.t0)
    except SceneError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "scene.json")
    for k in range(args.periods):
        quad, flows = scene_quad(spec, exp.t0, k)
        if k == 0:
            save_frame(quad.l0, out / "keystates" / f"{k:06d}_s.png")
            save_frame(quad.l1, out / "keystates" / f"{k:06d}_e.png")
        save_frame(quad.l2, out / "keystates" / f"{k + 1:06d}_s.png")
        save_frame(quad.l3, out / "keystates" / f"{k + 1:06d}_e.png")
        write_quad_flows(out, k, flows)
    gt_frames = []
    i = 0
    for k in range(args.periods):
        for s in schedule_timestamps(exp, args.factor):
            name = f"out_{i:06d}.png"
            save_frame(gen_scene_frame(spec, k + s.t), out / "gt" / name)
            gt_frames.append({"file": name, "time": k + s.t, "kind": s.kind, "quad": k,
                              "offset": s.t, "slot": _slot(s.t, exp.t0)})
            i += 1
    manifest = {"schema": SCHEMA, "kind": "scene", "t0": exp.t0, "t1": exp.t1, "lambda": exp.lam,
                "m": exp.m, "n": exp.n, "periods": args.periods, "factor": args.factor,
                "seed": args.seed}
    _dump(manifest, out / "manifest.json")
    _dump({"schema": SCHEMA, "t0": exp.t0, "frames": gt_frames}, out / "gt" / "manifest.json")
    print(_dump(manifest))
    return 0


# estimate ------------------------------------------------------------------

def cmd_estimate(args, cfg) -> int:
    opts = model_options(cfg)
    if args.lam is not None:
        if not args.lam > 0:
            raise UsageError("--lambda must be positive")
        report = LambdaEstimate(args.lam).to_dict()
        report.update(schema=SCHEMA, source="override")
        print(_dump(report, Path(args.out) if args.out else None))
        return 0
    if args.flows:
        f10, f12, f13 = (read_flo(p, "L1") for p in args.flows)
    elif args.data:
        root = Path(args.data)
        f10, f12, f13 = (read_flo(flow_path(root, args.index, n), "L1") for n in ("f10", "f12", "f13"))
    else:
        raise UsageError("give --flows F10 F12 F13 or --data DIR")
    try:
        if args.iters:
            est, _ = joint_estimate(f10, f12, f13, max_iters=args.iters,
                                    lambda_opts=opts.lambda_opts, refine_opts=opts.refine_opts)
            source = "joint"
        else:
            est = estimate_lambda(-f10, f12, compose_s23(f13, f12), opts.lambda_opts)
            source = "single"
    except InsufficientMotionError as exc:
        raise DegenerateInput(str(exc)) from exc
    report = est.to_dict()
    report.update(schema=SCHEMA, source=source)
    print(_dump(report, Path(args.out) if args.out else None))
    return 0


# interp --------------------------------------------------------------------

def _quad_stream(root: Path, analytic: bool, gamma):
    if analytic:
        spec = SceneSpec.load(root / "scene.json")
        t0 = json.loads((root / "manifest.json").read_text(encoding="utf-8"))["t0"]
        periods = json.loads((root / "manifest.json").read_text(encoding="utf-8"))["periods"]
        for k in range(periods):
            yield scene_quad(spec, t0, k)
        return
    k = 0
    while flow_path(root, k, "f10").exists():
        yield import_key_states(root / "keystates", k, gamma), read_quad_flows(root, k)
        k += 1
    if k == 0:
        raise FileNotFoundError(f"no flows found under {root / 'flows'}")


def cmd_interp(args, cfg) -> int:
    if args.factor < 1:
        raise UsageError("--factor must be >= 1")
    if args.lam is not None and not args.lam > 0:
        raise UsageError("--lambda must be positive")
    if args.qvi and args.lam is not None:
        raise UsageError("--qvi fixes lambda to 1; do not combine with --lambda")
    root = Path(args.data)
    if not root.is_dir():
        raise FileNotFoundError(f"no such dataset directory: {root}")
    opts = model_options(cfg, qvi=args.qvi, refine=not args.no_refine)
    out = Path(args.out)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    entries = []
    quads = {}
    gamma = cfg["frames.gamma"]
    try:
        stream = interpolate_sequence(
            _quad_stream(root, args.analytic, gamma), args.factor, lam=args.lam, opts=opts,
            threads=args.threads, smooth=args.smooth, on_degenerate=args.on_degenerate,
            w_floor=float(cfg["synthesis.w_floor"]))
        for i, o in enumerate(stream):
            name = f"out_{i:06d}.png"
            save_frame(o.frame, out / name, gamma)
            written.append(out / name)
            entries.append({"file": name, "time": o.time, "kind": o.kind, "quad": o.quad_index,
                            "offset": o.offset, "lambda": o.lam})
            quads[o.quad_index] = o.lam
        mode = "qvi" if args.qvi else ("fixed" if args.lam is not None else "estimated")
        manifest = {
            "schema": SCHEMA, "factor": args.factor, "mode": mode, "refine": not args.no_refine,
            "quads": [{"index": k, "lambda": lam, "t0": 1 / (1 + lam)} for k, lam in sorted(quads.items())],
            "frames": entries,
        }
        _dump(manifest, out / "manifest.json")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    print(_dump({"schema": SCHEMA, "frames": len(entries), "quads": manifest["quads"], "mode": mode}))
    return 0


# eval ----------------------------------------------------------------------

def _summary(rows):
    if not rows:
        return {"count": 0, "psnr": None, "ssim": None}
    ps = [r["_psnr"] for r in rows]
    mean_psnr = math.inf if any(math.isinf(p) for p in ps) else float(np.mean(ps))
    return {"count": len(rows), "psnr": _jsonable(mean_psnr), "ssim": float(np.mean([r["ssim"] for r in rows]))}


def cmd_eval(args, cfg) -> int:
    out_dir, gt_dir = Path(args.out), Path(args.gt)
    out_m = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    gt_m = json.loads((gt_dir / "manifest.json").read_text(encoding="utf-8"))
    gt_by_time = {round(e["time"], 9): e for e in gt_m["frames"]}
    luma = bool(args.luma or cfg["metrics.luma"])
    gt_t0 = gt_m.get("t0")
    rows = []
    for e in out_m["frames"]:
        key = round(e["time"], 9)
        if key not in gt_by_time:
            raise UsageError(f"manifest mismatch: no ground truth at time {e['time']}")
        g = gt_by_time[key]
        a = load_frame(out_dir / e["file"])
        b = load_frame(gt_dir / g["file"])
        p = psnr(a, b, luma)
        slot = g.get("slot") or (_slot(g.get("offset", key % 1.0), gt_t0) if gt_t0 is not None else "interpolation")
        rows.append({"file": e["file"], "time": e["time"], "slot": slot, "psnr": _jsonable(p),
                     "_psnr": p, "ssim": ssim(a, b, luma)})
    if not rows:
        raise UsageError("output manifest lists no frames")
    report = {
        "schema": SCHEMA,
        "metric": {"psnr": "10*log10(1/MSE), RGB in [0,1]" if not luma else "luma",
                   "ssim": "gaussian 11x11 sigma=1.5, K1=0.01, K2=0.03"},
        "deblurring": _summary([r for r in rows if r["slot"] == "deblurring"]),
        "interpolation": _summary([r for r in rows if r["slot"] == "interpolation"]),
        "overall": _summary(rows),
        "frames": [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows],
    }
    print(_dump(report, Path(args.report) if args.report else None))
    return 0


# flowviz -------------------------------------------------------------------

def cmd_flowviz(args, cfg) -> int:
    field = read_flo(args.inp)
    save_frame(flow_to_color(field, args.max_mag), Path(args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinterp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with namespaced settings")
    common.add_argument("--threads", type=int, default=1, help="worker threads (output is identical for any value)")
    common.add_argument("--seed", type=int, default=0, help="seed for generated test data")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--mag-floor", type=float, dest="trajectory.mag_floor")
    common.add_argument("--cos-floor", type=float, dest="trajectory.cos_floor")
    common.add_argument("--min-pixels", type=int, dest="trajectory.min_pixels")
    common.add_argument("--tau-px", type=float, dest="refine.tau_px")
    common.add_argument("--luma", action="store_true", help="metrics on BT.601 luma")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="blurry low-rate dataset from high-rate frames")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, required=True, help="frames averaged per period")
    p.add_argument("--n", type=int, required=True, help="frames dropped per period")
    p.add_argument("--fps-in", type=float, default=240.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scene", parents=[common], help="analytic scene with exact flows and ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="scene JSON (random scene from --seed otherwise)")
    p.add_argument("--t0", type=float, default=0.5)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--periods", type=int, default=1)
    p.add_argument("--factor", type=int, default=10)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--sprites", type=int, default=2)
    p.add_argument("--min-speed", type=float, default=15.0)
    p.add_argument("--max-speed", type=float, default=30.0)
    p.add_argument("--radius", type=float, default=16.0)
    p.add_argument("--black", action="store_true", help="black background")
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("estimate", parents=[common], help="estimate the exposure ratio")
    p.add_argument("--flows", nargs=3, metavar=("F10", "F12", "F13"))
    p.add_argument("--data", help="dataset directory with flows/")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--iters", type=int, default=0, help="refinement rounds (0: single pass)")
    p.add_argument("--lambda", type=float, dest="lam", help="skip estimation, report this ratio")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("interp", parents=[common], help="render interpolated frames")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=int, default=10)
    p.add_argument("--lambda", type=float, dest="lam", help="ground-truth ratio, skips estimation")
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--qvi", action="store_true", help="equal-interval baseline (lambda forced to 1)")
    p.add_argument("--analytic", action="store_true", help="regenerate key-states and flows from scene.json")
    p.add_argument("--smooth", type=int, default=0, help="running median over the last K ratios")
    p.add_argument("--on-degenerate", choices=("error", "previous"), default="error")
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM against ground truth")
    p.add_argument("--out", required=True, help="interpolation output directory")
    p.add_argument("--gt", required=True, help="ground-truth directory with manifest.json")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flowviz", parents=[common], help="color-wheel PNG of a .flo file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-mag", type=float)
    p.set_defaults(func=cmd_flowviz)
    return parser


def _error(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"schema": SCHEMA, "error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        return _error(2, "usage", exc)
    except QuadError as exc:
        if isinstance(exc.cause, InsufficientMotionError):
            return _error(3, "insufficient_motion", exc)
        if isinstance(exc.cause, (OSError, FlowError, FrameError)):
            return _error(1, "io", exc)
        return _error(2, "invalid_input", exc)
    except (DegenerateInput, InsufficientMotionError) as exc:
        return _error(3, "insufficient_motion", exc)
    except (OSError, FlowError, FrameError, json.JSONDecodeError) as exc:
        return _error(1, "io", exc)
    except (SceneError, ValueError) as exc:
        return _error(2, "invalid_input", exc)


if __name__ == "__main__":
    sys.exit(main())
