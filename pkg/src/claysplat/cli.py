"""``claysplat`` command line: fixtures, rendering, training, evaluation and ablations.

Every command writes its outputs under ``--out`` together with a ``run.json`` manifest
holding the arguments, configuration, seed, library versions and SHA-256 of each output.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .clay import clay_oracle, corrupt_clay, environment_background, render_clay
from .dataset import INIT_SIGMA, generate_bundle, read_bundle, read_env, write_bundle
from .fixtures import ENV_PRESETS, PRESETS, SHAPES, FixtureSpec, make_cameras, make_environment
from .imageio import write_pfm, write_png
from .metrics import evaluate
from .optimize.schedule import VARIANTS
from .optimize.train import TrainConfig, TrainingError, parse_config, train, write_log
from .scene import SceneFormatError, SceneValidationError, TrainView, load_scene, save_scene
from .shading import bake_brdf_lut, build_environment, shade, three_point_env
from .shading.brdf import LUT_SAMPLES
from .splat import render_gbuffer

DOMAIN_ERRORS = (ValueError, FileNotFoundError, SceneFormatError, SceneValidationError, TrainingError, OSError)
ABLATION_COLUMNS = ("variant", "chamfer_l1", "normal_mae", "final_L_rgb")


class UsageError(Exception):
    """Bad command-line input discovered after parsing."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def apply_thread_limit() -> int:
    """Honor ``CLAYSPLAT_THREADS`` (0 or unset = torch default); returns the thread count."""
    raw = os.environ.get("CLAYSPLAT_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as err:
        raise UsageError(f"CLAYSPLAT_THREADS must be an integer, got {raw!r}") from err
    if n < 0:
        raise UsageError("CLAYSPLAT_THREADS must be non-negative")
    if n > 0:
        torch.set_num_threads(n)
    return torch.get_num_threads()


# -- manifest ---------------------------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv: list[str], outputs, config=None, seed=None, extra=None) -> Path:
    files = sorted({Path(p).resolve() for p in outputs})
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": config,
        "versions": {
            "claysplat": __version__,
            "python": platform.python_version(),
            "torch": torch.__version__,
            "numpy": np.__version__,
        },
        "outputs": {str(p.relative_to(out.resolve())): sha256(p) for p in files},
    }
    if extra:
        manifest.update(extra)
    path = out / "run.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- helpers ----------------------------------------------------------------------------


def _load_config(args) -> TrainConfig:
    base = TrainConfig()
    if getattr(args, "config", None):
        base = parse_config(Path(args.config).read_text(encoding="utf-8"))
    changes = base.to_dict()
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "stop_after_clay", None) is not None:
        changes["stop_after_clay"] = args.stop_after_clay
    return TrainConfig(**changes)


def _resolve_training_input(path: str):
    """``--scene`` may name a bundle directory or a ``.cspl`` inside one (used as the start)."""
    p = Path(path)
    if p.is_dir():
        bundle = read_bundle(p)
        return bundle, bundle.init
    if p.is_file():
        bundle = read_bundle(p.parent)
        return bundle, load_scene(p)
    raise FileNotFoundError(f"{path}: no such scene bundle or scene file")


def _corrupted(views, sigma: float, seed: int):
    if sigma <= 0:
        return views
    return [
        TrainView(v.camera, v.rgb, clay=corrupt_clay(v.clay, sigma, seed=seed * 1000 + i), mask=v.mask)
        for i, v in enumerate(views)
    ]


def _side_by_side(*images) -> np.ndarray:
    return np.concatenate([np.asarray(im, dtype=np.float64) for im in images], axis=1)


def run_training(bundle, init, config: TrainConfig, out: Path, clay_sigma: float = 0.0):
    """Train, write ``scene.cspl``, ``env.pfm`` and ``loss.csv`` into ``out``; return the result."""
    out.mkdir(parents=True, exist_ok=True)
    views = _corrupted(bundle.views, clay_sigma, config.seed)
    result = train(init, views, bundle.env, config, log_path=out / "loss.csv")
    if not result.log:
        write_log(out / "loss.csv", [])
    save_scene(result.scene, out / "scene.cspl")
    write_pfm(out / "env.pfm", result.env.base.detach().double().numpy())
    return result, [out / "scene.cspl", out / "env.pfm", out / "loss.csv"]


# -- commands ---------------------------------------------------------------------------


def cmd_precompute_lut(args, out: Path):
    lut = bake_brdf_lut(args.res, args.samples).numpy()
    image = np.concatenate((lut, np.zeros(lut.shape[:2] + (1,))), axis=2)
    write_pfm(out / "lut.pfm", image)
    return [out / "lut.pfm"], None, {"res": args.res, "samples": args.samples}


def cmd_make_scene(args, out: Path):
    env_kind, env_path = args.env, None
    if env_kind not in ENV_PRESETS:
        env_kind, env_path = "hdr-file", args.env
        if not Path(env_path).is_file():
            raise FileNotFoundError(f"{env_path}: environment is neither a preset nor a PFM file")
    spec = FixtureSpec(
        shape=args.shape,
        gaussian_count=args.gaussians,
        preset=args.preset,
        env=env_kind,
        env_path=env_path,
        views=args.views,
        resolution=args.res,
        seed=args.seed,
        clay_sigma=args.clay_sigma,
    )
    bundle = generate_bundle(spec, args.init_sigma)
    return write_bundle(bundle, out, args.init_sigma), None, {"fixture": spec.__dict__}


def cmd_render(args, out: Path):
    p = Path(args.scene)
    bundle = None
    if p.is_dir():
        bundle = read_bundle(p)
        scene = bundle.scene
    else:
        scene = load_scene(p)
        if (p.parent / "spec.json").is_file():
            bundle = read_bundle(p.parent)
    if args.env:
        env = read_env(args.env)
    elif bundle is not None:
        env = bundle.env
    else:
        env = build_environment(three_point_env())
    if bundle is not None and args.views is None and args.res is None:
        cameras = bundle.cameras
    else:
        spec = FixtureSpec(views=args.views or 16, resolution=args.res or 32)
        cameras = make_cameras(spec)
    written = []
    with torch.no_grad():
        for i, cam in enumerate(cameras):
            gb = render_gbuffer(scene, cam)
            image = shade(gb, env, scene=scene).numpy()
            write_pfm(out / f"render_{i:03d}.pfm", image)
            write_png(out / f"render_{i:03d}.png", image)
            written += [out / f"render_{i:03d}.pfm", out / f"render_{i:03d}.png"]
            if args.clay:
                rendered = render_clay(scene, cam, background=environment_background(env, cam), gbuffer=gb)
                target = clay_oracle(scene, cam, env)
                write_png(out / f"clay_{i:03d}.png", _side_by_side(rendered.numpy(), target.numpy()))
                written.append(out / f"clay_{i:03d}.png")
    return written, None, {"views": len(cameras)}


def cmd_train(args, out: Path):
    config = _load_config(args)
    bundle, init = _resolve_training_input(args.scene)
    _, written = run_training(bundle, init, config, out, args.clay_sigma)
    data = str(Path(args.scene if Path(args.scene).is_dir() else Path(args.scene).parent).resolve())
    return written, config, {"data": data}


def _metrics_row(report) -> dict:
    return {"chamfer_l1": report.chamfer_l1, "normal_mae": report.normal_mae, "psnr": report.psnr, "ssim": report.ssim}


def cmd_eval(args, out: Path):
    p = Path(args.scene)
    trained_dir = p if p.is_dir() else p.parent
    scene = load_scene(p / "scene.cspl" if p.is_dir() else p)
    data = args.data
    if data is None and (trained_dir / "run.json").is_file():
        data = json.loads((trained_dir / "run.json").read_text(encoding="utf-8")).get("data")
    if data is None:
        raise UsageError("eval needs --data BUNDLE when --scene is not a train output directory")
    bundle = read_bundle(data)
    env_path = Path(args.env) if args.env else trained_dir / "env.pfm"
    env = read_env(env_path) if env_path.is_file() else bundle.env
    report = evaluate(scene, bundle.scene, bundle.views, bundle.gt_points, env)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    row = _metrics_row(report)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: repr(v) for k, v in row.items()})
    print(json.dumps(row))
    return [out / "metrics.json", out / "metrics.csv"], None, {"data": str(Path(data).resolve())}


def cmd_ablate(args, out: Path):
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise UsageError("--variants needs at least one variant name")
    config = _load_config(args)
    for v in variants:
        TrainConfig(**{**config.to_dict(), "variant": v})
    if args.scene:
        bundle = read_bundle(args.scene)
    else:
        spec = FixtureSpec(views=args.views or 16, resolution=args.res or 32, seed=config.seed)
        bundle = generate_bundle(spec, INIT_SIGMA)
    rows, written = [], []
    for v in variants:
        cfg = TrainConfig(**{**config.to_dict(), "variant": v})
        run_dir = out / "runs" / v
        result, files = run_training(bundle, bundle.init, cfg, run_dir, args.clay_sigma)
        written += files
        report = evaluate(result.scene, bundle.scene, bundle.views, bundle.gt_points, result.env)
        final = result.log[-1].l_rgb if result.log else float("nan")
        rows.append({"variant": v, "chamfer_l1": report.chamfer_l1, "normal_mae": report.normal_mae, "final_L_rgb": final})
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] if k == "variant" else repr(float(row[k])) for k in ABLATION_COLUMNS})
    written.append(out / "ablation.csv")
    for row in rows:
        print(f"{row['variant']}: chamfer {row['chamfer_l1']:.5f}  mae {row['normal_mae']:.2f}  L_rgb {row['final_L_rgb']:.5f}")
    return written, config, {"variants": variants}


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="claysplat",
        description="Desk-scale 2D Gaussian splatting with a reflective branch and clay-guided geometry.",
    )
    parser.add_argument("--version", action="version", version=f"claysplat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help_text, func):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--out", required=True, metavar="DIR", help="output directory (created if missing)")
        p.set_defaults(func=func)
        return p

    p = command("precompute-lut", "bake the split-sum BRDF lookup table to lut.pfm", cmd_precompute_lut)
    p.add_argument("--res", type=int, default=32, metavar="N")
    p.add_argument("--samples", type=int, default=LUT_SAMPLES, metavar="K")

    p = command("make-scene", "generate a fixture bundle with paired reflective and clay views", cmd_make_scene)
    p.add_argument("--shape", choices=SHAPES, default="sphere")
    p.add_argument("--preset", choices=PRESETS, default="mirror")
    p.add_argument("--env", default="three-point", metavar="PATH", help=f"preset ({', '.join(ENV_PRESETS[:2])}) or PFM")
    p.add_argument("--views", type=int, default=16, metavar="N")
    p.add_argument("--res", type=int, default=32, metavar="N")
    p.add_argument("--gaussians", type=int, default=512, metavar="N")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--clay-sigma", type=float, default=0.0, metavar="F")
    p.add_argument("--init-sigma", type=float, default=INIT_SIGMA, metavar="F")

    p = command("render", "render a scene (and with --clay, rendered clay beside the clay target)", cmd_render)
    p.add_argument("--scene", required=True, metavar="PATH")
    p.add_argument("--env", metavar="PATH")
    p.add_argument("--views", type=int, metavar="N")
    p.add_argument("--res", type=int, metavar="N")
    p.add_argument("--clay", action="store_true")

    def training_flags(p):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--stop-after-clay", type=_bool, metavar="BOOL")
        p.add_argument("--clay-sigma", type=float, default=0.0, metavar="F")

    p = command("train", "optimize a bundle's perturbed start against its views", cmd_train)
    p.add_argument("--scene", required=True, metavar="PATH", help="bundle directory or start .cspl inside one")
    p.add_argument("--variant", choices=sorted(VARIANTS), metavar="NAME")
    training_flags(p)

    p = command("eval", "Chamfer-L1, normal error, PSNR and SSIM of a trained scene", cmd_eval)
    p.add_argument("--scene", required=True, metavar="PATH", help="trained .cspl or train output directory")
    p.add_argument("--data", metavar="DIR", help="bundle with ground truth (default: recorded by train)")
    p.add_argument("--env", metavar="PATH")

    p = command("ablate", "train several routing variants and tabulate their metrics", cmd_ablate)
    p.add_argument("--variants", default="noclay,ptr+smooth", metavar="LIST")
    p.add_argument("--scene", metavar="PATH", help="bundle directory (default: mirror-sphere fixture)")
    p.add_argument("--views", type=int, metavar="N")
    p.add_argument("--res", type=int, metavar="N")
    training_flags(p)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    try:
        apply_thread_limit()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        written, config, extra = args.func(args, out)
        seed = getattr(args, "seed", None)
        if config is not None:
            seed = config.seed
        write_manifest(out, args.command, argv, written, config.to_dict() if config else None, seed, extra)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"claysplat: error: {err}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as err:
        print(f"claysplat {args.command}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
