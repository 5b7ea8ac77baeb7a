"""Command-line entry point: synthesize, align, train, infer, evaluate.

Exit codes: 0 success, 1 user error (bad flags, paths, or configuration),
2 internal failure.  Every command prints its resolved configuration, and
every randomized command takes ``--seed``.  The compute device comes from
the ``DARKDEBLUR_DEVICE`` environment variable (default ``cpu``).
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import images
from .blursynth import SynthConfig, make_rng, synthesize_pair
from .data import (AlignmentError, EmptyDatasetError, align_pair,
                   iterate_pairs, load_manifest)
from .losses import ExtractorUnavailableError
from .metrics import evaluate, render_table
from .training import (TrainConfig, _config_from_dict, load_generator, train)

log = logging.getLogger("darkdeblur")

# problems the user can fix by changing flags, paths, or config values
USER_ERRORS = (ValueError, FileNotFoundError, NotADirectoryError,
               EmptyDatasetError, ExtractorUnavailableError)


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad usage; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _device():
    return os.environ.get("DARKDEBLUR_DEVICE", "cpu")


def _print_resolved(name, settings):
    print(f"resolved config [{name}]:")
    for key in sorted(settings):
        print(f"  {key} = {settings[key]}")


def parse_config_value(text):
    """Scalar parser for the flat key=value config format."""
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    if "," in text:
        return tuple(parse_config_value(part) for part in text.split(","))
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_config_file(path):
    """Flat ``key = value`` lines; '#' comments; dotted keys reach nested
    fields (e.g. ``generator.dense_growth = 8``)."""
    settings = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        settings[key.strip()] = parse_config_value(value)
    return settings


def _apply_dotted(payload, settings):
    for key, value in settings.items():
        target = payload
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ValueError(f"unknown config section {key!r}")
            target = target[part]
        if parts[-1] not in target:
            raise ValueError(f"unknown config key {key!r}")
        target[parts[-1]] = value
    return payload


def build_train_config(config_path=None, **flag_overrides):
    """Defaults <- config file <- command-line flags, in that order."""
    payload = dataclasses.asdict(TrainConfig())
    if config_path is not None:
        _apply_dotted(payload, read_config_file(config_path))
    for key, value in flag_overrides.items():
        if value is not None:
            payload[key] = value
    return _config_from_dict(payload)


def _build_synth_config(config_path, seed):
    payload = dataclasses.asdict(SynthConfig())
    if config_path is not None:
        settings = read_config_file(config_path)
        # accept either bare synth keys or the train-config spelling
        flat = {}
        for key, value in settings.items():
            if key.startswith("synth."):
                flat[key.split(".", 1)[1]] = value
            elif "." not in key:
                flat[key] = value
        unknown = set(flat) - set(payload)
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        payload.update(flat)
    if seed is not None:
        payload["seed"] = seed
    return SynthConfig(**payload)


def _save_kernel_png(path, kernel):
    from PIL import Image
    scaled = kernel.weights / kernel.weights.max() if kernel.weights.max() > 0 \
        else kernel.weights
    u8 = np.rint(scaled * 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u8, mode="L").save(path)


def cmd_synthesize(args):
    cfg = _build_synth_config(args.config, args.seed)
    in_dir = Path(getattr(args, "in"))
    out_dir = Path(args.out)
    _print_resolved("synthesize", {**dataclasses.asdict(cfg),
                                   "in": in_dir, "out": out_dir,
                                   "save_kernels": args.save_kernels})
    sources = images.list_images(in_dir)
    if not sources:
        raise EmptyDatasetError(f"no images found in {in_dir}")

    failures = 0
    for index, src in enumerate(sources):
        try:
            sharp = images.load_image(src)
            result = synthesize_pair(sharp, cfg, make_rng(cfg.seed, index))
        except Exception as exc:  # noqa: BLE001 - per-image isolation
            log.warning("failed to synthesize %s: %s", src.name, exc)
            failures += 1
            continue
        name = src.stem + ".png"
        images.save_image(out_dir / "blur" / name, result.blurry)
        images.save_image(out_dir / "sharp" / name, result.sharp)
        if args.save_kernels:
            _save_kernel_png(out_dir / "kernels" / name, result.kernel)
    if failures == len(sources):
        raise RuntimeError("all images failed to synthesize")
    print(f"synthesized {len(sources) - failures} pairs into {out_dir}")
    return 0


def _pair_paths(blurry_arg, sharp_arg):
    blurry, sharp = Path(blurry_arg), Path(sharp_arg)
    if blurry.is_dir() != sharp.is_dir():
        raise ValueError("--blurry and --sharp must both be files or both be directories")
    if blurry.is_dir():
        sharp_names = {p.name: p for p in images.list_images(sharp)}
        pairs = [(b, sharp_names[b.name]) for b in images.list_images(blurry)
                 if b.name in sharp_names]
        if not pairs:
            raise EmptyDatasetError("no filename-matched pairs between the directories")
        return pairs
    return [(blurry, sharp)]


def cmd_align(args):
    out_dir = Path(args.out)
    _print_resolved("align", {"blurry": args.blurry, "sharp": args.sharp,
                              "out": out_dir})
    pairs = _pair_paths(args.blurry, args.sharp)
    log_path = out_dir / "alignment_log.jsonl"
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    failures = 0
    with log_path.open("w") as fh:
        for b_path, s_path in pairs:
            try:
                blurry = images.load_image(b_path)
                sharp = images.load_image(s_path)
                b_crop, s_crop, result = align_pair(blurry, sharp)
            except (AlignmentError, OSError, ValueError) as exc:
                log.warning("alignment failed for %s: %s", b_path.name, exc)
                fh.write(json.dumps({"name": b_path.stem, "error": str(exc)},
                                    sort_keys=True) + "\n")
                failures += 1
                continue
            name = b_path.stem + ".png"
            images.save_image(out_dir / "blur" / name, b_crop)
            images.save_image(out_dir / "sharp" / name, s_crop)
            manifest_lines.append(f"blur/{name}\tsharp/{name}")
            fh.write(json.dumps({
                "name": b_path.stem,
                "homography": [round(v, 10) for v in result.homography.ravel()],
                "inlier_count": result.inlier_count,
                "mean_reprojection_error": result.mean_reprojection_error,
                "low_confidence": result.low_confidence,
                "crop_window": list(result.crop_window),
            }, sort_keys=True) + "\n")
    (out_dir / "manifest.tsv").write_text(
        "".join(line + "\n" for line in manifest_lines))
    if failures == len(pairs):
        raise RuntimeError("alignment failed for every pair")
    print(f"aligned {len(pairs) - failures}/{len(pairs)} pairs into {out_dir}")
    return 0


def cmd_train(args):
    cfg = build_train_config(args.config, ablation=args.ablation,
                             total_steps=args.steps, seed=args.seed)
    _print_resolved("train", {**{k: v for k, v in dataclasses.asdict(cfg).items()
                                 if not isinstance(v, dict)},
                              "generator": dataclasses.asdict(cfg.generator),
                              "data": args.data, "out": args.out,
                              "resume": args.resume, "device": _device()})
    trainer = train(cfg, args.data, out_dir=args.out, resume=args.resume,
                    device=_device())
    print(f"trained to step {trainer.step}; artifacts in {args.out}")
    return 0


def cmd_infer(args):
    in_path = Path(getattr(args, "in"))
    out_dir = Path(args.out)
    _print_resolved("infer", {"ckpt": args.ckpt, "in": in_path, "out": out_dir,
                              "device": _device()})
    generator = load_generator(args.ckpt, device=_device())
    paths = images.list_images(in_path) if in_path.is_dir() else [in_path]
    if not paths:
        raise EmptyDatasetError(f"no images found in {in_path}")

    import torch
    failures = 0
    for src in paths:
        try:
            img = images.load_image(src)
            with torch.no_grad():
                out = generator.restore(
                    images.to_tensor(img).unsqueeze(0).to(_device()))
            images.save_image(out_dir / (src.stem + ".png"),
                              images.to_numpy(out[0]))
        except Exception as exc:  # noqa: BLE001 - per-image isolation
            log.warning("inference failed for %s: %s", src.name, exc)
            failures += 1
    if failures == len(paths):
        raise RuntimeError("inference failed for every input image")
    print(f"deblurred {len(paths) - failures}/{len(paths)} images into {out_dir}")
    return 0


def cmd_evaluate(args):
    _print_resolved("evaluate", {"manifest": args.manifest, "ckpt": args.ckpt,
                                 "outputs_dir": args.outputs_dir,
                                 "report": args.report, "dataset": args.dataset,
                                 "method": args.method, "device": _device()})
    if args.ckpt is not None:
        model_or_dir = load_generator(args.ckpt, device=_device())
    elif args.outputs_dir is not None:
        model_or_dir = args.outputs_dir
        if not Path(model_or_dir).is_dir():
            raise NotADirectoryError(f"--outputs-dir {model_or_dir} is not a directory")
    else:
        model_or_dir = None  # score the blurry inputs as-is
    report = evaluate(model_or_dir, iterate_pairs(args.manifest),
                      dataset=args.dataset, method=args.method)
    if args.report is not None:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json() + "\n")
    print(render_table([report]))
    if report.failures:
        print(f"({len(report.failures)} entries failed and were excluded)")
    return 0


def build_parser():
    parser = _Parser(prog="darkdeblur",
                     description="Single-shot low-light image deblurring toolkit")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synthesize", help="create blur/sharp pairs from sharp images")
    p.add_argument("--in", required=True, help="directory of sharp images")
    p.add_argument("--out", required=True, help="output directory (blur/ + sharp/)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="flat key=value synth config")
    p.add_argument("--save-kernels", action="store_true",
                   help="also write kernels as grayscale PNGs")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("align", help="register real blurry/sharp pairs")
    p.add_argument("--blurry", required=True, help="blurry image or directory")
    p.add_argument("--sharp", required=True, help="sharp image or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="sharp dir, pair tree, or manifest")
    p.add_argument("--out", required=True, help="checkpoint/log directory")
    p.add_argument("--config", default=None, help="flat key=value train config")
    p.add_argument("--ablation", choices=["base", "ca", "cg", "full"], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="deblur images with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score outputs against references")
    p.add_argument("--manifest", required=True,
                   help="pair manifest or blur/+sharp/ tree")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--ckpt", default=None, help="run inference, then score")
    group.add_argument("--outputs-dir", default=None,
                       help="score pre-deblurred images matched by filename")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--dataset", default="dataset")
    p.add_argument("--method", default="darkdeblur")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - anything else is an internal failure
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
