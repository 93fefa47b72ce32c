"""Command-line entry point: synth, train, eval, predict, robustness, gradcheck (+ hfe, affinity).

Exit codes: 0 success, 1 verification/metric failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("tamperloc")


class UsageError(Exception):
    pass


def _parse_mix(text: str) -> dict:
    mix = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"bad --mix entry {part!r}; expected kind=weight")
        mix[key.strip()] = float(value)
    return mix


def build_config(args):
    from .config import ConfigError, apply_overrides, load_config, preset

    cfg = preset(args.tiny)
    if args.config:
        cfg = load_config(args.config, cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["paths.out"] = args.out
    if getattr(args, "checkpoint", None):
        overrides["paths.checkpoint"] = args.checkpoint
    if getattr(args, "manifest", None):
        overrides["paths.manifest"] = args.manifest
    for key, attr in (("synth.n", "n"), ("train.epochs", "epochs"), ("train.lr", "lr"),
                      ("train.batch_size", "batch_size"), ("paths.sources", "sources"),
                      ("eval.pixel_mode", "pixel_mode")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "mix", None):
        overrides["synth.mix"] = _parse_mix(args.mix)
    try:
        return apply_overrides(cfg, overrides).resolved()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(cfg) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path_str: str, what: str) -> Path:
    if not path_str:
        raise UsageError(f"no {what} given")
    path = Path(path_str)
    if not path.exists():
        raise FileNotFoundError(f"{what} {path} does not exist")
    return path


def cmd_synth(cfg) -> int:
    from .config import data_root, write_config
    from .synth import generate_dataset, write_builtin_sources

    out = _out_dir(cfg)
    if cfg.paths.sources == "builtin":
        sources = write_builtin_sources(data_root(cfg) / "sources")
    else:
        sources = Path(cfg.paths.sources)
    synth = dataclasses.replace(cfg.synth)
    manifest = generate_dataset(sources, out, synth, seed=cfg.seeds.data)
    write_config(cfg, out / "config.toml")
    counts = {}
    for line in manifest.read_text().splitlines():
        kind = json.loads(line)["kind"]
        counts[kind] = counts.get(kind, 0) + 1
    print(manifest)
    print(" ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def cmd_train(cfg, resume=None) -> int:
    from .config import write_config
    from .training import train

    manifest = _require(cfg.paths.manifest, "manifest")
    out = _out_dir(cfg)
    write_config(cfg, out / "config.toml")
    ckpt = train(manifest, cfg.model, cfg.train, out, resume=resume)
    print(ckpt)
    return EXIT_OK


def cmd_eval(cfg) -> int:
    from .config import write_config
    from .evaluation import evaluate, load_predictor

    predictor = load_predictor(_require(cfg.paths.checkpoint, "checkpoint"), cfg.eval.batch_size)
    report = evaluate(predictor, _require(cfg.paths.manifest, "manifest"), cfg.eval.pixel_mode)
    out = _out_dir(cfg)
    (out / "report.json").write_text(report.to_json())
    write_config(cfg, out / "config.toml")
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_robustness(cfg) -> int:
    from .config import write_config
    from .evaluation import format_robustness, load_predictor, robustness_suite

    predictor = load_predictor(_require(cfg.paths.checkpoint, "checkpoint"), cfg.eval.batch_size)
    rows = robustness_suite(predictor, _require(cfg.paths.manifest, "manifest"), seed=cfg.seeds.data,
                            pixel_mode=cfg.eval.pixel_mode)
    out = _out_dir(cfg)
    text = format_robustness(rows)
    (out / "robustness.tsv").write_text(text)
    write_config(cfg, out / "config.toml")
    print(text, end="")
    return EXIT_OK


def cmd_predict(cfg, image_path: str) -> int:
    from PIL import Image

    from .data import read_rgb, to_tensor, write_gray
    from .evaluation import NetPredictor, load_predictor

    predictor = load_predictor(_require(cfg.paths.checkpoint, "checkpoint"))
    if not isinstance(predictor, NetPredictor):
        raise UsageError("predict needs a trained model checkpoint")
    path = _require(image_path, "image")
    with Image.open(path) as im:
        width, height = im.size
    image = to_tensor(read_rgb(path, predictor.image_size))[None]
    scores, maps = predictor.predict(image)
    soft = Image.fromarray(maps[0].astype(np.float32), "F").resize((width, height), Image.BILINEAR)
    soft_u8 = np.clip(np.rint(np.asarray(soft, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    out = _out_dir(cfg)
    stem = path.stem
    write_gray(out / f"{stem}_mask.png", soft_u8)
    # 128/255 is the first level above 0.5
    write_gray(out / f"{stem}_mask_binary.png", np.where(soft_u8 >= 128, 255, 0).astype(np.uint8))
    print(f"score {scores[0]:.6f}")
    return EXIT_OK


def cmd_gradcheck(cfg, corrupt=None) -> int:
    from .gradcheck import format_results, model_gradcheck
    from .model import TINY_CONFIG

    results = model_gradcheck(TINY_CONFIG.with_overrides(seed=cfg.seeds.init), seed=cfg.seed, corrupt=corrupt)
    print(format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED groups: " + ", ".join(failed))
        return EXIT_FAIL
    print(f"all {len(results)} groups passed")
    return EXIT_OK


def cmd_hfe(cfg, image_path: str, alpha=None) -> int:
    from .data import read_rgb, write_gray
    from .evaluation import normalize_to_uint8
    from .frequency import HighPassSpec, extract_high_frequency

    path = _require(image_path, "image")
    xh = extract_high_frequency(read_rgb(path), HighPassSpec(cfg.model.alpha if alpha is None else alpha))
    out = _out_dir(cfg) / f"{path.stem}_hfe.png"
    write_gray(out, normalize_to_uint8(xh[..., 0]))
    print(out)
    return EXIT_OK


def cmd_affinity(cfg, image_path: str) -> int:
    from .data import read_rgb, to_tensor
    from .evaluation import NetPredictor, export_affinity_maps, load_predictor

    predictor = load_predictor(_require(cfg.paths.checkpoint, "checkpoint"))
    if not isinstance(predictor, NetPredictor):
        raise UsageError("affinity export needs a trained model checkpoint")
    image = to_tensor(read_rgb(_require(image_path, "image"), predictor.image_size))
    for path in export_affinity_maps(predictor.model, image, _out_dir(cfg)):
        print(path)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint")
    common.add_argument("--tiny", action="store_true", help="use the desk-scale tiny preset")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tamperloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic tampering corpus")
    p.add_argument("--n", type=int)
    p.add_argument("--mix", help="e.g. pristine=1.0 or pristine=1,splice=1")
    p.add_argument("--sources", help="directory of source photos, or 'builtin'")

    p = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")

    for name, text in (("eval", "evaluate a checkpoint on a manifest"),
                       ("robustness", "evaluate under the distortion grid")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--manifest")
        p.add_argument("--pixel-mode", choices=("per_image", "pooled"))

    p = sub.add_parser("predict", parents=[common], help="predict a mask for one image")
    p.add_argument("image")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the tiny model")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)

    p = sub.add_parser("hfe", parents=[common], help="dump the high-frequency component as PNG")
    p.add_argument("image")
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("affinity", parents=[common], help="export first-layer affinity maps")
    p.add_argument("image")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "robustness":
            return cmd_robustness(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.image)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, args.corrupt)
        if args.command == "hfe":
            return cmd_hfe(cfg, args.image, args.alpha)
        if args.command == "affinity":
            return cmd_affinity(cfg, args.image)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
