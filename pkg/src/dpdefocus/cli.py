"""Command-line drivers: synth, estimate-coc, fit, deblur, eval, crop.

Exit codes form a stable scripting contract: 0 success, 2 I/O failure,
3 validation failure (also a starved branch during fit), 4 fit did not
converge within the outer-iteration cap (outputs are still written).
``DPDEFOCUS_THREADS`` bounds the worker count for per-row manifest work.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .branches import branch_outputs, deblur, default_branch_set, fuse_input
from .cocest import colorize_coc, estimate_coc
from .config import Manifest, ManifestRow, RunConfig, load_manifest, load_run_config, save_manifest
from .dppsf import DpPair, render_dp_pair
from .imgcore import UnsupportedFormatError, load_image, load_pfm, save_image, save_pfm
from .maskgen import (
    Scene,
    ThresholdSet,
    load_model,
    save_history_csv,
    save_model,
    search_thresholds,
    uniform_thresholds,
)
from .metrics import mae, psnr, residual_map, ssim, to_gray
from .thinlens import depth_to_coc_map, load_camera_config

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NO_CONVERGE = 4


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DPDEFOCUS_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _load_config(path) -> RunConfig:
    return load_run_config(path) if path else RunConfig()


def cmd_synth(args) -> int:
    camera = load_camera_config(args.camera)
    sharp = load_image(args.sharp)
    depth = load_pfm(args.depth)
    coc = depth_to_coc_map(depth, camera)
    pair = render_dp_pair(sharp, coc)
    left, right = pair.left, pair.right
    if args.noise_sigma > 0:
        rng = np.random.default_rng(args.seed)
        left = np.clip(left + rng.normal(0.0, args.noise_sigma, left.shape), 0, 1).astype(np.float32)
        right = np.clip(right + rng.normal(0.0, args.noise_sigma, right.shape), 0, 1).astype(np.float32)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(left, out / "left.png", args.bit_depth)
    save_image(right, out / "right.png", args.bit_depth)
    save_image(fuse_input(DpPair(left, right)), out / "fused.png", args.bit_depth)
    save_pfm(coc, out / "coc.pfm")
    print(f"wrote {out}/left.png {out}/right.png {out}/fused.png {out}/coc.pfm")
    return EXIT_OK


def cmd_estimate_coc(args) -> int:
    cfg = _load_config(args.config)
    est_cfg = cfg.estimation
    if args.lam is not None:
        est_cfg = replace(est_cfg, lam=args.lam)
    pair = DpPair(load_image(args.left), load_image(args.right))
    coc, confidence = estimate_coc(pair, est_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_pfm(coc, out / "coc.pfm")
    save_pfm(confidence, out / "confidence.pfm")
    max_radius = max(abs(c) for c in est_cfg.candidates)
    save_image(colorize_coc(coc, max_radius), out / "preview.png", 8)
    print(f"wrote {out}/coc.pfm {out}/confidence.pfm {out}/preview.png")
    return EXIT_OK


def _load_scene(row: ManifestRow, cfg: RunConfig) -> Scene:
    pair = DpPair(load_image(row.left), load_image(row.right))
    if row.target is None:
        raise ValueError(f"fit requires a target for {row.left}")
    sharp = load_image(row.target)
    if row.depth is not None:
        if cfg.camera is None:
            raise ValueError("manifest has depth maps but the config has no [camera] section")
        coc = depth_to_coc_map(load_pfm(row.depth), cfg.camera)
    else:
        warnings.warn(
            f"no depth for {row.left}; falling back to estimated COC "
            "(threshold accuracy claims are void)",
            RuntimeWarning,
            stacklevel=2,
        )
        coc, _ = estimate_coc(pair, cfg.estimation)
    return Scene(pair, sharp, coc)


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    train_rows = load_manifest(args.train).rows
    val_rows = load_manifest(args.val).rows
    trainset = _pmap(lambda r: _load_scene(r, cfg), train_rows)
    valset = _pmap(lambda r: _load_scene(r, cfg), val_rows)
    if cfg.thresholds is not None:
        init = ThresholdSet(cfg.thresholds)
    else:
        init = uniform_thresholds(cfg.n_branches)
    result = search_thresholds(trainset, valset, default_branch_set(init),
                               max_outer=args.max_outer)
    save_model(result.branches, args.out)
    history_path = args.history or (str(args.out) + ".history.csv")
    save_history_csv(result.history, result.branches.n_branches, history_path)
    print(f"wrote {args.out} and {history_path}")
    print(f"thresholds: {', '.join(f'{b:g}' for b in result.thresholds.bounds)}")
    starved = any(row.starved for row in result.history)
    if not result.converged:
        print("fit did not converge within the iteration cap", file=sys.stderr)
        return EXIT_NO_CONVERGE
    if starved:
        print("one or more branches received no training pixels", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_deblur(args) -> int:
    model = load_model(args.model)
    pair = DpPair(load_image(args.left), load_image(args.right))
    cfg = _load_config(args.config)
    if args.coc:
        coc = load_pfm(args.coc)
    else:
        coc, _ = estimate_coc(pair, cfg.estimation)
    subset = None
    if args.no_masks:
        subset = [model.n_branches]
    elif args.branches:
        subset = [int(tok) for tok in args.branches.split(",")]
    out = deblur(pair, coc, model, args.feather_sigma, subset=subset)
    save_image(out, args.out, args.bit_depth)
    print(f"wrote {args.out}")
    if args.dump_branches:
        dump = Path(args.dump_branches)
        dump.mkdir(parents=True, exist_ok=True)
        for branch, img in zip(model.branches, branch_outputs(pair, coc, model)):
            save_image(img, dump / f"branch{branch.index}.png", args.bit_depth)
        print(f"wrote per-branch outputs to {dump}")
    return EXIT_OK


def cmd_eval(args) -> int:
    result = load_image(args.result)
    truth = load_image(args.truth)
    print(f"psnr={psnr(result, truth):.4f}")
    print(f"ssim={ssim(result, truth):.4f}")
    print(f"mae={mae(result, truth):.4f}")
    if args.residual:
        save_image(residual_map(result, truth, args.gain), args.residual, 8)
        print(f"wrote {args.residual}")
    return EXIT_OK


def _crop_positions(extent: int, size: int, stride: int):
    positions = list(range(0, max(extent - size, 0) + 1, stride))
    last = extent - size
    if last >= 0 and positions[-1] != last:
        positions.append(last)
    return positions


def cmd_crop(args) -> int:
    cfg = _load_config(args.config)
    manifest = load_manifest(args.manifest)
    size = cfg.crop_size
    stride = max(1, round(size * (1.0 - cfg.crop_overlap)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def row_crops(item):
        idx, row = item
        left = load_image(row.left)
        right = load_image(row.right)
        target = load_image(row.target) if row.target else None
        depth = load_pfm(row.depth) if row.depth else None
        h, w = left.shape[:2]
        if size > min(h, w):
            raise ValueError(f"crop size {size} exceeds image extent {(h, w)}")
        crops = []
        for y in _crop_positions(h, size, stride):
            for x in _crop_positions(w, size, stride):
                window = (slice(y, y + size), slice(x, x + size))
                score_src = target if target is not None else fuse_input(DpPair(left, right))
                sharpness = float(ndimage.laplace(to_gray(score_src[window]), mode="reflect").var())
                crops.append((sharpness, idx, y, x, left[window], right[window],
                              None if target is None else target[window],
                              None if depth is None else depth[window]))
        return crops

    all_crops = [c for crops in _pmap(row_crops, enumerate(manifest.rows)) for c in crops]
    all_crops.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))
    keep = all_crops[: max(1, int(round(len(all_crops) * (1.0 - cfg.crop_discard))))]

    rows = []
    for n, (_, idx, y, x, left, right, target, depth) in enumerate(keep):
        stem = f"crop{n:05d}"
        save_image(left, out / f"{stem}_l.png", 16)
        save_image(right, out / f"{stem}_r.png", 16)
        target_path = depth_path = None
        if target is not None:
            target_path = out / f"{stem}_t.png"
            save_image(target, target_path, 16)
        if depth is not None:
            depth_path = out / f"{stem}_d.pfm"
            save_pfm(depth, depth_path)
        rows.append(ManifestRow(out / f"{stem}_l.png", out / f"{stem}_r.png",
                                target_path, depth_path))
    save_manifest(Manifest(rows, out), out / "manifest.csv")
    print(f"wrote {len(rows)} crops to {out} (of {len(all_crops)} windows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpdefocus",
        description="Dual-pixel defocus toolkit: simulate DP pairs, estimate "
                    "signed COC maps, fit defocus-mask thresholds, deblur.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a DP pair from a sharp image and a depth map")
    p.add_argument("--sharp", required=True, help="sharp source image (PNG/PFM)")
    p.add_argument("--depth", required=True, help="depth map in millimeters (PFM)")
    p.add_argument("--camera", required=True, help="camera key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bit-depth", type=int, default=16, choices=(8, 16))
    p.add_argument("--noise-sigma", type=float, default=0.0, help="additive Gaussian noise")
    p.add_argument("--seed", type=int, default=0, help="noise RNG seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate-coc", help="estimate the signed COC map of a DP pair")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="override the smoothing weight")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_estimate_coc)

    p = sub.add_parser("fit", help="learn defocus-mask thresholds and branch parameters")
    p.add_argument("--train", required=True, help="training manifest CSV")
    p.add_argument("--val", required=True, help="validation manifest CSV")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--history", help="history CSV path (default: <model>.history.csv)")
    p.add_argument("--max-outer", type=int, default=10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("deblur", help="deblur a DP pair with a fitted model")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--model", required=True, help="model file from 'fit'")
    p.add_argument("--coc", help="signed COC map (PFM); estimated when omitted")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--bit-depth", type=int, default=16, choices=(8, 16))
    p.add_argument("--feather-sigma", type=float, default=2.0,
                   help="defocus mask feathering (0 for hard masks)")
    p.add_argument("--branches", help="comma-separated 1-based branch subset (ablation)")
    p.add_argument("--no-masks", action="store_true",
                   help="route every pixel to the heaviest branch")
    p.add_argument("--dump-branches", metavar="DIR",
                   help="also write each branch's intermediate output here")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="print PSNR/SSIM/MAE of a result against ground truth")
    p.add_argument("--result", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--residual", help="write the gain-amplified residual map here")
    p.add_argument("--gain", type=float, default=10.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crop", help="experimental: overlapping crops, most homogeneous discarded")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_crop)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UnsupportedFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
