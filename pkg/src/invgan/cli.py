"""Command-line entry points: train, eval, invert, edit, tile, ablate.

Every artifact-producing command writes its outputs plus a manifest.json
into --out: the manifest records the command, the resolved configuration,
seeds, and a sha256 per output file, so a run can be reproduced and its
artifacts verified. Report-style commands write figures next to their
CSV/JSON output. Exit codes: 0 success, 1 runtime failure (one-line
diagnostic on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import parse_config, serialize_config
from .data import DatasetSpec, list_frames, load_dataset, load_image, save_image
from .errors import ConfigError, IntegrityError, UnsupportedOperationError
from .evaluation import metrics_suite, semantic_consistency, train_classifier
from .inversion import (
    composite_images,
    export_latents,
    invert,
    mask_rect,
    reconstruct,
    style_mix,
)
from .plotting import (
    plot_ablation,
    plot_image_strip,
    plot_loss_curves,
    save_image_grid,
    save_pair_grid,
)
from .tiling import (
    deblur_extrapolate,
    save_tile_grid,
    temporal_interpolate,
    tiled_invert,
    tiled_reconstruct,
)
from .training import MODEL_VARIANTS, train

_KIND_ALIASES = {"mnist": "mnist_idx"}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace, outputs, config=None):
    """Record what was run and hashes of what it produced."""
    entries = {}
    for p in sorted(set(Path(o) for o in outputs)):
        entries[str(p.relative_to(out_dir))] = _sha256(p)
    combined = hashlib.sha256(
        json.dumps(entries, sort_keys=True).encode()
    ).hexdigest()
    manifest = {
        "command": command,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "config": config,
        "version": __version__,
        "outputs": entries,
        "artifact_hash": combined,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


_ACQUIRED_LOCKS: list = []


def _out_dir(args) -> Path:
    """Create the output directory and take its single-writer lock."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        os.close(os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY))
    except FileExistsError:
        raise ConfigError(
            f"run directory {out} is locked by another run (remove {lock} if stale)"
        ) from None
    _ACQUIRED_LOCKS.append(lock)
    return out


def _dataset(args, backbone, split: str):
    kind = _KIND_ALIASES.get(args.dataset, args.dataset)
    spec = DatasetSpec(
        kind=kind,
        path=args.data_path,
        resolution=backbone.resolution,
        channels=backbone.channels,
        split=split,
    )
    return load_dataset(spec)


def _collect_image_paths(paths) -> list:
    suffixes = (".png", ".jpg", ".jpeg", ".bmp")
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(q for q in sorted(p.iterdir()) if q.suffix.lower() in suffixes)
        elif p.is_file():
            files.append(p)
        else:
            raise ConfigError(f"image path {p} does not exist")
    if not files:
        raise ConfigError("no image files found")
    return files


def _read_metrics(path: Path) -> list:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def cmd_train(args) -> int:
    config = parse_config(args.config)
    out = _out_dir(args)
    dataset = _dataset(args, config.backbone, "train")
    state = load_checkpoint(args.resume) if args.resume else None
    (out / "config.toml").write_text(serialize_config(config))

    state = train(config, dataset, out_dir=out, state=state)
    ckpt = out / "checkpoint.invgan"
    save_checkpoint(state, ckpt)
    records = _read_metrics(out / "metrics.jsonl")
    curves = plot_loss_curves(records, out / "loss_curves.png")

    outputs = [out / "config.toml", ckpt, curves]
    if (out / "metrics.jsonl").exists():
        outputs.append(out / "metrics.jsonl")
    _write_manifest(out, "train", args, outputs, config=config.to_dict())
    last = records[-1] if records else {}
    print(
        f"trained variant={config.variant} epochs={config.epochs} steps={state.step} "
        f"checkpoint={state.checkpoint_id[:12]} "
        + " ".join(f"{k}={v}" for k, v in last.items() if k.startswith("loss_"))
    )
    return 0


def _eval_figures(state, test_set, out: Path, seed: int) -> list:
    model = state.model
    z = torch.randn(32, model.spec.d_z, generator=torch.Generator().manual_seed(seed))
    with torch.no_grad():
        samples = model.generate(model.map_latent(z))
    originals = test_set.images[:8]
    recons = reconstruct(originals, model)
    return [
        save_image_grid(samples, out / "sample_grid.png", title="prior samples"),
        save_pair_grid(originals, recons, out / "recon_grid.png"),
    ]


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    train_set = _dataset(args, state.config.backbone, "train")
    test_set = _dataset(args, state.config.backbone, "test")
    report = metrics_suite(
        state.model, train_set, test_set, n_samples=args.samples, seed=args.seed
    )
    payload = {"checkpoint_id": state.checkpoint_id, **report.to_dict()}
    if args.semantic:
        matrix = semantic_consistency(state.model, train_set, test_set, seed=args.seed)
        payload["semantic_consistency"] = matrix.tolist()

    report_json = out / "report.json"
    report_json.write_text(json.dumps(payload, indent=2) + "\n")
    report_csv = out / "report.csv"
    with open(report_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in payload.items():
            writer.writerow([key, value])
    outputs = [report_json, report_csv] + _eval_figures(state, test_set, out, args.seed)
    _write_manifest(out, "eval", args, outputs)
    print(
        f"n={report.n_samples} mae={report.mae:.4f} rand_fid={report.rand_fid:.2f} "
        f"rand_rec_fid={report.rand_rec_fid:.2f} ts_rec_fid={report.ts_rec_fid:.2f} "
        f"int_ts_fid={report.int_ts_fid:.2f} images_per_second={report.images_per_second:.0f}"
    )
    return 0


def cmd_invert(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    spec = state.config.backbone
    paths = _collect_image_paths(args.images)
    images = torch.stack([load_image(p, spec.channels, spec.resolution) for p in paths])
    codes = invert(images, state.model)
    latents = out / "latents.bin"
    sidecar = export_latents(
        codes, latents, state.checkpoint_id, sources=[p.name for p in paths]
    )
    _write_manifest(out, "invert", args, [latents, sidecar])
    print(f"inverted {len(paths)} images -> {latents}")
    return 0


def cmd_reconstruct(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    spec = state.config.backbone
    paths = _collect_image_paths(args.images)
    images = torch.stack([load_image(p, spec.channels, spec.resolution) for p in paths])
    recons = reconstruct(images, state.model)
    outputs = []
    for p, rec in zip(paths, recons):
        dest = out / f"recon_{p.stem}.png"
        save_image(rec, dest)
        outputs.append(dest)
    outputs.append(save_pair_grid(images, recons, out / "recon_grid.png"))
    _write_manifest(out, "reconstruct", args, outputs)
    mae = (images - recons).abs().mean().item()
    print(f"reconstructed {len(paths)} images mae={mae:.4f}")
    return 0


def _parse_rect(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("rect must be top,left,height,width")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("rect values must be integers") from exc


def _parse_floats(text: str):
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from exc


def cmd_edit(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    spec = state.config.backbone
    model = state.model
    outputs = []

    if args.action == "inpaint":
        image = load_image(args.image, spec.channels, spec.resolution)
        masked = mask_rect(image, args.rect)
        result = reconstruct(masked, model)
        panels = [image, masked, result]
        labels = ["input", "masked", "inpainted"]
    elif args.action == "merge":
        a = load_image(args.image_a, spec.channels, spec.resolution)
        b = load_image(args.image_b, spec.channels, spec.resolution)
        composite = composite_images(a, b, axis=args.axis, split=args.split)
        result = reconstruct(composite, model)
        panels = [a, b, composite, result]
        labels = ["a", "b", "composite", "merged"]
    else:
        a = load_image(args.image_a, spec.channels, spec.resolution)
        b = load_image(args.image_b, spec.channels, spec.resolution)
        result = style_mix(a, b, args.k, model)
        panels = [a, b, result]
        labels = ["a", "b", f"mix k={args.k}"]

    for panel, label in zip(panels, labels):
        dest = out / f"{label.split()[0].replace('=', '_')}.png"
        save_image(panel, dest)
        outputs.append(dest)
    outputs.append(plot_image_strip(panels, labels, out / "edit_strip.png"))
    _write_manifest(out, f"edit {args.action}", args, outputs)
    print(f"edit {args.action} -> {out}")
    return 0


def cmd_tile(args) -> int:
    state = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    spec = state.config.backbone
    model = state.model
    outputs = []

    if args.action == "reconstruct":
        image = load_image(args.image, spec.channels)
        grid = tiled_invert(image, model)
        recon = tiled_reconstruct(grid, model)
        grid_path = out / "codes.tilegrid"
        save_tile_grid(grid, grid_path, state.checkpoint_id)
        recon_path = out / "reconstruction.png"
        save_image(recon, recon_path)
        strip = plot_image_strip([image, recon], ["input", "tiled recon"], out / "tile_strip.png")
        outputs += [grid_path, recon_path, strip]
        print(f"tiled {grid.n}x{grid.n} grid of {grid.m}px patches -> {recon_path}")
    elif args.action == "deblur":
        image = load_image(args.image, spec.channels)
        results = deblur_extrapolate(image, model, args.alphas, blur_sigma=args.sigma)
        labels = [f"alpha={a:g}" for a in args.alphas]
        for label, res in zip(labels, results):
            dest = out / f"deblur_{label.split('=')[1]}.png"
            save_image(res, dest)
            outputs.append(dest)
        outputs.append(plot_image_strip([image] + results, ["input"] + labels, out / "deblur_strip.png"))
        print(f"deblur sweep over alphas {list(args.alphas)} -> {out}")
    else:
        frame_paths = list_frames(args.frames)
        frames = [load_image(p, spec.channels) for p in frame_paths]
        grids = [tiled_invert(f, model) for f in frames]
        interp = temporal_interpolate(grids, factor=args.factor, window_sigma=args.window_sigma)
        for i, grid in enumerate(interp):
            dest = out / f"frame_{i:04d}.png"
            save_image(tiled_reconstruct(grid, model), dest)
            outputs.append(dest)
        print(f"interpolated {len(frames)} frames -> {len(interp)} at {out}")

    _write_manifest(out, f"tile {args.action}", args, outputs)
    return 0


def cmd_ablate(args) -> int:
    base = parse_config(args.config)
    out = _out_dir(args)
    train_set = _dataset(args, base.backbone, "train")
    test_set = _dataset(args, base.backbone, "test")
    extractor = None
    if train_set.labels is not None:
        extractor = train_classifier(train_set.images, train_set.labels, seed=base.seed)

    rows = []
    for variant in MODEL_VARIANTS:
        config = replace(base, variant=variant)
        run_dir = out / variant
        run_dir.mkdir(parents=True, exist_ok=True)
        state = train(config, train_set, out_dir=run_dir)
        report = metrics_suite(
            state.model,
            train_set,
            test_set,
            n_samples=args.samples,
            seed=base.seed,
            extractor=extractor,
        )
        rows.append({"variant": variant, **report.to_dict()})
        print(f"{variant}: mae={report.mae:.4f} ts_rec_fid={report.ts_rec_fid:.2f}")

    table = out / "ablation.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    mae = {r["variant"]: r["mae"] for r in rows}
    chart = plot_ablation(mae, out / "ablation.png")
    ordered = mae["full"] < mae["augmented_naive"] < mae["naive"]
    outputs = [table, chart] + [out / v / "checkpoint.invgan" for v in MODEL_VARIANTS]
    _write_manifest(out, "ablate", args, outputs, config=base.to_dict())
    print(
        "mae ordering full < augmented_naive < naive: "
        + ("holds" if ordered else "violated")
        + " "
        + " ".join(f"{k}={v:.4f}" for k, v in mae.items())
    )
    return 0


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--dataset",
        default="mnist_idx",
        choices=["mnist", "mnist_idx", "image_folder", "frame_sequence"],
        help="dataset kind (mnist is an alias for mnist_idx)",
    )
    p.add_argument(
        "--data-path",
        default="",
        help="dataset location; falls back to $INVGAN_DATA_DIR",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invgan",
        description="Train, evaluate, and edit with an invertible GAN.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric suite and report figures for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--semantic", action="store_true", help="also run the classifier transfer matrix")
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("invert", help="embed images and export their latent codes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("reconstruct", help="round-trip images through latent space")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("edit", help="latent-space image edits")
    edit_sub = p.add_subparsers(dest="action", required=True)

    e = edit_sub.add_parser("inpaint", help="zero a rectangle and let the model fill it")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--image", required=True)
    e.add_argument("--rect", type=_parse_rect, required=True, help="top,left,height,width")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_edit)

    e = edit_sub.add_parser("merge", help="reconstruct a two-image composite")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--image-a", required=True)
    e.add_argument("--image-b", required=True)
    e.add_argument("--axis", default="width", choices=["width", "height"])
    e.add_argument("--split", type=int, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_edit)

    e = edit_sub.add_parser("stylemix", help="cross two images at a style layer")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--image-a", required=True)
    e.add_argument("--image-b", required=True)
    e.add_argument("--k", type=int, required=True, help="layers taking image-a's code")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_edit)

    p = sub.add_parser("tile", help="patch-grid operations on larger images")
    tile_sub = p.add_subparsers(dest="action", required=True)

    t = tile_sub.add_parser("reconstruct", help="invert and rebuild a large image patchwise")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--image", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tile)

    t = tile_sub.add_parser("deblur", help="latent extrapolation away from a blur")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--image", required=True)
    t.add_argument("--alphas", type=_parse_floats, default=(0.0, 0.5, 1.0))
    t.add_argument("--sigma", type=float, default=2.0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tile)

    t = tile_sub.add_parser("video-interp", help="temporal interpolation of a frame sequence")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--frames", required=True)
    t.add_argument("--factor", type=int, default=2)
    t.add_argument("--window-sigma", type=float, default=1.0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tile)

    p = sub.add_parser("ablate", help="train and compare all model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=500)
    _add_dataset_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        IntegrityError,
        UnsupportedOperationError,
        FloatingPointError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        for lock in _ACQUIRED_LOCKS:
            lock.unlink(missing_ok=True)
        _ACQUIRED_LOCKS.clear()


if __name__ == "__main__":
    sys.exit(main())
