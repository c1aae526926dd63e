"""Command-line interface.

Subcommands map onto the library modules: estimate-stains, transform,
mask, patches, augment, stats, score, montage and bench. Every run
writes a RunManifest next to its outputs recording the command, a
config digest and the seed, so batches can be reproduced exactly.
Stochastic subcommands require an explicit --seed; directories are
processed in lexicographic filename order.

Exit codes: 0 success, 1 operation error (the error class name goes to
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .augmentation import AugmentationConfig, Sample, augment_sample
from .errors import ConfigError, StainkitError
from .image_io import IMAGE_EXTENSIONS, list_images, load_image, save_image
from .metrics import (
    DetectionReport,
    build_report,
    detection_scores,
    match_objects,
    write_report_csv,
    write_report_json,
)
from .rng import derive_rng
from .stain_estimation import (
    MacenkoParams,
    estimate_stain_profile,
    load_stain_profile,
    save_stain_profile,
)
from .stain_math import StainMatrix, load_stain_matrix, preset_matrix
from .synthetic import synth_patch
from .tissue_patching import (
    AnnotationSet,
    dataset_stats,
    extract_glomerulus_patches,
    sample_tissue_patches,
    tissue_mask,
)
from .transforms import (
    ChannelPermutation,
    channel_swap,
    colour_transfer,
    extract_haematoxylin,
    to_greyscale,
)

TRANSFORM_MODES = ("greyscale", "haematoxylin", "channel-swap", "colour-transfer")


def _digest(payload) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _write_manifest(target, command, config_payload, seed, inputs, outputs, started):
    target = Path(target)
    if target.suffix:
        path = target.with_name(target.name + ".manifest.json")
    else:
        target.mkdir(parents=True, exist_ok=True)
        path = target / "run_manifest.json"
    doc = {
        "command": command,
        "tool_version": __version__,
        "config_digest": _digest(config_payload),
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.perf_counter() - started, 3),
        "created": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _load_matrix_arg(spec: str) -> StainMatrix:
    if Path(spec).is_file():
        return load_stain_matrix(spec)
    return preset_matrix(spec)


def _load_annotations(path) -> AnnotationSet:
    """Annotation document (JSON polygons) or labelled-object raster."""
    path = Path(path)
    if path.suffix.lower() in IMAGE_EXTENSIONS:
        return AnnotationSet.from_labelled_raster(load_image(path).astype(np.int64))
    return AnnotationSet.load(path)


def _iter_io_pairs(input_path: Path, output_path: Path):
    """(source, destination) pairs for a file or a directory of images."""
    if input_path.is_dir():
        sources = list_images(input_path)
        if not sources:
            raise ConfigError(f"no images found in {input_path}")
        output_path.mkdir(parents=True, exist_ok=True)
        return [(src, output_path / src.name) for src in sources]
    if output_path.suffix:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        return [(input_path, output_path)]
    output_path.mkdir(parents=True, exist_ok=True)
    return [(input_path, output_path / input_path.name)]


# --------------------------------------------------------------------------
# subcommands


def cmd_estimate_stains(args) -> int:
    started = time.perf_counter()
    params = MacenkoParams(
        od_threshold=args.od_threshold,
        angle_percentile=args.angle_percentile,
        concentration_percentile=args.concentration_percentile,
        min_tissue_pixels=args.min_tissue_pixels,
    )
    profile = estimate_stain_profile(load_image(args.input), params)
    save_stain_profile(args.output, profile)
    _write_manifest(
        Path(args.output), "estimate-stains", profile.to_dict(), None,
        [args.input], [args.output], started,
    )
    return 0


def cmd_transform(args) -> int:
    started = time.perf_counter()
    pairs = _iter_io_pairs(Path(args.input), Path(args.output))
    config_payload = {"mode": args.mode}

    matrix = target = source = fixed_perm = None
    if args.mode == "haematoxylin":
        matrix = _load_matrix_arg(args.matrix)
        config_payload["matrix"] = matrix.to_dict()
    elif args.mode == "channel-swap":
        if args.perm is None and args.seed is None:
            raise ConfigError("channel-swap needs --perm or --seed")
        if args.perm is not None:
            fixed_perm = ChannelPermutation(tuple(int(x) for x in args.perm.split(",")))
            config_payload["perm"] = list(fixed_perm.mapping)
        else:
            config_payload["seed"] = args.seed
    elif args.mode == "colour-transfer":
        if args.target_profile is None:
            raise ConfigError("colour-transfer needs --target-profile")
        target = load_stain_profile(args.target_profile)
        source = load_stain_profile(args.source_profile) if args.source_profile else None
        config_payload["target_profile"] = target.to_dict()
        config_payload["source_profile"] = source.to_dict() if source else "per-patch"

    outputs = []
    for index, (src, dst) in enumerate(pairs):
        image = load_image(src)
        if args.mode == "greyscale":
            result = to_greyscale(image)
        elif args.mode == "haematoxylin":
            result = extract_haematoxylin(image, matrix)
        elif args.mode == "channel-swap":
            swap = fixed_perm or ChannelPermutation.random(derive_rng(args.seed, index))
            result = channel_swap(image, swap)
        else:
            src_profile = source if source is not None else estimate_stain_profile(image)
            result = colour_transfer(image, src_profile, target)
        save_image(dst, result)
        outputs.append(dst)

    _write_manifest(
        Path(args.output), "transform", config_payload, args.seed,
        [src for src, _ in pairs], outputs, started,
    )
    return 0


def cmd_mask(args) -> int:
    started = time.perf_counter()
    mask = tissue_mask(load_image(args.input), args.min_object_px, not args.no_fill_holes)
    save_image(args.output, mask.astype(np.uint8) * 255)
    _write_manifest(
        Path(args.output), "mask",
        {"min_object_px": args.min_object_px, "fill_holes": not args.no_fill_holes},
        None, [args.input], [args.output], started,
    )
    return 0


def _save_samples(samples, names, out_dir: Path):
    image_dir = out_dir / "images"
    mask_dir = out_dir / "masks"
    outputs = []
    for name, sample in zip(names, samples):
        image_path = image_dir / name
        mask_path = mask_dir / name
        save_image(image_path, sample.image)
        save_image(mask_path, sample.mask)
        outputs.extend([image_path, mask_path])
    return outputs


def cmd_patches(args) -> int:
    started = time.perf_counter()
    slide = load_image(args.slide)
    annotations = _load_annotations(args.annotations) if args.annotations else AnnotationSet([])
    out_dir = Path(args.output)
    config_payload = {"mode": args.mode, "size": args.size}

    if args.mode == "glomeruli":
        samples = extract_glomerulus_patches(slide, annotations, args.size)
        names = [f"glomerulus_{obj.id:06d}.png" for obj in annotations]
    else:
        if args.seed is None:
            raise ConfigError("tissue sampling needs --seed")
        if args.mask_file:
            mask = load_image(args.mask_file) > 0
        else:
            mask = tissue_mask(slide, args.min_object_px)
        samples = sample_tissue_patches(
            slide, mask, annotations, args.n, args.size,
            derive_rng(args.seed), exclude_overlap=args.exclude_overlap,
        )
        names = [f"tissue_{i:06d}.png" for i in range(len(samples))]
        config_payload.update({"n": args.n, "exclude_overlap": args.exclude_overlap})

    outputs = _save_samples(samples, names, out_dir)
    _write_manifest(
        out_dir, "patches", config_payload, args.seed,
        [args.slide] + ([args.annotations] if args.annotations else []), outputs, started,
    )
    print(f"wrote {len(samples)} patches to {out_dir}")
    return 0


def cmd_augment(args) -> int:
    started = time.perf_counter()
    cfg = AugmentationConfig.load(args.config)
    image_dir = Path(args.images)
    image_paths = list_images(image_dir)
    if not image_paths:
        raise ConfigError(f"no images found in {image_dir}")
    mask_dir = Path(args.masks) if args.masks else None
    out_dir = Path(args.output)

    def run_one(index_path):
        index, path = index_path
        image = load_image(path)
        if mask_dir is not None:
            mask = load_image(mask_dir / path.name)
        else:
            mask = np.zeros(image.shape[:2], dtype=np.uint8)
        sample = Sample(image, mask)
        out = augment_sample(sample, cfg, derive_rng(args.seed, args.start_index + index))
        image_path = out_dir / "images" / path.name
        mask_path = out_dir / "masks" / path.name
        save_image(image_path, out.image)
        save_image(mask_path, out.mask)
        return [image_path, mask_path]

    jobs = list(enumerate(image_paths))
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(job) for job in jobs]
    outputs = [p for pair in results for p in pair]

    _write_manifest(
        out_dir, "augment", cfg.to_dict(), args.seed,
        [str(p) for p in image_paths], outputs, started,
    )
    print(f"augmented {len(image_paths)} samples with seed {args.seed}")
    return 0


def cmd_stats(args) -> int:
    started = time.perf_counter()
    paths = list_images(Path(args.input))
    stats = dataset_stats([load_image(p) for p in paths])
    Path(args.output).write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    _write_manifest(
        Path(args.output), "stats", {"n_patches": len(paths)}, None,
        [str(p) for p in paths], [args.output], started,
    )
    return 0


def _score_pairs(pred_path: Path, truth_path: Path):
    if pred_path.is_dir():
        pairs = []
        for pred_file in list_images(pred_path):
            candidates = [truth_path / (pred_file.stem + ext) for ext in (".json", *IMAGE_EXTENSIONS)]
            truth_file = next((c for c in candidates if c.is_file()), None)
            if truth_file is None:
                raise ConfigError(f"no annotation document for {pred_file.name}")
            pairs.append((pred_file.stem, pred_file, truth_file))
        if not pairs:
            raise ConfigError(f"no prediction masks found in {pred_path}")
        return pairs
    return [(pred_path.stem, pred_path, truth_path)]


def cmd_score(args) -> int:
    started = time.perf_counter()
    pairs = _score_pairs(Path(args.pred), Path(args.truth))
    slide_counts = {}
    for name, pred_file, truth_file in pairs:
        pred = load_image(pred_file)
        truth = _load_annotations(truth_file)
        slide_counts[name] = match_objects(pred, truth, args.iou, args.match)
    report = build_report(slide_counts, args.aggregation)
    if len(slide_counts) > 1:
        # informational spread across slides, alongside the headline scores
        per_slide = [detection_scores(c) for c in slide_counts.values()]
        values = {
            "precision": [s.precision for s in per_slide],
            "recall": [s.recall for s in per_slide],
            "f1": [s.f1 for s in per_slide],
        }
        report = DetectionReport(
            report.slides, report.precision, report.recall, report.f1,
            aggregation=report.aggregation,
            mean={k: float(np.mean(v)) for k, v in values.items()},
            std={k: float(np.std(v)) for k, v in values.items()},
        )

    config_echo = {
        "iou_threshold": args.iou,
        "match_mode": args.match,
        "aggregation": args.aggregation,
    }
    write_report_json(args.output, report, config_echo)
    outputs = [args.output]
    if args.csv:
        write_report_csv(args.csv, report)
        outputs.append(args.csv)
    if args.figure:
        _render_score_figure(args.figure, report)
        outputs.append(args.figure)
    _write_manifest(
        Path(args.output), "score", config_echo, None,
        [args.pred, args.truth], outputs, started,
    )
    print(
        f"precision={report.precision:.3f} recall={report.recall:.3f} f1={report.f1:.3f}"
    )
    return 0


def _render_score_figure(path, report) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = ("precision", "recall", "f1")
    values = [getattr(report, n) for n in names]
    errors = [report.std[n] for n in names] if report.std else None
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(names, values, yerr=errors, capsize=4, color=["#4C72B0", "#55A868", "#C44E52"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    for x, v in enumerate(values):
        ax.text(x, min(v + 0.03, 1.0), f"{v:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


_DEMO_STAINS = (
    ("h-e", None),
    ("h-dab", None),
    ("custom-a", ((0.55, 0.76, 0.35), (0.32, 0.55, 0.77))),
    ("custom-b", ((0.70, 0.62, 0.35), (0.10, 0.86, 0.50))),
    ("custom-c", ((0.62, 0.70, 0.35), (0.45, 0.21, 0.87))),
)


def _demo_patches(n: int, size: int, seed: int):
    patches = []
    for k in range(n):
        name, vectors = _DEMO_STAINS[k % len(_DEMO_STAINS)]
        if vectors is None:
            matrix = preset_matrix(name)
        else:
            matrix = StainMatrix(np.asarray(vectors), ("haematoxylin", "secondary"))
        image, _ = synth_patch(matrix, size, derive_rng(seed, k))
        patches.append((name, image))
    return patches


def cmd_montage(args) -> int:
    started = time.perf_counter()
    if args.demo:
        if args.seed is None:
            raise ConfigError("montage --demo needs --seed")
        patches = _demo_patches(args.demo, args.size, args.seed)
        inputs = []
    else:
        if not args.input:
            raise ConfigError("montage needs --input or --demo")
        paths = list_images(Path(args.input)) if Path(args.input).is_dir() else [Path(args.input)]
        patches = [(p.stem, load_image(p)) for p in paths]
        inputs = [str(p) for p in paths]
    if not patches:
        raise ConfigError("no patches for the montage")

    he = preset_matrix("h-e")
    profiles = [estimate_stain_profile(image) for _, image in patches]
    rows = [
        ("original", [image for _, image in patches]),
        ("greyscale", [to_greyscale(image) for _, image in patches]),
        ("haematoxylin", [extract_haematoxylin(image, he) for _, image in patches]),
        (
            "colour transfer",
            [
                colour_transfer(patches[0][1], profiles[0], target)
                for target in profiles
            ],
        ),
    ]

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_cols = len(patches)
    fig, axes = plt.subplots(4, n_cols, figsize=(2.2 * n_cols, 9.2), squeeze=False)
    for r, (row_name, images) in enumerate(rows):
        for c, image in enumerate(images):
            ax = axes[r][c]
            if image.ndim == 2:
                ax.imshow(image, cmap="gray", vmin=0, vmax=255)
            else:
                ax.imshow(image)
            ax.set_xticks(())
            ax.set_yticks(())
            if r == 0:
                ax.set_title(patches[c][0], fontsize=9)
            if c == 0:
                ax.set_ylabel(row_name, fontsize=9)
    fig.tight_layout()
    fig.savefig(args.output, dpi=130)
    plt.close(fig)

    _write_manifest(
        Path(args.output), "montage",
        {"demo": args.demo, "columns": [name for name, _ in patches]},
        args.seed, inputs, [args.output], started,
    )
    return 0


def cmd_bench(args) -> int:
    started = time.perf_counter()
    cfg = AugmentationConfig.load(args.config) if args.config else AugmentationConfig()
    image, mask = synth_patch(cfg.stain_matrix, args.size, derive_rng(args.seed))
    sample = Sample(image, mask)

    latencies = []
    for i in range(args.n):
        t0 = time.perf_counter()
        augment_sample(sample, cfg, derive_rng(args.seed, i))
        latencies.append(time.perf_counter() - t0)
    total = sum(latencies)
    latencies_ms = np.sort(np.array(latencies) * 1000.0)
    report = {
        "command": "bench",
        "samples": args.n,
        "patch_size": args.size,
        "seed": args.seed,
        "config_digest": _digest(cfg.to_dict()),
        "samples_per_sec": round(args.n / total, 3),
        "p50_ms": round(float(np.percentile(latencies_ms, 50)), 3),
        "p99_ms": round(float(np.percentile(latencies_ms, 99)), 3),
        "total_s": round(total, 3),
    }
    text = json.dumps(report, indent=2)
    print(text)
    if args.output:
        Path(args.output).write_text(text + "\n")
        _write_manifest(
            Path(args.output), "bench", cfg.to_dict(), args.seed, [], [args.output], started
        )
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stainkit",
        description="Stain-aware preprocessing, augmentation and scoring for WSI patches.",
    )
    parser.add_argument("--version", action="version", version=f"stainkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-stains", help="estimate a stain profile from an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--od-threshold", type=float, default=0.15)
    p.add_argument("--angle-percentile", type=float, default=1.0)
    p.add_argument("--concentration-percentile", type=float, default=99.0)
    p.add_argument("--min-tissue-pixels", type=int, default=1000)
    p.set_defaults(func=cmd_estimate_stains)

    p = sub.add_parser("transform", help="apply a stain-strategy transform")
    p.add_argument("--mode", required=True, choices=TRANSFORM_MODES)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--output", required=True, help="image file or directory")
    p.add_argument("--matrix", default="h-e", help="preset name or stain-matrix file")
    p.add_argument("--perm", help="channel permutation such as 2,1,0")
    p.add_argument("--seed", type=int, help="seed for random channel permutations")
    p.add_argument("--source-profile", help="profile file (default: estimate per patch)")
    p.add_argument("--target-profile", help="profile file for colour transfer")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("mask", help="tissue/background mask for a slide image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-object-px", type=int, default=500)
    p.add_argument("--no-fill-holes", action="store_true")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("patches", help="extract glomerulus or tissue patches")
    p.add_argument("--slide", required=True)
    p.add_argument("--annotations", help="annotation document (JSON) or labelled-object raster")
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("glomeruli", "tissue"), default="glomeruli")
    p.add_argument("--size", type=int, default=508)
    p.add_argument("--n", type=int, default=0, help="tissue patches to sample")
    p.add_argument("--seed", type=int)
    p.add_argument("--mask-file", help="precomputed tissue mask PNG")
    p.add_argument("--min-object-px", type=int, default=500)
    p.add_argument("--exclude-overlap", action="store_true")
    p.set_defaults(func=cmd_patches)

    p = sub.add_parser("augment", help="augment an image/mask tree")
    p.add_argument("--config", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--masks")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--start-index", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("stats", help="training-set mean/std over a patch directory")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score", help="object-level precision/recall/F1")
    p.add_argument("--pred", required=True, help="prediction mask file or directory")
    p.add_argument("--truth", required=True,
                   help="annotation document, labelled raster, or directory of either")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--match", choices=("iou", "centroid"), default="iou")
    p.add_argument("--aggregation", choices=("pooled", "per_slide"), default="pooled")
    p.add_argument("--output", required=True)
    p.add_argument("--csv")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("montage", help="grid of originals and transformed versions")
    p.add_argument("--input", help="patch file or directory")
    p.add_argument("--demo", type=int, help="render N bundled synthetic patches instead")
    p.add_argument("--size", type=int, default=256, help="demo patch size")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_montage)

    p = sub.add_parser("bench", help="augmentation throughput on synthetic patches")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--size", type=int, default=508)
    p.add_argument("--config")
    p.add_argument("--output")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StainkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
