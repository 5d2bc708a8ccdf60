"""Command-line entry point.

Subcommands: align, calibrate-ifsr, train, swap, evaluate, plot, config.
Exit codes: 0 success, 1 usage or bad configuration, 2 missing artifact,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager

import numpy as np
import torch

from . import alignment, calibration, metrics, plotting
from .backbones import (
    BackboneAdapter,
    ResNetBackbone,
    StubBackbone,
    backbone_id,
    load_backbone,
)
from .config import (
    DEFAULT_SEED,
    PRESET_NAMES,
    load_run_settings,
    make_preset,
    show_model_config,
)
from .errors import (
    CheckpointCorrupt,
    CheckpointNotFound,
    ConfigMismatch,
    MissingMargin,
    NonFiniteLoss,
    NonPSDCovariance,
    SwapkitError,
    UnknownConfigKey,
    ZeroVector,
)
from .metrics import EvalAdapters, PerceptualFeatureExtractor, SeededEstimator
from .perceptual import SeededPerceptual
from .pipeline import FaceStore
from .training import (
    CheckpointSwapper,
    MetricsLog,
    Trainer,
    load_generator,
    read_metrics_log,
    run_training,
    swap_faces,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

POSE_STUB_SEED = 101
EXPRESSION_STUB_SEED = 102


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (CheckpointNotFound, CheckpointCorrupt, MissingMargin, FileNotFoundError)):
        return EXIT_MISSING_ARTIFACT
    if isinstance(exc, (ZeroVector, NonPSDCovariance, NonFiniteLoss)):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigMismatch, UnknownConfigKey)):
        return EXIT_USAGE
    if isinstance(exc, (SwapkitError, OSError, ValueError)):
        return EXIT_DATA
    return EXIT_DATA


@contextmanager
def _stage(name: str):
    """Prefix errors with the pipeline stage they came from."""
    try:
        yield
    except SwapkitError as exc:
        exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + tuple(exc.args[1:])
        raise


def resolve_backbone(spec: str, default_resolution: int | None = None) -> BackboneAdapter:
    """`stub[:seed[:res]]`, `resnet[:seed[:res]]`, or a weight archive path."""
    if spec.startswith("stub") or spec.startswith("resnet"):
        parts = spec.split(":")
        kind = parts[0]
        if kind in ("stub", "resnet") and not os.path.exists(spec):
            seed = int(parts[1]) if len(parts) > 1 else (1 if kind == "stub" else 0)
            res = (
                int(parts[2])
                if len(parts) > 2
                else (default_resolution or (64 if kind == "stub" else 112))
            )
            if kind == "stub":
                return StubBackbone(input_resolution=res, seed=seed)
            return ResNetBackbone(input_resolution=res, seed=seed)
    if not os.path.exists(spec):
        raise CheckpointNotFound(f"no backbone archive at {spec}")
    return load_backbone(spec)


def _load_image(path) -> np.ndarray:
    from PIL import Image

    if str(path).lower().endswith(".npy"):
        return np.load(path)
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(str(path)))
    os.makedirs(parent, exist_ok=True)


def _write_image(face: alignment.AlignedFace, path):
    from PIL import Image

    as_u8 = np.round((face.pixels.astype(np.float64) + 1.0) * 127.5).astype(np.uint8)
    _ensure_parent(path)
    Image.fromarray(as_u8).save(path)


def _load_face(path, landmarks_path, resolution, template, template_res) -> alignment.AlignedFace:
    image = _load_image(path)
    sidecar = landmarks_path or (f"{path}.landmarks" if os.path.exists(f"{path}.landmarks") else None)
    if sidecar:
        lms = alignment.read_landmarks(sidecar)
        return alignment.align_face(
            image, lms, resolution, template=template, template_resolution=template_res
        )
    return alignment.resize_face(image, resolution)


def _template_args(args):
    if getattr(args, "template", None):
        return alignment.read_template(args.template)
    return None, alignment.TEMPLATE_RESOLUTION


def cmd_align(args) -> int:
    template, template_res = _template_args(args)
    n_written = 0
    for ident in sorted(os.listdir(args.in_dir)):
        sub = os.path.join(args.in_dir, ident)
        if not os.path.isdir(sub):
            continue
        out_sub = os.path.join(args.out_dir, ident)
        os.makedirs(out_sub, exist_ok=True)
        for name in sorted(os.listdir(sub)):
            if not name.lower().endswith((".png", ".jpg", ".jpeg", ".bmp", ".npy")):
                continue
            src = os.path.join(sub, name)
            with _stage(f"align {ident}/{name}"):
                face = _load_face(src, None, args.resolution, template, template_res)
            stem = os.path.splitext(name)[0]
            _write_image(face, os.path.join(out_sub, f"{stem}.png"))
            n_written += 1
    if n_written == 0:
        from .errors import EmptyDataset

        raise EmptyDataset(f"no images found under {args.in_dir}")
    print(f"aligned {n_written} images into {args.out_dir}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    backbone = resolve_backbone(args.backbone)
    if args.swap_model == "identity":
        swap_model = calibration.identity_pass_through
        model_id = "identity_pass_through"
        resolution = args.resolution or backbone.input_resolution
    elif args.swap_model == "source":
        swap_model = calibration.source_pass_through
        model_id = "source_pass_through"
        resolution = args.resolution or backbone.input_resolution
    else:
        with _stage("load swap model"):
            gen, model_cfg, _ = load_generator(args.swap_model)
        swap_model = CheckpointSwapper(gen, backbone, model_id=os.path.basename(args.swap_model))
        model_id = swap_model.model_id
        resolution = model_cfg.resolution
    store = FaceStore.from_directory(args.data, resolution=resolution)
    rng = np.random.default_rng(args.seed)
    last = args.last if args.last else min(13, backbone.block_count)
    with _stage("collect distances"):
        samples = calibration.collect_distances(
            swap_model, backbone, store, args.n, rng, first=args.first, last=last
        )
    margins = calibration.derive_margins(
        samples, swap_model_id=model_id, backbone_id=backbone_id(backbone)
    )
    eers = calibration.eer_curve(samples)
    _ensure_parent(args.out)
    calibration.write_margins(margins, args.out)
    report_path = args.report or os.path.join(
        os.path.dirname(os.path.abspath(args.out)), "calibration_report.json"
    )
    _ensure_parent(report_path)
    report = calibration.emit_report(samples, margins, eers, report_path)
    figure_paths = []
    if not args.no_figures:
        fig_dir = args.figures or os.path.join(
            os.path.dirname(os.path.abspath(args.out)), "figures"
        )
        figure_paths = plotting.render_calibration_report(report, fig_dir)
    print(f"margins written to {args.out} ({len(margins.margins)} blocks, n={args.n})")
    print(f"report written to {report_path}")
    for p in figure_paths:
        print(f"figure written to {p}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_settings(args.config, args.override or [])
    if args.seed is not None:
        run.train.seed = args.seed
    if args.deterministic:
        run.train.deterministic = True
    backbone = resolve_backbone(args.backbone, default_resolution=run.model.resolution)
    store = FaceStore.from_directory(args.data, resolution=run.model.resolution)
    perceptual = SeededPerceptual()
    margins = None
    if args.margins:
        with _stage("load margins"):
            margins = calibration.read_margins(args.margins)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.pt")
    if args.resume and os.path.exists(ckpt_path):
        trainer = Trainer.load_checkpoint(ckpt_path, store, backbone, perceptual)
    else:
        trainer = Trainer(run, store, backbone, perceptual, margins=margins)
    log = MetricsLog(os.path.join(args.out, "metrics.jsonl"))
    with _stage("train"):
        reports = run_training(
            trainer,
            args.steps,
            log=log,
            checkpoint_path=ckpt_path,
            checkpoint_every=args.checkpoint_every,
            attention_dir=args.out,
        )
    if reports:
        print(
            f"trained {len(reports)} steps to step {trainer.step}; "
            f"final total {reports[-1].total:.4f}"
        )
    print(f"checkpoint written to {ckpt_path}")
    return EXIT_OK


def cmd_swap(args) -> int:
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
    with _stage("load checkpoint"):
        gen, model_cfg, _ = load_generator(args.checkpoint)
    backbone = resolve_backbone(args.backbone, default_resolution=model_cfg.resolution)
    template, template_res = _template_args(args)
    with _stage("align target"):
        target = _load_face(
            args.target, args.target_landmarks, model_cfg.resolution, template, template_res
        )
    with _stage("align source"):
        source = _load_face(
            args.source, args.source_landmarks, model_cfg.resolution, template, template_res
        )
    with _stage("generate"):
        changed = swap_faces(gen, backbone, target, source)
    _write_image(changed, args.out)
    print(f"swapped face written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    swapped = FaceStore.from_directory(args.swapped, resolution=args.resolution)
    reference = FaceStore.from_directory(args.reference, resolution=args.resolution)
    gallery = (
        FaceStore.from_directory(args.gallery, resolution=args.resolution)
        if args.gallery
        else None
    )
    adapters = EvalAdapters(
        encoder=resolve_backbone(args.backbone, default_resolution=args.resolution)
        if gallery is not None
        else None,
        pose=None if args.no_pose else SeededEstimator(3, POSE_STUB_SEED),
        expression=None if args.no_expression else SeededEstimator(10, EXPRESSION_STUB_SEED),
        fid_extractor=None if args.no_fid else PerceptualFeatureExtractor(SeededPerceptual()),
    )
    with _stage("evaluate"):
        report = metrics.evaluate(swapped, reference, adapters, gallery_store=gallery)
    _ensure_parent(args.out)
    metrics.write_report(report, args.out)
    summary = ", ".join(
        f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
        for k, v in report.as_dict().items()
        if v is not None and k not in ("schema_version", "fid_extractor")
    )
    print(f"report written to {args.out}: {summary}")
    return EXIT_OK


def cmd_plot(args) -> int:
    if not (args.metrics_log or args.calibration_report or args.attention):
        raise ConfigMismatch(
            "plot needs at least one of --metrics-log, --calibration-report, --attention"
        )
    os.makedirs(args.out, exist_ok=True)
    written = []
    if args.metrics_log:
        rows = read_metrics_log(args.metrics_log)
        written.append(
            plotting.render_loss_curves(rows, os.path.join(args.out, "loss_curves.png"))
        )
    if args.calibration_report:
        report = calibration.load_report(args.calibration_report)
        written.extend(plotting.render_calibration_report(report, args.out))
    if args.attention:
        written.append(
            plotting.render_attention_grid(
                args.attention, os.path.join(args.out, "attention_grid.png")
            )
        )
    for p in written:
        print(f"figure written to {p}")
    return EXIT_OK


def cmd_config(args) -> int:
    if args.action == "list":
        for name in PRESET_NAMES:
            print(name)
        return EXIT_OK
    cfg = make_preset(
        args.name,
        resolution=args.resolution,
        base_channels=args.base_channels,
        channel_cap=args.channel_cap,
        bottleneck_resolution=args.bottleneck,
    )
    sys.stdout.write(show_model_config(cfg))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="swapkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", parents=[], help="align a dataset to the template")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--template", default=None)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("calibrate-ifsr", help="derive feature-similarity margins")
    p.add_argument("--swap-model", required=True, help="checkpoint path, 'identity', or 'source'")
    p.add_argument("--backbone", default="stub")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--figures", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--first", type=int, default=2)
    p.add_argument("--last", type=int, default=0, help="0 selects min(13, block count)")
    p.add_argument("--resolution", type=int, default=0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True, help="preset name or config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--margins", default=None)
    p.add_argument("--backbone", default="stub")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("swap", help="swap one face onto a target image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backbone", default="stub")
    p.add_argument("--target-landmarks", default=None)
    p.add_argument("--source-landmarks", default=None)
    p.add_argument("--template", default=None)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("evaluate", help="score swapped images against references")
    p.add_argument("--swapped", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--gallery", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--backbone", default="stub")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--no-pose", action="store_true")
    p.add_argument("--no-expression", action="store_true")
    p.add_argument("--no-fid", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render figures from logs and reports")
    p.add_argument("--metrics-log", default=None)
    p.add_argument("--calibration-report", default=None)
    p.add_argument("--attention", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("config", help="inspect model presets")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?", default=None)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--channel-cap", type=int, default=512)
    p.add_argument("--bottleneck", type=int, default=8)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "config" and args.action == "show" and not args.name:
        parser.error("config show requires a preset name")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except BaseException as exc:  # mapped to documented exit codes
        print(f"swapkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if isinstance(exc, NonFiniteLoss) and exc.terms:
            print(f"swapkit {args.command}: loss terms at failure: {exc.terms}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
