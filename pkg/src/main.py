"""CLI entry point for the CueCAn missing-sign pipeline."""

import argparse
import json
import subprocess
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from src import __version__
from src.core import ops
from src.core.errors import (
    CheckpointMismatchError,
    ConfigError,
    DataFormatError,
    DatasetError,
    InvariantError,
    NumericError,
    ShapeError,
)
from src.core.tensor import Tensor, no_grad
from src.modules.cuecan.module import CueCanConfig
from src.modules.network import config as network_config
from src.modules.network.gradcam import grad_cam
from src.modules.network.module import CueClassifier, MissingSignSegmenter
from src.postproc.blobs import box_iou, extract_blobs, label_regions
from src.postproc.features import feature_matrix, region_features
from src.postproc.forest import ForestParams, RandomForest, forest_predict, forest_train
from src.postproc.video import eval_video, video_decide
from src.selftest import run_selftest
from src.synth.generator import GeneratorParams, Subset, generate, split
from src.synth.scene_io import encode_pgm, encode_ppm, export_scenes, import_scenes
from src.train.checkpoint import model_from_checkpoint, read_manifest, save_checkpoint
from src.train.metrics import MetricsReport
from src.train.trainer import (
    PAPER_EPOCHS,
    DataSplits,
    TrainConfig,
    evaluate_classifier,
    evaluate_segmenter,
    stack_images,
    train_classifier,
    train_segmenter,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_INVARIANT = 4

DEFAULT_CUECAN = "5e5e3"
RUN_CONFIG_FILE = "run_config.json"

# Values used when neither a flag nor the --config file sets them
DEFAULTS = {
    "seed": 0,
    "cuecan": None,
    "epochs": 50,
    "batch": 32,
    "lr": None,
    "tau": 0.5,
    "iou_min": 0.25,
    "trees": 50,
    "depth": 8,
    "n": 2000,
    "noise": 0.03,
    "size": 64,
    "interval_len": 5,
    "split": "test",
}


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"Error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# Run configuration

def resolve_settings(args) -> dict:
    """Flag > --config JSON > default, for every setting this command accepts."""
    file_values = {}
    if getattr(args, "config", None):
        config_path = Path(args.config)
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataFormatError(f"invalid JSON ({e.msg})", config_path, e.pos) from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {config_path} must hold a JSON object")
        file_values = {k.replace("-", "_"): v for k, v in raw.items()}

    settings = {}
    for key, default in DEFAULTS.items():
        if not hasattr(args, key):
            continue
        flag = getattr(args, key)
        if flag is not None:
            settings[key] = flag
        elif key in file_values:
            settings[key] = file_values[key]
        else:
            settings[key] = default
    return settings


def version_string() -> str:
    """``git describe`` of the checkout, or the package version outside git."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, check=True, cwd=Path(__file__).parent,
        )
        described = result.stdout.strip()
        if described:
            return described
    except (OSError, subprocess.CalledProcessError):
        pass
    return f"cuecan-{__version__}"


def write_run_config(run_dir: Path, args, settings: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": args.command,
        "argv": getattr(args, "argv", sys.argv[1:]),
        "settings": {k: (str(v) if isinstance(v, Path) else v) for k, v in settings.items()},
        "data": str(args.data) if getattr(args, "data", None) else None,
        "checkpoint": str(args.checkpoint) if getattr(args, "checkpoint", None) else None,
        "seed": settings.get("seed"),
        "version": version_string(),
    }
    (run_dir / RUN_CONFIG_FILE).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def train_config(settings: dict) -> TrainConfig:
    cfg = TrainConfig(
        batch_size=settings["batch"],
        epochs=settings["epochs"],
        tau=settings.get("tau", DEFAULTS["tau"]),
        iou_min=settings.get("iou_min", DEFAULTS["iou_min"]),
        seed=settings["seed"],
    )
    if settings.get("lr") is not None:
        cfg.lr_classifier = cfg.lr_segmenter = settings["lr"]
    cfg.validate()
    return cfg


def config_label(cuecan: CueCanConfig) -> str:
    return cuecan.render() or "vanilla"


# Data access

def load_split(data: Path, name: str):
    """Scenes of ``data/<name>``, or of ``data`` itself when it is a single scene directory."""
    if (data / name / "meta.jsonl").exists():
        return import_scenes(data / name)
    if (data / "meta.jsonl").exists():
        return import_scenes(data)
    raise FileNotFoundError(f"No scene directory at {data / name} or {data}")


def load_splits(data: Path) -> DataSplits:
    return DataSplits(*(import_scenes(data / name) for name in ("train", "val", "test")))


def read_jsonl(path: Path) -> list[dict]:
    rows = []
    offset = 0
    for line in path.read_bytes().splitlines(keepends=True):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataFormatError(f"bad JSON line ({e.msg})", path, offset + e.pos) from e
        offset += len(line)
    return rows


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def _require_kind(model, kind: str, path: Path) -> None:
    if model.kind != kind:
        raise CheckpointMismatchError(f"{path} holds a {model.kind}; this command needs a {kind}")


# Tables

def print_table(headers: list[str], rows: list[list]) -> None:
    cells = [[f"{c:.2f}" if isinstance(c, float) else str(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) for i, h in enumerate(headers)]
    print("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    print("  ".join("-" * w for w in widths))
    for row in cells:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def classification_row(label: str, report: MetricsReport) -> list:
    rates = report.rates()
    return [label, rates["fn"], rates["fp"], rates["tn"], rates["tp"],
            100 * report.precision, 100 * report.recall, 100 * report.f_score]


CLASSIFICATION_HEADERS = ["Model", "FN", "FP", "TN", "TP", "Precision", "Recall", "F-Score"]
PRF_HEADERS = ["Task", "Precision", "Recall", "F-Score"]


def display_name(label: str) -> str:
    return "Baseline" if label == "vanilla" else f"CueCAn_{label}"


def print_comparison(out: Path) -> None:
    """Table over every classifier run under ``out``; flags a CueCAn run that trails the baseline."""
    runs = []
    for report_path in sorted(out.glob("cls_*/report.json")):
        data = json.loads(report_path.read_text(encoding="utf-8"))
        runs.append((data["cuecan_label"], MetricsReport(**{k: data["report"][k] for k in ("tp", "fp", "tn", "fn")})))
    if not runs:
        return
    runs.sort(key=lambda r: (r[0] != "vanilla", r[0]))
    print("\nCue classification")
    print_table(CLASSIFICATION_HEADERS, [classification_row(display_name(l), r) for l, r in runs])

    baseline = dict(runs).get("vanilla")
    if baseline is not None:
        for label, report in runs:
            if label != "vanilla" and report.f_score < baseline.f_score:
                print(f"Warning: {display_name(label)} F-score {100 * report.f_score:.2f} is below "
                      f"the baseline {100 * baseline.f_score:.2f}", file=sys.stderr)


# Commands

def gen_command(args):
    """Handle the gen subcommand."""
    s = args.settings
    params = GeneratorParams(height=s["size"], width=s["size"], noise_sigma=s["noise"])
    print(f"Generating {s['n']} scenes ({s['size']}x{s['size']}, noise {s['noise']})")
    scenes = generate(params, s["n"], s["seed"])
    parts = split(scenes, seed=s["seed"])
    for name, part in zip(("train", "val", "test"), parts):
        export_scenes(part, args.out / name)
        print(f"Saved: {args.out / name} ({len(part)} scenes)")
    write_run_config(args.out, args, s)


def train_cls_command(args):
    """Handle the train-cls subcommand."""
    s = args.settings
    cfg = train_config(s)
    cuecan = CueCanConfig.parse(s["cuecan"] if s["cuecan"] is not None else DEFAULT_CUECAN)
    label = config_label(cuecan)
    run_dir = args.out / f"cls_{label}"

    model = CueClassifier(np.random.default_rng(s["seed"]), cuecan)
    print(f"Training cue classifier {display_name(label)} ({model.parameter_count()} parameters)")
    result = train_classifier(model, load_splits(args.data), cfg, run_dir / "metrics.jsonl")

    save_checkpoint(model, run_dir / "checkpoint", extra={"best_epoch": result.best_epoch})
    report = {
        "cuecan_label": label,
        "best_epoch": result.best_epoch,
        "rates": result.report.rates(),
        "report": result.report.to_dict(),
    }
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_run_config(run_dir, args, s)
    print(f"Saved: {run_dir}")
    print_comparison(args.out)


def train_seg_command(args):
    """Handle the train-seg subcommand."""
    s = args.settings
    cfg = train_config(s)
    text = s["cuecan"] if s["cuecan"] is not None else read_manifest(args.init)["cuecan"]
    cuecan = CueCanConfig.parse(text)
    label = config_label(cuecan)
    run_dir = args.out / f"seg_{label}"

    model = MissingSignSegmenter(np.random.default_rng(s["seed"]), cuecan)
    print(f"Training missing-sign segmenter {display_name(label)} from {args.init}")
    result = train_segmenter(model, load_splits(args.data), cfg, args.init, run_dir / "metrics.jsonl")

    save_checkpoint(model, run_dir / "checkpoint", extra={"best_epoch": result.best_epoch})
    report = {"cuecan_label": label, "best_epoch": result.best_epoch, **result.evaluation.to_dict()}
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_run_config(run_dir, args, s)
    print(f"Saved: {run_dir}")
    print_localization(label, result.evaluation.raw_recall, result.evaluation.post_recall)


def eval_cls_command(args):
    """Handle the eval-cls subcommand."""
    s = args.settings
    model = model_from_checkpoint(args.checkpoint)
    _require_kind(model, network_config.CLASSIFIER_KIND, args.checkpoint)
    scenes = load_split(args.data, s["split"])
    loss, report = evaluate_classifier(model, scenes, s["batch"])

    label = config_label(model.cuecan_config)
    print(f"Evaluated {len(scenes)} scenes (loss {loss:.4f})\n")
    print_table(CLASSIFICATION_HEADERS, [classification_row(display_name(label), report)])
    if report.breakdown:
        print("\nBy cue type")
        print_table(["Cue", "Precision", "Recall", "F-Score"], [
            [cue, 100 * r.precision, 100 * r.recall, 100 * r.f_score] for cue, r in report.breakdown.items()
        ])

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "eval_cls.json").write_text(
        json.dumps({"loss": loss, "report": report.to_dict()}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_run_config(args.out, args, s)


def print_localization(label: str, raw: Optional[float], post: Optional[float]) -> None:
    base = "FCN" if label == "vanilla" else "CueCAn"
    shown = ["n/a" if v is None else f"{100 * v:.2f}" for v in (raw, post)]
    print()
    print_table(["Method", base, f"{base}-P"], [["Recall", *shown]])
    if raw is not None and post is not None and post < raw:
        print(f"Warning: post-processed recall {shown[1]} is below raw recall {shown[0]}", file=sys.stderr)


def eval_seg_command(args):
    """Handle the eval-seg subcommand."""
    s = args.settings
    model = model_from_checkpoint(args.checkpoint)
    _require_kind(model, network_config.SEGMENTER_KIND, args.checkpoint)
    scenes = load_split(args.data, s["split"])
    cfg = TrainConfig(batch_size=s["batch"], tau=s["tau"], iou_min=s["iou_min"])
    evaluation = evaluate_segmenter(model, scenes, cfg)

    print(f"Evaluated {len(scenes)} scenes (focal loss {evaluation.loss:.5f})")
    print_localization(config_label(model.cuecan_config), evaluation.raw_recall, evaluation.post_recall)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "eval_seg.json").write_text(
        json.dumps(evaluation.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_run_config(args.out, args, s)


def _interval_ids(scenes, length: int) -> list[Optional[str]]:
    """Cue scenes of one subset form consecutive intervals of ``length`` frames."""
    ids: list[Optional[str]] = [None] * len(scenes)
    for subset in (Subset.S1, Subset.S2):
        members = [i for i, sc in enumerate(scenes) if sc.subset == subset]
        for position, i in enumerate(members):
            ids[i] = f"{subset.value}-{position // length:03d}"
    return ids


def postprocess_command(args):
    """Handle the postprocess subcommand."""
    s = args.settings
    if s["interval_len"] < 1:
        raise ConfigError(f"--interval-len must be >= 1, got {s['interval_len']}")
    model = model_from_checkpoint(args.checkpoint)
    _require_kind(model, network_config.SEGMENTER_KIND, args.checkpoint)
    scenes = load_split(args.data, s["split"])
    cfg = TrainConfig(batch_size=s["batch"], tau=s["tau"], iou_min=s["iou_min"])
    probs = evaluate_segmenter(model, scenes, cfg).prob_maps
    intervals = _interval_ids(scenes, s["interval_len"])

    rows = []
    for i, (scene, prob) in enumerate(zip(scenes, probs)):
        h, w = scene.size
        gt_labels, gt_count = label_regions(scene.missing_mask)
        blobs = extract_blobs(prob, s["tau"])
        labels = []
        for blob in blobs:
            hit = any(box_iou(blob.box_mask(), gt_labels == k) >= s["iou_min"] for k in range(1, gt_count + 1))
            labels.append(int(hit))
        rows.append({
            "frame": i,
            "subset": scene.subset.value,
            "interval_id": intervals[i],
            "interval_missing": (scene.subset == Subset.S2) if intervals[i] else None,
            "image_height": h,
            "image_width": w,
            "boxes": [list(b.box) for b in blobs],
            "features": feature_matrix([region_features(b, h, w) for b in blobs]).tolist(),
            "labels": labels,
        })

    write_jsonl(args.out / "regions.jsonl", rows)
    total = sum(len(r["boxes"]) for r in rows)
    print(f"Saved: {args.out / 'regions.jsonl'} ({total} regions in {len(rows)} frames)")
    write_run_config(args.out, args, s)


def _region_arrays(rows: list[dict]) -> tuple[np.ndarray, np.ndarray]:
    features = [f for r in rows for f in r["features"]]
    labels = [l for r in rows for l in r["labels"]]
    if not features:
        return np.zeros((0, 6)), np.zeros(0, dtype=np.int64)
    return np.asarray(features, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def recognize(forest: RandomForest, rows: list[dict]):
    """Region verdicts per frame, interval decisions, and both reports."""
    x, y = _region_arrays(rows)
    verdicts = forest_predict(forest, x)[0] if len(x) else np.zeros(0, dtype=np.int64)
    region_report = MetricsReport.from_predictions(verdicts == 1, y == 1)

    per_frame = []
    cursor = 0
    for r in rows:
        n = len(r["boxes"])
        per_frame.append([bool(v) for v in verdicts[cursor:cursor + n]])
        cursor += n

    grouped: dict[str, list[int]] = {}
    for i, r in enumerate(rows):
        if r.get("interval_id"):
            grouped.setdefault(r["interval_id"], []).append(i)
    decisions = []
    truth = []
    for interval_id in sorted(grouped):
        frames = grouped[interval_id]
        decisions.append(video_decide([per_frame[i] for i in frames], interval_id))
        truth.append(bool(rows[frames[0]]["interval_missing"]))
    video_report = eval_video(decisions, truth)
    return per_frame, decisions, region_report, video_report


def print_recognition(region_report: MetricsReport, video_report: MetricsReport) -> None:
    print()
    print_table(PRF_HEADERS, [
        ["Region classification", 100 * region_report.precision, 100 * region_report.recall,
         100 * region_report.f_score],
        ["Video recognition", 100 * video_report.precision, 100 * video_report.recall,
         100 * video_report.f_score],
    ])


def train_rf_command(args):
    """Handle the train-rf subcommand."""
    s = args.settings
    x, y = _region_arrays(read_jsonl(args.data))
    if len(x) == 0:
        raise DatasetError(f"{args.data} holds no regions to train on")
    params = ForestParams(n_trees=s["trees"], max_depth=s["depth"], seed=s["seed"])
    print(f"Training random forest on {len(x)} regions ({int(y.sum())} missing)")
    forest = forest_train(x, y, params)

    args.out.mkdir(parents=True, exist_ok=True)
    forest_path = args.out / "forest.json"
    forest_path.write_text(json.dumps(forest.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    print(f"Saved: {forest_path}")
    if forest.oob_error is not None:
        print(f"Out-of-bag error: {100 * forest.oob_error:.2f}%")

    if args.eval is not None:
        _, _, region_report, video_report = recognize(forest, read_jsonl(args.eval))
        print_recognition(region_report, video_report)
        report = {"region": region_report.to_dict(), "video": video_report.to_dict()}
        (args.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_run_config(args.out, args, s)


def eval_video_command(args):
    """Handle the eval-video subcommand."""
    s = args.settings
    forest = RandomForest.from_dict(json.loads(args.forest.read_text(encoding="utf-8")))
    rows = read_jsonl(args.data)
    per_frame, decisions, region_report, video_report = recognize(forest, rows)

    finals = {d.interval_id: d.final for d in decisions}
    out_rows = [{
        "frame": r["frame"],
        "boxes": r["boxes"],
        "verdicts": verdicts,
        "interval_id": r.get("interval_id"),
        "final": finals.get(r.get("interval_id")),
    } for r, verdicts in zip(rows, per_frame)]
    write_jsonl(args.out / "decisions.jsonl", out_rows)
    print(f"Saved: {args.out / 'decisions.jsonl'} ({len(decisions)} intervals)")
    print_recognition(region_report, video_report)
    write_run_config(args.out, args, s)


def _parse_pixel(text: str) -> tuple[int, int]:
    try:
        row, col = (int(v) for v in text.split(","))
    except ValueError as e:
        raise ConfigError(f"--pixel must be 'auto' or 'row,col', got '{text}'") from e
    return row, col


def auto_pixel(model: MissingSignSegmenter, image: np.ndarray, tau: float) -> tuple[int, int]:
    """Centroid of the largest predicted blob; the most confident pixel when nothing passes ``tau``."""
    with no_grad():
        logits = model(Tensor(image[None])).data[0, :, :, 0]
    blobs = extract_blobs(ops.np_sigmoid(logits), tau)
    if not blobs:
        print(f"Warning: no blob above tau={tau}; using the highest-scoring pixel", file=sys.stderr)
        row, col = np.unravel_index(int(np.argmax(logits)), logits.shape)
        return int(row), int(col)
    row, col = blobs[0].centroid
    return int(round(row)), int(round(col))


def heat_overlay(image: np.ndarray, cam: np.ndarray) -> np.ndarray:
    """0.5 blend of the image with a red heat map upsampled to the image size."""
    h, w = image.shape[:2]
    with no_grad():
        heat = ops.bilinear_upsample(Tensor(cam[None, :, :, None]), h, w).data[0, :, :, 0]
    red = np.zeros_like(image)
    red[..., 0] = np.clip(heat, 0.0, 1.0)
    return 0.5 * image + 0.5 * red


def gradcam_command(args):
    """Handle the gradcam subcommand."""
    s = args.settings
    model = model_from_checkpoint(args.checkpoint)
    scenes = load_split(args.data, s["split"])
    if not 0 <= args.index < len(scenes):
        raise ConfigError(f"--index {args.index} is outside 0..{len(scenes) - 1}")
    image = stack_images([scenes[args.index]])

    if args.target == "cls":
        _require_kind(model, network_config.CLASSIFIER_KIND, args.checkpoint)
        target = "cls"
    else:
        _require_kind(model, network_config.SEGMENTER_KIND, args.checkpoint)
        row, col = auto_pixel(model, image[0], s["tau"]) if args.pixel == "auto" else _parse_pixel(args.pixel)
        h, w = image.shape[1:3]
        if not (0 <= row < h and 0 <= col < w):
            raise ConfigError(f"Pixel ({row}, {col}) is outside the {h}x{w} image")
        print(f"Explaining segmentation logit at pixel ({row}, {col})")
        target = ("seg", row, col)

    placements = model.cuecan_config.placements
    layer = args.layer or (max(p.block for p in placements) if placements else model.encoder.num_blocks)
    cam = grad_cam(model, Tensor(image), target, layer)

    args.out.mkdir(parents=True, exist_ok=True)
    stem = f"gradcam_{args.index:04d}_block{layer}"
    levels = np.clip(np.rint(cam * 255.0), 0, 255).astype(np.uint8)
    (args.out / f"{stem}.pgm").write_bytes(encode_pgm(levels))
    (args.out / f"{stem}_overlay.ppm").write_bytes(encode_ppm(heat_overlay(image[0], cam)))
    print(f"Saved: {args.out / stem}.pgm ({cam.shape[0]}x{cam.shape[1]}) and overlay")
    write_run_config(args.out, args, s)


def selftest_command(args):
    """Handle the selftest subcommand."""
    if not run_selftest(seed=args.settings["seed"]):
        raise InvariantError("selftest reported failures")


# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog="cuecan",
        description="Cue-driven contextual attention for missing traffic sign detection",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--out", type=Path, default=Path("output"),
                        help="Output directory (default: output)")
    common.add_argument("--seed", type=int, help="Random seed (default: 0)")
    common.add_argument("--config", type=Path, help="JSON file of setting defaults; flags win over it")

    data_arg = argparse.ArgumentParser(add_help=False)
    data_arg.add_argument("--data", type=Path, required=True, help="Scene directory (with train/val/test splits)")

    split_arg = argparse.ArgumentParser(add_help=False)
    split_arg.add_argument("--split", help="Split to read under --data (default: test)")

    model_arg = argparse.ArgumentParser(add_help=False)
    model_arg.add_argument("--cuecan", help=f"CueCAn config string, '' for none (default: {DEFAULT_CUECAN})")
    model_arg.add_argument("--epochs", type=int, help=f"Training epochs (default: 50; {PAPER_EPOCHS} for the full schedule)")
    model_arg.add_argument("--lr", type=float, help="Learning rate (default: 1e-4 classifier, 1e-3 segmenter)")

    batch = argparse.ArgumentParser(add_help=False)
    batch.add_argument("--batch", type=int, help="Batch size (default: 32)")

    loc = argparse.ArgumentParser(add_help=False)
    loc.add_argument("--tau", type=float, help="Probability threshold (default: 0.5)")
    loc.add_argument("--iou-min", type=float, dest="iou_min", help="Region IoU bound (default: 0.25)")

    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint directory")

    gen_parser = subparsers.add_parser("gen", parents=[common], help="Generate a synthetic scene dataset")
    gen_parser.add_argument("-n", type=int, dest="n", help="Number of scenes (default: 2000)")
    gen_parser.add_argument("--noise", type=float, help="Pixel noise sigma (default: 0.03)")
    gen_parser.add_argument("--size", type=int, help="Image side, a multiple of 32 and at least 64 (default: 64)")
    gen_parser.set_defaults(func=gen_command)

    cls_parser = subparsers.add_parser("train-cls", parents=[common, data_arg, model_arg, batch],
                                       help="Train the cue classifier")
    cls_parser.set_defaults(func=train_cls_command)

    seg_parser = subparsers.add_parser("train-seg", parents=[common, data_arg, model_arg, batch, loc],
                                       help="Train the missing-sign segmenter from a classifier")
    seg_parser.add_argument("--init", type=Path, required=True, help="Classifier checkpoint directory")
    seg_parser.set_defaults(func=train_seg_command)

    eval_cls_parser = subparsers.add_parser("eval-cls", parents=[common, data_arg, split_arg, ckpt, batch],
                                            help="Evaluate a classifier checkpoint")
    eval_cls_parser.set_defaults(func=eval_cls_command)

    eval_seg_parser = subparsers.add_parser("eval-seg", parents=[common, data_arg, split_arg, ckpt, batch, loc],
                                            help="Raw and post-processed localization recall")
    eval_seg_parser.set_defaults(func=eval_seg_command)

    post_parser = subparsers.add_parser("postprocess", parents=[common, data_arg, split_arg, ckpt, batch, loc],
                                        help="Extract predicted regions and their features")
    post_parser.add_argument("--interval-len", type=int, dest="interval_len",
                             help="Frames per synthetic interval (default: 5)")
    post_parser.set_defaults(func=postprocess_command)

    rf_parser = subparsers.add_parser("train-rf", parents=[common], help="Train the region random forest")
    rf_parser.add_argument("--data", type=Path, required=True, help="regions.jsonl to train on")
    rf_parser.add_argument("--eval", type=Path, help="regions.jsonl to report on")
    rf_parser.add_argument("--trees", type=int, help="Number of trees (default: 50)")
    rf_parser.add_argument("--depth", type=int, help="Maximum tree depth (default: 8)")
    rf_parser.set_defaults(func=train_rf_command)

    video_parser = subparsers.add_parser("eval-video", parents=[common], help="Majority-vote interval recognition")
    video_parser.add_argument("--data", type=Path, required=True, help="regions.jsonl with interval ids")
    video_parser.add_argument("--forest", type=Path, required=True, help="forest.json from train-rf")
    video_parser.set_defaults(func=eval_video_command)

    cam_parser = subparsers.add_parser("gradcam", parents=[common, data_arg, split_arg, ckpt, loc],
                                       help="Grad-CAM heat map for one scene")
    cam_parser.add_argument("--index", type=int, default=0, help="Scene index in the split (default: 0)")
    cam_parser.add_argument("--target", choices=["cls", "seg"], default="cls", help="Explained logit")
    cam_parser.add_argument("--pixel", default="auto", help="'auto' or 'row,col' for --target seg")
    cam_parser.add_argument("--layer", type=int, help="Encoder block (default: deepest CueCAn block)")
    cam_parser.set_defaults(func=gradcam_command)

    self_parser = subparsers.add_parser("selftest", parents=[common], help="Run gradient and oracle checks")
    self_parser.set_defaults(func=selftest_command)
    return parser


def run(argv: Optional[list[str]] = None) -> int:
    """Parse, dispatch and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    try:
        args.argv = list(argv) if argv is not None else sys.argv[1:]
        args.settings = resolve_settings(args)
        args.func(args)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, DatasetError, ShapeError, CheckpointMismatchError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"Error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantError as e:
        print(f"Error: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except Exception as e:
        # Anything undeclared is a broken internal assumption
        print(f"Error: unexpected failure ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
