"""Two-stage training: cue classification, then end-to-end segmentation."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from src.core.errors import ConfigError, DatasetError
from src.core.ops import np_sigmoid
from src.core.tensor import Tensor, no_grad
from src.modules.network.module import CueClassifier, MissingSignSegmenter
from src.synth.generator import SyntheticScene
from src.train.checkpoint import load_encoder_from
from src.train.losses import FOCAL_ALPHA, FOCAL_GAMMA, bce_loss, focal_loss
from src.train.metrics import DEFAULT_IOU_MIN, DEFAULT_TAU, MetricsReport, eval_localization
from src.train.optim import Adam

PAPER_EPOCHS = 400


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr_classifier: float = 1e-4
    lr_segmenter: float = 1e-3
    epochs: int = 50
    patience: int = 10
    focal_alpha: float = FOCAL_ALPHA
    focal_gamma: float = FOCAL_GAMMA
    tau: float = DEFAULT_TAU
    iou_min: float = DEFAULT_IOU_MIN
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_classifier <= 0 or self.lr_segmenter <= 0:
            raise ConfigError("Learning rates must be positive")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 < self.focal_alpha < 1.0 or self.focal_gamma < 0.0:
            raise ConfigError(f"Bad focal parameters alpha={self.focal_alpha} gamma={self.focal_gamma}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must be in (0, 1), got {self.tau}")


@dataclass
class DataSplits:
    train: list[SyntheticScene]
    val: list[SyntheticScene]
    test: list[SyntheticScene]

    def require_nonempty(self) -> None:
        for name in ("train", "val", "test"):
            if not getattr(self, name):
                raise DatasetError(f"The {name} split is empty")


@dataclass
class ClassifierResult:
    model: CueClassifier
    report: MetricsReport
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


@dataclass
class SegmentationEval:
    loss: float
    raw_recall: Optional[float]
    post_recall: Optional[float]
    prob_maps: np.ndarray

    def to_dict(self) -> dict:
        return {"loss": self.loss, "raw_recall": self.raw_recall, "post_recall": self.post_recall}


@dataclass
class SegmenterResult:
    model: MissingSignSegmenter
    evaluation: SegmentationEval
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def stack_images(scenes: Sequence[SyntheticScene]) -> np.ndarray:
    return np.stack([s.image for s in scenes]).astype(np.float64)


def cue_labels(scenes: Sequence[SyntheticScene]) -> np.ndarray:
    return np.array([s.cue_label for s in scenes], dtype=np.float64)


def missing_targets(scenes: Sequence[SyntheticScene]) -> np.ndarray:
    """(N, H, W, 1) float masks."""
    return np.stack([s.missing_mask for s in scenes]).astype(np.float64)[..., None]


def _batches(n: int, batch_size: int, order: Optional[np.ndarray] = None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _snapshot(model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def _restore(model, snapshot: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        p.data = snapshot[name]


def write_history(path: Path, history: list[dict]) -> None:
    """One JSON object per line, keys sorted so reruns are byte-identical."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(row, sort_keys=True) for row in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _epoch_row(epoch: int, split: str, loss: float, report: Optional[MetricsReport], recall=None) -> dict:
    return {
        "epoch": epoch,
        "split": split,
        "loss": loss,
        "precision": report.precision if report else None,
        "recall": report.recall if report else None,
        "f_score": report.f_score if report else None,
        "localization_recall": recall,
    }


def predict_logits(model, images: np.ndarray, batch_size: int) -> np.ndarray:
    """Forward pass without recording, in batches."""
    outputs = []
    with no_grad():
        for idx in _batches(len(images), batch_size):
            outputs.append(model(Tensor(images[idx])).data)
    return np.concatenate(outputs)


def evaluate_classifier(
    model: CueClassifier, scenes: Sequence[SyntheticScene], batch_size: int = 32
) -> tuple[float, MetricsReport]:
    """Mean BCE and the confusion report, broken down by cue type."""
    if not scenes:
        raise DatasetError("Cannot evaluate on zero scenes")
    logits = predict_logits(model, stack_images(scenes), batch_size)
    labels = cue_labels(scenes)
    with no_grad():
        loss = bce_loss(Tensor(logits), labels).item()
    report = MetricsReport.from_predictions(
        logits > 0.0, labels > 0.5, groups=[s.cue_type.value for s in scenes]
    )
    return loss, report


def evaluate_segmenter(
    model: MissingSignSegmenter,
    scenes: Sequence[SyntheticScene],
    cfg: TrainConfig,
) -> SegmentationEval:
    """Focal loss plus raw and rectangle-post-processed localization recall."""
    if not scenes:
        raise DatasetError("Cannot evaluate on zero scenes")
    logits = predict_logits(model, stack_images(scenes), cfg.batch_size)
    targets = missing_targets(scenes)
    with no_grad():
        loss = focal_loss(Tensor(logits), targets, cfg.focal_alpha, cfg.focal_gamma).item()
    probs = np_sigmoid(logits[..., 0])
    gts = [s.missing_mask for s in scenes]
    return SegmentationEval(
        loss=loss,
        raw_recall=eval_localization(probs, gts, cfg.tau, cfg.iou_min, postprocess=False),
        post_recall=eval_localization(probs, gts, cfg.tau, cfg.iou_min, postprocess=True),
        prob_maps=probs,
    )


def train_classifier(
    model: CueClassifier,
    data: DataSplits,
    cfg: TrainConfig,
    metrics_path: Optional[Path] = None,
    verbose: bool = True,
) -> ClassifierResult:
    """Mini-batch Adam on BCE; keeps the parameters of the best validation F.

    Stops early once validation F has not improved for ``cfg.patience`` epochs.
    """
    cfg.validate()
    data.require_nonempty()
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.lr_classifier)
    images = stack_images(data.train)
    labels = cue_labels(data.train)

    history: list[dict] = []
    best_f, best_epoch, best_state, waited = -1.0, 0, _snapshot(model), 0

    for epoch in range(1, cfg.epochs + 1):
        total_loss = 0.0
        seen_logits = np.empty(len(labels))
        for idx in _batches(len(labels), cfg.batch_size, rng.permutation(len(labels))):
            optimizer.zero_grad()
            logits = model(Tensor(images[idx]))
            loss = bce_loss(logits, labels[idx])
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * len(idx)
            seen_logits[idx] = logits.data

        train_report = MetricsReport.from_predictions(seen_logits > 0.0, labels > 0.5)
        history.append(_epoch_row(epoch, "train", total_loss / len(labels), train_report))
        val_loss, val_report = evaluate_classifier(model, data.val, cfg.batch_size)
        history.append(_epoch_row(epoch, "val", val_loss, val_report))

        if verbose:
            print(f"[{epoch}/{cfg.epochs}] train loss {total_loss / len(labels):.4f} | "
                  f"val loss {val_loss:.4f} F {val_report.f_score:.4f}")

        if val_report.f_score > best_f:
            best_f, best_epoch, best_state, waited = val_report.f_score, epoch, _snapshot(model), 0
        else:
            waited += 1
            if waited >= cfg.patience:
                if verbose:
                    print(f"Early stop after epoch {epoch} (best epoch {best_epoch})")
                break

    _restore(model, best_state)
    test_loss, test_report = evaluate_classifier(model, data.test, cfg.batch_size)
    history.append(_epoch_row(best_epoch, "test", test_loss, test_report))
    if metrics_path is not None:
        write_history(metrics_path, history)
    return ClassifierResult(model=model, report=test_report, history=history, best_epoch=best_epoch)


def train_segmenter(
    model: MissingSignSegmenter,
    data: DataSplits,
    cfg: TrainConfig,
    classifier_checkpoint: Optional[Path] = None,
    metrics_path: Optional[Path] = None,
    verbose: bool = True,
) -> SegmenterResult:
    """Fine-tune encoder and decoder end to end on focal loss.

    The encoder, CueCAn units included, starts from ``classifier_checkpoint``
    when given; the decoder keeps its fresh bilinear-seeded initialization.
    Model selection uses validation localization recall, then validation loss.

    Raises:
        CheckpointMismatchError: If the checkpoint's CueCAn config or widths differ
    """
    cfg.validate()
    data.require_nonempty()
    if not any(s.missing_mask.any() for s in data.train):
        raise DatasetError("The train split holds no missing-sign scenes")
    if classifier_checkpoint is not None:
        load_encoder_from(classifier_checkpoint, model)

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.lr_segmenter)
    images = stack_images(data.train)
    targets = missing_targets(data.train)

    history: list[dict] = []
    best_key, best_epoch, best_state, waited = None, 0, _snapshot(model), 0

    for epoch in range(1, cfg.epochs + 1):
        total_loss = 0.0
        for idx in _batches(len(images), cfg.batch_size, rng.permutation(len(images))):
            optimizer.zero_grad()
            loss = focal_loss(model(Tensor(images[idx])), targets[idx], cfg.focal_alpha, cfg.focal_gamma)
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * len(idx)

        history.append(_epoch_row(epoch, "train", total_loss / len(images), None))
        val = evaluate_segmenter(model, data.val, cfg)
        history.append(_epoch_row(epoch, "val", val.loss, None, val.raw_recall))

        if verbose:
            shown = "n/a" if val.raw_recall is None else f"{val.raw_recall:.4f}"
            print(f"[{epoch}/{cfg.epochs}] train loss {total_loss / len(images):.5f} | "
                  f"val loss {val.loss:.5f} recall {shown}")

        key = (val.raw_recall if val.raw_recall is not None else 0.0, -val.loss)
        if best_key is None or key > best_key:
            best_key, best_epoch, best_state, waited = key, epoch, _snapshot(model), 0
        else:
            waited += 1
            if waited >= cfg.patience:
                if verbose:
                    print(f"Early stop after epoch {epoch} (best epoch {best_epoch})")
                break

    _restore(model, best_state)
    test = evaluate_segmenter(model, data.test, cfg)
    row = _epoch_row(best_epoch, "test", test.loss, None, test.raw_recall)
    row["post_recall"] = test.post_recall
    history.append(row)
    if metrics_path is not None:
        write_history(metrics_path, history)
    return SegmenterResult(model=model, evaluation=test, history=history, best_epoch=best_epoch)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
