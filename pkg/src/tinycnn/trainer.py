"""Epoch/batch training loop and forward-only evaluation.

The loop keeps the two-level zeroing discipline: weight-gradient
accumulators are zeroed once per batch, per-image propagation buffers are
rewritten inside :func:`backward_image`.  Accumulated gradients are averaged
over the images actually in the batch before each Adam step, so learning-rate
semantics do not depend on batch size or on a ragged final batch.

An optional interrupt hook is polled after every third training image of the
session; when it fires, the partial batch is discarded and training stops
with the weights exactly as the last completed batch left them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backward import GradientSet, backward_image, zero_batch_grads
from .config import NetConfig, NumericPolicy, TrainConfig, derive_dims
from .dataset import DatasetIndex, load_image, read_ppm, center_crop_square
from .forward import ActivationSet, ResizePlan, build_resize_plan, forward_pass, resize_normalize
from .numcore import cross_entropy
from .optimizer import AdamState, adam_step
from .weightstore import WeightOrigin, WeightSet

INTERRUPT_POLL_INTERVAL = 3  # training images between interrupt checks

LogFn = Callable[[str], None]
InterruptFn = Callable[[], bool]


@dataclass(frozen=True)
class BatchRecord:
    epoch: int
    batch: int
    batches: int
    loss: float           # mean loss over images seen this epoch
    accuracy_pct: float   # cumulative training accuracy this epoch

    def format_line(self) -> str:
        return (f"Batch {self.batch}/{self.batches} - Loss: {self.loss:.4f} "
                f"- Acc: {self.accuracy_pct:.1f}%")


@dataclass
class EvalResult:
    accuracy_pct: float | None  # None when no images were evaluated
    confusion: np.ndarray       # (C, C) counts, rows = true class
    images: int


@dataclass
class TrainReport:
    records: list[BatchRecord] = field(default_factory=list)
    final_train_accuracy: float | None = None
    validation_accuracy: float | None = None
    images_processed: int = 0
    epochs_completed: int = 0
    interrupted: bool = False
    origin: WeightOrigin | None = None


class _PlanCache:
    """Resize plans keyed by source side; datasets may mix image sizes."""

    def __init__(self, input_size: int):
        self.input_size = input_size
        self._plans: dict[int, ResizePlan] = {}

    def load(self, path, policy: NumericPolicy) -> np.ndarray:
        square = center_crop_square(read_ppm(path))
        side = square.shape[0]
        plan = self._plans.get(side)
        if plan is None:
            plan = build_resize_plan(self.input_size, side)
            self._plans[side] = plan
        return resize_normalize(square, plan, policy)


def evaluate(pairs: Sequence[tuple[Path, int]], weights: WeightSet,
             cfg: NetConfig, policy: NumericPolicy) -> EvalResult:
    """Forward-only top-1 evaluation with per-class confusion counts."""
    dims = derive_dims(cfg)
    acts = ActivationSet.allocate(cfg, dims)
    loader = _PlanCache(cfg.input_size)
    confusion = np.zeros((cfg.num_classes, cfg.num_classes), dtype=np.int64)
    correct = 0
    for path, true_class in pairs:
        image = loader.load(path, policy)
        probs = forward_pass(image, weights, acts, cfg, policy)
        predicted = int(np.argmax(probs))  # ties resolve to the lowest index
        confusion[true_class, predicted] += 1
        if predicted == true_class:
            correct += 1
    if not pairs:
        return EvalResult(accuracy_pct=None, confusion=confusion, images=0)
    return EvalResult(accuracy_pct=100.0 * correct / len(pairs),
                      confusion=confusion, images=len(pairs))


def train(index: DatasetIndex, weights: WeightSet, grads: GradientSet,
          adam: AdamState, cfg: NetConfig, train_cfg: TrainConfig,
          policy: NumericPolicy, *,
          interrupt: InterruptFn | None = None,
          log: LogFn | None = None,
          on_batch: Callable[[BatchRecord], None] | None = None,
          origin: WeightOrigin | None = None) -> TrainReport:
    """Run the full epoch/batch loop, mutating ``weights`` in place.

    Deterministic for a fixed dataset, seed, and configuration.  The caller
    owns persistence: nothing is written to disk here.
    """
    emit = log or (lambda line: None)
    dims = derive_dims(cfg)
    acts = ActivationSet.allocate(cfg, dims)
    loader = _PlanCache(cfg.input_size)
    report = TrainReport(origin=origin)

    train_pairs = index.train_pairs()
    count = len(train_pairs)
    batches = -(-count // train_cfg.batch_size)
    session_images = 0
    stop = False

    for epoch in range(train_cfg.epochs):
        if train_cfg.shuffle_enabled:
            order = np.random.default_rng(train_cfg.shuffle_seed ^ epoch).permutation(count)
        else:
            order = np.arange(count)
        epoch_loss_sum = 0.0
        epoch_correct = 0
        epoch_seen = 0

        for batch in range(batches):
            start = batch * train_cfg.batch_size
            chosen = order[start:start + train_cfg.batch_size]
            zero_batch_grads(grads)
            in_batch = 0
            for position in chosen:
                path, true_class = train_pairs[int(position)]
                image = loader.load(path, policy)
                probs = forward_pass(image, weights, acts, cfg, policy)
                epoch_loss_sum += float(cross_entropy(probs, true_class))
                if int(np.argmax(probs)) == true_class:
                    epoch_correct += 1
                epoch_seen += 1
                backward_image(acts, image, true_class, weights, grads, cfg, policy)
                in_batch += 1
                session_images += 1
                if (session_images % INTERRUPT_POLL_INTERVAL == 0
                        and interrupt is not None and interrupt()):
                    stop = True
                    break
            if stop:
                break  # discard the partial batch's accumulators
            for _, accumulator in grads.accumulators():
                accumulator /= in_batch
            adam_step(weights, grads, adam, train_cfg, policy)
            record = BatchRecord(epoch=epoch + 1, batch=batch + 1, batches=batches,
                                 loss=epoch_loss_sum / epoch_seen,
                                 accuracy_pct=100.0 * epoch_correct / epoch_seen)
            report.records.append(record)
            emit(record.format_line())
            if on_batch is not None:
                on_batch(record)
        if stop:
            break
        report.epochs_completed = epoch + 1

    report.images_processed = session_images
    if report.records:
        report.final_train_accuracy = report.records[-1].accuracy_pct

    if stop:
        report.interrupted = True
        emit("--- Training Interrupted ---")
        return report

    emit("--- Training Complete ---")
    if train_cfg.validation_images > 0:
        result = evaluate(index.validation_pairs(), weights, cfg, policy)
        report.validation_accuracy = result.accuracy_pct
        if result.accuracy_pct is not None:
            emit(f"Validation Accuracy: {result.accuracy_pct:.1f}")
        else:
            emit("Validation disabled")
    else:
        emit("Validation disabled")
    return report
