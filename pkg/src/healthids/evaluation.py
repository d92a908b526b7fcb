"""Confusion matrices, detection/false-positive rates, timing and report files."""

from __future__ import annotations

import csv
import io
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import psutil

from .ids import ANOMALY, HYBRID, LAYERS, MISUSE, LayeredIDS
from .nslkdd import ATTACK, NORMAL, TrafficRecord

REPORT_COLUMNS = ("layer", "dr_strict", "dr_lenient", "fpr", "accuracy", "runtime_s", "peak_mem_mb")


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, true: str, predicted: str) -> int:
        return int(self.counts[self.classes.index(true), self.classes.index(predicted)])

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def confusion(truths: Sequence[str], predictions: Sequence[str], classes: Sequence[str] | None = None) -> ConfusionMatrix:
    if len(truths) != len(predictions):
        raise ValueError(f"length mismatch: {len(truths)} truths vs {len(predictions)} predictions")
    if classes is None:
        classes = sorted(set(truths) | set(predictions))
    classes = tuple(classes)
    index = {c: n for n, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truths, predictions):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def _split_rows(cm: ConfusionMatrix):
    if NORMAL not in cm.classes:
        raise ValueError("confusion matrix has no 'normal' class")
    k = cm.classes.index(NORMAL)
    attack_rows = [n for n in range(len(cm.classes)) if n != k]
    return k, attack_rows


def detection_rate(cm: ConfusionMatrix, strict: bool = True) -> float:
    """Percentage of attack records detected.

    Strict counts an attack only when it is predicted as its own class; lenient
    accepts any non-normal prediction. For a binary normal/attack matrix the two
    coincide.
    """
    k, rows = _split_rows(cm)
    total = cm.counts[rows].sum()
    if total == 0:
        raise ValueError("no attack records in confusion matrix")
    if strict:
        hit = sum(cm.counts[r, r] for r in rows)
    else:
        hit = total - cm.counts[rows, k].sum()
    return 100.0 * float(hit) / float(total)


def false_positive_rate(cm: ConfusionMatrix) -> float:
    k, _ = _split_rows(cm)
    row = cm.counts[k]
    if row.sum() == 0:
        raise ValueError("no normal records in confusion matrix")
    return 100.0 * float(row.sum() - row[k]) / float(row.sum())


def true_negative_rate(cm: ConfusionMatrix) -> float:
    k, _ = _split_rows(cm)
    row = cm.counts[k]
    if row.sum() == 0:
        raise ValueError("no normal records in confusion matrix")
    return 100.0 * float(row[k]) / float(row.sum())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return 100.0 * float(np.trace(cm.counts)) / cm.total


def per_class_recall(cm: ConfusionMatrix) -> dict[str, float]:
    out = {}
    for n, c in enumerate(cm.classes):
        support = cm.counts[n].sum()
        if support:
            out[c] = 100.0 * float(cm.counts[n, n]) / float(support)
    return out


@dataclass(frozen=True)
class LayerMetrics:
    layer: str
    detection_rate: float
    detection_rate_lenient: float
    false_positive_rate: float
    accuracy: float
    per_class_recall: dict[str, float]
    confusion: ConfusionMatrix

    @classmethod
    def from_confusion(cls, layer: str, cm: ConfusionMatrix) -> "LayerMetrics":
        return cls(layer, detection_rate(cm, strict=True), detection_rate(cm, strict=False),
                   false_positive_rate(cm), accuracy(cm), per_class_recall(cm), cm)


@dataclass
class ResourceStats:
    runtimes: list[float] = field(default_factory=list)
    peak_mem_mb: list[float] = field(default_factory=list)

    @property
    def run_count(self) -> int:
        return len(self.runtimes)

    @property
    def mean_runtime(self) -> float:
        return float(np.mean(self.runtimes))

    @property
    def mean_peak_mem_mb(self) -> float:
        return float(np.mean(self.peak_mem_mb))

    def to_dict(self) -> dict:
        return {"runtimes_s": self.runtimes, "peak_mem_mb": self.peak_mem_mb,
                "mean_runtime_s": self.mean_runtime, "mean_peak_mem_mb": self.mean_peak_mem_mb}


class _RssSampler(threading.Thread):
    def __init__(self, interval: float):
        super().__init__(daemon=True)
        self.proc = psutil.Process()
        self.interval = interval
        self.peak = self.proc.memory_info().rss
        self._stop_evt = threading.Event()

    def run(self):
        while not self._stop_evt.is_set():
            self.peak = max(self.peak, self.proc.memory_info().rss)
            self._stop_evt.wait(self.interval)

    def stop(self) -> int:
        self._stop_evt.set()
        self.join()
        return max(self.peak, self.proc.memory_info().rss)


def measure(run: Callable[[], object], repeats: int = 10, sample_interval: float = 0.002) -> ResourceStats:
    """Time ``run`` ``repeats`` times, one after another.

    Peak memory is the largest resident set size of this process observed while
    each run executes, sampled from a background thread.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    stats = ResourceStats()
    for _ in range(repeats):
        sampler = _RssSampler(sample_interval)
        sampler.start()
        t0 = time.perf_counter()
        try:
            run()
        finally:
            elapsed = time.perf_counter() - t0
            peak = sampler.stop()
        stats.runtimes.append(elapsed)
        stats.peak_mem_mb.append(peak / 2**20)
    return stats


# --- layer evaluation ------------------------------------------------------------


def layer_truths(records: Sequence[TrafficRecord], layer: str) -> list[str]:
    """Ground truth for a layer from records carrying their exact class labels."""
    if layer == ANOMALY:
        return [NORMAL if r.label == NORMAL else ATTACK for r in records]
    return [r.label for r in records]


def evaluate_layers(ids: LayeredIDS, records: Sequence[TrafficRecord], X: np.ndarray | None = None) -> dict[str, LayerMetrics]:
    """Metrics for all three layers on one test split with exact class labels."""
    if X is None:
        X = ids.encode(records)
    out = {}
    for layer in LAYERS:
        preds = [v.label for v in ids.classify_batch(layer, X)]
        truths = layer_truths(records, layer)
        classes = sorted(set(truths) | set(preds) | {NORMAL})
        out[layer] = LayerMetrics.from_confusion(layer, confusion(truths, preds, classes))
    return out


def time_layers(ids: LayeredIDS, X: np.ndarray, repeats: int = 10) -> dict[str, ResourceStats]:
    """Time one classification pass over the test split per layer.

    The hybrid pass runs both detectors on every record before the decision
    unit, so its cost covers the anomaly and the misuse pass.
    """
    return {
        ANOMALY: measure(lambda: ids.classify_batch(ANOMALY, X), repeats),
        MISUSE: measure(lambda: ids.classify_batch(MISUSE, X), repeats),
        HYBRID: measure(lambda: ids.classify_batch(HYBRID, X, lazy=False), repeats),
    }


def emit_report(metrics: Mapping[str, LayerMetrics], resources: Mapping[str, ResourceStats], out_dir) -> tuple[Path, Path]:
    """Write ``report.csv`` (one row per layer) and ``report.json`` (full matrices)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = [l for l in LAYERS if l in metrics] + sorted(set(metrics) - set(LAYERS))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for layer in layers:
        m = metrics[layer]
        r = resources.get(layer)
        w.writerow([layer, f"{m.detection_rate:.2f}", f"{m.detection_rate_lenient:.2f}",
                    f"{m.false_positive_rate:.2f}", f"{m.accuracy:.2f}",
                    f"{r.mean_runtime:.4f}" if r else "", f"{r.mean_peak_mem_mb:.3f}" if r else ""])
    csv_path = out_dir / "report.csv"
    csv_path.write_text(buf.getvalue())
    body = {
        layer: {
            "dr_strict": metrics[layer].detection_rate,
            "dr_lenient": metrics[layer].detection_rate_lenient,
            "fpr": metrics[layer].false_positive_rate,
            "accuracy": metrics[layer].accuracy,
            "per_class_recall": metrics[layer].per_class_recall,
            "confusion": metrics[layer].confusion.to_dict(),
            "resources": resources[layer].to_dict() if layer in resources else None,
        }
        for layer in layers
    }
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
