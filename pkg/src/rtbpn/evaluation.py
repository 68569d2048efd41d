"""Temporal IoU, NMS, R@n,IoU=m and mIoU.

Spans here are half-open intervals in seconds. Frame-index proposals are
converted with ``spans_from_proposals``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .proposals import enumerate_valid

Span = Tuple[float, float]
Scored = Tuple[Span, float]

DEFAULT_NS = (1, 5)
DEFAULT_MS = (0.3, 0.5, 0.7)
NMS_THRESHOLD = 0.55


def temporal_iou(a: Span, b: Span) -> float:
    if a[1] < a[0] or b[1] < b[0]:
        raise ValueError(f"spans must have non-negative length: {a}, {b}")
    if a[0] == a[1] or b[0] == b[1]:
        return 1.0 if tuple(a) == tuple(b) else 0.0
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    return inter / (max(a[1], b[1]) - min(a[0], b[0]))


def nms(preds: Sequence[Scored], threshold: float = NMS_THRESHOLD) -> List[Scored]:
    """Greedy suppression over a list already sorted by descending score."""
    kept: List[Scored] = []
    for span, score in preds:
        if all(temporal_iou(span, k) <= threshold for k, _ in kept):
            kept.append((span, score))
    return kept


def recall_at(preds: Sequence[Sequence[Scored]], gts: Sequence[Span], n: int, m: float) -> float:
    """Percentage of samples where any of the first n predictions has IoU > m."""
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truth differ in length")
    if not gts:
        return 0.0
    hits = sum(any(temporal_iou(span, gt) > m for span, _ in p[:n]) for p, gt in zip(preds, gts))
    return 100.0 * hits / len(gts)


def mean_iou(preds: Sequence[Sequence[Scored]], gts: Sequence[Span]) -> float:
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truth differ in length")
    if not gts:
        return 0.0
    return sum(temporal_iou(p[0][0], gt) if p else 0.0 for p, gt in zip(preds, gts)) / len(gts)


@dataclass
class PredictionRecord:
    video_id: str
    spans: List[Scored]

    def to_json(self) -> dict:
        return {"video_id": self.video_id, "spans": [[s[0], s[1], c] for s, c in self.spans]}

    @classmethod
    def from_json(cls, d: dict) -> "PredictionRecord":
        return cls(d["video_id"], [((float(s), float(e)), float(c)) for s, e, c in d["spans"]])


def spans_from_proposals(proposals, seconds_per_index: float, video_id: str = "") -> PredictionRecord:
    """Inclusive index pair (s, e) -> [s * spi, (e + 1) * spi), sorted by score."""
    scores = [float(c) for c in proposals.scores.detach().cpu().tolist()]
    spans = [((s * seconds_per_index, (e + 1) * seconds_per_index), c)
             for (s, e), c in zip(proposals.boundaries, scores)]
    spans.sort(key=lambda x: -x[1])  # stable: score ties keep selection order
    return PredictionRecord(video_id, spans)


@dataclass
class EvalReport:
    recall: Dict[Tuple[int, float], float]
    miou: float
    num_samples: int
    extra: Dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "recall": {f"R@{n},IoU={m}": v for (n, m), v in sorted(self.recall.items())},
            "miou": self.miou,
            "num_samples": self.num_samples,
            **({"extra": self.extra} if self.extra else {}),
        }

    def table(self) -> str:
        ns = sorted({n for n, _ in self.recall})
        ms = sorted({m for _, m in self.recall})
        header = " | ".join(" ".join(f"IoU={m:<4}" for m in ms) for _ in ns)
        groups = " | ".join(f"{f'R@{n}':<{len(ms) * 9 - 1}}" for n in ns)
        row = " | ".join(" ".join(f"{self.recall[(n, m)]:8.2f}" for m in ms) for n in ns)
        return "\n".join([groups, header, row, f"mIoU={self.miou:.4f}  (n={self.num_samples})"])


def evaluate(records: Sequence[PredictionRecord], gts: Sequence[Span], ns: Iterable[int] = DEFAULT_NS,
             ms: Iterable[float] = DEFAULT_MS, nms_threshold: float = NMS_THRESHOLD) -> EvalReport:
    """NMS is applied before top-n; the head is always kept, so R@1 and mIoU use the raw top proposal."""
    ranked = [nms(r.spans, nms_threshold) for r in records]
    recall = {(n, m): recall_at(ranked, gts, n, m) for n in ns for m in ms}
    return EvalReport(recall, mean_iou(ranked, gts), len(gts))


def write_predictions(path, records: Iterable[PredictionRecord]) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_json()) + "\n")


def read_predictions(path) -> List[PredictionRecord]:
    with open(path) as f:
        return [PredictionRecord.from_json(json.loads(line)) for line in f if line.strip()]


def write_report(path, report: EvalReport) -> None:
    path = Path(path)
    with open(path, "w") as f:
        json.dump(report.to_json(), f, indent=2)
    path.with_suffix(".txt").write_text(report.table() + "\n")


def random_proposal_recall(videos: Sequence[Tuple[int, float, Span]], rule, m: float = 0.5, draws: int = 2000,
                           seed: int = 0) -> float:
    """Monte-Carlo R@1,IoU=m of a predictor that picks a uniformly random valid moment.

    videos holds (n_v, seconds_per_index, gt_span_seconds) per test sample.
    """
    rng = np.random.default_rng(seed)
    hits = []
    for n_v, spi, gt in videos:
        cells = enumerate_valid(rule, n_v)
        ious = np.array([temporal_iou((a * spi, (b + 1) * spi), gt) for a, b in cells])
        picks = rng.integers(0, len(cells), size=draws)
        hits.append(np.mean(ious[picks] > m))
    return 100.0 * float(np.mean(hits)) if hits else 0.0
