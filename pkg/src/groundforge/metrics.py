"""gIoU, cIoU, Acc@tau and per-category report aggregation.

gIoU is the arithmetic mean of per-sample mask IoU (size-balanced).
cIoU is cumulative: total intersection over total union across the set,
which is what gives it the documented bias toward larger objects.
"All" pools every sample; for gIoU that equals the count-weighted mean of
category scores, for cIoU it deliberately does not.
Scores live in [0, 1]; the x100 presentation happens only in the
formatting layer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    MissingCategoryError,
    UnknownCategoryError,
)
from .maskcore import BBox, BinaryMask, RleMask, as_binary, box_iou

CATEGORIES = ("stuff", "part", "multi", "single")

_METRIC_LABELS = {"giou": "gIoU", "ciou": "cIoU"}


@dataclass(frozen=True)
class MaskPair:
    sample_id: str
    prediction: "BinaryMask | RleMask"
    ground_truth: "BinaryMask | RleMask"
    category: str | None = None

    def __post_init__(self):
        if self.category is not None and self.category not in CATEGORIES:
            raise UnknownCategoryError(f"{self.sample_id}: {self.category!r}")


@dataclass(frozen=True)
class BoxPair:
    sample_id: str
    prediction: "BBox | None"  # None scores as a miss (IoU 0)
    ground_truth: BBox
    category: str | None = None

    def __post_init__(self):
        if self.category is not None and self.category not in CATEGORIES:
            raise UnknownCategoryError(f"{self.sample_id}: {self.category!r}")


@dataclass
class _PairSums:
    """Associative partial sums; merging partitions must be order-free."""

    n: int = 0
    inter: int = 0
    union: int = 0
    iou_sum: float = 0.0

    def add(self, pair: MaskPair) -> None:
        pred = as_binary(pair.prediction)
        gt = as_binary(pair.ground_truth)
        if not pred.same_size(gt):
            raise DimensionMismatchError(
                f"{pair.sample_id}: prediction {pred.width}x{pred.height} "
                f"vs ground truth {gt.width}x{gt.height}"
            )
        inter = int(np.logical_and(pred.bits, gt.bits).sum())
        union = int(np.logical_or(pred.bits, gt.bits).sum())
        self.n += 1
        self.inter += inter
        self.union += union
        self.iou_sum += 1.0 if union == 0 else inter / union

    def merge(self, other: "_PairSums") -> "_PairSums":
        return _PairSums(
            n=self.n + other.n,
            inter=self.inter + other.inter,
            union=self.union + other.union,
            iou_sum=self.iou_sum + other.iou_sum,
        )

    @classmethod
    def over(cls, pairs) -> "_PairSums":
        sums = cls()
        for pair in pairs:
            sums.add(pair)
        return sums

    @property
    def giou(self) -> float:
        return self.iou_sum / self.n

    @property
    def ciou(self) -> float:
        # all pairs empty-vs-empty: perfect agreement by convention
        return 1.0 if self.union == 0 else self.inter / self.union


def giou(pairs: list[MaskPair]) -> float:
    """Mean of per-pair mask IoU."""
    if not pairs:
        raise EmptyInputError("giou over an empty pair list")
    return _PairSums.over(pairs).giou


def ciou(pairs: list[MaskPair]) -> float:
    """Cumulative intersection over cumulative union."""
    if not pairs:
        raise EmptyInputError("ciou over an empty pair list")
    return _PairSums.over(pairs).ciou


def acc_at(pairs: list[BoxPair], threshold: float) -> float:
    """Fraction of pairs whose box IoU meets the threshold (inclusive)."""
    if not pairs:
        raise EmptyInputError("acc_at over an empty pair list")
    if not (0.0 < threshold <= 1.0):
        raise ValueError(f"threshold must be in (0,1], got {threshold}")
    hits = 0
    for pair in pairs:
        if pair.prediction is None:
            continue
        if box_iou(pair.prediction, pair.ground_truth) >= threshold:
            hits += 1
    return hits / len(pairs)


@dataclass
class EvalReport:
    """One metric across categories; the Table-2/3 row shape."""

    metric: str
    per_category: dict[str, float]
    overall: float
    counts: dict[str, int]
    total: int
    threshold: float | None = None

    @property
    def metric_label(self) -> str:
        if self.metric == "acc":
            return f"Acc@{self.threshold:g}"
        return _METRIC_LABELS.get(self.metric, self.metric)

    def to_json(self) -> dict:
        obj = {
            "metric": self.metric,
            "per_category": {k: self.per_category[k] for k in CATEGORIES if k in self.per_category},
            "all": self.overall,
            "counts": {k: self.counts[k] for k in CATEGORIES if k in self.counts},
            "total": self.total,
        }
        if self.threshold is not None:
            obj["threshold"] = self.threshold
        return obj


def _split_by_category(pairs):
    buckets: dict[str, list] = {}
    for pair in pairs:
        if pair.category is None:
            raise MissingCategoryError(pair.sample_id)
        buckets.setdefault(pair.category, []).append(pair)
    return buckets


def report(pairs, metric: str, threshold: float | None = None,
           per_category: bool = True) -> EvalReport:
    """Per-category scores plus "All" computed over the full pair set.

    "All" is pooled, never a mean of category scores — identical for gIoU,
    different (and intended) for cIoU and Acc.
    """
    if not pairs:
        raise EmptyInputError("report over an empty pair list")
    if metric in ("giou", "ciou"):
        score = giou if metric == "giou" else ciou
    elif metric == "acc":
        if threshold is None:
            threshold = 0.5
        def score(ps, _t=threshold):
            return acc_at(ps, _t)
    else:
        raise ValueError(f"unknown metric {metric!r}")

    if not per_category:
        return EvalReport(
            metric=metric,
            per_category={},
            overall=score(list(pairs)),
            counts={},
            total=len(pairs),
            threshold=threshold if metric == "acc" else None,
        )

    buckets = _split_by_category(pairs)
    return EvalReport(
        metric=metric,
        per_category={cat: score(bucket) for cat, bucket in buckets.items()},
        overall=score(list(pairs)),
        counts={cat: len(bucket) for cat, bucket in buckets.items()},
        total=len(pairs),
        threshold=threshold if metric == "acc" else None,
    )


# -- prediction ingestion -------------------------------------------------------


def read_prediction_file(path) -> dict[str, dict]:
    """JSONL of {"sample_id", "mask": RLE} or {"sample_id", "bbox": [...]}."""
    preds: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sample_id = obj["sample_id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction record") from exc
            preds[sample_id] = obj
    return preds


def build_mask_pairs(gt_records: list[dict], predictions: dict[str, dict]):
    """Join ground truth with predictions; a missing prediction scores as an
    empty mask. Returns (pairs, missing_ids)."""
    pairs: list[MaskPair] = []
    missing: list[str] = []
    for rec in gt_records:
        gt_mask = RleMask.from_json(rec["mask"])
        pred_obj = predictions.get(rec["sample_id"])
        if pred_obj is None or "mask" not in pred_obj:
            missing.append(rec["sample_id"])
            pred_mask: "BinaryMask | RleMask" = BinaryMask.zeros(gt_mask.width, gt_mask.height)
        else:
            pred_mask = RleMask.from_json(pred_obj["mask"])
        pairs.append(MaskPair(
            sample_id=rec["sample_id"],
            prediction=pred_mask,
            ground_truth=gt_mask,
            category=rec.get("category"),
        ))
    return pairs, missing


def build_box_pairs(gt_records: list[dict], predictions: dict[str, dict]):
    """Join ground truth boxes with predictions; missing predictions are
    misses. Returns (pairs, missing_ids)."""
    pairs: list[BoxPair] = []
    missing: list[str] = []
    for rec in gt_records:
        pred_obj = predictions.get(rec["sample_id"])
        if pred_obj is None or "bbox" not in pred_obj:
            missing.append(rec["sample_id"])
            pred_box = None
        else:
            pred_box = BBox.from_list(pred_obj["bbox"])
        pairs.append(BoxPair(
            sample_id=rec["sample_id"],
            prediction=pred_box,
            ground_truth=BBox.from_list(rec["bbox"]),
            category=rec.get("category"),
        ))
    return pairs, missing


# -- presentation ----------------------------------------------------------------


def format_report_table(rows: list[tuple[str, EvalReport]]) -> str:
    """Aligned-column text table: categories as columns, methods as rows."""
    headers = ["Method", "Metric", "Stuff", "Part", "Multi", "Single", "All"]
    body: list[list[str]] = []
    for method, rep in rows:
        cells = [method, rep.metric_label]
        for cat in CATEGORIES:
            value = rep.per_category.get(cat)
            cells.append("-" if value is None else f"{value * 100:.1f}")
        cells.append(f"{rep.overall * 100:.1f}")
        body.append(cells)
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body else len(headers[i])
              for i in range(len(headers))]
    def fmt(cells):
        left = cells[0].ljust(widths[0])
        rest = [cells[i].rjust(widths[i]) for i in range(1, len(cells))]
        return "  ".join([left] + rest).rstrip()
    lines = [fmt(headers)]
    lines.append("-" * len(lines[0]))
    lines.extend(fmt(r) for r in body)
    return "\n".join(lines) + "\n"
