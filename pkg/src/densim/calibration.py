"""Detector evaluation against labelled boxes and (p, lambda) calibration.

Matching follows the Pascal VOC greedy protocol: detections are visited in
descending score order and each claims the unmatched ground-truth box with the
highest IoU at or above the threshold. Later detections of an already claimed
box count as false positives.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import theory

DEFAULT_SCORE_MIN = 0.7
DEFAULT_MIN_HEIGHT = 120.0
DEFAULT_IOU_MIN = 0.5


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate box {self}")

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class MatchResult:
    true_positives: list[tuple[Detection, BBox]] = field(default_factory=list)
    false_positives: list[Detection] = field(default_factory=list)
    false_negatives: list[BBox] = field(default_factory=list)

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.true_positives), len(self.false_positives), len(self.false_negatives)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def match_detections(dets, gts, iou_min: float = DEFAULT_IOU_MIN,
                     min_height: float = DEFAULT_MIN_HEIGHT,
                     score_min: float = DEFAULT_SCORE_MIN) -> MatchResult:
    gts = [g for g in gts if g.height >= min_height]
    dets = [d for d in dets if d.bbox.height >= min_height and d.score >= score_min]
    dets.sort(key=lambda d: (-d.score, d.bbox.x_min, d.bbox.y_min))

    result = MatchResult()
    taken = [False] * len(gts)
    for d in dets:
        best, best_iou = -1, iou_min
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            o = iou(d.bbox, g)
            if o > best_iou or (o == best_iou and best < 0):
                best, best_iou = j, o
        if best >= 0:
            taken[best] = True
            result.true_positives.append((d, gts[best]))
        else:
            result.false_positives.append(d)
    result.false_negatives = [g for g, t in zip(gts, taken) if not t]
    return result


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Zero denominators count as perfect (nothing to get wrong)."""
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def pr_curve(dets_by_image: dict, gts_by_image: dict, score_thresholds,
             min_height: float = DEFAULT_MIN_HEIGHT,
             iou_min: float = DEFAULT_IOU_MIN) -> list[tuple[float, float, float]]:
    thresholds = list(score_thresholds)
    if not thresholds:
        raise ValueError("need at least one score threshold")
    images = sorted(set(dets_by_image) | set(gts_by_image), key=str)
    curve = []
    for t in thresholds:
        tp = fp = fn = 0
        for img in images:
            m = match_detections(dets_by_image.get(img, []), gts_by_image.get(img, []),
                                 iou_min=iou_min, min_height=min_height, score_min=t)
            a, b, c = m.counts
            tp, fp, fn = tp + a, fp + b, fn + c
        curve.append((float(t), *precision_recall(tp, fp, fn)))
    return curve


# -- sensing-parameter fit ------------------------------------------------------

@dataclass
class SensingFit:
    p: float
    lam: float
    stderr_p: float
    stderr_lam: float
    n: int
    residual_std: float
    mean_residual_by_count: dict[int, float]

    def as_dict(self) -> dict:
        return {
            "p": self.p, "lambda": self.lam,
            "stderr_p": self.stderr_p, "stderr_lambda": self.stderr_lam,
            "n": self.n, "residual_std": self.residual_std,
            "mean_residual_by_count": {str(k): v for k, v in self.mean_residual_by_count.items()},
        }


def fit_sensing_params(pairs) -> SensingFit:
    """Ordinary least squares of ``measured = p * true + lambda``."""
    arr = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    x, y = arr[:, 0], arr[:, 1]
    n = len(x)
    xbar, ybar = x.mean() if n else 0.0, y.mean() if n else 0.0
    sxx = float(((x - xbar) ** 2).sum())
    if n < 2 or sxx == 0.0:
        raise np.linalg.LinAlgError("need at least two distinct true counts")
    p = float(((x - xbar) * (y - ybar)).sum() / sxx)
    lam = float(ybar - p * xbar)
    resid = y - (p * x + lam)
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        se_p = math.sqrt(s2 / sxx)
        se_lam = math.sqrt(s2 * (1.0 / n + xbar * xbar / sxx))
    else:
        s2 = se_p = se_lam = math.nan
    by_count = defaultdict(list)
    for xi, ri in zip(x, resid):
        by_count[int(round(xi))].append(ri)
    diag = {k: float(np.mean(v)) for k, v in sorted(by_count.items())}
    return SensingFit(p, lam, se_p, se_lam, n, math.sqrt(s2) if n > 2 else math.nan, diag)


def calibration_report(fit: SensingFit, h_hat: float) -> dict:
    report = {**fit.as_dict(), "h_hat": h_hat}
    report["h_unbiased"] = theory.unbiased_h(h_hat, fit.p, fit.lam) if fit.p > 0 else None
    try:
        report["bound"] = theory.bound_from_sampled_density(fit.lam, h_hat)
        report["bound_informative"] = True
    except theory.UninformativeBound:
        report["bound"] = None
        report["bound_informative"] = False
    return report


def image_counts(dets_by_image: dict, gts_by_image: dict,
                 min_height: float = DEFAULT_MIN_HEIGHT,
                 score_min: float = DEFAULT_SCORE_MIN) -> list[tuple[int, int]]:
    """Per image: (ground-truth people, detected people) after thresholds."""
    out = []
    for img in sorted(set(dets_by_image) | set(gts_by_image), key=str):
        n_true = sum(1 for g in gts_by_image.get(img, []) if g.height >= min_height)
        n_meas = sum(1 for d in dets_by_image.get(img, [])
                     if d.bbox.height >= min_height and d.score >= score_min)
        out.append((n_true, n_meas))
    return out


# -- files ------------------------------------------------------------------------

def _box(row, lineno, path) -> BBox:
    try:
        return BBox(float(row["x_min"]), float(row["y_min"]), float(row["x_max"]), float(row["y_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}:{lineno}: {exc}") from None


def load_detections(path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = defaultdict(list)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            box = _box(row, lineno, path)
            try:
                out[row["image_id"]].append(Detection(box, float(row["score"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return dict(out)


def load_ground_truth(path) -> dict[str, list[BBox]]:
    out: dict[str, list[BBox]] = defaultdict(list)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            out[row["image_id"]].append(_box(row, lineno, path))
    return dict(out)


def write_pr_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, prec, rec in curve:
            w.writerow([repr(t), repr(prec), repr(rec)])
