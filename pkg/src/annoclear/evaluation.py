"""Pixelwise sensitivity, 1 - specificity and IoU against synthetic ground truth.

All candidate nodules of an image are OR-ed into one mask regardless of
annotator, and compared voxel by voxel with the truth mask on the full image
volume. The aggregate row pools confusion counts over images.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from annoclear.annotations import AnnotationTable
from annoclear.rasterize import VoxelGrid, rasterize_into
from annoclear.synthetic import GroundTruth, TruthImage


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def sensitivity(self) -> float:
        # no true voxels: nothing can be missed
        pos = self.tp + self.fn
        return self.tp / pos if pos else 1.0

    @property
    def one_minus_specificity(self) -> float:
        neg = self.fp + self.tn
        return self.fp / neg if neg else 0.0

    @property
    def iou(self) -> float:
        union = self.tp + self.fp + self.fn
        return self.tp / union if union else 1.0


@dataclass(frozen=True)
class MetricsReport:
    per_image: list[tuple[str, Confusion]]

    @property
    def aggregate(self) -> Confusion:
        total = Confusion(0, 0, 0, 0)
        for _, c in self.per_image:
            total = total + c
        return total

    def rows(self) -> list[tuple[str, float, float, float]]:
        items = self.per_image + [("ALL", self.aggregate)]
        return [(name, c.sensitivity, c.one_minus_specificity, c.iou) for name, c in items]

    def summary(self) -> str:
        agg = self.aggregate
        return (f"{len(self.per_image)} images: sensitivity {agg.sensitivity:.4f}, "
                f"1-specificity {agg.one_minus_specificity:.3e}, IoU {agg.iou:.4f}")


def volume_grid(image: TruthImage, spacing=(2.0, 2.0, 2.0)) -> VoxelGrid:
    shape = tuple(max(1, math.ceil(v / s - 1e-9)) for v, s in zip(image.volume_mm, spacing))
    return VoxelGrid((0.0, 0.0, 0.0), tuple(spacing), shape)


def confusion_counts(truth_mask: np.ndarray, candidate_mask: np.ndarray) -> Confusion:
    tp = int(np.count_nonzero(truth_mask & candidate_mask))
    t = int(np.count_nonzero(truth_mask))
    c = int(np.count_nonzero(candidate_mask))
    fp, fn = c - tp, t - tp
    return Confusion(tp, fp, fn, truth_mask.size - tp - fp - fn)


def evaluate_image(image: TruthImage, candidate: AnnotationTable, spacing=(2.0, 2.0, 2.0)) -> Confusion:
    grid = volume_grid(image, spacing)
    truth_mask = rasterize_into(np.zeros(grid.shape, dtype=bool), image.nodules, grid)
    cand = [n.ellipsoid for n in candidate.nodules_on(image.image_id)]
    cand_mask = rasterize_into(np.zeros(grid.shape, dtype=bool), cand, grid)
    return confusion_counts(truth_mask, cand_mask)


def evaluate(candidate: AnnotationTable, truth: GroundTruth, grid_spacing=(2.0, 2.0, 2.0),
             threads: int = 1) -> MetricsReport:
    unknown = sorted(set(candidate.image_ids) - set(truth.image_ids))
    if unknown:
        raise KeyError(f"candidate references images missing from the truth: {unknown}")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        counts = list(pool.map(lambda img: evaluate_image(img, candidate, grid_spacing), truth.images))
    return MetricsReport([(img.image_id, c) for img, c in zip(truth.images, counts)])


def write_metrics(report: MetricsReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "sensitivity", "one_minus_specificity", "iou"])
        for name, sens, fpr, iou in report.rows():
            writer.writerow([name, repr(sens), repr(fpr), repr(iou)])
