"""Per-nodule confidence from annotator scores and nearby support.

    C(n) = alpha * s_owner + (1 - alpha) * support(n)

``support`` sums kernel-weighted scores of nodules placed by *other*
annotators on the same image. By default each other annotator contributes at
most once (its nearest nodule) and the sum is divided by the number of other
annotators of the image, which keeps C in [0, 1]. ``raw_sum=True`` restores
the plain sum over every other-annotator nodule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from annoclear.annotations import AnnotationTable, NoduleRecord
from annoclear.annotator_scoring import ScoreState


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "epanechnikov"
    bandwidth_mm: float = 20.0

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if not self.bandwidth_mm > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth_mm}")


@dataclass(frozen=True)
class NoduleScoringConfig:
    alpha: float = 0.7
    kernel: KernelSpec = field(default_factory=KernelSpec)
    raw_sum: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class NoduleConfidence:
    nodule: NoduleRecord
    confidence: float


def kernel_eval(spec: KernelSpec, r: float) -> float:
    """Epanechnikov profile scaled to K(0) = 1, zero from ``bandwidth`` on."""
    u = r / spec.bandwidth_mm
    return max(0.0, 1.0 - u * u)


def _image_confidences(nodules_by_annotator, smap, config: NoduleScoringConfig) -> list[NoduleConfidence]:
    alpha = config.alpha
    annotators = sorted(nodules_by_annotator)
    centers = {a: np.array([n.center for n in nodules_by_annotator[a]]).reshape(-1, 3) for a in annotators}
    out = []
    for owner in annotators:
        others = [a for a in annotators if a != owner]
        for nod in nodules_by_annotator[owner]:
            terms = []
            for a in others:
                if centers[a].shape[0] == 0:
                    continue
                dists = np.linalg.norm(centers[a] - np.asarray(nod.center), axis=1)
                if config.raw_sum:
                    terms.extend(kernel_eval(config.kernel, float(d)) * smap[a] for d in dists)
                else:
                    terms.append(kernel_eval(config.kernel, float(dists.min())) * smap[a])
            support = math.fsum(terms)
            if not config.raw_sum:
                support /= max(1, len(others))
            out.append(NoduleConfidence(nod, alpha * smap[owner] + (1.0 - alpha) * support))
    return out


def score_nodules(table: AnnotationTable, scores: Union[ScoreState, Mapping[str, float]],
                  config: NoduleScoringConfig = NoduleScoringConfig()) -> list[NoduleConfidence]:
    """Confidence for every nodule of ``table``, ordered by image then annotator."""
    smap = scores.scores if isinstance(scores, ScoreState) else scores
    missing = sorted(set(table.annotator_ids) - set(smap))
    if missing:
        raise KeyError(f"no annotator score for {missing}")
    out = []
    for image_id in table.image_ids:
        out.extend(_image_confidences(table.nodules_by_annotator(image_id), smap, config))
    return out


def with_confidences(confidences: list[NoduleConfidence]) -> list[NoduleRecord]:
    """Copies of the scored nodules carrying their confidence."""
    return [NoduleRecord(c.nodule.image_id, c.nodule.annotator_id, c.nodule.center, c.nodule.radii,
                         c.confidence) for c in confidences]


def write_nodule_scores(confidences: list[NoduleConfidence], path) -> None:
    rows = sorted(
        ((c.nodule.image_id, c.nodule.annotator_id, *c.nodule.center, c.confidence) for c in confidences),
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "annotator_id", "z_mm", "y_mm", "x_mm", "confidence"])
        for image_id, annotator_id, *vals in rows:
            writer.writerow([image_id, annotator_id, *(repr(float(v)) for v in vals)])


def read_nodule_scores(path) -> list[tuple[str, str, tuple[float, float, float], float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["image_id", "annotator_id", "z_mm", "y_mm", "x_mm", "confidence"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [(r["image_id"], r["annotator_id"], (float(r["z_mm"]), float(r["y_mm"]), float(r["x_mm"])),
                 float(r["confidence"])) for r in reader]


def attach_confidences(table: AnnotationTable, scored) -> list[NoduleConfidence]:
    """Match rows from :func:`read_nodule_scores` back onto the nodules of ``table``.

    Rows are keyed by (image, annotator, center); coincident nodules of one
    annotator share a confidence, so the match is unambiguous.
    """
    lookup: dict = {}
    for image_id, annotator_id, center, conf in scored:
        lookup.setdefault((image_id, annotator_id, center), conf)
    out = []
    for nod in table.nodules:
        key = (nod.image_id, nod.annotator_id, nod.center)
        if key not in lookup:
            raise KeyError(f"no confidence for nodule {key}")
        out.append(NoduleConfidence(nod, lookup[key]))
    return out
