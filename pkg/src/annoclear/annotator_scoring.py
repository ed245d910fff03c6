"""Annotator reliability from consiliums.

A consilium compares one annotator (the subject) on one image with a
score-weighted blend of two other annotators of that image. An annotator's
new score is the mean soft Dice over all of its consiliums; iterating the
update from uniform scores 0.5 lets reliable annotators dominate the blends.

Because the subject mask and both pair masks are binary, the soft Dice only
depends on mask sizes and pairwise intersection sizes:

    Dice(M, w1 M1 + w2 M2) = 2 (w1 |M M1| + w2 |M M2|) / (|M| + w1 |M1| + w2 |M2|)

:class:`ImageOverlaps` precomputes those counts once per image, so an
iteration costs arithmetic only. :func:`consilium_dice` keeps the direct
rasterize-blend-Dice route.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from annoclear.annotations import AnnotationTable
from annoclear.rasterize import (
    bounding_grid,
    dice,
    intersection_size,
    rasterize_nodules,
    soft_combine,
    voxel_keys,
)

logger = logging.getLogger(__name__)

INITIAL_SCORE = 0.5


@dataclass(frozen=True)
class RasterConfig:
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    pad: float = 8.0


@dataclass(frozen=True)
class ScoringConfig:
    iterations: int = 10
    tol: float = 1e-4
    raster: RasterConfig = field(default_factory=RasterConfig)
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class ScoreState:
    scores: dict[str, float]
    iteration: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history = [dict(self.scores)]
        if len(self.history) != self.iteration + 1:
            raise ValueError("history must hold iteration + 1 score maps")

    @classmethod
    def initial(cls, annotators, value: float = INITIAL_SCORE) -> "ScoreState":
        return cls({a: float(value) for a in sorted(annotators)})

    def max_change(self) -> float:
        """Largest per-annotator change made by the last iteration."""
        if self.iteration == 0:
            return math.inf
        prev, cur = self.history[-2], self.history[-1]
        return max((abs(cur[a] - prev[a]) for a in cur), default=0.0)


@dataclass(frozen=True, order=True)
class Consilium:
    image_id: str
    subject: str
    pair: tuple[str, str]

    def __post_init__(self):
        pair = tuple(sorted(self.pair))
        if len(pair) != 2 or pair[0] == pair[1] or self.subject in pair:
            raise ValueError(f"invalid consilium pair {self.pair} for subject {self.subject!r}")
        object.__setattr__(self, "pair", pair)


def _score_map(scores: Union[ScoreState, Mapping[str, float]]) -> Mapping[str, float]:
    return scores.scores if isinstance(scores, ScoreState) else scores


def pair_weights(s1: float, s2: float) -> tuple[float, float]:
    total = s1 + s2
    if total == 0.0:
        warnings.warn("both consilium members score 0; using equal weights", RuntimeWarning,
                      stacklevel=3)
        return 0.5, 0.5
    return s1 / total, s2 / total


def enumerate_consiliums(table: AnnotationTable, subject: str) -> list[Consilium]:
    out = []
    for image_id in table.image_ids:
        annotators = table.nodules_by_annotator(image_id)
        if subject not in annotators:
            continue
        others = sorted(a for a in annotators if a != subject)
        out.extend(Consilium(image_id, subject, pair) for pair in itertools.combinations(others, 2))
    return out


def consilium_dice(table: AnnotationTable, c: Consilium, scores, raster: RasterConfig = RasterConfig()) -> float:
    """Dice of the subject's mask against the weighted blend of the pair, by rasterization."""
    by_annotator = table.nodules_by_annotator(c.image_id)
    d1, d2 = c.pair
    members = [by_annotator[c.subject], by_annotator[d1], by_annotator[d2]]
    ells = [[n.ellipsoid for n in nods] for nods in members]
    union = [e for group in ells for e in group]
    if not union:
        return 1.0
    grid = bounding_grid(union, raster.spacing, raster.pad)
    m, m1, m2 = (rasterize_nodules(group, grid) for group in ells)
    smap = _score_map(scores)
    w1, w2 = pair_weights(smap[d1], smap[d2])
    return dice(m, soft_combine([m1, m2], [w1, w2]))


class ImageOverlaps:
    """Mask sizes and pairwise intersection sizes of every annotator on one image."""

    def __init__(self, table: AnnotationTable, image_id: str, raster: RasterConfig = RasterConfig()):
        self.image_id = image_id
        by_annotator = table.nodules_by_annotator(image_id)
        self.annotators = sorted(by_annotator)
        keys = {a: voxel_keys([n.ellipsoid for n in by_annotator[a]], raster.spacing)
                for a in self.annotators}
        self.size = {a: int(keys[a].size) for a in self.annotators}
        self._inter = {}
        for a, b in itertools.combinations(self.annotators, 2):
            self._inter[(a, b)] = intersection_size(keys[a], keys[b])

    def intersection(self, a: str, b: str) -> int:
        if a == b:
            return self.size[a]
        return self._inter[(a, b) if a < b else (b, a)]

    def dice(self, subject: str, d1: str, d2: str, w1: float, w2: float) -> float:
        num = 2.0 * (w1 * self.intersection(subject, d1) + w2 * self.intersection(subject, d2))
        den = self.size[subject] + (w1 * self.size[d1] + w2 * self.size[d2])
        if den == 0.0:
            return 1.0
        return num / den


def compute_overlaps(table: AnnotationTable, raster: RasterConfig = RasterConfig(),
                     threads: int = 1) -> dict[str, ImageOverlaps]:
    images = table.image_ids
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda i: ImageOverlaps(table, i, raster), images))
    return dict(zip(images, results))


def _annotator_update(subject: str, consiliums: list[Consilium], overlaps: dict[str, ImageOverlaps],
                      prev: Mapping[str, float]) -> float:
    if not consiliums:
        return prev[subject]
    terms = []
    for c in consiliums:
        d1, d2 = c.pair
        w1, w2 = pair_weights(prev[d1], prev[d2])
        terms.append(overlaps[c.image_id].dice(subject, d1, d2, w1, w2))
    return math.fsum(terms) / len(terms)


def score_iteration(table: AnnotationTable, state: ScoreState, raster: RasterConfig = RasterConfig(), *,
                    overlaps: Optional[dict[str, ImageOverlaps]] = None, threads: int = 1) -> ScoreState:
    """One Jacobi sweep: every annotator is updated from the previous scores only."""
    prev = dict(state.scores)
    annotators = table.annotator_ids
    missing = [a for a in annotators if a not in prev]
    if missing:
        raise KeyError(f"no score for annotators {missing}")
    if overlaps is None:
        overlaps = compute_overlaps(table, raster, threads)
    consiliums = {a: enumerate_consiliums(table, a) for a in annotators}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        values = list(pool.map(lambda a: _annotator_update(a, consiliums[a], overlaps, prev), annotators))
    new = dict(prev)
    new.update(zip(annotators, values))
    return ScoreState(new, state.iteration + 1, state.history + [dict(new)])


def score_annotators(table: AnnotationTable, config: ScoringConfig = ScoringConfig(),
                     initial: Optional[Union[ScoreState, Mapping[str, float]]] = None) -> ScoreState:
    """Iterate :func:`score_iteration` until ``config.iterations`` or max change < ``config.tol``."""
    if initial is None:
        state = ScoreState.initial(table.annotator_ids)
    elif isinstance(initial, ScoreState):
        state = initial
    else:
        state = ScoreState(dict(initial))
    overlaps = compute_overlaps(table, config.raster, config.threads)
    for _ in range(config.iterations):
        state = score_iteration(table, state, config.raster, overlaps=overlaps, threads=config.threads)
        change = state.max_change()
        logger.debug("scoring iteration %d: max change %.3g", state.iteration, change)
        if change < config.tol:
            break
    return state


def write_score_history(state: ScoreState, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "annotator_id", "score"])
        for k, scores in enumerate(state.history):
            for a in sorted(scores):
                writer.writerow([k, a, repr(float(scores[a]))])


def read_score_history(path) -> ScoreState:
    history: dict[int, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["iteration", "annotator_id", "score"]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            history.setdefault(int(row["iteration"]), {})[row["annotator_id"]] = float(row["score"])
    if sorted(history) != list(range(len(history))) or not history:
        raise ValueError(f"{path}: iterations must run 0..N without gaps")
    hist = [history[k] for k in range(len(history))]
    return ScoreState(dict(hist[-1]), len(hist) - 1, hist)
