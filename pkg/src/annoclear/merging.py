"""Grouping, Gaussian-mixture merging and filtering of scored nodules.

Nodules of one image that overlap (directly or through a chain) form a group.
Each member becomes the diagonal Gaussian whose q-quantile set is the member
ellipsoid; the confidence-weighted mixture of a group is collapsed to one
diagonal Gaussian with the same mean and per-axis variance, and that Gaussian
is turned back into an ellipsoid at the same q. The merged nodule keeps the
largest member confidence, and merged nodules below the threshold are dropped.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import networkx as nx
import numpy as np

from annoclear.annotations import (
    MERGED_ANNOTATOR,
    AnnotationTable,
    NoduleRecord,
    ReviewRecord,
    TableValidationError,
)
from annoclear.annotator_scoring import ScoreState, ScoringConfig, score_annotators
from annoclear.geometry import GaussianComponent, gaussian_to_nodule, nodule_to_gaussian, overlaps
from annoclear.nodule_scoring import NoduleConfidence, NoduleScoringConfig, score_nodules

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoduleGroup:
    image_id: str
    members: tuple[tuple[NoduleRecord, float], ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("a group needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))


@dataclass(frozen=True)
class GaussianMixture:
    components: tuple[GaussianComponent, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.components or len(self.components) != len(self.weights):
            raise ValueError("need one weight per component and at least one component")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1, got {list(w)}")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


@dataclass(frozen=True)
class MergeConfig:
    q: float = 0.5
    threshold: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")


@dataclass(frozen=True)
class CleanConfig:
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    nodule_scoring: NoduleScoringConfig = field(default_factory=NoduleScoringConfig)
    merging: MergeConfig = field(default_factory=MergeConfig)


@dataclass(frozen=True)
class CleanResult:
    scores: ScoreState
    confidences: list[NoduleConfidence]
    table: AnnotationTable


def _member_key(member: tuple[NoduleRecord, float]):
    nod, conf = member
    return (*nod.sort_key(), conf)


def group_nodules(nodules: Sequence[tuple[NoduleRecord, float]], image_id: str) -> list[NoduleGroup]:
    """Connected components of the overlap graph of one image's nodules."""
    members = sorted(nodules, key=_member_key)
    if any(n.image_id != image_id for n, _ in members):
        raise ValueError(f"all nodules must belong to image {image_id!r}")
    ells = [n.ellipsoid for n, _ in members]
    graph = nx.Graph()
    graph.add_nodes_from(range(len(members)))
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            if overlaps(ells[i], ells[j]):
                graph.add_edge(i, j)
    components = sorted(sorted(c) for c in nx.connected_components(graph))
    return [NoduleGroup(image_id, tuple(members[i] for i in comp)) for comp in components]


def build_mixture(group: NoduleGroup, q: float = 0.5) -> GaussianMixture:
    conf = np.array([c for _, c in group.members], dtype=float)
    total = conf.sum()
    if total > 0:
        weights = conf / total
    else:
        warnings.warn(f"all confidences are zero in a group on image {group.image_id!r}; "
                      "using equal weights", RuntimeWarning, stacklevel=2)
        weights = np.full(len(conf), 1.0 / len(conf))
    comps = tuple(nodule_to_gaussian(n.ellipsoid, q) for n, _ in group.members)
    return GaussianMixture(comps, tuple(weights))


def moment_match(mix: GaussianMixture) -> GaussianComponent:
    """Single diagonal Gaussian with the mixture's mean and per-axis variance."""
    w = np.asarray(mix.weights)[:, None]
    means = np.array([c.mean for c in mix.components])
    var = np.array([c.variances for c in mix.components])
    mu = np.sum(w * means, axis=0)
    sigma2 = np.sum(w * (var + (means - mu) ** 2), axis=0)
    return GaussianComponent(tuple(mu), tuple(sigma2))


def merge_group(group: NoduleGroup, q: float = 0.5) -> NoduleRecord:
    ell = gaussian_to_nodule(moment_match(build_mixture(group, q)), q)
    conf = max(c for _, c in group.members)
    return NoduleRecord(group.image_id, MERGED_ANNOTATOR, ell.center, ell.radii, conf)


def _merge_image(image_id: str, members, config: MergeConfig) -> list[NoduleRecord]:
    merged = [merge_group(g, config.q) for g in group_nodules(members, image_id)]
    return [n for n in merged if n.confidence >= config.threshold]


def merge_confident(table: AnnotationTable, confidences: Sequence[NoduleConfidence],
                    config: MergeConfig = MergeConfig(), threads: int = 1) -> AnnotationTable:
    """Group, merge and filter scored nodules; every image of ``table`` appears in the output."""
    per_image: dict[str, list] = {i: [] for i in table.image_ids}
    for c in confidences:
        per_image.setdefault(c.nodule.image_id, []).append((c.nodule, c.confidence))
    images = sorted(per_image)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda i: _merge_image(i, per_image[i], config), images))
    nodules, reviews = [], []
    for image_id, merged in zip(images, results):
        if merged:
            nodules.extend(merged)
        else:
            reviews.append(ReviewRecord(image_id, MERGED_ANNOTATOR))
    return AnnotationTable(nodules, reviews)


def check_input(table: AnnotationTable) -> None:
    if MERGED_ANNOTATOR in table.annotator_ids:
        raise TableValidationError(f"annotator id {MERGED_ANNOTATOR!r} is reserved for merged output")


def run_pipeline(table: AnnotationTable, config: CleanConfig = CleanConfig()) -> CleanResult:
    check_input(table)
    scores = score_annotators(table, config.scoring)
    logger.info("annotator scoring: %d annotators, %d iterations", len(scores.scores), scores.iteration)
    confidences = score_nodules(table, scores, config.nodule_scoring)
    logger.info("nodule scoring: %d nodules", len(confidences))
    cleaned = merge_confident(table, confidences, config.merging, config.scoring.threads)
    logger.info("merging: %d nodules kept", len(cleaned.nodules))
    return CleanResult(scores, confidences, cleaned)


def clean(table: AnnotationTable, config: CleanConfig = CleanConfig()) -> AnnotationTable:
    return run_pipeline(table, config).table
