"""Synthetic ground truth and noisy multi-annotator tables.

Ten annotators review every image. "bad" annotators only place false nodules
around the image center, "perfect" ones copy the true nodules (optionally
jittered and randomly dropped) and "normal" ones do both.

Random streams are derived from the seed per (image, annotator), so adding
or removing an annotator leaves every other annotator's draws unchanged.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from annoclear.annotations import AnnotationTable, NoduleRecord, ReviewRecord
from annoclear.geometry import Ellipsoid

KINDS = ("bad", "normal", "perfect")

_TRUTH_STREAM = 0
_NOISE_STREAM = 1

TRUTH_HEADER = ["image_id", "volume_z_mm", "volume_y_mm", "volume_x_mm",
                "z_mm", "y_mm", "x_mm", "rz_mm", "ry_mm", "rx_mm"]


@dataclass(frozen=True)
class AnnotatorProfile:
    id: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class NoiseConfig:
    false_count_max: int = 4
    false_center_var: tuple[float, float, float] = (100.0, 100.0, 200.0)
    false_diameter_range: tuple[float, float] = (4.0, 15.0)
    loc_var: tuple[float, float, float] = (0.0, 0.0, 0.0)
    diam_sigma: float = 0.0
    keep_prob: float = 1.0
    min_diameter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in [0, 1], got {self.keep_prob}")
        if min(self.false_center_var) < 0 or min(self.loc_var) < 0 or self.diam_sigma < 0:
            raise ValueError("variances must be non-negative")
        if self.false_count_max < 0:
            raise ValueError("false_count_max must be >= 0")


# location-noise settings
SETTINGS = {
    "1": dict(loc_var=(0.0, 0.0, 0.0), diam_sigma=0.0, keep_prob=1.0),
    "2": dict(loc_var=(1.0, 1.0, 1.0), diam_sigma=0.5, keep_prob=0.7),
}

# annotator group layouts, ids 0..9
GROUPS = {
    "A": {"bad": range(0, 2), "perfect": range(2, 10)},
    "B": {"bad": range(0, 2), "normal": range(2, 4), "perfect": range(4, 10)},
}

SCENARIOS = ("A1", "A2", "B1", "B2")


@dataclass(frozen=True)
class TruthImage:
    image_id: str
    volume_mm: tuple[float, float, float]
    nodules: tuple[Ellipsoid, ...] = ()

    def __post_init__(self):
        vol = np.asarray(self.volume_mm, dtype=float)
        if vol.shape != (3,) or np.any(vol <= 0):
            raise ValueError(f"volume must be 3 positive extents, got {self.volume_mm}")
        for n in self.nodules:
            c, r = np.asarray(n.center), np.asarray(n.radii)
            if np.any(c - r < 0) or np.any(c + r > vol):
                raise ValueError(f"nodule {n} does not fit in volume {tuple(vol)}")
        object.__setattr__(self, "volume_mm", tuple(float(v) for v in vol))
        object.__setattr__(self, "nodules", tuple(self.nodules))

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.volume_mm) / 2.0


@dataclass(frozen=True)
class GroundTruth:
    images: tuple[TruthImage, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))

    def image(self, image_id: str) -> TruthImage:
        for img in self.images:
            if img.image_id == image_id:
                return img
        raise KeyError(image_id)

    @property
    def image_ids(self) -> list[str]:
        return [img.image_id for img in self.images]


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _annotator_key(annotator_id: str) -> int:
    return zlib.crc32(annotator_id.encode("utf-8"))


def generate_ground_truth(n_images: int, volume_mm=(400.0, 400.0, 400.0), nodules_per_image=(1, 3),
                          diameter_range=(4.0, 15.0), seed: int = 0) -> GroundTruth:
    """Spheres placed uniformly so that each lies fully inside its volume."""
    lo_n, hi_n = nodules_per_image
    lo_d, hi_d = diameter_range
    vol = np.asarray(volume_mm, dtype=float)
    if not 0 <= lo_n <= hi_n:
        raise ValueError(f"invalid nodules_per_image {nodules_per_image}")
    if not 0 < lo_d <= hi_d:
        raise ValueError(f"invalid diameter_range {diameter_range}")
    if hi_d > vol.min():
        raise ValueError(f"diameter {hi_d} does not fit in volume {tuple(vol)}")
    images = []
    for i in range(n_images):
        rng = _stream(seed, _TRUTH_STREAM, i)
        count = int(rng.integers(lo_n, hi_n + 1))
        nodules = []
        for _ in range(count):
            r = float(rng.uniform(lo_d, hi_d)) / 2.0
            center = rng.uniform(r, vol - r)
            nodules.append(Ellipsoid.sphere(tuple(center), r))
        images.append(TruthImage(f"img{i:04d}", tuple(vol), tuple(nodules)))
    return GroundTruth(tuple(images))


def _annotate(image: TruthImage, profile: AnnotatorProfile, config: NoiseConfig,
              rng: np.random.Generator) -> list[NoduleRecord]:
    out = []
    if profile.kind in ("bad", "normal"):
        count = int(rng.integers(0, config.false_count_max + 1))
        sd = np.sqrt(np.asarray(config.false_center_var, dtype=float))
        for _ in range(count):
            center = image.center + sd * rng.standard_normal(3)
            diameter = float(rng.uniform(*config.false_diameter_range))
            out.append(NoduleRecord(image.image_id, profile.id, tuple(center), (diameter / 2.0,) * 3))
    if profile.kind in ("normal", "perfect"):
        sd = np.sqrt(np.asarray(config.loc_var, dtype=float))
        for nod in image.nodules:
            center = np.asarray(nod.center) + sd * rng.standard_normal(3)
            diameter = 2.0 * nod.radii[0] + config.diam_sigma * float(rng.standard_normal())
            diameter = max(diameter, config.min_diameter)
            if rng.random() < config.keep_prob:
                out.append(NoduleRecord(image.image_id, profile.id, tuple(center), (diameter / 2.0,) * 3))
    return out


def generate_noisy(truth: GroundTruth, profiles: Sequence[AnnotatorProfile],
                   config: NoiseConfig = NoiseConfig()) -> AnnotationTable:
    if not profiles:
        raise ValueError("need at least one annotator profile")
    nodules, reviews = [], []
    for i, image in enumerate(truth.images):
        for profile in profiles:
            rng = _stream(config.seed, _NOISE_STREAM, i, _annotator_key(profile.id))
            marks = _annotate(image, profile, config, rng)
            if marks:
                nodules.extend(marks)
            else:
                reviews.append(ReviewRecord(image.image_id, profile.id))
    return AnnotationTable(nodules, reviews)


def scenario_profiles(name: str) -> list[AnnotatorProfile]:
    layout = GROUPS[name[0]]
    kinds = {i: kind for kind, ids in layout.items() for i in ids}
    return [AnnotatorProfile(str(i), kinds[i]) for i in sorted(kinds)]


def scenario_noise(name: str, seed: int = 0, **overrides) -> NoiseConfig:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return replace(NoiseConfig(seed=seed, **SETTINGS[name[1]]), **overrides)


def scenario(name: str, n_images: int = 20, seed: int = 0, *, truth_kwargs=None,
             **noise_overrides) -> tuple[GroundTruth, AnnotationTable]:
    """Ground truth plus the noisy table of one of the A1/A2/B1/B2 benchmarks."""
    config = scenario_noise(name, seed, **noise_overrides)
    truth = generate_ground_truth(n_images, seed=seed, **(truth_kwargs or {}))
    return truth, generate_noisy(truth, scenario_profiles(name), config)


def write_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRUTH_HEADER)
        for img in truth.images:
            vol = [repr(v) for v in img.volume_mm]
            if not img.nodules:
                writer.writerow([img.image_id, *vol] + [""] * 6)
            for n in img.nodules:
                writer.writerow([img.image_id, *vol, *map(repr, n.center), *map(repr, n.radii)])


def read_truth(path) -> GroundTruth:
    images: dict[str, tuple] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise ValueError(f"{path}: unexpected truth header {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRUTH_HEADER):
                raise ValueError(f"{path}:{line}: expected {len(TRUTH_HEADER)} columns")
            image_id, vol = row[0], tuple(float(v) for v in row[1:4])
            entry = images.setdefault(image_id, (vol, []))
            if entry[0] != vol:
                raise ValueError(f"{path}:{line}: inconsistent volume for {image_id}")
            if all(c == "" for c in row[4:]):
                continue
            vals = [float(v) for v in row[4:]]
            entry[1].append(Ellipsoid(tuple(vals[:3]), tuple(vals[3:])))
    return GroundTruth(tuple(TruthImage(i, vol, tuple(ns)) for i, (vol, ns) in images.items()))
