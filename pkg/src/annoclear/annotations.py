"""Multi-annotator annotation tables and their CSV representation.

A table holds nodule marks plus "review" rows: an annotator who looked at an
image and found nothing is stored as a row with empty geometry. Both kinds of
row put the (image, annotator) pair into the annotated relation used for
scoring.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from annoclear.geometry import Ellipsoid

MERGED_ANNOTATOR = "merged"

SINGLE_SIZE_HEADER = ["image_id", "annotator_id", "z_mm", "y_mm", "x_mm", "size_mm"]
THREE_RADII_HEADER = ["image_id", "annotator_id", "z_mm", "y_mm", "x_mm", "rz_mm", "ry_mm", "rx_mm"]
CLEANED_HEADER = ["image_id", "z_mm", "y_mm", "x_mm", "rz_mm", "ry_mm", "rx_mm", "confidence"]


class TableParseError(ValueError):
    """A CSV row could not be turned into a record."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class TableValidationError(ValueError):
    """The records are individually fine but inconsistent as a table."""


@dataclass(frozen=True)
class NoduleRecord:
    image_id: str
    annotator_id: str
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    confidence: Optional[float] = None

    def __post_init__(self):
        # Ellipsoid does the finiteness / positivity checks
        ell = Ellipsoid(self.center, self.radii)
        object.__setattr__(self, "center", ell.center)
        object.__setattr__(self, "radii", ell.radii)
        if self.confidence is not None:
            c = float(self.confidence)
            if not math.isfinite(c) or c < 0.0:
                raise ValueError(f"confidence must be finite and >= 0, got {c}")
            object.__setattr__(self, "confidence", c)

    @property
    def ellipsoid(self) -> Ellipsoid:
        return Ellipsoid(self.center, self.radii)

    def sort_key(self):
        return (self.image_id, self.annotator_id, *self.center, *self.radii,
                -1.0 if self.confidence is None else self.confidence)


@dataclass(frozen=True)
class ReviewRecord:
    image_id: str
    annotator_id: str


@dataclass(frozen=True, eq=False)
class AnnotationTable:
    nodules: tuple[NoduleRecord, ...] = ()
    reviews: tuple[ReviewRecord, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodules", tuple(self.nodules))
        object.__setattr__(self, "reviews", tuple(self.reviews))
        seen = set()
        for rev in self.reviews:
            key = (rev.image_id, rev.annotator_id)
            if key in seen:
                raise TableValidationError(
                    f"duplicate review row for image {rev.image_id!r}, annotator {rev.annotator_id!r}")
            seen.add(key)
        by_image = defaultdict(lambda: defaultdict(list))
        for nod in self.nodules:
            if (nod.image_id, nod.annotator_id) in seen:
                raise TableValidationError(
                    f"annotator {nod.annotator_id!r} has both nodules and a review row "
                    f"on image {nod.image_id!r}")
            by_image[nod.image_id][nod.annotator_id].append(nod)
        for rev in self.reviews:
            by_image[rev.image_id].setdefault(rev.annotator_id, [])
        index = {img: {ann: tuple(v) for ann, v in anns.items()} for img, anns in by_image.items()}
        object.__setattr__(self, "_index", index)

    def __eq__(self, other):
        if not isinstance(other, AnnotationTable):
            return NotImplemented
        a, b = self.sorted(), other.sorted()
        return a.nodules == b.nodules and a.reviews == b.reviews

    __hash__ = None

    @property
    def image_ids(self) -> list[str]:
        return sorted(self._index)

    @property
    def annotator_ids(self) -> list[str]:
        return sorted({a for anns in self._index.values() for a in anns})

    def nodules_by_annotator(self, image_id: str) -> dict[str, tuple[NoduleRecord, ...]]:
        """Annotator -> nodules on ``image_id``; reviewers map to an empty tuple."""
        return dict(self._index.get(image_id, {}))

    def nodules_on(self, image_id: str) -> list[NoduleRecord]:
        return [n for _, ns in sorted(self._index.get(image_id, {}).items()) for n in ns]

    def sorted(self) -> "AnnotationTable":
        return AnnotationTable(
            sorted(self.nodules, key=NoduleRecord.sort_key),
            sorted(self.reviews, key=lambda r: (r.image_id, r.annotator_id)),
        )


def annotators_of(table: AnnotationTable, image_id: str) -> set[str]:
    return set(table.nodules_by_annotator(image_id))


def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise TableParseError(path, line, f"non-numeric {column}: {text!r}") from None
    if not math.isfinite(value):
        raise TableParseError(path, line, f"non-finite {column}: {text!r}")
    return value


def read_table(path, radius_mode: str = "radius") -> AnnotationTable:
    """Read an annotation CSV.

    Accepts the single-size, three-radii and cleaned headers. The three-radii
    and cleaned forms may carry a trailing ``confidence`` column; the cleaned
    form is assigned to the ``"merged"`` pseudo-annotator. ``radius_mode`` only
    applies to the single-size form: with ``"diameter"`` the size is halved.
    """
    if radius_mode not in ("radius", "diameter"):
        raise ValueError(f"radius_mode must be 'radius' or 'diameter', got {radius_mode!r}")
    nodules, reviews = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TableParseError(path, 1, "missing header")
        header = [h.strip() for h in header]
        cleaned = header == CLEANED_HEADER
        if header == SINGLE_SIZE_HEADER:
            n_size, has_conf = 1, False
        elif header in (THREE_RADII_HEADER, THREE_RADII_HEADER + ["confidence"]):
            n_size, has_conf = 3, len(header) == 9
        elif header == CLEANED_HEADER:
            n_size, has_conf = 3, True
        else:
            raise TableParseError(path, 1, f"unrecognised header {','.join(header)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TableParseError(path, line, f"expected {len(header)} columns, got {len(row)}")
            if cleaned:
                image_id, annotator_id, rest = row[0], MERGED_ANNOTATOR, row[1:]
            else:
                image_id, annotator_id, rest = row[0], row[1], row[2:]
            if not image_id or not annotator_id:
                raise TableParseError(path, line, "empty image_id or annotator_id")
            if all(cell.strip() == "" for cell in rest):
                reviews.append(ReviewRecord(image_id, annotator_id))
                continue
            geom_cols = header[-len(rest):]
            conf_cell = rest[3 + n_size].strip() if has_conf else ""
            values = [_parse_float(c, path, line, col)
                      for c, col in zip(rest[:3 + n_size], geom_cols)]
            center = tuple(values[:3])
            sizes = values[3:]
            if any(s <= 0 for s in sizes):
                raise TableParseError(path, line, f"non-positive size {sizes}")
            if n_size == 1:
                r = sizes[0] / 2.0 if radius_mode == "diameter" else sizes[0]
                radii = (r, r, r)
            else:
                radii = tuple(sizes)
            conf = _parse_float(conf_cell, path, line, "confidence") if conf_cell else None
            try:
                nodules.append(NoduleRecord(image_id, annotator_id, center, radii, conf))
            except ValueError as exc:
                raise TableParseError(path, line, str(exc)) from None
    return AnnotationTable(nodules, reviews)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_table(table: AnnotationTable, path) -> None:
    """Write in the three-radii layout, sorted; confidence column iff any nodule has one."""
    has_conf = any(n.confidence is not None for n in table.nodules)
    header = THREE_RADII_HEADER + (["confidence"] if has_conf else [])
    rows = []
    for n in table.nodules:
        row = [n.image_id, n.annotator_id, *map(_fmt, n.center), *map(_fmt, n.radii)]
        if has_conf:
            row.append("" if n.confidence is None else _fmt(n.confidence))
        rows.append((n.sort_key(), row))
    for r in table.reviews:
        rows.append(((r.image_id, r.annotator_id), [r.image_id, r.annotator_id] + [""] * (len(header) - 2)))
    _write_rows(path, header, [row for _, row in sorted(rows, key=lambda kr: _row_order(kr[0]))])


def _row_order(key):
    # review rows (no geometry) sort before nodules of the same pair
    return (key[0], key[1], 0 if len(key) == 2 else 1, key[2:])


def write_cleaned(table: AnnotationTable, path) -> None:
    """Write the cleaned layout: one row per merged nodule, empty rows for empty images."""
    rows = []
    for n in sorted(table.nodules, key=NoduleRecord.sort_key):
        conf = 0.0 if n.confidence is None else n.confidence
        rows.append([n.image_id, *map(_fmt, n.center), *map(_fmt, n.radii), _fmt(conf)])
    covered = {n.image_id for n in table.nodules}
    for image_id in sorted({r.image_id for r in table.reviews} - covered):
        rows.append([image_id] + [""] * (len(CLEANED_HEADER) - 1))
    rows.sort(key=lambda r: r[0])
    _write_rows(path, CLEANED_HEADER, rows)


def _write_rows(path, header: list[str], rows: Iterable[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
