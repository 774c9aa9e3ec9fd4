"""Prior-derived ROI boxes: tight boxes per tumor instance, randomly expanded."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._io import read_json, write_json
from .components import DEFAULT_CONNECTIVITY, BoundingBox3, label_components, tight_bbox
from .nifti_io import LabelMask3

DEFAULT_MARGINS = (2, 6)
TUMOR_LABELS = (1, 2)
LABEL_NAMES = {1: "GTVp", 2: "GTVn"}


@dataclass(eq=False)
class RoiSet:
    boxes: list[BoundingBox3]
    shape: tuple[int, int, int]
    seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.boxes

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "shape": list(self.shape),
            "boxes": [b.to_dict() for b in self.boxes],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d) -> "RoiSet":
        return cls(
            boxes=[BoundingBox3.from_dict(b) for b in d["boxes"]],
            shape=tuple(d["shape"]),
            seed=d.get("seed"),
            warnings=list(d.get("warnings", [])),
        )

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RoiSet":
        return cls.from_dict(read_json(path))


def draw_face_offsets(rng: np.random.Generator, lo_margin: int, hi_margin: int) -> np.ndarray:
    """Outward offsets for the six faces: row 0 moves ``lo``, row 1 moves ``hi``."""
    return rng.integers(lo_margin, hi_margin + 1, size=(2, 3))


def perturb_box(
    b: BoundingBox3,
    shape,
    rng: np.random.Generator,
    lo_margin: int = DEFAULT_MARGINS[0],
    hi_margin: int = DEFAULT_MARGINS[1],
) -> BoundingBox3:
    """Push every face outward by an independent uniform integer offset.

    Offsets are drawn from ``[lo_margin, hi_margin]`` and the result is
    clamped to the grid, so the input box is always contained in the output.
    """
    if not 0 <= lo_margin <= hi_margin:
        raise ValueError(f"need 0 <= lo_margin <= hi_margin, got {lo_margin}, {hi_margin}")
    if not b.within(shape):
        raise ValueError(f"box {b.lo}..{b.hi} outside grid {tuple(shape)}")
    off = draw_face_offsets(rng, lo_margin, hi_margin)
    lo = np.maximum(np.array(b.lo) - off[0], 0)
    hi = np.minimum(np.array(b.hi) + off[1], np.array(shape) - 1)
    return BoundingBox3(tuple(lo), tuple(hi), b.source_label)


def boxes_from_prior(
    prior: LabelMask3,
    rng: np.random.Generator,
    margins=DEFAULT_MARGINS,
    connectivity: int = DEFAULT_CONNECTIVITY,
    seed: int | None = None,
    labels=TUMOR_LABELS,
) -> RoiSet:
    """One perturbed box per connected tumor instance of the prior mask.

    Boxes are ordered by label, then by component id. A missing label is
    reported in ``warnings``; a prior with no tumor at all yields an empty set.
    """
    shape = prior.shape
    boxes = []
    warnings = []
    for lab in labels:
        comps = label_components(prior, lab, connectivity)
        if comps.count == 0:
            warnings.append(f"prior has no {LABEL_NAMES.get(lab, lab)} voxels")
            continue
        for cid in range(1, comps.count + 1):
            boxes.append(perturb_box(tight_bbox(comps, cid), shape, rng, *margins))
    if not boxes:
        warnings.append("empty prior: no ROI boxes")
    return RoiSet(boxes, tuple(shape), seed, warnings)


def rasterize(rois: RoiSet, shape=None) -> np.ndarray:
    """Binary uint8 grid with 1 inside any box."""
    shape = tuple(shape if shape is not None else rois.shape)
    out = np.zeros(shape, dtype=np.uint8)
    for b in rois.boxes:
        if not b.within(shape):
            raise ValueError(f"box {b.lo}..{b.hi} outside grid {shape}")
        out[b.slices] = 1
    return out
