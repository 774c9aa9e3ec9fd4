"""Connected-component labeling of tumor masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import UnknownComponent
from .nifti_io import LabelMask3

DEFAULT_CONNECTIVITY = 26
_RANK = {6: 1, 18: 2, 26: 3}


def structuring_element(connectivity: int) -> np.ndarray:
    if connectivity not in _RANK:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, _RANK[connectivity])


@dataclass(frozen=True)
class BoundingBox3:
    """Closed voxel interval ``lo..hi`` (inclusive) on each axis."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    source_label: int = 0

    def __post_init__(self):
        lo = tuple(int(x) for x in self.lo)
        hi = tuple(int(x) for x in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must have 3 coordinates")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box lo {lo} exceeds hi {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))

    @property
    def size(self) -> tuple[int, int, int]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def n_voxels(self) -> int:
        sx, sy, sz = self.size
        return sx * sy * sz

    def contains(self, other: "BoundingBox3") -> bool:
        return all(a <= c for a, c in zip(self.lo, other.lo)) and all(b >= d for b, d in zip(self.hi, other.hi))

    def within(self, shape) -> bool:
        return all(a >= 0 for a in self.lo) and all(b < n for b, n in zip(self.hi, shape))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "label": self.source_label}

    @classmethod
    def from_dict(cls, d) -> "BoundingBox3":
        return cls(tuple(d["lo"]), tuple(d["hi"]), int(d.get("label", 0)))


@dataclass(eq=False)
class ComponentSet:
    """Labeled instances of one mask label.

    ``labeled`` holds ids ``1..count`` (0 is background); ids are assigned in
    ascending order of each component's smallest C-order linear index.
    """

    labeled: np.ndarray
    count: int
    voxel_counts: tuple[int, ...]
    source_label: int
    bboxes: tuple[BoundingBox3, ...]
    connectivity: int = DEFAULT_CONNECTIVITY


def label_components(m, label: int, connectivity: int = DEFAULT_CONNECTIVITY) -> ComponentSet:
    """Split the voxels equal to ``label`` into maximal connected instances.

    ``m`` may be a :class:`LabelMask3` or a plain integer array.
    """
    data = m.data if isinstance(m, LabelMask3) else np.asarray(m)
    sel = data == label
    raw, count = ndimage.label(sel, structure=structuring_element(connectivity))
    if count == 0:
        return ComponentSet(np.zeros(data.shape, dtype=np.int32), 0, (), label, (), connectivity)

    # canonical ids: order by first voxel in C-order scan
    flat = raw.ravel()
    nz = np.flatnonzero(flat)
    ids_in_scan = flat[nz]
    _, first_pos = np.unique(ids_in_scan, return_index=True)
    order = np.argsort(nz[first_pos], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1, dtype=np.int32)
    labeled = remap[raw]

    voxel_counts = np.bincount(labeled.ravel(), minlength=count + 1)[1:]
    boxes = []
    for sl in ndimage.find_objects(labeled):
        boxes.append(BoundingBox3(tuple(s.start for s in sl), tuple(s.stop - 1 for s in sl), label))
    return ComponentSet(
        labeled=labeled,
        count=int(count),
        voxel_counts=tuple(int(c) for c in voxel_counts),
        source_label=label,
        bboxes=tuple(boxes),
        connectivity=connectivity,
    )


def tight_bbox(c: ComponentSet, component_id: int) -> BoundingBox3:
    if not 1 <= component_id <= c.count:
        raise UnknownComponent(f"component id {component_id} not in 1..{c.count}")
    return c.bboxes[component_id - 1]
