"""Synthetic longitudinal phantoms: ellipsoid tumors that shrink between scans.

Each patient gets a pre-RT and a mid-RT image, exact masks for both, and a
"registered" pre-RT mask in which every tumor is rigidly shifted by a small
integer offset to emulate registration error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import write_json
from .cohort import DEFAULT_LAYOUT, PatientCase
from .nifti_io import LabelMask3, Volume3, write_volume
from .roi import LABEL_NAMES
from .volume import volume_cc


@dataclass
class TumorSpec:
    center_mm: tuple[float, float, float]
    semi_axes_mm: tuple[float, float, float]
    shrinkage: float = 1.0
    label: int = 1
    contrast: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError(f"shrinkage must lie in [0, 1], got {self.shrinkage}")
        if self.label not in (1, 2):
            raise ValueError(f"tumor label must be 1 or 2, got {self.label}")
        if any(a <= 0 for a in self.semi_axes_mm):
            raise ValueError("semi-axes must be > 0")

    @property
    def mid_semi_axes_mm(self) -> tuple[float, float, float]:
        return tuple(a * self.shrinkage for a in self.semi_axes_mm)

    def analytic_cc(self, semi_axes) -> float:
        a, b, c = semi_axes
        return 4.0 / 3.0 * math.pi * a * b * c / 1000.0


@dataclass
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 40)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.2)
    tumors: list[TumorSpec] = field(default_factory=list)
    background: float = 0.2
    noise_sigma: float = 0.03
    jitter: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        extent = np.array(self.shape) * np.array(self.spacing)
        for t in self.tumors:
            c = np.array(t.center_mm)
            if np.any(c < 0) or np.any(c > extent):
                raise ValueError(f"tumor center {t.center_mm} lies outside the grid")


def ellipsoid_mask(shape, spacing, center_mm, semi_axes_mm) -> np.ndarray:
    """Voxels whose centres (``index * spacing``) fall inside the ellipsoid."""
    if any(a <= 0 for a in semi_axes_mm):
        return np.zeros(shape, dtype=bool)
    axes = [
        ((np.arange(n) * s - c) / a) ** 2 for n, s, c, a in zip(shape, spacing, center_mm, semi_axes_mm)
    ]
    return axes[0][:, None, None] + axes[1][None, :, None] + axes[2][None, None, :] <= 1.0


def shift_mask(m: np.ndarray, offset) -> np.ndarray:
    """Translate by integer voxels; content leaving the grid is dropped."""
    out = np.zeros_like(m)
    src, dst = [], []
    for n, o in zip(m.shape, offset):
        o = int(o)
        if abs(o) >= n:
            return out
        src.append(slice(max(0, -o), n - max(0, o)))
        dst.append(slice(max(0, o), n - max(0, -o)))
    out[tuple(dst)] = m[tuple(src)]
    return out


@dataclass(eq=False)
class RenderedCase:
    pre_img: Volume3
    mid_img: Volume3
    pre_gt: LabelMask3
    mid_gt: LabelMask3
    pre_gt_registered: LabelMask3
    shifts: list[tuple[int, int, int]]


def render_case(spec: PhantomSpec, rng: np.random.Generator | None = None) -> RenderedCase:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    pre = np.zeros(spec.shape, dtype=np.uint8)
    mid = np.zeros(spec.shape, dtype=np.uint8)
    prior = np.zeros(spec.shape, dtype=np.uint8)
    pre_img = np.full(spec.shape, spec.background)
    mid_img = np.full(spec.shape, spec.background)
    shifts = []
    # GTVn painted after GTVp so nodal labels win where they touch
    for t in sorted(spec.tumors, key=lambda t: t.label):
        m_pre = ellipsoid_mask(spec.shape, spec.spacing, t.center_mm, t.semi_axes_mm)
        m_mid = ellipsoid_mask(spec.shape, spec.spacing, t.center_mm, t.mid_semi_axes_mm)
        shift = tuple(int(s) for s in rng.integers(-spec.jitter, spec.jitter + 1, size=3))
        shifts.append(shift)
        pre[m_pre] = t.label
        mid[m_mid] = t.label
        prior[shift_mask(m_pre, shift)] = t.label
        pre_img[m_pre] = spec.background + t.contrast
        mid_img[m_mid] = spec.background + t.contrast
    if spec.noise_sigma > 0:
        pre_img = pre_img + rng.normal(0.0, spec.noise_sigma, spec.shape)
        mid_img = mid_img + rng.normal(0.0, spec.noise_sigma, spec.shape)
    sp = spec.spacing
    return RenderedCase(
        pre_img=Volume3(pre_img, sp),
        mid_img=Volume3(mid_img, sp),
        pre_gt=LabelMask3(pre, sp),
        mid_gt=LabelMask3(mid, sp),
        pre_gt_registered=LabelMask3(prior, sp),
        shifts=shifts,
    )


def case_manifest(spec: PhantomSpec, case: RenderedCase, case_id: str) -> dict:
    volumes = {}
    for lab, name in LABEL_NAMES.items():
        tumors = [t for t in spec.tumors if t.label == lab]
        volumes[name] = {
            "pre_cc": volume_cc(case.pre_gt, lab),
            "mid_cc": volume_cc(case.mid_gt, lab),
            "prior_cc": volume_cc(case.pre_gt_registered, lab),
            "pre_cc_analytic": sum(t.analytic_cc(t.semi_axes_mm) for t in tumors),
            "mid_cc_analytic": sum(t.analytic_cc(t.mid_semi_axes_mm) for t in tumors),
            "n_tumors": len(tumors),
        }
    return {
        "case_id": case_id,
        "shape": list(spec.shape),
        "spacing": list(spec.spacing),
        "seed": spec.seed,
        "jitter": spec.jitter,
        "noise_sigma": spec.noise_sigma,
        "tumors": [asdict(t) for t in spec.tumors],
        "shifts": [list(s) for s in case.shifts],
        "volumes": volumes,
    }


def generate_case(spec: PhantomSpec, root, case_id: str, rng=None, layout=None) -> tuple[PatientCase, dict]:
    """Render one phantom patient and write it in the dataset layout."""
    layout = layout or DEFAULT_LAYOUT
    case = render_case(spec, rng)
    directory = Path(root) / case_id
    paths = {role: directory / pattern.format(id=case_id) for role, pattern in layout.items()}
    write_volume(case.mid_img, paths["mid_img"])
    write_volume(case.mid_gt, paths["mid_gt"])
    # rigid-jitter model: the registered image is the pre-RT image itself
    write_volume(case.pre_img, paths["pre_img_registered"])
    write_volume(case.pre_gt_registered, paths["pre_gt_registered"])
    write_volume(case.pre_img, paths["pre_img_native"])
    write_volume(case.pre_gt, paths["pre_gt_native"])
    manifest = case_manifest(spec, case, case_id)
    write_json(directory / "phantom.json", manifest)
    return PatientCase(case_id, directory, paths), manifest


@dataclass
class CohortSpec:
    """Distribution that per-patient :class:`PhantomSpec` objects are drawn from."""

    shape: tuple[int, int, int] = (64, 64, 40)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.2)
    gtvp_radius_mm: tuple[float, float] = (7.0, 12.0)
    gtvn_radius_mm: tuple[float, float] = (4.0, 7.0)
    gtvn_count: tuple[int, int] = (1, 2)
    shrinkage: tuple[float, float] = (0.3, 1.0)
    vanish_fraction: float = 0.1
    gtvp_absent_fraction: float = 0.0
    axis_ratio: tuple[float, float] = (0.85, 1.15)
    contrast_gtvp: float = 0.5
    contrast_gtvn: float = 0.7
    background: float = 0.2
    noise_sigma: float = 0.03
    jitter: int = 2


def _place(rng, extent, radius, placed, margin, tries=200):
    if any(e - 2 * (radius + margin) < 0 for e in extent):
        # grid too small for this tumor
        return None
    for _ in range(tries):
        c = np.array([rng.uniform(radius + margin, e - radius - margin) for e in extent])
        if all(np.linalg.norm(c - pc) > radius + pr + 3.0 for pc, pr in placed):
            return c
    return None


def draw_phantom_spec(cs: CohortSpec, rng: np.random.Generator, seed: int = 0) -> PhantomSpec:
    extent = np.array(cs.shape) * np.array(cs.spacing)
    margin = (cs.jitter + 1) * max(cs.spacing)
    tumors = []
    placed = []

    def semi_axes(r):
        return tuple(float(r * rng.uniform(*cs.axis_ratio)) for _ in range(3))

    if rng.uniform() >= cs.gtvp_absent_fraction:
        r = float(rng.uniform(*cs.gtvp_radius_mm))
        axes = semi_axes(r)
        c = _place(rng, extent, max(axes), placed, margin)
        if c is not None:
            shrink = 0.0 if rng.uniform() < cs.vanish_fraction else float(rng.uniform(*cs.shrinkage))
            tumors.append(TumorSpec(tuple(float(x) for x in c), axes, shrink, 1, cs.contrast_gtvp))
            placed.append((c, max(axes)))
    for _ in range(int(rng.integers(cs.gtvn_count[0], cs.gtvn_count[1] + 1))):
        r = float(rng.uniform(*cs.gtvn_radius_mm))
        axes = semi_axes(r)
        c = _place(rng, extent, max(axes), placed, margin)
        if c is None:
            continue
        tumors.append(TumorSpec(tuple(float(x) for x in c), axes, float(rng.uniform(*cs.shrinkage)), 2, cs.contrast_gtvn))
        placed.append((c, max(axes)))
    return PhantomSpec(
        shape=tuple(cs.shape),
        spacing=tuple(cs.spacing),
        tumors=tumors,
        background=cs.background,
        noise_sigma=cs.noise_sigma,
        jitter=cs.jitter,
        seed=seed,
    )


def patient_ids(n: int) -> list[str]:
    return [f"{i:03d}" for i in range(1, n + 1)]


def generate_cohort(n: int, root, seed: int = 0, cohort_spec: CohortSpec | None = None, jobs: int = 1) -> dict:
    """Write an ``n``-patient phantom dataset below ``root``.

    Every patient draws from its own ``(seed, index)`` stream, so the tree is
    identical for any ``jobs``. Returns the cohort manifest, also written to
    ``root/manifest.json``.
    """
    if n < 1:
        raise ValueError(f"need at least one patient, got {n}")
    cs = cohort_spec or CohortSpec()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    def one(idx_pid):
        idx, pid = idx_pid
        rng = np.random.default_rng([int(seed), idx])
        spec = draw_phantom_spec(cs, rng, seed=int(seed))
        _, man = generate_case(spec, root, pid, rng)
        return pid, man

    items = list(enumerate(patient_ids(n), start=1))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, items))
    else:
        results = [one(it) for it in items]
    manifest = {
        "seed": int(seed),
        "n": n,
        "cohort_spec": asdict(cs),
        "cases": {pid: {**man["volumes"], "shrinkage": [t["shrinkage"] for t in man["tumors"]]} for pid, man in results},
    }
    write_json(root / "manifest.json", manifest)
    return manifest
