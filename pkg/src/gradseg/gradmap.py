"""Gaussian gradient-magnitude maps restricted to prior ROI boxes.

The derivative kernel is the sampled first derivative of a Gaussian,
truncated at ``4 * sigma`` voxels, made exactly antisymmetric (so its weights
sum to zero) and scaled so that a unit ramp produces a response of exactly 1.
Smoothing along the non-differentiated axes uses the normalized sampled
Gaussian. Boundaries are handled by half-sample reflection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryMismatch
from .nifti_io import LabelMask3, Volume3
from .roi import DEFAULT_MARGINS, RoiSet, boxes_from_prior
from .components import DEFAULT_CONNECTIVITY
from .volume import minmax_normalize, zscore_normalize

log = logging.getLogger(__name__)

TRUNCATE = 4.0
PHASES = ("preRT", "midRT")


@dataclass(frozen=True)
class GradMapConfig:
    sigma: float = 1.0
    clip_scale: float = 1.0
    boundary_mode: str = "reflect"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.clip_scale > 0:
            raise ValueError(f"clip_scale must be > 0, got {self.clip_scale}")
        if self.boundary_mode != "reflect":
            raise ValueError("only 'reflect' boundary handling is supported")


def kernel_radius(sigma: float) -> int:
    return max(1, int(TRUNCATE * sigma + 0.5))


def gaussian_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(smooth, deriv)`` as full correlation kernels of length ``2r+1``.

    ``deriv`` is applied as a correlation: ``out[x] = sum_k deriv[r + k] * f[x + k]``.
    """
    r = kernel_radius(sigma)
    k = np.arange(1, r + 1, dtype=np.float64)
    g_half = np.exp(-0.5 * (k / sigma) ** 2)
    norm = 1.0 + 2.0 * g_half.sum()
    smooth = np.concatenate([g_half[::-1], [1.0], g_half]) / norm
    d_half = k * g_half
    d_half = d_half / (2.0 * np.sum(k * d_half))
    deriv = np.concatenate([-d_half[::-1], [0.0], d_half])
    return smooth, deriv


def _shifted(padded: np.ndarray, axis: int, start: int, n: int) -> np.ndarray:
    idx = [slice(None)] * padded.ndim
    idx[axis] = slice(start, start + n)
    return padded[tuple(idx)]


def _pad_axis(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    widths = [(0, 0)] * a.ndim
    widths[axis] = (r, r)
    return np.pad(a, widths, mode="symmetric")


def smooth_axis(a: np.ndarray, smooth: np.ndarray, axis: int) -> np.ndarray:
    r = len(smooth) // 2
    n = a.shape[axis]
    p = _pad_axis(a, r, axis)
    out = smooth[r] * a
    for k in range(1, r + 1):
        out = out + smooth[r + k] * (_shifted(p, axis, r + k, n) + _shifted(p, axis, r - k, n))
    return out


def derivative_axis(a: np.ndarray, deriv: np.ndarray, axis: int) -> np.ndarray:
    r = len(deriv) // 2
    n = a.shape[axis]
    p = _pad_axis(a, r, axis)
    out = np.zeros_like(a, dtype=np.float64)
    for k in range(1, r + 1):
        out = out + deriv[r + k] * (_shifted(p, axis, r + k, n) - _shifted(p, axis, r - k, n))
    return out


def gaussian_gradient_components(data: np.ndarray, sigma: float) -> list[np.ndarray]:
    """Per-axis Gaussian derivative responses, in voxel units."""
    data = np.asarray(data, dtype=np.float64)
    smooth, deriv = gaussian_kernels(sigma)
    comps = []
    for axis in range(3):
        j, k = (a for a in range(3) if a != axis)
        # both smoothing orders, summed: a+b == b+a bitwise, so relabeling the
        # two other axes cannot change the result
        s = 0.5 * (
            smooth_axis(smooth_axis(data, smooth, j), smooth, k)
            + smooth_axis(smooth_axis(data, smooth, k), smooth, j)
        )
        comps.append(derivative_axis(s, deriv, axis))
    return comps


def gradient_magnitude_array(data: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    sq = np.stack([c * c for c in gaussian_gradient_components(data, sigma)])
    # sum squares smallest-first so the result is independent of axis order
    sq.sort(axis=0)
    return np.sqrt(sq[0] + sq[1] + sq[2])


def gradient_magnitude(v: Volume3, sigma: float = 1.0) -> Volume3:
    return v.with_data(gradient_magnitude_array(v.data, sigma))


def build_gradient_map(mid_img: Volume3, rois: RoiSet, cfg: GradMapConfig = GradMapConfig()) -> Volume3:
    """Gradient map of the min-max normalized image inside the ROI boxes.

    Each box is processed on a crop padded by the kernel radius, so values in
    the box equal those of a whole-volume computation. Values are divided by
    ``clip_scale`` and clipped to [0, 1]; overlapping boxes merge by maximum;
    everything outside the boxes is exactly 0.
    """
    if tuple(rois.shape) != mid_img.shape:
        raise GeometryMismatch(f"ROI grid {tuple(rois.shape)} != image grid {mid_img.shape}")
    out = np.zeros(mid_img.shape)
    if rois.empty:
        log.warning("empty ROI set: gradient map is all zeros")
        return mid_img.with_data(out)
    norm = minmax_normalize(mid_img).data
    pad = kernel_radius(cfg.sigma)
    shape = np.array(mid_img.shape)
    for box in rois.boxes:
        if not box.within(mid_img.shape):
            raise ValueError(f"box {box.lo}..{box.hi} outside grid {mid_img.shape}")
        c_lo = np.maximum(np.array(box.lo) - pad, 0)
        c_hi = np.minimum(np.array(box.hi) + pad, shape - 1)
        crop = norm[tuple(slice(a, b + 1) for a, b in zip(c_lo, c_hi))]
        gm = gradient_magnitude_array(crop, cfg.sigma)
        inner = tuple(slice(a - c, b - c + 1) for a, b, c in zip(box.lo, box.hi, c_lo))
        vals = np.clip(gm[inner] / cfg.clip_scale, 0.0, 1.0)
        region = out[box.slices]
        np.maximum(region, vals, out=region)
    return mid_img.with_data(out)


@dataclass(eq=False)
class TwoChannelSample:
    channel0: Volume3
    channel1: Volume3
    case_id: str
    phase: str
    rois: RoiSet
    zscore_mean: float = 0.0
    zscore_std: float = 1.0
    warnings: list[str] = field(default_factory=list)


def assemble_sample(
    img: Volume3,
    mask: LabelMask3,
    rng: np.random.Generator,
    cfg: GradMapConfig = GradMapConfig(),
    case_id: str = "",
    phase: str = "midRT",
    margins=DEFAULT_MARGINS,
    connectivity: int = DEFAULT_CONNECTIVITY,
    seed: int | None = None,
) -> TwoChannelSample:
    """Z-scored image plus prior-guided gradient map for one image.

    For a mid-RT sample ``mask`` is the registered pre-RT delineation; for a
    pre-RT sample it is the pre-RT ground truth.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    if mask.shape != img.shape:
        raise GeometryMismatch(f"mask grid {mask.shape} != image grid {img.shape}")
    ch0, mean, std = zscore_normalize(img)
    rois = boxes_from_prior(mask, rng, margins, connectivity, seed)
    ch1 = build_gradient_map(img, rois, cfg)
    return TwoChannelSample(ch0, ch1, case_id, phase, rois, mean, std, list(rois.warnings))
