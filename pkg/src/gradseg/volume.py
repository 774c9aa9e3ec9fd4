"""Resampling, intensity normalization and physical volume measurement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVolume, ZeroRange, ZeroVariance
from .nifti_io import LabelMask3, Volume3

# nnU-Net-style target spacing expressed in this package's (x, y, z) order
DEFAULT_TARGET_SPACING = (0.5, 0.5, 1.2)
IMAGE_ORDER = 3
MASK_ORDER = 1


@dataclass(frozen=True)
class ResampleSpec:
    target_spacing: tuple[float, float, float] = DEFAULT_TARGET_SPACING
    interpolation_order: int = IMAGE_ORDER

    def __post_init__(self):
        sp = tuple(float(s) for s in self.target_spacing)
        if len(sp) != 3 or not all(s > 0 for s in sp):
            raise ValueError(f"target_spacing must be 3 positive values, got {self.target_spacing}")
        if self.interpolation_order not in (0, 1, 3):
            raise ValueError(f"interpolation_order must be 0, 1 or 3, got {self.interpolation_order}")
        object.__setattr__(self, "target_spacing", sp)


def output_shape(shape, src_spacing, target_spacing) -> tuple[int, int, int]:
    # rounding guard: 10 * 0.5 / 0.25 must give 20, not 21
    return tuple(
        max(1, math.ceil(round(n * s / t, 9))) for n, s, t in zip(shape, src_spacing, target_spacing)
    )


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    t2, t3 = t * t, t * t * t
    return np.stack(
        [
            0.5 * (-t3 + 2 * t2 - t),
            0.5 * (3 * t3 - 5 * t2 + 2),
            0.5 * (-3 * t3 + 4 * t2 + t),
            0.5 * (t3 - t2),
        ],
        axis=-1,
    )


def interpolation_taps(n_in: int, n_out: int, scale: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and weights, each ``(n_out, taps)``, for one axis.

    Output center ``j`` sits at continuous source index
    ``(j + 0.5) * scale - 0.5`` where ``scale = target / source spacing``.
    Taps falling outside ``[0, n_in - 1]`` are clamped (edge replication).
    Column 0 is the anchor tap (the sample at or left of the position).
    """
    pos = (np.arange(n_out) + 0.5) * scale - 0.5
    if order == 0:
        idx = np.clip(np.floor(pos + 0.5).astype(int), 0, n_in - 1)
        return idx[:, None], np.ones((n_out, 1))
    base = np.floor(pos)
    t = pos - base
    base = base.astype(int)
    if order == 1:
        offsets = (0, 1)
        weights = np.stack([1.0 - t, t], axis=-1)
    else:
        offsets = (0, -1, 1, 2)
        cr = _catmull_rom(t)
        weights = cr[:, [1, 0, 2, 3]]
    idx = np.stack([np.clip(base + off, 0, n_in - 1) for off in offsets], axis=-1)
    return idx, weights


def interpolation_matrix(n_in: int, n_out: int, scale: float, order: int) -> np.ndarray:
    """Dense ``(n_out, n_in)`` form of :func:`interpolation_taps`."""
    idx, weights = interpolation_taps(n_in, n_out, scale, order)
    w = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), idx.shape[1])
    np.add.at(w, (rows, idx.ravel()), weights.ravel())
    return w


def _apply_taps(data: np.ndarray, taps, axis: int) -> np.ndarray:
    idx, w = taps
    f = np.moveaxis(data, axis, 0)
    anchor = f[idx[:, 0]]
    extra = (1,) * (f.ndim - 1)
    acc = np.zeros_like(anchor)
    for t in range(1, idx.shape[1]):
        acc += w[:, t].reshape(-1, *extra) * (f[idx[:, t]] - anchor)
    # anchored form: weights sum to 1, so a constant input gives acc == 0 exactly
    return np.moveaxis(anchor + acc, 0, axis)


def _apply_separable(data: np.ndarray, taps) -> np.ndarray:
    out = data
    for axis, tp in enumerate(taps):
        out = _apply_taps(out, tp, axis)
    return out


def _resampled_affine(affine, src_spacing, target_spacing) -> np.ndarray:
    scale = np.array(target_spacing) / np.array(src_spacing)
    first_center = 0.5 * scale - 0.5
    new = np.array(affine, dtype=np.float64).copy()
    new[:, 3] = affine[:, :3] @ first_center + affine[:, 3]
    new[:, :3] = affine[:, :3] * scale
    return new


def _matrices(shape, src_spacing, spec: ResampleSpec, order: int):
    if min(shape) < 1:
        raise DegenerateVolume(f"cannot resample a volume with shape {shape}")
    out_shape = output_shape(shape, src_spacing, spec.target_spacing)
    scales = [t / s for s, t in zip(src_spacing, spec.target_spacing)]
    mats = [interpolation_taps(n, m, sc, order) for n, m, sc in zip(shape, out_shape, scales)]
    return mats


def resample(v: Volume3, spec: ResampleSpec) -> Volume3:
    """Resample an image onto ``spec.target_spacing`` (separable kernels)."""
    mats = _matrices(v.shape, v.spacing, spec, spec.interpolation_order)
    data = _apply_separable(v.data, mats)
    return Volume3(data, spec.target_spacing, _resampled_affine(v.affine, v.spacing, spec.target_spacing))


def resample_mask(m: LabelMask3, spec: ResampleSpec = ResampleSpec(interpolation_order=MASK_ORDER)) -> LabelMask3:
    """Resample a label mask one indicator at a time with trilinear weights.

    A voxel takes the label whose interpolated indicator is largest and above
    0.5 (lower label wins ties); otherwise it is background.
    """
    mats = _matrices(m.shape, m.spacing, spec, MASK_ORDER)
    out_shape = tuple(idx.shape[0] for idx, _ in mats)
    best = np.zeros(out_shape)
    labels = np.zeros(out_shape, dtype=np.uint8)
    for lab in np.unique(m.data):
        if lab == 0:
            continue
        ind = _apply_separable((m.data == lab).astype(np.float64), mats)
        take = (ind > 0.5) & (ind > best)
        labels[take] = lab
        best = np.where(take, ind, best)
    return LabelMask3(labels, spec.target_spacing, _resampled_affine(m.affine, m.spacing, spec.target_spacing))


def zscore_normalize(v: Volume3) -> tuple[Volume3, float, float]:
    """Standardize to mean 0 and population std 1; returns ``(volume, mean, std)``."""
    if v.data.size < 2:
        raise ZeroVariance("z-score needs at least 2 voxels")
    mean = float(v.data.mean())
    std = float(v.data.std())
    if std == 0.0:
        raise ZeroVariance("volume has zero variance")
    return v.with_data((v.data - mean) / std), mean, std


def minmax_normalize(v: Volume3) -> Volume3:
    lo, hi = float(v.data.min()), float(v.data.max())
    if not hi > lo:
        raise ZeroRange(f"volume has a constant value {lo}")
    out = (v.data - lo) / (hi - lo)
    # exact endpoints, independent of rounding in the division
    out[v.data == lo] = 0.0
    out[v.data == hi] = 1.0
    return v.with_data(np.clip(out, 0.0, 1.0))


def voxel_volume_mm3(spacing) -> float:
    sx, sy, sz = spacing
    return sx * sy * sz


def volume_cc(m: LabelMask3, label: int) -> float:
    """Physical volume of ``label`` in cubic centimetres."""
    count = int(np.count_nonzero(m.data == label))
    return count * voxel_volume_mm3(m.spacing) / 1000.0
