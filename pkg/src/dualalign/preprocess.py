"""Volume preprocessing: normalization, ROI cropping, slicing, augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from .core import SLICING_AXES, LabelVolume, Slice2D, Volume3D
from .errors import DegenerateVolume, RoiOutOfBounds

_CV_BORDER = cv2.BORDER_REFLECT


@dataclass(frozen=True)
class PreprocessConfig:
    """How volumes are cropped and sliced into square training samples."""

    roi_strategy: str = "none"  # none | fixed_box | label_bounding_slices
    roi_center: Optional[tuple[int, int, int]] = None
    roi_size: Optional[tuple[int, int, int]] = None
    target_resolution: int = 256
    slicing_axis: str = "axial"

    def __post_init__(self):
        if self.roi_strategy not in ("none", "fixed_box", "label_bounding_slices"):
            raise ValueError(f"unknown roi_strategy {self.roi_strategy!r}")
        if self.target_resolution < 8 or self.target_resolution % 2:
            raise ValueError("target_resolution must be >= 8 and even")
        if self.slicing_axis not in SLICING_AXES:
            raise ValueError(f"slicing_axis must be one of {tuple(SLICING_AXES)}")

    @property
    def axis(self) -> int:
        return SLICING_AXES[self.slicing_axis]


@dataclass(frozen=True)
class AugmentConfig:
    """Random rotation / scaling / shear ranges for training-time augmentation."""

    rotation_range: float = 10.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    shear_range: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (lo <= 1.0 <= hi):
            raise ValueError(f"scale_range must contain 1.0, got {self.scale_range}")
        if self.rotation_range < 0 or self.shear_range < 0:
            raise ValueError("rotation_range and shear_range must be >= 0")


def normalize(volume: Volume3D) -> Volume3D:
    """Rescale voxel intensities to zero mean and unit variance (population)."""
    v = volume.voxels.astype(np.float64)
    if v.size < 2:
        raise DegenerateVolume("need at least 2 voxels to normalize")
    mean = v.mean()
    std = v.std()
    if not np.isfinite(mean) or not np.isfinite(std):
        raise DegenerateVolume("volume contains non-finite voxels")
    if std == 0.0:
        raise DegenerateVolume("volume has zero variance")
    out = ((v - mean) / std).astype(np.float32)
    return Volume3D(out, volume.spacing, volume.modality, volume.subject_id)


def crop_to_roi(
    volume: Volume3D,
    labels: Optional[LabelVolume],
    cfg: PreprocessConfig,
) -> tuple[Volume3D, Optional[LabelVolume]]:
    """Crop a volume (and its labels) to the configured region of interest."""
    if cfg.roi_strategy == "none":
        return volume, labels

    if cfg.roi_strategy == "fixed_box":
        if cfg.roi_center is None or cfg.roi_size is None:
            raise ValueError("fixed_box cropping requires roi_center and roi_size")
        starts, stops = [], []
        for dim, c, s in zip(volume.shape, cfg.roi_center, cfg.roi_size):
            start = int(c) - int(s) // 2
            stop = start + int(s)
            if start < 0 or stop > dim or s < 1:
                raise RoiOutOfBounds(
                    f"box [{start}:{stop}] exceeds dimension of size {dim}"
                )
            starts.append(start)
            stops.append(stop)
        sl = tuple(slice(a, b) for a, b in zip(starts, stops))
    else:  # label_bounding_slices: drop slices with no foreground along the axis
        if labels is None:
            raise ValueError("label_bounding_slices cropping requires labels")
        axis = cfg.axis
        fg = np.moveaxis(labels.labels > 0, axis, 0).reshape(labels.shape[axis], -1)
        keep = np.flatnonzero(fg.any(axis=1))
        if keep.size == 0:
            raise RoiOutOfBounds("no slice contains any foreground label")
        sl = [slice(None)] * 3
        sl[axis] = keep
        sl = tuple(sl)

    cropped_v = Volume3D(volume.voxels[sl], volume.spacing, volume.modality,
                         volume.subject_id)
    cropped_l = None
    if labels is not None:
        cropped_l = LabelVolume(labels.labels[sl], labels.num_classes, labels.spacing)
    return cropped_v, cropped_l


def resize_image(img: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to (rows, cols)."""
    rows, cols = resolution
    return cv2.resize(img.astype(np.float32), (cols, rows), interpolation=cv2.INTER_LINEAR)


def resize_labels(lab: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize to (rows, cols); preserves the label alphabet."""
    rows, cols = resolution
    out = cv2.resize(lab.astype(np.float32), (cols, rows), interpolation=cv2.INTER_NEAREST)
    return np.rint(out).astype(np.int32)


def take_slice(arr: np.ndarray, axis: int, index: int) -> np.ndarray:
    return np.take(arr, index, axis=axis)


def extract_slices(
    volume: Volume3D,
    labels: Optional[LabelVolume],
    cfg: PreprocessConfig,
    domain: Optional[str] = None,
) -> list[Slice2D]:
    """Cut a volume into square 2D samples along the configured axis.

    Slices are returned in index order. Images are resampled bilinearly to the
    target resolution, labels with nearest-neighbor. ``domain`` defaults to
    the labeled role: "source" when labels are supplied, "target" otherwise.
    """
    axis = cfg.axis
    res = (cfg.target_resolution, cfg.target_resolution)
    if domain is None:
        domain = "source" if labels is not None else "target"
    out = []
    for k in range(volume.shape[axis]):
        img = resize_image(take_slice(volume.voxels, axis, k), res)
        lab = None
        if labels is not None:
            lab = resize_labels(take_slice(labels.labels, axis, k), res)
        out.append(Slice2D(img, lab, domain))
    return out


def _affine_matrix(size: int, angle: float, scale: float, shear: float) -> np.ndarray:
    center = ((size - 1) / 2.0, (size - 1) / 2.0)
    rot = cv2.getRotationMatrix2D(center, angle, scale)  # 2x3
    rot3 = np.vstack([rot, [0.0, 0.0, 1.0]])
    sh3 = np.array(
        [
            [1.0, shear, -shear * center[1]],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return (rot3 @ sh3)[:2]


def apply_affine(
    pixels: np.ndarray,
    label: Optional[np.ndarray],
    angle: float,
    scale: float = 1.0,
    shear: float = 0.0,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Apply one affine transform to an image (bilinear) and label (nearest)."""
    size = pixels.shape[0]
    m = _affine_matrix(size, angle, scale, shear)
    img = cv2.warpAffine(
        pixels.astype(np.float32), m, (size, size),
        flags=cv2.INTER_LINEAR, borderMode=_CV_BORDER,
    )
    lab = None
    if label is not None:
        lab = cv2.warpAffine(
            label.astype(np.float32), m, (size, size),
            flags=cv2.INTER_NEAREST, borderMode=_CV_BORDER,
        )
        lab = np.rint(lab).astype(np.int32)
    return img, lab


def augment(sample: Slice2D, cfg: AugmentConfig, seed: int) -> Slice2D:
    """Randomly rotate/scale/shear a slice; image and label share the transform."""
    if not cfg.enabled:
        raise ValueError("augment called with cfg.enabled = False")
    rng = np.random.default_rng(seed)
    angle = rng.uniform(-cfg.rotation_range, cfg.rotation_range)
    scale = rng.uniform(*cfg.scale_range)
    shear = rng.uniform(-cfg.shear_range, cfg.shear_range)
    if angle == 0.0 and scale == 1.0 and shear == 0.0:
        return sample
    img, lab = apply_affine(sample.pixels, sample.label, angle, scale, shear)
    return Slice2D(img, lab, sample.domain)
