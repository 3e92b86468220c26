"""Volumetric segmentation metrics with subject-level reporting semantics.

Dice is computed per foreground class with the convention that two empty
masks score 1.0 and exactly one empty mask scores 0.0. ASD is the symmetric
mean of both directed average surface distances in mm, and is undefined
(reported N/A) whenever either surface is empty; undefined entries are
excluded from averages and flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LabelVolume
from .errors import ShapeMismatch, SpacingMismatch
from .kernels import nearest_sq_distances


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with a 6-neighbor outside the mask or on the edge."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = np.ones_like(mask)
    for axis in range(3):
        lo = np.take(padded, range(0, padded.shape[axis] - 2), axis=axis)
        hi = np.take(padded, range(2, padded.shape[axis]), axis=axis)
        sl = [slice(1, -1)] * 3
        sl[axis] = slice(None)
        interior = interior & lo[tuple(sl)] & hi[tuple(sl)]
    return mask & ~interior


def surface_points(mask: np.ndarray, spacing) -> np.ndarray:
    """Physical coordinates (mm) of boundary voxel centers."""
    idx = np.argwhere(boundary_mask(mask))
    return idx.astype(np.float64) * np.asarray(spacing, dtype=np.float64)


def _check_pair(pred: LabelVolume, gt: LabelVolume, check_spacing: bool) -> None:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if pred.num_classes != gt.num_classes:
        raise ValueError(
            f"num_classes differ: {pred.num_classes} vs {gt.num_classes}"
        )
    if check_spacing and pred.spacing != gt.spacing:
        raise SpacingMismatch(f"{pred.spacing} vs {gt.spacing}")


def dice_per_class(pred: LabelVolume, gt: LabelVolume) -> list[float]:
    """Dice overlap for each foreground class (1 .. num_classes-1)."""
    _check_pair(pred, gt, check_spacing=False)
    out = []
    for k in range(1, gt.num_classes):
        p = pred.labels == k
        g = gt.labels == k
        np_, ng = int(p.sum()), int(g.sum())
        if np_ == 0 and ng == 0:
            out.append(1.0)
        elif np_ == 0 or ng == 0:
            out.append(0.0)
        else:
            inter = int(np.logical_and(p, g).sum())
            out.append(2.0 * inter / (np_ + ng))
    return out


def asd_per_class(pred: LabelVolume, gt: LabelVolume) -> list[Optional[float]]:
    """Average symmetric surface distance (mm) per foreground class.

    ``None`` marks classes where either surface is empty.
    """
    _check_pair(pred, gt, check_spacing=True)
    out: list[Optional[float]] = []
    for k in range(1, gt.num_classes):
        sp = surface_points(pred.labels == k, pred.spacing)
        sg = surface_points(gt.labels == k, gt.spacing)
        if len(sp) == 0 or len(sg) == 0:
            out.append(None)
            continue
        d_pg = np.sqrt(nearest_sq_distances(sp, sg)).mean()
        d_gp = np.sqrt(nearest_sq_distances(sg, sp)).mean()
        out.append(float(0.5 * (d_pg + d_gp)))
    return out


def _mean_defined(values) -> Optional[float]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


@dataclass
class MetricsReport:
    """Per-subject, per-foreground-class Dice and ASD plus aggregates."""

    num_classes: int
    class_names: list[str] = field(default_factory=list)
    dice: dict[str, list[float]] = field(default_factory=dict)
    asd: dict[str, list[Optional[float]]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [f"class{k}" for k in range(1, self.num_classes)]

    def add_subject(self, subject_id: str, dice: list[float],
                    asd: list[Optional[float]]) -> None:
        self.dice[subject_id] = list(dice)
        self.asd[subject_id] = list(asd)

    @property
    def subject_ids(self) -> list[str]:
        return list(self.dice)

    def class_mean_dice(self) -> list[float]:
        per_class = zip(*self.dice.values())
        return [float(np.mean(v)) for v in per_class]

    def class_mean_asd(self) -> list[Optional[float]]:
        per_class = zip(*self.asd.values())
        return [_mean_defined(v) for v in per_class]

    def mean_dice(self) -> float:
        return float(np.mean(self.class_mean_dice()))

    def mean_asd(self) -> Optional[float]:
        return _mean_defined(self.class_mean_asd())

    @property
    def has_undefined_asd(self) -> bool:
        return any(v is None for vals in self.asd.values() for v in vals)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "class_names": self.class_names,
            "per_subject": {
                sid: {"dice": self.dice[sid], "asd": self.asd[sid]}
                for sid in self.subject_ids
            },
            "class_mean_dice": self.class_mean_dice(),
            "class_mean_asd": self.class_mean_asd(),
            "mean_dice": self.mean_dice(),
            "mean_asd": self.mean_asd(),
            "has_undefined_asd": self.has_undefined_asd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        report = cls(d["num_classes"], list(d["class_names"]))
        for sid, vals in d["per_subject"].items():
            report.add_subject(sid, vals["dice"], vals["asd"])
        return report


def _fmt(v: Optional[float], scale: float = 1.0) -> str:
    return "N/A" if v is None else f"{v * scale:.1f}"


def render_comparison_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table: one row per method, Dice (%) then ASD columns."""
    if not reports:
        return ""
    first = next(iter(reports.values()))
    names = first.class_names
    header = (
        ["Method"]
        + [f"Dice:{n}" for n in names] + ["Dice:Avg"]
        + [f"ASD:{n}" for n in names] + ["ASD:Avg"]
    )
    rows = [header]
    for method, rep in reports.items():
        row = [method]
        row += [_fmt(v, 100.0) for v in rep.class_mean_dice()]
        row += [_fmt(rep.mean_dice(), 100.0)]
        row += [_fmt(v) for v in rep.class_mean_asd()]
        row += [_fmt(rep.mean_asd())]
        if rep.has_undefined_asd:
            row[-1] += " *"
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    if any(rep.has_undefined_asd for rep in reports.values()):
        lines.append("* some surface distances undefined (empty mask), excluded from averages")
    return "\n".join(lines)
