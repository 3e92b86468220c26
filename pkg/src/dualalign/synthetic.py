"""Desk-scale synthetic two-domain datasets with a controllable appearance shift.

Each subject is a stack of slices containing ellipsoidal "organs", one
intensity band per foreground class. The target cohort is drawn independently
(unpaired) and pushed through an ordered appearance transform so that the two
cohorts differ in intensity statistics but share anatomy-like structure.
Ground-truth labels are kept for both cohorts; target labels are reserved for
evaluation and the supervised upper bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import LabelVolume, Volume3D
from .errors import EmptyDataset
from .volume_io import load_volume, save_volume

TRANSFORM_OPS = (
    "intensity_inversion",
    "gamma",
    "additive_gaussian_noise",
    "smooth_bias_field",
)

# inversion + gamma + noise + bias field: the reference appearance shift
DEFAULT_TARGET_TRANSFORM = (
    ("intensity_inversion", None),
    ("gamma", 1.5),
    ("additive_gaussian_noise", 0.1),
    ("smooth_bias_field", 0.3),
)


@dataclass(frozen=True)
class SyntheticConfig:
    image_size: int = 64
    num_subjects_per_domain: int = 8
    num_shapes: int = 2
    slices_per_subject: int = 12
    target_transform: tuple = DEFAULT_TARGET_TRANSFORM
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")
        if self.num_shapes < 1:
            raise ValueError("num_shapes must be >= 1")
        if self.num_subjects_per_domain < 2:
            raise ValueError("need at least 2 subjects per domain for a split")
        steps = tuple((str(op), None if v is None else float(v))
                      for op, v in self.target_transform)
        for op, _ in steps:
            if op not in TRANSFORM_OPS:
                raise ValueError(f"unknown transform op {op!r}")
        object.__setattr__(self, "target_transform", steps)

    @property
    def num_classes(self) -> int:
        return self.num_shapes + 1  # background is class 0


@dataclass(frozen=True)
class Subject:
    volume: Volume3D
    labels: LabelVolume

    @property
    def subject_id(self) -> str:
        return self.volume.subject_id


@dataclass
class Cohort:
    """One domain's subjects plus a train/test split disjoint by subject id."""

    domain: str
    subjects: list[Subject] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)

    def _select(self, ids):
        by_id = {s.subject_id: s for s in self.subjects}
        return [by_id[i] for i in ids]

    @property
    def train_subjects(self) -> list[Subject]:
        return self._select(self.train_ids)

    @property
    def test_subjects(self) -> list[Subject]:
        return self._select(self.test_ids)


def split_ids(ids: list[str], train_fraction: float = 0.8) -> tuple[list[str], list[str]]:
    """Deterministic subject-level split; at least one subject on each side."""
    n = len(ids)
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    return list(ids[:n_train]), list(ids[n_train:])


def apply_target_transform(image: np.ndarray, steps, rng: np.random.Generator) -> np.ndarray:
    """Run the ordered appearance-shift pipeline over one image volume."""
    out = image.astype(np.float32)
    for op, value in steps:
        if op == "intensity_inversion":
            out = 1.0 - out
        elif op == "gamma":
            out = np.clip(out, 0.0, 1.0) ** value
        elif op == "additive_gaussian_noise":
            out = out + rng.normal(0.0, value, size=out.shape)
        elif op == "smooth_bias_field":
            coarse = rng.uniform(-1.0, 1.0, size=(4, 4, 2))
            factors = [t / c for t, c in zip(out.shape, coarse.shape)]
            fld = ndimage.zoom(coarse, factors, order=3, mode="nearest")
            peak = np.abs(fld).max()
            if peak > 0:
                fld = fld / peak
            out = out * (1.0 + value * fld)
        out = out.astype(np.float32)
    return out


def _draw_subject(rng: np.random.Generator, cfg: SyntheticConfig, subject_id: str,
                  domain: str) -> Subject:
    n = cfg.image_size
    d = cfg.slices_per_subject
    labels = np.zeros((n, n, d), dtype=np.int32)
    xs, ys, zs = np.meshgrid(np.arange(n), np.arange(n), np.arange(d), indexing="ij")

    centers: list[tuple[float, float]] = []
    for k in range(1, cfg.num_shapes + 1):
        for _ in range(30):
            cx = rng.uniform(0.30 * n, 0.70 * n)
            cy = rng.uniform(0.30 * n, 0.70 * n)
            if all(np.hypot(cx - px, cy - py) >= 0.30 * n for px, py in centers):
                break
        centers.append((cx, cy))
        cz = rng.uniform(0.40 * d, 0.60 * d)
        rx = rng.uniform(0.12 * n, 0.20 * n)
        ry = rng.uniform(0.12 * n, 0.20 * n)
        rz = rng.uniform(0.35 * d, 0.50 * d)
        # tilt: the in-plane center drifts across slices so no single
        # absolute position explains a structure
        dx = rng.uniform(-0.12 * n, 0.12 * n)
        dy = rng.uniform(-0.12 * n, 0.12 * n)
        zfrac = (zs - cz) / max(d, 1)
        inside = (
            ((xs - (cx + dx * zfrac)) / rx) ** 2
            + ((ys - (cy + dy * zfrac)) / ry) ** 2
            + ((zs - cz) / rz) ** 2
        ) <= 1.0
        labels[inside] = k

    base = np.concatenate([[0.12], np.linspace(0.50, 0.90, cfg.num_shapes)])
    base = base + rng.uniform(-0.03, 0.03, size=base.shape)
    image = base[labels].astype(np.float32)
    image += rng.normal(0.0, 0.03, size=image.shape).astype(np.float32)

    volume = Volume3D(image, (1.0, 1.0, 1.0), modality=domain, subject_id=subject_id)
    return Subject(volume, LabelVolume(labels, cfg.num_classes, volume.spacing))


def make_synthetic_domains(cfg: SyntheticConfig) -> tuple[Cohort, Cohort]:
    """Generate unpaired source and target cohorts with ground truth for both."""
    root = np.random.SeedSequence(cfg.seed)
    src_seq, tgt_seq = root.spawn(2)
    seqs = {"source": src_seq, "target": tgt_seq}
    cohorts = {}
    for domain, seq in seqs.items():
        subject_seqs = seq.spawn(cfg.num_subjects_per_domain)
        subjects = []
        for i, sseq in enumerate(subject_seqs):
            rng = np.random.default_rng(sseq)
            subj = _draw_subject(rng, cfg, f"{domain}_{i:02d}", domain)
            if domain == "target":
                shifted = apply_target_transform(
                    subj.volume.voxels, cfg.target_transform, rng
                )
                vol = Volume3D(shifted, subj.volume.spacing, domain, subj.subject_id)
                subj = Subject(vol, subj.labels)
            subjects.append(subj)
        train_ids, test_ids = split_ids([s.subject_id for s in subjects])
        cohorts[domain] = Cohort(domain, subjects, train_ids, test_ids)
    return cohorts["source"], cohorts["target"]


def save_cohort(cohort: Cohort, out_dir) -> Path:
    """Write one volume+label file pair per subject plus the split manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for subj in cohort.subjects:
        save_volume(out_dir / f"{subj.subject_id}.davol", subj.volume, subj.labels)
    with open(out_dir / "split.json", "w") as f:
        json.dump({"domain": cohort.domain, "train": cohort.train_ids,
                   "test": cohort.test_ids}, f, indent=2)
    return out_dir


def load_cohort(in_dir, domain: Optional[str] = None) -> Cohort:
    in_dir = Path(in_dir)
    paths = sorted(p for p in in_dir.glob("*.davol") if ".seg." not in p.name)
    paths += sorted(set(in_dir.glob("*.nii*")) - set(in_dir.glob("*.seg.nii*")))
    if not paths:
        raise EmptyDataset(f"no volumes found in {in_dir}")
    subjects = []
    for p in paths:
        vol, lab = load_volume(p)
        if lab is None:
            raise EmptyDataset(f"{p} has no sibling label file")
        subjects.append(Subject(vol, lab))
    split_path = in_dir / "split.json"
    if split_path.exists():
        with open(split_path) as f:
            split = json.load(f)
        train_ids, test_ids = list(split["train"]), list(split["test"])
        domain = domain or split.get("domain", "source")
    else:
        train_ids, test_ids = split_ids([s.subject_id for s in subjects])
        domain = domain or "source"
    return Cohort(domain, subjects, train_ids, test_ids)
