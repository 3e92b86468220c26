"""Experiment orchestration: single adaptation runs, the ablation ladder,
qualitative image export, and plot emission.

The reference desk-scale setup (64 x 64 slices, two foreground classes, an
inversion + gamma + noise + bias-field appearance shift, 2000 iterations at
batch 4) trains in minutes on a multicore CPU while exhibiting a genuine
domain gap; it backs the behavioral acceptance checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Optional

import cv2
import matplotlib
import numpy as np
import yaml

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .core import Slice2D  # noqa: E402
from .errors import EmptyLog  # noqa: E402
from .evaluator import evaluate_dataset  # noqa: E402
from .metrics import MetricsReport, render_comparison_table  # noqa: E402
from .networks import ArchConfig  # noqa: E402
from .preprocess import (  # noqa: E402
    AugmentConfig,
    PreprocessConfig,
    extract_slices,
    normalize,
)
from .state import SifaState  # noqa: E402
from .synthetic import (  # noqa: E402
    Cohort,
    SyntheticConfig,
    load_cohort,
    make_synthetic_domains,
    save_cohort,
)
from .trainer import (  # noqa: E402
    VARIANTS,
    TrainConfig,
    TrainData,
    TrainResult,
    is_bound_variant,
    train,
)

DIRECTIONS = ("source_to_target", "target_to_source")

LADDER = (
    "no_adaptation_lower_bound",
    "image_alignment_only",
    "image_plus_fap",
    "full_sifa",
    "supervised_upper_bound",
)

# Reference desk-scale configuration (seed injected per experiment).
REFERENCE_SYNTHETIC = SyntheticConfig(
    image_size=64,
    num_subjects_per_domain=8,
    num_shapes=2,
    slices_per_subject=12,
)
REFERENCE_ARCH = ArchConfig(
    input_resolution=64,
    num_classes=3,
    enc_base=4,
    gen_base=16,
    disc_base=16,
)
REFERENCE_TRAIN = TrainConfig(
    iterations=2000,
    batch_size=4,
    augment=AugmentConfig(rotation_range=15.0, scale_range=(0.85, 1.15),
                          shear_range=0.1),
)
REFERENCE_SEEDS = (101, 202, 303)


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one run; outputs are a pure function of
    the spec plus its seed."""

    variant: str = "full_sifa"
    direction: str = "source_to_target"
    seed: int = 0
    output_dir: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    source_dir: Optional[str] = None
    target_dir: Optional[str] = None
    arch: ArchConfig = field(default_factory=lambda: REFERENCE_ARCH)
    train: TrainConfig = field(default_factory=lambda: REFERENCE_TRAIN)
    preprocess: Optional[PreprocessConfig] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        has_real = self.source_dir is not None or self.target_dir is not None
        if (self.synthetic is not None) == has_real:
            raise ValueError("exactly one of synthetic and real data must be set")
        if self.preprocess is None:
            self.preprocess = PreprocessConfig(
                target_resolution=self.arch.input_resolution
            )
        self.train = replace(self.train, seed=self.seed)
        if self.synthetic is not None:
            self.synthetic = replace(self.synthetic, seed=self.seed)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    report: MetricsReport
    train_result: TrainResult
    output_dir: Optional[Path]


def load_cohort_pair(spec: ExperimentSpec) -> tuple[Cohort, Cohort]:
    """The (labeled, unlabeled) cohorts under the spec's adaptation direction."""
    if spec.synthetic is not None:
        source, target = make_synthetic_domains(spec.synthetic)
    else:
        source = load_cohort(spec.source_dir, domain="source")
        target = load_cohort(spec.target_dir, domain="target")
    if spec.direction == "source_to_target":
        return source, target
    return target, source


def build_train_data(spec: ExperimentSpec, labeled: Cohort,
                     unlabeled: Cohort) -> TrainData:
    pre = spec.preprocess
    if is_bound_variant(spec.variant):
        # bounds train the plain segmentation pair on one labeled cohort
        cohort = labeled if spec.variant == "no_adaptation_lower_bound" else unlabeled
        labeled_slices: list[Slice2D] = []
        for subj in cohort.train_subjects:
            labeled_slices += extract_slices(normalize(subj.volume), subj.labels, pre)
        return TrainData(labeled=labeled_slices)
    labeled_slices = []
    for subj in labeled.train_subjects:
        labeled_slices += extract_slices(normalize(subj.volume), subj.labels, pre)
    unlabeled_slices: list[Slice2D] = []
    for subj in unlabeled.train_subjects:
        unlabeled_slices += extract_slices(normalize(subj.volume), None, pre,
                                           domain="target")
    return TrainData(labeled=labeled_slices, unlabeled=unlabeled_slices)


def run_experiment(
    spec: ExperimentSpec,
    cohorts: Optional[tuple[Cohort, Cohort]] = None,
) -> ExperimentResult:
    """Train one variant and evaluate it on the adaptation-target test split."""
    labeled, unlabeled = cohorts if cohorts is not None else load_cohort_pair(spec)
    data = build_train_data(spec, labeled, unlabeled)
    out_dir = Path(spec.output_dir) if spec.output_dir else None
    result = train(spec.variant, data, spec.train, spec.arch, out_dir=out_dir)
    report = evaluate_dataset(result.state, unlabeled.test_subjects, spec.preprocess)
    if out_dir is not None:
        with open(out_dir / "report.json", "w") as f:
            json.dump(report.to_dict(), f, indent=2)
        with open(out_dir / "report.txt", "w") as f:
            f.write(render_comparison_table({spec.variant: report}) + "\n")
    return ExperimentResult(spec, report, result, out_dir)


def run_ablation_ladder(base_spec: ExperimentSpec) -> list[ExperimentResult]:
    """Run every ladder variant on shared data and seeds, in ladder order."""
    cohorts = load_cohort_pair(base_spec)
    results = []
    for variant in LADDER:
        out = None
        if base_spec.output_dir:
            out = str(Path(base_spec.output_dir) / variant)
        spec = replace(base_spec, variant=variant, output_dir=out)
        results.append(run_experiment(spec, cohorts=cohorts))
    if base_spec.output_dir:
        combined = {r.spec.variant: r.report for r in results}
        root = Path(base_spec.output_dir)
        with open(root / "ladder_report.json", "w") as f:
            json.dump({v: rep.to_dict() for v, rep in combined.items()}, f, indent=2)
        with open(root / "ladder_report.txt", "w") as f:
            f.write(render_comparison_table(combined) + "\n")
    return results


def _to_uint8(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.clip((img - lo) / (hi - lo) * 255.0, 0, 255).astype(np.uint8)


def export_transformed(state: SifaState, subjects, cfg: PreprocessConfig,
                       out_dir) -> list[Path]:
    """Write target-like translations of source slices next to the originals."""
    import torch

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state.nets.eval()
    written = []
    for subj in subjects:
        slices = extract_slices(normalize(subj.volume), None, cfg, domain="target")
        for k, s in enumerate(slices):
            with torch.no_grad():
                x = torch.from_numpy(s.pixels).reshape(1, 1, *s.pixels.shape)
                fake = state.nets.target_gen(x)[0, 0].numpy()
            base = f"{subj.subject_id}_{k:03d}"
            cv2.imwrite(str(out_dir / f"{base}_orig.png"), _to_uint8(s.pixels))
            path = out_dir / f"{base}_to_target.png"
            cv2.imwrite(str(path), _to_uint8(fake))
            written.append(path)
    return written


def read_loss_log(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def emit_plots(loss_logs: dict, reports: dict, out_dir) -> list[Path]:
    """Loss curves per discriminator term plus per-variant Dice boxplots.

    ``loss_logs`` maps run name to a loss-log path or a list of records;
    ``reports`` maps variant name to a MetricsReport.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    curves: dict[str, dict[str, tuple[list, list]]] = {}
    for run, log in loss_logs.items():
        records = read_loss_log(log) if not isinstance(log, list) else log
        if not records:
            raise EmptyLog(f"loss log for {run!r} has no records")
        for rec in records:
            for key, value in rec.items():
                if key.startswith("d_"):
                    xs, ys = curves.setdefault(key, {}).setdefault(run, ([], []))
                    xs.append(rec["iteration"])
                    ys.append(value)
    for term, runs in curves.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for run, (xs, ys) in runs.items():
            ax.plot(xs, ys, label=run, linewidth=1)
        ax.set_xlabel("iteration")
        ax.set_ylabel(f"{term} loss")
        ax.legend()
        path = out_dir / f"loss_{term}.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    if reports:
        names, dists = [], []
        for variant, rep in reports.items():
            names.append(variant)
            dists.append([float(np.mean(d)) for d in rep.dice.values()])
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.boxplot(dists, tick_labels=names)  # standard quartile boxes
        ax.set_ylabel("per-subject mean foreground Dice")
        plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
        fig.tight_layout()
        path = out_dir / "dice_boxplot.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# spec files
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = {
        "variant": spec.variant,
        "direction": spec.direction,
        "seed": spec.seed,
        "output_dir": spec.output_dir,
        "arch": asdict(spec.arch),
        "train": asdict(spec.train),
        "preprocess": asdict(spec.preprocess),
    }
    d["train"]["loss_weights"] = spec.train.loss_weights.to_dict()
    if spec.synthetic is not None:
        syn = asdict(spec.synthetic)
        syn["target_transform"] = [list(t) for t in spec.synthetic.target_transform]
        d["synthetic"] = syn
    else:
        d["data"] = {"source_dir": spec.source_dir, "target_dir": spec.target_dir}
    return d


def spec_from_dict(d: dict, overrides: Optional[dict] = None) -> ExperimentSpec:
    d = dict(d)
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                d[key] = value
    kwargs: dict = {
        "variant": d.get("variant", "full_sifa"),
        "direction": d.get("direction", "source_to_target"),
        "seed": int(d.get("seed", 0)),
        "output_dir": d.get("output_dir"),
    }
    if "synthetic" in d and d["synthetic"] is not None:
        syn = dict(d["synthetic"])
        if "target_transform" in syn:
            syn["target_transform"] = tuple(
                (op, None if v is None else float(v)) for op, v in syn["target_transform"]
            )
        kwargs["synthetic"] = SyntheticConfig(**syn)
    if "data" in d and d["data"]:
        kwargs["source_dir"] = d["data"].get("source_dir")
        kwargs["target_dir"] = d["data"].get("target_dir")
    if "arch" in d:
        kwargs["arch"] = ArchConfig(**d["arch"])
    if "train" in d:
        t = dict(d["train"])
        if "loss_weights" in t and isinstance(t["loss_weights"], dict):
            from .core import LossWeights

            t["loss_weights"] = LossWeights.from_dict(t["loss_weights"])
        if "adam_betas" in t:
            t["adam_betas"] = tuple(t["adam_betas"])
        if "augment" in t and isinstance(t["augment"], dict):
            from .preprocess import AugmentConfig

            aug = dict(t["augment"])
            if "scale_range" in aug:
                aug["scale_range"] = tuple(aug["scale_range"])
            t["augment"] = AugmentConfig(**aug)
        kwargs["train"] = TrainConfig(**t)
    if "preprocess" in d:
        p = dict(d["preprocess"])
        for key in ("roi_center", "roi_size"):
            if p.get(key) is not None:
                p[key] = tuple(p[key])
        kwargs["preprocess"] = PreprocessConfig(**p)
    return ExperimentSpec(**kwargs)


def load_spec(path, overrides: Optional[dict] = None) -> ExperimentSpec:
    """Read a YAML spec file; non-None overrides replace file values."""
    with open(path) as f:
        d = yaml.safe_load(f) or {}
    return spec_from_dict(d, overrides)


def write_synthetic_dataset(cfg: SyntheticConfig, out_dir) -> tuple[Path, Path]:
    """Generate and persist both cohorts, one directory per domain."""
    source, target = make_synthetic_domains(cfg)
    out_dir = Path(out_dir)
    return (
        save_cohort(source, out_dir / "source"),
        save_cohort(target, out_dir / "target"),
    )
